"""Truncated tensor algebra over R^d, levels 0..L with L in {1, 2, 3}.

Elements are graded tuples (a^0, a^1, ..., a^L) with a^j in (R^d)^{(x)j},
stored densely as numpy arrays of shape (d,)*j.  The coordinate l1 norm is
used throughout; for l1 spaces it coincides with the projective tensor norm,
so all norm estimates are exact rather than approximate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "TruncatedTensor",
    "ShapeError",
    "NotGroupElement",
    "unit",
    "tensor_mul",
    "dilate",
    "group_inverse",
    "tensor_exp",
    "l1_level_norms",
]


class ShapeError(ValueError):
    """Dimension or truncation level mismatch between operands."""


class NotGroupElement(ValueError):
    """Raised when an operation needs coeffs[0] == 1 and it is not."""


@dataclass(frozen=True)
class TruncatedTensor:
    """One element of the degree-L truncated tensor algebra over R^d.

    coeffs[j] has shape (d,)*j; coeffs[0] is a scalar held in a 0-d array.
    Group elements (path increments) carry coeffs[0] == 1.
    """

    dim: int
    level: int
    coeffs: tuple[np.ndarray, ...]

    def __post_init__(self):
        if self.dim < 1:
            raise ShapeError(f"dim must be >= 1, got {self.dim}")
        if not 1 <= self.level <= 3:
            raise ShapeError(f"level must be in {{1,2,3}}, got {self.level}")
        if len(self.coeffs) != self.level + 1:
            raise ShapeError(
                f"need {self.level + 1} graded components, got {len(self.coeffs)}"
            )
        for j, c in enumerate(self.coeffs):
            if c.shape != (self.dim,) * j:
                raise ShapeError(f"component {j} has shape {c.shape}")

    @property
    def scalar(self) -> float:
        return float(self.coeffs[0])

    def is_group_element(self, tol: float = 0.0) -> bool:
        return abs(self.scalar - 1.0) <= tol

    def __getitem__(self, j: int) -> np.ndarray:
        return self.coeffs[j]


def _as_components(dim, level, parts):
    out = []
    for j in range(level + 1):
        c = np.asarray(parts[j], dtype=float)
        out.append(c.reshape((dim,) * j))
    return tuple(out)


def tensor(dim: int, level: int, parts) -> TruncatedTensor:
    """Build a TruncatedTensor from a list of per-level arrays (scalars ok)."""
    return TruncatedTensor(dim, level, _as_components(dim, level, parts))


def unit(dim: int, level: int) -> TruncatedTensor:
    """The algebra unit 1 = (1, 0, ..., 0)."""
    parts = [np.ones(())] + [np.zeros((dim,) * j) for j in range(1, level + 1)]
    return TruncatedTensor(dim, level, tuple(parts))


def zero(dim: int, level: int) -> TruncatedTensor:
    parts = [np.zeros((dim,) * j) for j in range(level + 1)]
    return TruncatedTensor(dim, level, tuple(parts))


def _check_compatible(a: TruncatedTensor, b: TruncatedTensor):
    if a.dim != b.dim or a.level != b.level:
        raise ShapeError(
            f"incompatible operands: (d={a.dim}, L={a.level}) vs (d={b.dim}, L={b.level})"
        )


def tensor_mul(a: TruncatedTensor, b: TruncatedTensor) -> TruncatedTensor:
    """Graded product: component k is sum_i a^{k-i} (x) b^i.  Noncommutative."""
    _check_compatible(a, b)
    parts = []
    for k in range(a.level + 1):
        acc = np.zeros((a.dim,) * k)
        for i in range(k + 1):
            left, right = a.coeffs[k - i], b.coeffs[i]
            acc = acc + np.multiply.outer(left, right)
        parts.append(acc)
    return TruncatedTensor(a.dim, a.level, tuple(parts))


def tensor_add(a: TruncatedTensor, b: TruncatedTensor) -> TruncatedTensor:
    _check_compatible(a, b)
    return TruncatedTensor(
        a.dim, a.level, tuple(x + y for x, y in zip(a.coeffs, b.coeffs))
    )


def dilate(r: float, a: TruncatedTensor) -> TruncatedTensor:
    """Scalar action r.a = (a^0, r a^1, r^2 a^2, ...)."""
    return TruncatedTensor(
        a.dim, a.level, tuple(r**j * c for j, c in enumerate(a.coeffs))
    )


def group_inverse(a: TruncatedTensor) -> TruncatedTensor:
    """Inverse of a group element via the truncated Neumann series.

    Writes a = 1 + n with n nilpotent and returns 1 - n + n(x)n - n(x)n(x)n
    (cut at level L).  Requires coeffs[0] == 1.
    """
    if not math.isclose(a.scalar, 1.0, rel_tol=0.0, abs_tol=1e-12):
        raise NotGroupElement(f"coeffs[0] = {a.scalar}, expected 1")
    n = TruncatedTensor(
        a.dim, a.level, (np.zeros(()),) + tuple(a.coeffs[1:])
    )
    out = unit(a.dim, a.level)
    power = unit(a.dim, a.level)
    for k in range(1, a.level + 1):
        power = tensor_mul(power, n)
        out = tensor_add(out, power if k % 2 == 0 else _neg(power))
    return out


def _neg(a: TruncatedTensor) -> TruncatedTensor:
    return TruncatedTensor(a.dim, a.level, tuple(-c for c in a.coeffs))


def tensor_exp(v: np.ndarray, level: int) -> TruncatedTensor:
    """exp of a level-1 vector: (1, v, v(x)v/2!, v(x)v(x)v/3!).

    This is the signature of a straight segment with increment v.
    """
    v = np.asarray(v, dtype=float)
    parts = [np.ones(())]
    power = np.ones(())
    for j in range(1, level + 1):
        power = np.multiply.outer(power, v)
        parts.append(power / math.factorial(j))
    return TruncatedTensor(v.shape[0], level, tuple(parts))


def l1_level_norms(a: TruncatedTensor) -> np.ndarray:
    """Per-level sums of absolute coordinate values, indices 0..L."""
    return np.array([np.abs(c).sum() for c in a.coeffs])
