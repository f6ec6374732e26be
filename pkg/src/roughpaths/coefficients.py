"""Coefficient functions with analytic partial derivatives.

A SmoothCoefficient represents a map f(eps, y) into linear maps from a
driver space R^drv to an output space R^out, together with all partial
derivatives d_eps^j d_y^k up to max_order.  eval(j, k, eps, y) returns the
dense multilinear array of shape (out,) + (in,)*k + (drv,).

Derivatives are supplied analytically per family (no automatic
differentiation); larger systems are assembled from families with the
block/selector mechanism, which implements the chain rule for linear
reparametrizations exactly.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

__all__ = [
    "SmoothCoefficient",
    "SupNormReport",
    "ConstantCoefficient",
    "LinearCoefficient",
    "ScalarCoefficient",
    "BlockCoefficient",
    "PsiCoefficient",
    "ShiftedCoefficient",
    "FrozenEpsCoefficient",
    "ScaledCoefficient",
    "scalar_sinusoid",
    "scalar_poly",
    "scalar_clamped_poly",
    "eps_poly_scale",
    "sup_norm",
    "psi_beta",
    "phi_beta",
    "pair_system",
    "difference_system",
    "combined_drift_system",
    "with_identity_block",
    "index_tuples",
    "build_fn_gn",
    "fd_check",
    "coefficient_family",
]


class SmoothCoefficient:
    """Base class; subclasses fill in _eval."""

    in_dim: int
    drv_dim: int
    out_dim: int
    max_order: int
    eps_dependent: bool

    def eval(self, j: int, k: int, eps: float, y) -> np.ndarray:
        if j < 0 or k < 0:
            raise ValueError("derivative orders must be nonnegative")
        if j + k > self.max_order:
            raise ValueError(
                f"order {j}+{k} exceeds supported max_order {self.max_order}"
            )
        y = np.zeros(self.in_dim) if y is None else np.asarray(y, dtype=float)
        return self._eval(j, k, float(eps), y)

    def apply(self, eps: float, y, v) -> np.ndarray:
        """f(eps, y) <v> for a driver vector v."""
        return self.eval(0, 0, eps, y) @ np.asarray(v, dtype=float)

    def eval_batch(self, j: int, k: int, eps: float, ys) -> np.ndarray:
        """eval at a batch of arguments, shape (n, in_dim) -> (n, out, ...)."""
        if j < 0 or k < 0:
            raise ValueError("derivative orders must be nonnegative")
        if j + k > self.max_order:
            raise ValueError(
                f"order {j}+{k} exceeds supported max_order {self.max_order}"
            )
        ys = np.asarray(ys, dtype=float)
        return self._eval_batch(j, k, float(eps), ys)

    def _eval_batch(self, j, k, eps, ys):
        return np.stack([self._eval(j, k, eps, y) for y in ys])

    def _zeros_batch(self, n, k):
        return np.zeros((n, self.out_dim) + (self.in_dim,) * k + (self.drv_dim,))

    def _eval(self, j, k, eps, y):  # pragma: no cover - abstract
        raise NotImplementedError

    def _zeros(self, k):
        return np.zeros((self.out_dim,) + (self.in_dim,) * k + (self.drv_dim,))


@dataclass(frozen=True)
class SupNormReport:
    k: int
    R: float
    value: float


class ConstantCoefficient(SmoothCoefficient):
    def __init__(self, matrix, in_dim: int):
        a = np.atleast_2d(np.asarray(matrix, dtype=float))
        self.matrix = a
        self.out_dim, self.drv_dim = a.shape
        self.in_dim = in_dim
        self.max_order = 99
        self.eps_dependent = False

    def _eval(self, j, k, eps, y):
        if j == 0 and k == 0:
            return self.matrix.copy()
        return self._zeros(k)

    def _eval_batch(self, j, k, eps, ys):
        if j == 0 and k == 0:
            return np.broadcast_to(self.matrix, (len(ys),) + self.matrix.shape).copy()
        return self._zeros_batch(len(ys), k)


class LinearCoefficient(SmoothCoefficient):
    """f(y) = A + B<y>, with B of shape (out, in, drv)."""

    def __init__(self, const, lin):
        b = np.asarray(lin, dtype=float)
        self.out_dim, self.in_dim, self.drv_dim = b.shape
        self.lin = b
        self.const = (
            np.zeros((self.out_dim, self.drv_dim))
            if const is None
            else np.asarray(const, dtype=float).reshape(self.out_dim, self.drv_dim)
        )
        self.max_order = 99
        self.eps_dependent = False

    def _eval(self, j, k, eps, y):
        if j > 0:
            return self._zeros(k)
        if k == 0:
            return self.const + np.einsum("oid,i->od", self.lin, y)
        if k == 1:
            return self.lin.copy()
        return self._zeros(k)

    def _eval_batch(self, j, k, eps, ys):
        n = len(ys)
        if j > 0:
            return self._zeros_batch(n, k)
        if k == 0:
            return self.const + np.einsum("oid,ni->nod", self.lin, ys)
        if k == 1:
            return np.broadcast_to(self.lin, (n,) + self.lin.shape).copy()
        return self._zeros_batch(n, k)


class ScalarCoefficient(SmoothCoefficient):
    """1-d coefficient defined by a jet callback d(j, k, eps, y) -> float."""

    def __init__(self, jet, max_order=12, eps_dependent=False):
        self.jet = jet
        self.in_dim = self.drv_dim = self.out_dim = 1
        self.max_order = max_order
        self.eps_dependent = eps_dependent

    def _eval(self, j, k, eps, y):
        val = self.jet(j, k, eps, float(y[0]))
        return np.full((1,) * (k + 2), val)

    def _eval_batch(self, j, k, eps, ys):
        vals = np.asarray(self.jet(j, k, eps, ys[:, 0]), dtype=float)
        vals = np.broadcast_to(vals, (len(ys),))
        return vals.reshape((len(ys),) + (1,) * (k + 2))


def scalar_sinusoid(a: float, b: float, omega: float, phase: float = 0.0):
    """f(y) = a + b*sin(omega*y + phase); all derivatives closed-form."""

    def jet(j, k, eps, y):
        if j > 0:
            return np.zeros_like(np.asarray(y, dtype=float))
        if k == 0:
            return a + b * np.sin(omega * y + phase)
        return b * omega**k * np.sin(omega * y + phase + k * math.pi / 2.0)

    return ScalarCoefficient(jet)


def scalar_poly(coeffs):
    """f(y) = sum_m coeffs[m] y^m (degree <= 4); smooth but unbounded."""
    coeffs = np.asarray(coeffs, dtype=float)
    if len(coeffs) > 5:
        raise ValueError("polynomial degree must be <= 4")

    def jet(j, k, eps, y):
        y = np.asarray(y, dtype=float)
        if j > 0:
            return np.zeros_like(y)
        c = coeffs
        for _ in range(k):
            c = c[1:] * np.arange(1, len(c))
        return np.polyval(c[::-1], y) if len(c) else np.zeros_like(y)

    return ScalarCoefficient(jet)


def _tanh_derivative_polys(order):
    """T^(k) as polynomials in u = tanh: T' = 1 - u^2, then chain."""
    polys = [np.array([0.0, 1.0])]  # T itself: u
    for _ in range(order):
        pc = polys[-1]
        dp = pc[1:] * np.arange(1, len(pc))
        # multiply dp(u) by (1 - u^2)
        out = np.zeros(len(dp) + 2)
        out[: len(dp)] += dp
        out[2 : 2 + len(dp)] -= dp
        polys.append(out)
    return polys


def _faa_di_bruno_terms(order):
    """Partitions of {1..k} grouped by block sizes: returns for each k a list
    of (multiplicity, sizes) with sum(sizes) = k."""
    table = {}
    for k in range(1, order + 1):
        acc = {}
        for part in _partitions(k):
            acc[part] = acc.get(part, 0) + _partition_count(k, part)
        table[k] = [(mult, sizes) for sizes, mult in acc.items()]
    return table


def _partitions(k, smallest=1):
    if k == 0:
        yield ()
        return
    for first in range(smallest, k + 1):
        for rest in _partitions(k - first, first):
            yield (first,) + rest


def _partition_count(k, sizes):
    """Number of set partitions of {1..k} with the given multiset of sizes."""
    count = math.factorial(k)
    for s in sizes:
        count //= math.factorial(s)
    for mult in {s: sizes.count(s) for s in sizes}.values():
        count //= math.factorial(mult)
    return count


def scalar_clamped_poly(coeffs, radius: float):
    """Polynomial composed with the smooth saturation R*tanh(y/R).

    Bounded with all derivatives bounded; close to the raw polynomial for
    |y| well inside the radius.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    if len(coeffs) > 5:
        raise ValueError("polynomial degree must be <= 4")
    max_order = 8
    tanh_polys = _tanh_derivative_polys(max_order)
    fdb = _faa_di_bruno_terms(max_order)

    def poly_deriv(c, m, x):
        for _ in range(m):
            c = c[1:] * np.arange(1, len(c))
        return np.polyval(c[::-1], x) if len(c) else np.zeros_like(x)

    def jet(j, k, eps, y):
        y = np.asarray(y, dtype=float)
        if j > 0:
            return np.zeros_like(y)
        u = np.tanh(y / radius)
        s = radius * u
        if k == 0:
            return poly_deriv(coeffs, 0, s)
        # s^(m)(y) = radius^(1-m) * T^(m)(y/radius)
        sder = [
            radius ** (1 - m) * np.polyval(tanh_polys[m][::-1], u)
            for m in range(max_order + 1)
        ]
        total = np.zeros_like(y)
        for mult, sizes in fdb[k]:
            inner = np.ones_like(y)
            for m in sizes:
                inner = inner * sder[m]
            total = total + mult * poly_deriv(coeffs, len(sizes), s) * inner
        return total

    return ScalarCoefficient(jet, max_order=max_order)


def eps_poly_scale(base: SmoothCoefficient, poly):
    """f(eps, y) = P(eps) * base(eps, y) with P polynomial (Leibniz rule)."""
    poly = np.asarray(poly, dtype=float)

    class _EpsScaled(SmoothCoefficient):
        def __init__(self):
            self.in_dim = base.in_dim
            self.drv_dim = base.drv_dim
            self.out_dim = base.out_dim
            self.max_order = base.max_order
            self.eps_dependent = True

        def _eval(self, j, k, eps, y):
            out = np.zeros((self.out_dim,) + (self.in_dim,) * k + (self.drv_dim,))
            for i in range(j + 1):
                c = poly
                for _ in range(i):
                    c = c[1:] * np.arange(1, len(c))
                if not len(c):
                    continue
                p_i = float(np.polyval(c[::-1], eps))
                if p_i == 0.0:
                    continue
                out += math.comb(j, i) * p_i * base.eval(j - i, k, eps, y)
            return out

    return _EpsScaled()


class ShiftedCoefficient(SmoothCoefficient):
    """f(. + y0); used to move initial conditions into the coefficient."""

    def __init__(self, base: SmoothCoefficient, y0):
        self.base = base
        self.y0 = np.asarray(y0, dtype=float).reshape(base.in_dim)
        self.in_dim, self.drv_dim, self.out_dim = (
            base.in_dim,
            base.drv_dim,
            base.out_dim,
        )
        self.max_order = base.max_order
        self.eps_dependent = base.eps_dependent

    def _eval(self, j, k, eps, y):
        return self.base.eval(j, k, eps, y + self.y0)

    def _eval_batch(self, j, k, eps, ys):
        return self.base.eval_batch(j, k, eps, ys + self.y0)


class FrozenEpsCoefficient(SmoothCoefficient):
    """base at a fixed parameter value, exposed as parameter-free."""

    def __init__(self, base: SmoothCoefficient, eps0: float):
        self.base = base
        self.eps0 = float(eps0)
        self.in_dim, self.drv_dim, self.out_dim = (
            base.in_dim,
            base.drv_dim,
            base.out_dim,
        )
        self.max_order = base.max_order
        self.eps_dependent = False

    def _eval(self, j, k, eps, y):
        if j > 0:
            return self._zeros(k)
        return self.base.eval(0, k, self.eps0, y)

    def _eval_batch(self, j, k, eps, ys):
        if j > 0:
            return self._zeros_batch(len(ys), k)
        return self.base.eval_batch(0, k, self.eps0, ys)


class ScaledCoefficient(SmoothCoefficient):
    def __init__(self, base: SmoothCoefficient, factor: float):
        self.base = base
        self.factor = float(factor)
        self.in_dim, self.drv_dim, self.out_dim = (
            base.in_dim,
            base.drv_dim,
            base.out_dim,
        )
        self.max_order = base.max_order
        self.eps_dependent = base.eps_dependent

    def _eval(self, j, k, eps, y):
        return self.factor * self.base.eval(j, k, eps, y)

    def _eval_batch(self, j, k, eps, ys):
        return self.factor * self.base.eval_batch(j, k, eps, ys)


_LETTERS = "abcdefghijkl"


def _pull_directions_batch(arr, k, s_arg, s_drv):
    """Batched variant of _pull_directions: arr has a leading batch axis."""
    spec_in = "no" + _LETTERS[:k] + "z"
    operands = [arr]
    spec_parts = [spec_in]
    out_letters = ""
    for m in range(k):
        big = _LETTERS[m].upper()
        spec_parts.append(_LETTERS[m] + big)
        operands.append(s_arg)
        out_letters += big
    spec_parts.append("zZ")
    operands.append(s_drv)
    spec = ",".join(spec_parts) + "->no" + out_letters + "Z"
    return np.einsum(spec, *operands)


def _pull_directions(arr, k, s_arg, s_drv):
    """Contract the k direction axes with s_arg and the driver axis with
    s_drv: implements the chain rule for y -> c(S y) and driver rebasing."""
    spec_in = "o" + _LETTERS[:k] + "z"
    operands = [arr]
    spec_parts = [spec_in]
    out_letters = ""
    for m in range(k):
        big = _LETTERS[m].upper()
        spec_parts.append(_LETTERS[m] + big)
        operands.append(s_arg)
        out_letters += big
    spec_parts.append("zZ")
    operands.append(s_drv)
    spec = ",".join(spec_parts) + "->o" + out_letters + "Z"
    return np.einsum(spec, *operands)


class BlockCoefficient(SmoothCoefficient):
    """Row-block coefficient: output block r is a sum of component
    coefficients evaluated at linearly selected arguments and drivers.

    rows: list of lists of (coeff, s_arg, s_drv) with
      s_arg: (coeff.in_dim, in_dim), s_drv: (coeff.drv_dim, drv_dim).
    """

    def __init__(self, in_dim, drv_dim, out_blocks, rows, eps_dependent=None):
        self.in_dim = in_dim
        self.drv_dim = drv_dim
        self.out_blocks = tuple(out_blocks)
        self.out_dim = sum(out_blocks)
        self.rows = rows
        orders = [c.max_order for row in rows for (c, _, _) in row]
        self.max_order = min(orders) if orders else 99
        if eps_dependent is None:
            eps_dependent = any(c.eps_dependent for row in rows for (c, _, _) in row)
        self.eps_dependent = eps_dependent
        self._offsets = np.cumsum([0] + list(out_blocks))

    def _eval(self, j, k, eps, y):
        out = self._zeros(k)
        for r, row in enumerate(self.rows):
            lo, hi = self._offsets[r], self._offsets[r + 1]
            for coeff, s_arg, s_drv in row:
                block = coeff.eval(j, k, eps, s_arg @ y)
                out[lo:hi] += _pull_directions(block, k, s_arg, s_drv)
        return out

    def _eval_batch(self, j, k, eps, ys):
        out = self._zeros_batch(len(ys), k)
        for r, row in enumerate(self.rows):
            lo, hi = self._offsets[r], self._offsets[r + 1]
            for coeff, s_arg, s_drv in row:
                block = coeff.eval_batch(j, k, eps, ys @ s_arg.T)
                out[:, lo:hi] += _pull_directions_batch(block, k, s_arg, s_drv)
        return out


class PsiCoefficient(SmoothCoefficient):
    """Difference-damping map (y, z) -> beta * (f(y) - f(y - z/beta))."""

    def __init__(self, f: SmoothCoefficient, beta: float):
        if beta == 0:
            raise ValueError("beta must be nonzero")
        self.f = f
        self.beta = float(beta)
        w = f.in_dim
        self.in_dim = 2 * w
        self.drv_dim = f.drv_dim
        self.out_dim = f.out_dim
        self.max_order = max(f.max_order - 1, 0)
        self.eps_dependent = f.eps_dependent
        self._sy = np.hstack([np.eye(w), np.zeros((w, w))])
        self._syz = np.hstack([np.eye(w), -np.eye(w) / self.beta])
        self._sdrv = np.eye(f.drv_dim)

    def _eval(self, j, k, eps, y):
        a = self.f.eval(j, k, eps, self._sy @ y)
        b = self.f.eval(j, k, eps, self._syz @ y)
        return self.beta * (
            _pull_directions(a, k, self._sy, self._sdrv)
            - _pull_directions(b, k, self._syz, self._sdrv)
        )

    def _eval_batch(self, j, k, eps, ys):
        a = self.f.eval_batch(j, k, eps, ys @ self._sy.T)
        b = self.f.eval_batch(j, k, eps, ys @ self._syz.T)
        return self.beta * (
            _pull_directions_batch(a, k, self._sy, self._sdrv)
            - _pull_directions_batch(b, k, self._syz, self._sdrv)
        )


def _proj(total, lo, hi):
    s = np.zeros((hi - lo, total))
    s[:, lo:hi] = np.eye(hi - lo)
    return s


def psi_beta(f: SmoothCoefficient, beta: float) -> PsiCoefficient:
    return PsiCoefficient(f, beta)


def phi_beta(f: SmoothCoefficient, beta: float, d_v: int | None = None):
    """Triple-system coefficient (x,y,z) -> ((xi, f(y) xi, Psi_beta(y,z) xi))."""
    d_v = f.drv_dim if d_v is None else d_v
    w = f.in_dim
    total = d_v + 2 * w
    p_xi = _proj(total, 0, d_v)
    p_y = _proj(total, d_v, d_v + w)
    p_yz = _proj(total, d_v, total)
    rows = [
        [(ConstantCoefficient(np.eye(d_v), total), np.eye(total), p_xi)],
        [(f, p_y, p_xi)],
        [(PsiCoefficient(f, beta), p_yz, p_xi)],
    ]
    return BlockCoefficient(total, total, (d_v, w, w), rows)


def pair_system(f: SmoothCoefficient, d_v: int | None = None):
    """Pair-system coefficient (x,y) -> ((xi, f(y) xi))."""
    d_v = f.drv_dim if d_v is None else d_v
    w = f.in_dim
    total = d_v + w
    p_xi = _proj(total, 0, d_v)
    p_y = _proj(total, d_v, total)
    rows = [
        [(ConstantCoefficient(np.eye(d_v), total), np.eye(total), p_xi)],
        [(f, p_y, p_xi)],
    ]
    return BlockCoefficient(total, total, (d_v, w), rows)


def difference_system(f: SmoothCoefficient):
    """Joint system for a pair of solutions sharing f: state (y, yhat),
    driver (xi, lam); y is driven by xi + lam, yhat by lam alone."""
    w = f.in_dim
    d = f.drv_dim
    p_y = _proj(2 * w, 0, w)
    p_yh = _proj(2 * w, w, 2 * w)
    p_xi = _proj(2 * d, 0, d)
    p_lam = _proj(2 * d, d, 2 * d)
    rows = [
        [(f, p_y, p_xi + p_lam)],
        [(f, p_yh, p_lam)],
    ]
    return BlockCoefficient(2 * w, 2 * d, (w, w), rows)


def combined_drift_system(sigma: SmoothCoefficient, b: SmoothCoefficient, eps: float):
    """y -> sigma(eps,y) o p_x + b(eps,y) o p_xhat, as a parameter-free
    coefficient with driver V (+) Vhat."""
    if sigma.in_dim != b.in_dim:
        raise ValueError("sigma and b must share the state space")
    w = sigma.in_dim
    dv, dh = sigma.drv_dim, b.drv_dim
    p_x = _proj(dv + dh, 0, dv)
    p_xh = _proj(dv + dh, dv, dv + dh)
    rows = [
        [
            (FrozenEpsCoefficient(sigma, eps), np.eye(w), p_x),
            (FrozenEpsCoefficient(b, eps), np.eye(w), p_xh),
        ]
    ]
    return BlockCoefficient(w, dv + dh, (w,), rows)


def with_identity_block(f: SmoothCoefficient):
    """Id (+) f on the shared space: output (x-copy, f(x) applied)."""
    total = f.in_dim
    rows = [
        [(ConstantCoefficient(np.eye(total), total), np.eye(total), np.eye(total))],
        [(f, np.eye(total), np.eye(total))],
    ]
    return BlockCoefficient(total, total, (total, f.out_dim), rows)


def index_tuples(m: int, k: int):
    """Ordered tuples (i_1,...,i_k) of positive integers with sum m."""
    if k == 0:
        return [()] if m == 0 else []
    out = []
    for first in range(1, m - k + 2):
        for rest in index_tuples(m - first, k - 1):
            out.append((first,) + rest)
    return out


class _ExpansionTermCoefficient(SmoothCoefficient):
    """Sum of terms c * d_eps^j d_y^k base(0, y^0) <y^{i_1},...,y^{i_k}, .>
    over the stacked space V (+) Vhat (+) W^{n}, with the driver routed
    through one block.  Derivatives distribute over the y^0 argument and the
    polynomial y^i slots term by term.
    """

    def __init__(self, base, n, terms, d_v, d_hv, w, drv_block):
        self.base = base
        self.n = n
        self.terms = terms  # list of (j, k, tuple(i_1..i_k), coeff)
        self.d_v, self.d_hv, self.w = d_v, d_hv, w
        self.in_dim = d_v + d_hv + n * w
        self.drv_dim = self.in_dim
        self.out_dim = w
        needed = max(j + k for j, k, _, _ in terms)
        self.max_order = base.max_order - needed
        self.eps_dependent = False
        lo = {"x": 0, "xh": d_v}
        for i in range(n):
            lo[i] = d_v + d_hv + i * w
        self._lo = lo
        self._drv_lo = lo[drv_block]
        self._drv_len = d_v if drv_block == "x" else d_hv

    def _block(self, y, i):
        lo = self._lo[i]
        return y[lo : lo + self.w]

    def _eval(self, jeps, r, eps, y):
        if jeps > 0:
            return self._zeros(r)
        out = self._zeros(r)
        y0 = self._block(y, 0)
        w, din = self.w, self.in_dim
        for j, k, ii, coeff in self.terms:
            # allocate the r derivative slots: an injective subset hits the
            # polynomial arguments, the rest differentiate through y^0
            for q in range(0, min(r, k) + 1):
                base_arr = self.base.eval(j, k + r - q, 0.0, y0)
                for slots in itertools.combinations(range(r), q):
                    for positions in itertools.permutations(range(k), q):
                        # axes: out, k+r-q directions (symmetric), driver
                        # contract the surviving arguments
                        consumed = dict(zip(positions, slots))
                        arr = base_arr
                        # contract argument positions not consumed, front first
                        ax = 1
                        open_blocks = []
                        for a in range(k):
                            if a in consumed:
                                open_blocks.append(("arg", ii[a], consumed[a]))
                                ax += 1
                            else:
                                vec = self._block(y, ii[a])
                                arr = np.tensordot(arr, vec, axes=([ax], [0]))
                        for slot in (s for s in range(r) if s not in slots):
                            open_blocks.append(("y0", 0, slot))
                        # arr now: (w,) + (w,)*(q + (r-q)) + (drv of base,)
                        # reorder open axes by slot
                        order = np.argsort([s for (_, _, s) in open_blocks])
                        perm = (
                            [0]
                            + [1 + int(o) for o in order]
                            + [1 + len(open_blocks)]
                        )
                        arr = coeff * np.transpose(arr, perm)
                        blocks_sorted = [open_blocks[int(o)] for o in order]
                        idx_out = [slice(0, w)]
                        for kind, blk, _ in blocks_sorted:
                            lo = self._lo[blk if kind == "arg" else 0]
                            idx_out.append(slice(lo, lo + w))
                        idx_out.append(
                            slice(self._drv_lo, self._drv_lo + self._drv_len)
                        )
                        out[tuple(idx_out)] += arr
        return out


def build_fn_gn(sigma: SmoothCoefficient, b: SmoothCoefficient, n: int):
    """Order-n expansion coefficients over V (+) Vhat (+) W^{n}.

    The first returns the driver through the V block, the second through the
    Vhat block; both are polynomial in (y^1,...,y^{n-1}) with smooth y^0
    dependence.
    """
    if n < 1:
        raise ValueError("n >= 1")
    w = sigma.in_dim
    d_v, d_hv = sigma.drv_dim, b.drv_dim
    if n == 1:
        f_terms = [(0, 0, (), 1.0)]
        g_terms = [(1, 0, (), 1.0)]
    else:
        f_terms = []
        for j in range(0, n - 1):
            for k in range(1, n - j):
                for ii in index_tuples(n - 1 - j, k):
                    f_terms.append((j, k, ii, 1.0 / (math.factorial(j) * math.factorial(k))))
        f_terms.append((n - 1, 0, (), 1.0 / math.factorial(n - 1)))
        g_terms = []
        for j in range(1, n):
            for k in range(1, n - j + 1):
                for ii in index_tuples(n - j, k):
                    g_terms.append((j, k, ii, 1.0 / (math.factorial(j) * math.factorial(k))))
        for k in range(2, n + 1):
            for ii in index_tuples(n, k):
                g_terms.append((0, k, ii, 1.0 / math.factorial(k)))
        g_terms.append((n, 0, (), 1.0 / math.factorial(n)))
    needed = max(j + k for j, k, _, _ in f_terms + g_terms)
    if needed > min(sigma.max_order, b.max_order):
        raise ValueError(
            f"expansion order {n} needs derivatives of order {needed}"
        )
    f_n = _ExpansionTermCoefficient(sigma, n, f_terms, d_v, d_hv, w, "x")
    g_n = _ExpansionTermCoefficient(b, n, g_terms, d_v, d_hv, w, "xh")
    return f_n, g_n


def _op_norm(arr: np.ndarray) -> float:
    """l1-induced norm of a multilinear map stored with output axis first."""
    flat = np.abs(arr).sum(axis=0).reshape(-1)
    return float(flat.max()) if flat.size else 0.0


def _ball_samples(dim: int, radius: float, count: int) -> np.ndarray:
    sob = qmc.Sobol(d=dim + 1, scramble=False)
    m = max(4, int(math.ceil(math.log2(count))))
    u = sob.random_base2(m)[:count]
    w = 2.0 * u[:, :dim] - 1.0
    norms = np.abs(w).sum(axis=1)
    norms[norms == 0] = 1.0
    pts = radius * u[:, dim : dim + 1] * w / norms[:, None]
    extras = [np.zeros((1, dim))]
    for i in range(dim):
        e = np.zeros((2, dim))
        e[0, i] = radius
        e[1, i] = -radius
        extras.append(e)
    return np.concatenate([pts] + extras)


def sup_norm(f: SmoothCoefficient, k: int, R: float, samples: int = 4096) -> SupNormReport:
    """M(f;k,R): max over derivative orders <= k of the sup of the induced
    norm over the radius-R ball, estimated on a deterministic low-discrepancy
    sample (a lower bound of the true sup)."""
    if k > f.max_order:
        raise ValueError(f"order {k} exceeds max_order {f.max_order}")
    pts = _ball_samples(f.in_dim, R, samples)
    eps_vals = [0.0]
    if f.eps_dependent:
        eps_vals = list(np.linspace(0.0, 1.0, 9))
    best = 0.0
    for y in pts:
        for eps in eps_vals:
            for j in range(0, k + 1 if f.eps_dependent else 1):
                for ky in range(0, k + 1 - j):
                    best = max(best, _op_norm(f.eval(j, ky, eps, y)))
    return SupNormReport(k=k, R=R, value=best)


def fd_check(f: SmoothCoefficient, j: int, k: int, eps: float, y, rng=None) -> float:
    """Relative error between eval(j, k) and a Richardson-extrapolated
    central difference of eval(j, k-1) in a random direction."""
    rng = np.random.default_rng(0) if rng is None else rng
    y = np.asarray(y, dtype=float)
    u = rng.normal(size=f.in_dim)
    u /= np.abs(u).sum()

    def diff(h):
        a = f.eval(j, k - 1, eps, y + h * u)
        b = f.eval(j, k - 1, eps, y - h * u)
        return (a - b) / (2 * h)

    h = 1e-4
    fd = (4.0 * diff(h / 2) - diff(h)) / 3.0
    exact = f.eval(j, k, eps, y)
    # contract one direction axis with u
    contracted = np.tensordot(exact, u, axes=([1], [0]))
    # tensordot removes axis 1; remaining axes keep order, but the driver
    # axis ends up last either way for our shapes
    scale = max(np.abs(fd).max(), np.abs(contracted).max(), 1e-12)
    return float(np.abs(fd - contracted).max() / scale)


def coefficient_family(name: str, params, **kw) -> SmoothCoefficient:
    """Build a coefficient by family name + flat parameter vector (CLI)."""
    params = list(np.atleast_1d(np.asarray(params, dtype=float)))
    if name == "constant":
        out, drv = kw.get("out_dim", 1), kw.get("drv_dim", 1)
        a = np.asarray(params, dtype=float).reshape(out, drv)
        return ConstantCoefficient(a, kw.get("in_dim", out))
    if name == "linear_scalar":
        a, c = params
        return LinearCoefficient([[a]], np.array([[[c]]]))
    if name == "sinusoid":
        a, b, omega = params[:3]
        phase = params[3] if len(params) > 3 else 0.0
        return scalar_sinusoid(a, b, omega, phase)
    if name == "poly":
        return scalar_poly(params)
    if name == "clamped_poly":
        *coeffs, radius = params
        return scalar_clamped_poly(coeffs, radius)
    if name == "cos2":
        # cos^2(y) = 1/2 + sin(2y + pi/2)/2, already C_b^infty
        return scalar_sinusoid(0.5, 0.5, 2.0, math.pi / 2.0)
    raise KeyError(f"unknown coefficient family {name!r}")
