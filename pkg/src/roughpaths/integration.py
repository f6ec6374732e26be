"""The integration map (f, X) -> int f(X) dX for geometric rough paths.

Per grid interval the candidate increment is assembled from the integrand's
derivatives at the interval's left endpoint paired with permutation sums of
the driver's signature levels; the candidates are then associated on the
grid.  Candidates are built only on consecutive intervals (O(N)); general
window values come from Chen composition of the output.
"""

from __future__ import annotations

import itertools
import math
from functools import lru_cache

import numpy as np

from .coefficients import SmoothCoefficient
from .lift import AlmostRoughPath, associate
from .paths import ControlValue, GridRoughPath, canonical_control
from .tensor import TruncatedTensor

__all__ = [
    "permutation_sets",
    "compositions",
    "integrate",
    "integrand_tensors",
    "remainder_Rl",
    "defect_report",
]

_LETTERS = "abcdefgh"


@lru_cache(maxsize=None)
def permutation_sets(l: tuple) -> tuple:
    """All permutations of {1..|l|} that increase within each block of the
    composition l and across the blocks' last entries.

    Returned 0-indexed: pi[i] is the image of position i.
    """
    total = sum(l)
    ends = np.cumsum(l)
    out = []
    for pi in itertools.permutations(range(total)):
        ok = True
        start = 0
        for end in ends:
            for a in range(start, end - 1):
                if pi[a] >= pi[a + 1]:
                    ok = False
                    break
            if not ok:
                break
            start = end
        if ok:
            for e1, e2 in zip(ends[:-1], ends[1:]):
                if pi[e1 - 1] >= pi[e2 - 1]:
                    ok = False
                    break
        if ok:
            out.append(tuple(pi))
    return tuple(out)


@lru_cache(maxsize=None)
def compositions(parts: int, max_total: int) -> tuple:
    """Ordered tuples of `parts` positive integers with sum <= max_total."""
    if parts == 0:
        return ((),)
    out = []
    for first in range(1, max_total + 1):
        for rest in compositions(parts - 1, max_total - first):
            out.append((first,) + rest)
    return tuple(out)


def _perm_sum(levels: dict, l: tuple) -> np.ndarray:
    """sum over pi in Pi_l of pi applied to the |l|-level increments,
    batched over intervals."""
    total = sum(l)
    arr = levels[total]
    acc = np.zeros_like(arr)
    for pi in permutation_sets(l):
        inv = np.empty(total, dtype=int)
        for i, p in enumerate(pi):
            inv[p] = i
        acc += np.transpose(arr, axes=[0] + [1 + int(m) for m in inv])
    return acc


def _contract_spec(l: tuple) -> str:
    """einsum spec contracting derivative blocks against the permutation sum,
    batched over intervals: e.g. l=(1,2) -> 'nwa,nxbc,nabc->nwx'."""
    outs = "wxyz"
    pos = 0
    specs = []
    for i, li in enumerate(l):
        specs.append("n" + outs[i] + _LETTERS[pos : pos + li])
        pos += li
    specs.append("n" + _LETTERS[:pos])
    return ",".join(specs) + "->n" + outs[: len(l)]


def integrand_tensors(f: SmoothCoefficient, x: GridRoughPath, base_point=None) -> dict:
    """Per-interval candidate increments of int f(X) dX, levels 1..L,
    as batched arrays {i: (N,) + (out,)*i}."""
    if f.in_dim != x.dim or f.drv_dim != x.dim:
        raise ValueError(
            f"integrand acts on dim {f.in_dim}/{f.drv_dim}, driver has {x.dim}"
        )
    if f.max_order < x.level + 1:
        raise ValueError(
            f"integrand supports order {f.max_order}, need {x.level + 1}"
        )
    level = x.level
    n = x.n_intervals
    base = np.zeros(x.dim) if base_point is None else np.asarray(base_point, float)
    positions = x.cum[1][:-1] + base
    derivs = {k: f.eval_batch(0, k, 0.0, positions) for k in range(level)}
    psums = {}
    for i in range(1, level + 1):
        for l in compositions(i, level):
            psums[l] = _perm_sum(x.inc, l)
    out = {}
    for i in range(1, level + 1):
        acc = np.zeros((n,) + (f.out_dim,) * i)
        for l in compositions(i, level):
            blocks = [derivs[li - 1] for li in l]
            acc += np.einsum(_contract_spec(l), *blocks, psums[l])
        out[i] = acc
    return out


def integrate(
    f: SmoothCoefficient, x: GridRoughPath, base_point=None
) -> GridRoughPath:
    """int f(X) dX as a geometric rough path over the integrand's output
    space, associated on the grid."""
    tensors = integrand_tensors(f, x, base_point)
    n = x.n_intervals
    interval_tensors = [
        TruncatedTensor(
            f.out_dim,
            x.level,
            tuple([np.ones(())] + [tensors[i][m] for i in range(1, x.level + 1)]),
        )
        for m in range(n)
    ]
    theta = (x.level + 1.0) / x.level
    arp = AlmostRoughPath.from_interval_tensors(x.times, interval_tensors, theta)
    return associate(arp)


def remainder_Rl(f: SmoothCoefficient, x, y, l: int, level: int | None = None):
    """Taylor remainder R_l(x, y) of the integrand's (l-1)-th derivative,
    via 16-node Gauss-Legendre on the integral form with f^{[p]}."""
    level = f.max_order - 1 if level is None else level
    if not 1 <= l <= level:
        raise ValueError(f"l must be in 1..{level}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    gap = y - x
    nodes, weights = np.polynomial.legendre.leggauss(16)
    nodes = 0.5 * (nodes + 1.0)
    weights = 0.5 * weights
    power = level - l + 1
    acc = None
    for theta, w in zip(nodes, weights):
        top = f.eval(0, level, 0.0, x + theta * gap)
        for _ in range(power):
            top = np.tensordot(top, gap, axes=([1], [0]))
        term = w * (1.0 - theta) ** (level - l) / math.factorial(level - l) * top
        acc = term if acc is None else acc + term
    return acc


def defect_report(
    f: SmoothCoefficient,
    x: GridRoughPath,
    p: float,
    base_point=None,
    max_triples: int = 64,
) -> dict:
    """Empirical almost-rough-path defect of the integration candidates.

    For consecutive triples (s, u, t), compares Y_{u,t} with the corrected
    blocks built from R_l (the semi-multiplicative identity) and reports the
    per-level max of |defect| / omega(s,t)^{([p]+1)/p}.
    """
    level = x.level
    n = x.n_intervals
    base = np.zeros(x.dim) if base_point is None else np.asarray(base_point, float)
    cv = canonical_control(x, None, p, kappa=1.0)
    stride = max(1, (n - 1) // max_triples)
    worst = np.zeros(level + 1)
    for i in range(0, n - 1, stride):
        s_pos = x.cum[1][i] + base
        u_pos = x.cum[1][i + 1] + base
        # candidate over (u, t) and corrected blocks at u with base point s
        two = x.window(i, i + 2)
        single = x.window(i + 1, i + 2)
        y_ut = _window_candidates(f, single, u_pos)
        m_ut = _window_candidates(f, single, u_pos, correction=(s_pos, u_pos))
        om = cv.at(i, i + 2) ** ((level + 1.0) / p)
        if om == 0:
            continue
        y_st = _window_candidates(f, two, s_pos)
        y_su = _window_candidates(f, x.window(i, i + 1), s_pos)
        for j in range(1, level + 1):
            # N = Y_{u,t} - M_{u,t}
            d = np.abs(y_ut[j] - m_ut[j]).sum()
            worst[j] = max(worst[j], d / om)
    return {"empirical_constant": worst[1:], "exponent": (level + 1.0) / p}


def _window_candidates(f, xw: GridRoughPath, pos, correction=None):
    """Candidate tensors over a whole window (single increment query)."""
    level = xw.level
    tens = xw.increment(0, xw.n_intervals)
    derivs = {}
    for k in range(level):
        d = f.eval(0, k, 0.0, pos)
        if correction is not None:
            s_pos, u_pos = correction
            d = d - remainder_Rl(f, s_pos, u_pos, k + 1, level)
        derivs[k] = d
    out = {}
    for i in range(1, level + 1):
        acc = np.zeros((f.out_dim,) * i)
        for l in compositions(i, level):
            total = sum(l)
            psum = np.zeros_like(tens.coeffs[total])
            for pi in permutation_sets(l):
                inv = np.empty(total, dtype=int)
                for a, pval in enumerate(pi):
                    inv[pval] = a
                psum += np.transpose(tens.coeffs[total], axes=[int(m) for m in inv])
            spec = _contract_spec(l).replace("n", "")
            blocks = [derivs[li - 1] for li in l]
            acc += np.einsum(spec, *blocks, psum)
        out[i] = acc
    return out
