"""Grid-sampled paths, variation norms, control functions.

Paths live on a fixed time grid 0 = t_0 < ... < t_N = 1 and are piecewise
linear at level 1.  Variation norms are exact suprema over partitions drawn
from grid points (an O(N^2) longest-path DP); for piecewise-linear level-1
paths and exponents q >= 1 intermediate points never help, so this is the
true supremum.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .tensor import TruncatedTensor, group_inverse, tensor_mul, unit

log = logging.getLogger(__name__)

__all__ = [
    "GridPath",
    "GridRoughPath",
    "ControlValue",
    "InvalidPartition",
    "pvar_norm",
    "path_qvar",
    "xi_gauge",
    "project_piecewise_linear",
    "canonical_control",
    "control_eval",
    "read_csv_path",
]


class InvalidPartition(ValueError):
    pass


@dataclass(frozen=True)
class GridPath:
    """Piecewise-linear path on a grid; values start at 0."""

    times: np.ndarray  # (N+1,)
    values: np.ndarray  # (N+1, d)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)
        if t.ndim != 1 or len(t) != len(v):
            raise ValueError("times and values must have matching length")
        if len(t) < 2:
            raise ValueError("need at least two grid points")
        if np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")
        if np.any(v[0] != 0.0):
            raise ValueError("paths start at 0; shift values first")

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def n_intervals(self) -> int:
        return len(self.times) - 1

    def increments(self) -> np.ndarray:
        return np.diff(self.values, axis=0)

    def window(self, i0: int, i1: int) -> "GridPath":
        v = self.values[i0 : i1 + 1]
        return GridPath(self.times[i0 : i1 + 1], v - v[0])

    def index_of(self, t: float) -> int:
        i = int(np.searchsorted(self.times, t))
        if i >= len(self.times) or self.times[i] != t:
            raise KeyError(f"{t} is not a grid point")
        return i


def _cum_from_inc(dim, level, inc):
    """Chen scan: cumulative signatures from per-interval increment levels."""
    n = inc[1].shape[0]
    cum = {1: np.concatenate([np.zeros((1, dim)), np.cumsum(inc[1], axis=0)])}
    if level >= 2:
        a_prev = cum[1][:-1]
        terms = inc[2] + np.einsum("na,nb->nab", a_prev, inc[1])
        cum[2] = np.concatenate(
            [np.zeros((1, dim, dim)), np.cumsum(terms, axis=0)]
        )
    if level >= 3:
        a_prev = cum[1][:-1]
        b_prev = cum[2][:-1]
        terms = (
            inc[3]
            + np.einsum("nab,nc->nabc", b_prev, inc[1])
            + np.einsum("na,nbc->nabc", a_prev, inc[2])
        )
        cum[3] = np.concatenate(
            [np.zeros((1, dim, dim, dim)), np.cumsum(terms, axis=0)]
        )
    return cum


@dataclass(frozen=True)
class GridRoughPath:
    """Multiplicative functional on the grid: per-interval increment tensors
    plus cumulative signatures for O(1) window queries.

    inc[j] has shape (N,) + (d,)*j, cum[j] has shape (N+1,) + (d,)*j.
    """

    dim: int
    level: int
    times: np.ndarray
    inc: dict = field(repr=False)
    cum: dict = field(repr=False)

    @staticmethod
    def from_increments(times, inc: dict, dim=None, level=None) -> "GridRoughPath":
        times = np.asarray(times, dtype=float)
        level = level if level is not None else max(inc)
        dim = dim if dim is not None else inc[1].shape[1]
        full = {}
        for j in range(1, level + 1):
            arr = np.asarray(inc.get(j), dtype=float)
            if arr.shape != (len(times) - 1,) + (dim,) * j:
                raise ValueError(f"level-{j} increments have shape {arr.shape}")
            full[j] = arr
        return GridRoughPath(dim, level, times, full, _cum_from_inc(dim, level, full))

    @property
    def n_intervals(self) -> int:
        return len(self.times) - 1

    def increment(self, i: int, k: int) -> TruncatedTensor:
        """X_{t_i, t_k} as a truncated tensor (i <= k grid indices)."""
        if not 0 <= i <= k <= self.n_intervals:
            raise IndexError((i, k))
        parts = [np.ones(())]
        for j in range(1, self.level + 1):
            parts.append(self.window_level(i, np.array([k]), j)[0])
        return TruncatedTensor(self.dim, self.level, tuple(parts))

    def window_level(self, i: int, ks: np.ndarray, j: int) -> np.ndarray:
        """X^j_{t_i, t_k} for one i and a vector of k >= i."""
        a_i = self.cum[1][i]
        a_k = self.cum[1][ks]
        if j == 1:
            return a_k - a_i
        b_i = self.cum[2][i]
        b_k = self.cum[2][ks]
        if j == 2:
            inv2 = np.multiply.outer(a_i, a_i) - b_i
            return inv2 - np.einsum("a,nb->nab", a_i, a_k) + b_k
        c_i = self.cum[3][i]
        c_k = self.cum[3][ks]
        inv2 = np.multiply.outer(a_i, a_i) - b_i
        inv3 = (
            -c_i
            + np.multiply.outer(a_i, b_i)
            + np.multiply.outer(b_i, a_i)
            - np.multiply.outer(np.multiply.outer(a_i, a_i), a_i)
        )
        return (
            inv3
            + np.einsum("ab,nc->nabc", inv2, a_k)
            - np.einsum("a,nbc->nabc", a_i, b_k)
            + c_k
        )

    def window_level_to(self, k: int, is_: np.ndarray, j: int) -> np.ndarray:
        """X^j_{t_i, t_k} for a vector of i <= k and one k."""
        a_i = self.cum[1][is_]
        a_k = self.cum[1][k]
        if j == 1:
            return a_k - a_i
        b_i = self.cum[2][is_]
        b_k = self.cum[2][k]
        inv2 = np.einsum("na,nb->nab", a_i, a_i) - b_i
        if j == 2:
            return inv2 - np.einsum("na,b->nab", a_i, a_k) + b_k
        c_i = self.cum[3][is_]
        c_k = self.cum[3][k]
        inv3 = (
            -c_i
            + np.einsum("na,nbc->nabc", a_i, b_i)
            + np.einsum("nab,nc->nabc", b_i, a_i)
            - np.einsum("nab,nc->nabc", np.einsum("na,nb->nab", a_i, a_i), a_i)
        )
        return (
            inv3
            + np.einsum("nab,c->nabc", inv2, a_k)
            - np.einsum("na,bc->nabc", a_i, b_k)
            + c_k
        )

    def window_l1_block(self, is_: np.ndarray, ks: np.ndarray, j: int) -> np.ndarray:
        """Matrix of |X^j_{t_i, t_k}| (coordinate l1) for index vectors;
        entries with i >= k are meaningless and must be masked by callers."""
        a_i = self.cum[1][is_]
        a_k = self.cum[1][ks]
        if j == 1:
            d = a_k[None, :, :] - a_i[:, None, :]
            return np.abs(d).sum(axis=-1)
        b_i = self.cum[2][is_]
        b_k = self.cum[2][ks]
        u_i = np.einsum("ia,ib->iab", a_i, a_i) - b_i
        if j == 2:
            d = u_i[:, None] - np.einsum("ia,kb->ikab", a_i, a_k) + b_k[None]
            return np.abs(d).reshape(len(is_), len(ks), -1).sum(axis=-1)
        c_i = self.cum[3][is_]
        c_k = self.cum[3][ks]
        inv3 = (
            -c_i
            + np.einsum("ia,ibc->iabc", a_i, b_i)
            + np.einsum("iab,ic->iabc", b_i, a_i)
            - np.einsum("iab,ic->iabc", np.einsum("ia,ib->iab", a_i, a_i), a_i)
        )
        d = (
            inv3[:, None]
            + np.einsum("iab,kc->ikabc", u_i, a_k)
            - np.einsum("ia,kbc->ikabc", a_i, b_k)
            + c_k[None]
        )
        return np.abs(d).reshape(len(is_), len(ks), -1).sum(axis=-1)

    def window(self, i0: int, i1: int) -> "GridRoughPath":
        sub = {j: self.inc[j][i0:i1] for j in self.inc}
        return GridRoughPath.from_increments(
            self.times[i0 : i1 + 1], sub, self.dim, self.level
        )

    def level1_path(self) -> GridPath:
        return GridPath(self.times, self.cum[1])

    def interval_tensor(self, i: int) -> TruncatedTensor:
        parts = [np.ones(())] + [self.inc[j][i] for j in range(1, self.level + 1)]
        return TruncatedTensor(self.dim, self.level, tuple(parts))

    def dilate(self, r: float) -> "GridRoughPath":
        return GridRoughPath.from_increments(
            self.times,
            {j: (r**j) * arr for j, arr in self.inc.items()},
            self.dim,
            self.level,
        )

    def index_of(self, t: float) -> int:
        i = int(np.searchsorted(self.times, t))
        if i >= len(self.times) or self.times[i] != t:
            raise KeyError(f"{t} is not a grid point")
        return i


def _l1(arr: np.ndarray, batch_axes: int = 1) -> np.ndarray:
    return np.abs(arr).reshape(arr.shape[:batch_axes] + (-1,)).sum(axis=-1)


def _blocked_dp(block_fn, n: int, e: float, chunk: int = 128) -> float:
    """Longest-path DP best[k] = max_{i<k} best[i] + w(i,k)^e with the edge
    weights produced in (chunk x chunk) blocks to keep numpy batch sizes
    large; returns best[n]."""
    best = np.zeros(n + 1)
    for kb in range(1, n + 1, chunk):
        ke = min(kb + chunk, n + 1)
        ks = np.arange(kb, ke)
        lmax = np.full(ke - kb, -np.inf)
        for ib in range(0, kb, chunk):
            ie = min(ib + chunk, kb)
            w = block_fn(np.arange(ib, ie), ks) ** e
            lmax = np.maximum(lmax, np.max(best[ib:ie, None] + w, axis=0))
        wd = block_fn(np.arange(kb, ke), ks) ** e
        for idx in range(ke - kb):
            k = kb + idx
            cand = lmax[idx]
            if k > kb:
                diag = np.max(best[kb:k] + wd[: k - kb, idx])
                cand = max(cand, diag)
            best[k] = cand
    return float(best[n])


def pvar_norm(rp: GridRoughPath, j: int, p: float, window=None) -> float:
    """||X^j||_{p/j} over the window: exact partition supremum by DP.

    best[k] = max over i < k of best[i] + |X^j_{t_i,t_k}|^{p/j}; the returned
    value is the (j/p)-th root of best at the window end.
    """
    if not 1 <= j <= rp.level:
        raise ValueError(f"level {j} not stored (L={rp.level})")
    if p < 2:
        raise ValueError("p must be >= 2")
    i0, i1 = window if window is not None else (0, rp.n_intervals)
    if i1 <= i0:
        return 0.0
    e = p / j

    def block(is_, ks):
        return rp.window_l1_block(is_ + i0, ks + i0, j)

    return _blocked_dp(block, i1 - i0, e) ** (1.0 / e)


def path_qvar(path: GridPath, q: float, window=None) -> float:
    """q-variation norm of a level-1 grid path, exact over grid partitions."""
    i0, i1 = window if window is not None else (0, path.n_intervals)
    if i1 <= i0:
        return 0.0
    vals = path.values

    def block(is_, ks):
        d = vals[ks + i0][None, :, :] - vals[is_ + i0][:, None, :]
        return np.abs(d).sum(axis=-1)

    return _blocked_dp(block, i1 - i0, q) ** (1.0 / q)


def xi_gauge(rp: GridRoughPath, p: float, window=None) -> float:
    """Homogeneous gauge: sum over levels of ||X^j||_{p/j}^{1/j}."""
    return float(
        sum(pvar_norm(rp, j, p, window) ** (1.0 / j) for j in range(1, rp.level + 1))
    )


def project_piecewise_linear(path: GridPath, partition) -> GridPath:
    """Piecewise-linear projection onto sub-grid points, resampled on the
    original grid for comparability.

    partition: iterable of grid indices or grid times; must contain both
    endpoints.
    """
    idx = []
    for pt in partition:
        if isinstance(pt, (int, np.integer)):
            idx.append(int(pt))
        else:
            idx.append(path.index_of(float(pt)))
    idx = sorted(set(idx))
    if not idx or idx[0] != 0 or idx[-1] != path.n_intervals:
        raise InvalidPartition("partition must include both endpoints")
    anchors_t = path.times[idx]
    anchors_v = path.values[idx]
    out = np.empty_like(path.values)
    for c in range(path.dim):
        out[:, c] = np.interp(path.times, anchors_t, anchors_v[:, c])
    out[0] = 0.0
    return GridPath(path.times, out)


@dataclass
class ControlValue:
    """Superadditive two-parameter function evaluated on grid pairs."""

    times: np.ndarray
    _eval: callable
    _cache: dict = field(default_factory=dict, repr=False)

    def at(self, i: int, k: int) -> float:
        if k < i:
            raise ValueError("need i <= k")
        if k == i:
            return 0.0
        key = (i, k)
        if key not in self._cache:
            self._cache[key] = float(self._eval(i, k))
        return self._cache[key]

    def index_of(self, t: float) -> int:
        i = int(np.searchsorted(self.times, t))
        if i >= len(self.times) or self.times[i] != t:
            raise KeyError(f"{t} is not a grid point")
        return i


def canonical_control(
    X: GridRoughPath | None,
    Lambda: GridPath | None,
    p: float,
    q: float = 1.0,
    kappa: float | None = None,
) -> ControlValue:
    """omega(s,t) = ||Lambda||_{q,[s,t]}^q + sum_j kappa^{-p} ||X^j||_{p/j,[s,t]}^{p/j}.

    kappa defaults to the gauge of X; pass kappa=1 for the unnormalized
    control.  Either argument may be None.
    """
    if X is None and Lambda is None:
        raise ValueError("need at least one of X, Lambda")
    times = X.times if X is not None else Lambda.times
    if X is not None and Lambda is not None:
        if len(X.times) != len(Lambda.times) or np.any(X.times != Lambda.times):
            raise ValueError("X and Lambda must share a grid")
    if X is not None and kappa is None:
        kappa = xi_gauge(X, p)

    def evaluate(i, k):
        total = 0.0
        if Lambda is not None:
            total += path_qvar(Lambda, q, (i, k)) ** q
        if X is not None and kappa > 0:
            for j in range(1, X.level + 1):
                total += kappa ** (-p) * pvar_norm(X, j, p, (i, k)) ** (p / j)
        return total

    return ControlValue(np.asarray(times, dtype=float), evaluate)


def control_table(times, table: np.ndarray) -> ControlValue:
    """User-supplied control: table[i, k] = omega(t_i, t_k)."""
    table = np.asarray(table, dtype=float)
    return ControlValue(np.asarray(times, dtype=float), lambda i, k: table[i, k])


def control_eval(cv: ControlValue, s: float, t: float) -> float:
    """omega(s, t) for grid times s <= t."""
    if s > t:
        raise ValueError(f"need s <= t, got {s} > {t}")
    return cv.at(cv.index_of(s), cv.index_of(t))


def read_csv_path(source) -> GridPath:
    """Read `time,x1,...,xd` CSV; values are shifted to start at 0 if needed."""
    data = np.genfromtxt(source, delimiter=",", names=True)
    names = data.dtype.names
    if names is None or names[0] != "time":
        raise ValueError("expected header 'time,x1,...,xd'")
    times = np.atleast_1d(data["time"])
    values = np.column_stack([np.atleast_1d(data[c]) for c in names[1:]])
    if times[0] != 0.0:
        raise ValueError("first row must be t=0")
    if np.any(values[0] != 0.0):
        log.info("shifting path start %s to 0", values[0])
        values = values - values[0]
    return GridPath(times, values)
