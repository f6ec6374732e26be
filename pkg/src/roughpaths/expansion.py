"""Small-parameter expansion of the solution map around a base path.

Term k solves a linear equation whose inhomogeneity couples the driver to
all lower-order terms: the rough-integral part is built with the order-k
expansion coefficient against the joint rough path of everything already
computed, the drift part is a Young integral against the base path, and the
linear part is removed by the Duhamel transform.  The joint rough path over
driver + base + all terms is carried along, so the mixed iterated integrals
used by the order estimates are genuine rough-path data.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .coefficients import (
    FrozenEpsCoefficient,
    SmoothCoefficient,
    build_fn_gn,
    combined_drift_system,
    with_identity_block,
)
from .integration import integrate
from .lift import joint_lift, lift_piecewise_linear, shift
from .paths import GridPath, GridRoughPath
from .rde import SolverConfig, solve
from .young import OperatorPath, duhamel

log = logging.getLogger(__name__)

__all__ = [
    "ExpansionBundle",
    "RemainderBundle",
    "OrderFit",
    "expand",
    "remainder",
    "order_fit",
    "remainder_order_check",
]


def _dyadic_windows(n):
    out = []
    length = n
    while length >= 1:
        for start in range(0, n - length + 1, max(1, length)):
            out.append((start, start + length))
        length //= 2
    return out


class _JointAccess:
    """Shared accessor for block iterated integrals of a joint rough path."""

    def _slices(self):  # pragma: no cover - provided by dataclasses
        raise NotImplementedError

    def iterated(self, j: int, indices, s: float = 0.0, t: float = 1.0) -> np.ndarray:
        """Joint iterated integral of the selected component blocks over the
        window [s, t] (grid times)."""
        joint = self.joint
        if not 1 <= j <= joint.level:
            raise ValueError(f"level {j} not stored")
        if len(indices) != j:
            raise ValueError("need one component index per tensor slot")
        i0, i1 = joint.index_of(s), joint.index_of(t)
        tens = joint.increment(i0, i1).coeffs[j]
        slices = self._slices()
        return tens[tuple(slices[i] for i in indices)]

    def iterated_sup(self, j: int, indices) -> float:
        """Max l1 size of the block integral over dyadic grid windows."""
        joint = self.joint
        best = 0.0
        slices = self._slices()
        for i0, i1 in _dyadic_windows(joint.n_intervals):
            tens = joint.increment(i0, i1).coeffs[j]
            block = tens[tuple(slices[i] for i in indices)]
            best = max(best, float(np.abs(block).sum()))
        return best


@dataclass
class ExpansionBundle(_JointAccess):
    """Terms Y^0..Y^n plus the joint rough path over driver (+) base (+)
    terms.  Component indices: -2 is the driver, -1 the base path, i >= 0
    the terms."""

    order: int
    d_v: int
    d_hv: int
    w: int
    terms: list
    joint: GridRoughPath
    p: float

    @staticmethod
    def nu(i: int) -> int:
        """Scaling weight of component i in the gauge bound."""
        if i == -2:
            return 1
        if i == -1:
            return 0
        if i >= 0:
            return i
        raise ValueError(f"no component {i}")

    def _slices(self):
        slices = {-2: slice(0, self.d_v), -1: slice(self.d_v, self.d_v + self.d_hv)}
        base = self.d_v + self.d_hv
        for i in range(self.order + 1):
            slices[i] = slice(base + i * self.w, base + (i + 1) * self.w)
        return slices


@dataclass
class RemainderBundle(_JointAccess):
    """Remainder data at one parameter value.

    Component indices for the joint path: -3 the scaled driver, -2 the base
    path, -1 the full solution, 0 <= i <= n-1 the scaled terms eps^i Y^i, n
    the order-n remainder.
    """

    epsilon: float
    order: int
    d_v: int
    d_hv: int
    w: int
    q_first_level: GridPath
    y_eps: GridPath
    joint: GridRoughPath
    order_estimate: float | None = None

    @staticmethod
    def nu(i: int) -> int:
        if i == -3:
            return 1
        if i in (-2, -1):
            return 0
        if i >= 0:
            return i
        raise ValueError(f"no component {i}")

    def _slices(self):
        slices = {
            -3: slice(0, self.d_v),
            -2: slice(self.d_v, self.d_v + self.d_hv),
            -1: slice(self.d_v + self.d_hv, self.d_v + self.d_hv + self.w),
        }
        base = self.d_v + self.d_hv + self.w
        for i in range(self.order + 1):
            slices[i] = slice(base + i * self.w, base + (i + 1) * self.w)
        return slices


def _drift_operator(b: SmoothCoefficient, y0_path: GridPath, lam: GridPath):
    """Operator path of int d_y b(0, Y^0) <., dLambda> (trapezoid on the
    coefficient values)."""
    vals = b.eval_batch(0, 1, 0.0, y0_path.values)  # (N+1, w, w, d_hv)
    mid = 0.5 * (vals[:-1] + vals[1:])
    inc = np.einsum("nwud,nd->nwu", mid, lam.increments())
    w = vals.shape[1]
    omega = np.concatenate([np.zeros((1, w, w)), np.cumsum(inc, axis=0)])
    return OperatorPath(lam.times, omega)


def expand(
    sigma: SmoothCoefficient,
    b: SmoothCoefficient,
    x: GridRoughPath,
    lam: GridPath,
    n: int,
    p: float | None = None,
    cfg: SolverConfig | None = None,
) -> ExpansionBundle:
    """Expansion terms of the solution of dY = sigma(eps,Y) eps dX +
    b(eps,Y) dLambda around eps = 0, orders 0..n."""
    if n < 0:
        raise ValueError("n >= 0")
    level = x.level
    p = float(level) if p is None else float(p)
    d_v, d_hv, w = sigma.drv_dim, b.drv_dim, sigma.in_dim
    if x.dim != d_v:
        raise ValueError(f"driver dim {x.dim} != sigma driver dim {d_v}")
    if lam.dim != d_hv:
        raise ValueError(f"base dim {lam.dim} != drift driver dim {d_hv}")
    if len(lam.times) != len(x.times) or np.any(lam.times != x.times):
        raise ValueError("driver and base path must share a grid")

    b0 = FrozenEpsCoefficient(b, 0.0)
    lam_lift = lift_piecewise_linear(lam, level)
    y0_sol = solve(b0, lam_lift, np.zeros(w), cfg=cfg, p=p)
    y0_path = y0_sol.solution_path()
    terms = [y0_path]

    joint = joint_lift([x, lam, y0_path], level)
    omega_w = _drift_operator(b, y0_path, lam)

    for k in range(1, n + 1):
        f_k, g_k = build_fn_gn(sigma, b, k)
        integrand = with_identity_block(f_k)
        stacked = integrate(integrand, joint)
        # drift inhomogeneity: Young integral of g_k against the base path
        gvals = g_k.eval_batch(0, 0, 0.0, joint.cum[1])
        mid = 0.5 * (gvals[:-1] + gvals[1:])
        j_inc = np.einsum("nwD,nD->nw", mid, joint.inc[1])
        j_vals = np.concatenate([np.zeros((1, w)), np.cumsum(j_inc, axis=0)])
        h = np.zeros((len(x.times), stacked.dim))
        h[:, -w:] = j_vals
        stacked = shift(stacked, GridPath(x.times, h))
        # remove the linear drift term by the Duhamel transform on the
        # last block (identity elsewhere)
        omega_joint = np.zeros((len(x.times), stacked.dim, stacked.dim))
        omega_joint[:, -w:, -w:] = omega_w.values
        joint = duhamel(stacked, OperatorPath(x.times, omega_joint))
        terms.append(GridPath(x.times, joint.cum[1][:, -w:]))
        log.debug("expansion term %d: |Y^%d|_sup = %.3g", k, k, np.abs(terms[-1].values).max())

    return ExpansionBundle(
        order=n, d_v=d_v, d_hv=d_hv, w=w, terms=terms, joint=joint, p=p
    )


def remainder(
    sigma: SmoothCoefficient,
    b: SmoothCoefficient,
    x: GridRoughPath,
    lam: GridPath,
    n: int,
    epsilon: float,
    p: float | None = None,
    cfg: SolverConfig | None = None,
    bundle: ExpansionBundle | None = None,
) -> RemainderBundle:
    """Q^{n+1,(eps)} = Y^{(eps)} - sum_k eps^k Y^k, plus the joint rough path
    of the scaled family (levels <= 2)."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    if bundle is None:
        bundle = expand(sigma, b, x, lam, n, p=p, cfg=cfg)
    level = x.level
    w = bundle.w
    full = combined_drift_system(sigma, b, epsilon)
    driver = joint_lift([x.dilate(epsilon), lam], level)
    sol = solve(full, driver, np.zeros(w), cfg=cfg, p=bundle.p)
    y_eps = sol.solution_path()

    partial = np.zeros_like(y_eps.values)
    for k in range(n + 1):
        partial += epsilon**k * bundle.terms[k].values
    q_top = GridPath(x.times, y_eps.values - partial)
    partial_n = partial - epsilon**n * bundle.terms[n].values
    q_n = GridPath(x.times, y_eps.values - partial_n)

    parts = [x.dilate(epsilon), lam, y_eps]
    parts += [
        GridPath(x.times, epsilon**i * bundle.terms[i].values) for i in range(n)
    ]
    parts.append(q_n)
    joint = joint_lift(parts, min(level, 2))
    return RemainderBundle(
        epsilon=epsilon,
        order=n,
        d_v=bundle.d_v,
        d_hv=bundle.d_hv,
        w=w,
        q_first_level=q_top,
        y_eps=y_eps,
        joint=joint,
    )


@dataclass(frozen=True)
class OrderFit:
    slope: float | None
    stderr: float | None
    intercept: float | None
    exact_termination: bool


def order_fit(epsilons, gauges, zero_floor: float = 1e-13) -> OrderFit:
    """Least-squares log-log slope of gauge values against the parameter.

    All-zero gauges are reported as exact termination instead of a slope.
    """
    eps = np.asarray(epsilons, dtype=float)
    g = np.asarray(gauges, dtype=float)
    if len(eps) != len(g) or len(eps) < 2:
        raise ValueError("need matching gauge per epsilon, at least two")
    if np.max(np.abs(g)) <= zero_floor:
        return OrderFit(None, None, None, exact_termination=True)
    if np.any(g <= 0):
        raise ValueError("gauges must be positive for a log-log fit")
    lx, ly = np.log(eps), np.log(g)
    a = np.vstack([lx, np.ones_like(lx)]).T
    coef, res, *_ = np.linalg.lstsq(a, ly, rcond=None)
    dof = max(len(eps) - 2, 1)
    sigma2 = float(res[0]) / dof if len(res) else 0.0
    sxx = np.sum((lx - lx.mean()) ** 2)
    stderr = float(np.sqrt(sigma2 / sxx)) if sxx > 0 else None
    return OrderFit(float(coef[0]), stderr, float(coef[1]), False)


def remainder_order_check(
    sigma,
    b,
    x,
    lam,
    n,
    epsilons,
    p=None,
    cfg=None,
    gauge=None,
) -> dict:
    """Sweep the parameter, fit the remainder order, return a report dict.

    gauge: callable on a RemainderBundle; defaults to sup |Q^{n+1,(eps)}|.
    """
    bundle = expand(sigma, b, x, lam, n, p=p, cfg=cfg)
    if gauge is None:
        gauge = lambda rb: float(np.abs(rb.q_first_level.values).max())
    gauges = []
    bundles = []
    for eps in epsilons:
        rb = remainder(sigma, b, x, lam, n, eps, p=p, cfg=cfg, bundle=bundle)
        bundles.append(rb)
        gauges.append(gauge(rb))
    fit = order_fit(epsilons, gauges)
    for rb in bundles:
        rb.order_estimate = fit.slope
    return {
        "epsilons": list(map(float, epsilons)),
        "gauges": list(map(float, gauges)),
        "slope": fit.slope,
        "stderr": fit.stderr,
        "exact_termination": fit.exact_termination,
        "bundles": bundles,
    }
