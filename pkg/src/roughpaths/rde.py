"""Rough differential equations dY = f(Y) dX by Picard iteration.

The solver works on the triple system (driver, solution, difference): each
sweep integrates the damping coefficient through the integration map, and
convergence is declared when the gauge of the difference block drops below
tolerance.  Steps are sized by an omega budget on the driver's control; a
piece that fails to damp is bisected.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .coefficients import (
    ShiftedCoefficient,
    SmoothCoefficient,
    difference_system,
    phi_beta,
    pair_system,
    sup_norm,
)
from .integration import integrate
from .lift import concat, joint_lift, pushforward, rough_distance
from .paths import GridPath, GridRoughPath, canonical_control, xi_gauge

log = logging.getLogger(__name__)

__all__ = [
    "SolverConfig",
    "PieceRecord",
    "RdeSolution",
    "NonConvergence",
    "solve",
    "picard_reintegrate",
    "ito_map_distance",
    "solution_difference",
]


class NonConvergence(RuntimeError):
    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class SolverConfig:
    """beta > 1 is the damping target; step_budget is the target value of
    rho^p omega per piece."""

    beta: float = 2.0
    tol: float = 1e-10
    max_iters: int = 30
    step_budget: float = 1.0

    def __post_init__(self):
        if not self.beta > 1:
            raise ValueError("beta must exceed 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")


@dataclass
class PieceRecord:
    window: tuple
    budget: float
    iterations: int
    gauges: list


@dataclass
class RdeSolution:
    Z: GridRoughPath
    y0: np.ndarray
    p: float
    iterations: int
    residual: float
    diagnostics: list = field(default_factory=list)

    @property
    def driver_dim(self) -> int:
        return self.Z.dim - len(self.y0)

    def solution_values(self) -> np.ndarray:
        """Positions of Y on the grid (initial point added back)."""
        w = len(self.y0)
        return self.Z.cum[1][:, self.Z.dim - w :] + self.y0

    def solution_path(self) -> GridPath:
        w = len(self.y0)
        return GridPath(self.Z.times, self.Z.cum[1][:, self.Z.dim - w :])


def _pieces_by_budget(cv, n, threshold):
    """Greedy maximal pieces with omega <= threshold; exponential search plus
    bisection keeps the number of control evaluations logarithmic."""
    pieces = []
    i0 = 0
    while i0 < n:
        step = 1
        k = i0 + 1
        while k < n and cv.at(i0, min(k + step, n)) <= threshold:
            k = min(k + step, n)
            step *= 2
        lo, hi = k, min(k + step, n)  # invariant: lo feasible, hi+ not
        while lo < hi:
            mid = (lo + hi + 1) // 2
            if cv.at(i0, mid) <= threshold:
                lo = mid
            else:
                hi = mid - 1
        pieces.append((i0, max(lo, i0 + 1)))
        i0 = max(lo, i0 + 1)
    return pieces


def solve(
    f: SmoothCoefficient,
    x: GridRoughPath,
    y0,
    cfg: SolverConfig | None = None,
    p: float | None = None,
    initial_gain: np.ndarray | None = None,
) -> RdeSolution:
    """Solve dY = f(Y) dX with Y_0 = y0 in the rough-path sense.

    Returns the joint rough path Z = (X, Y); the driver block of Z equals x
    exactly.  initial_gain overrides the first-iterate matrix f(y0) (used by
    the uniqueness-surrogate tests).
    """
    cfg = cfg or SolverConfig()
    p = float(x.level) if p is None else float(p)
    if not x.level <= p < x.level + 1:
        raise ValueError(f"p={p} incompatible with stored level {x.level}")
    if f.drv_dim != x.dim:
        raise ValueError(f"coefficient drives dim {f.drv_dim}, driver has {x.dim}")
    if f.max_order < x.level + 2:
        raise ValueError(
            f"coefficient supports order {f.max_order}, solver needs {x.level + 2}"
        )
    w = f.in_dim
    d_v = x.dim
    y0 = np.zeros(w) if y0 is None else np.asarray(y0, dtype=float).reshape(w)
    f0 = ShiftedCoefficient(f, y0) if np.any(y0 != 0) else f

    gauge = xi_gauge(x, p)
    r0 = 1.0 + np.abs(y0).sum() + 2.0 * gauge
    m_sup = sup_norm(f0, min(x.level + 1, f0.max_order), r0, samples=256).value
    rho = 1.0 + m_sup
    cv = canonical_control(x, None, p, kappa=1.0)
    pieces = _pieces_by_budget(cv, x.n_intervals, cfg.step_budget / rho**p)
    piece_tol = max(cfg.tol / (2.0 * len(pieces)), 1e-13)

    records = []
    z_pieces = []
    y_cur = np.zeros(w)
    total_iters = 0
    worst = 0.0
    stack = list(reversed(pieces))
    proj_z = np.hstack([np.eye(d_v + w), np.zeros((d_v + w, w))])
    proj_d = np.hstack([np.zeros((w, d_v + w)), np.eye(w)])
    while stack:
        i0, i1 = stack.pop()
        x_piece = x.window(i0, i1)
        f_loc = ShiftedCoefficient(f0, y_cur) if np.any(y_cur != 0) else f0
        if initial_gain is not None and not z_pieces:
            gain = np.asarray(initial_gain, dtype=float)
        else:
            gain = f_loc.eval(0, 0, 0.0, np.zeros(w))
        embed = np.vstack([np.eye(d_v), gain, gain])
        k_rp = pushforward(embed, x_piece)
        phi = phi_beta(f_loc, 1.0, d_v)
        gauges = []
        converged = False
        for it in range(cfg.max_iters):
            k_rp = integrate(phi, k_rp)
            d_gauge = xi_gauge(pushforward(proj_d, k_rp), p)
            gauges.append(d_gauge)
            total_iters += 1
            if d_gauge <= piece_tol:
                converged = True
                break
            if len(gauges) >= 4 and gauges[-1] > gauges[-2] >= gauges[-3]:
                break  # not damping; bisect below
        if not converged:
            if i1 - i0 <= 1:
                raise NonConvergence(
                    f"Picard failed on single interval {i0}", gauges[-1]
                )
            mid = (i0 + i1) // 2
            target = cv.at(i0, i1) / 2.0
            for k in range(i0 + 1, i1):
                if cv.at(i0, k) >= target:
                    mid = k
                    break
            mid = min(max(mid, i0 + 1), i1 - 1)
            log.debug("bisecting piece (%d, %d) at %d", i0, i1, mid)
            stack.append((mid, i1))
            stack.append((i0, mid))
            continue
        records.append(PieceRecord((i0, i1), rho**p * cv.at(i0, i1), len(gauges), gauges))
        worst = max(worst, gauges[-1])
        z_piece = pushforward(proj_z, k_rp)
        z_pieces.append(z_piece)
        y_cur = y_cur + z_piece.cum[1][-1, d_v:]
    z_full = concat(z_pieces) if len(z_pieces) > 1 else z_pieces[0]
    # splice the exact driver increments back into the driver block
    for j in range(1, x.level + 1):
        sl = (slice(None),) + (slice(0, d_v),) * j
        z_full.inc[j][sl] = x.inc[j]
    z_full = GridRoughPath.from_increments(x.times, z_full.inc, z_full.dim, x.level)
    return RdeSolution(
        Z=z_full,
        y0=y0,
        p=p,
        iterations=total_iters,
        residual=worst,
        diagnostics=records,
    )


def picard_reintegrate(f: SmoothCoefficient, sol: RdeSolution) -> float:
    """Distance d(Z, int F(Z) dZ) of the converged solution under one more
    sweep of the pair-system iteration."""
    w = f.in_dim
    f0 = ShiftedCoefficient(f, sol.y0) if np.any(sol.y0 != 0) else f
    system = pair_system(f0, sol.driver_dim)
    z_new = integrate(system, sol.Z)
    return rough_distance(sol.Z, z_new, sol.p)


def _dyadic_pairs(n):
    pairs = set()
    length = n
    while length >= 1:
        for start in range(0, n - length + 1, max(1, length // 2)):
            pairs.add((start, start + length))
        length //= 2
    return sorted(pairs)


def ito_map_distance(first: RdeSolution, second: RdeSolution) -> dict:
    """Level-wise sup of |Z^j - Zhat^j| / omega(s,t)^{j/p} under the summed
    canonical control of both solutions, over dyadic grid windows."""
    z1, z2 = first.Z, second.Z
    if z1.dim != z2.dim or z1.level != z2.level:
        raise ValueError("solutions disagree in dim or level")
    if len(z1.times) != len(z2.times) or np.any(z1.times != z2.times):
        raise ValueError("solutions must share a grid")
    p = first.p
    cv1 = canonical_control(z1, None, p, kappa=1.0)
    cv2 = canonical_control(z2, None, p, kappa=1.0)
    pairs = _dyadic_pairs(z1.n_intervals)
    sups = {}
    for j in range(1, z1.level + 1):
        worst = 0.0
        for i, k in pairs:
            om = cv1.at(i, k) + cv2.at(i, k)
            if om <= 0:
                continue
            d = z1.window_level(i, np.array([k]), j) - z2.window_level(
                i, np.array([k]), j
            )
            worst = max(worst, np.abs(d).sum() / om ** (j / p))
        sups[j] = worst
    return {"per_level": sups, "lipschitz_factor": max(sups.values())}


def solution_difference(
    f: SmoothCoefficient,
    x: GridRoughPath,
    lam: GridPath,
    y0=None,
    cfg: SolverConfig | None = None,
    p: float | None = None,
    q: float = 1.0,
) -> GridRoughPath:
    """Rough path of Q = Y_{X+Lambda} - Y_Lambda, via the joint system for
    the pair of solutions (so Q's own iterated integrals are genuine)."""
    p_eff = float(x.level) if p is None else float(p)
    if not (1.0 / p_eff + 1.0 / q > 1.0):
        raise ValueError(f"regularity constraint fails: 1/{p_eff} + 1/{q} <= 1")
    if lam.dim != x.dim:
        raise ValueError("X and Lambda must share the driver space")
    w = f.in_dim
    joint = joint_lift([x, lam], x.level)
    system = difference_system(f)
    y0 = np.zeros(w) if y0 is None else np.asarray(y0, float).reshape(w)
    sol = solve(system, joint, np.concatenate([y0, y0]), cfg=cfg, p=p)
    d2 = 2 * x.dim
    selector = np.hstack([np.zeros((w, d2)), np.eye(w), -np.eye(w)])
    return pushforward(selector, sol.Z)
