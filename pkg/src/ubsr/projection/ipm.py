"""Primal-dual interior-point projection.

Works with the scaled multiplier y = rho/m and an explicit slack s > 0 for
the constraint sum l(u) + s = m*lam.  The start is strictly feasible; later
iterates keep s, y > 0 while the constraint residual is driven to zero with
the rest of F_t.  Each Newton system has an arrow structure and is solved in
O(m) through the diagonal D = I + y diag(l''(u)).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import InfeasibleStartError, LossOverflowError, UbsrError, MaxIterationsError, StallError
from ..estimate import estimate_ubsr
from ..loss import PolynomialLoss
from .common import (
    IterationCounts,
    NewtonTrace,
    ProjectionInstance,
    ProjectionResult,
    Solver,
    active_mask,
    finish,
    inside_result,
    membership,
    scatter,
)

H_FLOOR_ULPS = 16.0
# Dimension from which the larger centering factor is used.
LARGE_M = 10_000


@dataclass(frozen=True)
class IPMParams:
    mu: Optional[float] = None  # 10, or 50 once m >= LARGE_M
    gamma: float = 0.5
    nu: float = 0.05
    y0: float = 10.0
    tol: float = 1e-10
    max_iter: int = 500
    max_backtracks: int = 80
    start_margin: float = 1e-3
    # A step may remove at most this fraction of s or of y.
    boundary_fraction: float = 0.99
    # The barrier value is lowered once ||F_t|| <= centering / t.
    centering: float = 10.0

    def __post_init__(self):
        if self.mu is not None and not self.mu > 1:
            raise ValueError("mu must exceed 1")
        if not (0 < self.gamma < 1 and 0 < self.nu < 1):
            raise ValueError("gamma and nu must lie in (0, 1)")
        if not self.y0 > 0:
            raise ValueError("y0 must be positive")

    def mu_for(self, m: int) -> float:
        if self.mu is not None:
            return self.mu
        return 50.0 if m >= LARGE_M else 10.0


class _Point:
    def __init__(self, n):
        self.u = np.empty(n)
        self.l = np.empty(n)
        self.d1 = np.empty(n)
        self.d2 = np.empty(n)
        self.fu = np.empty(n)
        self.y = 0.0
        self.s = 0.0
        self.rp = 0.0

    def evaluate(self, x, loss, mlam, inv_t):
        """Fill derivatives and residual blocks; return (||F_t||_2, F_c)."""
        loss.derivs_into(self.u, self.l, self.d1, self.d2)
        self.rp = float(np.sum(self.l)) + self.s - mlam
        np.multiply(self.d1, self.y, out=self.fu)
        self.fu += self.u
        self.fu -= x
        fc = self.y * self.s - inv_t
        return math.sqrt(float(np.dot(self.fu, self.fu)) + self.rp * self.rp + fc * fc), fc

    def set_step(self, cur, du, dy, ds, alpha):
        np.multiply(du, alpha, out=self.u)
        self.u += cur.u
        self.y = cur.y + alpha * dy
        self.s = cur.s + alpha * ds


def strict_start(x: np.ndarray, loss, mlam: float, margin: float) -> np.ndarray:
    """min(x, a) shifted down by the smallest amount giving sum l <= m lam (1 - margin)."""
    base = np.minimum(x, loss.flat_threshold) if loss.flat_threshold > -math.inf else x.copy()
    target = mlam * (1.0 - margin)
    if base.max() <= loss.arg_ceiling and float(np.sum(loss.values(base))) <= target:
        return base
    try:
        shift = max(estimate_ubsr(-base, target / base.size, loss).t, 0.0)
    except UbsrError as exc:
        raise InfeasibleStartError("could not find a strictly feasible starting point") from exc
    # The scalar root is accurate to rounding; nudge until the sum is below target.
    step = max(abs(shift), 1.0) * 1e-12
    for _ in range(200):
        u = base - shift
        if float(np.sum(loss.values(u))) <= target:
            return u
        shift += step
        step *= 2.0
    raise InfeasibleStartError("could not find a strictly feasible starting point")


def project_ipm(inst: ProjectionInstance, params: IPMParams = IPMParams()) -> ProjectionResult:
    """Project ``inst.x`` onto Z with a primal-dual interior-point method.

    Parameters
    ----------
    inst : ProjectionInstance
    params : IPMParams
        ``mu`` is the centering factor: t is reset to ``mu / gap`` each time
        the iterate is near the central point for the current t (see
        ``centering``); ``gamma`` is the backtracking factor,
        ``nu`` the Armijo constant and ``y0`` the starting multiplier in the
        scaled form y = rho/m.  Stops when ``||F_t|| < tol`` and the duality
        gap surrogate ``y * s < tol``.  Once ``y * s`` is at the rounding
        floor of ``sum l(u)`` the slack blocks of F_t are held to that floor
        instead of ``tol``.

    Returns
    -------
    ProjectionResult
        ``surrogate_hessian`` is set for the eta=2 loss, whose l'' is replaced
        by an element of the generalized derivative.
    """
    if membership(inst).inside:
        return inside_result(inst, Solver.IPM)
    loss, m, lam = inst.loss, inst.m, inst.lam
    surrogate = isinstance(loss, PolynomialLoss) and loss.eta < 3
    mask = active_mask(inst)
    x = inst.x if mask is None else inst.x[mask]
    n = x.size
    mlam = m * lam
    mu, gamma, nu = params.mu_for(m), params.gamma, params.nu
    keep = 1.0 - params.boundary_fraction
    s_floor = H_FLOOR_ULPS * np.finfo(float).eps * mlam

    cur, trial = _Point(n), _Point(n)
    cur.u[:] = strict_start(x, loss, mlam, params.start_margin)
    cur.y = float(params.y0)
    cur.s = mlam - float(np.sum(loss.values(cur.u)))
    if not cur.s > 0:
        raise InfeasibleStartError("starting point is not strictly feasible")

    dinv = np.empty(n)
    dg = np.empty(n)
    du = np.empty(n)
    counts = IterationCounts()
    trace = NewtonTrace()
    step = 0.0
    inv_t = cur.y * cur.s / mu
    norm, fc = cur.evaluate(x, loss, mlam, inv_t)
    for k in range(params.max_iter + 1):
        gap = cur.y * cur.s
        if norm <= params.centering * inv_t and gap / mu < inv_t:
            # Near the central point for the current barrier value: retarget.
            inv_t = gap / mu
            norm, fc = cur.evaluate(x, loss, mlam, inv_t)
        trace.append(norm, step, cur.y * m)
        if _converged(cur, norm, fc, gap, params.tol, cur.y * s_floor):
            break
        if k == params.max_iter:
            raise MaxIterationsError(
                f"IPM did not converge in {params.max_iter} iterations (||F||={norm:.3e})", trace=trace
            )
        np.multiply(cur.d2, cur.y, out=dinv)
        dinv += 1.0
        np.reciprocal(dinv, out=dinv)
        np.multiply(dinv, cur.d1, out=dg)  # D^{-1} g
        gdg = float(np.dot(cur.d1, dg))
        gdf = float(np.dot(dg, cur.fu))
        dy = (cur.rp - fc / cur.y - gdf) / (gdg + cur.s / cur.y)
        ds = (-fc - cur.s * dy) / cur.y
        # du = -D^{-1} (F_u + dy g)
        np.multiply(cur.fu, dinv, out=du)
        du += dy * dg
        np.negative(du, out=du)

        # Fraction to the boundary for the linear variables s and y.
        alpha = 1.0
        if dy < 0:
            alpha = min(alpha, -params.boundary_fraction * cur.y / dy)
        if ds < 0:
            alpha = min(alpha, -params.boundary_fraction * cur.s / ds)
        backtracks = 0
        while True:
            trial.set_step(cur, du, dy, ds, alpha)
            try:
                t_norm, t_fc = trial.evaluate(x, loss, mlam, inv_t)
            except LossOverflowError:
                t_norm = math.inf
            if t_norm <= (1.0 - nu * alpha) * norm:
                break
            alpha *= gamma
            backtracks += 1
            if backtracks > params.max_backtracks:
                raise StallError(f"interior-point Armijo search stalled at ||F||={norm:.3e}", trace=trace)
        counts.outer += 1
        counts.backtracks += backtracks
        step = alpha
        cur, trial = trial, cur
        norm, fc = t_norm, t_fc
    u = cur.u.copy()
    return finish(
        inst, scatter(inst, mask, u), cur.y * m, counts, Solver.IPM, trace, surrogate_hessian=surrogate
    )


def _converged(p: _Point, norm, fc, gap, tol, floor) -> bool:
    if norm < tol and gap < tol:
        return True
    if gap > max(tol, floor):
        return False
    # Slack at the rounding floor: only the u block must meet tol.
    fu = math.sqrt(float(np.dot(p.fu, p.fu)))
    return fu < tol and abs(p.rp) <= max(tol, floor) and abs(fc) <= tol + floor
