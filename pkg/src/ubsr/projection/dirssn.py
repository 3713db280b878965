"""Semismooth Newton directly on the (m+1)-dimensional KKT system.

The residual is F(u, rho) = [u - x + (rho/m) l'(u); mean l(u) - lam].  Its
generalized Jacobian is an arrow matrix with diagonal block
D = I + (rho/m) diag(l''(u)) and border g/m, g = l'(u), so the Newton system
is solved in O(m) by eliminating d1 through D.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..estimate import estimate_ubsr
from ..errors import LossOverflowError, MaxIterationsError, SingularJacobianError, StallError
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


@dataclass(frozen=True)
class DirSSNParams:
    sigma: float = 1e-4
    beta: float = 0.5
    tol: float = 1e-10
    max_iter: int = 200
    max_backtracks: int = 60

    def __post_init__(self):
        if not (0 < self.sigma < 1 and 0 < self.beta < 1):
            raise ValueError("sigma and beta must lie in (0, 1)")
        if not self.tol > 0:
            raise ValueError("tol must be positive")


class _State:
    """Iterate (u, rho) with its loss derivatives and residual blocks."""

    def __init__(self, n):
        self.u = np.empty(n)
        self.l = np.empty(n)
        self.d1 = np.empty(n)
        self.d2 = np.empty(n)
        self.f1 = np.empty(n)
        self.tmp = np.empty(n)
        self.rho = 0.0
        self.f2 = 0.0
        self.norm = 0.0

    def evaluate(self, x, loss, m, lam):
        loss.derivs_into(self.u, self.l, self.d1, self.d2)
        np.subtract(self.u, x, out=self.f1)
        np.multiply(self.d1, self.rho / m, out=self.tmp)
        self.f1 += self.tmp
        self.f2 = float(np.sum(self.l)) / m - lam
        self.norm = math.sqrt(float(np.dot(self.f1, self.f1)) + self.f2 * self.f2)


def shift_start(inst: ProjectionInstance):
    """Boundary point u0 = x - delta and least-squares multiplier rho0.

    delta solves mean l(x - delta) = lam (a scalar root), and rho0 fits the
    stationarity residual x - u0 - (rho/m) l'(u0) in the least-squares sense.
    """
    delta = estimate_ubsr(-inst.x, inst.lam, inst.loss).t
    u0 = inst.x - delta
    g = inst.loss.derivs01(u0)[1]
    rho0 = inst.m * delta * float(np.sum(g)) / float(np.dot(g, g))
    return u0, max(rho0, np.finfo(float).tiny)


def project_dirssn(
    inst: ProjectionInstance,
    u0=None,
    rho0: Optional[float] = None,
    params: DirSSNParams = DirSSNParams(),
) -> ProjectionResult:
    """Project ``inst.x`` onto Z by semismooth Newton on the full KKT system.

    Parameters
    ----------
    inst : ProjectionInstance
    u0 : array, optional
        Starting point.  It must have some coordinate with ``l'(u0_i) > 0``.
    rho0 : float, optional
        Starting multiplier, must be positive.  When both ``u0`` and ``rho0``
        are omitted the start comes from :func:`shift_start`.  Passing
        ``u0=inst.x, rho0=1`` gives the plain start, which converges but can
        need hundreds of damped steps once m is in the thousands.
    params : DirSSNParams
        Armijo constants ``sigma`` and ``beta``, stopping tolerance and caps.
        The loop stops when ``max|F1| <= tol`` and
        ``|F2| * max(1, rho) <= tol``.

    Returns
    -------
    ProjectionResult
        ``trace.residuals`` holds ``||F||_2`` at every iterate.
    """
    if membership(inst).inside:
        return inside_result(inst, Solver.DIRSSN)
    if u0 is None and rho0 is None:
        u0, rho0 = shift_start(inst)
    elif u0 is None:
        u0 = inst.x
    elif rho0 is None:
        rho0 = 1.0
    if not rho0 > 0:
        raise ValueError(f"rho0 must be positive, got {rho0}")
    loss, m, lam = inst.loss, inst.m, inst.lam
    mask = active_mask(inst)
    x = inst.x if mask is None else inst.x[mask]
    n = x.size
    a = loss.flat_threshold
    sigma, beta = params.sigma, params.beta
    f2_floor = 16.0 * np.finfo(float).eps * lam

    cur, trial = _State(n), _State(n)
    u0 = np.asarray(u0, dtype=float).reshape(-1)
    cur.u[:] = u0 if mask is None else u0[mask]
    if not float(cur.u.max()) > a:
        raise SingularJacobianError("l'(u0) vanishes identically; start above the flat region")
    cur.rho = float(rho0)
    cur.evaluate(x, loss, m, lam)

    dinv = np.empty(n)
    d1v = np.empty(n)
    counts = IterationCounts()
    trace = NewtonTrace()
    step = 0.0
    for k in range(params.max_iter + 1):
        trace.append(cur.norm, step, cur.rho)
        stat = max(float(cur.f1.max()), -float(cur.f1.min()))
        if stat <= params.tol and (
            abs(cur.f2) * max(1.0, cur.rho) <= params.tol or abs(cur.f2) <= f2_floor
        ):
            break
        if k == params.max_iter:
            raise MaxIterationsError(
                f"DirSSN did not converge in {params.max_iter} iterations (||F||={cur.norm:.3e})",
                trace=trace,
            )
        # D^{-1} with D = 1 + (rho/m) l''(u).
        np.multiply(cur.d2, cur.rho / m, out=dinv)
        dinv += 1.0
        np.reciprocal(dinv, out=dinv)
        np.multiply(dinv, cur.d1, out=d1v)  # D^{-1} g
        gdg = float(np.dot(cur.d1, d1v))
        if gdg <= 0.0:
            raise SingularJacobianError("grad L(u) = 0 at the current iterate")
        gdf = float(np.dot(d1v, cur.f1))
        d2 = m * (m * cur.f2 - gdf) / gdg
        # d1 = -D^{-1} (F1 + g d2 / m)
        np.multiply(d1v, -d2 / m, out=d1v)
        d1v -= dinv * cur.f1

        alpha = 1.0
        backtracks = 0
        if a > -math.inf:
            # Keep some coordinate above the flat threshold so grad L stays nonzero.
            while not float((cur.u + alpha * d1v).max()) > a:
                alpha *= beta
                backtracks += 1
                if backtracks > params.max_backtracks:
                    raise StallError("flat-region safeguard exhausted its backtracks", trace=trace)
        while True:
            np.multiply(d1v, alpha, out=trial.u)
            trial.u += cur.u
            trial.rho = cur.rho + alpha * d2
            try:
                trial.evaluate(x, loss, m, lam)
            except LossOverflowError:
                trial.norm = math.inf
            if trial.norm <= (1.0 - sigma * alpha) * cur.norm:
                break
            alpha *= beta
            backtracks += 1
            if backtracks > params.max_backtracks:
                if _at_rounding_floor(cur, params.tol, f2_floor):
                    break
                raise StallError(
                    f"Armijo search stalled at ||F||={cur.norm:.3e}", trace=trace
                )
        if backtracks > params.max_backtracks:
            break
        counts.outer += 1
        counts.backtracks += backtracks
        step = alpha
        cur, trial = trial, cur
    u = cur.u.copy()
    return finish(inst, scatter(inst, mask, u), cur.rho, counts, Solver.DIRSSN, trace)


def _at_rounding_floor(state: _State, tol: float, f2_floor: float) -> bool:
    """True when the residual is within a few ulps of what floating point can resolve."""
    stat = max(float(state.f1.max()), -float(state.f1.min()))
    return stat <= 100 * tol and abs(state.f2) <= 100 * f2_floor
