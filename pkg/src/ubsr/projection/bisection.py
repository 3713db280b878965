"""Bisection on the multiplier rho using the sign of H(rho)."""
from __future__ import annotations

from typing import Optional

import numpy as np

from ..errors import MaxIterationsError
from .common import (
    GKernel,
    IterationCounts,
    NewtonTrace,
    ProjectionInstance,
    ProjectionResult,
    Solver,
    active_mask,
    complementarity_scale,
    finish,
    inside_result,
    membership,
    scatter,
)

MAX_DOUBLINGS = 200
LOOSE_INNER_TOL = 1e-6


def project_bisection(
    inst: ProjectionInstance,
    rho_upper0: Optional[float] = None,
    tol: float = 0.0,
    h_tol: float = 1e-10,
    inner_tol: float = 1e-12,
    inner_max_iter: int = 100,
    max_iter: int = 2000,
) -> ProjectionResult:
    """Project ``inst.x`` onto Z by bisection on H(rho) = sum l(u(rho)) - m lam.

    Parameters
    ----------
    inst : ProjectionInstance
    rho_upper0 : float, optional
        First upper end, ``m`` by default (rho scales with m); doubled until ``H(rho_U) <= 0``.  Each doubling also
        moves the lower end to the previous upper end, where H was positive.
    tol : float
        Stop once the bracket is narrower than ``tol``.  With the default 0
        the loop runs until one of the other exits fires.
    h_tol : float
        Treat H(mid) as zero once ``|H| * max(1, rho) / m <= h_tol``.
    max_iter : int
        Cap on bisection steps (the bracket stops shrinking in floating point
        long before the default is reached).

    Returns
    -------
    ProjectionResult
        ``u`` and ``rho`` at the final midpoint.
    """
    if rho_upper0 is None:
        rho_upper0 = float(inst.m)
    if not rho_upper0 > 0:
        raise ValueError(f"rho_upper0 must be positive, got {rho_upper0}")
    if membership(inst).inside:
        return inside_result(inst, Solver.BISECTION)
    loss, m, lam = inst.loss, inst.m, inst.lam
    mask = active_mask(inst)
    xa = inst.x if mask is None else inst.x[mask]
    kern = GKernel(xa, loss)
    counts = IterationCounts()
    trace = NewtonTrace()
    state = {"u": None, "rho": None, "slope": np.empty_like(xa)}
    pred = np.empty_like(xa)

    def H_at(rho):
        u0 = None
        if state["u"] is not None:
            # Tangent predictor from the most recent evaluation.
            np.multiply(state["slope"], state["rho"] - rho, out=pred)
            np.add(pred, state["u"], out=pred)
            u0 = pred
        # Solve loosely first and tighten only until the sign of H is certain:
        # an inner residual |G| <= r perturbs H by at most r * sum l'(u).
        tol_k = max(inner_tol, LOOSE_INNER_TOL)
        while True:
            u, inner = kern.solve(rho / m, u0, tol_k, inner_max_iter, polish=tol_k <= inner_tol)
            counts.inner += inner
            H = float(np.sum(kern.l)) - m * lam
            if tol_k <= inner_tol or abs(H) > kern.worst * float(np.sum(kern.d1)):
                break
            tol_k = max(inner_tol, tol_k * 1e-3)
            u0 = u
        # du/drho = -slope with slope = l'(u) / (m + rho l''(u))
        slope = state["slope"]
        np.multiply(kern.d2, rho, out=slope)
        slope += m
        np.divide(kern.d1, slope, out=slope)
        state["u"], state["rho"] = u, rho
        trace.append(abs(H), 0.0, rho)
        return H, u

    lo, hi = 0.0, float(rho_upper0)
    H, u = H_at(hi)
    for _ in range(MAX_DOUBLINGS):
        if H <= 0:
            break
        lo, hi = hi, 2.0 * hi
        counts.outer += 1
        H, u = H_at(hi)
    else:
        raise MaxIterationsError(f"no sign change of H after {MAX_DOUBLINGS} doublings", trace=trace)

    rho = hi
    eps = np.finfo(float).eps
    h_floor = 16.0 * eps * m * lam  # rounding floor of the computed sum
    for _ in range(max_iter):
        if abs(H) * complementarity_scale(rho, m) <= h_tol or abs(H) <= h_floor:
            break
        if hi - lo < tol or hi - lo <= 4 * eps * hi:
            break
        rho = 0.5 * (lo + hi)
        counts.outer += 1
        H, u = H_at(rho)
        if H > 0:
            lo = rho
        else:
            hi = rho
    else:
        raise MaxIterationsError(f"bisection did not finish in {max_iter} steps", trace=trace)
    return finish(inst, scatter(inst, mask, u), rho, counts, Solver.BISECTION, trace)
