"""One-dimensional semismooth Newton on the multiplier rho.

For fixed rho the stationarity equations decouple into m scalar equations
G_i(u_i) = u_i - x_i + (rho/m) l'(u_i) = 0.  Their solution u(rho) is fed into
H(rho) = sum_i l(u_i(rho)) - m*lam, a nonincreasing function whose root is
the optimal multiplier.  The outer loop is Newton on H, safeguarded by a sign
bracket so that every iterate stays in (0, inf).
"""
from __future__ import annotations

import math

import numpy as np

from ..errors import DegenerateDerivativeError, MaxIterationsError, NonpositiveRhoError
from .common import (
    IterationCounts,
    NewtonTrace,
    ProjectionInstance,
    ProjectionResult,
    Solver,
    GKernel,
    active_mask,
    complementarity_scale,
    finish,
    inside_result,
    membership,
    scatter,
)

# |H| below this many ulps of m*lam is indistinguishable from rounding in the sum.
H_FLOOR_ULPS = 16.0
FORCING_CAP = 1e-2


def project_sepssn(
    inst: ProjectionInstance,
    rho0: float = 1.0,
    tol: float = 1e-10,
    max_iter: int = 100,
    inner_tol: float = 1e-12,
    inner_max_iter: int = 100,
    safeguard: bool = True,
) -> ProjectionResult:
    """Project ``inst.x`` onto Z by Newton's method on H(rho).

    Parameters
    ----------
    inst : ProjectionInstance
    rho0 : float
        Initial multiplier, must be positive.
    tol : float
        Stop once ``|H| * max(1, rho) / m <= tol``.  This bounds both the
        feasibility gap and the complementarity product by ``tol``.  The
        loop also stops once ``|H|`` reaches the rounding floor of the sum
        ``sum l(u_i)``, where Newton can make no further progress.
    max_iter : int
        Cap on outer Newton iterations.
    inner_tol, inner_max_iter :
        Stopping rule of the per-coordinate Newton solves of G.
    safeguard : bool
        Replace Newton steps leaving the current sign bracket by bisection
        (or doubling while no upper end is known).  When False a nonpositive
        iterate raises :class:`NonpositiveRhoError`.

    Returns
    -------
    ProjectionResult
        ``trace.residuals`` holds ``|H(rho_k)|`` for every evaluated rho.
    """
    if not rho0 > 0:
        raise ValueError(f"rho0 must be positive, got {rho0}")
    if membership(inst).inside:
        return inside_result(inst, Solver.SEPSSN)
    loss, m, lam = inst.loss, inst.m, inst.lam
    mask = active_mask(inst)
    xa = inst.x if mask is None else inst.x[mask]
    kern = GKernel(xa, loss)
    denom = np.empty_like(xa)
    work = np.empty_like(xa)

    counts = IterationCounts()
    trace = NewtonTrace()
    h_floor = H_FLOOR_ULPS * np.finfo(float).eps * m * lam
    lo, hi = 0.0, math.inf
    rho, step, u0 = float(rho0), 0.0, None
    best = None
    tol_k = inner_tol
    for k in range(max_iter + 1):
        u, inner = kern.solve(rho / m, u0, tol_k, inner_max_iter, polish=tol_k <= inner_tol)
        counts.inner += inner
        d1 = kern.d1
        np.multiply(kern.d2, rho, out=denom)
        denom += m
        np.multiply(d1, d1, out=work)
        work /= denom
        H = float(np.sum(kern.l)) - m * lam
        h = -float(np.sum(work))
        if h == 0.0:
            raise DegenerateDerivativeError("all l'(u_i) vanish; x should have been inside Z")
        trace.append(abs(H), step, rho)
        score = abs(H) * complementarity_scale(rho, m)
        if best is None or score < best[0]:
            best = (score, rho, u)
        if score <= tol or abs(H) <= h_floor:
            break
        if H > 0:
            lo = max(lo, rho)
        else:
            hi = min(hi, rho)
        if k == max_iter:
            raise MaxIterationsError(
                f"SepSSN did not converge in {max_iter} iterations (|H|={abs(H):.3e})", trace=trace
            )
        new = rho - H / h
        if not (lo < new < hi):
            if not safeguard:
                if new <= 0:
                    raise NonpositiveRhoError(f"Newton iterate rho={new:.3e} left (0, inf)")
            elif math.isinf(hi):
                new = 2.0 * max(rho, lo)
            else:
                new = 0.5 * (lo + hi)
        if new == rho or (hi < math.inf and hi - lo <= 4 * np.finfo(float).eps * hi):
            # H cannot be resolved further in floating point.
            break
        counts.outer += 1
        step = new - rho
        # First-order predictor for u(new) from du/drho = -l'(u) / (m + rho l''(u)).
        np.divide(d1, denom, out=work)
        work *= -step
        work += u
        u0 = work
        rho = new
        # Inexact inner solves while |H| is large: the error they induce in H
        # is at most sum(l') * max|G|, kept below a shrinking fraction of |H|.
        forcing = min(FORCING_CAP, abs(H) / m)
        tol_k = max(inner_tol, forcing * abs(H) / float(np.sum(d1)))
    _, rho, u = best
    return finish(inst, scatter(inst, mask, u), rho, counts, Solver.SEPSSN, trace)
