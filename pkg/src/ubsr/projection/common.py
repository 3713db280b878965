"""Shared types and kernels for projecting onto Z = {z : mean(l(z)) <= lam}."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from ..errors import DegenerateDerivativeError, LossOverflowError, MaxIterationsError
from ..loss import LossFunction, PolynomialLoss

# Points whose margin is at least -BOUNDARY_TOL count as members of Z.
BOUNDARY_TOL = 1e-12


class Solver(str, enum.Enum):
    DIRSSN = "dirssn"
    SEPSSN = "sepssn"
    BISECTION = "bisect"
    IPM = "ipm"


@dataclass(frozen=True)
class ProjectionInstance:
    """Point ``x`` to project onto the level set of ``loss`` at ``lam``."""

    x: np.ndarray
    lam: float
    loss: LossFunction

    def __post_init__(self):
        x = np.ascontiguousarray(self.x, dtype=float).reshape(-1)
        if x.size < 1:
            raise ValueError("x must have at least one entry")
        if not np.isfinite(x).all():
            raise ValueError("x must be finite")
        if not self.lam > self.loss.infimum:
            raise ValueError(
                f"lam={self.lam} must exceed inf l = {self.loss.infimum}; Z would have no interior"
            )
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "lam", float(self.lam))

    @property
    def m(self) -> int:
        return self.x.size


@dataclass
class IterationCounts:
    outer: int = 0
    inner: int = 0
    backtracks: int = 0


@dataclass(frozen=True)
class TraceRecord:
    residual: float
    step: float
    rho: float


@dataclass
class NewtonTrace:
    """Per-iteration residual, accepted step size and multiplier."""

    records: List[TraceRecord] = field(default_factory=list)

    def append(self, residual: float, step: float, rho: float) -> None:
        self.records.append(TraceRecord(float(residual), float(step), float(rho)))

    @property
    def residuals(self) -> np.ndarray:
        return np.array([r.residual for r in self.records])

    @property
    def rhos(self) -> np.ndarray:
        return np.array([r.rho for r in self.records])

    def __len__(self):
        return len(self.records)


@dataclass(frozen=True)
class KktCertificate:
    """Absolute residuals of the three optimality conditions."""

    stationarity: float
    feasibility: float
    complementarity: float

    @property
    def worst(self) -> float:
        return max(self.stationarity, self.feasibility, self.complementarity)


@dataclass
class ProjectionResult:
    u: np.ndarray
    rho: float
    kkt_residual: float
    iterations: IterationCounts
    solver: Solver
    trace: NewtonTrace = field(default_factory=NewtonTrace)
    inside: bool = False
    # Set when the interior-point method used a generalized second derivative.
    surrogate_hessian: bool = False


@dataclass(frozen=True)
class Membership:
    inside: bool
    margin: float


def mean_loss(loss: LossFunction, u: np.ndarray) -> float:
    # np.sum is pairwise, so the result does not depend on thread layout.
    return float(np.sum(loss.values(u))) / u.size


def membership(inst: ProjectionInstance) -> Membership:
    """Report whether ``inst.x`` lies in Z, with margin ``lam - mean l(x)``."""
    try:
        margin = inst.lam - mean_loss(inst.loss, inst.x)
    except LossOverflowError:
        return Membership(False, -math.inf)
    return Membership(margin >= -BOUNDARY_TOL, margin)


def kkt_certificate(inst: ProjectionInstance, u: np.ndarray, rho: float) -> KktCertificate:
    """Evaluate stationarity, feasibility and complementary slackness at ``(u, rho)``."""
    u = np.asarray(u, dtype=float)
    lv, d1 = inst.loss.derivs01(u)
    m = inst.m
    gap = float(np.sum(lv)) / m - inst.lam
    stat = float(np.max(np.abs(u - inst.x + (rho / m) * d1)))
    return KktCertificate(stat, max(gap, 0.0), abs(rho * gap))


def inside_result(inst: ProjectionInstance, solver: Solver) -> ProjectionResult:
    """Result for a point already in Z: u = x and rho = 0."""
    u = inst.x.copy()
    cert = kkt_certificate(inst, u, 0.0)
    return ProjectionResult(u, 0.0, cert.worst, IterationCounts(), solver, inside=True)


def finish(inst: ProjectionInstance, u, rho, counts, solver, trace, **kw) -> ProjectionResult:
    cert = kkt_certificate(inst, u, rho)
    return ProjectionResult(u, float(rho), cert.worst, counts, solver, trace, **kw)


def active_mask(inst: ProjectionInstance) -> Optional[np.ndarray]:
    """Coordinates that can move for the polynomial loss, or None for all of them.

    With a flat region, a coordinate with l'(x_i) = 0 is a fixed point of
    every solver here (u_i = x_i for every rho), so solvers work on the rest.
    """
    if isinstance(inst.loss, PolynomialLoss):
        mask = inst.x > inst.loss.flat_threshold
        if mask.all():
            return None
        return mask
    return None


def scatter(inst: ProjectionInstance, mask: Optional[np.ndarray], u_act: np.ndarray) -> np.ndarray:
    if mask is None:
        return u_act
    u = inst.x.copy()
    u[mask] = u_act
    return u


# c l'(hi) above this multiple of 1 + |x| switches to the closed-form start.
FAR_START_RATIO = 1e6


class GKernel:
    """Workspace for repeated solves of u - x + c l'(u) = 0 at fixed x.

    Each scalar equation is strictly increasing with slope >= 1, so its root
    lies in [hi - c l'(hi), hi] with hi = min(x, loss.arg_ceiling); the cap
    keeps l'(hi) finite and is an upper end as long as c l'(hi) >= x - hi.
    When l' is convex, Newton steps are capped at hi and never fall below
    the root once at or above it; otherwise steps leaving the bracket are
    replaced by the midpoint between the iterate and the end they crossed.

    After :meth:`solve`, the arrays ``l``, ``d1`` and ``d2`` hold
    ``loss.derivs(u)`` at the returned ``u`` until the next call.  They are
    preallocated because page faults from fresh m-sized temporaries dominate
    the cost of these elementwise kernels.
    """

    def __init__(self, x: np.ndarray, loss: LossFunction):
        self.x = x
        self.loss = loss
        self.hi = np.minimum(x, loss.arg_ceiling) if x.max() > loss.arg_ceiling else x
        self.lx = loss.derivs12(self.hi)[0]
        # u - x cannot be resolved below the rounding level of x.
        self.scale = max(1.0, float(np.max(np.abs(x))))
        self.l = np.empty_like(x)
        self.d1 = np.empty_like(x)
        self.d2 = np.empty_like(x)
        self.g = np.empty_like(x)
        self.tmp = np.empty_like(x)
        self.lo = np.empty_like(x)
        self.worst = np.inf

    def solve(
        self,
        c: float,
        u0: Optional[np.ndarray] = None,
        tol: float = 1e-12,
        max_iter: int = 100,
        polish: bool = True,
    ) -> Tuple[np.ndarray, int]:
        """Return ``(u, newton_iterations)``; ``u`` is a new array.

        With ``polish`` one extra Newton step is taken after the tolerance is
        met.  The local rate is quadratic, so this drives u to rounding level,
        which matters because errors in u accumulate over m terms in sum l(u).
        """
        x, hi, loss, g, tmp, lo = self.x, self.hi, self.loss, self.g, self.tmp, self.lo
        guard = not loss.derivative_convex
        if guard or u0 is None:
            with np.errstate(over="ignore"):
                np.multiply(self.lx, -c, out=lo)
            lo += hi
        if u0 is None:
            u = hi.copy()
            # Newton from hi moves about 1/beta per step while c l'(u) dwarfs x - u;
            # use the closed-form root where the loss has one.
            with np.errstate(over="ignore"):
                far = c * self.lx > FAR_START_RATIO * (1.0 + np.abs(x))
            if far.any():
                guess = loss.g_root(x[far], c)
                if guess is not None:
                    u[far] = np.minimum(np.maximum(guess, lo[far]), hi[far])
        else:
            u = np.minimum(u0, hi)
            if guard:
                np.maximum(u, lo, out=u)
        tol = tol * self.scale
        polished = not polish
        for it in range(max_iter + 1):
            loss.derivs_into(u, self.l, self.d1, self.d2)
            np.subtract(u, x, out=g)
            np.multiply(self.d1, c, out=tmp)
            g += tmp
            worst = max(float(g.max()), -float(g.min()))
            self.worst = worst
            if worst <= tol:
                if polished or worst == 0.0 or it == max_iter:
                    return u, it
                polished = True
            elif it == max_iter:
                break
            np.multiply(self.d2, c, out=tmp)
            tmp += 1.0
            g /= tmp
            if guard:
                cand = u - g
                low = cand < lo
                high = cand > hi
                if low.any():
                    cand[low] = 0.5 * (u[low] + lo[low])
                if high.any():
                    cand[high] = 0.5 * (u[high] + hi[high])
                u = cand
            else:
                # With l' convex, Newton from at or above the root decreases
                # monotonically to it; a start below overshoots once, and the
                # cap at hi keeps that step inside the bracket.
                u -= g
                np.minimum(u, hi, out=u)
        idx = int(np.argmax(np.abs(g)))
        raise MaxIterationsError(
            f"coordinate {idx} of the G-subproblem did not converge (|G|={worst:.3e})", index=idx
        )


def solve_g_subproblem(
    x,
    rho: float,
    loss: LossFunction,
    u0=None,
    tol: float = 1e-12,
    max_iter: int = 100,
    m: Optional[int] = None,
) -> np.ndarray:
    """Return u(rho) solving u_i - x_i + (rho/m) l'(u_i) = 0 for every i.

    ``m`` defaults to ``len(x)``; pass the full dimension when ``x`` is a
    subset of coordinates.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    m = x.size if m is None else m
    u0 = None if u0 is None else np.asarray(u0, dtype=float).reshape(-1)
    return GKernel(x, loss).solve(rho / m, u0, tol, max_iter)[0]


def h_value_and_element(x, rho: float, loss: LossFunction, u, lam: float, m: Optional[int] = None):
    """Return (H, h): H = sum l(u) - m lam and the element h of its generalized derivative."""
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    m = x.size if m is None else m
    lv, d1, d2 = loss.derivs(u)
    return _h_pair(lv, d1, d2, rho, m, lam)


def _h_pair(lv, d1, d2, rho, m, lam):
    H = float(np.sum(lv)) - m * lam
    denom = m + rho * d2
    h = -float(np.sum(d1 * d1 / denom))
    if h == 0.0:
        raise DegenerateDerivativeError("all l'(u_i) vanish; x should have been inside Z")
    return H, h


def complementarity_scale(rho: float, m: int) -> float:
    """Factor turning |H| into the complementarity residual bound."""
    return max(1.0, rho) / m


__all__ = [
    "BOUNDARY_TOL",
    "IterationCounts",
    "KktCertificate",
    "Membership",
    "NewtonTrace",
    "ProjectionInstance",
    "ProjectionResult",
    "Solver",
    "TraceRecord",
    "h_value_and_element",
    "kkt_certificate",
    "membership",
    "solve_g_subproblem",
]

