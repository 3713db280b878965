"""ADMM for mean-UBSR portfolio selection over the simplex.

The SAA problem

    min (1 - alpha) t - alpha mu^T w
    s.t. w in simplex, mu^T w >= R0, mean l(-R w - t) <= lam

is split with z = -R w - t 1 (z in Z) and a slack s >= 0 for the return
floor.  Each iteration updates (w, t), then (z, s), then the multipliers.
The (w, t) step minimizes t exactly and leaves a quadratic program over the
simplex, solved by accelerated projected gradient with adaptive restart.
"""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, LossOverflowError
from .estimate import estimate_ubsr_batch
from .loss import LossFunction
from .projection import ProjectionInstance, ProjectionResult
from .projection.bisection import project_bisection
from .projection.dirssn import project_dirssn
from .projection.ipm import project_ipm
from .projection.sepssn import project_sepssn

# Residual-balancing trigger for the penalty update.
BALANCE_RATIO = 10.0
# Floor on Lipschitz constants; identical asset columns give a zero Hessian.
L_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# Simplex projection and accelerated projected gradient


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto {w >= 0, sum w = 1} by sorting."""
    v = np.asarray(v, dtype=float).reshape(-1)
    n = v.size
    if n == 0:
        raise ValueError("empty vector")
    if not np.isfinite(v).all():
        raise ValueError("v must be finite")
    # Shifting by max(v) leaves the projection unchanged and keeps k = 0 valid under rounding.
    v = v - v.max()
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ks = np.arange(1, n + 1)
    k = int(np.nonzero(u - css / ks > 0)[0][-1])
    theta = css[k] / (k + 1)
    return np.maximum(v - theta, 0.0)


@dataclass
class ApgResult:
    x: np.ndarray
    iterations: int
    converged: bool
    pg_norm: float


def apg_simplex(grad: Callable, x0, L: float, tol: float, max_iter: int, scale: float = 1.0) -> ApgResult:
    """Accelerated projected gradient over the simplex with adaptive restart.

    ``grad`` returns the gradient of a smooth convex function with Lipschitz
    constant ``L``.  Stops when ``scale * L * ||y - P(y - grad(y)/L)||`` is at
    most ``tol`` (the gradient mapping at the extrapolated point, measured in
    units of ``scale`` times the function).  The momentum is reset whenever
    the step turns against the previous direction.
    """
    x = project_simplex(x0)
    y = x.copy()
    theta = 1.0
    pg = math.inf
    for k in range(1, max_iter + 1):
        x_new = project_simplex(y - grad(y) / L)
        diff = y - x_new
        pg = scale * L * float(np.linalg.norm(diff))
        if pg <= tol:
            return ApgResult(x_new, k, True, pg)
        theta_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * theta * theta))
        step = x_new - x
        if float(np.dot(diff, step)) > 0.0:
            theta_new = 1.0
            y = x_new.copy()
        else:
            y = x_new + ((theta - 1.0) / theta_new) * step
        x, theta = x_new, theta_new
    return ApgResult(x, max_iter, False, pg)


# ---------------------------------------------------------------------------
# Problem data


def _risk_violation(loss: LossFunction, z: np.ndarray, lam: float) -> float:
    """max(mean l(z) - lam, 0), or inf when l(z) overflows."""
    try:
        return max(float(np.mean(loss.values(z))) - lam, 0.0)
    except LossOverflowError:
        return math.inf


@dataclass
class SaaProblem:
    """Sample problem: returns R (m x n), risk level, trade-off and return floor.

    ``R0=None`` selects the expected return of the equal-weight portfolio.
    """

    R: np.ndarray
    lam: float
    alpha: float
    loss: LossFunction
    R0: Optional[float] = None

    def __post_init__(self):
        self.R = np.ascontiguousarray(np.atleast_2d(np.asarray(self.R, dtype=float)))
        if self.R.ndim != 2 or self.R.size == 0:
            raise ValueError("R must be a nonempty m x n matrix")
        if not np.isfinite(self.R).all():
            raise ValueError("R must be finite")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError("alpha must lie in [0, 1)")
        if not self.lam > self.loss.infimum:
            raise ValueError("lam must exceed inf l")
        self.mu = self.R.mean(axis=0)
        ew = float(self.mu.mean())
        if self.R0 is None:
            self.R0 = ew
        self.R0 = float(self.R0)
        if ew < self.R0:
            warnings.warn(
                f"equal-weight expected return {ew:.6g} is below R0={self.R0:.6g}; "
                "the problem may be infeasible",
                stacklevel=2,
            )

    @property
    def m(self) -> int:
        return self.R.shape[0]

    @property
    def n(self) -> int:
        return self.R.shape[1]

    def objective(self, w, t) -> float:
        return (1.0 - self.alpha) * t - self.alpha * float(self.mu @ w)

    def violation(self, w, t) -> float:
        """Largest violation among w >= 0, sum w = 1, mu^T w >= R0 and the UBSR constraint."""
        w = np.asarray(w, dtype=float)
        neg = float(np.max(np.maximum(-w, 0.0)))
        budget = abs(float(w.sum()) - 1.0)
        floor = max(self.R0 - float(self.mu @ w), 0.0)
        risk = _risk_violation(self.loss, -(self.R @ w) - t, self.lam)
        return max(neg, budget, floor, risk)


@dataclass
class AdmmState:
    w: np.ndarray
    t: float
    z: np.ndarray
    s: float
    nu1: np.ndarray
    nu2: float
    sigma: float
    rho: float = 0.0  # multiplier of the last z-projection, reused as a warm start
    residuals: list = field(default_factory=list)  # (primal, dual) per iteration

    @classmethod
    def initial(cls, problem: SaaProblem, sigma0: float) -> "AdmmState":
        n, m = problem.n, problem.m
        w = np.full(n, 1.0 / n)
        return cls(w=w, t=0.0, z=-(problem.R @ w), s=0.0, nu1=np.zeros(m), nu2=0.0, sigma=float(sigma0))


@dataclass(frozen=True)
class AdmmOptions:
    sigma0: float = 1e-6
    tau: float = 1.7
    tol_abs: float = 1e-6
    tol_rel: float = 1e-6
    max_iter: int = 1000
    inner_tol: float = 1e-8
    inner_max_iter: int = 500
    projector: str = "sepssn"
    adapt: bool = True
    floor_scale: Optional[float] = None

    def __post_init__(self):
        for name in ("sigma0", "tol_abs", "tol_rel", "inner_tol"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not self.tau > 1:
            raise ConfigError("tau must exceed 1")
        if self.max_iter < 1 or self.inner_max_iter < 1:
            raise ConfigError("iteration caps must be positive")
        if self.floor_scale is not None and not self.floor_scale > 0:
            raise ConfigError("floor_scale must be positive")
        if self.projector not in PROJECTORS:
            raise ConfigError(f"unknown projector {self.projector!r}")


@dataclass
class SolveReport:
    objective: float
    violation: float
    iterations: int
    wall_time: float
    converged: bool
    w: np.ndarray
    t: float
    primal_residual: float
    dual_residual: float
    inexact_inner: int = 0  # (w, t) solves that hit the inner iteration cap


# ---------------------------------------------------------------------------
# Projection handles


def _warm_sepssn(inst, rho):
    return project_sepssn(inst, rho0=rho) if rho > 0 else project_sepssn(inst)


def _warm_bisection(inst, rho):
    return project_bisection(inst, rho_upper0=rho) if rho > 0 else project_bisection(inst)


PROJECTORS: dict = {
    "sepssn": _warm_sepssn,
    "dirssn": lambda inst, rho: project_dirssn(inst),
    "bisect": _warm_bisection,
    "ipm": lambda inst, rho: project_ipm(inst),
}


def project_z(c1, lam, loss, projector="sepssn", rho_prev=0.0) -> ProjectionResult:
    return PROJECTORS[projector](ProjectionInstance(c1, lam, loss), rho_prev)


# ---------------------------------------------------------------------------
# Augmented Lagrangian pieces


def lagrangian(problem: SaaProblem, state: AdmmState, w, t, cs: float = 1.0) -> float:
    """L_sigma at (w, t) with z, s and the multipliers taken from ``state``.

    ``cs`` scales the return-floor row: cs (mu^T w - R0) - s = 0.
    """
    r1 = problem.R @ w + t + state.z
    r2 = cs * (float(problem.mu @ w) - problem.R0) - state.s
    sig = state.sigma
    return (
        problem.objective(w, t)
        + float(state.nu1 @ r1)
        + state.nu2 * r2
        + 0.5 * sig * (float(r1 @ r1) + r2 * r2)
    )


def lagrangian_grad(problem: SaaProblem, state: AdmmState, w, t, cs: float = 1.0):
    """Gradient of :func:`lagrangian` with respect to (w, t)."""
    sig = state.sigma
    r1 = problem.R @ w + t + state.z
    r2 = cs * (float(problem.mu @ w) - problem.R0) - state.s
    v = state.nu1 + sig * r1
    gw = -problem.alpha * problem.mu + problem.R.T @ v + cs * (state.nu2 + sig * r2) * problem.mu
    gt = (1.0 - problem.alpha) + float(v.sum())
    return gw, gt


class _WtSolver:
    """(w, t)-update with t minimized in closed form.

    For fixed w the optimal t is ``-(1-alpha)/(sigma m) - mean(z + nu1/sigma) - mu^T w``.
    Substituting it leaves, after division by sigma,

        f(w) = -mu^T w / sigma + 0.5 ||Rc w + bc||^2 + 0.5 (cs mc^T w - c2)^2

    with Rc the column-centered returns, mc = mu - mean(mu), bc the centered
    part of z + nu1/sigma, cs the floor row scale and
    c2 = s - cs (mean(mu) - R0) - nu2/sigma (on the simplex mu^T w equals
    mc^T w + mean(mu)).  Its Hessian Q = Rc^T Rc + cs^2 mc mc^T does not
    depend on the iterate.
    """

    def __init__(self, problem: SaaProblem, cs: float = 1.0):
        self.p = problem
        R, mu = problem.R, problem.mu
        self.cs = cs
        self.mc = mu - mu.mean()
        Rc = R - mu
        self.Q = Rc.T @ Rc + cs * cs * np.outer(self.mc, self.mc)
        self.L = max(float(np.linalg.eigvalsh(self.Q)[-1]), L_FLOOR)

    def solve(self, state: AdmmState, tol: float, max_iter: int):
        p, sig = self.p, state.sigma
        a = state.z + state.nu1 / sig
        bc = a - a.mean()
        cs = self.cs
        c2 = state.s - cs * (float(p.mu.mean()) - p.R0) - state.nu2 / sig
        q = p.R.T @ bc - p.mu / sig - cs * c2 * self.mc
        Q = self.Q

        def grad(w):
            return Q @ w + q

        if p.n == 1:
            res = ApgResult(np.ones(1), 0, True, 0.0)
        else:
            res = apg_simplex(grad, state.w, self.L, tol, max_iter, scale=sig)
        w = res.x
        t = -(1.0 - p.alpha) / (sig * p.m) - float(a.mean()) - float(p.mu @ w)
        return w, t, res


def solve_wt_subproblem(
    state: AdmmState, problem: SaaProblem, tol: float = 1e-8, max_iter: int = 500, cs: float = 1.0
):
    """Minimize L_sigma over w in the simplex and t free; returns (w, t, converged)."""
    w, t, res = _WtSolver(problem, cs).solve(state, tol, max_iter)
    return w, t, res.converged


def update_z_s(state: AdmmState, problem: SaaProblem, w, t, projector="sepssn", cs: float = 1.0):
    """Return (z, s, rho): z = P_Z(c1) and the clamped slack."""
    sig = state.sigma
    c1 = -state.nu1 / sig - problem.R @ w - t
    res = project_z(c1, problem.lam, problem.loss, projector, state.rho)
    s = max(cs * (float(problem.mu @ w) - problem.R0) + state.nu2 / sig, 0.0)
    return res.u, s, res.rho


def dual_ascent(state: AdmmState, problem: SaaProblem, w, t, z, s, sigma, cs: float = 1.0):
    nu1 = state.nu1 + sigma * (problem.R @ w + t + z)
    nu2 = state.nu2 + sigma * (cs * (float(problem.mu @ w) - problem.R0) - s)
    return nu1, nu2


def adapt_sigma(sigma: float, primal: float, dual: float, tau: float) -> float:
    """Residual balancing: scale sigma by tau toward the larger residual."""
    if primal > BALANCE_RATIO * dual:
        return sigma * tau
    if dual > BALANCE_RATIO * primal:
        return sigma / tau
    return sigma


# ---------------------------------------------------------------------------
# Main loop


def floor_scale(problem: SaaProblem) -> float:
    """Row scale for the return floor, at least 1.

    Chosen so the floor's gradient along the simplex has the size of
    ``||Rc||_2`` (centered returns).  A floor nearly parallel to the budget
    constraint otherwise makes ADMM crawl.
    """
    mu_c = problem.mu - problem.mu.mean()
    a = float(np.linalg.norm(mu_c))
    if a == 0.0:
        return 1.0
    return max(1.0, float(np.linalg.norm(problem.R - problem.mu, 2)) / a)


def _small(residual: float, scale: float, opts: AdmmOptions) -> bool:
    """Both the absolute and the relative test must pass; scales below 1 count as 1."""
    return residual <= opts.tol_abs and residual <= opts.tol_rel * max(scale, 1.0)


def solve(problem: SaaProblem, opts: AdmmOptions = AdmmOptions(), state: Optional[AdmmState] = None):
    """Run ADMM until the primal and dual residuals meet the tolerances.

    The return floor is carried as ``cs (mu^T w - R0) - s = 0`` with the row
    scale ``cs`` from :func:`floor_scale` (or ``opts.floor_scale``); s and
    nu2 are in those scaled units.  Residuals are 2-norms: primal of
    ``(R w + t 1 + z, cs (mu^T w - R0) - s)``, dual
    ``sigma * ||(z - z_prev, s - s_prev)||``.  Each must be at most
    ``tol_abs`` and at most ``tol_rel`` times its scale, floored at 1:
    ``max(||R w||, ||t 1||, ||z||, cs |mu^T w|, s, cs |R0|)`` for the primal
    and ``||(nu1, nu2)||`` for the dual.

    Returns
    -------
    (SolveReport, AdmmState)
    """
    t0 = time.perf_counter()
    st = state if state is not None else AdmmState.initial(problem, opts.sigma0)
    cs = floor_scale(problem) if opts.floor_scale is None else opts.floor_scale
    wt = _WtSolver(problem, cs)
    R, mu, R0 = problem.R, problem.mu, problem.R0
    sqrt_m = math.sqrt(problem.m)
    converged = False
    inexact = 0
    primal = dual = math.inf
    k = 0
    for k in range(1, opts.max_iter + 1):
        w, t, ares = wt.solve(st, opts.inner_tol, opts.inner_max_iter)
        inexact += not ares.converged
        Rw = R @ w
        sig = st.sigma
        c1 = -st.nu1 / sig - Rw - t
        pres = project_z(c1, problem.lam, problem.loss, opts.projector, st.rho)
        z = pres.u
        muw = float(mu @ w)
        s = max(cs * (muw - R0) + st.nu2 / sig, 0.0)

        r1 = Rw + t + z
        r2 = cs * (muw - R0) - s
        st.nu1 = st.nu1 + sig * r1
        st.nu2 = st.nu2 + sig * r2
        primal = math.sqrt(float(r1 @ r1) + r2 * r2)
        dz = z - st.z
        dual = sig * math.sqrt(float(dz @ dz) + (s - st.s) ** 2)
        st.w, st.t, st.z, st.s, st.rho = w, t, z, s, pres.rho
        st.residuals.append((primal, dual))

        scale_p = max(float(np.linalg.norm(Rw)), abs(t) * sqrt_m, float(np.linalg.norm(z)), cs * abs(muw), s, cs * abs(R0))
        scale_d = math.sqrt(float(st.nu1 @ st.nu1) + st.nu2 * st.nu2)
        if _small(primal, scale_p, opts) and _small(dual, scale_d, opts):
            converged = True
            break
        if opts.adapt:
            st.sigma = adapt_sigma(sig, primal, dual, opts.tau)
    report = SolveReport(
        objective=problem.objective(st.w, st.t),
        violation=problem.violation(st.w, st.t),
        iterations=k,
        wall_time=time.perf_counter() - t0,
        converged=converged,
        w=st.w.copy(),
        t=st.t,
        primal_residual=primal,
        dual_residual=dual,
        inexact_inner=inexact,
    )
    return report, st


# ---------------------------------------------------------------------------
# Utility maximization under a UBSR cap


class Utility:
    """Concave nondecreasing utility u with a bound on |u''| over an interval."""

    def value(self, x):
        raise NotImplementedError

    def deriv(self, x):
        raise NotImplementedError

    def curvature_bound(self, lo: float, hi: float) -> float:
        raise NotImplementedError


@dataclass(frozen=True)
class LinearUtility(Utility):
    def value(self, x):
        return np.asarray(x, dtype=float).copy()

    def deriv(self, x):
        return np.ones_like(np.asarray(x, dtype=float))

    def curvature_bound(self, lo, hi):
        return 0.0


@dataclass(frozen=True)
class CaraUtility(Utility):
    """u(x) = (1 - exp(-gamma x)) / gamma."""

    gamma: float = 1.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")

    def value(self, x):
        return -np.expm1(-self.gamma * np.asarray(x, dtype=float)) / self.gamma

    def deriv(self, x):
        return np.exp(-self.gamma * np.asarray(x, dtype=float))

    def curvature_bound(self, lo, hi):
        return self.gamma * math.exp(-self.gamma * lo)


def utility_from_dict(d: dict) -> Utility:
    kind = d.get("kind")
    if kind == "linear" and set(d) == {"kind"}:
        return LinearUtility()
    if kind == "cara" and set(d) <= {"kind", "gamma"}:
        return CaraUtility(float(d.get("gamma", 1.0)))
    raise ConfigError(f"bad utility specification {d!r}")


@dataclass
class UtilityProblem:
    """max sum u(R w) over the simplex subject to SR_lam(R w) <= b."""

    R: np.ndarray
    b: float
    lam: float
    loss: LossFunction
    utility: Utility = field(default_factory=LinearUtility)

    def __post_init__(self):
        self.R = np.ascontiguousarray(np.atleast_2d(np.asarray(self.R, dtype=float)))
        if not np.isfinite(self.R).all():
            raise ValueError("R must be finite")
        if not self.lam > self.loss.infimum:
            raise ValueError("lam must exceed inf l")

    @property
    def m(self):
        return self.R.shape[0]

    @property
    def n(self):
        return self.R.shape[1]

    def objective(self, w) -> float:
        return -float(np.sum(self.utility.value(self.R @ w)))

    def violation(self, w) -> float:
        w = np.asarray(w, dtype=float)
        neg = float(np.max(np.maximum(-w, 0.0)))
        budget = abs(float(w.sum()) - 1.0)
        risk = _risk_violation(self.loss, -(self.R @ w) - self.b, self.lam)
        return max(neg, budget, risk)


def solve_utility_constrained(problem: UtilityProblem, opts: AdmmOptions = AdmmOptions(sigma0=1.0)):
    """ADMM with z = -R w - b 1; returns (SolveReport, final (w, z, nu, sigma)).

    The report's ``t`` holds the cap ``b``.
    """
    t0 = time.perf_counter()
    R, b, n, m = problem.R, problem.b, problem.n, problem.m
    w = np.full(n, 1.0 / n)
    z = -(R @ w) - b
    nu = np.zeros(m)
    sigma = opts.sigma0
    rho = 0.0
    spec_norm2 = float(np.linalg.norm(R, 2)) ** 2
    # R w over the simplex stays within [min R, max R].
    curv = problem.utility.curvature_bound(float(R.min()), float(R.max()))
    converged = False
    inexact = 0
    primal = dual = math.inf
    k = 0
    for k in range(1, opts.max_iter + 1):
        sig = sigma
        shift = z + b + nu / sig

        def grad(v):
            Rv = R @ v
            return R.T @ (-problem.utility.deriv(Rv) + sig * (Rv + shift))

        L = max((sig + curv) * spec_norm2, L_FLOOR)
        if n == 1:
            w = np.ones(1)
        else:
            res = apg_simplex(grad, w, L, opts.inner_tol, opts.inner_max_iter)
            inexact += not res.converged
            w = res.x
        Rw = R @ w
        pres = project_z(-nu / sig - Rw - b, problem.lam, problem.loss, opts.projector, rho)
        z_new, rho = pres.u, pres.rho
        r = Rw + z_new + b
        nu = nu + sig * r
        primal = float(np.linalg.norm(r))
        dual = sig * float(np.linalg.norm(R.T @ (z_new - z)))
        z = z_new
        scale_p = max(float(np.linalg.norm(Rw)), float(np.linalg.norm(z)), abs(b) * math.sqrt(m))
        if _small(primal, scale_p, opts) and _small(dual, float(np.linalg.norm(nu)), opts):
            converged = True
            break
        if opts.adapt:
            sigma = adapt_sigma(sig, primal, dual, opts.tau)
    report = SolveReport(
        objective=problem.objective(w),
        violation=problem.violation(w),
        iterations=k,
        wall_time=time.perf_counter() - t0,
        converged=converged,
        w=w.copy(),
        t=float(b),
        primal_residual=primal,
        dual_residual=dual,
        inexact_inner=inexact,
    )
    return report, (w, z, nu, sigma)


# ---------------------------------------------------------------------------
# Brute-force reference for two assets


@dataclass
class GridOptimum:
    objective: float
    w: np.ndarray
    feasible_points: int


def _grid_weights(step: float) -> np.ndarray:
    k = int(round(1.0 / step))
    if k < 1 or not math.isclose(k * step, 1.0, rel_tol=1e-9):
        raise ValueError("step must divide 1")
    g = np.arange(k + 1) / k
    return np.stack([g, 1.0 - g], axis=1)


def grid_oracle(problem, step: float = 1e-4, chunk: int = 2000) -> GridOptimum:
    """Minimize over w = (g, 1 - g), g on a grid of spacing ``step``.

    Works for :class:`SaaProblem` (t from the UBSR estimator, return floor
    enforced) and :class:`UtilityProblem` (UBSR cap enforced).  Only n = 2.
    """
    if problem.n != 2:
        raise ValueError("the grid oracle handles n = 2 only")
    W = _grid_weights(step)
    t = np.empty(W.shape[0])
    for a in range(0, W.shape[0], chunk):
        t[a : a + chunk] = estimate_ubsr_batch(W[a : a + chunk] @ problem.R.T, problem.lam, problem.loss)
    if isinstance(problem, SaaProblem):
        obj = (1.0 - problem.alpha) * t - problem.alpha * (W @ problem.mu)
        ok = W @ problem.mu >= problem.R0
    else:
        obj = -np.sum(problem.utility.value(W @ problem.R.T), axis=1)
        ok = t <= problem.b
    if not ok.any():
        raise ValueError("no feasible grid point")
    idx = np.flatnonzero(ok)
    best = idx[np.argmin(obj[idx])]
    return GridOptimum(float(obj[best]), W[best].copy(), int(ok.sum()))
