"""Sample estimator of utility-based shortfall risk.

For samples x_1..x_m of a position X, the estimate is the root t of
phi(t) = mean(l(-x - t)) - lam.  phi is convex and nonincreasing, so a
bracketed Newton iteration converges from any bracket.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LossOverflowError, MaxIterationsError, NoSignChangeError
from .loss import LossFunction

MAX_DOUBLINGS = 200
# Relative Newton step below which t counts as converged.
STEP_TOL = 1e-13


@dataclass(frozen=True)
class UbsrEstimate:
    t: float
    residual: float
    iterations: int


def _phi(loss, y, t, lam):
    """Return (phi(t), phi'(t)) for losses y = -x, or (+inf, nan) on overflow."""
    try:
        lv, d1 = loss.derivs01(y - t)
    except LossOverflowError:
        return np.inf, np.nan
    return float(np.mean(lv)) - lam, -float(np.mean(d1))


def estimate_ubsr(samples, lam: float, loss: LossFunction, tol: float = 1e-10, max_iter: int = 200) -> UbsrEstimate:
    """Estimate SR_lam from samples of the position.

    Parameters
    ----------
    samples : array_like, shape (m,)
        Realizations of the position X (gains positive).
    lam : float
        Risk level; must exceed ``inf l``.
    loss : LossFunction
    tol : float
        Target for ``|mean(l(-x - t)) - lam|``.  Iteration also continues
        until the Newton correction is below ``STEP_TOL * max(|t|, 1)``.

    Returns
    -------
    UbsrEstimate
    """
    x = np.asarray(samples, dtype=float).reshape(-1)
    if x.size < 1:
        raise ValueError("need at least one sample")
    if not np.isfinite(x).all():
        raise ValueError("samples must be finite")
    if not lam > loss.infimum:
        raise NoSignChangeError(f"lam={lam} does not exceed inf l={loss.infimum}")
    y = -x
    lo, hi = _bracket(loss, y, lam)

    t = 0.5 * (lo + hi)
    f_t, df = _phi(loss, y, t, lam)
    widths = [hi - lo, hi - lo]
    for it in range(max_iter + 1):
        if abs(f_t) <= tol and _step_small(f_t, df, t):
            return UbsrEstimate(t, f_t, it)
        if f_t > 0:
            lo = t
        else:
            hi = t
        if hi - lo <= 4 * np.finfo(float).eps * max(abs(lo), abs(hi), 1.0):
            return UbsrEstimate(t, f_t, it)
        cand = t - f_t / df if np.isfinite(df) and df < 0 else np.nan
        # Bisect when Newton leaves the bracket or has not halved it in two steps.
        if not (lo < cand < hi) or hi - lo > 0.5 * widths[0]:
            cand = 0.5 * (lo + hi)
        widths = [widths[1], hi - lo]
        t = cand
        f_t, df = _phi(loss, y, t, lam)
    raise MaxIterationsError(f"UBSR root not found in {max_iter} iterations (residual {f_t:.3e})")


def _step_small(f, df, t) -> bool:
    # A small residual alone leaves t loose when phi is flat (small beta * lam).
    with np.errstate(divide="ignore", invalid="ignore"):
        return bool(np.all(np.abs(f) <= STEP_TOL * np.maximum(np.abs(t), 1.0) * np.abs(df)))


def _bracket(loss, y, lam):
    """Find lo < hi with phi(lo) > 0 >= phi(hi) by doubling the padding K."""
    K = 1.0
    for _ in range(MAX_DOUBLINGS):
        lo, hi = float(y.min()) - K, float(y.max()) + K
        if _phi(loss, y, lo, lam)[0] > 0 and _phi(loss, y, hi, lam)[0] <= 0:
            return lo, hi
        K *= 2.0
    raise NoSignChangeError("no sign change of the UBSR residual was found")


def estimate_ubsr_batch(positions, lam: float, loss: LossFunction, tol: float = 1e-10, max_iter: int = 200) -> np.ndarray:
    """Vectorized :func:`estimate_ubsr` over the rows of ``positions`` (shape (k, m))."""
    X = np.atleast_2d(np.asarray(positions, dtype=float))
    if not lam > loss.infimum:
        raise NoSignChangeError(f"lam={lam} does not exceed inf l={loss.infimum}")
    Y = -X
    k = Y.shape[0]

    ceiling = loss.arg_ceiling

    def phi(t):
        # Rows whose loss would overflow get phi = +inf, like the scalar version.
        A = Y - t[:, None]
        over = A.max(axis=1) > ceiling
        if over.any():
            np.minimum(A, ceiling, out=A)
        lv, d1 = loss.derivs01(A)
        f, df = lv.mean(axis=1) - lam, -d1.mean(axis=1)
        f[over], df[over] = np.inf, np.nan
        return f, df

    K = np.ones(k)
    ymin, ymax = Y.min(axis=1), Y.max(axis=1)
    for _ in range(MAX_DOUBLINGS):
        lo, hi = ymin - K, ymax + K
        f_lo, f_hi = phi(lo)[0], phi(hi)[0]
        bad = ~((f_lo > 0) & (f_hi <= 0))
        if not bad.any():
            break
        K = np.where(bad, 2.0 * K, K)
    else:
        raise NoSignChangeError("no sign change of the UBSR residual was found")

    t = 0.5 * (lo + hi)
    w_old = w_prev = hi - lo
    for _ in range(max_iter):
        f, df = phi(t)
        with np.errstate(divide="ignore", invalid="ignore"):
            done = (np.abs(f) <= tol) & (np.abs(f) <= STEP_TOL * np.maximum(np.abs(t), 1.0) * np.abs(df))
        if done.all():
            return t
        lo = np.where(f > 0, t, lo)
        hi = np.where(f > 0, hi, t)
        stuck = hi - lo <= 4 * np.finfo(float).eps * np.maximum(np.maximum(abs(lo), abs(hi)), 1.0)
        if (done | stuck).all():
            return t
        with np.errstate(divide="ignore", invalid="ignore"):
            cand = t - f / df
        width = hi - lo
        ok = (cand > lo) & (cand < hi) & (width <= 0.5 * w_old)
        cand = np.where(ok, cand, 0.5 * (lo + hi))
        w_old, w_prev = w_prev, width
        t = np.where(done, t, cand)
    raise MaxIterationsError("batched UBSR roots did not all converge")
