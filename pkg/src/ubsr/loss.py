"""Loss functions l used to define shortfall risk.

Two families ship: the exponential loss ``exp(beta * x)`` and the
piecewise polynomial loss ``max(x, 0)**eta / eta`` with ``eta >= 2``.
Every method accepts scalars or arrays and returns the same shape.

The public methods (``value``, ``deriv``, ``second_deriv_element``) guard
against exponent overflow.  Solvers call :meth:`LossFunction.derivs`,
which returns ``(l, l', l'')`` from a single pass and is the hot path.
"""
from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Mapping, Tuple

import numpy as np

from .errors import LossOverflowError

# exp(700) is about 1e304; anything larger overflows once multiplied by beta.
EXP_ARG_CEILING = 700.0


def _as_float(x):
    return np.asarray(x, dtype=float)


def _unwrap(x, out):
    """Return a Python float when the input was a scalar."""
    if np.ndim(x) == 0:
        return float(out)
    return out


def lambertw_exp(y) -> np.ndarray:
    """Principal-branch W(exp(y)) without forming exp(y).

    Solves w + log(w) = y by Newton from w = y - log(y) for y > 1, and from
    w = exp(y) / (1 + exp(y)) below that.  Newton on this concave equation
    is monotone after the first step and reaches rounding level quickly.
    """
    y = np.asarray(y, dtype=float)
    big = y > 1.0
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        ey = np.exp(np.minimum(y, 1.0))
        w = np.where(big, y - np.log(np.where(big, y, 2.0)), ey / (1.0 + ey))
        for _ in range(64):
            f = w + np.log(w) - y
            step = f * w / (w + 1.0)
            w_new = np.maximum(w - step, 0.5 * w)
            done = np.all(np.abs(w_new - w) <= 4 * np.finfo(float).eps * np.abs(w_new))
            w = w_new
            if done:
                break
    return w


class LossFunction(ABC):
    """Nondecreasing convex loss with a locally Lipschitz derivative."""

    #: sup{u : l'(u) = 0}; ``-inf`` when l' is strictly positive.
    flat_threshold: float
    #: inf_x l(x); a risk level must exceed this.
    infimum: float = 0.0
    #: Whether l' is convex, which keeps scalar Newton on u + c l'(u) = x monotone.
    derivative_convex: bool = True
    #: Largest argument at which l, l' and d2 are still finite.
    arg_ceiling: float = math.inf

    @abstractmethod
    def derivs(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return ``(l(x), l'(x), d2(x))`` for a float array in one pass."""

    @abstractmethod
    def derivs01(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Return ``(l(x), l'(x))``."""

    @abstractmethod
    def derivs_into(self, x: np.ndarray, l: np.ndarray, d1: np.ndarray, d2: np.ndarray) -> None:
        """Write l(x), l'(x), d2(x) into preallocated arrays (no temporaries of size m)."""

    @abstractmethod
    def derivs12(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Return ``(l'(x), d2(x))``."""

    @abstractmethod
    def values(self, x: np.ndarray) -> np.ndarray:
        """Return l(x) for a float array."""

    @abstractmethod
    def third_deriv_element(self, x):
        """Return one element of the generalized derivative of l''."""

    @abstractmethod
    def to_dict(self) -> dict:
        """Serializable description, inverse of :func:`loss_from_dict`."""

    def check_range(self, x: np.ndarray) -> None:
        """Raise :class:`LossOverflowError` if l(x) is not representable."""

    def g_root(self, x: np.ndarray, c: float):
        """Closed-form root of u - x + c l'(u) = 0 if cheap, else None."""
        return None

    def value(self, x):
        xa = _as_float(x)
        self.check_range(xa)
        return _unwrap(x, self.values(xa))

    def deriv(self, x):
        xa = _as_float(x)
        self.check_range(xa)
        return _unwrap(x, self.derivs01(xa)[1])

    def second_deriv_element(self, x):
        xa = _as_float(x)
        self.check_range(xa)
        return _unwrap(x, self.derivs(xa)[2])

    def __call__(self, x):
        return self.value(x)


@dataclass(frozen=True)
class ExponentialLoss(LossFunction):
    """l(x) = exp(beta * x)."""

    beta: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.beta) and self.beta > 0):
            raise ValueError(f"beta must be positive and finite, got {self.beta}")

    @property
    def flat_threshold(self) -> float:  # type: ignore[override]
        return -math.inf

    @property
    def arg_ceiling(self) -> float:  # type: ignore[override]
        return EXP_ARG_CEILING / self.beta

    def check_range(self, x):
        if not x.size:
            return
        top = float(np.max(x))
        # Written as a negated comparison so that NaN also raises.
        if not self.beta * top <= EXP_ARG_CEILING:
            raise LossOverflowError(
                f"exp({self.beta:g} * {top:.6g}) exceeds the representable range"
            )

    def values(self, x):
        self.check_range(x)
        return np.exp(self.beta * x)

    def g_root(self, x, c):
        # u = x - W(c beta^2 exp(beta x)) / beta, with W evaluated from log of its argument.
        y = math.log(c * self.beta**2) + self.beta * np.asarray(x, dtype=float)
        return x - lambertw_exp(y) / self.beta

    def derivs01(self, x):
        e = self.values(x)
        return e, self.beta * e

    def derivs(self, x):
        e = self.values(x)
        d1 = self.beta * e
        return e, d1, self.beta * d1

    def derivs_into(self, x, l, d1, d2):
        self.check_range(x)
        np.multiply(x, self.beta, out=l)
        np.exp(l, out=l)
        np.multiply(l, self.beta, out=d1)
        np.multiply(d1, self.beta, out=d2)

    def derivs12(self, x):
        self.check_range(x)
        d1 = self.beta * x
        np.exp(d1, out=d1)
        d1 *= self.beta
        return d1, self.beta * d1

    def third_deriv_element(self, x):
        xa = _as_float(x)
        self.check_range(xa)
        return _unwrap(x, self.beta**3 * np.exp(self.beta * xa))

    def to_dict(self):
        return {"kind": "exp", "beta": self.beta}

    def __str__(self):
        return f"exp(beta={self.beta:g})"


@dataclass(frozen=True)
class PolynomialLoss(LossFunction):
    """l(x) = max(x, 0)**eta / eta with eta >= 2."""

    eta: float = 2.0

    def __post_init__(self):
        if not (math.isfinite(self.eta) and self.eta >= 2):
            raise ValueError(f"eta must be a finite real >= 2, got {self.eta}")

    @property
    def flat_threshold(self) -> float:  # type: ignore[override]
        return 0.0

    def check_range(self, x):
        if x.size and not np.isfinite(x).all():
            raise LossOverflowError("non-finite argument passed to the loss")

    def _pos(self, x):
        return np.maximum(x, 0.0)

    def values(self, x):
        p = self._pos(x)
        if self.eta == 2:
            return 0.5 * p * p
        if self.eta == 3:
            return p * p * p / 3.0
        return p**self.eta / self.eta

    def derivs01(self, x):
        p = self._pos(x)
        if self.eta == 2:
            return 0.5 * p * p, p
        if self.eta == 3:
            d1 = p * p
            return d1 * p / 3.0, d1
        d1 = p ** (self.eta - 1.0)
        return d1 * p / self.eta, d1

    def derivs(self, x):
        p = self._pos(x)
        if self.eta == 2:
            # The element of [0, 1] selected at the kink is 0.
            return 0.5 * p * p, p, (p > 0).astype(float)
        if self.eta == 3:
            d1 = p * p
            return d1 * p / 3.0, d1, 2.0 * p
        d2 = (self.eta - 1.0) * p ** (self.eta - 2.0)
        d1 = p * d2 / (self.eta - 1.0)
        return d1 * p / self.eta, d1, d2

    def derivs_into(self, x, l, d1, d2):
        if self.eta == 2:
            np.maximum(x, 0.0, out=d1)
            np.multiply(d1, d1, out=l)
            l *= 0.5
            np.greater(d1, 0.0, out=d2, casting="unsafe")
        elif self.eta == 3:
            np.maximum(x, 0.0, out=d2)
            np.multiply(d2, d2, out=d1)
            np.multiply(d1, d2, out=l)
            l /= 3.0
            d2 *= 2.0
        else:
            np.maximum(x, 0.0, out=l)
            np.power(l, self.eta - 2.0, out=d2)
            np.multiply(l, d2, out=d1)
            l *= d1
            l /= self.eta
            d2 *= self.eta - 1.0

    def derivs12(self, x):
        p = self._pos(x)
        if self.eta == 2:
            return p, (p > 0).astype(float)
        if self.eta == 3:
            return p * p, 2.0 * p
        d2 = (self.eta - 1.0) * p ** (self.eta - 2.0)
        return p * d2 / (self.eta - 1.0), d2

    def third_deriv_element(self, x):
        xa = _as_float(x)
        p = np.maximum(xa, 0.0)
        if self.eta == 2:
            out = np.zeros_like(p)
        elif self.eta == 3:
            out = np.where(p > 0, 2.0, 0.0)
        else:
            out = (self.eta - 1.0) * (self.eta - 2.0) * p ** (self.eta - 3.0)
        return _unwrap(x, out)

    def to_dict(self):
        return {"kind": "poly", "eta": self.eta}

    def __str__(self):
        return f"poly(eta={self.eta:g})"


def loss_from_dict(cfg: Mapping[str, Any]) -> LossFunction:
    """Build a loss from ``{"kind": "exp", "beta": b}`` or ``{"kind": "poly", "eta": e}``."""
    kind = cfg.get("kind")
    extra = set(cfg) - {"kind", "beta", "eta"}
    if extra:
        raise ValueError(f"unknown loss keys: {sorted(extra)}")
    if kind == "exp":
        if "eta" in cfg:
            raise ValueError("eta is not a parameter of the exponential loss")
        return ExponentialLoss(float(cfg.get("beta", 1.0)))
    if kind == "poly":
        if "beta" in cfg:
            raise ValueError("beta is not a parameter of the polynomial loss")
        return PolynomialLoss(float(cfg.get("eta", 2.0)))
    raise ValueError(f"loss kind must be 'exp' or 'poly', got {kind!r}")
