"""Rate-power and utility functions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from .errors import DomainError, ParameterError

LN2 = math.log(2.0)


def awgn_rate(e: float, gamma: float) -> float:
    """Bits per slot deliverable with energy ``e``: ``log2(1 + gamma*e)``."""
    if e < 0.0:
        raise DomainError(f"energy must be nonnegative, got {e}")
    if not gamma > 0.0:
        raise DomainError(f"gamma must be positive, got {gamma}")
    return math.log2(1.0 + gamma * e)


def awgn_inverse_rate(rate: float, gamma: float) -> float:
    """Energy needed for ``rate`` bits per slot: ``(2**rate - 1) / gamma``."""
    if rate < 0.0:
        raise DomainError(f"rate must be nonnegative, got {rate}")
    if not gamma > 0.0:
        raise DomainError(f"gamma must be positive, got {gamma}")
    return (2.0**rate - 1.0) / gamma


@dataclass(frozen=True)
class RatePowerFunction:
    gamma: float = 1.0
    kind: str = "awgn"

    def __post_init__(self):
        if self.kind != "awgn":
            raise ParameterError(f"unknown rate-power kind {self.kind!r}")
        if not self.gamma > 0.0 or not math.isfinite(self.gamma):
            raise ParameterError(f"gamma must be positive, got {self.gamma}")

    def rate(self, e: float) -> float:
        return awgn_rate(e, self.gamma)

    def inverse(self, rate: float) -> float:
        return awgn_inverse_rate(rate, self.gamma)

    def slope(self, e: float) -> float:
        """dC/de."""
        return self.gamma / ((1.0 + self.gamma * e) * LN2)


LOG_CAPACITY = "log-capacity"
RATE = "rate"
TABULATED = "tabulated"

# utilities applied to the delivered rate
RATE_UTILITIES = ("identity", "log")


@dataclass(frozen=True)
class UtilityFunction:
    """Concave non-decreasing per-slot utility of consumed energy.

    ``log-capacity`` is ``log2(1 + gamma*e)``. ``rate`` applies a rate
    utility (``identity`` or ``log`` meaning ``ln(1 + x)``) to the AWGN rate.
    ``tabulated`` interpolates linearly between knots and is flat after the
    last one.
    """

    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        p = self.params
        if self.kind in (LOG_CAPACITY, RATE):
            g = p.get("gamma", 1.0)
            if not g > 0.0:
                raise ParameterError(f"utility gamma must be positive, got {g}")
            if self.kind == RATE and p.get("rate_utility", "identity") not in RATE_UTILITIES:
                raise ParameterError(f"rate utility must be one of {RATE_UTILITIES}")
        elif self.kind == TABULATED:
            _check_knots(p.get("x"), p.get("y"))
        else:
            raise ParameterError(f"unknown utility kind {self.kind!r}")

    @property
    def gamma(self) -> float:
        return float(self.params.get("gamma", 1.0))

    @property
    def rate_utility(self) -> str:
        if self.kind == LOG_CAPACITY:
            return "identity"
        return self.params.get("rate_utility", "identity")

    def __call__(self, e: float) -> float:
        return utility_eval(self, e)

    def derivative(self, e: float) -> float:
        """dU/de at ``e`` (right derivative at knots)."""
        if e < 0.0:
            raise DomainError(f"energy must be nonnegative, got {e}")
        if self.kind == TABULATED:
            x, y = np.asarray(self.params["x"]), np.asarray(self.params["y"])
            i = int(np.searchsorted(x, e, side="right")) - 1
            if i >= x.size - 1:
                return 0.0
            return float((y[i + 1] - y[i]) / (x[i + 1] - x[i]))
        g = self.gamma
        dc = g / ((1.0 + g * e) * LN2)
        if self.rate_utility == "identity":
            return dc
        return dc / (1.0 + math.log2(1.0 + g * e))

    def rate_derivative(self, x: float, rate_fn: RatePowerFunction) -> float:
        """Derivative of the utility with respect to delivered rate at ``x`` bits."""
        e = rate_fn.inverse(x)
        return self.derivative(e) / rate_fn.slope(e)


def _check_knots(x, y) -> None:
    if x is None or y is None:
        raise ParameterError("tabulated utility needs knots")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 1 or x.shape != y.shape or x.size < 2:
        raise ParameterError("tabulated utility needs at least two (x, y) knots")
    if x[0] != 0.0:
        raise ParameterError("first utility knot must be at energy 0")
    if y[0] != 0.0:
        raise ParameterError("utility must be 0 at energy 0")
    if np.any(np.diff(x) <= 0.0):
        raise ParameterError("utility knots must have strictly increasing energies")
    slopes = np.diff(y) / np.diff(x)
    if np.any(slopes < 0.0):
        raise ParameterError("tabulated utility must be non-decreasing")
    if np.any(np.diff(slopes) > 1e-12 * max(1.0, float(np.abs(slopes).max()))):
        raise ParameterError("tabulated utility must be concave")


def tabulated_utility(knots) -> UtilityFunction:
    pts = np.asarray(knots, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ParameterError("knots must be a list of [energy, utility] pairs")
    return UtilityFunction(TABULATED, {"x": tuple(pts[:, 0]), "y": tuple(pts[:, 1])})


def log_capacity_utility(gamma: float = 1.0) -> UtilityFunction:
    return UtilityFunction(LOG_CAPACITY, {"gamma": float(gamma)})


def rate_utility(gamma: float = 1.0, rate_utility: str = "identity") -> UtilityFunction:
    return UtilityFunction(RATE, {"gamma": float(gamma), "rate_utility": rate_utility})


def utility_eval(u: UtilityFunction, e: float) -> float:
    if e < 0.0:
        raise DomainError(f"energy must be nonnegative, got {e}")
    if u.kind == TABULATED:
        return float(np.interp(e, u.params["x"], u.params["y"]))
    c = math.log2(1.0 + u.gamma * e)
    if u.rate_utility == "identity":
        return c
    return math.log1p(c)
