"""Decay-rate predictions and empirical fits.

Closed forms for boundary-hitting probabilities of the battery and queue
walks, the root of the drift-adjusted log-MGF, the discharge/loss exponent
tradeoff of the constant-draw scheme, and regressions of simulated
probabilities against system size.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .channel import awgn_inverse_rate, awgn_rate
from .errors import DomainError, ExistenceError, FitError, RangeError, StabilityError

POLYNOMIAL = "polynomial"
EXPONENTIAL = "exponential"

_MAX_BRACKET = 2000  # doublings/halvings before giving up


def gaussian_log_mgf(mean: float, var: float) -> Callable[[float], float]:
    return lambda s: mean * s + 0.5 * var * s * s


def poisson_log_mgf(c: float) -> Callable[[float], float]:
    return lambda s: c * math.expm1(s)


def _derivative_at_zero(f: Callable[[float], float], h: float = 1e-6) -> float:
    return (f(h) - f(-h)) / (2.0 * h)


def ld_root(log_mgf: Callable[[float], float], drift_offset: float, side: str = "negative") -> float:
    """Nonzero root of ``log_mgf(s) - s * drift_offset`` on the requested side.

    The drift-adjusted function is convex and vanishes at 0, so a root other
    than 0 exists on the negative side exactly when its slope at 0 is
    positive, and on the positive side when that slope is negative.
    """
    if side not in ("negative", "positive"):
        raise ValueError(f"side must be 'negative' or 'positive', got {side!r}")
    f0 = log_mgf(0.0)
    if abs(f0) > 1e-12:
        raise DomainError(f"log-MGF must vanish at 0, got {f0}")

    def g(s: float) -> float:
        return log_mgf(s) - s * drift_offset

    sign = -1.0 if side == "negative" else 1.0
    slope = _derivative_at_zero(g)
    # on the requested side g must start below zero
    if not sign * slope < 0.0 or abs(slope) < 1e-13:
        raise ExistenceError(
            f"no {side} root: drift-adjusted slope at 0 is {slope:.3e}"
        )

    inner, outer = None, None
    s = sign * 1e-3
    v = _safe(g, s)
    if v < 0.0:
        inner = s
        for _ in range(_MAX_BRACKET):
            s *= 2.0
            v = _safe(g, s)
            if v >= 0.0:
                outer = s
                break
            inner = s
    else:
        outer = s
        for _ in range(_MAX_BRACKET):
            s *= 0.5
            if s == 0.0:
                break
            v = _safe(g, s)
            if v < 0.0:
                inner = s
                break
            outer = s
    if inner is None or outer is None:
        raise ExistenceError(f"could not bracket a {side} root")

    # bisection down to a few ulps
    for _ in range(400):
        mid = 0.5 * (inner + outer)
        if mid == inner or mid == outer:
            break
        if g(mid) < 0.0:
            inner = mid
        else:
            outer = mid
    root = inner if abs(g(inner)) <= abs(g(outer)) else outer
    if root == 0.0:
        raise ExistenceError("root collapsed onto 0")
    res = g(root)
    if abs(res) >= 1e-10:
        raise ExistenceError(f"root residual {res:.3e} exceeds 1e-10")
    return root


def _safe(g: Callable[[float], float], s: float) -> float:
    try:
        v = g(s)
    except OverflowError:
        return math.inf
    return v if not math.isnan(v) else math.inf


def variance_slope_check(
    log_mgf: Callable[[float], float], sigma2: float, mean: Optional[float] = None
) -> float:
    """Relative error between the numerical slope of the root in the drift at
    zero drift and ``-2 / sigma2``.

    The root is computed for draws ``mean - d`` with ``d`` in {1e-3, 1e-4}; the
    secant slopes ``root(d) / d`` are extrapolated linearly to ``d = 0``.
    """
    if not sigma2 > 0.0:
        raise DomainError("sigma2 must be positive")
    if mean is None:
        mean = _derivative_at_zero(log_mgf)
    d1, d2 = 1e-3, 1e-4
    k1 = ld_root(log_mgf, mean - d1, "negative") / d1
    k2 = ld_root(log_mgf, mean - d2, "negative") / d2
    slope0 = k2 - (k1 - k2) * d2 / (d1 - d2)
    return abs(slope0 + 2.0 / sigma2) * sigma2 / 2.0


@dataclass(frozen=True)
class DischargePrediction:
    model: str
    exponent: float
    point_value: float
    root: float
    drift: float


def predict_discharge_scheme_b(
    M: float, beta: float, mu: float = 10.0, sigma_r2: float = 1.0,
    log_mgf: Optional[Callable[[float], float]] = None,
) -> DischargePrediction:
    """Order of the battery-threshold scheme's discharge probability.

    Returns the polynomial order ``beta`` and the point value
    ``exp(root * M / 2)``, where ``root`` solves the drift-adjusted log-MGF
    equation for the lower draw. ``log_mgf`` defaults to the Gaussian one.
    """
    if not beta >= 2.0:
        raise DomainError(f"beta must be at least 2, got {beta}")
    if not M > 1.0:
        raise DomainError(f"M must exceed 1, got {M}")
    lmgf = log_mgf if log_mgf is not None else gaussian_log_mgf(mu, sigma_r2)
    delta = beta * sigma_r2 * math.log(M) / M
    root = ld_root(lmgf, mu - delta, "negative")
    return DischargePrediction(POLYNOMIAL, float(beta), math.exp(root * M / 2.0), root, delta)


def _check_positive(**kw) -> None:
    for k, v in kw.items():
        if not v > 0.0 or not math.isfinite(v):
            raise DomainError(f"{k} must be positive, got {v}")


def diffusion_underflow(delta_r: float, sigma_r2: float, M: float) -> float:
    """Diffusion approximation of the empty-battery probability under a
    constant negative drift: ``exp(-2 * delta_r * M / sigma_r2)``."""
    _check_positive(delta_r=delta_r, sigma_r2=sigma_r2)
    if not M >= 0.0:
        raise DomainError(f"M must be nonnegative, got {M}")
    return math.exp(-2.0 * delta_r * M / sigma_r2)


def renewal_overflow(delta_a: float, sigma_a2: float, K: float) -> float:
    """Overflow probability of the queue under the queue-threshold scheme:
    ``(delta_a**2 / sigma_a2) * exp(-delta_a * K / sigma_a2)``."""
    _check_positive(delta_a=delta_a, sigma_a2=sigma_a2, K=K)
    return delta_a * delta_a / sigma_a2 * math.exp(-delta_a * K / sigma_a2)


def scheme_e_overflow(delta_a: float, sigma_a2: float, K: float) -> float:
    """``exp(-2 * delta_a * K / sigma_a2)``"""
    _check_positive(delta_a=delta_a, sigma_a2=sigma_a2)
    if not K >= 0.0:
        raise DomainError(f"K must be nonnegative, got {K}")
    return math.exp(-2.0 * delta_a * K / sigma_a2)


@dataclass(frozen=True)
class TradeoffPoint:
    delta_r: float
    discharge_exponent: float
    loss_exponent: float


def tradeoff_point(
    delta_r: float, mu: float, lam: float, gamma: float, sigma_r2: float, sigma_a2: float
) -> TradeoffPoint:
    return TradeoffPoint(
        delta_r,
        2.0 * delta_r / sigma_r2,
        2.0 * (awgn_rate(mu - delta_r, gamma) - lam) / sigma_a2,
    )


def tradeoff_curve(
    mu: float, lam: float, gamma: float, sigma_r2: float, sigma_a2: float, n_grid: int
) -> list[TradeoffPoint]:
    """Exponent pairs of the constant-draw scheme on an evenly spaced open grid
    of energy margins ``0 < delta_r < mu - C^-1(lam)``."""
    _check_positive(mu=mu, gamma=gamma, sigma_r2=sigma_r2, sigma_a2=sigma_a2)
    if lam < 0.0:
        raise DomainError(f"lambda must be nonnegative, got {lam}")
    if int(n_grid) != n_grid or n_grid < 2:
        raise DomainError(f"n_grid must be an integer >= 2, got {n_grid}")
    cap = awgn_rate(mu, gamma)
    if not lam < cap:
        raise StabilityError(
            f"stability condition λ < C(µ) violated: lambda={lam:.6g}, C(mu)={cap:.6g}"
        )
    width = mu - awgn_inverse_rate(lam, gamma)
    n = int(n_grid)
    return [
        tradeoff_point(width * k / (n + 1), mu, lam, gamma, sigma_r2, sigma_a2)
        for k in range(1, n + 1)
    ]


@dataclass(frozen=True)
class DecayFit:
    model: str
    exponent: float
    intercept: float
    r_squared: float
    n_points: int
    n_dropped: int = 0

    def predict(self, size: float) -> float:
        x = math.log(size) if self.model == POLYNOMIAL else size
        return math.exp(self.intercept - self.exponent * x)


def fit_decay(points: Sequence[tuple[float, float]], model: str) -> DecayFit:
    """Least-squares line through ``(ln size, ln p)`` (polynomial) or
    ``(size, ln p)`` (exponential). Points with zero probability are dropped
    with a warning."""
    if model not in (POLYNOMIAL, EXPONENTIAL):
        raise ValueError(f"model must be {POLYNOMIAL!r} or {EXPONENTIAL!r}")
    usable = [(float(s), float(p)) for s, p in points if p > 0.0]
    dropped = len(points) - len(usable)
    if dropped:
        warnings.warn(f"{dropped} point(s) with zero probability dropped from the fit", stacklevel=2)
    if len(usable) < 3:
        raise FitError(f"need at least 3 points with positive probability, got {len(usable)}")
    sizes = np.array([s for s, _ in usable])
    if np.unique(sizes).size != sizes.size:
        raise FitError("sizes must be distinct")
    if model == POLYNOMIAL and np.any(sizes <= 0.0):
        raise FitError("polynomial fits need positive sizes")
    x = np.log(sizes) if model == POLYNOMIAL else sizes
    y = np.log([p for _, p in usable])
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    intercept = float(ym - slope * xm)
    resid = y - (intercept + slope * x)
    sst = float(np.sum((y - ym) ** 2))
    r2 = 1.0 if sst == 0.0 else 1.0 - float(np.sum(resid**2)) / sst
    r2 = min(1.0, max(0.0, r2))
    return DecayFit(model, abs(slope), intercept, r2, len(usable), dropped)


def empirical_log_mgf(samples, s: float, block_len: int = 100, min_samples: int = 100_000) -> float:
    """Block estimator of the asymptotic log-MGF:
    ``(1/L) ln mean_blocks exp(s * block_sum)``."""
    x = np.asarray(samples, dtype=float)
    if x.size < min_samples:
        raise DomainError(f"need at least {min_samples} samples, got {x.size}")
    if int(block_len) != block_len or block_len < 1:
        raise DomainError("block_len must be a positive integer")
    if s == 0.0:
        return 0.0
    L = int(block_len)
    nb = x.size // L
    sums = x[: nb * L].reshape(nb, L).sum(axis=1)
    z = s * sums
    zmax = float(z.max())
    if zmax > 709.0:
        raise RangeError(
            f"exp(s * block_sum) overflows (largest exponent {zmax:.1f}); use a smaller |s|"
        )
    val = zmax + math.log(float(np.mean(np.exp(z - zmax))))
    return val / L
