"""Energy-management schemes and the per-slot draw decision."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

from .channel import RatePowerFunction
from .errors import ConfigurationError, ParameterError, StabilityError

SCHEME_B = "scheme-b"
SCHEME_Q = "scheme-q"
SCHEME_E = "scheme-e"
SCHEME_TO = "scheme-to"
CONSTANT = "constant"
POLICY_KINDS = (SCHEME_B, SCHEME_Q, SCHEME_E, SCHEME_TO, CONSTANT)

BATTERY_ONLY = "battery-only"
JOINT = "joint"
MODES = (BATTERY_ONLY, JOINT)


@dataclass(frozen=True)
class Policy:
    """Immutable description of a scheme.

    Only the fields relevant to ``kind`` are meaningful. For ``constant`` the
    draw is ``mu``.
    """

    kind: str
    mu: float
    delta_b: float = 0.0
    delta_r1: float = 0.0
    delta_r2: float = 0.0
    delta_a: float = 0.0
    delta_r: float = 0.0
    epsilon: float = 0.0
    beta: float = 0.0
    beta_q: float = 0.0
    battery_capacity: float = 0.0
    buffer_capacity: float = 0.0

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ParameterError(f"unknown policy kind {self.kind!r}")

    @property
    def levels(self) -> tuple[float, ...]:
        """The distinct raw draws this policy can request (TO: its cap)."""
        if self.kind == SCHEME_B:
            return (self.mu - self.delta_b, self.mu + self.delta_b)
        if self.kind == SCHEME_Q:
            return (self.mu - self.delta_r2, self.mu - self.delta_r1)
        if self.kind == SCHEME_E:
            return (self.mu - self.delta_r,)
        if self.kind == SCHEME_TO:
            return (self.mu - self.epsilon,)
        return (self.mu,)


class NodeState(NamedTuple):
    battery: float
    queue: float = 0.0
    slot: int = 0


def _stable(mu: float, lam: float, rate_fn: RatePowerFunction) -> None:
    cap = rate_fn.rate(mu)
    if not lam < cap:
        raise StabilityError(
            f"stability condition λ < C(µ) violated: lambda={lam:.6g}, C(mu)={cap:.6g}"
        )


def make_scheme_b(mu: float, sigma_r2: float, beta: float, M: float) -> Policy:
    """Battery-threshold scheme: draw ``mu - d`` below ``M/2`` and ``mu + d`` at or
    above it, with ``d = beta * sigma_r2 * ln(M) / M``."""
    if not M > 1.0:
        raise ParameterError(f"battery capacity must exceed 1, got {M}")
    if not beta >= 2.0:
        raise ParameterError(f"beta must be at least 2, got {beta}")
    if not mu > 0.0:
        raise ParameterError(f"mu must be positive, got {mu}")
    if not sigma_r2 > 0.0:
        raise ParameterError(f"sigma_r2 must be positive, got {sigma_r2}")
    delta = beta * sigma_r2 * math.log(M) / M
    if not mu - delta > 0.0:
        raise ConfigurationError(
            f"drift {delta:.6g} is not below mu={mu}: battery too small for these parameters"
        )
    return Policy(SCHEME_B, mu, delta_b=delta, beta=beta, battery_capacity=M)


def make_scheme_q(
    mu: float, lam: float, sigma_a2: float, beta_q: float, K: float, rate_fn: RatePowerFunction
) -> Policy:
    """Queue-threshold scheme with symmetric queue drift ``beta_q*sigma_a2*ln(K)/K``."""
    if not mu > 0.0:
        raise ParameterError(f"mu must be positive, got {mu}")
    if not lam > 0.0:
        raise ParameterError(f"lambda must be positive, got {lam}")
    if not K > 1.0:
        raise ParameterError(f"buffer capacity must exceed 1, got {K}")
    if not beta_q >= 2.0:
        raise ParameterError(f"beta_q must be at least 2, got {beta_q}")
    if not sigma_a2 > 0.0:
        raise ParameterError(f"sigma_a2 must be positive, got {sigma_a2}")
    _stable(mu, lam, rate_fn)
    delta_a = beta_q * sigma_a2 * math.log(K) / K
    if not delta_a < lam:
        raise ConfigurationError(f"queue drift {delta_a:.6g} is not below lambda={lam}")
    if not lam + delta_a < rate_fn.rate(mu):
        raise ConfigurationError(
            f"lambda + queue drift = {lam + delta_a:.6g} is not below C(mu)={rate_fn.rate(mu):.6g}"
        )
    d1 = mu - rate_fn.inverse(lam + delta_a)
    d2 = mu - rate_fn.inverse(lam - delta_a)
    return Policy(
        SCHEME_Q, mu, delta_r1=d1, delta_r2=d2, delta_a=delta_a, beta_q=beta_q, buffer_capacity=K
    )


def make_scheme_e(mu: float, delta_r: float, lam: float, rate_fn: RatePowerFunction) -> Policy:
    """Constant draw ``mu - delta_r``; the implied queue drift is stored in ``delta_a``."""
    if not mu > 0.0:
        raise ParameterError(f"mu must be positive, got {mu}")
    if not lam >= 0.0:
        raise ParameterError(f"lambda must be nonnegative, got {lam}")
    _stable(mu, lam, rate_fn)
    upper = mu - rate_fn.inverse(lam)
    if not 0.0 < delta_r < upper:
        raise ConfigurationError(f"delta_r must lie in (0, {upper:.6g}), got {delta_r}")
    delta_a = rate_fn.rate(mu - delta_r) - lam
    return Policy(SCHEME_E, mu, delta_r=delta_r, delta_a=delta_a)


def make_scheme_to(mu: float, epsilon: float, lam: float, rate_fn: RatePowerFunction) -> Policy:
    """Throughput-optimal baseline: draw ``min(available, mu - epsilon)``."""
    if not mu > 0.0:
        raise ParameterError(f"mu must be positive, got {mu}")
    if not 0.0 < epsilon < mu:
        raise ConfigurationError(f"epsilon must lie in (0, mu), got {epsilon}")
    if not rate_fn.rate(mu - epsilon) > lam:
        raise ConfigurationError(
            f"C(mu - epsilon) = {rate_fn.rate(mu - epsilon):.6g} must exceed lambda={lam}"
        )
    return Policy(SCHEME_TO, mu, epsilon=epsilon)


def make_constant(draw: float) -> Policy:
    if not draw >= 0.0 or not math.isfinite(draw):
        raise ParameterError(f"constant draw must be nonnegative, got {draw}")
    return Policy(CONSTANT, float(draw))


def raw_request(policy: Policy, state: NodeState, available: float) -> float:
    """The scheme's draw before the feasibility clamps."""
    k = policy.kind
    if k == SCHEME_B:
        if state.battery >= 0.5 * policy.battery_capacity:
            return policy.mu + policy.delta_b
        return policy.mu - policy.delta_b
    if k == SCHEME_Q:
        if state.queue >= 0.5 * policy.buffer_capacity:
            return policy.mu - policy.delta_r1
        return policy.mu - policy.delta_r2
    if k == SCHEME_E:
        return policy.mu - policy.delta_r
    if k == SCHEME_TO:
        return min(available, policy.mu - policy.epsilon)
    return policy.mu


def target_draw(
    policy: Policy, state: NodeState, rate_fn: RatePowerFunction, mode: str,
    r: float = 0.0, a: float = 0.0,
) -> float:
    """Raw request capped by the queue content in joint mode, before the battery clamp."""
    if mode not in MODES:
        raise ParameterError(f"unknown mode {mode!r}")
    if policy.kind == SCHEME_Q and mode != JOINT:
        raise ConfigurationError("scheme-q needs a data queue; use joint mode")
    e = max(raw_request(policy, state, state.battery + r), 0.0)
    if mode == JOINT and state.queue + a < rate_fn.rate(e):
        e = rate_fn.inverse(state.queue + a)
    return e


def decide(
    policy: Policy, state: NodeState, rate_fn: RatePowerFunction, mode: str,
    r: float = 0.0, a: float = 0.0,
) -> float:
    """Energy drawn in the slot.

    ``r`` and ``a`` are the replenishment and arrivals of the same slot; the
    draw may use the energy harvested in the slot and serve the bits that
    arrive in it. With the defaults the clamps are against the stored battery
    and queue alone.
    """
    e = target_draw(policy, state, rate_fn, mode, r, a)
    return min(e, state.battery + r)
