"""Node state equations, configuration and result types."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .. import analysis
from ..channel import LOG_CAPACITY, TABULATED, RatePowerFunction, UtilityFunction
from ..errors import ConfigurationError, EhnodeError
from ..policies import (
    BATTERY_ONLY, CONSTANT, JOINT, MODES, SCHEME_B, SCHEME_E, SCHEME_Q, SCHEME_TO,
    NodeState, Policy,
)
from ..processes import ProcessSource
from . import kernel as kn


class LargeBatteryWarning(UserWarning):
    """Battery is not much larger than the energy needed to drain a full buffer."""


class RareEventWarning(UserWarning):
    """Too few events are expected within the horizon for a usable estimate."""


@dataclass(frozen=True)
class SimConfig:
    mode: str
    M: float
    horizon: int
    replenishment: ProcessSource
    policy: Policy
    utility: UtilityFunction
    rate_fn: RatePowerFunction = field(default_factory=RatePowerFunction)
    seed: int = 0
    K: Optional[float] = None
    arrivals: Optional[ProcessSource] = None
    warmup: Optional[int] = None
    initial_battery: Optional[float] = None
    initial_queue: Optional[float] = None
    n_batches: int = 20

    def __post_init__(self):
        def bad(name, msg):
            raise ConfigurationError(f"{name}: {msg}")

        if self.mode not in MODES:
            bad("mode", f"must be one of {MODES}, got {self.mode!r}")
        if not (isinstance(self.M, (int, float)) and math.isfinite(self.M) and self.M > 0):
            bad("M", f"battery capacity must be positive, got {self.M}")
        if int(self.horizon) != self.horizon or self.horizon < 1:
            bad("horizon", f"must be a positive integer, got {self.horizon}")
        if self.warmup is not None and not 0 <= self.warmup < self.horizon:
            bad("warmup", f"must satisfy 0 <= warmup < horizon, got {self.warmup}")
        if int(self.n_batches) != self.n_batches or self.n_batches < 2:
            bad("n_batches", f"must be an integer >= 2, got {self.n_batches}")
        if self.horizon - self.effective_warmup < self.n_batches:
            bad("horizon", "too short for the requested number of batches")
        if self.mode == JOINT:
            if self.K is None or not (math.isfinite(self.K) and self.K > 0):
                bad("K", f"buffer capacity must be positive in joint mode, got {self.K}")
            if self.arrivals is None:
                bad("arrivals", "joint mode needs an arrival process")
            if self.policy.kind == SCHEME_Q and self.policy.buffer_capacity != self.K:
                bad("policy", "scheme-q was built for a different buffer capacity")
        elif self.policy.kind == SCHEME_Q:
            bad("policy", "scheme-q needs a data queue; use joint mode")
        if self.policy.kind == SCHEME_B and self.policy.battery_capacity != self.M:
            bad("policy", "scheme-b was built for a different battery capacity")
        b0 = self.battery0
        if not 0.0 <= b0 <= self.M:
            bad("initial_battery", f"must lie in [0, M], got {b0}")
        if self.mode == JOINT and not 0.0 <= self.queue0 <= self.K:
            bad("initial_queue", f"must lie in [0, K], got {self.queue0}")

    @property
    def effective_warmup(self) -> int:
        if self.warmup is not None:
            return int(self.warmup)
        return int(min(100_000, self.horizon // 10))

    @property
    def battery0(self) -> float:
        return 0.5 * self.M if self.initial_battery is None else float(self.initial_battery)

    @property
    def queue0(self) -> float:
        if self.mode != JOINT:
            return 0.0
        return 0.5 * self.K if self.initial_queue is None else float(self.initial_queue)

    def with_(self, **changes) -> "SimConfig":
        return replace(self, **changes)


def config_warnings(cfg: SimConfig) -> list[str]:
    """Regime and rare-event diagnostics for a configuration."""
    out = []
    if cfg.mode == JOINT:
        lam = cfg.arrivals.declared_mean
        if lam is not None and lam >= 0:
            need = cfg.rate_fn.inverse(lam) * cfg.K
            if cfg.M < 10.0 * need:
                out.append(
                    f"large battery regime violated: M={cfg.M:g} is not much larger than "
                    f"C^-1(lambda)*K={need:.4g}"
                )
    pred = predicted_discharge(cfg)
    if pred is not None and pred < 50.0 / max(1, cfg.horizon - cfg.effective_warmup):
        out.append(
            f"predicted discharge probability {pred:.3e} gives fewer than 50 expected "
            f"events in {cfg.horizon} slots"
        )
    return out


def emit_warnings(cfg: SimConfig) -> None:
    for msg in config_warnings(cfg):
        cls = LargeBatteryWarning if msg.startswith("large battery") else RareEventWarning
        warnings.warn(msg, cls, stacklevel=3)


def predicted_discharge(cfg: SimConfig) -> Optional[float]:
    """Closed-form discharge prediction where one applies, else None."""
    var = cfg.replenishment.declared_asym_var
    mu = cfg.replenishment.declared_mean
    if not var or mu is None:
        return None
    p = cfg.policy
    try:
        if p.kind == SCHEME_B:
            return analysis.predict_discharge_scheme_b(cfg.M, p.beta, mu, var).point_value
        if p.kind == SCHEME_E:
            return analysis.diffusion_underflow(p.delta_r, var, cfg.M)
        if p.kind == SCHEME_Q:
            return analysis.diffusion_underflow(min(p.delta_r1, p.delta_r2), var, cfg.M)
        if p.kind == SCHEME_TO:
            return analysis.diffusion_underflow(p.epsilon, var, cfg.M)
        if p.kind == CONSTANT and p.mu < mu:
            return analysis.diffusion_underflow(mu - p.mu, var, cfg.M)
    except EhnodeError:
        return None
    return None


@dataclass(frozen=True)
class SlotRecord:
    e_consumed: float
    service: float
    discharged: bool
    battery_overflowed: bool
    data_lost: float
    utility: float
    brownout: bool = False


@dataclass(frozen=True)
class Metrics:
    """Long-run estimates with 95% half-widths.

    ``avg_utility_cv`` is the utility average corrected by a control variate
    built from the input process and the state drift over the window. It has
    the same expectation as ``avg_utility`` up to O(1/horizon) and a much
    lower variance for schemes whose draw follows the input (scheme B in
    battery-only mode, scheme Q in joint mode); for a constant draw it only
    adds noise. ``p_loss`` is None in battery-only mode.
    """

    p_discharge: float
    p_discharge_hw: float
    p_loss: Optional[float]
    p_loss_hw: Optional[float]
    avg_utility: float
    avg_utility_hw: float
    mean_energy: float
    mean_energy_hw: float
    n_batches: int
    avg_utility_cv: float = math.nan
    avg_utility_cv_hw: float = math.nan
    p_overflow: float = 0.0
    p_overflow_hw: float = 0.0
    p_brownout: float = 0.0
    mean_service: float = 0.0
    slots: int = 0
    energy_in: float = 0.0
    energy_used: float = 0.0
    energy_spilled: float = 0.0
    battery_start: float = 0.0
    battery_end: float = 0.0


@dataclass(frozen=True)
class KernelParams:
    joint: bool
    M: float
    K: float
    pcode: int
    lo: float
    hi: float
    bthr: float
    qthr: float
    cap: float
    rgamma: float
    ucode: int
    ugamma: float
    ux: np.ndarray
    uy: np.ndarray

    def args(self):
        return (
            self.joint, self.M, self.K, self.pcode, self.lo, self.hi, self.bthr,
            self.qthr, self.cap, self.rgamma, 2.0, self.ucode, self.ugamma, self.ux, self.uy,
        )


_PCODES = {
    SCHEME_B: kn.P_B, SCHEME_Q: kn.P_Q, SCHEME_E: kn.P_E, SCHEME_TO: kn.P_TO, CONSTANT: kn.P_CONST,
}


def kernel_params(cfg: SimConfig) -> KernelParams:
    p = cfg.policy
    pcode = _PCODES[p.kind]
    lo = hi = cap = 0.0
    bthr = 0.5 * cfg.M
    qthr = 0.5 * cfg.K if cfg.K is not None else 0.0
    if p.kind == SCHEME_B:
        lo, hi = p.mu - p.delta_b, p.mu + p.delta_b
    elif p.kind == SCHEME_Q:
        lo, hi = p.mu - p.delta_r2, p.mu - p.delta_r1
    elif p.kind == SCHEME_E:
        lo = hi = p.mu - p.delta_r
    elif p.kind == SCHEME_TO:
        cap = p.mu - p.epsilon
    else:
        lo = hi = p.mu
    u = cfg.utility
    empty = np.zeros(1)
    if u.kind == TABULATED:
        ucode, ux, uy = kn.U_TABLE, np.asarray(u.params["x"], float), np.asarray(u.params["y"], float)
    elif u.rate_utility == "identity":
        ucode, ux, uy = kn.U_LOG2, empty, empty
    else:
        ucode, ux, uy = kn.U_LOGRATE, empty, empty
    return KernelParams(
        cfg.mode == JOINT, float(cfg.M), float(cfg.K or 0.0), pcode, lo, hi, bthr, qthr, cap,
        cfg.rate_fn.gamma, ucode, u.gamma if u.kind != TABULATED else 1.0, ux, uy,
    )


def _utility(kp: KernelParams, e: float) -> float:
    if kp.ucode == kn.U_TABLE:
        return float(np.interp(e, kp.ux, kp.uy))
    c = math.log2(1.0 + kp.ugamma * e)
    if kp.ucode == kn.U_LOG2:
        return c
    return math.log1p(c)


def step(state: NodeState, cfg: SimConfig, r: float, a: float = 0.0,
         params: Optional[KernelParams] = None) -> tuple[NodeState, SlotRecord]:
    """Advance one slot.

    The draw is decided from the state at the start of the slot and may use
    the slot's replenishment ``r``; in joint mode it is also capped so the
    delivered bits do not exceed ``queue + a``. When the battery cannot cover
    the decided draw the slot browns out: the stored energy is drained, no
    bits are delivered and the slot earns no utility.
    """
    kp = params if params is not None else kernel_params(cfg)
    B, Q = state.battery, state.queue
    joint = kp.joint
    if not joint:
        a = 0.0
    avail = B + r
    if kp.pcode == kn.P_B:
        req = kp.hi if B >= kp.bthr else kp.lo
    elif kp.pcode == kn.P_Q:
        req = kp.hi if Q >= kp.qthr else kp.lo
    elif kp.pcode == kn.P_TO:
        req = avail if avail < kp.cap else kp.cap
    else:
        req = kp.lo
    if req < 0.0:
        req = 0.0
    c_req = math.log2(1.0 + kp.rgamma * req)
    if joint and Q + a < c_req:
        # the queue cannot absorb the full rate: serve it all
        req = (2.0 ** (Q + a) - 1.0) / kp.rgamma
        c_req = math.log2(1.0 + kp.rgamma * req)
    brown = req > avail
    if brown:
        e, served, u = avail, 0.0, 0.0
    else:
        e = req
        served = c_req if joint else 0.0
        u = _utility(kp, e)
    pre = avail - e
    dis = pre <= 0.0
    over = (not dis) and pre > kp.M
    Bn = 0.0 if dis else (kp.M if over else pre)
    lost = 0.0
    Qn = Q
    if joint:
        qpre = Q + a - served
        if qpre > kp.K:
            lost = qpre - kp.K
            Qn = kp.K
        elif qpre < 0.0:
            Qn = 0.0
        else:
            Qn = qpre
    rec = SlotRecord(e, served, dis, over, lost, u, brown)
    return NodeState(Bn, Qn, state.slot + 1), rec
