"""JSON configuration documents.

A run configuration is a single JSON object::

    {
      "mode": "joint",                 # or "battery-only"
      "M": 200, "K": 40,
      "horizon": 1000000, "warmup": 100000, "n_batches": 20,
      "n_replications": 4, "seed": 1,
      "gamma": 1.0, "energy_unit_scale": 1.0,
      "replenishment": {"kind": "gaussian", "mean": 10, "var": 4},
      "arrivals": {"kind": "poisson", "mean": 3.2},
      "utility": {"kind": "log-capacity"},
      "policy": {"kind": "scheme-e", "delta_r": 0.5},
      "trace": {"path": "slots.csv", "slots": 10000}
    }

Errors are reported as :class:`ConfigError` naming the offending field and,
when it can be found, the line of the document where it appears.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

from . import processes as pr
from .channel import (
    RatePowerFunction, UtilityFunction, log_capacity_utility, rate_utility, tabulated_utility,
)
from .errors import ConfigurationError, EhnodeError, StabilityError
from .policies import (
    BATTERY_ONLY, CONSTANT, JOINT, MODES, SCHEME_B, SCHEME_E, SCHEME_Q, SCHEME_TO,
    Policy, make_constant, make_scheme_b, make_scheme_e, make_scheme_q, make_scheme_to,
)
from .simulator import SimConfig

SOURCE_ALIASES = {
    "gaussian": pr.GAUSSIAN,
    pr.GAUSSIAN: pr.GAUSSIAN,
    "poisson": pr.POISSON,
    pr.POISSON: pr.POISSON,
    "discrete": pr.DISCRETE,
    pr.DISCRETE: pr.DISCRETE,
    "mmpp": pr.MMPP,
    "trace": pr.TRACE,
    pr.TRACE: pr.TRACE,
    "diurnal": pr.DIURNAL,
    pr.DIURNAL: pr.DIURNAL,
}

# horizon and batch length used when a source has no declared asymptotic variance
_VAR_HORIZON = 1_000_000
_VAR_BATCH = 1_000


class ConfigError(ConfigurationError):
    """Invalid configuration field."""

    def __init__(self, field: str, message: str, line: Optional[int] = None, source: str = ""):
        self.field = field
        self.line = line
        self.source = source
        where = f"{source}:{line}: " if line is not None and source else (f"line {line}: " if line else "")
        super().__init__(f"{where}{field}: {message}")


def locate(text: str, field: str) -> Optional[int]:
    """Line number of ``field`` (dotted path) in a JSON document, best effort."""
    if not text:
        return None
    pos = 0
    line = None
    for part in field.split("."):
        if part.isdigit():
            continue
        m = re.compile(r'"' + re.escape(part) + r'"\s*:').search(text, pos)
        if m is None:
            break
        pos = m.end()
        line = text.count("\n", 0, m.start()) + 1
    return line


class _Ctx:
    def __init__(self, text: str = "", source: str = ""):
        self.text = text
        self.source = source

    def fail(self, field: str, message: str):
        raise ConfigError(field, message, locate(self.text, field), self.source)


def parse_json(text: str, source: str = "<config>") -> dict:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("document", f"invalid JSON: {exc.msg} (column {exc.colno})",
                          exc.lineno, source) from None
    if not isinstance(raw, dict):
        raise ConfigError("document", "top level must be a JSON object", 1, source)
    return raw


def config_hash(raw: dict) -> str:
    """Short digest of a configuration with its seed removed."""
    body = {k: v for k, v in raw.items() if k != "seed"}
    blob = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _number(ctx: _Ctx, d: dict, key: str, field: str, default=None, *, positive=False,
            nonneg=False, integer=False, required=False):
    if key not in d or d[key] is None:
        if required:
            ctx.fail(field, "is required")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        ctx.fail(field, f"must be a number, got {v!r}")
    if not math.isfinite(v):
        ctx.fail(field, f"must be finite, got {v!r}")
    if integer:
        if float(v) != int(v):
            ctx.fail(field, f"must be an integer, got {v!r}")
        v = int(v)
    if positive and not v > 0:
        ctx.fail(field, f"must be positive, got {v!r}")
    if nonneg and not v >= 0:
        ctx.fail(field, f"must be nonnegative, got {v!r}")
    return v


def build_source(ctx: _Ctx, spec: Any, field: str, base_dir: Path) -> pr.ProcessSource:
    if not isinstance(spec, dict):
        ctx.fail(field, "must be an object with a 'kind'")
    kind = SOURCE_ALIASES.get(spec.get("kind"))
    if kind is None:
        ctx.fail(f"{field}.kind", f"unknown source kind {spec.get('kind')!r}")
    try:
        if kind == pr.GAUSSIAN:
            src = pr.make_iid_gaussian(
                _number(ctx, spec, "mean", f"{field}.mean", required=True),
                _number(ctx, spec, "var", f"{field}.var", required=True),
            )
        elif kind == pr.POISSON:
            src = pr.make_poisson(_number(ctx, spec, "mean", f"{field}.mean", required=True))
        elif kind == pr.DISCRETE:
            src = pr.make_discrete(spec.get("values"), spec.get("probs"))
        elif kind == pr.MMPP:
            if "transition" in spec:
                P = spec["transition"]
            else:
                P = pr.sticky_transition(
                    _number(ctx, spec, "stationary_p", f"{field}.stationary_p", required=True),
                    _number(ctx, spec, "self_transition", f"{field}.self_transition", required=True),
                )
            src = pr.make_mmpp(P, spec.get("state_means"), int(spec.get("initial_state", 0)))
        elif kind == pr.TRACE:
            path = spec.get("path")
            if not isinstance(path, str):
                ctx.fail(f"{field}.path", "must be a file path")
            p = Path(path)
            if not p.is_absolute():
                p = base_dir / p
            src = pr.make_trace(p, _number(ctx, spec, "scale", f"{field}.scale", 1.0, positive=True))
        else:
            src = pr.make_diurnal(
                _number(ctx, spec, "peak", f"{field}.peak", required=True),
                _number(ctx, spec, "period", f"{field}.period", 1440, integer=True),
                _number(ctx, spec, "day_fraction", f"{field}.day_fraction", 0.5),
                _number(ctx, spec, "cloud", f"{field}.cloud", 0.0),
            )
    except ConfigError:
        raise
    except EhnodeError as exc:
        ctx.fail(field, str(exc))
    return src


def build_utility(ctx: _Ctx, spec: Any, gamma: float) -> UtilityFunction:
    if spec is None:
        return log_capacity_utility(gamma)
    if not isinstance(spec, dict):
        ctx.fail("utility", "must be an object with a 'kind'")
    kind = spec.get("kind", "log-capacity")
    try:
        if kind == "log-capacity":
            return log_capacity_utility(gamma)
        if kind == "rate":
            return rate_utility(gamma, spec.get("rate_utility", "identity"))
        if kind == "tabulated":
            return tabulated_utility(spec.get("knots"))
    except EhnodeError as exc:
        ctx.fail("utility", str(exc))
    ctx.fail("utility.kind", f"unknown utility kind {kind!r}")


def asym_var(source: pr.ProcessSource, seed: int = 0) -> float:
    """Declared asymptotic variance, or a batch-means estimate when absent."""
    if source.declared_asym_var is not None:
        return source.declared_asym_var
    return pr.estimate_asymptotic_stats(source, _VAR_HORIZON, _VAR_BATCH, seed).asym_var


def build_policy(
    ctx: _Ctx, spec: Any, mode: str, M: float, K: Optional[float],
    repl: pr.ProcessSource, arrivals: Optional[pr.ProcessSource], rate_fn: RatePowerFunction,
    lam_default: float = 0.0,
) -> Policy:
    if not isinstance(spec, dict):
        ctx.fail("policy", "must be an object with a 'kind'")
    kind = spec.get("kind")
    mu = _number(ctx, spec, "mu", "policy.mu", repl.declared_mean, positive=True)
    lam = arrivals.declared_mean if arrivals is not None else _number(
        ctx, spec, "lambda", "policy.lambda", lam_default, nonneg=True)
    try:
        if kind == SCHEME_B:
            s2 = _number(ctx, spec, "sigma_r2", "policy.sigma_r2", None, positive=True)
            if s2 is None:
                s2 = asym_var(repl)
            return make_scheme_b(mu, s2, _number(ctx, spec, "beta", "policy.beta", 2.0), M)
        if kind == SCHEME_Q:
            if mode != JOINT:
                ctx.fail("policy.kind", "scheme-q needs a data queue; use joint mode")
            s2 = _number(ctx, spec, "sigma_a2", "policy.sigma_a2", None, positive=True)
            if s2 is None:
                s2 = asym_var(arrivals)
            return make_scheme_q(mu, lam, s2, _number(ctx, spec, "beta_q", "policy.beta_q", 2.0), K, rate_fn)
        if kind == SCHEME_E:
            return make_scheme_e(mu, _number(ctx, spec, "delta_r", "policy.delta_r", required=True), lam, rate_fn)
        if kind == SCHEME_TO:
            return make_scheme_to(mu, _number(ctx, spec, "epsilon", "policy.epsilon", required=True), lam, rate_fn)
        if kind == CONSTANT:
            return make_constant(_number(ctx, spec, "draw", "policy.draw", mu, nonneg=True))
    except ConfigError:
        raise
    except StabilityError as exc:
        ctx.fail("arrivals.mean" if arrivals is not None else "policy", str(exc))
    except EhnodeError as exc:
        ctx.fail("policy", str(exc))
    ctx.fail("policy.kind", f"unknown policy kind {kind!r}")


@dataclass(frozen=True)
class RunSpec:
    sim: SimConfig
    n_replications: int
    trace_path: Optional[Path]
    trace_slots: int
    raw: dict
    hash: str


def with_mean(source: pr.ProcessSource, mean: float) -> pr.ProcessSource:
    """Source of the same family with a new long-run mean."""
    if source.kind == pr.GAUSSIAN and source.scale == 1.0:
        return pr.make_iid_gaussian(mean, source.params["var"])
    if source.kind == pr.POISSON and source.scale == 1.0:
        return pr.make_poisson(mean)
    return pr.with_scale(source, mean / source.declared_mean)


def build_run(
    raw: dict, text: str = "", source: str = "<config>", base_dir: Path = Path("."),
    seed: Optional[int] = None, overrides: Optional[dict] = None,
) -> RunSpec:
    """Validate a configuration document and build the simulation objects.

    ``overrides`` may set ``M``, ``K``, ``policy``, ``rho`` (arrival mean as a
    fraction of ``C(mu)``) or ``delta_r`` before validation.
    """
    ctx = _Ctx(text, source)
    raw = copy.deepcopy(raw)
    ov = dict(overrides or {})
    for key in ("M", "K", "policy"):
        if key in ov:
            raw[key] = ov.pop(key)
    mode = raw.get("mode", BATTERY_ONLY)
    if mode not in MODES:
        ctx.fail("mode", f"must be one of {MODES}, got {mode!r}")
    M = _number(ctx, raw, "M", "M", required=True, positive=True)
    joint = mode == JOINT
    K = _number(ctx, raw, "K", "K", required=joint, positive=True) if joint else None
    horizon = _number(ctx, raw, "horizon", "horizon", 1_000_000, positive=True, integer=True)
    warmup = _number(ctx, raw, "warmup", "warmup", None, nonneg=True, integer=True)
    n_batches = _number(ctx, raw, "n_batches", "n_batches", 20, integer=True)
    n_rep = _number(ctx, raw, "n_replications", "n_replications", 4, integer=True)
    if n_rep < 2:
        ctx.fail("n_replications", f"must be at least 2, got {n_rep}")
    cfg_seed = _number(ctx, raw, "seed", "seed", 0, nonneg=True, integer=True)
    if seed is not None:
        cfg_seed = int(seed)
    gamma = _number(ctx, raw, "gamma", "gamma", 1.0, positive=True)
    scale = _number(ctx, raw, "energy_unit_scale", "energy_unit_scale", 1.0, positive=True)
    rate_fn = RatePowerFunction(gamma)

    if "replenishment" not in raw:
        ctx.fail("replenishment", "is required")
    repl = build_source(ctx, raw["replenishment"], "replenishment", base_dir)
    if scale != 1.0:
        repl = pr.with_scale(repl, scale)
    arrivals = None
    if joint:
        if "arrivals" not in raw:
            ctx.fail("arrivals", "is required in joint mode")
        arrivals = build_source(ctx, raw["arrivals"], "arrivals", base_dir)
        if "rho" in ov:
            rho = ov.pop("rho")
            arrivals = with_mean(arrivals, rho * rate_fn.rate(repl.declared_mean))
    elif "rho" in ov:
        ctx.fail("sweep.axis", "a traffic-intensity sweep needs joint mode")
    policy_spec = raw.get("policy")
    if "delta_r" in ov:
        if not isinstance(policy_spec, dict) or policy_spec.get("kind") != SCHEME_E:
            ctx.fail("policy", "a delta_r sweep applies to scheme-e only")
        policy_spec = dict(policy_spec, delta_r=ov.pop("delta_r"))
    utility = build_utility(ctx, raw.get("utility"), gamma)
    if joint and repl.declared_mean is not None and arrivals.declared_mean is not None:
        cap = rate_fn.rate(repl.declared_mean)
        if not arrivals.declared_mean < cap:
            ctx.fail(
                "arrivals.mean",
                f"stability condition λ < C(µ) violated: lambda={arrivals.declared_mean:.6g}, "
                f"C(mu)={cap:.6g}",
            )
    policy = build_policy(ctx, policy_spec, mode, M, K, repl, arrivals, rate_fn)

    trace = raw.get("trace")
    trace_path, trace_slots = None, 10_000
    if trace is not None:
        if not isinstance(trace, dict) or not isinstance(trace.get("path"), str):
            ctx.fail("trace", "must be an object with a 'path'")
        trace_path = Path(trace["path"])
        trace_slots = _number(ctx, trace, "slots", "trace.slots", 10_000, positive=True, integer=True)
    try:
        sim = SimConfig(
            mode=mode, M=M, horizon=horizon, replenishment=repl, policy=policy,
            utility=utility, rate_fn=rate_fn, seed=cfg_seed, K=K, arrivals=arrivals,
            warmup=warmup, n_batches=n_batches,
            initial_battery=_number(ctx, raw, "initial_battery", "initial_battery", None, nonneg=True),
            initial_queue=_number(ctx, raw, "initial_queue", "initial_queue", None, nonneg=True),
        )
    except ConfigError:
        raise
    except ConfigurationError as exc:
        msg = str(exc)
        field, _, rest = msg.partition(": ")
        ctx.fail(field if rest else "document", rest or msg)
    return RunSpec(sim, n_rep, trace_path, trace_slots, raw, config_hash(raw))


def load_run(path, seed: Optional[int] = None) -> RunSpec:
    p = Path(path)
    if not p.is_file():
        raise ConfigError("document", f"config file not found: {p}")
    text = p.read_text()
    raw = parse_json(text, str(p))
    return build_run(raw, text, str(p), p.parent, seed)
