"""Replenishment and arrival processes.

A :class:`ProcessSource` is an immutable description. Sampling state lives in
a :class:`SampleStream`, which owns its random generators and cursors and is
meant to be used by a single thread.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Mapping

import numba
import numpy as np

from .errors import EstimationError, InputError, ParameterError, UnsupportedError

GAUSSIAN = "iid-gaussian-truncated"
MMPP = "mmpp"
TRACE = "trace-replay"
DIURNAL = "diurnal-synthetic"
POISSON = "iid-poisson"
DISCRETE = "iid-discrete"

KINDS = (GAUSSIAN, MMPP, TRACE, DIURNAL, POISSON, DISCRETE)

_ROW_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class ProcessSource:
    """Description of a nonnegative ergodic per-slot process.

    ``params`` holds the kind-specific parameters. Every kind carries a
    ``scale`` entry that multiplies each emitted sample; ``declared_mean`` and
    ``declared_asym_var`` already include it.
    """

    kind: str
    params: Mapping[str, Any]
    declared_mean: float | None
    declared_asym_var: float | None = None

    @property
    def scale(self) -> float:
        return float(self.params.get("scale", 1.0))

    @property
    def exact_mean(self) -> float:
        """Mean of the emitted samples, including the effect of the 0 clamp."""
        if self.kind == GAUSSIAN:
            m = self.params["mean"]
            sd = math.sqrt(self.params["var"])
            if sd == 0.0:
                return self.scale * max(m, 0.0)
            z = m / sd
            cdf = 0.5 * math.erfc(-z / math.sqrt(2.0))
            pdf = math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
            return self.scale * (m * cdf + sd * pdf)
        if self.declared_mean is None:
            raise EstimationError(f"{self.kind} source has no declared mean")
        return self.declared_mean


@dataclass(frozen=True)
class AsymStats:
    mean: float
    asym_var: float
    n_samples: int
    batch_len: int


def make_iid_gaussian(mean: float, var: float) -> ProcessSource:
    """I.i.d. Gaussian samples clamped below at zero.

    ``var == 0`` gives the constant process ``mean``. The declared statistics
    are the pre-clamp values, which is accurate when ``mean >= 3 * sqrt(var)``;
    a warning is emitted otherwise.
    """
    mean = float(mean)
    var = float(var)
    if not mean > 0.0 or not math.isfinite(mean):
        raise ParameterError(f"gaussian mean must be positive, got {mean}")
    if not var >= 0.0 or not math.isfinite(var):
        raise ParameterError(f"gaussian variance must be nonnegative, got {var}")
    if mean < 3.0 * math.sqrt(var):
        warnings.warn(
            f"gaussian mean {mean} is below 3 standard deviations; the clamp at 0 "
            "biases the declared statistics",
            stacklevel=2,
        )
    return ProcessSource(GAUSSIAN, {"mean": mean, "var": var, "scale": 1.0}, mean, var)


def make_poisson(mean: float) -> ProcessSource:
    """I.i.d. Poisson counts."""
    mean = float(mean)
    if not mean > 0.0 or not math.isfinite(mean):
        raise ParameterError(f"poisson mean must be positive, got {mean}")
    return ProcessSource(POISSON, {"mean": mean, "scale": 1.0}, mean, mean)


def make_discrete(values, probs) -> ProcessSource:
    """I.i.d. draws from a finite set of nonnegative values."""
    v = np.asarray(values, dtype=float)
    p = np.asarray(probs, dtype=float)
    if v.ndim != 1 or v.size == 0 or v.shape != p.shape:
        raise ParameterError("discrete source needs equal-length nonempty values and probs")
    if np.any(v < 0) or not np.all(np.isfinite(v)):
        raise ParameterError("discrete values must be finite and nonnegative")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ParameterError("discrete probabilities must be nonnegative and sum to 1")
    if np.unique(v).size != v.size:
        raise ParameterError("discrete values must be distinct")
    p = p / p.sum()
    mean = float(np.dot(p, v))
    var = float(np.dot(p, (v - mean) ** 2))
    params = {"values": tuple(v.tolist()), "probs": tuple(p.tolist()), "scale": 1.0}
    return ProcessSource(DISCRETE, params, mean, var)


def _mmpp_stationary(p01: float, p10: float) -> float:
    return p10 / (p01 + p10)


def sticky_transition(stationary_p: float, self_transition: float) -> np.ndarray:
    """Two-state transition matrix with state 0 held with ``self_transition``
    and stationary probability ``stationary_p`` on state 0."""
    if not 0.0 < stationary_p < 1.0:
        raise ParameterError("stationary probability must lie in (0, 1)")
    if not 0.0 <= self_transition < 1.0:
        raise ParameterError("self transition must lie in [0, 1)")
    p01 = 1.0 - self_transition
    p10 = stationary_p * p01 / (1.0 - stationary_p)
    if p10 > 1.0:
        raise ParameterError("no two-state chain has these parameters")
    return np.array([[self_transition, p01], [p10, 1.0 - p10]])


def make_mmpp(transition, state_means, initial_state: int = 0) -> ProcessSource:
    """Two-state Markov-modulated Poisson process.

    Each slot the hidden chain takes one step and then emits a Poisson count
    with the mean of the state it landed in.
    """
    P = np.asarray(transition, dtype=float)
    means = np.asarray(state_means, dtype=float)
    if P.shape != (2, 2) or means.shape != (2,):
        raise ParameterError("mmpp needs a 2x2 transition matrix and two state means")
    if np.any(P < 0.0) or np.any(P > 1.0) or np.any(np.abs(P.sum(axis=1) - 1.0) > _ROW_TOL):
        raise ParameterError("mmpp transition matrix must be row-stochastic")
    if np.any(means < 0.0) or not np.all(np.isfinite(means)):
        raise ParameterError("mmpp state means must be finite and nonnegative")
    if initial_state not in (0, 1):
        raise ParameterError("mmpp initial state must be 0 or 1")
    p01, p10 = float(P[0, 1]), float(P[1, 0])
    if p01 + p10 == 0.0:
        raise ParameterError("mmpp chain is reducible; its long-run mean is undefined")
    pi0 = _mmpp_stationary(p01, p10)
    m0, m1 = float(means[0]), float(means[1])
    mean = pi0 * m0 + (1.0 - pi0) * m1
    # Poisson noise plus the modulating chain's contribution; the second
    # eigenvalue of a 2-state chain is 1 - p01 - p10.
    lam2 = 1.0 - p01 - p10
    chain_var = pi0 * (1.0 - pi0) * (m0 - m1) ** 2
    asym_var = mean + (chain_var * (1.0 + lam2) / (1.0 - lam2) if chain_var > 0 else 0.0)
    params = {
        "p01": p01,
        "p10": p10,
        "means": (m0, m1),
        "initial_state": int(initial_state),
        "scale": 1.0,
    }
    return ProcessSource(MMPP, params, mean, asym_var)


def read_trace(path) -> np.ndarray:
    """Read a one-value-per-line trace; ``#`` comments and a header line are skipped."""
    p = Path(path)
    if not p.is_file():
        raise InputError(f"trace file not found: {p}")
    values = []
    seen_data = False
    with p.open() as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            try:
                x = float(line)
            except ValueError:
                if not seen_data and not values:
                    seen_data = True  # header row
                    continue
                raise InputError(f"{p}:{lineno}: not a number: {line!r}") from None
            seen_data = True
            if not math.isfinite(x) or x < 0.0:
                raise InputError(f"{p}:{lineno}: trace entries must be finite and nonnegative, got {x}")
            values.append(x)
    if not values:
        raise InputError(f"trace file is empty: {p}")
    arr = np.asarray(values, dtype=float)
    arr.setflags(write=False)
    return arr


def make_trace(path, scale: float = 1.0) -> ProcessSource:
    """Cyclic replay of a trace file multiplied by ``scale``."""
    scale = float(scale)
    if not scale > 0.0 or not math.isfinite(scale):
        raise ParameterError(f"trace scale must be positive, got {scale}")
    values = read_trace(path)
    mean = scale * math.fsum(values) / values.size
    return ProcessSource(TRACE, {"path": str(path), "values": values, "scale": scale}, mean, None)


def diurnal_profile(peak: float, period: int = 1440, day_fraction: float = 0.5) -> np.ndarray:
    """Half-sine daylight profile followed by zero night, one value per slot."""
    if not peak > 0.0:
        raise ParameterError("diurnal peak must be positive")
    if int(period) != period or period < 2:
        raise ParameterError("diurnal period must be an integer >= 2")
    if not 0.0 < day_fraction <= 1.0:
        raise ParameterError("day fraction must lie in (0, 1]")
    period = int(period)
    day = max(1, int(round(day_fraction * period)))
    phase = np.arange(period, dtype=float)
    prof = np.where(phase < day, peak * np.sin(np.pi * phase / day), 0.0)
    return np.maximum(prof, 0.0)


def write_diurnal_trace(path, peak: float, period: int = 1440, day_fraction: float = 0.5) -> Path:
    prof = diurnal_profile(peak, period, day_fraction)
    p = Path(path)
    with p.open("w") as fh:
        fh.write(f"# diurnal profile peak={peak} period={period} day_fraction={day_fraction}\n")
        for x in prof:
            fh.write(f"{float(x)!r}\n")
    return p


def make_diurnal(
    peak: float, period: int = 1440, day_fraction: float = 0.5, cloud: float = 0.0
) -> ProcessSource:
    """Synthetic solar-like source.

    The deterministic daily profile is multiplied by an i.i.d. factor drawn
    uniformly from ``[1 - cloud, 1 + cloud]``, so ``cloud = 0`` is noiseless.
    """
    if not 0.0 <= cloud <= 1.0:
        raise ParameterError("cloud factor must lie in [0, 1]")
    prof = diurnal_profile(peak, period, day_fraction)
    prof.setflags(write=False)
    mean = math.fsum(prof) / prof.size
    # the periodic part has zero asymptotic variance; only the noise remains
    asym_var = cloud * cloud / 3.0 * math.fsum(prof * prof) / prof.size
    params = {
        "peak": float(peak),
        "period": int(period),
        "day_fraction": float(day_fraction),
        "cloud": float(cloud),
        "profile": prof,
        "scale": 1.0,
    }
    return ProcessSource(DIURNAL, params, mean, asym_var)


def with_scale(source: ProcessSource, factor: float) -> ProcessSource:
    """Same process with every sample multiplied by ``factor``."""
    factor = float(factor)
    if not factor > 0.0 or not math.isfinite(factor):
        raise ParameterError(f"scale factor must be positive, got {factor}")
    params = dict(source.params)
    params["scale"] = source.scale * factor
    mean = None if source.declared_mean is None else source.declared_mean * factor
    var = None if source.declared_asym_var is None else source.declared_asym_var * factor**2
    return replace(source, params=params, declared_mean=mean, declared_asym_var=var)


@numba.njit(cache=True, nogil=True)
def _mmpp_walk(u, p01, p10, state):
    out = np.empty(u.shape[0], dtype=np.int8)
    for i in range(u.shape[0]):
        if state == 0:
            if u[i] < p01:
                state = 1
        else:
            if u[i] < p10:
                state = 0
        out[i] = state
    return out, state


class SampleStream:
    """Per-run sampling context for one source.

    ``next_sample`` and ``block`` draw from the same stream: ``n`` successive
    single draws equal one block of ``n``.
    """

    def __init__(self, source: ProcessSource, seed=0):
        self.source = source
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        emit_ss, chain_ss = ss.spawn(2)
        self._rng = np.random.Generator(np.random.PCG64(emit_ss))
        self._chain_rng = np.random.Generator(np.random.PCG64(chain_ss))
        self._cursor = 0
        self._state = int(source.params.get("initial_state", 0))
        self._scale = source.scale

    def next_sample(self) -> float:
        return float(self.block(1)[0])

    def block(self, n: int) -> np.ndarray:
        src = self.source
        kind = src.kind
        p = src.params
        if kind == GAUSSIAN:
            if p["var"] == 0.0:
                # no generator state is consumed for the constant process
                out = np.full(n, max(p["mean"], 0.0))
            else:
                out = self._rng.normal(p["mean"], math.sqrt(p["var"]), n)
                np.maximum(out, 0.0, out=out)
        elif kind == POISSON:
            out = self._rng.poisson(p["mean"], n).astype(float)
        elif kind == DISCRETE:
            out = self._rng.choice(np.asarray(p["values"]), size=n, p=np.asarray(p["probs"]))
        elif kind == MMPP:
            u = self._chain_rng.random(n)
            states, self._state = _mmpp_walk(u, p["p01"], p["p10"], self._state)
            out = self._rng.poisson(np.asarray(p["means"])[states]).astype(float)
        elif kind in (TRACE, DIURNAL):
            vals = p["values"] if kind == TRACE else p["profile"]
            idx = (self._cursor + np.arange(n)) % vals.size
            self._cursor = (self._cursor + n) % vals.size
            out = vals[idx]
            if kind == DIURNAL and p["cloud"] > 0.0:
                c = p["cloud"]
                out = out * self._rng.uniform(1.0 - c, 1.0 + c, n)
        else:
            raise ParameterError(f"unknown source kind {kind!r}")
        if self._scale != 1.0:
            out = out * self._scale
        return np.asarray(out, dtype=float)


def open_stream(source: ProcessSource, seed=0) -> SampleStream:
    return SampleStream(source, seed)


def next_sample(source: ProcessSource, rng_state: SampleStream) -> float:
    """Draw one slot's value from ``rng_state``, which must belong to ``source``."""
    if rng_state.source is not source:
        raise ParameterError("sampling state was opened for a different source")
    return rng_state.next_sample()


def estimate_asymptotic_stats(
    source: ProcessSource, horizon: int, batch_len: int, seed=0
) -> AsymStats:
    """Batch-means estimate of the mean and asymptotic variance.

    Only whole batches are used. ``asym_var`` is ``batch_len`` times the
    sample variance of the batch means.
    """
    horizon = int(horizon)
    batch_len = int(batch_len)
    if batch_len < 1:
        raise EstimationError("batch_len must be at least 1")
    if horizon < 100 * batch_len:
        raise EstimationError(
            f"horizon {horizon} is shorter than 100 batches of {batch_len} slots"
        )
    n_batches = horizon // batch_len
    stream = SampleStream(source, seed)
    batch_means = np.empty(n_batches)
    per_chunk = max(1, (1 << 20) // batch_len)
    done = 0
    while done < n_batches:
        k = min(per_chunk, n_batches - done)
        x = stream.block(k * batch_len).reshape(k, batch_len)
        batch_means[done : done + k] = x.mean(axis=1)
        done += k
    mean = float(batch_means.mean())
    asym_var = float(batch_len * batch_means.var(ddof=1))
    return AsymStats(mean, max(asym_var, 0.0), n_batches * batch_len, batch_len)


def analytic_log_mgf(source: ProcessSource, s: float) -> float:
    """Closed-form asymptotic log moment generating function at ``s``."""
    return log_mgf_function(source)(s)


def log_mgf_function(source: ProcessSource) -> Callable[[float], float]:
    f = source.scale
    p = source.params
    if source.kind == GAUSSIAN:
        m, v = source.declared_mean, source.declared_asym_var
        return lambda s: m * s + 0.5 * v * s * s
    if source.kind == POISSON or (source.kind == MMPP and p["means"][0] == p["means"][1]):
        c = p["mean"] if source.kind == POISSON else p["means"][0]
        return lambda s: c * math.expm1(f * s)
    if source.kind == DISCRETE:
        vals = np.asarray(p["values"]) * f
        logp = np.log(np.asarray(p["probs"]))

        def lmgf(s: float) -> float:
            z = logp + s * vals
            zmax = z.max()
            return float(zmax + math.log(np.exp(z - zmax).sum()))

        return lmgf
    raise UnsupportedError(
        f"no closed-form log-MGF for {source.kind} sources; use empirical_log_mgf"
    )
