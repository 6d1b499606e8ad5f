"""Long-run estimation: single runs with batch means, and replications."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Optional

import numpy as np
from scipy import stats

from ..errors import ParameterError
from ..policies import JOINT
from ..processes import SampleStream
from . import kernel as kn
from .core import Metrics, SimConfig, emit_warnings, kernel_params

CHUNK = 1 << 18

TRACE_COLUMNS = ("slot", "B", "Q", "e", "service", "r", "a", "discharged", "lost")


def _half_width(values: np.ndarray) -> float:
    n = values.size
    if n < 2:
        return math.nan
    sd = float(np.std(values, ddof=1))
    if sd == 0.0:
        return 0.0
    return float(stats.t.ppf(0.975, n - 1)) * sd / math.sqrt(n)


def _cv_slope(cfg: SimConfig) -> tuple[float, float]:
    """Coefficient and mean of the control variate input."""
    if cfg.mode == JOINT:
        lam = cfg.arrivals.exact_mean
        return cfg.utility.rate_derivative(lam, cfg.rate_fn), lam
    mu = cfg.replenishment.exact_mean
    return cfg.utility.derivative(mu), mu


class _TraceWriter:
    def __init__(self, path, limit: int):
        self.fh = open(path, "w", newline="")
        self.w = csv.writer(self.fh)
        self.w.writerow(TRACE_COLUMNS)
        self.limit = int(limit)

    def write(self, start: int, rec: np.ndarray) -> None:
        n = min(rec.shape[0], self.limit - start)
        for i in range(n):
            row = rec[i]
            self.w.writerow(
                [start + i]
                + [repr(float(row[j])) for j in range(kn.R_DISCHARGED)]
                + [int(row[kn.R_DISCHARGED]), repr(float(row[kn.R_LOST]))]
            )

    def close(self) -> None:
        self.fh.close()


def run(
    cfg: SimConfig,
    seed_sequence: Optional[np.random.SeedSequence] = None,
    trace_path=None,
    trace_slots: int = 10_000,
    warn: bool = True,
) -> Metrics:
    """Simulate ``cfg.horizon`` slots and estimate long-run metrics over the
    slots after warmup, with batch-means half-widths."""
    if warn:
        emit_warnings(cfg)
    ss = seed_sequence if seed_sequence is not None else np.random.SeedSequence(cfg.seed)
    r_ss, a_ss = ss.spawn(2)
    joint = cfg.mode == JOINT
    rstream = SampleStream(cfg.replenishment, r_ss)
    astream = SampleStream(cfg.arrivals, a_ss) if joint else None
    kp = kernel_params(cfg)
    args = kp.args()
    zeros = np.zeros(CHUNK)
    empty_rec = np.zeros((1, kn.N_REC))
    tracer = _TraceWriter(trace_path, trace_slots) if trace_path is not None else None

    B, Q = cfg.battery0, cfg.queue0
    slot = 0

    def advance(n: int, acc: np.ndarray) -> None:
        nonlocal B, Q, slot
        r = rstream.block(n)
        a = astream.block(n) if joint else zeros[:n]
        if tracer is not None and slot < tracer.limit:
            rec = np.zeros((n, kn.N_REC))
            B, Q = kn.advance(B, Q, r, a, *args, acc, rec, True)
            tracer.write(slot, rec)
        else:
            B, Q = kn.advance(B, Q, r, a, *args, acc, empty_rec, False)
        slot += n

    def span(n: int, acc: np.ndarray) -> None:
        while n > 0:
            k = min(n, CHUNK)
            advance(k, acc)
            n -= k

    try:
        warm = cfg.effective_warmup
        span(warm, np.zeros(kn.N_ACC))
        window = cfg.horizon - warm
        nb = int(cfg.n_batches)
        edges = [window * k // nb for k in range(nb + 1)]
        accs = np.zeros((nb, kn.N_ACC))
        lens = np.zeros(nb)
        b_edges = np.zeros(nb + 1)
        q_edges = np.zeros(nb + 1)
        b_edges[0], q_edges[0] = B, Q
        for j in range(nb):
            n = edges[j + 1] - edges[j]
            span(n, accs[j])
            lens[j] = n
            b_edges[j + 1], q_edges[j + 1] = B, Q
    finally:
        if tracer is not None:
            tracer.close()

    def total(col: int) -> float:
        return math.fsum(accs[:, col])

    def rate(col: int) -> tuple[float, float]:
        return total(col) / window, _half_width(accs[:, col] / lens)

    p_dis, p_dis_hw = rate(kn.A_DISCHARGE)
    p_over, p_over_hw = rate(kn.A_OVERFLOW)
    util, util_hw = rate(kn.A_UTILITY)
    energy, energy_hw = rate(kn.A_ENERGY)
    if joint:
        p_loss, p_loss_hw = rate(kn.A_LOSS)
        inputs = accs[:, kn.A_ARRIVE]
        level = q_edges
    else:
        p_loss = p_loss_hw = None
        inputs = accs[:, kn.A_REPLENISH]
        level = b_edges
    coef, target = _cv_slope(cfg)
    drift = inputs / lens - target + (level[:-1] - level[1:]) / lens
    cv_batches = accs[:, kn.A_UTILITY] / lens - coef * drift
    cv_total = util - coef * (math.fsum(inputs) / window - target + (level[0] - level[-1]) / window)
    return Metrics(
        p_discharge=p_dis,
        p_discharge_hw=p_dis_hw,
        p_loss=p_loss,
        p_loss_hw=p_loss_hw,
        avg_utility=util,
        avg_utility_hw=util_hw,
        mean_energy=energy,
        mean_energy_hw=energy_hw,
        n_batches=nb,
        avg_utility_cv=float(cv_total),
        avg_utility_cv_hw=_half_width(cv_batches),
        p_overflow=p_over,
        p_overflow_hw=p_over_hw,
        p_brownout=total(kn.A_BROWNOUT) / window,
        mean_service=total(kn.A_SERVICE) / window,
        slots=window,
        energy_in=total(kn.A_REPLENISH),
        energy_used=total(kn.A_ENERGY),
        energy_spilled=total(kn.A_SPILL),
        battery_start=float(b_edges[0]),
        battery_end=float(b_edges[-1]),
    )


_POOLED = (
    "p_discharge", "avg_utility", "mean_energy", "avg_utility_cv", "p_overflow",
)


def run_batched(cfg: SimConfig, n_replications: int, threads: int = 1, warn: bool = True) -> Metrics:
    """Independent replications with seeds spawned from ``cfg.seed``.

    Point estimates are the means of the per-replication estimates and the
    half-widths come from their spread (Student t, 95%). Replications may run
    on several threads; results are combined in replication order.
    """
    if int(n_replications) != n_replications or n_replications < 2:
        raise ParameterError(f"n_replications must be an integer >= 2, got {n_replications}")
    if warn:
        emit_warnings(cfg)
    children = np.random.SeedSequence(cfg.seed).spawn(int(n_replications))

    def one(i: int) -> Metrics:
        return run(cfg, seed_sequence=children[i], warn=False)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=int(threads)) as pool:
            reps = list(pool.map(one, range(len(children))))
    else:
        reps = [one(i) for i in range(len(children))]
    return combine(reps)


def combine(reps: list[Metrics]) -> Metrics:
    """Pool replications: mean of estimates, t half-width of their spread."""

    def pool(name: str) -> tuple[float, float]:
        v = np.array([getattr(m, name) for m in reps], dtype=float)
        return math.fsum(v) / v.size, _half_width(v)

    vals = {name: pool(name) for name in _POOLED}
    if reps[0].p_loss is not None:
        p_loss, p_loss_hw = pool("p_loss")
    else:
        p_loss = p_loss_hw = None
    n = len(reps)
    return Metrics(
        p_discharge=vals["p_discharge"][0],
        p_discharge_hw=vals["p_discharge"][1],
        p_loss=p_loss,
        p_loss_hw=p_loss_hw,
        avg_utility=vals["avg_utility"][0],
        avg_utility_hw=vals["avg_utility"][1],
        mean_energy=vals["mean_energy"][0],
        mean_energy_hw=vals["mean_energy"][1],
        n_batches=n,
        avg_utility_cv=vals["avg_utility_cv"][0],
        avg_utility_cv_hw=vals["avg_utility_cv"][1],
        p_overflow=vals["p_overflow"][0],
        p_overflow_hw=vals["p_overflow"][1],
        p_brownout=math.fsum(m.p_brownout for m in reps) / n,
        mean_service=math.fsum(m.mean_service for m in reps) / n,
        slots=sum(m.slots for m in reps),
        energy_in=math.fsum(m.energy_in for m in reps),
        energy_used=math.fsum(m.energy_used for m in reps),
        energy_spilled=math.fsum(m.energy_spilled for m in reps),
        battery_start=reps[0].battery_start,
        battery_end=reps[-1].battery_end,
    )
