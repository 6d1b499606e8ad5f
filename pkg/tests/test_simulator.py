import math
import warnings

import numpy as np
import pytest

from ehnode import channel as ch
from ehnode import policies as pol
from ehnode import processes as pr
from ehnode.errors import ConfigurationError, DecompositionError, ParameterError, ResourceError
from ehnode.simulator import (
    LargeBatteryWarning, NodeState, RareEventWarning, SimConfig, config_warnings,
    exact_chain_analysis, run, run_batched, step,
)
from ehnode.simulator import kernel as kn
from ehnode.simulator.core import kernel_params

RF = ch.RatePowerFunction(1.0)
U = ch.log_capacity_utility(1.0)


def battery_cfg(policy, src, M, horizon=10**5, **kw):
    return SimConfig(pol.BATTERY_ONLY, M, horizon, src, policy, kw.pop("utility", U), **kw)


def joint_cfg(policy, src, arr, M, K, horizon=10**5, **kw):
    return SimConfig(pol.JOINT, M, horizon, src, policy, kw.pop("utility", U), K=K, arrivals=arr, **kw)


# --- step examples ---------------------------------------------------------

def test_step_exact_depletion():
    cfg = battery_cfg(pol.make_constant(5), pr.make_iid_gaussian(5, 0), 10)
    s, rec = step(NodeState(5.0), cfg, 0.0)
    assert s.battery == 0.0
    assert rec.discharged and not rec.brownout
    assert rec.e_consumed == 5.0
    assert rec.utility == U(5.0)


def test_step_overflow():
    cfg = battery_cfg(pol.make_constant(1), pr.make_iid_gaussian(5, 0), 10)
    s, rec = step(NodeState(9.0), cfg, 3.0)
    assert s.battery == 10.0
    assert rec.battery_overflowed and not rec.discharged
    assert 9.0 + 3.0 - rec.e_consumed - s.battery == 1.0


def test_step_data_loss():
    cfg = joint_cfg(pol.make_constant(1), pr.make_iid_gaussian(5, 0), pr.make_poisson(1), 100, 10)
    s, rec = step(NodeState(50.0, 10.0), cfg, 0.0, 4.0)
    assert rec.service == 1.0
    assert s.queue == 10.0
    assert rec.data_lost == 3.0


def test_step_brownout():
    cfg = battery_cfg(pol.make_constant(4), pr.make_iid_gaussian(5, 0), 10)
    s, rec = step(NodeState(1.0), cfg, 2.0)
    assert rec.brownout and rec.discharged
    assert rec.utility == 0.0
    assert rec.e_consumed == 3.0
    assert s.battery == 0.0


def test_step_queue_cap_keeps_energy():
    cfg = joint_cfg(pol.make_constant(7), pr.make_iid_gaussian(5, 0), pr.make_poisson(1), 100, 10)
    s, rec = step(NodeState(50.0, 1.0), cfg, 0.0, 1.0)
    assert rec.service == 2.0
    assert rec.e_consumed == 3.0
    assert s.battery == 47.0
    assert s.queue == 0.0


def test_step_scheme_q_empty_queue():
    q = pol.make_scheme_q(31, 3, 1, 2, 1000, RF)
    cfg = joint_cfg(q, pr.make_iid_gaussian(31, 0), pr.make_poisson(3), 1e6, 1000)
    s, rec = step(NodeState(100.0, 0.0), cfg, 0.0, 0.0)
    assert rec.e_consumed == 0.0 and rec.service == 0.0
    assert s.battery == 100.0


# --- kernel vs step --------------------------------------------------------

def kernel_cases():
    tab = ch.tabulated_utility([[0, 0], [1, 1], [4, 2], [12, 2.5]])
    g = pr.make_iid_gaussian(10, 4)
    yield battery_cfg(pol.make_scheme_b(10, 4, 2, 30), g, 30)
    yield battery_cfg(pol.make_scheme_e(10, 0.5, 0, RF), g, 20, utility=tab)
    yield battery_cfg(pol.make_scheme_to(10, 0.5, 0, RF), g, 25)
    yield battery_cfg(pol.make_constant(10.2), g, 15, utility=ch.rate_utility(1, "log"))
    arr = pr.make_poisson(3.0)
    yield joint_cfg(pol.make_scheme_q(10, 2.5, 1, 2, 12, RF), g, arr, 40, 12)
    yield joint_cfg(pol.make_scheme_b(10, 4, 2, 30), g, arr, 30, 8, utility=ch.rate_utility(1, "log"))
    yield joint_cfg(pol.make_scheme_e(10, 0.5, 3, RF), g, arr, 20, 6, utility=tab)
    yield joint_cfg(pol.make_scheme_to(10, 0.5, 3, RF), g, arr, 20, 6)


@pytest.mark.parametrize("cfg", list(kernel_cases()))
def test_kernel_matches_step_bit_for_bit(cfg):
    n = 20000
    rng = np.random.default_rng(1)
    r = np.maximum(rng.normal(10, 2, n), 0.0)
    r[::97] = 0.0
    a = rng.poisson(3.0, n).astype(float)
    if cfg.mode != pol.JOINT:
        a[:] = 0.0
    kp = kernel_params(cfg)
    acc = np.zeros(kn.N_ACC)
    rec = np.zeros((n, kn.N_REC))
    B, Q = kn.advance(cfg.battery0, cfg.queue0, r, a, *kp.args(), acc, rec, True)

    s = NodeState(cfg.battery0, cfg.queue0)
    n_dis = n_loss = n_over = n_brown = 0
    util = []
    for i in range(n):
        assert rec[i, kn.R_B] == s.battery
        assert rec[i, kn.R_Q] == s.queue
        s, sr = step(s, cfg, r[i], a[i], kp)
        assert rec[i, kn.R_E] == sr.e_consumed
        assert rec[i, kn.R_SERVICE] == sr.service
        assert rec[i, kn.R_DISCHARGED] == float(sr.discharged)
        assert rec[i, kn.R_LOST] == sr.data_lost
        n_dis += sr.discharged
        n_loss += sr.data_lost > 0
        n_over += sr.battery_overflowed
        n_brown += sr.brownout
        util.append(sr.utility)
    assert (B, Q) == (s.battery, s.queue)
    assert acc[kn.A_DISCHARGE] == n_dis
    assert acc[kn.A_LOSS] == n_loss
    assert acc[kn.A_OVERFLOW] == n_over
    assert acc[kn.A_BROWNOUT] == n_brown
    assert acc[kn.A_UTILITY] == pytest.approx(math.fsum(util), rel=1e-13)
    assert acc[kn.A_REPLENISH] == pytest.approx(math.fsum(r), rel=1e-13)


def test_decide_agrees_with_step():
    rng = np.random.default_rng(7)
    for cfg in kernel_cases():
        for _ in range(500):
            B = float(rng.uniform(0, cfg.M))
            Q = float(rng.uniform(0, cfg.K)) if cfg.mode == pol.JOINT else 0.0
            r = float(rng.uniform(0, 15))
            a = float(rng.poisson(3)) if cfg.mode == pol.JOINT else 0.0
            e = pol.decide(cfg.policy, NodeState(B, Q), cfg.rate_fn, cfg.mode, r, a)
            _, rec = step(NodeState(B, Q), cfg, r, a)
            if rec.brownout:
                # the request exceeded the energy at hand
                assert pol.target_draw(cfg.policy, NodeState(B, Q), cfg.rate_fn, cfg.mode, r, a) > B + r
                assert rec.e_consumed == B + r
            else:
                assert rec.e_consumed == e


# --- invariants over full runs ---------------------------------------------

@pytest.mark.parametrize("cfg", list(kernel_cases()))
def test_state_clamps_and_conservation(cfg, tmp_path):
    path = tmp_path / "trace.csv"
    m = run(cfg.with_(horizon=200_000, warmup=0), trace_path=path, trace_slots=200_000, warn=False)
    data = np.genfromtxt(path, delimiter=",", names=True)
    assert np.all((data["B"] >= 0) & (data["B"] <= cfg.M))
    if cfg.mode == pol.JOINT:
        assert np.all((data["Q"] >= 0) & (data["Q"] <= cfg.K))
        assert np.all(data["service"] <= data["Q"] + data["a"] + 1e-12)
    assert np.all(data["e"] >= 0) and np.all(data["lost"] >= 0)
    # energy conservation with the spill and the final level
    assert m.energy_used <= m.energy_in + m.battery_start + 1e-6 * m.energy_in
    balance = m.battery_start + m.energy_in - m.energy_used - m.energy_spilled - m.battery_end
    assert abs(balance) <= 1e-6 * m.energy_in
    for p in (m.p_discharge, m.p_overflow, m.p_brownout):
        assert 0.0 <= p <= 1.0
    if m.p_loss is not None:
        assert 0.0 <= m.p_loss <= 1.0


def test_trace_columns(tmp_path):
    cfg = next(iter(kernel_cases()))
    path = tmp_path / "t.csv"
    run(cfg.with_(horizon=10_000, warmup=0), trace_path=path, trace_slots=50, warn=False)
    lines = path.read_text().splitlines()
    assert lines[0] == "slot,B,Q,e,service,r,a,discharged,lost"
    assert len(lines) == 51
    assert lines[1].startswith("0,15.0,")


# --- run --------------------------------------------------------------------

def test_run_constant_has_no_discharge():
    for M in (1, 10, 1000):
        cfg = battery_cfg(pol.make_constant(10), pr.make_iid_gaussian(10, 0), M)
        m = run(cfg)
        assert m.p_discharge == 0.0
        assert m.avg_utility == pytest.approx(U(10.0), rel=1e-14)
        assert m.p_discharge_hw == 0.0
        assert m.mean_energy == pytest.approx(10.0, rel=1e-14)


def test_run_scheme_e_diffusion_band():
    # diffusion value exp(-10); the band is [1/3, 3] of it
    src = pr.make_iid_gaussian(10, 4)
    cfg = battery_cfg(pol.make_scheme_e(10, 0.5, 0, RF), src, 40, horizon=10**7)
    m = run(cfg, warn=False)
    ratio = m.p_discharge / math.exp(-10)
    print(f"scheme E, M=40: p_discharge={m.p_discharge:.4e} ratio to exp(-10)={ratio:.3f}")
    assert 1 / 3 <= ratio <= 3


def test_run_deterministic():
    cfg = battery_cfg(pol.make_scheme_e(10, 0.5, 0, RF), pr.make_iid_gaussian(10, 4), 40,
                      horizon=10**6, seed=42)
    assert run(cfg, warn=False) == run(cfg, warn=False)
    assert run(cfg, warn=False) != run(cfg.with_(seed=43), warn=False)


def test_run_half_widths_nonnegative():
    cfg = next(iter(kernel_cases()))
    m = run(cfg, warn=False)
    assert m.p_discharge_hw >= 0 and m.avg_utility_hw >= 0 and m.mean_energy_hw >= 0
    assert m.n_batches == 20


def test_run_warmup_default():
    cfg = battery_cfg(pol.make_constant(1), pr.make_iid_gaussian(1, 0), 4, horizon=10**7)
    assert cfg.effective_warmup == 100_000
    assert cfg.with_(horizon=1000).effective_warmup == 100
    assert run(cfg.with_(horizon=1000)).slots == 900


# --- configuration ----------------------------------------------------------

def test_config_errors_name_field():
    g = pr.make_iid_gaussian(10, 1)
    with pytest.raises(ConfigurationError, match="^M:"):
        battery_cfg(pol.make_constant(1), g, -1)
    with pytest.raises(ConfigurationError, match="^K:"):
        joint_cfg(pol.make_constant(1), g, pr.make_poisson(1), 10, 0)
    with pytest.raises(ConfigurationError, match="^warmup:"):
        battery_cfg(pol.make_constant(1), g, 10, horizon=100, warmup=100)
    with pytest.raises(ConfigurationError, match="^policy:"):
        battery_cfg(pol.make_scheme_b(10, 1, 2, 100), g, 50)
    with pytest.raises(ConfigurationError, match="^policy:"):
        battery_cfg(pol.make_scheme_q(10, 2, 1, 2, 10, RF), g, 50)
    with pytest.raises(ConfigurationError, match="^initial_battery:"):
        battery_cfg(pol.make_constant(1), g, 10, initial_battery=11)


def test_warnings():
    g = pr.make_iid_gaussian(10, 4)
    cfg = joint_cfg(pol.make_scheme_e(10, 0.5, 3, RF), g, pr.make_poisson(3), 60, 10, horizon=10**5)
    msgs = config_warnings(cfg)
    assert any("large battery" in s for s in msgs)
    assert any("fewer than 50" in s for s in msgs)
    with pytest.warns(LargeBatteryWarning), pytest.warns(RareEventWarning):
        run(cfg)
    ok = joint_cfg(pol.make_scheme_e(10, 0.5, 3, RF), g, pr.make_poisson(3), 1e4, 10, horizon=10**5)
    assert not any("large battery" in s for s in config_warnings(ok))


# --- replications -------------------------------------------------------------

def test_run_batched_zero_variance():
    cfg = battery_cfg(pol.make_constant(10), pr.make_iid_gaussian(10, 0), 10, horizon=10**4)
    m = run_batched(cfg, 2)
    assert m.p_discharge == 0.0
    assert m.avg_utility_hw == 0.0 and m.p_discharge_hw == 0.0 and m.mean_energy_hw == 0.0


def test_run_batched_is_mean_of_replications():
    cfg = battery_cfg(pol.make_scheme_e(10, 0.5, 0, RF), pr.make_iid_gaussian(10, 4), 20,
                      horizon=2 * 10**5, seed=5)
    m = run_batched(cfg, 4, warn=False)
    kids = np.random.SeedSequence(5).spawn(4)
    reps = [run(cfg, seed_sequence=k, warn=False) for k in kids]
    for name in ("p_discharge", "avg_utility", "mean_energy"):
        mean = sum(getattr(r, name) for r in reps) / 4
        assert abs(getattr(m, name) - mean) < 1e-12
    assert m.n_batches == 4


def test_run_batched_threads_identical():
    cfg = joint_cfg(pol.make_scheme_q(10, 2.5, 1, 2, 12, RF), pr.make_iid_gaussian(10, 4),
                    pr.make_poisson(3), 400, 12, horizon=2 * 10**5, seed=9)
    assert run_batched(cfg, 4, threads=1, warn=False) == run_batched(cfg, 4, threads=3, warn=False)


def test_run_batched_needs_two():
    cfg = battery_cfg(pol.make_constant(10), pr.make_iid_gaussian(10, 0), 10, horizon=10**4)
    with pytest.raises(ParameterError):
        run_batched(cfg, 1)


def test_run_batched_coverage():
    """16-replication intervals cover a long independent reference run.

    The reference is a single run from an independent seed with a horizon
    100 times that of each replication, so its own error is small next to
    the interval width."""
    g = pr.make_iid_gaussian(10, 1)
    base = battery_cfg(pol.make_scheme_b(10, 1, 2, 200), g, 200, horizon=10**6)
    ref = run(base.with_(horizon=10**8, seed=10**6), warn=False)
    hits = {"avg_utility": 0, "mean_energy": 0}
    for trial in range(16):
        m = run_batched(base.with_(seed=trial), 16, warn=False)
        for name in hits:
            if abs(getattr(m, name) - getattr(ref, name)) <= getattr(m, name + "_hw"):
                hits[name] += 1
    print(f"coverage out of 16: {hits}")
    assert all(h >= 14 for h in hits.values())


# --- exact chain ----------------------------------------------------------------

def hand_chain_cfg(horizon=10**5):
    src = pr.make_discrete([0, 2], [0.5, 0.5])
    return battery_cfg(pol.make_constant(1), src, 2, horizon=horizon)


def test_exact_hand_example():
    # states 0,1,2 with the slot rules written out by hand
    P = np.array([
        [0.5, 0.5, 0.0],   # B=0: r=0 browns out; r=2 draws 1 and keeps 1
        [0.5, 0.0, 0.5],   # B=1: r=0 empties; r=2 leaves 2
        [0.0, 0.5, 0.5],   # B=2: r=0 leaves 1; r=2 overflows back to 2
    ])
    A = np.vstack([P.T - np.eye(3), np.ones(3)])
    pi = np.linalg.lstsq(A, np.array([0, 0, 0, 1.0]), rcond=None)[0]
    hand_dis = 0.5 * pi[0] + 0.5 * pi[1]
    hand_util = 1.0 - 0.5 * pi[0]
    m = exact_chain_analysis(hand_chain_cfg())
    assert abs(m.p_discharge - hand_dis) < 1e-10
    assert abs(m.p_discharge - 1 / 3) < 1e-10
    assert abs(m.avg_utility - hand_util) < 1e-10
    assert abs(m.mean_energy - 5 / 6) < 1e-10
    assert abs(m.p_overflow - 1 / 6) < 1e-10
    assert abs(m.p_brownout - 1 / 6) < 1e-10
    assert m.p_discharge_hw == 0.0 and m.avg_utility_hw == 0.0
    assert m.p_loss is None


def test_exact_deterministic_chain():
    for M in (2, 10, 50):
        cfg = battery_cfg(pol.make_constant(1), pr.make_iid_gaussian(1, 0), M)
        m = exact_chain_analysis(cfg)
        assert m.p_discharge == 0.0
        assert m.avg_utility == pytest.approx(1.0, abs=1e-12)


def test_simulation_agrees_with_exact_hand_chain():
    cfg = hand_chain_cfg(10**7)
    ex = exact_chain_analysis(cfg)
    sim = run(cfg, warn=False)
    for name in ("p_discharge", "avg_utility", "mean_energy"):
        gap = abs(getattr(sim, name) - getattr(ex, name))
        assert gap <= 3 * getattr(sim, name + "_hw"), name


def test_exact_errors():
    big = battery_cfg(pol.make_constant(1), pr.make_discrete([0, 2], [0.5, 0.5]), 500)
    with pytest.raises(ResourceError, match="200"):
        exact_chain_analysis(big)
    periodic = pol.Policy(pol.SCHEME_B, 1.0, delta_b=1.0, battery_capacity=2, beta=2)
    cfg = battery_cfg(periodic, pr.make_iid_gaussian(1, 0), 2, initial_battery=1)
    with pytest.raises(DecompositionError, match="period"):
        exact_chain_analysis(cfg)
    # two absorbing regions reachable from the start
    q = pol.Policy(pol.SCHEME_Q, 2.0, delta_r1=-1.0, delta_r2=1.0, buffer_capacity=2, beta_q=2)
    cfg = joint_cfg(q, pr.make_iid_gaussian(1, 0), pr.make_discrete([0, 1], [0.5, 0.5]), 2, 2,
                    initial_battery=1, initial_queue=1)
    with pytest.raises(DecompositionError, match="reducible"):
        exact_chain_analysis(cfg)
    with pytest.raises(ConfigurationError, match="finitely many"):
        exact_chain_analysis(battery_cfg(pol.make_constant(1), pr.make_poisson(1), 10))


def test_exact_joint_chain_is_stationary():
    src = pr.make_discrete([0, 1, 3], [0.3, 0.3, 0.4])
    arr = pr.make_discrete([0, 1, 2], [0.4, 0.4, 0.2])
    q = pol.Policy(pol.SCHEME_Q, 2.0, delta_r1=-1.0, delta_r2=1.0, buffer_capacity=6, beta_q=2)
    cfg = joint_cfg(q, src, arr, 12, 6, horizon=10**7)
    ex = exact_chain_analysis(cfg)
    sim = run(cfg, warn=False)
    for name in ("p_discharge", "p_loss", "avg_utility"):
        gap = abs(getattr(sim, name) - getattr(ex, name))
        assert gap <= 3 * max(getattr(sim, name + "_hw"), 1e-15), (name, gap)


def test_scheme_e_discharge_nonincreasing_in_drift():
    g = pr.make_iid_gaussian(10, 4)
    prev, prev_hw = None, 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for d in (0.1, 0.2, 0.3, 0.4, 0.5):
            m = run(battery_cfg(pol.make_scheme_e(10, d, 0, RF), g, 20, horizon=2 * 10**6))
            if prev is not None:
                assert m.p_discharge <= prev + prev_hw + m.p_discharge_hw
            prev, prev_hw = m.p_discharge, m.p_discharge_hw
