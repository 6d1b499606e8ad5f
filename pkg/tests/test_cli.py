import csv
import json
import math
import shutil
from pathlib import Path

import pytest

from ehnode import channel as ch
from ehnode.cli import main
from ehnode.config import build_run, load_run, parse_json, ConfigError

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write(tmp_path, name, doc):
    p = tmp_path / name
    p.write_text(json.dumps(doc, indent=2))
    return p


def body(path):
    """CSV content without the timestamp line."""
    return "".join(line for line in Path(path).read_text().splitlines(True)
                   if not line.startswith("# generated"))


def rows(path):
    lines = [line for line in Path(path).read_text().splitlines() if not line.startswith("#")]
    return list(csv.DictReader(lines))


def small_battery(**kw):
    doc = {
        "mode": "battery-only", "M": 20, "horizon": 20000, "n_replications": 2, "seed": 4,
        "replenishment": {"kind": "gaussian", "mean": 10, "var": 4},
        "policy": {"kind": "scheme-e", "delta_r": 0.5},
    }
    doc.update(kw)
    return doc


def small_joint(**kw):
    doc = {
        "mode": "joint", "M": 20, "K": 10, "horizon": 20000, "n_replications": 2, "seed": 4,
        "replenishment": {"kind": "gaussian", "mean": 10, "var": 4},
        "arrivals": {"kind": "poisson", "mean": 3.0},
        "policy": {"kind": "scheme-e", "delta_r": 0.5},
    }
    doc.update(kw)
    return doc


# --- configuration errors ---------------------------------------------------

def test_negative_m_names_field(tmp_path, capsys):
    cfg = write(tmp_path, "c.json", small_battery(M=-5))
    assert main(["--out-dir", str(tmp_path), "simulate", str(cfg)]) == 2
    err = capsys.readouterr().err
    assert "M" in err and "positive" in err
    assert "c.json:3:" in err


def test_missing_file(tmp_path, capsys):
    assert main(["simulate", str(tmp_path / "missing.json")]) == 2
    assert "not found" in capsys.readouterr().err


def test_malformed_json_reports_line(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "M": 10,\n  "horizon": ,\n}\n')
    assert main(["simulate", str(p)]) == 2
    assert "bad.json:3:" in capsys.readouterr().err


def test_unknown_policy_kind(tmp_path, capsys):
    cfg = write(tmp_path, "c.json", small_battery(policy={"kind": "greedy"}))
    assert main(["simulate", str(cfg)]) == 2
    assert "policy.kind" in capsys.readouterr().err


def test_stability_violation_names_arrival_mean(tmp_path, capsys):
    cap = ch.RatePowerFunction(1.0).rate(10.0)
    cfg = write(tmp_path, "c.json", small_joint(arrivals={"kind": "poisson", "mean": cap + 0.01}))
    assert main(["simulate", str(cfg)]) == 2
    err = capsys.readouterr().err
    assert "λ < C(µ)" in err
    assert "arrivals.mean" in err


def test_config_error_carries_field_and_line():
    text = '{\n  "mode": "battery-only",\n  "M": 0,\n  "replenishment": {"kind": "poisson", "mean": 2}\n}'
    with pytest.raises(ConfigError) as info:
        build_run(parse_json(text), text)
    assert info.value.field == "M"
    assert info.value.line == 3


# --- simulate ---------------------------------------------------------------

def test_simulate_zero_variance(tmp_path):
    shutil.copy(CONFIGS / "constant.json", tmp_path / "constant.json")
    assert main(["--out-dir", str(tmp_path), "simulate", str(tmp_path / "constant.json")]) == 0
    (row,) = rows(tmp_path / "metrics.csv")
    assert float(row["p_discharge"]) == 0.0
    assert float(row["avg_utility"]) == pytest.approx(math.log2(11.0), rel=1e-9)


def test_simulate_header_and_trace(tmp_path):
    doc = small_joint(trace={"path": "slots.csv", "slots": 50})
    cfg = write(tmp_path, "c.json", doc)
    assert main(["--out-dir", str(tmp_path / "o"), "simulate", str(cfg)]) == 0
    lines = (tmp_path / "o" / "metrics.csv").read_text().splitlines()
    assert lines[0].startswith("# ehnode 0.1.0 command=simulate config_hash=")
    assert lines[0].endswith("seed=4")
    assert lines[1].startswith("# generated ")
    trace = (tmp_path / "o" / "slots.csv").read_text().splitlines()
    assert len([t for t in trace if t and not t.startswith("#")]) == 51


def test_simulate_seed_override_changes_output(tmp_path):
    cfg = write(tmp_path, "c.json", small_battery())
    main(["--out-dir", str(tmp_path / "a"), "simulate", str(cfg)])
    main(["--out-dir", str(tmp_path / "b"), "--seed", "99", "simulate", str(cfg)])
    a, b = rows(tmp_path / "a" / "metrics.csv")[0], rows(tmp_path / "b" / "metrics.csv")[0]
    assert b["seed"] == "99"
    assert a["avg_utility"] != b["avg_utility"]


@pytest.mark.parametrize("cmd", ["simulate", "oracle"])
def test_rerun_and_threads_identical(tmp_path, cmd):
    doc = small_joint() if cmd == "simulate" else json.loads((CONFIGS / "oracle.json").read_text())
    doc["horizon"] = 50000
    cfg = write(tmp_path, "c.json", doc)
    name = "metrics.csv" if cmd == "simulate" else "oracle.csv"
    outs = []
    for i, threads in enumerate(("1", "1", "3")):
        d = tmp_path / f"run{i}"
        main(["--out-dir", str(d), "--threads", threads, cmd, str(cfg)])
        outs.append(body(d / name))
    assert outs[0] == outs[1] == outs[2]


# --- sweep -------------------------------------------------------------------

def sweep_doc(tmp_path, **kw):
    doc = {
        "base": small_battery(horizon=10000),
        "sweep": {"axis": "M", "values": [50, 100, 200, 400, 800]},
        "policies": [{"kind": "scheme-b", "beta": 2}, {"kind": "scheme-e", "delta_r": 0.5}],
        "n_replications": 2,
        "outputs": str(tmp_path / "sw"),
    }
    doc["base"]["replenishment"]["var"] = 1
    doc.update(kw)
    return doc


def test_sweep_rows_and_theory(tmp_path):
    spec = write(tmp_path, "s.json", sweep_doc(tmp_path))
    assert main(["sweep", str(spec)]) == 0
    out = rows(tmp_path / "sw" / "sweep.csv")
    assert len(out) == 10
    b_rows = [r for r in out if r["policy"].startswith("scheme-b")]
    e_rows = [r for r in out if r["policy"].startswith("scheme-e")]
    # scheme B theory column follows M**-beta
    for r in b_rows:
        M = float(r["value"])
        assert float(r["theory_discharge"]) == pytest.approx(M**-2, rel=1e-5)
        assert r["theory_loss"] == ""
        assert "polynomial" in r["theory_model"]
    for r in e_rows:
        M = float(r["value"])
        assert float(r["theory_discharge"]) == pytest.approx(math.exp(-2 * 0.5 * M / 1), rel=1e-5)
        assert "M/2" not in r["theory_model"]
    assert (tmp_path / "sw" / "sweep_fits.csv").exists()
    assert (tmp_path / "sw" / "sweep.gp").exists()


def test_sweep_failed_cells_recorded(tmp_path):
    # scheme-b needs mu > its drift; at M=3 the drift is too large for mu=0.5
    doc = sweep_doc(tmp_path, policies=[{"kind": "scheme-b", "beta": 2, "mu": 0.5}])
    doc["sweep"]["values"] = [3, 1000]
    spec = write(tmp_path, "s.json", doc)
    assert main(["sweep", str(spec)]) == 1
    text = (tmp_path / "sw" / "sweep.csv").read_text()
    assert len(rows(tmp_path / "sw" / "sweep.csv")) == 1
    assert "# failed policy=scheme-b" in text


def test_sweep_empty_policies_rejected(tmp_path, capsys):
    spec = write(tmp_path, "s.json", sweep_doc(tmp_path, policies=[]))
    assert main(["sweep", str(spec)]) == 2
    assert "policies" in capsys.readouterr().err


def test_rho_sweep_sets_arrival_mean(tmp_path):
    raw = json.loads((CONFIGS / "sweep_rho.json").read_text())
    cap = ch.RatePowerFunction(1.0).rate(10.0)
    for rho in raw["sweep"]["values"]:
        spec = build_run(raw["base"], overrides={"rho": rho, "policy": raw["policies"][1]})
        assert spec.sim.arrivals.declared_mean == pytest.approx(rho * cap, rel=1e-14)
    raw["base"]["horizon"] = 20000
    raw["outputs"] = str(tmp_path / "rho")
    spec = write(tmp_path, "s.json", raw)
    assert main(["sweep", str(spec)]) == 0
    out = rows(tmp_path / "rho" / "sweep.csv")
    assert len(out) == len(raw["policies"]) * len(raw["sweep"]["values"])
    for r in out:
        if r["policy"].startswith("scheme-q"):
            assert r["theory_loss"] != ""
            assert "M/2" not in r["theory_model"]
    assert not (tmp_path / "rho" / "sweep_fits.csv").exists()


def test_sweep_identical_across_threads(tmp_path):
    bodies = []
    for threads in ("1", "4"):
        doc = sweep_doc(tmp_path, outputs=str(tmp_path / f"t{threads}"))
        spec = write(tmp_path, f"s{threads}.json", doc)
        main(["--threads", threads, "sweep", str(spec)])
        bodies.append((body(tmp_path / f"t{threads}" / "sweep.csv"),
                       body(tmp_path / f"t{threads}" / "sweep_fits.csv")))
    # the outputs path is part of the hashed document; compare with it masked
    def strip(s):
        return [line.split(",", 1)[1] if not line.startswith("#") else "" for line in s.splitlines()]
    assert strip(bodies[0][0]) == strip(bodies[1][0])
    assert strip(bodies[0][1]) == strip(bodies[1][1])


def test_sweep_out_dir_override(tmp_path):
    spec = write(tmp_path, "s.json", sweep_doc(tmp_path))
    assert main(["--out-dir", str(tmp_path / "elsewhere"), "sweep", str(spec)]) == 0
    assert (tmp_path / "elsewhere" / "sweep.csv").exists()
    assert not (tmp_path / "sw").exists()


# --- tradeoff ----------------------------------------------------------------

def test_tradeoff_curve_and_operating_point(tmp_path):
    doc = {"mu": 10, "lambda": 2, "gamma": 1, "sigma_r2": 4, "sigma_a2": 1, "n_grid": 50,
           "operating_points": [1.0]}
    spec = write(tmp_path, "t.json", doc)
    assert main(["--out-dir", str(tmp_path), "tradeoff", str(spec)]) == 0
    curve = rows(tmp_path / "tradeoff_curve.csv")
    assert len(curve) == 50
    d = [float(r["discharge_exponent"]) for r in curve]
    loss = [float(r["loss_exponent"]) for r in curve]
    assert all(x < y for x, y in zip(d, d[1:]))
    assert all(x > y for x, y in zip(loss, loss[1:]))
    pts = {r["quantity"]: float(r["theory_exponent"]) for r in rows(tmp_path / "tradeoff_points.csv")}
    assert pts["discharge"] == 0.5
    assert abs(pts["loss"] - 2.6439) < 1e-4


def test_tradeoff_unstable(tmp_path, capsys):
    doc = {"mu": 10, "lambda": 3.5, "sigma_r2": 4, "sigma_a2": 1}
    spec = write(tmp_path, "t.json", doc)
    assert main(["--out-dir", str(tmp_path), "tradeoff", str(spec)]) == 2
    assert "λ < C(µ)" in capsys.readouterr().err


def test_tradeoff_deterministic_with_simulation(tmp_path):
    doc = json.loads((CONFIGS / "tradeoff.json").read_text())
    doc["simulation"].update(horizon=20000, M_grid=[2, 3, 4], K_grid=[1, 2, 3])
    spec = write(tmp_path, "t.json", doc)
    outs = []
    for i, threads in enumerate(("1", "3")):
        d = tmp_path / f"r{i}"
        assert main(["--out-dir", str(d), "--threads", threads, "tradeoff", str(spec)]) == 0
        outs.append(body(d / "tradeoff_curve.csv") + body(d / "tradeoff_points.csv"))
    assert outs[0] == outs[1]


# --- oracle ------------------------------------------------------------------

def test_oracle_passes_reference_config(tmp_path, capsys):
    doc = json.loads((CONFIGS / "oracle.json").read_text())
    doc["horizon"] = 200000
    cfg = write(tmp_path, "o.json", doc)
    assert main(["--out-dir", str(tmp_path), "oracle", str(cfg)]) == 0
    assert "PASS" in capsys.readouterr().out
    out = rows(tmp_path / "oracle.csv")
    assert {r["metric"] for r in out} == {"p_discharge", "p_loss", "avg_utility", "mean_energy"}
    assert all(r["verdict"] == "PASS" for r in out)


def test_oracle_zero_variance(tmp_path):
    doc = {"mode": "battery-only", "M": 10, "horizon": 10000, "n_replications": 2,
           "replenishment": {"kind": "discrete", "values": [3], "probs": [1]},
           "policy": {"kind": "constant", "draw": 3}}
    cfg = write(tmp_path, "o.json", doc)
    assert main(["--out-dir", str(tmp_path), "oracle", str(cfg)]) == 0
    for r in rows(tmp_path / "oracle.csv"):
        assert float(r["ratio"]) == 0.0


def test_oracle_rejects_large_battery(tmp_path, capsys):
    doc = json.loads((CONFIGS / "oracle.json").read_text())
    doc["M"] = 500
    cfg = write(tmp_path, "o.json", doc)
    assert main(["--out-dir", str(tmp_path), "oracle", str(cfg)]) == 2
    assert "200" in capsys.readouterr().err


# --- stats -------------------------------------------------------------------

def test_stats(tmp_path, capsys):
    doc = {"replenishment": {"kind": "mmpp", "transition": [[0.9, 0.1], [0.2683, 0.7317]],
                             "state_means": [25, 1]}, "seed": 2}
    cfg = write(tmp_path, "s.json", doc)
    assert main(["--out-dir", str(tmp_path), "stats", str(cfg), "--horizon", "200000",
                 "--batch-len", "500"]) == 0
    (row,) = rows(tmp_path / "stats.csv")
    assert row["kind"] == "mmpp"
    assert abs(float(row["mean"]) / float(row["declared_mean"]) - 1) < 0.05
    first = body(tmp_path / "stats.csv")
    main(["--out-dir", str(tmp_path), "--threads", "2", "stats", str(cfg), "--horizon", "200000",
          "--batch-len", "500"])
    assert body(tmp_path / "stats.csv") == first


def test_stats_missing_process(tmp_path, capsys):
    cfg = write(tmp_path, "s.json", {"replenishment": {"kind": "poisson", "mean": 2}})
    assert main(["--out-dir", str(tmp_path), "stats", str(cfg), "--process", "arrivals"]) == 2
    assert "arrivals" in capsys.readouterr().err


# --- reference configs -----------------------------------------------------------

@pytest.mark.parametrize("name", ["simulate.json", "constant.json", "oracle.json"])
def test_reference_configs_load(name):
    spec = load_run(CONFIGS / name)
    assert spec.n_replications >= 2
