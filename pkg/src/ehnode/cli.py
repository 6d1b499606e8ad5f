"""Command-line experiment runner.

Subcommands: simulate, sweep, tradeoff, oracle, stats. Every CSV starts
with ``#`` comment lines; only the one beginning ``# generated`` carries a
timestamp, so the remaining lines are reproducible byte for byte.
"""

from __future__ import annotations

import argparse
import copy
import csv
import datetime as _dt
import io
import json
import math
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__, analysis
from . import processes as pr
from .config import (
    ConfigError, RunSpec, _Ctx, _number, asym_var, build_run, build_source, config_hash,
    load_run, parse_json,
)
from .errors import EhnodeError
from .policies import CONSTANT, JOINT, SCHEME_B, SCHEME_E, SCHEME_Q, SCHEME_TO
from .simulator import Metrics, exact_chain_analysis, run, run_batched

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_INVALID = 2

AXES = ("M", "K", "rho", "delta_r")


def fmt_p(x: Optional[float]) -> str:
    """Probability in scientific notation with 6 significant digits."""
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return f"{x:.5e}"


def fmt_x(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int,)) and not isinstance(x, bool):
        return str(x)
    if isinstance(x, float) and math.isnan(x):
        return ""
    return f"{x:.10g}"


class CsvOut:
    """CSV file with a reproducible comment header."""

    def __init__(self, path: Path, command: str, chash: str, seed: int):
        self.path = path
        self.buf = io.StringIO()
        self.header = [
            f"# ehnode {__version__} command={command} config_hash={chash} seed={seed}",
        ]
        self.writer = csv.writer(self.buf, lineterminator="\n")

    def comment(self, text: str) -> None:
        self.buf.write(f"# {text}\n")

    def row(self, values) -> None:
        self.writer.writerow(values)

    def close(self) -> Path:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        stamp = _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")
        with self.path.open("w", newline="") as fh:
            for line in self.header:
                fh.write(line + "\n")
            fh.write(f"# generated {stamp}\n")
            fh.write(self.buf.getvalue())
        return self.path


METRIC_COLUMNS = (
    "p_discharge", "p_discharge_hw", "p_loss", "p_loss_hw", "avg_utility", "avg_utility_hw",
    "avg_utility_cv", "avg_utility_cv_hw", "mean_energy", "mean_energy_hw", "p_overflow",
    "n_batches",
)
_PROB_COLUMNS = {"p_discharge", "p_discharge_hw", "p_loss", "p_loss_hw", "p_overflow"}


def metric_values(m: Metrics) -> list[str]:
    out = []
    for name in METRIC_COLUMNS:
        v = getattr(m, name)
        out.append(fmt_p(v) if name in _PROB_COLUMNS else fmt_x(v))
    return out


def _print_metrics(m: Metrics, stream=sys.stdout) -> None:
    def line(label, v, hw, prob):
        f = fmt_p if prob else (lambda x: f"{x:.8g}")
        stream.write(f"  {label:<16} {f(v)}  ± {f(hw) if hw is not None else ''}\n")

    line("p_discharge", m.p_discharge, m.p_discharge_hw, True)
    if m.p_loss is not None:
        line("p_loss", m.p_loss, m.p_loss_hw, True)
    line("avg_utility", m.avg_utility, m.avg_utility_hw, False)
    line("avg_utility_cv", m.avg_utility_cv, m.avg_utility_cv_hw, False)
    line("mean_energy", m.mean_energy, m.mean_energy_hw, False)
    stream.write(f"  replications     {m.n_batches}\n")


def _load_json(path) -> tuple[dict, str]:
    p = Path(path)
    if not p.is_file():
        raise ConfigError("document", f"file not found: {p}")
    text = p.read_text()
    return parse_json(text, str(p)), text


# ---------------------------------------------------------------- simulate


def cmd_simulate(args) -> int:
    spec = load_run(args.config, args.seed)
    out_dir = Path(args.out_dir)
    trace = None
    if spec.trace_path is not None:
        trace = spec.trace_path if spec.trace_path.is_absolute() else out_dir / spec.trace_path
        out_dir.mkdir(parents=True, exist_ok=True)
    if trace is not None:
        # the slot trace follows the first replication
        first = np.random.SeedSequence(spec.sim.seed).spawn(1)[0]
        run(spec.sim, first, trace, spec.trace_slots, warn=False)
    m = run_batched(spec.sim, spec.n_replications, threads=args.threads)
    out = CsvOut(out_dir / "metrics.csv", "simulate", spec.hash, spec.sim.seed)
    out.row(("config_hash", "seed", "mode", "policy", "M", "K", "horizon", "n_replications") + METRIC_COLUMNS)
    s = spec.sim
    out.row([spec.hash, s.seed, s.mode, s.policy.kind, fmt_x(s.M), fmt_x(s.K), s.horizon,
             spec.n_replications] + metric_values(m))
    path = out.close()
    print(f"{s.policy.kind} mode={s.mode} M={s.M:g}" + (f" K={s.K:g}" if s.K else ""))
    _print_metrics(m)
    print(f"metrics written to {path}")
    if trace is not None:
        print(f"slot trace written to {trace}")
    return EXIT_OK


# ---------------------------------------------------------------- sweep


def theory_columns(spec: RunSpec) -> dict:
    """Closed-form predictions appropriate to the policy of one sweep cell."""
    s = spec.sim
    p = s.policy
    out = {"theory_discharge": None, "theory_discharge_low": None, "theory_loss": None, "theory_model": ""}
    mu = s.replenishment.declared_mean
    try:
        var_r = asym_var(s.replenishment)
    except EhnodeError:
        var_r = None
    var_a = None
    if s.mode == JOINT:
        try:
            var_a = asym_var(s.arrivals)
        except EhnodeError:
            var_a = None
    try:
        if p.kind == SCHEME_B and var_r:
            try:
                lmgf = pr.log_mgf_function(s.replenishment)
            except EhnodeError:
                lmgf = None
            pred = analysis.predict_discharge_scheme_b(s.M, p.beta, mu, var_r, lmgf)
            out["theory_discharge"] = pred.point_value
            out["theory_model"] = f"polynomial beta={p.beta:g} barrier=M/2"
        elif p.kind == SCHEME_Q:
            if var_r:
                out["theory_discharge"] = analysis.diffusion_underflow(min(p.delta_r1, p.delta_r2), var_r, s.M)
                out["theory_discharge_low"] = analysis.diffusion_underflow(max(p.delta_r1, p.delta_r2), var_r, s.M)
            if var_a:
                out["theory_loss"] = analysis.renewal_overflow(p.delta_a, var_a, s.K)
            out["theory_model"] = "exponential barrier=M; renewal loss"
        elif p.kind == SCHEME_E:
            if var_r:
                out["theory_discharge"] = analysis.diffusion_underflow(p.delta_r, var_r, s.M)
            if var_a and s.mode == JOINT and p.delta_a > 0:
                out["theory_loss"] = analysis.scheme_e_overflow(p.delta_a, var_a, s.K)
            out["theory_model"] = "exponential barrier=M"
        elif p.kind == SCHEME_TO and var_r:
            out["theory_discharge"] = analysis.diffusion_underflow(p.epsilon, var_r, s.M)
            out["theory_model"] = "exponential barrier=M"
        elif p.kind == CONSTANT and var_r and p.mu < mu:
            out["theory_discharge"] = analysis.diffusion_underflow(mu - p.mu, var_r, s.M)
            out["theory_model"] = "exponential barrier=M"
    except EhnodeError:
        pass
    return out


SWEEP_COLUMNS = (
    "config_hash", "seed", "policy", "axis", "value",
) + METRIC_COLUMNS + ("theory_discharge", "theory_discharge_low", "theory_loss", "theory_model")


def _validate_sweep(ctx: _Ctx, raw: dict) -> tuple[dict, str, list, list, int]:
    base = raw.get("base")
    if not isinstance(base, dict):
        ctx.fail("base", "must be a configuration object")
    sweep = raw.get("sweep")
    if not isinstance(sweep, dict):
        ctx.fail("sweep", "must be an object with 'axis' and 'values'")
    axis = sweep.get("axis")
    if axis not in AXES:
        ctx.fail("sweep.axis", f"must be one of {AXES}, got {axis!r}")
    values = sweep.get("values")
    if not isinstance(values, list) or not values:
        ctx.fail("sweep.values", "must be a nonempty list")
    for v in values:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
            ctx.fail("sweep.values", f"values must be positive numbers, got {v!r}")
    if any(b <= a for a, b in zip(values, values[1:])):
        ctx.fail("sweep.values", "values must be strictly increasing")
    if axis == "rho" and not all(0 < v < 1 for v in values):
        ctx.fail("sweep.values", "traffic intensities must lie in (0, 1)")
    policies = raw.get("policies")
    if not isinstance(policies, list) or not policies:
        ctx.fail("policies", "must be a nonempty list of policy objects")
    for i, p in enumerate(policies):
        if not isinstance(p, dict) or "kind" not in p:
            ctx.fail(f"policies.{i}", "each policy must be an object with a 'kind'")
    n_rep = _number(ctx, raw, "n_replications", "n_replications",
                    base.get("n_replications", 4), integer=True)
    if n_rep < 2:
        ctx.fail("n_replications", "must be at least 2")
    return base, axis, values, policies, n_rep


def _policy_label(p: dict) -> str:
    extras = [f"{k}={p[k]}" for k in sorted(p) if k != "kind"]
    return p["kind"] + ("(" + ",".join(extras) + ")" if extras else "")


def cmd_sweep(args) -> int:
    raw, text = _load_json(args.spec)
    ctx = _Ctx(text, args.spec)
    base, axis, values, policies, n_rep = _validate_sweep(ctx, raw)
    base_dir = Path(args.spec).parent
    seed = args.seed if args.seed is not None else int(base.get("seed", 0))
    chash = config_hash(raw)
    out_dir = Path(args.out_dir if args.out_dir_given else raw.get("outputs", args.out_dir))

    cells = [(pi, v) for pi in range(len(policies)) for v in values]

    def one(cell):
        pi, v = cell
        ov = {"policy": policies[pi]}
        ov[axis] = v
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                spec = build_run(base, "", args.spec, base_dir, seed, ov)
                m = run_batched(spec.sim, n_rep, threads=1, warn=False)
                th = theory_columns(spec)
            return ("ok", m, th)
        except EhnodeError as exc:
            return ("error", str(exc), None)

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            results = list(pool.map(one, cells))
    else:
        results = [one(c) for c in cells]

    out = CsvOut(out_dir / "sweep.csv", "sweep", chash, seed)
    out.row(SWEEP_COLUMNS)
    rows_by_policy: dict[int, list] = {}
    n_fail = 0
    for (pi, v), (status, payload, th) in zip(cells, results):
        label = _policy_label(policies[pi])
        if status != "ok":
            n_fail += 1
            out.comment(f"failed policy={label} {axis}={fmt_x(v)}: {payload}")
            print(f"cell {label} {axis}={v} failed: {payload}", file=sys.stderr)
            continue
        m = payload
        rows_by_policy.setdefault(pi, []).append((v, m, th))
        out.row([chash, seed, label, axis, fmt_x(v)] + metric_values(m) + [
            fmt_p(th["theory_discharge"]), fmt_p(th["theory_discharge_low"]),
            fmt_p(th["theory_loss"]), th["theory_model"],
        ])
    path = out.close()

    fits_path = None
    if axis in ("M", "K"):
        fits_path = _write_fits(out_dir / "sweep_fits.csv", chash, seed, axis, policies, rows_by_policy)
    gp = _write_plot(out_dir / "sweep.gp", axis, policies, rows_by_policy, joint=base.get("mode") == JOINT)
    print(f"{len(cells) - n_fail} of {len(cells)} cells completed; results in {path}")
    if fits_path:
        print(f"decay fits in {fits_path}")
    print(f"plot script in {gp}")
    return EXIT_OK if n_fail == 0 else EXIT_FAIL


def _write_fits(path: Path, chash: str, seed: int, axis: str, policies, rows_by_policy) -> Path:
    out = CsvOut(path, "sweep-fits", chash, seed)
    out.row(("config_hash", "seed", "policy", "quantity", "size", "empirical_p", "predicted_p",
             "model", "exponent", "r2", "n_points", "n_dropped"))
    quantity = "p_discharge" if axis == "M" else "p_loss"
    for pi in sorted(rows_by_policy):
        rows = rows_by_policy[pi]
        pts = [(v, getattr(m, quantity)) for v, m, _ in rows if getattr(m, quantity) is not None]
        label = _policy_label(policies[pi])
        for model in (analysis.POLYNOMIAL, analysis.EXPONENTIAL):
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    fit = analysis.fit_decay(pts, model)
            except EhnodeError as exc:
                out.comment(f"no {model} fit for {label}: {exc}")
                continue
            for size, p in pts:
                out.row([chash, seed, label, quantity, fmt_x(size), fmt_p(p), fmt_p(fit.predict(size)),
                         model, fmt_x(fit.exponent), fmt_x(fit.r_squared), fit.n_points, fit.n_dropped])
    return out.close()


def _write_plot(path: Path, axis: str, policies, rows_by_policy, joint: bool) -> Path:
    lines = [
        f"# gnuplot script generated by ehnode {__version__}",
        "set datafile separator ','",
        "set logscale y",
        "set format y '10^{%L}'",
        "set key outside right",
        "set terminal pngcairo size 900,600",
    ]
    if axis in ("M", "K"):
        lines.append("set logscale x")
    blocks = []
    for pi in sorted(rows_by_policy):
        name = f"$cell{pi}"
        body = [f"{name} << EOD"]
        for v, m, th in rows_by_policy[pi]:
            def cols(p, hw):
                if p is None:
                    return ["NaN", "NaN", "NaN"]
                return [repr(p), repr(max(p - hw, 0.0)), repr(p + hw)]

            body.append(",".join(
                [repr(float(v))]
                + cols(m.p_discharge, m.p_discharge_hw)
                + cols(m.p_loss, m.p_loss_hw)
                + [repr(th["theory_discharge"]) if th["theory_discharge"] else "NaN",
                   repr(th["theory_loss"]) if th["theory_loss"] else "NaN"]
            ))
        body.append("EOD")
        blocks.append((pi, name, body))
    for _, _, body in blocks:
        lines.extend(body)
    panels = [("discharge", 2, 8, "battery discharge probability")]
    if joint:
        panels.append(("loss", 5, 9, "data loss probability"))
    for tag, col, tcol, ylabel in panels:
        lines.append(f"set output 'sweep_{tag}.png'")
        lines.append(f"set xlabel '{axis}'")
        lines.append(f"set ylabel '{ylabel}'")
        parts = []
        for pi, name, _ in blocks:
            label = _policy_label(policies[pi]).replace("'", "")
            parts.append(f"{name} using 1:{col}:{col + 1}:{col + 2} with yerrorbars title '{label}'")
            parts.append(f"{name} using 1:{tcol} with lines dashtype 2 title '{label} theory'")
        lines.append("plot " + ", \\\n     ".join(parts))
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path


# ---------------------------------------------------------------- tradeoff


def cmd_tradeoff(args) -> int:
    raw, text = _load_json(args.spec)
    ctx = _Ctx(text, args.spec)
    mu = _number(ctx, raw, "mu", "mu", required=True, positive=True)
    lam = _number(ctx, raw, "lambda", "lambda", required=True, positive=True)
    gamma = _number(ctx, raw, "gamma", "gamma", 1.0, positive=True)
    s2r = _number(ctx, raw, "sigma_r2", "sigma_r2", required=True, positive=True)
    s2a = _number(ctx, raw, "sigma_a2", "sigma_a2", required=True, positive=True)
    n_grid = _number(ctx, raw, "n_grid", "n_grid", 50, integer=True)
    points = raw.get("operating_points", [])
    if not isinstance(points, list) or len(points) > 3:
        ctx.fail("operating_points", "must be a list of at most 3 delta_r values")
    seed = args.seed if args.seed is not None else int(raw.get("seed", 0))
    chash = config_hash(raw)
    out_dir = Path(args.out_dir)
    try:
        curve = analysis.tradeoff_curve(mu, lam, gamma, s2r, s2a, n_grid)
        op_theory = [analysis.tradeoff_point(float(d), mu, lam, gamma, s2r, s2a) for d in points]
    except EhnodeError as exc:
        ctx.fail("lambda", str(exc))
    out = CsvOut(out_dir / "tradeoff_curve.csv", "tradeoff", chash, seed)
    out.row(("config_hash", "seed", "delta_r", "discharge_exponent", "loss_exponent"))
    for t in curve:
        out.row([chash, seed, fmt_x(t.delta_r), fmt_x(t.discharge_exponent), fmt_x(t.loss_exponent)])
    curve_path = out.close()
    print(f"{len(curve)} theory points written to {curve_path}")

    sim = raw.get("simulation")
    out = CsvOut(out_dir / "tradeoff_points.csv", "tradeoff", chash, seed)
    out.row(("config_hash", "seed", "delta_r", "quantity", "theory_exponent", "fitted_exponent",
             "r2", "n_points", "n_dropped"))
    if sim is not None and points:
        rows = _tradeoff_sim(ctx, sim, mu, lam, gamma, s2r, s2a, op_theory, seed, args.threads,
                             Path(args.spec).parent)
        for d, quantity, theory, fit in rows:
            if fit is None:
                out.comment(f"no fit for delta_r={fmt_x(d)} {quantity}")
                continue
            out.row([chash, seed, fmt_x(d), quantity, fmt_x(theory), fmt_x(fit.exponent),
                     fmt_x(fit.r_squared), fit.n_points, fit.n_dropped])
            print(f"delta_r={d:g} {quantity}: theory {theory:.4g}, fitted {fit.exponent:.4g} "
                  f"(r2={fit.r_squared:.4f})")
    else:
        for t in op_theory:
            out.row([chash, seed, fmt_x(t.delta_r), "discharge", fmt_x(t.discharge_exponent), "", "", "", ""])
            out.row([chash, seed, fmt_x(t.delta_r), "loss", fmt_x(t.loss_exponent), "", "", "", ""])
    pts_path = out.close()
    print(f"operating points written to {pts_path}")
    return EXIT_OK


def _tradeoff_sim(ctx, sim, mu, lam, gamma, s2r, s2a, op_theory, seed, threads, base_dir):
    if not isinstance(sim, dict):
        ctx.fail("simulation", "must be an object")
    repl_spec = sim.get("replenishment", {"kind": "gaussian", "mean": mu, "var": s2r})
    arr_spec = sim.get("arrivals", {"kind": "gaussian", "mean": lam, "var": s2a})
    M_grid = sim.get("M_grid", [])
    K_grid = sim.get("K_grid", [])
    horizon = _number(ctx, sim, "horizon", "simulation.horizon", 10_000_000, positive=True, integer=True)
    n_rep = _number(ctx, sim, "n_replications", "simulation.n_replications", 2, integer=True)
    large_M = _number(ctx, sim, "large_M", "simulation.large_M", 1e6, positive=True)
    for name, grid in (("M_grid", M_grid), ("K_grid", K_grid)):
        if not isinstance(grid, list) or any(b <= a for a, b in zip(grid, grid[1:])):
            ctx.fail(f"simulation.{name}", "must be a strictly increasing list")
    base = {
        "gamma": gamma, "horizon": horizon, "n_replications": n_rep, "seed": seed,
        "replenishment": repl_spec,
    }
    jobs = []
    for t in op_theory:
        pol = {"kind": SCHEME_E, "delta_r": t.delta_r, "mu": mu}
        for M in M_grid:
            raw = dict(base, mode="battery-only", M=M, policy=dict(pol, **{"lambda": lam}))
            jobs.append((t.delta_r, "discharge", M, raw))
        for K in K_grid:
            raw = dict(base, mode=JOINT, M=large_M, K=K, arrivals=arr_spec, policy=pol)
            jobs.append((t.delta_r, "loss", K, raw))

    def one(job):
        d, q, size, raw = job
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            spec = build_run(raw, "", ctx.source, base_dir)
            m = run_batched(spec.sim, spec.n_replications, warn=False)
        return m.p_discharge if q == "discharge" else m.p_loss

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            probs = list(pool.map(one, jobs))
    else:
        probs = [one(j) for j in jobs]
    rows = []
    for t in op_theory:
        for q, theory in (("discharge", t.discharge_exponent), ("loss", t.loss_exponent)):
            pts = [(size, p) for (d, qq, size, _), p in zip(jobs, probs) if d == t.delta_r and qq == q]
            if not pts:
                continue
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    fit = analysis.fit_decay(pts, analysis.EXPONENTIAL)
            except EhnodeError:
                fit = None
            rows.append((t.delta_r, q, theory, fit))
    return rows


# ---------------------------------------------------------------- oracle


def cmd_oracle(args) -> int:
    spec = load_run(args.config, args.seed)
    try:
        exact = exact_chain_analysis(spec.sim)
    except EhnodeError as exc:
        print(
            "oracle needs i.i.d. integer-valued replenishment and arrivals with finitely many "
            f"values, M <= 200 and K <= 100: {exc}",
            file=sys.stderr,
        )
        return EXIT_INVALID
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        sim = run_batched(spec.sim, spec.n_replications, threads=args.threads, warn=False)
    names = ["p_discharge", "avg_utility", "mean_energy"]
    if spec.sim.mode == JOINT:
        names.insert(1, "p_loss")
    out = CsvOut(Path(args.out_dir) / "oracle.csv", "oracle", spec.hash, spec.sim.seed)
    out.row(("config_hash", "seed", "metric", "exact", "simulated", "half_width", "ratio", "verdict"))
    ok = True
    for name in names:
        e = getattr(exact, name)
        s = getattr(sim, name)
        hw = getattr(sim, name + "_hw")
        diff = abs(e - s)
        ratio = 0.0 if diff == 0.0 else (diff / hw if hw > 0 else math.inf)
        verdict = "PASS" if ratio <= 3.0 else "FAIL"
        ok &= verdict == "PASS"
        prob = name.startswith("p_")
        f = fmt_p if prob else fmt_x
        out.row([spec.hash, spec.sim.seed, name, f(e), f(s), f(hw), fmt_x(ratio), verdict])
        print(f"  {name:<12} exact {f(e)}  simulated {f(s)} ± {f(hw)}  ratio {ratio:.3g}  {verdict}")
    path = out.close()
    print(("PASS" if ok else "FAIL") + f"; report written to {path}")
    return EXIT_OK if ok else EXIT_FAIL


# ---------------------------------------------------------------- stats


def cmd_stats(args) -> int:
    raw, text = _load_json(args.config)
    ctx = _Ctx(text, args.config)
    key = args.process
    spec = raw.get(key, raw.get("source")) if key == "replenishment" else raw.get(key)
    if spec is None:
        ctx.fail(key, "is not present in the document")
    src = build_source(ctx, spec, key, Path(args.config).parent)
    seed = args.seed if args.seed is not None else int(raw.get("seed", 0))
    try:
        st = pr.estimate_asymptotic_stats(src, args.horizon, args.batch_len, seed)
    except EhnodeError as exc:
        raise ConfigError("horizon", str(exc)) from None
    chash = config_hash(raw)
    out = CsvOut(Path(args.out_dir) / "stats.csv", "stats", chash, seed)
    out.row(("config_hash", "seed", "process", "kind", "declared_mean", "declared_asym_var",
             "mean", "asym_var", "n_samples", "batch_len"))
    out.row([chash, seed, key, src.kind, fmt_x(src.declared_mean), fmt_x(src.declared_asym_var),
             fmt_x(st.mean), fmt_x(st.asym_var), st.n_samples, st.batch_len])
    path = out.close()
    print(f"{key} ({src.kind}): mean {st.mean:.6g}, asymptotic variance {st.asym_var:.6g} "
          f"from {st.n_samples} samples in batches of {st.batch_len}")
    if src.declared_mean is not None:
        dv = "" if src.declared_asym_var is None else f", asymptotic variance {src.declared_asym_var:.6g}"
        print(f"declared: mean {src.declared_mean:.6g}{dv}")
    print(f"written to {path}")
    return EXIT_OK


# ---------------------------------------------------------------- entry


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ehnode",
        description="Energy-harvesting sensor node simulator and scaling-law toolkit.",
    )
    parser.add_argument("--seed", type=int, default=None, help="override the configured seed")
    parser.add_argument("--threads", type=int, default=1, help="worker threads (default 1)")
    parser.add_argument("--out-dir", default=None, help="output directory (default: current)")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one configuration with replications")
    p.add_argument("config")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="sweep one axis over several policies")
    p.add_argument("spec")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("tradeoff", help="discharge/loss exponent tradeoff of scheme E")
    p.add_argument("spec")
    p.set_defaults(func=cmd_tradeoff)

    p = sub.add_parser("oracle", help="compare simulation with the exact small chain")
    p.add_argument("config")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("stats", help="estimate mean and asymptotic variance of a process")
    p.add_argument("config")
    p.add_argument("--process", choices=("replenishment", "arrivals"), default="replenishment")
    p.add_argument("--horizon", type=int, default=1_000_000)
    p.add_argument("--batch-len", type=int, default=1_000)
    p.set_defaults(func=cmd_stats)
    return parser


def _show_warning(message, category, filename, lineno, file=None, line=None):
    print(f"warning: {message}", file=sys.stderr)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args.out_dir_given = args.out_dir is not None
    if args.out_dir is None:
        args.out_dir = "."
    if args.threads < 1:
        parser.error("--threads must be at least 1")
    previous = warnings.showwarning
    warnings.showwarning = _show_warning
    try:
        return args.func(args)
    except EhnodeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    finally:
        warnings.showwarning = previous


if __name__ == "__main__":
    sys.exit(main())
