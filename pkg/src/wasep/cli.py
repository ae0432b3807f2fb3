"""Command-line harness: configuration, run directories, reports and figures.

Every run writes into an output directory and finishes by writing
manifest.json (the commit marker): config snapshot, seeds, telemetry and
sha256 digests of every other file.  A directory without a complete manifest
is treated as interrupted and `analyze` refuses it.

Config values come from defaults, overridden by a JSON file (--config),
overridden by command-line flags.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import struct
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .analytics import LimitSpec, fbm_covariance, ou_covariance, qv_prediction
from .engine import (
    SEED_DERIVATION_ID,
    SimParams,
    require_gradient,
    run_until,
    spawn_trajectory,
    validate_model,
)
from .ensemble import (
    ObservationPlan,
    SeriesTask,
    run_trajectories,
    run_trajectory,
)
from .hydro import DensityProfile, hydro_compare, solve_burgers, step_profile
from .lattice import (
    RateModel,
    detailed_balance_residual,
    exact_invariance_residual,
    gradient_residual,
    solve_gradient,
    ssep,
)
from .observables import (
    TestFunction,
    box_indicator,
    gaussian_bump,
    heaviside_ramp,
    write_series_csv,
)

WORKERS_ENV = "WASEP_WORKERS"

DEFAULTS = {
    "model": {"builtin": "ssep"},
    "n": 64,
    "gamma": 1.0,
    "a": 1.0,
    "rho": 0.5,
    "M": 4,
    "T": 1.0,
    "seed": 0,
    "times": [0.25, 0.5, 0.75, 1.0],
    "fields": [{"kind": "gaussian", "sigma": 0.3, "center": 0.0,
                "cutoff": 6.0, "name": "H"}],
    "moving_frame": False,
    "bonds": [],
    "integral_field": None,
    "ensemble_size": 16,
    "workers": None,
    "out": "run",
    "jump_log": False,
    "trajectory_index": 0,
    # hydro
    "profile": {"kind": "step", "left": 0.8, "right": 0.2},
    "dx": None,
    "t": None,
    # crossover sweep
    "n_grid": [32, 64, 128, 256],
    "gamma_grid": [0.5, 0.75, 1.0],
    "traj_table": None,
    # analyze
    "run_dir": None,
    # acceptance
    "criteria": None,
}


def load_config(args) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        with open(args.config) as f:
            cfg.update(json.load(f))
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.workers is not None:
        cfg["workers"] = args.workers
    if args.out is not None:
        cfg["out"] = args.out
    if cfg["workers"] is None:
        cfg["workers"] = int(os.environ.get(WORKERS_ENV, "1"))
    return cfg


def build_model(cfg) -> RateModel:
    return RateModel.from_json(cfg["model"])


def build_params(cfg) -> SimParams:
    return SimParams(build_model(cfg), n=int(cfg["n"]),
                     gamma=float(cfg["gamma"]), a=float(cfg["a"]),
                     rho=float(cfg["rho"]), M=int(cfg["M"]),
                     T=float(cfg["T"]), seed=int(cfg["seed"]))


def build_field(spec) -> TestFunction:
    kind = spec["kind"]
    if kind == "gaussian":
        return gaussian_bump(spec["sigma"], spec.get("center", 0.0),
                             spec.get("cutoff", 8.0))
    if kind == "ramp":
        return heaviside_ramp(spec["ell"])
    if kind == "box":
        return box_indicator(spec["x"], spec["eps"])
    raise ValueError(f"unknown test-function kind {kind!r}")


def build_plan(cfg) -> ObservationPlan:
    fields = {}
    for i, spec in enumerate(cfg["fields"] or []):
        fields[spec.get("name", f"H{i}")] = build_field(spec)
    integral = (build_field(cfg["integral_field"])
                if cfg["integral_field"] else None)
    return ObservationPlan(np.asarray(cfg["times"], dtype=np.float64),
                           fields, moving_frame=bool(cfg["moving_frame"]),
                           bonds=tuple(int(b) for b in cfg["bonds"]),
                           integral_field=integral)


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(out_dir: Path, cfg, telemetry, complete=True):
    files = {p.name: _sha256(p) for p in sorted(out_dir.iterdir())
             if p.is_file() and p.name != "manifest.json"}
    manifest = {
        "version": __version__,
        "config": cfg,
        "master_seed": cfg.get("seed"),
        "seed_derivation": SEED_DERIVATION_ID,
        "telemetry": telemetry,
        "files": files,
        "complete": complete,
    }
    with open(out_dir / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, default=float)
    return manifest


def _out_dir(cfg) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _figure():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def write_jump_log(path, events):
    """Binary record per jump: uint64 time (fixed point, units 2^-32),
    uint32 bond, int8 direction; little-endian."""
    rec = struct.Struct("<QIb")
    with open(path, "ab") as f:
        for ev in events:
            f.write(rec.pack(int(round(ev.time * 2 ** 32)), ev.bond,
                             ev.direction))


def read_jump_log(path):
    rec = struct.Struct("<QIb")
    out = []
    with open(path, "rb") as f:
        data = f.read()
    for t_fix, bond, direction in rec.iter_unpack(data):
        out.append((t_fix / 2 ** 32, bond, direction))
    return out


# ------------------------------------------------------------------ commands

def cmd_check_model(cfg) -> int:
    model = build_model(cfg)
    report = {"model": model.to_json(), "checks": {}}
    failed = False
    h = solve_gradient(model)
    if not h:
        report["checks"]["gradient"] = {"ok": False, "residual": h.residual}
        failed = True
    else:
        report["checks"]["gradient"] = {"ok": True,
                                        "residual": gradient_residual(model, h)}
        params = SimParams(model, n=3, gamma=float(cfg["gamma"]),
                           a=min(float(cfg["a"]), 1.0), rho=float(cfg["rho"]),
                           M=2)
        inv = exact_invariance_residual(model, params)
        db = detailed_balance_residual(model, float(cfg["rho"]), 6)
        report["checks"]["invariance"] = {"ok": inv < 1e-10, "residual": inv,
                                          "L": params.L}
        report["checks"]["detailed_balance"] = {"ok": db < 1e-10,
                                                "residual": db, "L": 6}
        th = params.thermo(h)
        report["thermo"] = th.to_json()
        report["thermo"]["drift_velocity"] = float(cfg["a"]) * th.beta_prime
        failed = inv >= 1e-10 or db >= 1e-10
    out = _out_dir(cfg)
    with open(out / "check_model.json", "w") as f:
        json.dump(report, f, indent=2)
    print(json.dumps(report, indent=2))
    return 1 if failed else 0


def _plot_series(out: Path, series_list, name="series.png"):
    plt = _figure()
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for s in series_list[:8]:
        for col in sorted(s.values):
            ax.plot(s.times, s.values[col], alpha=0.7,
                    label=f"{col} #{s.trajectory_id}"
                    if len(series_list) <= 2 else None)
    ax.set_xlabel("field time")
    ax.set_ylabel("observable")
    if len(series_list) <= 2:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out / name, dpi=120)
    plt.close(fig)


def cmd_simulate(cfg) -> int:
    params = build_params(cfg)
    plan = build_plan(cfg)
    out = _out_dir(cfg)
    start = time.time()
    index = int(cfg["trajectory_index"])
    if cfg["jump_log"]:
        # a second pass over the same trajectory records every jump
        st = spawn_trajectory(params, index)
        st.enable_event_log()
        log_path = out / "jumps.bin"
        log_path.unlink(missing_ok=True)
        for t in plan.times[1:]:
            run_until(st, float(t))
            write_jump_log(log_path, st.drain_events())
    series = run_trajectory(params, index, plan)
    write_series_csv(out / "series.csv", [series])
    _plot_series(out, [series])
    telemetry = {"wall_seconds": time.time() - start, "trajectories": 1}
    write_manifest(out, cfg, telemetry)
    print(f"wrote {out}/series.csv")
    return 0


def cmd_ensemble(cfg) -> int:
    params = build_params(cfg)
    plan = build_plan(cfg)
    out = _out_dir(cfg)
    start = time.time()
    task = SeriesTask(params, plan)
    n_traj = int(cfg["ensemble_size"])
    results, failures = run_trajectories(task, n_traj, int(cfg["workers"]))
    series_list = [s for s in results if s is not None]
    write_series_csv(out / "series.csv", series_list)
    # index-ordered reduction: per-column mean and variance on the grid
    summary = {"ensemble_size": n_traj, "completed": len(series_list),
               "columns": {}}
    if series_list:
        for col in sorted(series_list[0].values):
            stack = np.stack([s.values[col] for s in series_list])
            summary["columns"][col] = {
                "times": series_list[0].times.tolist(),
                "mean": stack.mean(axis=0).tolist(),
                "variance": stack.var(axis=0, ddof=1).tolist()
                if len(series_list) > 1 else None,
            }
    with open(out / "summary.json", "w") as f:
        json.dump(summary, f, indent=2)
    _plot_series(out, series_list)
    telemetry = {"wall_seconds": time.time() - start,
                 "trajectories": len(series_list),
                 "failures": [{"index": i, "error": msg.splitlines()[-1]}
                              for i, msg in failures]}
    write_manifest(out, cfg, telemetry, complete=not failures)
    print(f"wrote {out}/series.csv ({len(series_list)}/{n_traj} trajectories)")
    return 1 if failures else 0


def cmd_analyze(cfg) -> int:
    run_dir = Path(cfg["run_dir"] or cfg["out"])
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        print(f"refusing {run_dir}: no manifest (interrupted run?)",
              file=sys.stderr)
        return 1
    with open(manifest_path) as f:
        manifest = json.load(f)
    if not manifest.get("complete", False):
        print(f"refusing {run_dir}: manifest marked incomplete",
              file=sys.stderr)
        return 1
    for name, digest in manifest["files"].items():
        actual = _sha256(run_dir / name)
        if actual != digest:
            print(f"refusing {run_dir}: digest mismatch for {name}",
                  file=sys.stderr)
            return 1
    from .observables import read_series_csv
    series_list = read_series_csv(run_dir / "series.csv")
    run_cfg = manifest["config"]
    params = build_params(run_cfg)
    h = require_gradient(params.model)
    th = params.thermo(h)
    spec = LimitSpec.from_thermo(th, params.a)
    report = {"run_dir": str(run_dir), "trajectories": len(series_list),
              "thermo": th.to_json(), "columns": {}}
    times = series_list[0].times
    plan = build_plan(run_cfg)
    for col in sorted(series_list[0].values):
        stack = np.stack([s.values[col] for s in series_list])
        entry = {"times": times.tolist(),
                 "mean": stack.mean(axis=0).tolist(),
                 "variance": stack.var(axis=0, ddof=1).tolist()
                 if len(series_list) > 1 else None}
        if col.startswith("Y:") and len(series_list) > 1:
            name = col[2:]
            if name in plan.fields:
                H = plan.fields[name]
                entry["ou_variance_prediction"] = [
                    ou_covariance(H, H, t, t, spec) for t in times]
        entry["se_mean"] = (stack.std(axis=0, ddof=1)
                            / np.sqrt(len(series_list))).tolist() \
            if len(series_list) > 1 else None
        report["columns"][col] = entry
    out = _out_dir(cfg)
    with open(out / "analyze.json", "w") as f:
        json.dump(report, f, indent=2)
    plt = _figure()
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for col, entry in report["columns"].items():
        ax.errorbar(entry["times"], entry["mean"],
                    yerr=entry["se_mean"], label=f"mean {col}")
        if entry.get("ou_variance_prediction"):
            ax.plot(entry["times"], entry["ou_variance_prediction"], "--",
                    label=f"OU var {col}")
    ax.set_xlabel("field time")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out / "analyze.png", dpi=120)
    plt.close(fig)
    print(json.dumps({k: report[k] for k in ("run_dir", "trajectories")}))
    return 0


def cmd_hydro(cfg) -> int:
    params = build_params(cfg)
    out = _out_dir(cfg)
    start = time.time()
    dx = float(cfg["dx"]) if cfg["dx"] else params.M / 512
    spec = cfg["profile"]
    if isinstance(spec, str):
        profile = DensityProfile.load_csv(spec)
    elif spec["kind"] == "step":
        profile = DensityProfile.from_function(
            step_profile(spec["left"], spec["right"], params.M),
            params.M, dx)
    elif spec["kind"] == "constant":
        profile = DensityProfile.from_function(
            lambda x: np.full_like(x, spec["value"]), params.M, dx)
    else:
        raise ValueError(f"unknown profile kind {spec['kind']!r}")
    t = float(cfg["t"]) if cfg["t"] else params.T
    h = require_gradient(params.model)
    th = params.thermo(h)
    target = solve_burgers(profile, th, params.a, t)
    profile.save_csv(out / "profile_initial.csv")
    target.save_csv(out / "profile_pde.csv")
    l1, se, baseline = hydro_compare(params, profile, t,
                                     int(cfg["ensemble_size"]))
    report = {"t": t, "l1": l1, "se": se, "baseline_l1": baseline,
              "ensemble_size": int(cfg["ensemble_size"]), "dx": profile.dx}
    with open(out / "hydro.json", "w") as f:
        json.dump(report, f, indent=2)
    plt = _figure()
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(profile.centers, profile.values, label="initial")
    ax.plot(target.centers, target.values, label=f"PDE at t={t:g}")
    ax.set_xlabel("x")
    ax.set_ylabel("density")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "hydro.png", dpi=120)
    plt.close(fig)
    write_manifest(out, cfg, {"wall_seconds": time.time() - start})
    print(json.dumps(report))
    return 0


def cmd_crossover_sweep(cfg) -> int:
    from .acceptance import crossover_sweep
    out = _out_dir(cfg)
    start = time.time()
    table, fits = crossover_sweep(
        workers=int(cfg["workers"]),
        n_grid=tuple(cfg["n_grid"]),
        gamma_grid=tuple(cfg["gamma_grid"]),
        traj_table={int(k): v for k, v in cfg["traj_table"].items()}
        if cfg["traj_table"] else None,
        a=float(cfg["a"]), seed=int(cfg["seed"]))
    import csv as _csv
    with open(out / "sweep.csv", "w", newline="") as f:
        w = _csv.writer(f)
        w.writerow(["gamma", "n", "a2_mean", "a2_se", "n_traj"])
        for row in table:
            w.writerow([row["gamma"], row["n"], repr(row["a2"]),
                        repr(row["se"]), row["n_traj"]])
    report = {"fits": {f"{g:g}": {"exponent": fit.exponent,
                                  "exponent_se": fit.exponent_se,
                                  "prefactor": fit.prefactor}
                       for g, fit in fits.items()}}
    with open(out / "sweep.json", "w") as f:
        json.dump(report, f, indent=2)
    plt = _figure()
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for gamma in cfg["gamma_grid"]:
        rows = [r for r in table if r["gamma"] == gamma]
        ns = [r["n"] for r in rows]
        vals = [r["a2"] for r in rows]
        errs = [r["se"] for r in rows]
        ax.errorbar(ns, vals, yerr=errs, marker="o",
                    label=f"gamma={gamma:g}")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("n")
    ax.set_ylabel("E[(A_t)^2]")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "sweep.png", dpi=120)
    plt.close(fig)
    write_manifest(out, cfg, {"wall_seconds": time.time() - start})
    print(json.dumps(report))
    return 0


def cmd_run_all_acceptance(cfg) -> int:
    from .acceptance import run_all
    out = _out_dir(cfg)
    start = time.time()
    numbers = set(cfg["criteria"]) if cfg["criteria"] else None
    results = run_all(workers=int(cfg["workers"]), numbers=numbers)
    for res in results:
        print(res.line(), flush=True)
    report = {"results": [{"number": r.number, "name": r.name,
                           "passed": r.passed, "summary": r.summary,
                           "details": r.details} for r in results],
              "all_passed": all(r.passed for r in results)}
    with open(out / "acceptance.json", "w") as f:
        json.dump(report, f, indent=2, default=float)
    _acceptance_figures(out, results)
    write_manifest(out, cfg, {"wall_seconds": time.time() - start})
    return 0 if report["all_passed"] else 1


def _acceptance_figures(out: Path, results):
    plt = _figure()
    by_num = {r.number: r for r in results}
    if 5 in by_num:
        fig, ax = plt.subplots(figsize=(6, 4.5))
        for row in by_num[5].details["rows"]:
            ts = [c["t"] for c in row["variances"]]
            vs = [c["var"] for c in row["variances"]]
            es = [c["se"] for c in row["variances"]]
            tg = [c["target"] for c in row["variances"]]
            ax.errorbar(ts, vs, yerr=es, marker="o",
                        label=f"gamma={row['gamma']:g}")
            ax.plot(ts, tg, "k--", alpha=0.5)
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("t")
        ax.set_ylabel("Var(Z_t)")
        ax.legend()
        fig.tight_layout()
        fig.savefig(out / "fbm_variance.png", dpi=120)
        plt.close(fig)
    if 6 in by_num:
        fig, ax = plt.subplots(figsize=(6, 4.5))
        table = by_num[6].details["table"]
        for gamma in sorted({r["gamma"] for r in table}):
            rows = [r for r in table if r["gamma"] == gamma]
            ax.errorbar([r["n"] for r in rows], [r["a2"] for r in rows],
                        yerr=[r["se"] for r in rows], marker="o",
                        label=f"gamma={gamma:g}")
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("n")
        ax.set_ylabel("E[(A_1)^2]")
        ax.legend()
        fig.tight_layout()
        fig.savefig(out / "crossover.png", dpi=120)
        plt.close(fig)
    if 3 in by_num:
        fig, ax = plt.subplots(figsize=(6, 4.5))
        checks = by_num[3].details["checks"]
        x = np.arange(len(checks))
        ax.bar(x - 0.15, [c["empirical"] for c in checks], width=0.3,
               yerr=[3 * c["se"] for c in checks], label="empirical")
        ax.bar(x + 0.15, [c["target"] for c in checks], width=0.3,
               label="OU prediction")
        ax.set_xticks(x)
        ax.set_xticklabels([f"({c['t']:g},{c['s']:g})" for c in checks])
        ax.set_ylabel("E[Y_t(H) Y_s(G)]")
        ax.legend()
        fig.tight_layout()
        fig.savefig(out / "ou_covariance.png", dpi=120)
        plt.close(fig)


COMMANDS = {
    "check-model": cmd_check_model,
    "simulate": cmd_simulate,
    "ensemble": cmd_ensemble,
    "analyze": cmd_analyze,
    "hydro": cmd_hydro,
    "crossover-sweep": cmd_crossover_sweep,
    "run-all-acceptance": cmd_run_all_acceptance,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="wasep",
        description="Weakly asymmetric exclusion process: simulation and "
                    "fluctuation verification harness.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--seed", type=int, help="master seed override")
    parser.add_argument("--workers", type=int,
                        help=f"worker count (default ${WORKERS_ENV} or 1)")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--run-dir", help="run directory for analyze")
    parser.add_argument("--jump-log", action="store_true",
                        help="dump the binary jump log (simulate)")
    args = parser.parse_args(argv)
    cfg = load_config(args)
    if args.run_dir:
        cfg["run_dir"] = args.run_dir
    if args.jump_log:
        cfg["jump_log"] = True
    return COMMANDS[args.command](cfg)


if __name__ == "__main__":
    sys.exit(main())
