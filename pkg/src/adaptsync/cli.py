"""Command-line front end: ``adaptsync check | run | sweep``.

Exit status: 0 on success, 1 when an assumption check fails, 2 for a bad
scenario or arguments, 3 when the simulation diverges or a regressor cannot
be evaluated.
"""

from __future__ import annotations

import argparse
import dataclasses
import itertools
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .control import ConfigError
from .engine import AssumptionError, DivergenceError, RunResult, run
from .exo import design_gain
from .expr import ExprEvalError
from .scenario import Scenario, load_scenario

OUT_DIR_ENV = "ADAPTSYNC_OUT_DIR"
EXIT_OK, EXIT_ASSUMPTION, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
SWEEP_FIELDS = ("k", "mu0", "epsilon", "step")


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n"


# --------------------------------------------------------------------------
# Scenario overrides

def apply_overrides(sc: Scenario, mode=None, epsilon=None, step=None, duration=None,
                    seed=None, k=None, mu0=None) -> Scenario:
    """Return a copy of ``sc`` with the given run, controller or observer changes.

    Rebuilding the scenario re-runs its validation, so a step that no longer
    divides the switching instants is rejected here.
    """
    changes = {}
    if mode is not None:
        changes["mode"] = mode
    if epsilon is not None:
        changes["epsilon"] = float(epsilon)
    if step is not None:
        changes["step"] = float(step)
    if duration is not None:
        changes["duration"] = float(duration)
    out = sc
    if changes:
        out = out.replace(run=dataclasses.replace(out.run, **changes))
    if k is not None:
        fs = tuple(dataclasses.replace(f, k_gain=float(k)) for f in out.followers)
        out = out.replace(followers=fs)
    if mu0 is not None:
        out = out.replace(mu0=float(mu0), L0=design_gain(out.leader, float(mu0)))
    if seed is not None:
        out = out.with_seed(int(seed))
    return out


def resolve_out_dir(arg: str | None, sc: Scenario) -> Path:
    if arg:
        return Path(arg)
    if os.environ.get(OUT_DIR_ENV):
        return Path(os.environ[OUT_DIR_ENV]) / sc.name
    if sc.output_dir:
        return Path(sc.output_dir)
    return Path("runs") / sc.name


# --------------------------------------------------------------------------
# Artifacts

def plot_series(result: RunResult, N: int) -> dict[str, np.ndarray]:
    """Two-column ``t value`` series keyed by metric name."""
    tr = result.trace
    t = tr.t
    e0 = [tr[f"e{i}_0"] for i in range(1, N + 1)]
    out = {
        "tracking_error": np.max(np.abs(e0), axis=0) if N else np.zeros_like(t),
        "observer_error": np.max(tr.agent_columns("ev", N), axis=1) if N else np.zeros_like(t),
        "V": tr["V"],
        "W": tr["W"],
    }
    for i in range(1, N + 1):
        for name in (f"e{i}_0", f"s{i}", f"ev{i}", f"Dhat{i}"):
            out[name] = tr[name]
    return {k: np.column_stack([t, v]) for k, v in out.items()}


def write_artifacts(result: RunResult, sc: Scenario, out_dir: Path) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    written = [out_dir / "trace.csv", out_dir / "summary.json", out_dir / "timing.json"]
    result.trace.to_csv(written[0])
    written[1].write_text(_dumps(result.summary), encoding="utf-8")
    # wall clock lives apart from the summary so the summary stays byte-stable
    written[2].write_text(_dumps({"wall_clock_s": result.wall_clock_s}), encoding="utf-8")
    plots = out_dir / "plots"
    plots.mkdir(exist_ok=True)
    for name, series in plot_series(result, sc.N).items():
        path = plots / f"{name}.dat"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("# t value\n")
            for t, v in series:
                fh.write(f"{float(t)!r} {float(v)!r}\n")
        written.append(path)
    return written


def _fmt(x, spec=".3e") -> str:
    if x is None:
        return "-"
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return format(x, spec)


def format_summary(summary: dict) -> str:
    head = f"{'agent':>5} {'terminal':>10} {'|v-v0|':>10} {'slope':>9} {'R2':>7} {'sync_t':>8} {'D_hat':>8}"
    lines = [head, "-" * len(head)]
    d_hat = summary.get("D_hat_final", [])
    for a, row in enumerate(summary["agents"]):
        lines.append(
            f"{row['agent']:>5} {_fmt(row['terminal_error']):>10} "
            f"{_fmt(row['terminal_observer_errors'][0]):>10} "
            f"{_fmt(row['observer_decay_slope'], '.4f'):>9} {_fmt(row['observer_decay_r2'], '.4f'):>7} "
            f"{_fmt(row['sync_time'], '.2f'):>8} {_fmt(d_hat[a] if a < len(d_hat) else None, '.3f'):>8}")
    lines.append(f"mode={summary['mode']} epsilon={summary['epsilon']} step={summary['step']} "
                 f"T={summary['duration']}")
    lines.append(f"terminal_max_error={_fmt(summary['terminal_max_error'])} "
                 f"residual_band={_fmt(summary['residual_band'])} converged={summary['converged']}")
    lines.append(f"V_violations={summary['V_violations']} W_tail={_fmt(summary['W_tail_increment'])}")
    return "\n".join(lines)


def format_assumptions(report: dict) -> str:
    leader = report["leader"]
    jc = report["joint_connectivity"]
    diag = report["observer_gain_diagnostic"]
    lines = [
        f"leader neutrally stable: {leader['neutrally_stable']}  detectable: {leader['detectable']}",
        f"joint connectivity: {jc['holds']} ({jc['message']})",
        f"undirected follower edges: {report['undirected_followers']}",
        f"observer monodromy spectral radius: {_fmt(diag['monodromy_spectral_radius'], '.4f')}",
    ]
    for row in report["regressor_bounds"]:
        lines.append(f"agent {row['agent']} regressor bound: {row['passed']} ({row['note']})")
    for msg in report["failures"]:
        lines.append(f"FAIL {msg}")
    lines.append("all assumptions pass" if report["all_pass"] else "assumption checks failed")
    return "\n".join(lines)


# --------------------------------------------------------------------------
# Commands

def _load(args) -> Scenario:
    sc = load_scenario(args.scenario)
    return apply_overrides(sc, mode=getattr(args, "mode", None),
                           epsilon=getattr(args, "epsilon", None),
                           step=getattr(args, "step", None),
                           duration=getattr(args, "duration", None),
                           seed=getattr(args, "seed", None))


def cmd_check(args) -> int:
    sc = _load(args)
    report = sc.assumptions()
    print(format_assumptions(report))
    return EXIT_OK if report["all_pass"] else EXIT_ASSUMPTION


def cmd_run(args) -> int:
    if args.check_only:
        return cmd_check(args)
    sc = _load(args)
    config = sc.run
    if args.override_assumptions:
        config = dataclasses.replace(config, override_assumptions=True)
    result = run(sc, config)
    out_dir = resolve_out_dir(args.out_dir, sc)
    write_artifacts(result, sc, out_dir)
    print(format_summary(result.summary))
    print(f"wrote {out_dir}")
    return EXIT_OK


def sweep_grid(k=None, mu0=None, epsilon=None, step=None) -> list[dict]:
    """Grid points in ``itertools.product`` order over the given fields."""
    axes = [(name, vals) for name, vals in zip(SWEEP_FIELDS, (k, mu0, epsilon, step)) if vals]
    if not axes:
        raise ConfigError("no parameters")
    names = [a[0] for a in axes]
    return [dict(zip(names, combo)) for combo in itertools.product(*(a[1] for a in axes))]


def _sweep_point(scenario_ref, base: dict, point: dict) -> dict:
    try:
        sc = apply_overrides(load_scenario(scenario_ref), **base, **point)
        result = run(sc)
    except (ValueError, AssumptionError, DivergenceError) as exc:
        return {"params": point, "ok": False, "error": f"{type(exc).__name__}: {exc}"}
    return {"params": point, "ok": True, "summary": result.summary}


def run_sweep(scenario_ref, points: list[dict], base: dict | None = None,
              workers: int | None = None) -> list[dict]:
    """One run per grid point; rows come back in grid order."""
    base = base or {}
    if workers == 1:
        return [_sweep_point(scenario_ref, base, p) for p in points]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_sweep_point, scenario_ref, base, p) for p in points]
        return [f.result() for f in futures]


def cmd_sweep(args) -> int:
    points = sweep_grid(args.k, args.mu0, args.sweep_epsilon, args.sweep_step)
    base = {"mode": args.mode, "duration": args.duration, "seed": args.seed}
    rows = run_sweep(args.scenario, points, base, args.workers)
    sc = load_scenario(args.scenario)
    out_dir = resolve_out_dir(args.out_dir, sc)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "sweep.json").write_text(_dumps({"scenario": sc.name, "points": rows}),
                                        encoding="utf-8")
    for row in rows:
        params = " ".join(f"{k}={v}" for k, v in row["params"].items())
        if row["ok"]:
            s = row["summary"]
            print(f"{params}: terminal={_fmt(s['terminal_max_error'])} "
                  f"band={_fmt(s['residual_band'])} converged={s['converged']}")
        else:
            print(f"{params}: {row['error']}")
    print(f"wrote {out_dir / 'sweep.json'}")
    return EXIT_OK if all(r["ok"] for r in rows) else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adaptsync",
                                     description="Adaptive leader-following synchronization simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, run_flags=True):
        p.add_argument("--scenario", required=True,
                       help="scenario file or bundled name (theorem1_demo, static_demo, disturbance_demo)")
        p.add_argument("--out-dir", default=None,
                       help=f"output directory (default: ${OUT_DIR_ENV}/<name>, the scenario's "
                            "output.dir, then runs/<name>)")
        p.add_argument("--mode", choices=("baseline", "disturbance_rejection"), default=None)
        p.add_argument("--duration", type=float, default=None)
        p.add_argument("--seed", type=int, default=None, help="base seed for noise disturbances")
        if run_flags:
            p.add_argument("--epsilon", type=float, default=None, help="sgn boundary layer, 0 for exact")
            p.add_argument("--step", type=float, default=None)

    p = sub.add_parser("check", help="run the assumption checks only")
    common(p)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("run", help="simulate one scenario and write artifacts")
    common(p)
    p.add_argument("--check-only", action="store_true", help="report assumptions without simulating")
    p.add_argument("--override-assumptions", action="store_true",
                   help="simulate even if assumption checks fail (recorded in the summary)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a parameter grid concurrently")
    common(p, run_flags=False)
    p.add_argument("--k", type=float, nargs="+", help="controller gain applied to every follower")
    p.add_argument("--mu0", type=float, nargs="+")
    p.add_argument("--epsilon", dest="sweep_epsilon", type=float, nargs="+")
    p.add_argument("--step", dest="sweep_step", type=float, nargs="+")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except AssumptionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except (DivergenceError, ExprEvalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        # ConfigError and follower validation errors
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
