"""Scenario files: YAML loading with line-numbered errors, validation and dumping.

A scenario file has the sections ``leader``, ``observer``, ``graphs``,
``schedule``, ``followers``, ``run``, ``assumption6`` and ``output``; see
the README for the full schema.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import expr
from .control import ConfigError, check_beta_hurwitz
from .exo import (DesignError, LeaderSystem, design_gain, stability_report,
                  switched_stability)
from .graph import (DiGraph, GraphError, JointWindow, SwitchingSchedule, check_assumption3,
                    check_assumption4, parse_edge)
from .observer import ObserverGains, ObserverState
from .plant import DisturbanceProfile, FollowerSpec

BUNDLED = ("theorem1_demo", "static_demo", "disturbance_demo")


class ScenarioError(ConfigError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class Scenario:
    name: str
    leader: LeaderSystem
    L0: np.ndarray
    observer_gains: ObserverGains
    schedule: SwitchingSchedule
    followers: tuple
    graph_names: tuple = ()
    mu0: float | None = None
    observer_init: ObserverState | None = None
    window: JointWindow | None = None
    run: Any = None  # engine.RunConfig
    assumption6_box: tuple = (-5.0, 5.0)
    assumption6_samples: int = 2000
    output_dir: str | None = None

    def __post_init__(self):
        from .engine import RunConfig

        L0 = np.asarray(self.L0, dtype=float).reshape(-1)
        if L0.shape != (self.leader.n,):
            raise ConfigError(f"L0 must have {self.leader.n} entries")
        L0.setflags(write=False)
        object.__setattr__(self, "L0", L0)
        object.__setattr__(self, "followers", tuple(self.followers))
        if self.run is None:
            object.__setattr__(self, "run", RunConfig())
        if self.schedule.node_count != len(self.followers) + 1:
            raise ConfigError(f"graphs have {self.schedule.node_count - 1} followers, "
                              f"scenario declares {len(self.followers)}")
        for i, f in enumerate(self.followers, start=1):
            check_beta_hurwitz(f.beta, agent=i)
        if self.observer_init is not None:
            N, n = len(self.followers), self.leader.n
            if self.observer_init.v.shape != (N, n):
                raise ConfigError(f"observer init must cover {N} agents of dimension {n}")
        check_grid_alignment(self, self.run.step)

    @property
    def N(self) -> int:
        return len(self.followers)

    def replace(self, **changes) -> "Scenario":
        return dataclasses.replace(self, **changes)

    def with_seed(self, seed: int) -> "Scenario":
        """Agent ``i`` noise profiles get seed ``seed + i - 1``."""
        fs = []
        for i, f in enumerate(self.followers):
            if f.disturbance.kind == "seeded_bounded_noise":
                f = dataclasses.replace(f, disturbance=dataclasses.replace(f.disturbance,
                                                                           seed=seed + i))
            fs.append(f)
        return self.replace(followers=tuple(fs))

    def seeds(self) -> dict:
        return {str(i): f.disturbance.seed for i, f in enumerate(self.followers, start=1)
                if f.disturbance.kind == "seeded_bounded_noise"}

    @cached_property
    def _assumptions(self) -> dict:
        return assumption_report(self)

    def assumptions(self) -> dict:
        return self._assumptions


def check_grid_alignment(sc: Scenario, h: float) -> None:
    """Reject switching instants and disturbance breakpoints that fall off the step grid."""
    sched = sc.schedule
    instants = [a for a, _ in sched.intervals]
    if sched.period is not None:
        instants.append(sched.period)
    for a in instants:
        if not _on_grid(a, h):
            raise ConfigError(f"switching instant {a:g} is not a multiple of step {h:g}")
    for i, f in enumerate(sc.followers, start=1):
        for spacing in f.disturbance.breakpoint_spacing():
            if not _on_grid(spacing, h):
                raise ConfigError(f"agent {i}: disturbance breakpoint {spacing:g} "
                                  f"is not a multiple of step {h:g}")


def _on_grid(x: float, h: float) -> bool:
    q = x / h
    return abs(q - round(q)) <= 1e-6 * max(1.0, abs(q))


def assumption_report(sc: Scenario) -> dict:
    """Run every standing-assumption check; ``failures`` lists what did not hold."""
    failures = []
    rep = stability_report(sc.leader)
    if not rep.marginally_stable:
        failures.append("leader S is not marginally stable")
    if not rep.detectable:
        failures.append("(F, S) is not detectable")
    window = sc.window or JointWindow.default(sc.schedule)
    a3, conn = check_assumption3(sc.schedule, window)
    if not a3:
        failures.append(f"joint connectivity: {conn.message}")
    a4 = check_assumption4(sc.schedule)
    if not a4:
        failures.append("follower subgraph is not undirected")
    bounds = []
    for i, f in enumerate(sc.followers, start=1):
        if f.phi_expr is None:
            timed = any(expr.depends_on_time(r) for r in f.regressor_exprs)
            ok = not timed
            entry = {"agent": i, "passed": ok,
                     "note": "regressor depends on t; a bound function is required" if timed
                     else "time-invariant regressor; no bound function needed"}
        else:
            try:
                chk = expr.check_assumption6(f.regressor_exprs, f.phi_expr, f.order,
                                             box=tuple(sc.assumption6_box),
                                             n_samples=sc.assumption6_samples)
            except expr.ExprEvalError as exc:
                ok = False
                entry = {"agent": i, "passed": False, "note": f"evaluation failed: {exc}"}
            else:
                ok = chk.passed
                entry = {"agent": i, "passed": ok, "worst_margin": chk.worst_margin,
                         "worst_x": list(chk.worst_x), "worst_t": chk.worst_t,
                         "samples": chk.samples, "note": chk.kind}
        bounds.append(entry)
        if not ok:
            failures.append(f"agent {i}: regressor bound check failed")
    diag = switched_stability(sc.leader, sc.L0, sc.schedule)
    return {
        "leader": rep.as_dict(),
        "joint_connectivity": {"holds": a3, "message": conn.message,
                               # null when the final graph is permanent
                               "window_bound": window.window_bound
                               if math.isfinite(window.window_bound) else None,
                               "subsequence": list(window.subsequence),
                               "unreachable": list(conn.unreachable)},
        "undirected_followers": a4,
        "regressor_bounds": bounds,
        "observer_gain_diagnostic": diag.as_dict(),
        "failures": failures,
        "all_pass": not failures,
    }


# --------------------------------------------------------------------------
# YAML with line tracking

def _line_map(node, path=(), out=None) -> dict:
    if out is None:
        out = {}
    out[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = k.value
            out[path + (key,)] = v.start_mark.line + 1
            _line_map(v, path + (key,), out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _line_map(v, path + (i,), out)
    return out


class _Reader:
    """Typed access to the parsed document with line numbers in every error."""

    def __init__(self, data, lines: dict):
        self.data = data
        self.lines = lines

    def line(self, path) -> int | None:
        path = tuple(path)
        while path not in self.lines and path:
            path = path[:-1]
        return self.lines.get(path)

    def fail(self, path, message: str):
        raise ScenarioError(message, self.line(path))

    def get(self, path, default=...):
        cur = self.data
        for i, key in enumerate(path):
            if isinstance(cur, dict) and key in cur:
                cur = cur[key]
            elif isinstance(cur, list) and isinstance(key, int) and key < len(cur):
                cur = cur[key]
            else:
                if default is not ...:
                    return default
                self.fail(path[:i], f"missing required key '{'.'.join(map(str, path))}'")
        return cur

    def num(self, path, default=..., positive=False) -> float:
        v = self.get(path, default)
        if v is None and default is None:
            return None
        try:
            if isinstance(v, bool):
                raise ValueError
            out = float(v)
        except (TypeError, ValueError):
            self.fail(path, f"'{_dotted(path)}' must be a number, got {v!r}")
        if not math.isfinite(out):
            self.fail(path, f"'{_dotted(path)}' must be finite")
        if positive and out <= 0:
            self.fail(path, f"'{_dotted(path)}' must be positive")
        return out

    def vec(self, path, default=...) -> list:
        v = self.get(path, default)
        if v is None:
            return None
        if v is default:
            return list(v)
        if not isinstance(v, list):
            self.fail(path, f"'{_dotted(path)}' must be a list")
        return [self.num(tuple(path) + (i,)) for i in range(len(v))]

    def mat(self, path, default=...) -> list:
        v = self.get(path, default)
        if v is None:
            return None
        if not isinstance(v, list) or not all(isinstance(r, list) for r in v):
            self.fail(path, f"'{_dotted(path)}' must be a list of rows")
        return [self.vec(tuple(path) + (i,)) for i in range(len(v))]

    def text(self, path, default=...) -> str:
        v = self.get(path, default)
        if v is None:
            return None
        if not isinstance(v, (str, int, float)) or isinstance(v, bool):
            self.fail(path, f"'{_dotted(path)}' must be a string")
        return str(v)

    def section(self, path, default=...) -> dict:
        v = self.get(path, default)
        if v is None:
            return {}
        if not isinstance(v, dict):
            self.fail(path, f"'{_dotted(path)}' must be a mapping")
        return v

    def check_keys(self, path, allowed):
        sec = self.section(path, None)
        for key in sec:
            if key not in allowed:
                self.fail(tuple(path) + (key,), f"unknown key '{key}' in "
                          f"'{_dotted(path) or 'top level'}'")


def _dotted(path) -> str:
    return ".".join(str(p) for p in path)


_TOP = {"name", "leader", "observer", "graphs", "schedule", "followers", "run",
        "assumption6", "output"}
_FOLLOWER = {"order", "regressor", "theta", "beta", "k", "Lambda", "phi", "x0",
             "disturbance", "theta_hat0", "D_hat0"}
_DIST = {"kind", "amplitude", "frequency", "phase", "period", "breakpoints", "values",
         "hold_time", "seed"}
_RUN = {"step", "duration", "integrator", "mode", "epsilon", "record_stride",
        "sync_threshold", "override_assumptions"}


def parse_scenario(text: str, name: str = "scenario") -> Scenario:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ScenarioError(f"invalid YAML: {getattr(exc, 'problem', exc)}",
                            mark.line + 1 if mark else None) from None
    if not isinstance(data, dict):
        raise ScenarioError("scenario must be a mapping", 1)
    rd = _Reader(data, _line_map(node))
    rd.check_keys((), _TOP)
    try:
        return _build(rd, name)
    except ScenarioError:
        raise
    except (ConfigError, GraphError, DesignError, expr.ExprError, ValueError) as exc:
        raise ScenarioError(str(exc)) from exc


def _build(rd: _Reader, default_name: str) -> Scenario:
    from .engine import RunConfig

    name = rd.text(("name",), default_name)

    rd.check_keys(("leader",), {"S", "F", "v0", "mu0", "L0"})
    S = rd.mat(("leader", "S"))
    F = rd.vec(("leader", "F"))
    v0 = rd.vec(("leader", "v0"))
    try:
        leader = LeaderSystem(np.array(S), np.array(F), np.array(v0))
    except ValueError as exc:
        rd.fail(("leader",), str(exc))
    mu0 = rd.num(("leader", "mu0"), None)
    L0 = rd.vec(("leader", "L0"), None)
    if (mu0 is None) == (L0 is None):
        rd.fail(("leader",), "give exactly one of 'mu0' or 'L0'")
    if L0 is None:
        try:
            L0 = design_gain(leader, mu0)
        except DesignError as exc:
            rd.fail(("leader", "mu0"), str(exc))

    rd.check_keys(("observer",), {"mode", "mu1", "mu2", "mu_v", "init"})
    try:
        gains = ObserverGains(rd.num(("observer", "mu1"), 1.0), rd.num(("observer", "mu2"), 1.0),
                              rd.text(("observer", "mode"), "output_based"),
                              rd.num(("observer", "mu_v"), 1.0))
    except ScenarioError:
        raise
    except ValueError as exc:
        rd.fail(("observer",), str(exc))

    followers_raw = rd.get(("followers",))
    if not isinstance(followers_raw, list):
        rd.fail(("followers",), "'followers' must be a list (empty for a leader-only run)")
    N = len(followers_raw)

    graphs_sec = rd.section(("graphs",))
    if not graphs_sec:
        rd.fail(("graphs",), "at least one graph is required")
    graph_names, graphs = [], []
    for gname, edges in graphs_sec.items():
        path = ("graphs", gname)
        if edges is None:
            edges = []
        if not isinstance(edges, list):
            rd.fail(path, f"graph '{gname}' must be a list of 'j -> i' edges")
        pairs = []
        for k, e in enumerate(edges):
            if not isinstance(e, str):
                rd.fail(path + (k,), "weighted or structured edges are not supported; "
                        "use 'j -> i'")
            try:
                pairs.append(parse_edge(e))
            except GraphError as exc:
                rd.fail(path + (k,), str(exc))
        try:
            graphs.append(DiGraph(N + 1, frozenset(pairs)))
        except GraphError as exc:
            rd.fail(path, f"graph '{gname}': {exc}")
        graph_names.append(str(gname))
    index = {g: k + 1 for k, g in enumerate(graph_names)}

    rd.check_keys(("schedule",), {"cycle", "intervals", "dwell", "window"})
    sched_sec = rd.section(("schedule",), None)
    dwell = rd.num(("schedule", "dwell"), None)
    if dwell is not None and dwell <= 0:
        rd.fail(("schedule", "dwell"), "'schedule.dwell' must be positive")

    def graph_ref(path):
        ref = rd.text(path)
        if ref not in index:
            rd.fail(path, f"unknown graph '{ref}'")
        return index[ref]

    try:
        if "cycle" in sched_sec and "intervals" in sched_sec:
            rd.fail(("schedule",), "give either 'cycle' or 'intervals', not both")
        if "cycle" in sched_sec:
            cyc = rd.get(("schedule", "cycle"))
            if not isinstance(cyc, list) or not cyc:
                rd.fail(("schedule", "cycle"), "'schedule.cycle' must be a non-empty list")
            entries = [(graph_ref(("schedule", "cycle", k, 0)),
                        rd.num(("schedule", "cycle", k, 1), positive=True))
                       for k in range(len(cyc))]
            schedule = SwitchingSchedule.periodic(graphs, entries, dwell)
        elif "intervals" in sched_sec:
            ivs = rd.get(("schedule", "intervals"))
            if not isinstance(ivs, list) or not ivs:
                rd.fail(("schedule", "intervals"), "'schedule.intervals' must be a non-empty list")
            entries = [(rd.num(("schedule", "intervals", k, 0)),
                        graph_ref(("schedule", "intervals", k, 1))) for k in range(len(ivs))]
            if dwell is None:
                gaps = [b[0] - a[0] for a, b in zip(entries, entries[1:])]
                dwell = min(gaps) if gaps else 1.0
            schedule = SwitchingSchedule(tuple(graphs), tuple(entries), dwell)
        else:
            if len(graphs) != 1:
                rd.fail(("schedule",), "several graphs declared but no schedule given")
            schedule = SwitchingSchedule.static(graphs[0], dwell or 1.0)
    except GraphError as exc:
        rd.fail(("schedule",), str(exc))

    window = None
    if "window" in sched_sec:
        rd.check_keys(("schedule", "window"), {"bound", "subsequence"})
        sub = rd.vec(("schedule", "window", "subsequence"))
        window = JointWindow(rd.num(("schedule", "window", "bound"), positive=True),
                             tuple(int(v) for v in sub))

    followers = [_follower(rd, i) for i in range(N)]

    obs_init = None
    if "init" in rd.section(("observer",), None):
        p = ("observer", "init")
        rd.check_keys(p, {"v", "S", "L"})
        n = leader.n
        v = rd.mat(p + ("v",), None)
        Sm = rd.get(p + ("S",), None)
        L = rd.mat(p + ("L",), None)
        try:
            obs_init = ObserverState(
                np.array(v) if v is not None else np.zeros((N, n)),
                np.array([rd.mat(p + ("S", k)) for k in range(len(Sm))])
                if Sm is not None else np.zeros((N, n, n)),
                np.array(L) if L is not None else np.zeros((N, n)))
        except ScenarioError:
            raise
        except ValueError as exc:
            rd.fail(p, str(exc))

    rd.check_keys(("run",), _RUN)
    run_kwargs = {}
    for key in ("step", "duration", "epsilon", "sync_threshold"):
        if key in rd.section(("run",), None):
            run_kwargs[key] = rd.num(("run", key))
    for key in ("integrator", "mode"):
        if key in rd.section(("run",), None):
            run_kwargs[key] = rd.text(("run", key))
    if "record_stride" in rd.section(("run",), None):
        run_kwargs["record_stride"] = int(rd.num(("run", "record_stride")))
    if "override_assumptions" in rd.section(("run",), None):
        run_kwargs["override_assumptions"] = bool(rd.get(("run", "override_assumptions")))
    try:
        run = RunConfig(**run_kwargs)
    except ConfigError as exc:
        rd.fail(("run",), str(exc))

    rd.check_keys(("assumption6",), {"box", "samples"})
    box = tuple(rd.vec(("assumption6", "box"), [-5.0, 5.0]))
    if len(box) != 2 or box[0] >= box[1]:
        rd.fail(("assumption6", "box"), "'assumption6.box' must be [low, high]")
    samples = int(rd.num(("assumption6", "samples"), 2000))

    rd.check_keys(("output",), {"dir"})
    out_dir = rd.text(("output", "dir"), None)

    try:
        sc = Scenario(name, leader, np.array(L0), gains, schedule, tuple(followers),
                      tuple(graph_names), mu0, obs_init, window, run, box, samples, out_dir)
    except ConfigError as exc:
        line = None
        msg = str(exc)
        if msg.startswith("agent "):
            agent = int(msg.split()[1].rstrip(":"))
            line = rd.line(("followers", agent - 1))
        elif "switching instant" in msg:
            line = rd.line(("schedule",))
        raise ScenarioError(msg, line) from None
    sc.assumptions()
    return sc


def _follower(rd: _Reader, i: int) -> FollowerSpec:
    p = ("followers", i)
    agent = i + 1
    if not isinstance(rd.get(p), dict):
        rd.fail(p, f"agent {agent}: follower entry must be a mapping")
    rd.check_keys(p, _FOLLOWER)
    order = rd.num(p + ("order",))
    if order != int(order) or order < 1:
        rd.fail(p + ("order",), f"agent {agent}: order must be a positive integer")
    order = int(order)
    rows = rd.get(p + ("regressor",), [])
    if isinstance(rows, str):
        rows = [rows]
    if not isinstance(rows, list):
        rd.fail(p + ("regressor",), f"agent {agent}: regressor must be a list of expressions")
    rows = [rd.text(p + ("regressor", k)) for k in range(len(rows))]
    for k, src in enumerate(rows):
        try:
            expr.parse(src, order)
        except expr.ExprError as exc:
            rd.fail(p + ("regressor", k), f"agent {agent}: {exc}")
    phi = rd.text(p + ("phi",), None)
    if phi is not None:
        try:
            expr.parse(phi, order)
        except expr.ExprError as exc:
            rd.fail(p + ("phi",), f"agent {agent}: {exc}")
    beta = rd.vec(p + ("beta",), [])
    try:
        check_beta_hurwitz(beta, agent=agent)
    except ConfigError as exc:
        rd.fail(p + ("beta",), str(exc))
    Lam = rd.mat(p + ("Lambda",), None)
    dist = _disturbance(rd, p + ("disturbance",), agent)
    try:
        return FollowerSpec(
            order=order,
            f_rows=tuple(rows),
            theta=tuple(rd.vec(p + ("theta",), [])),
            beta=tuple(beta),
            k_gain=rd.num(p + ("k",), 1.0),
            Lambda=None if Lam is None else np.array(Lam),
            phi=phi,
            x_init=rd.vec(p + ("x0",), None),
            disturbance=dist,
            theta_hat_init=rd.vec(p + ("theta_hat0",), None),
            D_hat_init=rd.num(p + ("D_hat0",), 0.0),
        )
    except ScenarioError:
        raise
    except ValueError as exc:
        rd.fail(p, f"agent {agent}: {exc}")


def _disturbance(rd: _Reader, p, agent: int) -> DisturbanceProfile:
    sec = rd.get(p, None)
    if sec is None:
        return DisturbanceProfile()
    if not isinstance(sec, dict):
        rd.fail(p, f"agent {agent}: disturbance must be a mapping")
    rd.check_keys(p, _DIST)
    kw: dict = {"kind": rd.text(p + ("kind",))}
    for key in ("amplitude", "frequency", "phase", "period", "hold_time"):
        if key in sec:
            kw[key] = rd.num(p + (key,))
    for key in ("breakpoints", "values"):
        if key in sec:
            kw[key] = tuple(rd.vec(p + (key,)))
    if "seed" in sec:
        kw["seed"] = int(rd.num(p + ("seed",)))
    try:
        return DisturbanceProfile(**kw)
    except ValueError as exc:
        rd.fail(p, f"agent {agent}: {exc}")


def load_scenario(path) -> Scenario:
    """Load a scenario file, or a bundled scenario by name (e.g. ``theorem1_demo``)."""
    p = Path(path)
    if p.is_file():
        return parse_scenario(p.read_text(encoding="utf-8"), p.stem)
    if str(path) in BUNDLED:
        text = resources.files("adaptsync").joinpath("scenarios", f"{path}.yaml") \
            .read_text(encoding="utf-8")
        return parse_scenario(text, str(path))
    raise ConfigError(f"no scenario file or bundled scenario named {str(path)!r}")


# --------------------------------------------------------------------------
# Serialization

def _disturbance_dict(d: DisturbanceProfile) -> dict:
    out: dict = {"kind": d.kind}
    if d.kind == "sinusoid":
        out.update(amplitude=d.amplitude, frequency=d.frequency, phase=d.phase)
    elif d.kind == "square_wave":
        out.update(amplitude=d.amplitude, period=d.period)
    elif d.kind == "piecewise_constant":
        out.update(breakpoints=list(d.breakpoints), values=list(d.values))
    elif d.kind == "seeded_bounded_noise":
        out.update(amplitude=d.amplitude, hold_time=d.hold_time, seed=d.seed)
    return out


def scenario_to_dict(sc: Scenario) -> dict:
    names = list(sc.graph_names) or [f"G{k}" for k in range(1, len(sc.schedule.graphs) + 1)]
    leader: dict = {"S": sc.leader.S.tolist(), "F": sc.leader.F.tolist(),
                    "v0": sc.leader.v0_init.tolist()}
    if sc.mu0 is not None:
        leader["mu0"] = sc.mu0
    else:
        leader["L0"] = sc.L0.tolist()
    g = sc.observer_gains
    observer: dict = {"mode": g.mode, "mu1": g.mu1, "mu2": g.mu2, "mu_v": g.mu_v}
    if sc.observer_init is not None:
        observer["init"] = {"v": sc.observer_init.v.tolist(), "S": sc.observer_init.S.tolist(),
                            "L": sc.observer_init.L.tolist()}
    graphs = {name: [f"{j} -> {i}" for j, i in sorted(gr.edges)]
              for name, gr in zip(names, sc.schedule.graphs)}
    sched = sc.schedule
    schedule: dict = {"dwell": sched.dwell}
    if sched.period is not None:
        starts = [a for a, _ in sched.intervals] + [sched.period]
        schedule["cycle"] = [[names[k - 1], b - a]
                             for (a, k), b in zip(sched.intervals, starts[1:])]
    else:
        schedule["intervals"] = [[a, names[k - 1]] for a, k in sched.intervals]
    if sc.window is not None:
        schedule["window"] = {"bound": sc.window.window_bound,
                              "subsequence": list(sc.window.subsequence)}
    followers = []
    for f in sc.followers:
        entry = {"order": f.order, "regressor": list(f.f_rows), "theta": list(f.theta),
                 "beta": list(f.beta), "k": f.k_gain, "Lambda": f.Lambda.tolist(),
                 "x0": list(f.x_init), "disturbance": _disturbance_dict(f.disturbance),
                 "theta_hat0": list(f.theta_hat_init), "D_hat0": f.D_hat_init}
        if f.phi is not None:
            entry["phi"] = f.phi
        followers.append(entry)
    r = sc.run
    out = {
        "name": sc.name,
        "leader": leader,
        "observer": observer,
        "graphs": graphs,
        "schedule": schedule,
        "followers": followers,
        "run": {"step": r.step, "duration": r.duration, "integrator": r.integrator,
                "mode": r.mode, "epsilon": r.epsilon, "record_stride": r.record_stride,
                "sync_threshold": r.sync_threshold,
                "override_assumptions": r.override_assumptions},
        "assumption6": {"box": list(sc.assumption6_box), "samples": sc.assumption6_samples},
    }
    if sc.output_dir is not None:
        out["output"] = {"dir": sc.output_dir}
    return out


def dump_scenario(sc: Scenario) -> str:
    return yaml.safe_dump(scenario_to_dict(sc), sort_keys=False, default_flow_style=None)
