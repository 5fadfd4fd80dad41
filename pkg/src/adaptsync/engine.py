"""Closed-loop assembly, fixed-step integration, traces and convergence metrics.

The full state is one flat vector laid out as::

    [ v0 | x_1 th_1 D_1 | ... | x_N th_N D_N | v_1..v_N | S_1..S_N | L_1..L_N ]

Switching instants, disturbance breakpoints and the horizon are required to
be integer multiples of the step, so no discontinuity falls strictly inside
a step.  The active graph and piecewise-constant disturbances are sampled at
the start of each step and held for all of its stages.
"""

from __future__ import annotations

import dataclasses
import time as _time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernel, control, expr
from .control import ConfigError, gamma_of
from .observer import GraphCoupling, ObserverState
from .plant import disturbance_grid
from .scenario import check_grid_alignment

INTEGRATORS = ("rk4", "euler")
CONTROL_MODES = ("baseline", "disturbance_rejection")
# |state| above this is treated as divergence
DIVERGENCE_LIMIT = _kernel.DIVERGENCE_LIMIT
# per-step tolerance on increases of V, relative to 1 + V(0)
V_TOLERANCE = 1e-9


class DivergenceError(RuntimeError):
    def __init__(self, message: str, t: float, agent: int | None, block: str):
        super().__init__(message)
        self.t = t
        self.agent = agent
        self.block = block


class AssumptionError(RuntimeError):
    pass


@dataclass(frozen=True)
class RunConfig:
    step: float = 1e-3
    duration: float = 200.0
    integrator: str = "rk4"
    mode: str = "baseline"
    epsilon: float = 1e-3
    record_stride: int = 10
    sync_threshold: float = 1e-2
    override_assumptions: bool = False

    def __post_init__(self):
        if self.step <= 0 or self.duration <= 0:
            raise ConfigError("step and duration must be positive")
        if self.integrator not in INTEGRATORS:
            raise ConfigError(f"integrator must be one of {INTEGRATORS}")
        if self.mode not in CONTROL_MODES:
            raise ConfigError(f"mode must be one of {CONTROL_MODES}")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be non-negative")
        if self.record_stride < 1:
            raise ConfigError("record_stride must be at least 1")
        if not _is_multiple(self.duration, self.step):
            raise ConfigError(f"duration {self.duration:g} is not a multiple of step {self.step:g}")

    @property
    def steps(self) -> int:
        return int(round(self.duration / self.step))


def _is_multiple(x: float, h: float) -> bool:
    q = x / h
    return abs(q - round(q)) <= 1e-6 * max(1.0, abs(q))


# --------------------------------------------------------------------------
# State layout

@dataclass
class ClosedLoopState:
    v0: np.ndarray
    x: list
    theta_hat: list
    D_hat: np.ndarray
    observer: ObserverState


class Layout:
    """Bijective map between :class:`ClosedLoopState` and a flat vector."""

    def __init__(self, n: int, orders: Sequence[int], ms: Sequence[int]):
        self.n = n
        self.orders = tuple(orders)
        self.ms = tuple(ms)
        self.N = N = len(orders)
        pos = 0
        self.v0 = slice(pos, pos + n)
        pos += n
        self.x, self.theta, self.D = [], [], []
        for r, m in zip(orders, ms):
            self.x.append(slice(pos, pos + r))
            pos += r
            self.theta.append(slice(pos, pos + m))
            pos += m
            self.D.append(pos)
            pos += 1
        self.V = slice(pos, pos + N * n)
        pos += N * n
        self.S = slice(pos, pos + N * n * n)
        pos += N * n * n
        self.L = slice(pos, pos + N * n)
        pos += N * n
        self.size = pos

    def pack(self, st: ClosedLoopState) -> np.ndarray:
        y = np.empty(self.size)
        y[self.v0] = st.v0
        for i in range(self.N):
            y[self.x[i]] = st.x[i]
            y[self.theta[i]] = st.theta_hat[i]
            y[self.D[i]] = st.D_hat[i]
        y[self.V] = np.ravel(st.observer.v)
        y[self.S] = np.ravel(st.observer.S)
        y[self.L] = np.ravel(st.observer.L)
        return y

    def unpack(self, y: np.ndarray) -> ClosedLoopState:
        N, n = self.N, self.n
        return ClosedLoopState(
            v0=y[self.v0].copy(),
            x=[y[s].copy() for s in self.x],
            theta_hat=[y[s].copy() for s in self.theta],
            D_hat=np.array([y[k] for k in self.D]),
            observer=ObserverState(y[self.V].reshape(N, n).copy(),
                                   y[self.S].reshape(N, n, n).copy(),
                                   y[self.L].reshape(N, n).copy()),
        )

    def locate(self, index: int) -> tuple[str, int | None]:
        """Block name and 1-based agent owning flat entry ``index``."""
        if self.v0.start <= index < self.v0.stop:
            return "leader", None
        for i in range(self.N):
            if self.x[i].start <= index < self.x[i].stop:
                return "x", i + 1
            if self.theta[i].start <= index < self.theta[i].stop:
                return "theta_hat", i + 1
            if index == self.D[i]:
                return "D_hat", i + 1
        for name, sl, width in (("v", self.V, self.n), ("S", self.S, self.n * self.n),
                                ("L", self.L, self.n)):
            if sl.start <= index < sl.stop:
                return name, (index - sl.start) // width + 1
        raise IndexError(index)


# --------------------------------------------------------------------------
# Closed loop

class ClosedLoop:
    """Packed kernel data and stepping for one scenario under one run config."""

    def __init__(self, scenario, config: RunConfig):
        self.scenario = sc = scenario
        self.config = config
        leader = sc.leader
        self.S0 = np.ascontiguousarray(leader.S, dtype=float)
        self.F = np.ascontiguousarray(leader.F, dtype=float)
        self.L0 = np.ascontiguousarray(sc.L0, dtype=float)
        gains = sc.observer_gains
        self.followers = list(sc.followers)
        self.N = N = len(self.followers)
        self.n = n = leader.n
        self.orders = [f.order for f in self.followers]
        self.layout = lay = Layout(n, self.orders, [f.m for f in self.followers])
        self.gammas = [gamma_of(f.beta) for f in self.followers]
        self.rmax = rmax = max(self.orders, default=1)
        self.profiles = [f.disturbance for f in self.followers]
        self.dr = config.mode == "disturbance_rejection"

        self.G = np.array([n, N, gains.mu1, gains.mu2, gains.mu_v,
                           1.0 if gains.mode == "state_based" else 0.0,
                           1.0 if self.dr else 0.0, config.epsilon, rmax,
                           lay.V.start, lay.S.start, lay.L.start], dtype=float)
        self.meta = np.zeros((N, 8), dtype=np.int64)
        self.fpar = np.zeros((N, 6))
        self.gam = np.zeros((N, rmax))
        theta, laminv, lam = [], [], []
        ops, args, starts = [], [], [0]
        depth = 1
        f_off = lam_off = 0
        for i, f in enumerate(self.followers):
            self.meta[i] = [f.order, lay.x[i].start, lay.theta[i].start, f.m, lay.D[i],
                            f_off, lam_off, len(starts) - 1]
            prof = f.disturbance
            self.fpar[i] = [f.k_gain, prof.bound, 0.0 if prof.piecewise_constant else 1.0,
                            prof.amplitude, prof.frequency, prof.phase]
            self.gam[i, :f.order] = self.gammas[i]
            theta.extend(f.theta)
            laminv.extend(np.ravel(f.Lambda_inv))
            lam.extend(np.ravel(f.Lambda))
            o, a, st = expr.compile_program(f.regressor_exprs)
            base = len(ops)
            ops.extend(o)
            args.extend(a)
            starts.extend(base + k for k in st[1:])
            depth = max([depth] + [expr.max_stack_depth(r) for r in f.regressor_exprs])
            f_off += f.m
            lam_off += f.m * f.m
        self.theta = np.array(theta, dtype=float)
        self.laminv = np.array(laminv, dtype=float)
        self.lam = np.array(lam, dtype=float)
        self.ops = np.array(ops, dtype=np.int64)
        self.args = np.array(args, dtype=float)
        self.rstarts = np.array(starts, dtype=np.int64)
        self.stack = np.zeros(depth + 1)
        couplings = [GraphCoupling.of(g) for g in sc.schedule.graphs]
        self.B = np.array([c.b for c in couplings], dtype=float).reshape(len(couplings), N)
        self.H = np.array([c.H for c in couplings], dtype=float).reshape(len(couplings), N, N)
        # F S^k rows for the leader output derivatives (diagnostics only)
        rows, w = [], self.F.copy()
        for _ in range(rmax + 1):
            rows.append(w)
            w = w @ self.S0
        self.FSk = np.array(rows)
        self.aux_width = _kernel.A_FW + rmax + 1
        self._prepare_grid()

    def _kernel_args(self):
        return (self.G, self.meta, self.fpar, self.gam, self.S0, self.F, self.L0, self.B,
                self.H, self.theta, self.laminv)

    def _program(self):
        return self.ops, self.args, self.rstarts

    # -- grid ---------------------------------------------------------------
    def _prepare_grid(self):
        h = self.config.step
        sched = self.scenario.schedule
        check_grid_alignment(self.scenario, h)
        starts = [a for a, _ in sched.intervals]
        self._start_steps = np.array([int(round(a / h)) for a in starts], dtype=np.int64)
        self._period_steps = (int(round(sched.period / h))
                              if sched.period is not None else None)
        self._graph_ids = np.array([k for _, k in sched.intervals], dtype=np.int64)

    def graph_index(self, j):
        """1-based active graph index on step ``[t_j, t_{j+1})`` (scalar or array)."""
        jj = np.asarray(j, dtype=np.int64)
        if self._period_steps is not None:
            jj = jj % self._period_steps
        pos = np.searchsorted(self._start_steps, jj, side="right") - 1
        out = self._graph_ids[pos]
        return int(out) if out.ndim == 0 else out

    def held_disturbances(self, j) -> np.ndarray:
        """Step-start disturbance values on grid indices ``j`` (shape ``(len(j), N)``)."""
        j = np.atleast_1d(np.asarray(j, dtype=np.int64))
        t = j * self.config.step
        out = np.zeros((j.size, self.N))
        for i, p in enumerate(self.profiles):
            if p.piecewise_constant and p.kind != "zero":
                out[:, i] = disturbance_grid(p, t)
        return out

    def initial_state(self) -> np.ndarray:
        sc = self.scenario
        obs = sc.observer_init if sc.observer_init is not None else \
            ObserverState.zeros(self.N, self.n)
        st = ClosedLoopState(
            v0=np.array(sc.leader.v0_init, dtype=float),
            x=[np.array(f.x_init) for f in self.followers],
            theta_hat=[np.array(f.theta_hat_init) for f in self.followers],
            D_hat=np.array([f.D_hat_init for f in self.followers], dtype=float),
            observer=obs,
        )
        return self.layout.pack(st)

    # -- single evaluations ---------------------------------------------------
    def derivative(self, y: np.ndarray, j: int, t: float | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Closed-loop derivative and diagnostics at state ``y`` on step ``j``."""
        h = self.config.step
        t = j * h if t is None else t
        dy = np.empty_like(y)
        aux = np.zeros((self.N, self.aux_width))
        fbuf = np.zeros(max(self.theta.size, 1))
        status = _kernel.rhs(t, np.ascontiguousarray(y, dtype=float), self.graph_index(j) - 1,
                             self.held_disturbances(j)[0], np.zeros(self.N), False,
                             *self._kernel_args(), *self._program(), dy, fbuf, self.stack, aux)
        if status >= 0:
            self._raise_expr(status, y, t)
        return dy, aux

    def step(self, y: np.ndarray, j: int) -> np.ndarray:
        """Advance from grid point ``j`` to ``j + 1``."""
        h = self.config.step
        t = j * h
        y = np.ascontiguousarray(y, dtype=float)
        out = np.empty_like(y)
        bad = np.empty_like(y)
        aux = np.zeros((self.N, self.aux_width))
        fbuf = np.zeros(max(self.theta.size, 1))
        status = _kernel.step(t, h, y, self.graph_index(j) - 1, self.held_disturbances(j)[0],
                              self.config.integrator == "euler", *self._kernel_args(),
                              *self._program(), fbuf, self.stack, aux, np.empty_like(y), out, bad)
        if status >= 0:
            self._raise_expr(status, bad, t)
        self.check_finite(out, t + h)
        return out

    def _raise_expr(self, agent: int, y: np.ndarray, t: float):
        f = self.followers[agent]
        x = y[self.layout.x[agent]].tolist()
        for row in f.regressor_exprs:
            try:
                expr.evaluate(row, x, t)
            except expr.ExprEvalError as exc:
                raise expr.ExprEvalError(f"agent {agent + 1} at t={t:g}: {exc}",
                                         exc.node) from None
        raise expr.ExprEvalError(f"agent {agent + 1} at t={t:g}: regressor not finite",
                                 f.regressor_exprs[0] if f.regressor_exprs else expr.Num(0.0))

    def check_finite(self, y: np.ndarray, t: float):
        bad = ~np.isfinite(y) | (np.abs(y) > DIVERGENCE_LIMIT)
        if bad.any():
            self._raise_divergence(int(np.argmax(bad)), t)

    def _raise_divergence(self, index: int, t: float):
        block, agent = self.layout.locate(index)
        who = f"agent {agent}" if agent is not None else "leader"
        raise DivergenceError(f"state diverged at t={t:g} ({who}, block {block})",
                              t, agent, block)


def step(state: ClosedLoopState, t: float, h: float, config: RunConfig, scenario) -> ClosedLoopState:
    """One integrator step of the closed loop from grid time ``t``."""
    j = int(round(t / h))
    if abs(j * h - t) > 1e-9 * max(1.0, t):
        raise ConfigError(f"t={t:g} is not on the grid of step {h:g}")
    cfg = dataclasses.replace(config, step=h, duration=(j + 1) * h)
    loop = ClosedLoop(scenario, cfg)
    return loop.layout.unpack(loop.step(loop.layout.pack(state), j))


# --------------------------------------------------------------------------
# Traces

def trace_columns(orders: Sequence[int]) -> list[str]:
    cols = ["t", "graph"]
    for i, r in enumerate(orders, start=1):
        cols.append(f"y{i}")
        cols += [f"e{i}_{k}" for k in range(r)]
        cols += [f"s{i}", f"ev{i}", f"eS{i}", f"eL{i}", f"u{i}", f"d{i}",
                 f"ubar{i}", f"p{i}", f"pdot{i}", f"Dhat{i}"]
    cols += ["V", "W"]
    return cols


@dataclass
class Trace:
    columns: list
    data: np.ndarray

    def __getitem__(self, name: str) -> np.ndarray:
        return self.data[:, self.columns.index(name)]

    @property
    def t(self) -> np.ndarray:
        return self["t"]

    def agent_columns(self, prefix: str, N: int) -> np.ndarray:
        return np.column_stack([self[f"{prefix}{i}"] for i in range(1, N + 1)])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(",".join(self.columns) + "\n")
            for row in self.data:
                fh.write(",".join(_fmt(v) for v in row) + "\n")


def _fmt(v: float) -> str:
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


@dataclass
class RunResult:
    trace: Trace
    summary: dict
    final_state: np.ndarray = field(repr=False, default=None)
    wall_clock_s: float = 0.0
    # recorded flat states, one row per trace row; decode with ``layout``
    states: np.ndarray = field(repr=False, default=None)
    layout: Layout | None = field(repr=False, default=None)
    leader_S: np.ndarray | None = field(repr=False, default=None)
    leader_F: np.ndarray | None = field(repr=False, default=None)

    def observer_outputs(self, kmax: int) -> np.ndarray:
        """``F S_i^k v_i`` for ``k <= kmax``, shape ``(rows, N, kmax + 1)``."""
        lay = self.layout
        n, N = lay.n, lay.N
        F = self.leader_F
        rows = len(self.states)
        V = self.states[:, lay.V].reshape(rows, N, n)
        S = self.states[:, lay.S].reshape(rows, N, n, n)
        out = np.empty(V.shape[:2] + (kmax + 1,))
        w = V.copy()
        for k in range(kmax + 1):
            out[..., k] = w @ F
            w = np.einsum("rnij,rnj->rni", S, w)
        return out

    def leader_outputs(self, kmax: int) -> np.ndarray:
        """``F S^k v0`` for ``k <= kmax``, shape ``(rows, kmax + 1)``."""
        v = self.states[:, self.layout.v0]
        out = np.empty((len(v), kmax + 1))
        for k in range(kmax + 1):
            out[:, k] = v @ self.leader_F
            v = v @ self.leader_S.T
        return out


def run(scenario, config: RunConfig | None = None) -> RunResult:
    """Integrate the scenario and collect the trace and summary.

    Raises :class:`AssumptionError` when a standing-assumption check failed
    and ``config.override_assumptions`` is false, :class:`DivergenceError`
    when the state blows up and :class:`adaptsync.expr.ExprEvalError` when
    a regressor cannot be evaluated.
    """
    config = config or scenario.run
    report = scenario.assumptions()
    if not report["all_pass"] and not config.override_assumptions:
        raise AssumptionError("assumption checks failed: " + "; ".join(report["failures"]))

    loop = ClosedLoop(scenario, config)
    N, h = loop.N, config.step
    steps, stride = config.steps, config.record_stride
    n_rows = steps // stride + 1 + (1 if steps % stride else 0)
    grid = np.arange(steps + 1, dtype=np.int64)
    gtab = loop.graph_index(grid) - 1
    dtab = loop.held_disturbances(grid)
    y0 = loop.initial_state()
    Yrec = np.empty((n_rows, y0.size))
    Arec = np.empty((n_rows, N, loop.aux_width))
    VW = np.empty((n_rows, 2))
    bad = np.empty_like(y0)

    started = _time.perf_counter()
    status, j, info, rows, violations, worst, V0, W = _kernel.integrate(
        y0, h, steps, stride, gtab, dtab, config.integrator == "euler", V_TOLERANCE,
        *loop._kernel_args(), loop.lam, *loop._program(), loop.stack, Yrec, Arec, VW, bad)
    wall = _time.perf_counter() - started
    if status == _kernel.STATUS_EXPR:
        loop._raise_expr(info, bad, j * h)
    if status == _kernel.STATUS_DIVERGED:
        loop._raise_divergence(info, j * h)

    rec_steps = np.append(grid[::stride], steps) if steps % stride else grid[::stride]
    trace = build_trace(loop, rec_steps[:rows], Yrec[:rows], Arec[:rows], VW[:rows])
    summary = convergence_metrics(trace, N, loop.orders, threshold=config.sync_threshold)
    summary.update({
        "scenario": scenario.name,
        "mode": config.mode,
        "epsilon": config.epsilon,
        "step": h,
        "duration": config.duration,
        "integrator": config.integrator,
        "V0": V0,
        "V_violations": int(violations),
        "V_violation_tolerance": V_TOLERANCE * (1.0 + V0),
        "V_worst_increase": float(worst) if steps else 0.0,
        "W_final": W,
        "W_tail_increment": control.tail_increment(trace.t, trace["W"], 0.1),
        "D_hat_final": [float(Yrec[rows - 1][loop.layout.D[i]]) for i in range(N)],
        "D_true_bound": [p.bound for p in loop.profiles],
        "seeds": scenario.seeds(),
        "assumptions": report,
        "assumptions_overridden": bool(config.override_assumptions and not report["all_pass"]),
    })
    return RunResult(trace, summary, Yrec[rows - 1].copy(), wall, Yrec[:rows], loop.layout,
                     loop.S0, loop.F)


def build_trace(loop: ClosedLoop, steps: np.ndarray, Y: np.ndarray, A: np.ndarray,
                VW: np.ndarray) -> Trace:
    """Assemble trace columns from recorded states and stage-1 diagnostics."""
    lay, N, n = loop.layout, loop.N, loop.n
    cols = trace_columns(loop.orders)
    data = np.empty((len(steps), len(cols)))
    col = {c: k for k, c in enumerate(cols)}
    h = loop.config.step
    data[:, col["t"]] = steps * h
    data[:, col["graph"]] = loop.graph_index(steps)
    v0 = Y[:, lay.v0]
    y0d = v0 @ loop.FSk.T
    rows = len(steps)
    V = Y[:, lay.V].reshape(rows, N, n)
    S = Y[:, lay.S].reshape(rows, N, n, n)
    L = Y[:, lay.L].reshape(rows, N, n)
    ev = np.linalg.norm(V - v0[:, None, :], axis=2)
    eS = np.linalg.norm((S - loop.S0).reshape(rows, N, n * n), axis=2)
    eL = np.linalg.norm(L - loop.L0, axis=2)
    K = _kernel
    for i in range(N):
        a = i + 1
        x = Y[:, lay.x[i]]
        r = loop.orders[i]
        gamma = np.array(loop.gammas[i])
        data[:, col[f"y{a}"]] = x[:, 0]
        for k in range(r):
            data[:, col[f"e{a}_{k}"]] = x[:, k] - y0d[:, k]
        s = A[:, i, K.A_S]
        fw = A[:, i, K.A_FW:K.A_FW + r]
        data[:, col[f"s{a}"]] = s
        data[:, col[f"ev{a}"]] = ev[:, i]
        data[:, col[f"eS{a}"]] = eS[:, i]
        data[:, col[f"eL{a}"]] = eL[:, i]
        data[:, col[f"u{a}"]] = A[:, i, K.A_U]
        data[:, col[f"d{a}"]] = A[:, i, K.A_D]
        data[:, col[f"ubar{a}"]] = s - (y0d[:, :r] - fw) @ gamma
        data[:, col[f"p{a}"]] = A[:, i, K.A_P]
        data[:, col[f"pdot{a}"]] = A[:, i, K.A_PD]
        data[:, col[f"Dhat{a}"]] = Y[:, lay.D[i]]
    data[:, col["V"]] = VW[:, 0]
    data[:, col["W"]] = VW[:, 1]
    return Trace(cols, data)


# --------------------------------------------------------------------------
# Metrics

def log_linear_fit(t: np.ndarray, values: np.ndarray) -> tuple[float, float]:
    """Slope and R^2 of ``log(values + 1e-15)`` against ``t``."""
    z = np.log(np.abs(values) + 1e-15)
    A = np.column_stack([t, np.ones_like(t)])
    coef, *_ = np.linalg.lstsq(A, z, rcond=None)
    resid = z - A @ coef
    ss_tot = float(np.sum((z - z.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 0.0
    return float(coef[0]), r2


def sync_time(t: np.ndarray, err: np.ndarray, threshold: float) -> float | None:
    """First time after which ``err`` stays below ``threshold`` (None if never)."""
    above = np.nonzero(err >= threshold)[0]
    if above.size == 0:
        return float(t[0])
    last = above[-1]
    if last + 1 >= t.size:
        return None
    return float(t[last + 1])


def convergence_metrics(trace: Trace, N: int, orders: Sequence[int],
                        threshold: float = 1e-2, band_start: float = 0.75) -> dict:
    """Terminal errors, observer decay fits and synchronization times per agent."""
    t = trace.t
    if t.size < 2:
        raise ValueError("trace too short for metrics")
    half = t >= t[0] + 0.5 * (t[-1] - t[0])
    band = t > t[0] + band_start * (t[-1] - t[0])
    agents = []
    for i in range(1, N + 1):
        e = np.column_stack([trace[f"e{i}_{k}"] for k in range(orders[i - 1])])
        err = np.max(np.abs(e), axis=1)
        slope, r2 = log_linear_fit(t[half], trace[f"ev{i}"][half])
        agents.append({
            "agent": i,
            "terminal_error": float(err[-1]),
            "terminal_observer_errors": [float(trace[f"{c}{i}"][-1]) for c in ("ev", "eS", "eL")],
            "observer_decay_slope": slope,
            "observer_decay_r2": r2,
            "sync_time": sync_time(t, err, threshold),
            "residual_band": float(np.max(np.abs(trace[f"e{i}_0"][band]))) if band.any() else None,
        })
    terminal = max((a["terminal_error"] for a in agents), default=0.0)
    observer_ok = all(a["terminal_observer_errors"][0] < threshold for a in agents)
    bands = [a["residual_band"] for a in agents if a["residual_band"] is not None]
    return {
        "agents": agents,
        "terminal_max_error": terminal,
        "residual_band": max(bands) if bands else None,
        "converged": bool(terminal < threshold and observer_ok),
        "sync_threshold": threshold,
    }
