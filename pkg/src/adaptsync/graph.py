"""Leader-augmented communication graphs and switching schedules.

Node 0 is the leader, nodes 1..N are followers.  An edge ``(j, i)`` means
follower ``i`` receives agent ``j``'s information.  Edges into the leader are
accepted but ignored by every computation below.
"""

from __future__ import annotations

import bisect
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

# switching instants and window ends are compared with this slack (seconds)
_TIME_EPS = 1e-9


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class DiGraph:
    node_count: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.node_count < 1:
            raise GraphError("a graph needs at least the leader node")
        edges = frozenset((int(j), int(i)) for j, i in self.edges)
        for j, i in edges:
            if j == i:
                raise GraphError(f"self-loop on node {i}")
            if not (0 <= j < self.node_count and 0 <= i < self.node_count):
                raise GraphError(f"edge ({j}, {i}) outside nodes 0..{self.node_count - 1}")
        object.__setattr__(self, "edges", edges)

    @property
    def followers(self) -> int:
        return self.node_count - 1

    def neighbors(self, i: int) -> list[int]:
        """Sorted in-neighbors of node ``i``."""
        return sorted(j for j, k in self.edges if k == i)

    def active_edges(self) -> frozenset:
        """Edges that downstream computations see (nothing points into 0)."""
        return frozenset(e for e in self.edges if e[1] != 0)


def laplacian(g: DiGraph) -> np.ndarray:
    """In-degree Laplacian: ``L[i, j] = -1`` for edge ``(j, i)``, diagonal = in-degree."""
    L = np.zeros((g.node_count, g.node_count))
    for j, i in g.active_edges():
        L[i, j] -= 1.0
        L[i, i] += 1.0
    return L


def h_matrix(g: DiGraph) -> np.ndarray:
    """Laplacian with the leader row and column removed."""
    return laplacian(g)[1:, 1:]


def leader_adjacency(g: DiGraph) -> np.ndarray:
    """Vector ``b`` with ``b[i-1] = 1`` when follower ``i`` hears the leader."""
    b = np.zeros(g.followers)
    for j, i in g.active_edges():
        if j == 0:
            b[i - 1] = 1.0
    return b


def reachable_from_leader(g: DiGraph) -> set[int]:
    adj: dict[int, list[int]] = {}
    for j, i in g.active_edges():
        adj.setdefault(j, []).append(i)
    seen = {0}
    queue = deque([0])
    while queue:
        node = queue.popleft()
        for nxt in adj.get(node, ()):
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    return seen


def has_rooted_spanning_tree(g: DiGraph) -> bool:
    return len(reachable_from_leader(g)) == g.node_count


@dataclass(frozen=True)
class SwitchingSchedule:
    """Piecewise-constant switching signal over a list of graphs.

    ``intervals`` holds ``(start_time, graph_index)`` pairs with 1-based
    graph indices.  With ``period`` set, the pattern of intervals on
    ``[0, period)`` repeats forever; otherwise the last graph stays active
    after its start time.
    """

    graphs: tuple
    intervals: tuple
    dwell: float
    period: float | None = None

    def __post_init__(self):
        graphs = tuple(self.graphs)
        intervals = tuple((float(s), int(k)) for s, k in self.intervals)
        object.__setattr__(self, "graphs", graphs)
        object.__setattr__(self, "intervals", intervals)
        if not graphs:
            raise GraphError("schedule needs at least one graph")
        if len({g.node_count for g in graphs}) != 1:
            raise GraphError("all graphs must have the same node count")
        if self.dwell <= 0:
            raise GraphError("dwell time must be positive")
        if not intervals or intervals[0][0] != 0.0:
            raise GraphError("first interval must start at t = 0")
        for _, k in intervals:
            if not 1 <= k <= len(graphs):
                raise GraphError(f"graph index {k} outside 1..{len(graphs)}")
        starts = [s for s, _ in intervals]
        ends = starts[1:] + ([self.period] if self.period is not None else [])
        for a, b in zip(starts, ends):
            if b - a < self.dwell - _TIME_EPS:
                raise GraphError(
                    f"switching instants {a:g} and {b:g} violate dwell time {self.dwell:g}"
                )

    @property
    def node_count(self) -> int:
        return self.graphs[0].node_count

    @classmethod
    def periodic(cls, graphs: Sequence[DiGraph], cycle: Sequence[tuple[int, float]],
                 dwell: float | None = None) -> "SwitchingSchedule":
        """Build a repeating schedule from ``(graph_index, duration)`` pairs."""
        intervals = []
        t = 0.0
        for k, duration in cycle:
            if duration <= 0:
                raise GraphError("cycle durations must be positive")
            intervals.append((t, k))
            t += duration
        if dwell is None:
            dwell = min(d for _, d in cycle)
        return cls(tuple(graphs), tuple(intervals), dwell, period=t)

    @classmethod
    def static(cls, g: DiGraph, dwell: float = 1.0) -> "SwitchingSchedule":
        return cls((g,), ((0.0, 1),), dwell)

    def switching_instants(self, horizon: float) -> list[float]:
        """All interval start times in ``[0, horizon]``."""
        starts = [s for s, _ in self.intervals]
        if self.period is None:
            return [s for s in starts if s <= horizon + _TIME_EPS]
        out = []
        cycles = int(math.floor(horizon / self.period + _TIME_EPS)) + 1
        for c in range(cycles):
            for s in starts:
                t = c * self.period + s
                if t <= horizon + _TIME_EPS:
                    out.append(t)
        return out

    def segments(self, t_start: float, t_end: float) -> list[tuple[float, float, int]]:
        """``(a, b, graph_index)`` pieces covering ``[t_start, t_end)``."""
        instants = self.switching_instants(t_end)
        pieces = []
        for n, a in enumerate(instants):
            b = instants[n + 1] if n + 1 < len(instants) else math.inf
            lo, hi = max(a, t_start), min(b, t_end)
            if hi - lo > _TIME_EPS:
                pieces.append((lo, hi, sigma_at(self, a)))
        return pieces


def sigma_at(s: SwitchingSchedule, t: float) -> int:
    """Active graph index (1-based) at time ``t``; right-continuous."""
    if t < 0:
        raise ValueError(f"time must be non-negative, got {t}")
    if s.period is not None:
        t = t - s.period * math.floor(t / s.period + _TIME_EPS)
        t = max(t, 0.0)
    starts = [a for a, _ in s.intervals]
    pos = bisect.bisect_right(starts, t + _TIME_EPS) - 1
    return s.intervals[pos][1]


def graph_at(s: SwitchingSchedule, t: float) -> DiGraph:
    return s.graphs[sigma_at(s, t) - 1]


def union_graph(s: SwitchingSchedule, t_start: float, t_end: float) -> DiGraph:
    """Union of all graphs active somewhere in ``[t_start, t_end)``."""
    if not (0 <= t_start < t_end):
        raise ValueError(f"invalid window [{t_start}, {t_end})")
    edges = set()
    for _, _, k in s.segments(t_start, t_end):
        edges |= s.graphs[k - 1].edges
    return DiGraph(s.node_count, frozenset(edges))


@dataclass(frozen=True)
class JointWindow:
    """Union windows ``[t_{i_k}, t_{i_{k+1}})`` delimited by switching-instant indices."""

    window_bound: float
    subsequence: tuple

    @classmethod
    def cycle(cls, s: SwitchingSchedule, cycles: int = 1) -> "JointWindow":
        """Windows at consecutive cycle boundaries of a periodic schedule.

        One cycle is enough: the schedule repeats, so every later window is
        the same union graph.
        """
        if s.period is None:
            raise GraphError("cycle windows need a periodic schedule")
        per = len(s.intervals)
        return cls(s.period + s.dwell, tuple(per * c for c in range(cycles + 1)))

    @classmethod
    def default(cls, s: SwitchingSchedule) -> "JointWindow":
        if s.period is not None:
            return cls.cycle(s)
        # finitely many switches: only the final, permanent graph matters
        return cls(math.inf, (len(s.intervals) - 1,))


@dataclass(frozen=True)
class ConnectivityReport:
    holds: bool
    failing_window: tuple | None = None
    unreachable: tuple = ()
    message: str = ""

    def __bool__(self) -> bool:
        return self.holds


def check_assumption3(s: SwitchingSchedule, w: JointWindow) -> tuple[bool, ConnectivityReport]:
    """Joint connectivity: each union window contains a spanning tree rooted at 0.

    For a schedule with finitely many switches the graph active after the
    last switch is permanent, so it must contain the spanning tree itself.
    """
    idx = list(w.subsequence)
    needed = 2 if s.period is not None else 1
    if len(idx) < needed or any(b <= a for a, b in zip(idx, idx[1:])):
        rep = ConnectivityReport(False, message="subsequence indices must increase")
        return False, rep
    instants = s.switching_instants(_horizon_for_index(s, idx[-1]))
    if idx[-1] >= len(instants):
        rep = ConnectivityReport(
            False, message=f"schedule has no switching instant with index {idx[-1]}")
        return False, rep
    windows = [(instants[a], instants[b]) for a, b in zip(idx, idx[1:])]
    for a, b in windows:
        if b - a >= w.window_bound:
            rep = ConnectivityReport(
                False, (a, b), message=f"window [{a:g}, {b:g}) is not shorter than nu")
            return False, rep
    checks = [((a, b), union_graph(s, a, b)) for a, b in windows]
    if s.period is None:
        last = s.intervals[-1]
        checks.append(((last[0], math.inf), s.graphs[last[1] - 1]))
    for (a, b), g in checks:
        missing = tuple(sorted(set(range(1, s.node_count)) - reachable_from_leader(g)))
        if missing:
            names = ", ".join(str(m) for m in missing)
            rep = ConnectivityReport(
                False, (a, b), missing,
                f"union over [{a:g}, {b:g}) does not reach node(s) {names}")
            return False, rep
    return True, ConnectivityReport(True, message=f"{len(checks)} window(s) rooted at 0")


def _horizon_for_index(s: SwitchingSchedule, index: int) -> float:
    if s.period is None:
        return s.intervals[-1][0]
    per = len(s.intervals)
    return s.period * (index // per + 1)


def check_assumption4(s: SwitchingSchedule) -> bool:
    """Follower subgraph undirected in every graph (leader edges exempt)."""
    for g in s.graphs:
        follower_edges = {(j, i) for j, i in g.edges if j != 0 and i != 0}
        if any((i, j) not in follower_edges for j, i in follower_edges):
            return False
    return True


def parse_edge(text: str) -> tuple[int, int]:
    """Parse ``"j -> i"``."""
    parts = text.split("->")
    if len(parts) != 2:
        raise GraphError(f"edge {text!r} is not of the form 'j -> i'")
    try:
        return int(parts[0]), int(parts[1])
    except ValueError:
        raise GraphError(f"edge {text!r} has non-integer endpoints") from None


def from_edge_list(node_count: int, edges: Iterable) -> DiGraph:
    pairs = [parse_edge(e) if isinstance(e, str) else tuple(e) for e in edges]
    return DiGraph(node_count, frozenset(pairs))
