"""Adaptive distributed observer for the leader's state, dynamics and gain.

Each follower ``i`` keeps ``(v_i, S_i, L_i)`` and updates them from its
in-neighbors only::

    v_i' = S_i v_i + L_i * sum_j F (v_j - v_i)
    S_i' = mu1 * sum_j (S_j - S_i)
    L_i' = mu2 * sum_j (L_j - L_i)

where node 0 contributes the leader's ``v0``, ``S`` and the designed ``L0``.
In ``state_based`` mode (leader state measurable) the first line becomes
``v_i' = S_i v_i + mu_v * sum_j (v_j - v_i)`` and ``L_i`` is frozen.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .graph import DiGraph, h_matrix, leader_adjacency

MODES = ("output_based", "state_based")


@dataclass(frozen=True)
class ObserverGains:
    mu1: float = 1.0
    mu2: float = 1.0
    mode: str = "output_based"
    mu_v: float = 1.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"observer mode must be one of {MODES}, got {self.mode!r}")
        for name in ("mu1", "mu2", "mu_v"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class ObserverState:
    """Stacked per-agent estimates; row ``i - 1`` belongs to follower ``i``."""

    v: np.ndarray  # (N, n)
    S: np.ndarray  # (N, n, n)
    L: np.ndarray  # (N, n)

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=float)
        self.S = np.asarray(self.S, dtype=float)
        self.L = np.asarray(self.L, dtype=float)
        N, n = self.v.shape
        if self.S.shape != (N, n, n) or self.L.shape != (N, n):
            raise ValueError(
                f"observer blocks disagree: v {self.v.shape}, S {self.S.shape}, L {self.L.shape}")

    @classmethod
    def zeros(cls, N: int, n: int) -> "ObserverState":
        return cls(np.zeros((N, n)), np.zeros((N, n, n)), np.zeros((N, n)))

    @property
    def agents(self) -> int:
        return self.v.shape[0]


@dataclass(frozen=True)
class GraphCoupling:
    """Leader adjacency ``b`` and follower block ``H`` of one graph."""

    b: np.ndarray
    H: np.ndarray

    @classmethod
    def of(cls, g: DiGraph) -> "GraphCoupling":
        return _coupling_cached(g)


@lru_cache(maxsize=256)
def _coupling_cached(g: DiGraph) -> GraphCoupling:
    b, H = leader_adjacency(g), h_matrix(g)
    b.setflags(write=False)
    H.setflags(write=False)
    return GraphCoupling(b, H)


def _check_dims(state: ObserverState, v0, S0, L0, F, g: DiGraph):
    n = state.v.shape[1]
    if g.followers != state.agents:
        raise ValueError(f"graph has {g.followers} followers, observer has {state.agents}")
    if np.shape(v0) != (n,) or np.shape(S0) != (n, n) or np.shape(L0) != (n,) \
            or np.shape(F) != (n,):
        raise ValueError("leader data does not match observer dimension")


def observer_terms(v, S, L, v0, S0, L0, F, b, H, gains: ObserverGains):
    """Vectorized core used by both the public API and the simulation engine.

    Returns ``(dv, dS, dL, e_v, e_S)`` for all followers at once; neighbor
    sums ``sum_j (z_j - z_i)`` equal ``b_i z_0 - (H z)_i``.
    """
    dv_sum = b[:, None] * v0 - H @ v
    dS_sum = b[:, None, None] * S0 - np.tensordot(H, S, axes=1)
    if gains.mode == "output_based":
        e_v = L * (dv_sum @ F)[:, None]
        dL = gains.mu2 * (b[:, None] * L0 - H @ L)
    else:
        e_v = gains.mu_v * dv_sum
        dL = np.zeros_like(L)
    e_S = gains.mu1 * dS_sum
    dv = np.matmul(S, v[:, :, None])[:, :, 0] + e_v
    return dv, e_S, dL, e_v, e_S


def observer_rhs(state: ObserverState, v0, S0, L0, F, g: DiGraph,
                 gains: ObserverGains) -> ObserverState:
    """Time derivatives of every ``(v_i, S_i, L_i)`` under the active graph ``g``."""
    _check_dims(state, v0, S0, L0, F, g)
    c = GraphCoupling.of(g)
    dv, dS, dL, _, _ = observer_terms(state.v, state.S, state.L, np.asarray(v0, float),
                                      np.asarray(S0, float), np.asarray(L0, float),
                                      np.asarray(F, float), c.b, c.H, gains)
    return ObserverState(dv, dS, dL)


def coupling_errors(state: ObserverState, v0, S0, L0, F, g: DiGraph,
                    gains: ObserverGains) -> tuple[np.ndarray, np.ndarray]:
    """Innovation terms ``(e_v, e_S)`` so that ``v_i' = S_i v_i + e_v[i]`` and ``S_i' = e_S[i]``."""
    _check_dims(state, v0, S0, L0, F, g)
    c = GraphCoupling.of(g)
    _, _, _, e_v, e_S = observer_terms(state.v, state.S, state.L, np.asarray(v0, float),
                                       np.asarray(S0, float), np.asarray(L0, float),
                                       np.asarray(F, float), c.b, c.H, gains)
    return e_v, e_S


def e_k_terms(S_i, v_i, k: int, e_vi, e_Si) -> np.ndarray:
    """Extra term in ``d/dt (S_i^k v_i) = S_i^(k+1) v_i + e_k``.

    ``e_0 = e_v`` and ``e_k = S_i e_(k-1) + e_S S_i^(k-1) v_i``, i.e.
    ``e_k = S_i^k e_v + sum_j S_i^j e_S S_i^(k-1-j) v_i``.  When ``S_i`` and
    ``e_S`` commute this is ``k S_i^(k-1) e_S v_i + S_i^k e_v``.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    S_i = np.asarray(S_i, dtype=float)
    e_Si = np.asarray(e_Si, dtype=float)
    w = np.asarray(v_i, dtype=float)
    e = np.asarray(e_vi, dtype=float).copy()
    for _ in range(k):
        e = S_i @ e + e_Si @ w
        w = S_i @ w
    return e


def power_sequences(S, v, e_v, e_S, F, kmax: int) -> tuple[np.ndarray, np.ndarray]:
    """Batched ``F S_i^k v_i`` for ``k = 0..kmax`` and ``F e_k`` for ``k = 0..kmax-1``.

    Returns arrays of shape ``(N, kmax + 1)`` and ``(N, kmax)``; ``e_k`` as
    in :func:`e_k_terms`.
    """
    N = v.shape[0]
    fw = np.empty((N, kmax + 1))
    fe = np.empty((N, kmax))
    w = v
    e = e_v
    fw[:, 0] = w @ F
    for k in range(kmax):
        fe[:, k] = e @ F
        if k + 1 < kmax:
            e = np.matmul(S, e[:, :, None])[:, :, 0] + np.matmul(e_S, w[:, :, None])[:, :, 0]
        w = np.matmul(S, w[:, :, None])[:, :, 0]
        fw[:, k + 1] = w @ F
    return fw, fe


def observer_error_metrics(state: ObserverState, v0, S0, L0) -> np.ndarray:
    """Per-agent ``(|v_i - v0|, |S_i - S|_F, |L_i - L0|)`` as an ``(N, 3)`` array."""
    ev = np.linalg.norm(state.v - np.asarray(v0)[None, :], axis=1)
    eS = np.linalg.norm((state.S - np.asarray(S0)[None]).reshape(state.agents, -1), axis=1)
    eL = np.linalg.norm(state.L - np.asarray(L0)[None, :], axis=1)
    return np.column_stack([ev, eS, eL])
