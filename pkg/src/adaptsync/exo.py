"""Leader exosystem: stability classification, detectability and gain design."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg

EIG_TOL = 1e-9
# eigenvalues closer than this (relative) are treated as one repeated eigenvalue
CLUSTER_TOL = 1e-6
RANK_TOL = 1e-8


class DesignError(ValueError):
    pass


@dataclass(frozen=True)
class LeaderSystem:
    S: np.ndarray
    F: np.ndarray
    v0_init: np.ndarray

    def __post_init__(self):
        S = np.atleast_2d(np.asarray(self.S, dtype=float))
        F = np.asarray(self.F, dtype=float).reshape(-1)
        v0 = np.asarray(self.v0_init, dtype=float).reshape(-1)
        n = S.shape[0]
        if S.shape != (n, n) or n < 1:
            raise ValueError(f"S must be square, got shape {S.shape}")
        if F.shape != (n,):
            raise ValueError(f"F must have {n} entries, got {F.size}")
        if v0.shape != (n,):
            raise ValueError(f"v0 must have {n} entries, got {v0.size}")
        for name, arr in (("S", S), ("F", F), ("v0_init", v0)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.S.shape[0]


@dataclass(frozen=True)
class StabilityReport:
    eigenvalues: list
    marginally_stable: bool
    neutrally_stable: bool
    detectable: bool | None = None

    def as_dict(self) -> dict:
        return {
            "eigenvalues": [[float(z.real), float(z.imag)] for z in self.eigenvalues],
            "marginally_stable": self.marginally_stable,
            "neutrally_stable": self.neutrally_stable,
            "detectable": self.detectable,
        }


def _scale(S: np.ndarray) -> float:
    return max(float(np.linalg.norm(S, 2)), 1.0)


def _rank(M: np.ndarray, tol: float) -> int:
    if M.size == 0:
        return 0
    sv = np.linalg.svd(M, compute_uv=False)
    return int(np.sum(sv > tol))


def _clusters(eigs: np.ndarray, tol: float) -> list[tuple[complex, int]]:
    """Group numerically repeated eigenvalues: (representative, algebraic multiplicity)."""
    remaining = list(eigs)
    out = []
    while remaining:
        lam = remaining.pop(0)
        group = [lam] + [z for z in remaining if abs(z - lam) <= tol]
        remaining = [z for z in remaining if abs(z - lam) > tol]
        out.append((complex(np.mean(group)), len(group)))
    return out


def check_assumption1(S, tol: float = EIG_TOL) -> StabilityReport:
    """Classify ``S`` as marginally and/or neutrally stable.

    Marginal: no eigenvalue with positive real part, and every eigenvalue on
    the imaginary axis is semi-simple (geometric = algebraic multiplicity).
    Neutral: marginal and every eigenvalue is on the imaginary axis.
    """
    S = np.atleast_2d(np.asarray(S, dtype=float))
    try:
        eigs = np.linalg.eigvals(S)
    except np.linalg.LinAlgError as exc:
        raise ArithmeticError(f"eigenvalue computation failed: {exc}") from exc
    scale = _scale(S)
    zero_tol = tol * scale
    n = S.shape[0]

    marginal = bool(np.all(eigs.real <= zero_tol))
    if marginal:
        for lam, alg in _clusters(eigs, CLUSTER_TOL * scale):
            if abs(lam.real) > zero_tol:
                continue
            geo = n - _rank(S - lam * np.eye(n), RANK_TOL * scale)
            if geo < alg:
                marginal = False
                break
    neutral = marginal and bool(np.all(np.abs(eigs.real) <= zero_tol))
    return StabilityReport(list(eigs), marginal, neutral)


def check_assumption2(F, S, tol: float = EIG_TOL) -> bool:
    """PBH detectability test of the pair ``(F, S)``."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    F = np.asarray(F, dtype=float).reshape(1, -1)
    n = S.shape[0]
    if F.shape[1] != n:
        raise ValueError("F and S dimensions do not match")
    scale = _scale(S)
    for lam in np.linalg.eigvals(S):
        if lam.real < -tol * scale:
            continue
        stacked = np.vstack([S - lam * np.eye(n), F])
        if _rank(stacked, RANK_TOL * scale) < n:
            return False
    return True


def stability_report(leader: LeaderSystem) -> StabilityReport:
    rep = check_assumption1(leader.S)
    return StabilityReport(rep.eigenvalues, rep.marginally_stable, rep.neutrally_stable,
                           check_assumption2(leader.F, leader.S))


def _symmetric_basis(n: int) -> list[np.ndarray]:
    basis = []
    for i in range(n):
        for j in range(i, n):
            E = np.zeros((n, n))
            E[i, j] = E[j, i] = 1.0
            basis.append(E)
    return basis


def solve_neutral_lyapunov(S, tol: float = 1e-8) -> np.ndarray:
    """Symmetric positive definite ``R`` with ``R S + S^T R = 0``.

    The equation is solved on the space of symmetric matrices by a
    least-squares null-space computation.  A positive definite element is
    then picked from that null space: the Gram matrix of the inverse
    eigenvector basis is projected onto it (for a diagonalizable ``S`` with
    imaginary spectrum that projection is exact); the projection of the
    identity is the fallback.  The result is scaled so its largest diagonal
    entry is 1.
    """
    S = np.atleast_2d(np.asarray(S, dtype=float))
    n = S.shape[0]
    scale = _scale(S)
    basis = _symmetric_basis(n)
    A = np.column_stack([(E @ S + S.T @ E).ravel() for E in basis])
    _, sv, vt = np.linalg.svd(A)
    sv = np.concatenate([sv, np.zeros(len(basis) - len(sv))])
    null = vt[sv <= tol * scale * max(1.0, sv[0] if sv.size else 1.0)]
    if null.shape[0] == 0:
        raise DesignError("R S + S^T R = 0 has no nonzero symmetric solution")
    null_mats = [sum(c * E for c, E in zip(row, basis)) for row in null]
    gram = np.array([[np.sum(P * Q) for Q in null_mats] for P in null_mats])

    def project(M):
        rhs = np.array([np.sum(P * M) for P in null_mats])
        coef = np.linalg.solve(gram, rhs)
        return sum(c * P for c, P in zip(coef, null_mats))

    candidates = []
    _, V = np.linalg.eig(S)
    # a near-singular eigenvector basis means S is (close to) defective
    if np.linalg.cond(V) < 1e8:
        Vinv = np.linalg.inv(V)
        candidates.append(np.real(Vinv.conj().T @ Vinv))
    candidates.append(np.eye(n))

    for M in candidates:
        R = project(M)
        R = 0.5 * (R + R.T)
        if np.max(np.diag(R)) <= 0:
            continue
        R = R / np.max(np.diag(R))
        if np.min(np.linalg.eigvalsh(R)) > tol and \
                np.linalg.norm(R @ S + S.T @ R) <= tol * scale:
            return R
    raise DesignError("no positive definite solution of R S + S^T R = 0; "
                      "S is not neutrally stable in practice")


def design_gain(leader: LeaderSystem, mu0: float) -> np.ndarray:
    """Observer gain ``L0 = mu0 R F^T`` for a neutrally stable, detectable leader."""
    if mu0 <= 0:
        raise DesignError("mu0 must be positive")
    rep = stability_report(leader)
    if not rep.neutrally_stable:
        raise DesignError("S is not neutrally stable; supply L0 explicitly")
    if not rep.detectable:
        raise DesignError("(F, S) is not detectable")
    R = solve_neutral_lyapunov(leader.S)
    return mu0 * R @ leader.F


def rk4_linear_step(S: np.ndarray, v: np.ndarray, h: float) -> np.ndarray:
    k1 = S @ v
    k2 = S @ (v + 0.5 * h * k1)
    k3 = S @ (v + 0.5 * h * k2)
    k4 = S @ (v + h * k3)
    return v + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def output_derivatives(leader: LeaderSystem, v0: np.ndarray, orders: Sequence[int]) -> dict:
    """``y0^(k) = F S^k v0`` for each requested ``k`` (diagnostics only)."""
    out = {}
    w = np.asarray(v0, dtype=float)
    top = max(orders) if len(orders) else 0
    for k in range(top + 1):
        if k in orders:
            out[k] = float(leader.F @ w)
        w = leader.S @ w
    return out


@dataclass(frozen=True)
class LeaderFlow:
    t: float
    v0: np.ndarray
    y0: float
    derivatives: dict = field(default_factory=dict)


def leader_flow(leader: LeaderSystem, t: float, orders: Sequence[int] = (0,),
                h: float = 1e-3) -> LeaderFlow:
    """Integrate ``v0' = S v0`` with RK4 on a grid of step ``~h`` up to ``t``.

    Output derivatives are for metrics; controllers never read them.
    """
    if t < 0:
        raise ValueError("time must be non-negative")
    steps = int(round(t / h))
    v = np.array(leader.v0_init, dtype=float)
    if steps > 0:
        dt = t / steps
        for _ in range(steps):
            v = rk4_linear_step(leader.S, v, dt)
    ders = output_derivatives(leader, v, orders)
    return LeaderFlow(t, v, float(leader.F @ v), ders)


@dataclass(frozen=True)
class SwitchedStabilityDiagnostic:
    """Spectral checks of ``I (x) S - H (x) L0 F`` over the schedule's graphs.

    ``per_graph_max_real`` and ``averaged_max_real`` are heuristics and do
    not certify the switched system.  For a periodic schedule the spectral
    radius of the one-period transition matrix decides exponential
    stability of the periodic system exactly (``< 1`` means stable).
    """

    per_graph_max_real: list
    averaged_max_real: float
    monodromy_spectral_radius: float | None
    conclusive: bool

    def as_dict(self) -> dict:
        return {
            "per_graph_max_real": self.per_graph_max_real,
            "averaged_max_real": self.averaged_max_real,
            "monodromy_spectral_radius": self.monodromy_spectral_radius,
            "conclusive": self.conclusive,
        }


def switched_stability(leader: LeaderSystem, L0: np.ndarray, schedule) -> SwitchedStabilityDiagnostic:
    from .graph import h_matrix

    S, F = leader.S, leader.F.reshape(1, -1)
    LF = np.asarray(L0, dtype=float).reshape(-1, 1) @ F
    N = schedule.node_count - 1
    if N == 0:
        # no followers: the observer error system is empty
        return SwitchedStabilityDiagnostic([], None, None, False)

    def closed(H):
        return np.kron(np.eye(N), S) - np.kron(H, LF)

    per_graph = [float(np.max(np.linalg.eigvals(closed(h_matrix(g))).real))
                 for g in schedule.graphs]
    if schedule.period is None:
        H_avg = h_matrix(schedule.graphs[schedule.intervals[-1][1] - 1])
        monodromy = None
    else:
        starts = [s for s, _ in schedule.intervals] + [schedule.period]
        H_avg = np.zeros((N, N))
        Phi = np.eye(N * S.shape[0])
        for (a, k), b in zip(schedule.intervals, starts[1:]):
            H = h_matrix(schedule.graphs[k - 1])
            H_avg += (b - a) * H
            Phi = scipy.linalg.expm(closed(H) * (b - a)) @ Phi
        H_avg /= schedule.period
        monodromy = float(np.max(np.abs(np.linalg.eigvals(Phi))))
    averaged = float(np.max(np.linalg.eigvals(closed(H_avg)).real))
    return SwitchedStabilityDiagnostic(per_graph, averaged, monodromy, monodromy is not None)
