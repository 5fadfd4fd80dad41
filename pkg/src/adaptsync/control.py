"""Controller algebra for the adaptive synchronization laws.

Notation used below, per follower of order ``r``:

* ``fw[k] = F S_i^k v_i``  (local estimate of ``y0^(k)``)
* ``fe[k] = F e_k``        (observer innovation entering ``d/dt fw[k]``)
* ``gamma = (beta_(r-1), ..., beta_1, 1)`` so that ``gamma[k]`` multiplies
  the ``k``-th derivative in ``l^(r-1) + beta_1 l^(r-2) + ... + beta_(r-1)``.

With that, the reference and sliding variable are::

    p = sum_k gamma[k] fw[k] - sum_(k<r-1) gamma[k] x[k]
    s = x[r-1] - p

and ``p' = sum_k gamma[k] (fw[k+1] + fe[k]) - sum_(k<r-1) gamma[k] x[k+1]``,
which needs only local quantities (no leader derivatives).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .observer import power_sequences

HURWITZ_TOL = 1e-9


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CompanionForm:
    A: np.ndarray
    B: np.ndarray


def companion(beta: Sequence[float]) -> CompanionForm:
    """Companion realization of ``l^(r-1) + beta_1 l^(r-2) + ... + beta_(r-1)``."""
    beta = np.asarray(beta, dtype=float)
    q = beta.size
    A = np.zeros((q, q))
    if q:
        A[:-1, 1:] = np.eye(q - 1)
        A[-1, :] = -beta[::-1]
    B = np.zeros(q)
    if q:
        B[-1] = 1.0
    return CompanionForm(A, B)


def check_beta_hurwitz(beta: Sequence[float], agent: int | None = None,
                       tol: float = HURWITZ_TOL) -> CompanionForm:
    """Build the companion form and reject it unless every root has real part < 0."""
    form = companion(beta)
    if form.A.size:
        eigs = np.linalg.eigvals(form.A)
        if np.max(eigs.real) >= -tol:
            who = f"agent {agent}: " if agent is not None else ""
            raise ConfigError(f"{who}beta polynomial not Hurwitz (roots {np.round(eigs, 6)})")
    return form


def gamma_of(beta: Sequence[float]) -> tuple:
    return tuple(float(b) for b in reversed(beta)) + (1.0,)


def _p_from_powers(x, fw, gamma) -> float:
    r = len(gamma)
    p = 0.0
    for k in range(r):
        p += gamma[k] * fw[k]
    for k in range(r - 1):
        p -= gamma[k] * x[k]
    return p


def _p_dot_from_powers(x, fw, fe, gamma) -> float:
    r = len(gamma)
    pd = 0.0
    for k in range(r):
        pd += gamma[k] * (fw[k + 1] + fe[k])
    for k in range(r - 1):
        pd -= gamma[k] * x[k + 1]
    return pd


def _single(S_i, v_i, e_vi, e_Si, F, kmax):
    S_i = np.asarray(S_i, float)[None]
    v_i = np.asarray(v_i, float)[None]
    n = v_i.shape[1]
    e_vi = np.zeros((1, n)) if e_vi is None else np.asarray(e_vi, float)[None]
    e_Si = np.zeros((1, n, n)) if e_Si is None else np.asarray(e_Si, float)[None]
    fw, fe = power_sequences(S_i, v_i, e_vi, e_Si, np.asarray(F, float), kmax)
    return fw[0], fe[0]


def compute_p_ri(x: Sequence[float], v_i, S_i, F, beta: Sequence[float]) -> float:
    """Local reference for ``y^(r-1)`` built from the observer estimate."""
    gamma = gamma_of(beta)
    fw, _ = _single(S_i, v_i, None, None, F, len(gamma))
    return _p_from_powers(x, fw, gamma)


def compute_s(x: Sequence[float], p_ri: float) -> float:
    return float(x[-1]) - p_ri


def compute_p_dot(x: Sequence[float], v_i, S_i, F, beta: Sequence[float],
                  e_vi, e_Si) -> float:
    """Analytic time derivative of ``p_ri``.

    Takes the follower's own state, its observer estimate and its observer
    innovations; the leader's state and output derivatives are deliberately
    not parameters.
    """
    gamma = gamma_of(beta)
    fw, fe = _single(S_i, v_i, e_vi, e_Si, F, len(gamma))
    return _p_dot_from_powers(x, fw, fe, gamma)


def sgn(x: float) -> float:
    if x > 0:
        return 1.0
    if x < 0:
        return -1.0
    return 0.0


def smoothed_sgn(s: float, epsilon: float) -> float:
    """``s / max(|s|, epsilon)``; ``epsilon = 0`` is the exact sign."""
    if epsilon <= 0:
        return sgn(s)
    return s / max(abs(s), epsilon)


def control_ui3(f: Sequence[float], theta_hat: Sequence[float], k_gain: float,
                s: float, p_dot: float) -> float:
    """Certainty-equivalence law ``u = f^T theta_hat - k s + p'``."""
    return sum(a * b for a, b in zip(f, theta_hat)) - k_gain * s + p_dot


def control_ui32(f: Sequence[float], theta_hat: Sequence[float], D_hat: float,
                 k_gain: float, s: float, p_dot: float, epsilon: float = 0.0) -> float:
    """Disturbance-rejecting law ``u = f^T theta_hat - sgn(s) D_hat - k s + p'``.

    ``epsilon > 0`` replaces ``sgn`` by a saturation with boundary layer
    ``epsilon``.
    """
    return control_ui3(f, theta_hat, k_gain, s, p_dot) - smoothed_sgn(s, epsilon) * D_hat


def adapt_rhs(f: Sequence[float], Lambda_inv: np.ndarray, s: float,
              mode: str = "baseline", epsilon: float = 0.0) -> tuple[np.ndarray, float]:
    """Update laws ``theta_hat' = -Lambda^-1 f s`` and ``D_hat' = sgn(s) s``.

    In exact mode ``sgn(s) s = |s|``; with smoothing it is ``s^2 / max(|s|, eps)``.
    ``D_hat'`` is zero outside disturbance-rejection mode.
    """
    f = np.asarray(f, dtype=float)
    dtheta = -(Lambda_inv @ f) * s if f.size else np.zeros(0)
    if mode != "disturbance_rejection":
        return dtheta, 0.0
    dD = abs(s) if epsilon <= 0 else smoothed_sgn(s, epsilon) * s
    return dtheta, dD


def u_bar(s: float, v_i, S_i, F, beta: Sequence[float], y0_derivs: Sequence[float]) -> float:
    """Input of the error dynamics ``xi' = A xi + B u_bar``.

    Diagnostic only: it needs ``y0^(k)`` for ``k < r``, which the controller
    never sees.
    """
    gamma = gamma_of(beta)
    fw, _ = _single(S_i, v_i, None, None, F, len(gamma))
    return _u_bar_from_powers(s, fw, y0_derivs, gamma)


def _u_bar_from_powers(s, fw, y0_derivs, gamma) -> float:
    ub = s
    for k in range(len(gamma)):
        ub -= gamma[k] * (y0_derivs[k] - fw[k])
    return ub


def lyapunov_V(s: Sequence[float], theta_tilde: Sequence, Lambdas: Sequence,
               D_tilde: Sequence[float] | None = None, mode: str = "baseline") -> float:
    """``V = 1/2 sum (s_i^2 + th_i^T Lambda_i th_i [+ D_i^2])``.

    The ``D_tilde`` terms enter only in ``disturbance_rejection`` mode.
    """
    total = 0.0
    for i, si in enumerate(s):
        th = np.asarray(theta_tilde[i], dtype=float)
        total += si * si
        if th.size:
            total += float(th @ np.asarray(Lambdas[i], float) @ th)
        if mode == "disturbance_rejection" and D_tilde is not None:
            total += D_tilde[i] ** 2
    return 0.5 * total


def barbalat_W(t: Sequence[float], s_trace: np.ndarray, k_gains: Sequence[float]) -> np.ndarray:
    """Running integral ``W(t) = int_0^t sum_i k_i s_i^2`` (trapezoidal).

    ``s_trace`` has one row per time sample and one column per agent.
    """
    s_trace = np.asarray(s_trace, dtype=float).reshape(len(t), -1)
    integrand = s_trace ** 2 @ np.asarray(k_gains, dtype=float)
    return cumulative_trapezoid(integrand, t, initial=0.0)


def tail_increment(t: Sequence[float], W: np.ndarray, fraction: float = 0.1) -> float:
    """Growth of ``W`` over the last ``fraction`` of the time span."""
    t = np.asarray(t)
    start = t[-1] - fraction * (t[-1] - t[0])
    j = int(np.searchsorted(t, start - 1e-12))
    return float(W[-1] - W[j])


def x_sgn_identity_holds(x: float) -> bool:
    """``x * sgn(x) == |x|`` exactly (the selection of the set-valued sign is irrelevant)."""
    return x * sgn(x) == abs(x) and not math.isnan(x)
