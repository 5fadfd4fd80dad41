"""Follower dynamics in chain-of-integrators form and bounded disturbances.

Follower ``i`` with order ``r`` and state ``x = (y, y', ..., y^(r-1))``::

    x_l' = x_(l+1)                       l < r
    x_r' = u + d(t) - f(x, t)^T theta
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from . import expr

DISTURBANCE_KINDS = ("zero", "sinusoid", "square_wave", "piecewise_constant",
                     "seeded_bounded_noise")
# piecewise-constant profiles are built in chunks of this many hold intervals
_NOISE_CHUNK = 4096
# breakpoints land exactly on grid times; this slack keeps j*h from flooring low
_GRID_EPS = 1e-9


def _grid_floor(x: float) -> int:
    return int(math.floor(x + _GRID_EPS))


@dataclass(frozen=True)
class DisturbanceProfile:
    """Bounded disturbance ``d(t)``.

    ``bound`` is the implied ``D`` with ``|d(t)| <= D``.  It exists for
    diagnostics and tests; controllers are never handed a profile.
    """

    kind: str = "zero"
    amplitude: float = 0.0
    frequency: float = 0.0
    phase: float = 0.0
    period: float = 0.0
    breakpoints: tuple = ()
    values: tuple = ()
    hold_time: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in DISTURBANCE_KINDS:
            raise ValueError(f"unknown disturbance kind {self.kind!r}")
        if self.kind == "square_wave" and self.period <= 0:
            raise ValueError("square_wave needs a positive period")
        if self.kind == "seeded_bounded_noise" and self.hold_time <= 0:
            raise ValueError("seeded_bounded_noise needs a positive hold_time")
        if self.kind == "piecewise_constant":
            bps = tuple(float(b) for b in self.breakpoints)
            vals = tuple(float(v) for v in self.values)
            if len(vals) != len(bps) + 1:
                raise ValueError("piecewise_constant needs len(values) == len(breakpoints) + 1")
            if any(b <= a for a, b in zip(bps, bps[1:])) or (bps and bps[0] <= 0):
                raise ValueError("breakpoints must be positive and increasing")
            object.__setattr__(self, "breakpoints", bps)
            object.__setattr__(self, "values", vals)

    @property
    def bound(self) -> float:
        if self.kind == "zero":
            return 0.0
        if self.kind == "piecewise_constant":
            return max(abs(v) for v in self.values)
        return abs(self.amplitude)

    @property
    def piecewise_constant(self) -> bool:
        """True when ``d`` only changes at breakpoints (held across a step)."""
        return self.kind in ("zero", "square_wave", "piecewise_constant",
                             "seeded_bounded_noise")

    def breakpoint_spacing(self) -> list[float]:
        """Quantities that must be integer multiples of the step for grid alignment."""
        if self.kind == "square_wave":
            return [self.period / 2.0]
        if self.kind == "seeded_bounded_noise":
            return [self.hold_time]
        if self.kind == "piecewise_constant":
            return list(self.breakpoints)
        return []

    def _noise_chunk(self, c: int) -> np.ndarray:
        cache = self.__dict__.setdefault("_chunks", {})
        if c not in cache:
            rng = np.random.default_rng([self.seed, c])
            cache[c] = rng.uniform(-abs(self.amplitude), abs(self.amplitude), _NOISE_CHUNK)
        return cache[c]

    def __call__(self, t: float) -> float:
        return disturbance_at(self, t)


def disturbance_at(p: DisturbanceProfile, t: float) -> float:
    if t < 0:
        raise ValueError("time must be non-negative")
    kind = p.kind
    if kind == "zero":
        return 0.0
    if kind == "sinusoid":
        return p.amplitude * math.sin(2.0 * math.pi * p.frequency * t + p.phase)
    if kind == "square_wave":
        half = _grid_floor(t / (0.5 * p.period))
        return p.amplitude if half % 2 == 0 else -p.amplitude
    if kind == "piecewise_constant":
        k = 0
        while k < len(p.breakpoints) and t >= p.breakpoints[k] - _GRID_EPS:
            k += 1
        return p.values[k]
    idx = _grid_floor(t / p.hold_time)
    chunk, pos = divmod(idx, _NOISE_CHUNK)
    return float(p._noise_chunk(chunk)[pos])


def disturbance_grid(p: DisturbanceProfile, t: np.ndarray) -> np.ndarray:
    """Vectorized :func:`disturbance_at` over an array of times."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("time must be non-negative")
    if p.kind == "zero":
        return np.zeros_like(t)
    if p.kind == "sinusoid":
        return p.amplitude * np.sin(2.0 * np.pi * p.frequency * t + p.phase)
    if p.kind == "square_wave":
        half = np.floor(t / (0.5 * p.period) + _GRID_EPS).astype(np.int64)
        return np.where(half % 2 == 0, p.amplitude, -p.amplitude)
    if p.kind == "piecewise_constant":
        k = np.searchsorted(np.asarray(p.breakpoints) - _GRID_EPS, t, side="right")
        return np.asarray(p.values)[k]
    idx = np.floor(t / p.hold_time + _GRID_EPS).astype(np.int64)
    chunk, pos = np.divmod(idx, _NOISE_CHUNK)
    out = np.empty_like(t)
    for c in np.unique(chunk):
        sel = chunk == c
        out[sel] = p._noise_chunk(int(c))[pos[sel]]
    return out


@dataclass(frozen=True)
class FollowerSpec:
    """One follower: plant data, controller gains and initial state.

    ``f_rows`` and ``phi`` are expression strings (see :mod:`adaptsync.expr`).
    ``beta`` lists ``(beta_1, ..., beta_(r-1))`` of the polynomial
    ``l^(r-1) + beta_1 l^(r-2) + ... + beta_(r-1)``.
    """

    order: int
    f_rows: tuple = ()
    theta: tuple = ()
    beta: tuple = ()
    k_gain: float = 1.0
    Lambda: np.ndarray | None = None
    phi: str | None = None
    x_init: tuple | None = None
    disturbance: DisturbanceProfile = field(default_factory=DisturbanceProfile)
    theta_hat_init: tuple | None = None
    D_hat_init: float = 0.0

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("order must be at least 1")
        object.__setattr__(self, "f_rows", tuple(self.f_rows))
        object.__setattr__(self, "theta", tuple(float(v) for v in self.theta))
        object.__setattr__(self, "beta", tuple(float(v) for v in self.beta))
        m = len(self.f_rows)
        if len(self.theta) != m:
            raise ValueError(f"theta has {len(self.theta)} entries for {m} regressor rows")
        if len(self.beta) != self.order - 1:
            raise ValueError(f"beta needs {self.order - 1} coefficients, got {len(self.beta)}")
        if self.k_gain <= 0:
            raise ValueError("k must be positive")
        Lam = np.eye(m) if self.Lambda is None else np.atleast_2d(np.asarray(self.Lambda, float))
        if m == 0:
            Lam = np.zeros((0, 0))
        if Lam.shape != (m, m):
            raise ValueError(f"Lambda must be {m}x{m}")
        if m and (not np.allclose(Lam, Lam.T) or np.min(np.linalg.eigvalsh(Lam)) <= 0):
            raise ValueError("Lambda must be symmetric positive definite")
        Lam.setflags(write=False)
        object.__setattr__(self, "Lambda", Lam)
        x0 = tuple(self.x_init) if self.x_init is not None else (0.0,) * self.order
        if len(x0) != self.order:
            raise ValueError(f"x_init needs {self.order} entries")
        object.__setattr__(self, "x_init", tuple(float(v) for v in x0))
        th0 = tuple(self.theta_hat_init) if self.theta_hat_init is not None else (0.0,) * m
        if len(th0) != m:
            raise ValueError(f"theta_hat_init needs {m} entries")
        object.__setattr__(self, "theta_hat_init", tuple(float(v) for v in th0))
        # parse eagerly so bad expressions fail at construction
        _ = self.regressor_exprs, self.phi_expr

    @property
    def m(self) -> int:
        return len(self.f_rows)

    @cached_property
    def regressor_exprs(self) -> tuple:
        return tuple(expr.parse(src, self.order) for src in self.f_rows)

    @cached_property
    def phi_expr(self):
        return None if self.phi is None else expr.parse(self.phi, self.order)

    @cached_property
    def regressor(self):
        """Compiled ``f(x, t) -> tuple`` of the regressor rows."""
        return expr.compile_rows(self.regressor_exprs)

    @cached_property
    def Lambda_inv(self) -> np.ndarray:
        if self.m == 0:
            return np.zeros((0, 0))
        c = np.linalg.cholesky(self.Lambda)
        inv_c = np.linalg.inv(c)
        return inv_c.T @ inv_c


def plant_rhs(spec: FollowerSpec, x: Sequence[float], u: float, t: float,
              d: float | None = None) -> np.ndarray:
    """State derivative of one follower.

    ``d`` defaults to the follower's disturbance profile evaluated at ``t``.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.order,):
        raise ValueError(f"state needs {spec.order} entries")
    if d is None:
        d = disturbance_at(spec.disturbance, t)
    f = spec.regressor(x, t)
    out = np.empty(spec.order)
    out[:-1] = x[1:]
    out[-1] = u + d - sum(fk * th for fk, th in zip(f, spec.theta))
    return out
