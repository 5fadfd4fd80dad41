import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from adaptsync.expr import ExprEvalError
from adaptsync.plant import DisturbanceProfile, FollowerSpec, disturbance_at, disturbance_grid, plant_rhs


def test_rhs_first_order_decay():
    spec = FollowerSpec(1, ["x1"], [1.0])
    assert np.array_equal(plant_rhs(spec, [2.0], 0.0, 0.0), [-2.0])


def test_rhs_double_integrator():
    assert np.array_equal(plant_rhs(FollowerSpec(2, beta=[1.0]), [1.0, 3.0], 0.0, 0.0), [3.0, 0.0])


def test_rhs_input_cancels_disturbance():
    spec = FollowerSpec(1, disturbance=DisturbanceProfile("piecewise_constant", values=(-5.0,)))
    assert np.array_equal(plant_rhs(spec, [0.7], 5.0, 2.0), [0.0])


def test_rhs_error_propagates():
    spec = FollowerSpec(1, ["1/x1"], [1.0])
    with pytest.raises(ExprEvalError):
        plant_rhs(spec, [0.0], 0.0, 0.0)


@given(st.lists(st.floats(-10, 10), min_size=3, max_size=3), st.floats(-10, 10),
       st.floats(-10, 10), st.floats(0, 100))
def test_rhs_linear_in_input(x, u, delta, t):
    spec = FollowerSpec(3, ["x1", "sin(t)*x2", "x1^2"], [1.0, -2.0, 0.5], beta=[2.0, 1.0])
    diff = plant_rhs(spec, x, u + delta, t, 0.0) - plant_rhs(spec, x, u, t, 0.0)
    assert np.array_equal(diff[:-1], [0.0, 0.0])
    assert diff[-1] == pytest.approx(delta, abs=1e-9)
    # d enters the same channel as u
    assert np.allclose(plant_rhs(spec, x, u, t, delta), plant_rhs(spec, x, u + delta, t, 0.0))


def test_zero_profile():
    p = DisturbanceProfile()
    assert all(disturbance_at(p, t) == 0.0 for t in (0.0, 1.5, 1e6))


def test_square_wave_halves():
    p = DisturbanceProfile("square_wave", amplitude=2.0, period=4.0)
    assert disturbance_at(p, 1.0) == 2.0
    assert disturbance_at(p, 3.0) == -2.0
    assert disturbance_at(p, 2.0) == -2.0  # right-continuous at the switch
    assert p.bound == 2.0


def test_piecewise_constant_breakpoints():
    p = DisturbanceProfile("piecewise_constant", breakpoints=(1.0, 2.5), values=(1.0, -3.0, 0.5))
    assert [disturbance_at(p, t) for t in (0.0, 0.999, 1.0, 2.5, 9.0)] == [1, 1, -3, 0.5, 0.5]
    assert p.bound == 3.0


def test_sinusoid():
    p = DisturbanceProfile("sinusoid", amplitude=1.5, frequency=0.25, phase=0.0)
    assert disturbance_at(p, 1.0) == pytest.approx(1.5)
    assert not p.piecewise_constant


def test_noise_bounded_at_million_samples():
    p = DisturbanceProfile("seeded_bounded_noise", amplitude=1.0, hold_time=0.01, seed=7)
    rng = np.random.default_rng(0)
    t = rng.uniform(0.0, 5000.0, 10**6)
    assert np.max(np.abs(disturbance_grid(p, t))) <= 1.0


def test_noise_is_seeded_and_held():
    p = DisturbanceProfile("seeded_bounded_noise", amplitude=1.0, hold_time=0.5, seed=3)
    q = DisturbanceProfile("seeded_bounded_noise", amplitude=1.0, hold_time=0.5, seed=3)
    r = DisturbanceProfile("seeded_bounded_noise", amplitude=1.0, hold_time=0.5, seed=4)
    assert disturbance_at(p, 0.1) == disturbance_at(p, 0.49) == disturbance_at(q, 0.2)
    assert disturbance_at(p, 0.1) != disturbance_at(r, 0.1)
    assert disturbance_at(p, 0.1) != disturbance_at(p, 0.5)


profiles = st.one_of(
    st.just(DisturbanceProfile()),
    st.builds(lambda a, f, ph: DisturbanceProfile("sinusoid", amplitude=a, frequency=f, phase=ph),
              st.floats(-3, 3), st.floats(0, 2), st.floats(-math.pi, math.pi)),
    st.builds(lambda a, k: DisturbanceProfile("square_wave", amplitude=a, period=0.002 * k),
              st.floats(-3, 3), st.integers(1, 5000)),
    st.builds(lambda v: DisturbanceProfile("piecewise_constant",
                                           breakpoints=tuple(float(i + 1) for i in range(len(v) - 1)),
                                           values=tuple(v)),
              st.lists(st.floats(-3, 3), min_size=1, max_size=6)),
    st.builds(lambda a, k, s: DisturbanceProfile("seeded_bounded_noise", amplitude=a,
                                                 hold_time=0.001 * k, seed=s),
              st.floats(0, 3), st.integers(1, 1000), st.integers(0, 2**31)),
)


@given(profiles, st.sampled_from([1e-3, 1e-2, 0.25]))
def test_bounded_on_run_grid(p, h):
    t = np.arange(0, 20001) * h
    assert np.all(np.abs(disturbance_grid(p, t)) <= p.bound)


@given(profiles, st.lists(st.integers(0, 10**6), min_size=1, max_size=30))
def test_grid_matches_pointwise(p, steps):
    t = np.array(steps) * 1e-3
    assert np.array_equal(disturbance_grid(p, t), [disturbance_at(p, float(x)) for x in t])


def test_negative_time_rejected():
    with pytest.raises(ValueError):
        disturbance_at(DisturbanceProfile(), -1.0)


@pytest.mark.parametrize("kwargs,msg", [
    (dict(order=0), "order"),
    (dict(order=2, beta=()), "beta"),
    (dict(order=1, f_rows=["x1"], theta=()), "theta"),
    (dict(order=1, k_gain=0.0), "k"),
    (dict(order=1, f_rows=["x1"], theta=[1.0], Lambda=[[-1.0]]), "positive definite"),
    (dict(order=1, f_rows=["x2"], theta=[1.0]), "x2"),
])
def test_follower_spec_validation(kwargs, msg):
    with pytest.raises(ValueError, match=msg):
        FollowerSpec(**kwargs)


def test_lambda_inverse():
    spec = FollowerSpec(1, ["x1", "t"], [1.0, 1.0], Lambda=[[2.0, 0.5], [0.5, 1.0]])
    assert np.allclose(spec.Lambda_inv @ spec.Lambda, np.eye(2))


def test_exact_cancellation_leaves_unforced_error_chain():
    # u = f^T theta - d + y0'' with y0 = cos t: the error e = y - y0 obeys e'' = 0
    p = DisturbanceProfile("sinusoid", amplitude=2.0, frequency=0.3, phase=0.1)
    spec = FollowerSpec(2, ["x1", "sin(t)*x2", "x1^2"], [1.0, -2.0, 0.5], beta=[1.0],
                        disturbance=p)

    def f(t, x):
        u = float(np.dot(spec.regressor(x, t), spec.theta)) - p(t) - math.cos(t)
        return plant_rhs(spec, x, u, t)

    h, x, t = 1e-2, np.array([1.5, 0.2]), 0.0
    for _ in range(1000):
        k1 = f(t, x)
        k2 = f(t + h / 2, x + h / 2 * k1)
        k3 = f(t + h / 2, x + h / 2 * k2)
        k4 = f(t + h, x + h * k3)
        x, t = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4), t + h
    assert x[0] - math.cos(t) == pytest.approx(0.5 + 0.2 * t, abs=1e-8)
    assert x[1] + math.sin(t) == pytest.approx(0.2, abs=1e-8)
