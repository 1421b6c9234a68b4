import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groundplan.baselines import (
    CemConfig,
    GdConfig,
    cem_plan,
    gd_plan,
    inverse_dynamics,
    inverse_dynamics_plan,
    shooting_gradient,
    shooting_mpc_run,
    unipi_execute,
)
from groundplan.core import ActionBounds, RngStream
from groundplan.envs import EnvSpec, EnvState, Goal, expert_plan
from groundplan.executor import MpcConfig
from groundplan.videoplan import corrupt_blur, make_oracle_plan
from groundplan.worldmodel import AnalyticConjugate, Encoder, LearnedMLP, LinearDynamics, sample_check_points

WALL = EnvSpec.wallnav()
E8 = Encoder.random(2, 8, RngStream(0, 1))
INTEGRATOR = LinearDynamics([[1.0]], [[1.0]])
B03 = ActionBounds.symmetric([0.3])
NO_PREV = np.zeros((0, 1))
# start below the gap, goal straight across the wall
S0, GOAL = EnvState([0.2, 0.3]), Goal([0.8, 0.3])


def _terminal_error(A):
    return abs(float(np.sum(A)) - 1.0)


def test_cem_on_integrator():
    A = cem_plan(INTEGRATOR, [[0.0]], NO_PREV, [1.0], 5, B03, CemConfig(), RngStream(0))
    assert A.shape == (5, 1)
    assert _terminal_error(A) < 0.02
    assert np.all(np.abs(A) <= 0.3)
    again = cem_plan(INTEGRATOR, [[0.0]], NO_PREV, [1.0], 5, B03, CemConfig(), RngStream(0))
    np.testing.assert_array_equal(A, again)


def test_gd_on_integrator():
    A = gd_plan(INTEGRATOR, [[0.0]], NO_PREV, [1.0], 5, B03, GdConfig())
    assert _terminal_error(A) < 0.02
    # every step sees the same gradient from the zero start, so the split is uniform
    np.testing.assert_allclose(A[:, 0], 0.2, atol=0.05)
    cem = cem_plan(INTEGRATOR, [[0.0]], NO_PREV, [1.0], 5, B03, CemConfig(), RngStream(1))
    assert abs(_terminal_error(A) - _terminal_error(cem)) < 0.05
    np.testing.assert_array_equal(gd_plan(INTEGRATOR, [[0.0]], NO_PREV, [1.0], 5, B03, GdConfig(0)), 0.0)
    with pytest.raises(ValueError):
        gd_plan(INTEGRATOR, [[0.0]], NO_PREV, [1.0], 0, B03, GdConfig())


def test_cem_at_goal_beats_zero_sequence():
    f = AnalyticConjugate(WALL, E8)
    z = E8.encode([0.3, 0.3])[None]
    A = cem_plan(f, z, np.zeros((0, 2)), z[0], 6, WALL.bounds, CemConfig(population=50, elites=5), RngStream(2))
    zero_cost, _ = shooting_gradient(f, z, np.zeros((0, 2)), np.zeros((6, 2)), z[0])
    cost, _ = shooting_gradient(f, z, np.zeros((0, 2)), A, z[0])
    assert cost <= zero_cost


def test_cem_best_so_far_is_monotone():
    f = AnalyticConjugate(WALL, E8)
    hist = []
    cem_plan(f, E8.encode([0.2, 0.2])[None], np.zeros((0, 2)), E8.encode([0.4, 0.5]), 8, WALL.bounds,
             CemConfig(population=60, elites=6, iterations=12), RngStream(3), history=hist)
    assert len(hist) == 12
    assert all(b <= a for a, b in zip(hist, hist[1:]))


def test_config_validation():
    with pytest.raises(ValueError):
        CemConfig(population=10, elites=11)
    with pytest.raises(ValueError):
        CemConfig(init_std=0.0)
    with pytest.raises(ValueError):
        GdConfig(iterations=-1)


def _fd(fun, A, h=1e-6):
    g = np.zeros_like(A)
    for idx in np.ndindex(A.shape):
        up, down = A.copy(), A.copy()
        up[idx] += h
        down[idx] -= h
        g[idx] = (fun(up) - fun(down)) / (2 * h)
    return g


@pytest.mark.parametrize("f", [AnalyticConjugate(WALL, E8), LearnedMLP.initialize(3, 8, 2, RngStream(4))],
                         ids=["analytic", "mlp"])
def test_shooting_gradient_matches_finite_differences(f):
    zs, as_ = sample_check_points(f, 6, RngStream(5))
    z_hist, a_prev = zs[0], as_[0, 1:]
    A = as_[1:, -1]
    z_g = zs[-1, -1] + 0.1
    _, g = shooting_gradient(f, z_hist, a_prev, A, z_g)
    fd = _fd(lambda X: shooting_gradient(f, z_hist, a_prev, X, z_g)[0], A)
    assert np.linalg.norm(g - fd) <= 1e-4 * max(np.linalg.norm(fd), 1e-8)


def test_inverse_dynamics_examples():
    np.testing.assert_allclose(inverse_dynamics(WALL, [0.2, 0.5], [0.3, 0.5]), [0.1, 0.0], atol=1e-15)
    np.testing.assert_allclose(inverse_dynamics(WALL, [0.1, 0.5], [0.5, 0.5]), [0.1, 0.0])
    push = EnvSpec.pushtoy()
    np.testing.assert_allclose(inverse_dynamics(push, [0.2, 0.2, 0.5, 0.5], [0.25, 0.2, 0.9, 0.1]), [0.05, 0.0])
    with pytest.raises(ValueError):
        inverse_dynamics(WALL, [0.1, 0.2], [0.1, 0.2, 0.3, 0.4])


@pytest.mark.parametrize("spec,s0,goal", [
    (WALL, S0, GOAL),
    (EnvSpec.pushtoy(), EnvState([0.2, 0.2], [0.4, 0.5]), Goal([0.0, 0.0, 0.6, 0.6])),
])
def test_inverse_dynamics_recovers_expert_actions(spec, s0, goal):
    obs, acts = expert_plan(spec, s0, goal, 40)
    rec = np.array([inverse_dynamics(spec, a, b) for a, b in zip(obs[:-1], obs[1:])])
    # steps that hit the wall or pushed into a clamped block move less than commanded
    free = np.all(np.abs(np.diff(obs[:, :2], axis=0) - acts) < 1e-12, axis=1)
    assert free.sum() >= len(acts) // 2
    np.testing.assert_allclose(rec[free], acts[free], atol=1e-12)
    assert np.all(np.abs(rec) <= spec.bounds.a_max)


def test_unipi_teleport_fails(teleport_episode):
    spec, _, _, ep, cs = teleport_episode
    assert unipi_execute(spec, ep.s0, ep.goal, ep.oracle).success
    res = unipi_execute(spec, ep.s0, ep.goal, ep.plan)
    assert not res.success
    assert len(res.actions) == 25
    assert all(np.all(np.abs(a) <= spec.bounds.a_max) for a in res.actions)
    # the jump cannot be realised by one clipped action
    assert np.any(np.abs(ep.plan.frames[cs] - ep.plan.frames[cs - 1]) > spec.bounds.a_max)
    np.testing.assert_array_equal(inverse_dynamics_plan(spec, ep.plan), np.array(res.actions))


def test_unipi_oracle_and_blur():
    plan = make_oracle_plan(WALL, S0, GOAL, 25)
    assert unipi_execute(WALL, S0, GOAL, plan).success
    mb = unipi_execute(WALL, S0, GOAL, corrupt_blur(plan, 10))
    assert not mb.success
    # blurred midpoints cut the corner, so the agent ends against the wall's left face
    assert mb.states[-1][0] == pytest.approx(WALL.wall_x - WALL.wall_half_thickness, abs=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.integers(0, 1000))
def test_cem_actions_within_bounds(gx, gy, seed):
    f = AnalyticConjugate(WALL, E8)
    A = cem_plan(f, E8.encode([0.3, 0.3])[None], np.zeros((0, 2)), E8.encode([gx, gy]), 4, WALL.bounds,
                 CemConfig(population=20, elites=4, iterations=3), RngStream(seed))
    assert np.all(np.abs(A) <= WALL.bounds.a_max)


@pytest.mark.parametrize("method", ["cem", "gd"])
def test_shooting_mpc_free_space(method):
    f = AnalyticConjugate(WALL, E8)
    s0, g = EnvState([0.1, 0.2]), Goal([0.4, 0.6])
    res = shooting_mpc_run(WALL, s0, g, 10, E8, f, method, MpcConfig(K=2), RngStream(6),
                           CemConfig(population=100, elites=10, iterations=5), GdConfig(50))
    assert res.success
    assert res.steps == 10 and res.num_solves == 5
    with pytest.raises(ValueError):
        shooting_mpc_run(WALL, s0, g, 10, E8, f, "random", MpcConfig(), RngStream(6))
