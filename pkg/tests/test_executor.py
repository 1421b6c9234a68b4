import json
from dataclasses import replace

import numpy as np
import pytest

from groundplan import executor
from groundplan.baselines import unipi_execute
from groundplan.core import RngStream
from groundplan.envs import EnvSpec, EnvState, Goal
from groundplan.executor import MpcConfig, mpc_run, predicted_terminal_cost, refine_actions
from groundplan.harness.config import config_from_dict
from groundplan.videoplan import make_oracle_plan
from groundplan.worldmodel import AnalyticConjugate, Encoder

WALL = EnvSpec.wallnav()
E8 = Encoder.random(2, 8, RngStream(0, 1))
F = AnalyticConjugate(WALL, E8)
SOLVER = config_from_dict({}).solver_config(25)
# a lighter solver for the structural checks
QUICK = replace(SOLVER, inner_iters=5, outer_iters=5)
S0, GOAL = EnvState([0.2, 0.3]), Goal([0.8, 0.3])


def _random_instance(gen):
    z = E8.encode(gen.uniform(0.1, 0.9, 2))[None]
    A = gen.uniform(-0.1, 0.1, (int(gen.integers(1, 8)), 2))
    return z, A, E8.encode(gen.uniform(0.1, 0.9, 2))


def test_refine_trivial_cases():
    z, A, g = _random_instance(np.random.default_rng(0))
    np.testing.assert_array_equal(refine_actions(F, z, np.zeros((0, 2)), A, g, 0, 0.5, RngStream(1), WALL.bounds), A)
    np.testing.assert_array_equal(refine_actions(F, z, np.zeros((0, 2)), A, g, 50, 0.0, RngStream(1), WALL.bounds), A)


def test_refine_never_worsens_predicted_cost():
    gen = np.random.default_rng(1)
    for k in range(100):
        z, A, g = _random_instance(gen)
        out = refine_actions(F, z, np.zeros((0, 2)), A, g, 30, 0.5, RngStream(k), WALL.bounds)
        assert np.all(np.abs(out) <= WALL.bounds.a_max)
        before = predicted_terminal_cost(F, z, np.zeros((0, 2)), A, g)
        assert predicted_terminal_cost(F, z, np.zeros((0, 2)), out, g) <= before


def test_mpc_config_validation():
    assert MpcConfig(K=None).steps_per_replan(25) == 25
    assert MpcConfig(K=40).steps_per_replan(25) == 25
    for bad in ({"K": 0}, {"C": -1}, {"sigma": -0.1}, {"z_init": "noise"}):
        with pytest.raises(ValueError):
            MpcConfig(**bad)


def test_oracle_straight_line_succeeds():
    s0, g = EnvState([0.1, 0.2]), Goal([0.4, 0.2])
    plan = make_oracle_plan(WALL, s0, g, 10)
    res = mpc_run(WALL, s0, g, plan, E8, F, SOLVER, MpcConfig(K=1), RngStream(2))
    assert res.success and res.steps == 10 and res.num_solves == 10
    assert all(np.all(np.abs(a) <= WALL.bounds.a_max) for a in res.actions)
    records = [json.loads(line) for line in res.log_lines().splitlines()]
    assert [r["t"] for r in records] == list(range(10))
    assert set(records[0]) == {"t", "rho_final", "max_residual", "cost", "action_norm"}


def test_open_loop_solves_once():
    s0, g = EnvState([0.1, 0.2]), Goal([0.4, 0.2])
    plan = make_oracle_plan(WALL, s0, g, 10)
    res = mpc_run(WALL, s0, g, plan, E8, F, QUICK, MpcConfig(K=None), RngStream(3))
    assert res.num_solves == 1 and res.steps == 10
    k3 = mpc_run(WALL, s0, g, plan, E8, F, QUICK, MpcConfig(K=3), RngStream(3))
    assert [r["t"] for r in k3.replans] == [0, 3, 6, 9]


def test_warm_start_carries_unexecuted_knots(monkeypatch):
    calls = []
    real = executor.alm_solve

    def spy(prob, init, cfg):
        res = real(prob, init, cfg)
        calls.append((init.copy(), res.Z.copy(), res.U.copy()))
        return res

    monkeypatch.setattr(executor, "alm_solve", spy)
    plan = make_oracle_plan(WALL, S0, GOAL, 12)
    mpc_run(WALL, S0, GOAL, plan, E8, F, QUICK, MpcConfig(K=2), RngStream(4))
    assert len(calls) == 6
    for (_, Z, U), (init, _, _) in zip(calls, calls[1:]):
        assert np.array_equal(init.Z, Z[2:]) and np.array_equal(init.U, U[2:])


def test_episode_is_deterministic():
    plan = make_oracle_plan(WALL, S0, GOAL, 12)
    a = mpc_run(WALL, S0, GOAL, plan, E8, F, QUICK, MpcConfig(K=1, C=50), RngStream(5))
    b = mpc_run(WALL, S0, GOAL, plan, E8, F, QUICK, MpcConfig(K=1, C=50), RngStream(5))
    assert a.log_lines() == b.log_lines()
    assert a.replans == b.replans
    np.testing.assert_array_equal(np.array(a.actions), np.array(b.actions))


def test_teleport_recovery_on_standard_fixture(teleport_episode):
    spec, E, f, ep, _ = teleport_episode
    res = mpc_run(spec, ep.s0, ep.goal, ep.plan, E, f, SOLVER, MpcConfig(K=1), ep.rng)
    assert res.success
    assert res.final_residual <= SOLVER.tau_dyn
    assert not unipi_execute(spec, ep.s0, ep.goal, ep.plan).success


def test_solver_abort_is_a_failed_episode(monkeypatch):
    def boom(prob, init, cfg):
        raise executor.SolverAbort("non-finite augmented Lagrangian at outer iteration 0", [])

    monkeypatch.setattr(executor, "alm_solve", boom)
    s0, g = EnvState([0.1, 0.2]), Goal([0.1, 0.2])
    res = mpc_run(WALL, s0, g, make_oracle_plan(WALL, s0, g, 5), E8, F, QUICK, MpcConfig(), RngStream(7))
    assert res.aborted and not res.success and res.steps == 0
