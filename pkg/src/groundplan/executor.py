"""Receding-horizon execution of video-guided collocation plans."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .collocation import (
    ActionParam,
    CollocationProblem,
    DecisionVars,
    SolverAbort,
    SolverConfig,
    alm_solve,
    goal_loss,
    reparam_action,
)
from .core import ActionBounds, RngStream
from .envs import EnvSpec, EnvState, Goal, env_observe, env_step, env_success
from .videoplan import VideoPlan, encode_plan
from .worldmodel import Encoder, LatentDynamics, pad_history, rollout, rollout_batch

log = logging.getLogger(__name__)

# variance 0.3 on actions normalised to [-1, 1]
DEFAULT_REFINE_STD = float(np.sqrt(0.3))


@dataclass(frozen=True)
class MpcConfig:
    """``K`` executed actions per replan. ``K = None`` means open loop (one solve).

    ``sigma`` is the refinement std on actions normalised to [-1, 1]; it is
    scaled by the half-range of the action bounds when sampling.
    """

    K: int | None = 1
    refine: bool = True
    C: int = 500
    sigma: float = DEFAULT_REFINE_STD
    z_init: str = "video"   # or "random"

    def __post_init__(self):
        if self.K is not None and self.K < 1:
            raise ValueError("execution horizon K must be >= 1")
        if self.C < 0 or self.sigma < 0:
            raise ValueError("need C >= 0 and sigma >= 0")
        if self.z_init not in ("video", "random"):
            raise ValueError("z_init must be 'video' or 'random'")

    def steps_per_replan(self, T: int) -> int:
        K = T if self.K is None else min(self.K, T)
        if K < 1:
            raise ValueError("horizon must be >= 1")
        return K


@dataclass
class EpisodeResult:
    success: bool
    final_dist: float
    steps: int
    replans: list = field(default_factory=list)
    seconds: float = 0.0
    aborted: bool = False
    final_residual: float = float("nan")
    states: list = field(default_factory=list)
    actions: list = field(default_factory=list)

    @property
    def num_solves(self) -> int:
        return len(self.replans)

    def log_lines(self) -> str:
        """One JSON record per replan."""
        keys = ("t", "rho_final", "max_residual", "cost", "action_norm")
        return "".join(json.dumps({k: r[k] for k in keys}) + "\n" for r in self.replans)


def refine_actions(f: LatentDynamics, z_hist, a_prev, A_star, z_g, C: int, sigma: float,
                   rng: RngStream, bounds: ActionBounds) -> np.ndarray:
    """Pick the lowest predicted terminal goal loss among ``A*`` and ``C`` perturbations of it.

    ``sigma`` is in normalised action units (see :class:`MpcConfig`).
    """
    A_star = np.asarray(A_star, dtype=np.float64)
    if C <= 0 or sigma == 0.0:
        return A_star.copy()
    scale = sigma * (bounds.a_max - bounds.a_min) / 2.0
    gen = rng.generator()
    noise = gen.standard_normal((C,) + A_star.shape) * scale
    cands = np.concatenate([A_star[None], bounds.clip(A_star[None] + noise)], axis=0)
    Zc = rollout_batch(f, z_hist, a_prev, cands)
    d = Zc[:, -1] - z_g
    costs = np.mean(d * d, axis=1)
    # index 0 is A* itself, so argmin never returns something predicted worse
    return cands[int(np.argmin(costs))].copy()


def _initial_latents(mode: str, z_plan: np.ndarray, E: Encoder, rng: RngStream, obs_low=0.0, obs_high=1.0):
    if mode == "video":
        return z_plan[1:].copy()
    gen = rng.generator()
    obs = gen.uniform(obs_low, obs_high, size=(z_plan.shape[0] - 1, E.obs_dim))
    return E.encode(obs)


def mpc_run(spec: EnvSpec, s0: EnvState, g: Goal, plan: VideoPlan, E: Encoder, f: LatentDynamics,
            solver: SolverConfig, mpc: MpcConfig, rng: RngStream) -> EpisodeResult:
    """Run one episode: replan from the current observation every ``K`` steps."""
    t_start = time.perf_counter()
    T = plan.horizon
    K = mpc.steps_per_replan(T)
    bounds = spec.bounds
    H, m = f.H, f.action_dim
    z_plan = encode_plan(E, plan).latents
    z_g = E.encode(np.asarray(g.target))
    Z = _initial_latents(mpc.z_init, z_plan, E, rng.fork(1))
    if solver.action_param is ActionParam.PROJECTED:
        U = np.broadcast_to(reparam_action(np.zeros(m), bounds), (T, m)).copy()
    else:
        U = np.zeros((T, m))

    state = s0
    obs_hist = [env_observe(s0)]
    executed = []
    replans = []
    aborted = False
    final_residual = float("nan")
    t = 0
    solve_idx = 0
    while t < T:
        z_seq = E.encode(np.array(obs_hist))
        z_hist, a_prev = pad_history(z_seq, np.array(executed).reshape(-1, m), H, m)
        prob = CollocationProblem(f, z_hist, a_prev, z_plan[t:], z_g, bounds, solver.weights,
                                  solver.metric, solver.action_param)
        try:
            res = alm_solve(prob, DecisionVars(Z, U), solver)
        except SolverAbort as exc:
            log.warning("solver abort at t=%d: %s", t, exc)
            aborted = True
            break
        final_residual = res.max_residual
        A = res.A
        if mpc.refine:
            A = refine_actions(f, z_hist, a_prev, A, z_g, mpc.C, mpc.sigma, rng.fork(100 + solve_idx), bounds)
        n_exec = min(K, T - t)
        for a in A[:n_exec]:
            a = bounds.clip(a)
            state = env_step(spec, state, a)
            executed.append(np.array(a))
            obs_hist.append(env_observe(state))
        replans.append({
            "t": t,
            "rho_final": res.dual.rho,
            "max_residual": res.max_residual,
            "cost": res.final_cost,
            "action_norm": float(np.linalg.norm(A[:n_exec])),
            "diagnostics": res.diagnostics,
        })
        # executed knots drop out; the rest warm-start the next solve
        Z = res.Z[n_exec:]
        U = res.U[n_exec:]
        t += n_exec
        solve_idx += 1

    ok, dist = env_success(spec, state, g)
    return EpisodeResult(
        success=bool(ok and not aborted),
        final_dist=dist,
        steps=len(executed),
        replans=replans,
        seconds=time.perf_counter() - t_start,
        aborted=aborted,
        final_residual=final_residual,
        states=obs_hist,
        actions=executed,
    )


def predicted_terminal_cost(f: LatentDynamics, z_hist, a_prev, A, z_g) -> float:
    Zr = rollout(f, z_hist, a_prev, A)
    return goal_loss(Zr[-1], z_g)
