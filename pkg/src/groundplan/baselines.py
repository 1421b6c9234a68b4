"""Comparison planners on the same world model.

CEM and gradient shooting optimise the terminal goal loss only; the
UniPi-style baseline turns consecutive plan frames into actions with an exact
inverse model and executes them open loop.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .collocation import AdamHyper, AdamState, adam_step, reparam_action, reparam_jacobian
from .core import ActionBounds, RngStream
from .envs import EnvSpec, EnvState, Goal, env_observe, env_step, env_success
from .executor import EpisodeResult, MpcConfig
from .videoplan import VideoPlan
from .worldmodel import Encoder, LatentDynamics, pad_history, rollout_batch


@dataclass(frozen=True)
class CemConfig:
    population: int = 300
    elites: int = 30
    iterations: int = 10
    init_std: float | None = None   # None -> 0.5 * a_max
    std_floor: float = 0.01

    def __post_init__(self):
        if not 1 <= self.elites <= self.population:
            raise ValueError("need 1 <= elites <= population")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if (self.init_std is not None and self.init_std <= 0) or self.std_floor <= 0:
            raise ValueError("standard deviations must be positive")


@dataclass(frozen=True)
class GdConfig:
    iterations: int = 100
    adam: AdamHyper = field(default_factory=lambda: AdamHyper(lr=0.1))

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")


def _terminal_costs(f, z_hist, a_prev, seqs, z_g):
    Z = rollout_batch(f, z_hist, a_prev, seqs)
    d = Z[:, -1] - z_g
    return np.mean(d * d, axis=1)


def cem_plan(f: LatentDynamics, z_hist, a_prev, z_g, T_remaining: int, bounds: ActionBounds,
             cfg: CemConfig, rng: RngStream, history: list | None = None) -> np.ndarray:
    """Cross-entropy search over bounded action sequences; returns the best seen.

    The current mean (all zeros at the start) is scored alongside each
    population. If ``history`` is given, the best-so-far cost after every
    iteration is appended to it.
    """
    if T_remaining < 1:
        raise ValueError("remaining horizon must be >= 1")
    m = bounds.dim
    z_g = np.asarray(z_g, dtype=np.float64)
    mean = np.zeros((T_remaining, m))
    std0 = 0.5 * bounds.a_max if cfg.init_std is None else np.full(m, cfg.init_std)
    std = np.broadcast_to(std0, (T_remaining, m)).astype(np.float64)
    gen = rng.generator()
    best = bounds.clip(mean)
    best_cost = float(_terminal_costs(f, z_hist, a_prev, best[None], z_g)[0])
    for _ in range(cfg.iterations):
        samples = bounds.clip(mean + std * gen.standard_normal((cfg.population, T_remaining, m)))
        samples = np.concatenate([bounds.clip(mean)[None], samples], axis=0)
        costs = _terminal_costs(f, z_hist, a_prev, samples, z_g)
        order = np.argsort(costs, kind="stable")
        if costs[order[0]] < best_cost:
            best_cost = float(costs[order[0]])
            best = samples[order[0]].copy()
        elite = samples[order[:cfg.elites]]
        mean = elite.mean(axis=0)
        std = np.maximum(elite.std(axis=0), cfg.std_floor)
        if history is not None:
            history.append(best_cost)
    return best


def shooting_gradient(f: LatentDynamics, z_hist, a_prev, A, z_g):
    """Terminal goal loss of rolling out ``A`` and its gradient w.r.t. ``A``.

    Reverse accumulation through the per-step latent Jacobians.
    """
    H, d = f.H, f.latent_dim
    A = np.asarray(A, dtype=np.float64)
    T = A.shape[0]
    Zfull = np.concatenate([np.asarray(z_hist, dtype=np.float64).reshape(H, d), np.zeros((T, d))])
    Afull = np.concatenate([np.asarray(a_prev, dtype=np.float64).reshape(H - 1, f.action_dim), A])
    Jz_all, Ja_all = [], []
    for k in range(T):
        z_next, Jz, Ja = f.jacobians_batch(Zfull[None, k:k + H], Afull[None, k:k + H])
        Zfull[H + k] = z_next[0]
        Jz_all.append(Jz[0])
        Ja_all.append(Ja[0])
    diff = Zfull[-1] - z_g
    cost = float(np.mean(diff * diff))
    gZ = np.zeros_like(Zfull)
    gA = np.zeros_like(Afull)
    gZ[-1] = 2.0 * diff / d
    for k in range(T - 1, -1, -1):
        g = gZ[H + k]
        for j in range(H):
            gZ[k + j] += Jz_all[k][j].T @ g
            gA[k + j] += Ja_all[k][j].T @ g
    return cost, gA[H - 1:]


def gd_plan(f: LatentDynamics, z_hist, a_prev, z_g, T_remaining: int, bounds: ActionBounds,
            cfg: GdConfig, U0=None) -> np.ndarray:
    """Adam on tanh pre-images of the action sequence, minimising terminal goal loss."""
    if T_remaining < 1:
        raise ValueError("remaining horizon must be >= 1")
    params = {"U": np.zeros((T_remaining, bounds.dim)) if U0 is None else np.array(U0, dtype=np.float64)}
    state = AdamState.zeros_like(params)
    for it in range(cfg.iterations):
        A = reparam_action(params["U"], bounds)
        cost, gA = shooting_gradient(f, z_hist, a_prev, A, z_g)
        if not np.isfinite(cost) or not np.all(np.isfinite(gA)):
            raise FloatingPointError(f"non-finite shooting loss at iteration {it}")
        params, state = adam_step(params, {"U": gA * reparam_jacobian(params["U"], bounds)}, state, cfg.adam)
    return reparam_action(params["U"], bounds)


def inverse_dynamics(spec: EnvSpec, o_t, o_next) -> np.ndarray:
    """Exact inverse model: the clipped agent displacement between two frames."""
    o_t = np.asarray(o_t, dtype=np.float64)
    o_next = np.asarray(o_next, dtype=np.float64)
    if o_t.shape != o_next.shape:
        raise ValueError("observation shapes differ")
    return spec.bounds.clip(o_next[:2] - o_t[:2])


def unipi_execute(spec: EnvSpec, s0: EnvState, g: Goal, plan: VideoPlan) -> EpisodeResult:
    """Open-loop execution of inverse-dynamics actions inferred from the plan."""
    t0 = time.perf_counter()
    frames = plan.frames
    state = s0
    states = [env_observe(s0)]
    actions = []
    for t in range(plan.horizon):
        a = inverse_dynamics(spec, frames[t], frames[t + 1])
        state = env_step(spec, state, a)
        actions.append(a)
        states.append(env_observe(state))
    ok, dist = env_success(spec, state, g)
    return EpisodeResult(bool(ok), dist, len(actions), [], time.perf_counter() - t0,
                         states=states, actions=actions)


def shooting_mpc_run(spec: EnvSpec, s0: EnvState, g: Goal, T: int, E: Encoder, f: LatentDynamics,
                     method: str, mpc: MpcConfig, rng: RngStream,
                     cem: CemConfig | None = None, gd: GdConfig | None = None) -> EpisodeResult:
    """Receding-horizon CEM or GD shooting towards the encoded goal."""
    if method not in ("cem", "gd"):
        raise ValueError(f"unknown shooting method {method!r}")
    cem = cem or CemConfig()
    gd = gd or GdConfig()
    t0 = time.perf_counter()
    K = mpc.steps_per_replan(T)
    m = f.action_dim
    z_g = E.encode(np.asarray(g.target))
    state = s0
    obs_hist = [env_observe(s0)]
    executed = []
    replans = []
    t = 0
    k = 0
    while t < T:
        z_hist, a_prev = pad_history(E.encode(np.array(obs_hist)), np.array(executed).reshape(-1, m), f.H, m)
        if method == "cem":
            A = cem_plan(f, z_hist, a_prev, z_g, T - t, spec.bounds, cem, rng.fork(k))
        else:
            A = gd_plan(f, z_hist, a_prev, z_g, T - t, spec.bounds, gd)
        n_exec = min(K, T - t)
        for a in A[:n_exec]:
            state = env_step(spec, state, a)
            executed.append(np.array(a))
            obs_hist.append(env_observe(state))
        replans.append({"t": t, "rho_final": float("nan"), "max_residual": 0.0,
                        "cost": float(_terminal_costs(f, z_hist, a_prev, A[None], z_g)[0]),
                        "action_norm": float(np.linalg.norm(A[:n_exec]))})
        t += n_exec
        k += 1
    ok, dist = env_success(spec, state, g)
    return EpisodeResult(bool(ok), dist, len(executed), replans, time.perf_counter() - t0,
                         states=obs_hist, actions=executed)


def inverse_dynamics_plan(spec: EnvSpec, plan: VideoPlan) -> np.ndarray:
    """Actions inferred for every consecutive pair of plan frames."""
    return np.array([inverse_dynamics(spec, a, b) for a, b in zip(plan.frames[:-1], plan.frames[1:])])
