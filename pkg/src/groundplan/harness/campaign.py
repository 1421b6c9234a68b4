"""Episode suites, method dispatch, parallel campaigns and the ablation matrix.

Every random quantity of an episode is derived from the master seed, the
horizon and the episode index, so a campaign gives the same rows whatever the
worker count or scheduling order.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ..baselines import shooting_mpc_run, unipi_execute
from ..collocation import ActionParam, AlignMetric, SolverConfig, with_weights
from ..core import RngStream
from ..envs import (
    EnvKind,
    EnvSpec,
    EnvState,
    Goal,
    UnreachableError,
    env_reset,
    expert_plan,
    in_wall,
    segment_blocked,
)
from ..executor import EpisodeResult, MpcConfig, mpc_run
from ..videoplan import PlanSource, VideoPlan, corrupt_blur, corrupt_drift, corrupt_teleport, parse_source
from ..worldmodel import (
    AnalyticConjugate,
    Encoder,
    LatentDynamics,
    TrainConfig,
    collect_transitions,
    train_mlp_dynamics,
)
from .config import HarnessConfig

# stream labels below the master seed
_EPISODE_STREAM = 0xE9
_MODEL_STREAM = 0x3D
_MAX_DRAWS = 10_000


# --------------------------------------------------------------------------- episodes

@dataclass(frozen=True)
class Episode:
    index: int
    s0: EnvState
    goal: Goal
    oracle: VideoPlan
    plan: VideoPlan
    rng: RngStream


def env_spec(kind: EnvKind) -> EnvSpec:
    return EnvSpec.wallnav() if kind is EnvKind.WALLNAV else EnvSpec.pushtoy()


def crossing_index(spec: EnvSpec, plan: VideoPlan) -> int:
    """First plan frame strictly past the wall centre line, or -1."""
    past = plan.frames[:, 0] > spec.wall_x
    return int(np.argmax(past)) if past.any() else -1


def teleport_cut(spec: EnvSpec, plan: VideoPlan, back: int, ahead: int):
    """Cut placement for a wall-crossing plan, or None if no valid cut exists.

    The cut starts ``back`` frames before the first frame past the wall and
    spans ``ahead + back`` frames. It is only accepted if the straight jump
    from the last kept frame to the landing frame passes through the wall,
    so the corrupted plan asks for motion the dynamics cannot produce.
    """
    T = plan.horizon
    i = crossing_index(spec, plan)
    if i < 1:
        return None
    cs = i - back
    ce = min(i + ahead, T - 1)
    if cs < 1 or ce <= cs:
        return None
    if segment_blocked(spec, plan.frames[cs - 1], plan.frames[ce]) is None:
        return None
    return cs, ce - cs


def _draw_wallnav(spec: EnvSpec, gen: np.random.Generator):
    s = np.array([gen.uniform(0.05, 0.45), gen.uniform(0.05, 0.95)])
    q = np.array([gen.uniform(0.55, 0.95), gen.uniform(0.05, 0.95)])
    if in_wall(spec, s) or segment_blocked(spec, s, q) is None:
        return None
    return EnvState(s), Goal(q)


def _draw_pushtoy(spec: EnvSpec, gen: np.random.Generator):
    s0 = env_reset(spec, RngStream(int(gen.integers(2**63))))
    target = gen.uniform(0.2, 0.8, size=2)
    if np.linalg.norm(target - s0.block) < 2 * spec.eps:
        return None
    return s0, Goal(np.concatenate([s0.agent, target]))


def sample_episode(spec: EnvSpec, T: int, source: str, index: int, root: RngStream,
                   cfg: HarnessConfig) -> Episode:
    """Draw start/goal pairs until the expert reaches the goal (and, for
    TELEPORT, until the plan admits a valid cut); then corrupt the plan.

    The goal is the expert's final observation, so it is reachable by
    construction. ORACLE, BLUR and DRIFT cells share the same pairs.
    """
    kind, k = parse_source(source)
    ep_rng = root.fork(T).fork(index)
    tele = kind is PlanSource.TELEPORT
    gen = ep_rng.fork(1 if tele else 0).generator()
    draw = _draw_wallnav if spec.kind is EnvKind.WALLNAV else _draw_pushtoy
    if tele and spec.kind is not EnvKind.WALLNAV:
        raise ValueError("TELEPORT plans are defined for WallNav only")
    c = cfg.corruption
    for _ in range(_MAX_DRAWS):
        pair = draw(spec, gen)
        if pair is None:
            continue
        s0, g = pair
        try:
            obs, _ = expert_plan(spec, s0, g, T)
        except UnreachableError:
            continue
        oracle = VideoPlan(obs)
        g = Goal(obs[-1])
        if kind is PlanSource.ORACLE:
            plan = oracle
        elif kind is PlanSource.BLUR:
            plan = corrupt_blur(oracle, k)
        elif kind is PlanSource.DRIFT:
            plan = corrupt_drift(oracle, c.drift_sigma0, c.drift_growth, ep_rng.fork(2))
        else:
            cut = teleport_cut(spec, oracle, c.teleport_back, c.teleport_ahead)
            if cut is None:
                continue
            plan = corrupt_teleport(oracle, *cut)
        return Episode(index, s0, g, oracle, plan, ep_rng.fork(3))
    raise RuntimeError(f"no valid episode after {_MAX_DRAWS} draws (T={T}, source={source})")


# --------------------------------------------------------------------------- world model

def build_world_model(cfg: HarnessConfig) -> tuple[EnvSpec, Encoder, LatentDynamics]:
    spec = env_spec(cfg.env_kind)
    wm = cfg.world_model
    root = RngStream(cfg.campaign.seed, _MODEL_STREAM)
    d = wm.latent_dim or (8 if spec.kind is EnvKind.WALLNAV else 12)
    E = Encoder.random(spec.obs_dim, d, root.fork(0))
    teacher = AnalyticConjugate(spec, E, beta=wm.beta)
    if wm.kind == "analytic":
        H = wm.history or 1
        if H == 1:
            return spec, E, teacher
        return spec, E, AnalyticConjugate(spec, E, beta=wm.beta, H=H)
    H = wm.history or 3
    data = collect_transitions(teacher, E, wm.train_samples, H, spec.bounds, root.fork(1))
    result = train_mlp_dynamics(data, TrainConfig(epochs=wm.train_epochs), root.fork(2))
    return spec, E, result.model


# --------------------------------------------------------------------------- methods

@dataclass(frozen=True)
class Method:
    """A named planner setting; GVP-WM variants carry their own solver and MPC configs."""

    name: str
    kind: str                       # "gvpwm", "cem", "gd" or "unipi"
    solver: SolverConfig | None = None
    mpc: MpcConfig | None = None


def campaign_methods(cfg: HarnessConfig, T: int) -> list[Method]:
    out = []
    for name in cfg.campaign.methods:
        if name == "GVPWM":
            out.append(Method(name, "gvpwm", cfg.solver_config(T), cfg.mpc_config()))
        elif name == "MPC_CEM":
            out.append(Method(name, "cem", mpc=cfg.mpc_config()))
        elif name == "MPC_GD":
            out.append(Method(name, "gd", mpc=cfg.mpc_config()))
        else:
            out.append(Method(name, "unipi"))
    return out


ABLATIONS = (
    ("a", "no_video_guidance"),
    ("b", "no_video_init"),
    ("c", "no_video_loss"),
    ("d", "no_collocation"),
    ("e", "projected_sgd"),
    ("f", "open_loop"),
    ("g", "no_refinement"),
    ("h", "mse_alignment"),
)


def ablation_methods(cfg: HarnessConfig, T: int) -> list[Method]:
    """Full GVP-WM followed by variants (a)-(h), each changing one setting
    (two for (a)) of the full configuration."""
    s = cfg.solver_config(T)
    m = cfg.mpc_config()
    rand = replace(m, z_init="random")
    variants = {
        "no_video_guidance": (with_weights(s, lambda_v=0.0), rand),
        "no_video_init": (s, rand),
        "no_video_loss": (with_weights(s, lambda_v=0.0), m),
        "no_collocation": (replace(s, freeze_latents=True), m),
        "projected_sgd": (replace(s, action_param=ActionParam.PROJECTED), m),
        "open_loop": (s, replace(m, K=None)),
        "no_refinement": (s, replace(m, C=0)),
        "mse_alignment": (replace(s, metric=AlignMetric.MSE), m),
    }
    out = [Method("GVPWM", "gvpwm", s, m)]
    for tag, key in ABLATIONS:
        solver, mpc = variants[key]
        out.append(Method(f"GVPWM[{tag}:{key}]", "gvpwm", solver, mpc))
    return out


def run_method(method: Method, ep: Episode, spec: EnvSpec, E: Encoder, f: LatentDynamics,
               cfg: HarnessConfig) -> EpisodeResult:
    # every method sees the same stream: comparisons are paired episode by episode
    rng = ep.rng
    if method.kind == "gvpwm":
        return mpc_run(spec, ep.s0, ep.goal, ep.plan, E, f, method.solver, method.mpc, rng)
    if method.kind == "unipi":
        return unipi_execute(spec, ep.s0, ep.goal, ep.plan)
    return shooting_mpc_run(spec, ep.s0, ep.goal, ep.plan.horizon, E, f, method.kind, method.mpc, rng,
                            cfg.cem_config(), cfg.gd_config())


# --------------------------------------------------------------------------- reports

@dataclass(frozen=True)
class EpisodeRow:
    env: str
    horizon: int
    source: str
    method: str
    episode: int
    success: bool
    final_dist: float
    seconds: float
    aborted: bool
    final_residual: float
    replans: tuple = ()

    @property
    def cell(self) -> tuple:
        return (self.env, self.horizon, self.source, self.method)


@dataclass(frozen=True)
class CellSummary:
    env: str
    horizon: int
    source: str
    method: str
    episodes: int
    successes: int
    mean_dist: float
    mean_seconds: float

    @property
    def success_rate(self) -> float:
        # a single division: no accumulation error across episodes
        return self.successes / self.episodes


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    cell_order: list = field(default_factory=list)

    def cells(self) -> list[CellSummary]:
        groups: dict = {}
        for r in self.rows:
            groups.setdefault(r.cell, []).append(r)
        order = list(self.cell_order) + [c for c in groups if c not in self.cell_order]
        out = []
        for key in order:
            rs = sorted(groups.get(key, []), key=lambda r: r.episode)
            if not rs:
                continue
            n = len(rs)
            out.append(CellSummary(*key, n, sum(r.success for r in rs),
                                   math.fsum(r.final_dist for r in rs) / n,
                                   math.fsum(r.seconds for r in rs) / n))
        return out

    def cell(self, source: str, method: str, horizon: int | None = None) -> CellSummary:
        for c in self.cells():
            if c.source == source and c.method == method and (horizon is None or c.horizon == horizon):
                return c
        raise KeyError((source, method, horizon))

    def episodes(self, source: str, method: str) -> list[EpisodeRow]:
        return sorted((r for r in self.rows if r.source == source and r.method == method),
                      key=lambda r: (r.horizon, r.episode))


# --------------------------------------------------------------------------- execution

_CTX: dict = {}


def _init_worker(cfg: HarnessConfig, model) -> None:
    _CTX["cfg"] = cfg
    _CTX["model"] = model


def _run_task(task) -> EpisodeRow:
    T, source, index, method = task
    cfg = _CTX["cfg"]
    spec, E, f = _CTX["model"]
    ep = sample_episode(spec, T, source, index, RngStream(cfg.campaign.seed, _EPISODE_STREAM), cfg)
    res = run_method(method, ep, spec, E, f, cfg)
    keys = ("t", "rho_final", "max_residual", "cost", "action_norm")
    replans = tuple({k: r[k] for k in keys} for r in res.replans)
    return EpisodeRow(spec.kind.value, T, source, method.name, index, bool(res.success),
                      float(res.final_dist), float(res.seconds), bool(res.aborted),
                      float(res.final_residual), replans)


def _execute(cfg: HarnessConfig, cells: list, jobs: int, model=None) -> EvalReport:
    """Run every (horizon, source, method) cell over the configured episodes."""
    if jobs < 1:
        raise ValueError("jobs must be >= 1")
    model = model or build_world_model(cfg)
    tasks = [(T, src, i, m) for (T, src, m) in cells for i in range(cfg.campaign.episodes)]
    if jobs == 1:
        _init_worker(cfg, model)
        rows = [_run_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(cfg, model)) as pool:
            rows = list(pool.map(_run_task, tasks, chunksize=1))
    env = model[0].kind.value
    order = [(env, T, src, m.name) for (T, src, m) in cells]
    rank = {key: n for n, key in enumerate(order)}
    rows.sort(key=lambda r: (rank[r.cell], r.episode))
    return EvalReport(rows, order)


def run_campaign(cfg: HarnessConfig, jobs: int = 1, model=None) -> EvalReport:
    cells = [(T, src, m) for T in cfg.campaign.horizons for src in cfg.campaign.sources
             for m in campaign_methods(cfg, T)]
    return _execute(cfg, cells, jobs, model)


def ablation_suite(cfg: HarnessConfig, jobs: int = 1, model=None) -> EvalReport:
    cells = [(T, src, m) for T in cfg.campaign.horizons for src in cfg.campaign.sources
             for m in ablation_methods(cfg, T)]
    return _execute(cfg, cells, jobs, model)


def run_methods(cfg: HarnessConfig, methods: list[Method], jobs: int = 1, model=None) -> EvalReport:
    """Run explicit methods over every configured horizon and source.

    Methods are built for the first horizon; pass one horizon per call when
    presets make solver settings horizon dependent.
    """
    cells = [(T, src, m) for T in cfg.campaign.horizons for src in cfg.campaign.sources for m in methods]
    return _execute(cfg, cells, jobs, model)


def episode_for(cfg: HarnessConfig, spec: EnvSpec, T: int, source: str, index: int) -> Episode:
    return sample_episode(spec, T, source, index, RngStream(cfg.campaign.seed, _EPISODE_STREAM), cfg)
