"""Ground-truth toy environments: WallNav (point agent, wall with a gap) and
PushToy (disc agent pushing a disc block). Dynamics are exact and deterministic.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ActionBounds, RngStream, as_vector

CONTACT_TOL = 1e-9
_EXPERT_MARGIN = 0.02


class EnvKind(str, enum.Enum):
    WALLNAV = "wallnav"
    PUSHTOY = "pushtoy"


class UnreachableError(ValueError):
    """The expert cannot reach the goal within the requested horizon."""


@dataclass(frozen=True)
class EnvSpec:
    kind: EnvKind = EnvKind.WALLNAV
    wall_x: float = 0.5
    wall_half_thickness: float = 0.01
    gap_center: float = 0.6
    gap_half_width: float = 0.1
    agent_radius: float = 0.05
    block_radius: float = 0.1
    bounds: ActionBounds = field(default_factory=lambda: ActionBounds.symmetric([0.1, 0.1]))
    eps: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "kind", EnvKind(self.kind))
        if self.bounds.dim != 2:
            raise ValueError("toy environments use 2-D actions")
        if self.eps <= 0:
            raise ValueError("success threshold must be positive")
        if self.kind is EnvKind.WALLNAV:
            if self.wall_half_thickness < 0:
                raise ValueError("wall thickness must be nonnegative")
            # equality allowed: the default gap (0.1) equals the default step bound
            if self.gap_half_width < float(np.max(self.bounds.a_max)):
                raise ValueError("gap half-width must be at least a_max")
        elif self.agent_radius <= 0 or self.block_radius <= 0:
            raise ValueError("disc radii must be positive")

    @classmethod
    def wallnav(cls, **kw) -> EnvSpec:
        kw.setdefault("eps", 0.05)
        return cls(kind=EnvKind.WALLNAV, **kw)

    @classmethod
    def pushtoy(cls, **kw) -> EnvSpec:
        kw.setdefault("eps", 0.06)
        return cls(kind=EnvKind.PUSHTOY, **kw)

    @property
    def obs_dim(self) -> int:
        return 2 if self.kind is EnvKind.WALLNAV else 4

    @property
    def action_dim(self) -> int:
        return 2

    @property
    def contact_radius(self) -> float:
        return self.agent_radius + self.block_radius

    @property
    def gap_lo(self) -> float:
        return self.gap_center - self.gap_half_width

    @property
    def gap_hi(self) -> float:
        return self.gap_center + self.gap_half_width


@dataclass(frozen=True)
class EnvState:
    agent: np.ndarray
    block: np.ndarray | None = None

    def __post_init__(self):
        agent = as_vector(self.agent, 2, "agent position").copy()
        agent.flags.writeable = False
        object.__setattr__(self, "agent", agent)
        if self.block is not None:
            block = as_vector(self.block, 2, "block position").copy()
            block.flags.writeable = False
            object.__setattr__(self, "block", block)

    def __eq__(self, other):
        if not isinstance(other, EnvState):
            return NotImplemented
        if (self.block is None) != (other.block is None):
            return False
        same_block = self.block is None or np.array_equal(self.block, other.block)
        return bool(np.array_equal(self.agent, other.agent) and same_block)

    __hash__ = None


@dataclass(frozen=True)
class Goal:
    target: np.ndarray

    def __post_init__(self):
        t = as_vector(self.target, name="goal observation").copy()
        t.flags.writeable = False
        object.__setattr__(self, "target", t)


def state_from_obs(spec: EnvSpec, obs) -> EnvState:
    o = as_vector(obs, spec.obs_dim, "observation")
    if spec.kind is EnvKind.WALLNAV:
        return EnvState(o)
    return EnvState(o[:2], o[2:])


# --------------------------------------------------------------------------- geometry

def _solid_boxes(spec: EnvSpec, margin: float = 0.0):
    x0 = spec.wall_x - spec.wall_half_thickness - margin
    x1 = spec.wall_x + spec.wall_half_thickness + margin
    return [
        (x0, x1, -np.inf, spec.gap_lo + margin),
        (x0, x1, spec.gap_hi - margin, np.inf),
    ]


def in_wall(spec: EnvSpec, p, tol: float = 0.0) -> bool:
    """True if ``p`` lies strictly inside the wall by more than ``tol``."""
    x, y = float(p[0]), float(p[1])
    for x0, x1, y0, y1 in _solid_boxes(spec):
        if x0 + tol < x < x1 - tol and y0 + tol < y < y1 - tol:
            return True
    return False


def _segment_entry(p, d, box) -> float | None:
    """Parameter in [0, 1] where p + s*d first enters the open box, else None."""
    t_lo, t_hi = -np.inf, np.inf
    for k, (lo, hi) in enumerate(((box[0], box[1]), (box[2], box[3]))):
        if d[k] == 0.0:
            if not (lo < p[k] < hi):
                return None
            continue
        t0 = (lo - p[k]) / d[k]
        t1 = (hi - p[k]) / d[k]
        if t0 > t1:
            t0, t1 = t1, t0
        t_lo = max(t_lo, t0)
        t_hi = min(t_hi, t1)
    if t_lo < t_hi and t_hi > 0.0 and t_lo < 1.0:
        return max(t_lo, 0.0)
    return None


def segment_blocked(spec: EnvSpec, p, q, margin: float = 0.0) -> float | None:
    """First parameter along p -> q inside the (optionally inflated) wall."""
    p = np.asarray(p, dtype=np.float64)
    d = np.asarray(q, dtype=np.float64) - p
    with np.errstate(over="ignore"):   # near-zero direction components give +-inf slabs
        hits = [s for box in _solid_boxes(spec, margin) if (s := _segment_entry(p, d, box)) is not None]
    return min(hits) if hits else None


def _clip_arena(p) -> np.ndarray:
    return np.clip(p, 0.0, 1.0)


# --------------------------------------------------------------------------- dynamics

def env_reset(spec: EnvSpec, rng: RngStream) -> EnvState:
    gen = rng.generator()
    if spec.kind is EnvKind.WALLNAV:
        while True:
            p = gen.uniform(0.0, 1.0, size=2)
            if not in_wall(spec, p):
                return EnvState(p)
    while True:
        agent = gen.uniform(0.0, 1.0, size=2)
        block = gen.uniform(0.0, 1.0, size=2)
        if np.linalg.norm(agent - block) >= spec.contact_radius:
            return EnvState(agent, block)


def _wall_step(spec: EnvSpec, p: np.ndarray, a: np.ndarray) -> np.ndarray:
    target = _clip_arena(p + a)
    s = segment_blocked(spec, p, target)
    if s is None:
        return target
    return p + s * (target - p)


def _push_step(spec: EnvSpec, agent: np.ndarray, block: np.ndarray, a: np.ndarray):
    radius = spec.contact_radius
    moved = _clip_arena(agent + a)
    diff = block - moved
    dist = float(np.linalg.norm(diff))
    if dist >= radius:
        return moved, block
    if dist > 0.0:
        normal = diff / dist
    else:
        step = moved - agent
        n = float(np.linalg.norm(step))
        normal = step / n if n > 0 else np.array([1.0, 0.0])
    pushed = _clip_arena(block + (radius - dist) * normal)
    if np.linalg.norm(pushed - moved) >= radius - CONTACT_TOL:
        return moved, pushed
    # block pinned against the arena edge: stop the agent at first contact with it
    d = moved - agent
    f = agent - pushed
    qa = float(d @ d)
    qb = 2.0 * float(f @ d)
    qc = float(f @ f) - radius * radius
    disc = qb * qb - 4.0 * qa * qc
    if qa > 0.0 and qc >= 0.0 and disc >= 0.0:
        s = (-qb - np.sqrt(disc)) / (2.0 * qa)
        s = min(max(s, 0.0), 1.0)
        stop = agent + s * d
        if np.linalg.norm(pushed - stop) >= radius - CONTACT_TOL:
            return stop, pushed
    return agent.copy(), block


def env_step(spec: EnvSpec, s: EnvState, a) -> EnvState:
    a = np.nan_to_num(np.asarray(a, dtype=np.float64), nan=0.0)
    a = spec.bounds.clip(a)
    if spec.kind is EnvKind.WALLNAV:
        return EnvState(_wall_step(spec, s.agent, a))
    agent, block = _push_step(spec, np.asarray(s.agent), np.asarray(s.block), a)
    return EnvState(agent, block)


def env_observe(s: EnvState) -> np.ndarray:
    if s.block is None:
        return np.array(s.agent, dtype=np.float64)
    return np.concatenate([s.agent, s.block])


def env_success(spec: EnvSpec, s: EnvState, g: Goal) -> tuple[bool, float]:
    if spec.kind is EnvKind.WALLNAV:
        dist = float(np.linalg.norm(s.agent - g.target[:2]))
    else:
        dist = float(np.linalg.norm(s.block - g.target[2:4]))
    return dist < spec.eps, dist


# --------------------------------------------------------------------------- expert

def _step_toward(pos: np.ndarray, target: np.ndarray, bounds: ActionBounds) -> np.ndarray:
    delta = target - pos
    hi = np.where(delta >= 0, bounds.a_max, -bounds.a_min)
    scale = float(np.max(np.abs(delta) / hi))
    if scale <= 1.0:
        return delta
    # rescaling can overshoot the bound by an ulp
    return bounds.clip(delta / scale)


def _wall_waypoints(spec: EnvSpec, start: np.ndarray, goal: np.ndarray) -> list[np.ndarray]:
    if segment_blocked(spec, start, goal, margin=1e-3) is None:
        return [goal]
    offset = spec.wall_half_thickness + _EXPERT_MARGIN

    def portal(p):
        if abs(p[0] - spec.wall_x) < offset:
            return np.array([p[0], spec.gap_center])
        side = 1.0 if p[0] > spec.wall_x else -1.0
        return np.array([spec.wall_x + side * offset, spec.gap_center])

    return [portal(start), portal(goal), goal]


def _segment_point_distance(p, q, c) -> float:
    d = q - p
    dd = float(d @ d)
    s = 0.0 if dd == 0.0 else min(max(float((c - p) @ d) / dd, 0.0), 1.0)
    return float(np.linalg.norm(p + s * d - c))


def _inside_arena(p) -> bool:
    return bool(np.all((p >= 0.0) & (p <= 1.0)))


def _push_waypoints(spec: EnvSpec, agent: np.ndarray, block: np.ndarray, goal_block: np.ndarray):
    """Agent waypoints: get behind the block, then push it along the block->goal axis."""
    axis = goal_block - block
    dist = float(np.linalg.norm(axis))
    if dist == 0.0:
        return [], None
    u = axis / dist
    clearance = spec.contact_radius + 0.01
    behind = block - u * clearance
    if not _inside_arena(behind):
        raise UnreachableError("cannot get behind the block inside the arena")
    push_end = goal_block - u * spec.contact_radius
    if _segment_point_distance(agent, behind, block) >= clearance - 1e-9:
        return [behind], push_end

    rel = agent - block
    along = float(rel @ u)
    normal = np.array([-u[1], u[0]])
    sides = [normal, -normal] if float(rel @ normal) >= 0 else [-normal, normal]
    wide = clearance + 0.02
    for n in sides:
        route = [block + n * wide + u * max(along, 0.0), block + n * wide - u * clearance]
        pts = [agent] + route + [behind]
        clear = all(
            _segment_point_distance(a, b, block) >= spec.contact_radius + 1e-6
            for a, b in zip(pts[:-1], pts[1:])
        )
        if clear and all(_inside_arena(w) for w in route):
            return route + [behind], push_end
    raise UnreachableError("no collision-free approach to the block")


def expert_plan(spec: EnvSpec, s0: EnvState, g: Goal, T: int):
    """Scripted expert: returns (observations[T+1], actions[T]) that reach ``g``.

    The observations are produced by replaying the actions through
    :func:`env_step`, so a replay reproduces them bitwise.
    """
    if T < 1:
        raise ValueError("horizon must be >= 1")
    bounds = spec.bounds
    step_len = float(np.linalg.norm(np.maximum(bounds.a_max, -bounds.a_min)))
    if spec.kind is EnvKind.WALLNAV:
        goal = np.asarray(g.target[:2], dtype=np.float64)
        legs = _wall_waypoints(spec, np.asarray(s0.agent), goal)
        pts = [np.asarray(s0.agent)] + legs
    else:
        goal = np.asarray(g.target[2:4], dtype=np.float64)
        approach, push_end = _push_waypoints(spec, np.asarray(s0.agent), np.asarray(s0.block), goal)
        legs = list(approach)
        if push_end is not None:
            legs.append(push_end)
        pts = [np.asarray(s0.agent)] + legs
    length = sum(float(np.linalg.norm(b - a)) for a, b in zip(pts[:-1], pts[1:]))
    if length > T * step_len + 1e-12:
        raise UnreachableError("unreachable within horizon")

    state = s0
    observations = [env_observe(state)]
    actions = []
    for waypoint in legs:
        while not np.allclose(state.agent, waypoint, rtol=0.0, atol=1e-12):
            if len(actions) == T:
                raise UnreachableError("unreachable within horizon")
            a = _step_toward(np.asarray(state.agent), waypoint, bounds)
            state = env_step(spec, state, a)
            actions.append(np.array(a))
            observations.append(env_observe(state))
    zero = np.zeros(spec.action_dim)
    while len(actions) < T:
        state = env_step(spec, state, zero)
        actions.append(zero.copy())
        observations.append(env_observe(state))
    ok, _ = env_success(spec, state, g)
    if not ok:
        raise UnreachableError("expert did not reach the goal")
    return np.array(observations), np.array(actions)


# --------------------------------------------------------------------------- rendering

def render_grid(spec: EnvSpec, s: EnvState, g: Goal, size: int = 32) -> np.ndarray:
    """Intensity raster, row 0 = y 0. 0 empty, 80 wall, 140 goal, 200 block, 255 agent."""
    img = np.zeros((size, size), dtype=np.uint8)
    centers = (np.arange(size) + 0.5) / size

    def cell(p):
        idx = np.clip((np.asarray(p) * size).astype(int), 0, size - 1)
        return idx[1], idx[0]

    if spec.kind is EnvKind.WALLNAV:
        for i, y in enumerate(centers):
            for j, x in enumerate(centers):
                if abs(x - spec.wall_x) <= max(spec.wall_half_thickness, 0.5 / size) and not (
                    spec.gap_lo < y < spec.gap_hi
                ):
                    img[i, j] = 80
        img[cell(g.target[:2])] = 140
    else:
        img[cell(g.target[2:4])] = 140
        img[cell(s.block)] = 200
    img[cell(s.agent)] = 255
    return img


_GLYPHS = {0: ".", 80: "#", 140: "G", 200: "B", 255: "A"}


def render_frame(spec: EnvSpec, s: EnvState, g: Goal, size: int = 32, fmt: str = "pgm"):
    """Render as PGM bytes (``fmt="pgm"``) or a text grid (``fmt="text"``)."""
    img = render_grid(spec, s, g, size)
    if fmt == "text":
        return "\n".join("".join(_GLYPHS[int(v)] for v in row) for row in img[::-1]) + "\n"
    if fmt != "pgm":
        raise ValueError(f"unknown render format {fmt!r}")
    header = f"P5 {size} {size} 255\n".encode("ascii")
    return header + img[::-1].tobytes()


def dump_frames(spec: EnvSpec, states, g: Goal, root, episode: int) -> list[Path]:
    out = Path(root) / "frames" / str(episode)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for t, s in enumerate(states):
        p = out / f"{t}.pgm"
        p.write_bytes(render_frame(spec, s, g))
        paths.append(p)
    return paths
