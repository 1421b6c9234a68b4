"""Synthetic video plans and the corruption operators applied to them.

A plan is a sequence of ``T + 1`` observations whose first and last frames are
the true start and goal observations. Corruptions act on the interior frames
only, in observation space; encoding happens afterwards.
"""

from __future__ import annotations

import csv
import enum
import io
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import DegenerateLatentError, RngStream
from .envs import EnvSpec, EnvState, Goal, env_observe, expert_plan
from .worldmodel import Encoder


class PlanSource(str, enum.Enum):
    ORACLE = "ORACLE"
    BLUR = "BLUR"
    TELEPORT = "TELEPORT"
    DRIFT = "DRIFT"


_TAG = re.compile(r"^(ORACLE|TELEPORT|DRIFT|BLUR_([1-9][0-9]*))$")


def parse_source(tag: str) -> tuple[PlanSource, int | None]:
    """``"BLUR_5"`` -> ``(BLUR, 5)``; other tags carry no parameter."""
    m = _TAG.match(str(tag))
    if m is None:
        raise ValueError(f"unknown plan source tag {tag!r}")
    if m.group(2) is not None:
        return PlanSource.BLUR, int(m.group(2))
    return PlanSource(m.group(1)), None


@dataclass(frozen=True)
class VideoPlan:
    frames: np.ndarray  # (T+1, n)
    source: str = "ORACLE"

    def __post_init__(self):
        fr = np.array(self.frames, dtype=np.float64)
        if fr.ndim != 2 or fr.shape[0] < 2:
            raise ValueError("a plan needs at least two frames of equal dimension")
        if not np.all(np.isfinite(fr)):
            raise ValueError("plan frames must be finite")
        parse_source(self.source)
        fr.flags.writeable = False
        object.__setattr__(self, "frames", fr)

    @property
    def horizon(self) -> int:
        return self.frames.shape[0] - 1

    def __len__(self):
        return self.frames.shape[0]

    def with_frames(self, frames, source: str) -> VideoPlan:
        return VideoPlan(frames, source)


@dataclass(frozen=True)
class LatentPlan:
    latents: np.ndarray  # (T+1, d)

    def __len__(self):
        return self.latents.shape[0]


def make_oracle_plan(spec: EnvSpec, s0: EnvState, g: Goal, T: int) -> VideoPlan:
    """Expert observations from ``s0`` towards ``g``."""
    obs, _ = expert_plan(spec, s0, g, T)
    return VideoPlan(obs, PlanSource.ORACLE.value)


def corrupt_blur(plan: VideoPlan, k: int) -> VideoPlan:
    """Replace interior frame ``i`` by the mean over ``[i - k//2, i + ceil(k/2) - 1]``
    clamped to the plan; the endpoints are kept."""
    k = int(k)
    if k < 1:
        raise ValueError("blur window must be >= 1")
    src = plan.frames
    T = plan.horizon
    out = np.array(src)
    lo_off, hi_off = k // 2, (k + 1) // 2 - 1
    for i in range(1, T):
        lo = max(i - lo_off, 0)
        hi = min(i + hi_off, T)
        out[i] = src[lo:hi + 1].mean(axis=0)
    return VideoPlan(out, f"BLUR_{k}")


def corrupt_teleport(plan: VideoPlan, cut_start: int, cut_len: int) -> VideoPlan:
    """Frames ``[cut_start, cut_start + cut_len)`` jump ahead to frame ``cut_start + cut_len``."""
    T = plan.horizon
    if cut_len < 0 or cut_start < 1 or cut_start + cut_len > T - 1:
        raise ValueError(f"teleport cut [{cut_start}, {cut_start + cut_len}) out of range for T={T}")
    out = np.array(plan.frames)
    out[cut_start:cut_start + cut_len] = out[cut_start + cut_len]
    return VideoPlan(out, PlanSource.TELEPORT.value)


def corrupt_drift(plan: VideoPlan, sigma0: float, growth: float, rng: RngStream,
                  low: float = 0.0, high: float = 1.0) -> VideoPlan:
    """Additive noise with std ``sigma0 * growth**i`` on interior frame ``i``, clipped to the arena."""
    if sigma0 < 0 or growth < 1:
        raise ValueError("need sigma0 >= 0 and growth >= 1")
    out = np.array(plan.frames)
    T = plan.horizon
    if sigma0 > 0 and T > 1:
        gen = rng.generator()
        noise = gen.standard_normal((T - 1, out.shape[1]))
        std = sigma0 * growth ** np.arange(1, T)
        out[1:T] = np.clip(out[1:T] + noise * std[:, None], low, high)
    return VideoPlan(out, PlanSource.DRIFT.value)


def align_temporal(plan: VideoPlan, frame_skip: int, target_T: int) -> VideoPlan:
    """Resample a plan to ``target_T + 1`` frames.

    Plans of exactly ``target_T * frame_skip + 1`` frames are subsampled; any
    other length is linearly interpolated in observation space.
    """
    if target_T < 1:
        raise ValueError("target horizon must be >= 1")
    if frame_skip < 1:
        raise ValueError("frame_skip must be >= 1")
    src = plan.frames
    n = src.shape[0]
    if n - 1 == target_T * frame_skip:
        out = np.array(src[::frame_skip])
    else:
        pos = np.linspace(0.0, n - 1, target_T + 1)
        lo = np.floor(pos).astype(int)
        lo = np.minimum(lo, n - 2)
        w = (pos - lo)[:, None]
        out = (1.0 - w) * src[lo] + w * src[lo + 1]
    out[0] = src[0]
    out[-1] = src[-1]
    return VideoPlan(out, plan.source)


def encode_plan(E: Encoder, plan: VideoPlan) -> LatentPlan:
    if plan.frames.shape[1] != E.obs_dim:
        raise ValueError(f"plan frames have dim {plan.frames.shape[1]}, encoder expects {E.obs_dim}")
    Z = E.encode(plan.frames)
    if np.any(np.linalg.norm(Z, axis=1) == 0.0):
        raise DegenerateLatentError("degenerate latent: a plan frame encodes to zero")
    return LatentPlan(Z)


def check_endpoints(plan: VideoPlan, start_obs, goal_obs, atol: float = 0.0) -> None:
    """Raise unless the plan begins at ``start_obs`` and ends at ``goal_obs``."""
    if not np.allclose(plan.frames[0], start_obs, rtol=0.0, atol=atol):
        raise ValueError("plan frame 0 differs from the initial observation")
    if not np.allclose(plan.frames[-1], goal_obs, rtol=0.0, atol=atol):
        raise ValueError("plan final frame differs from the goal observation")


# --------------------------------------------------------------------------- plan files

def plan_to_csv(plan: VideoPlan) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    n = plan.frames.shape[1]
    w.writerow(["frame_idx", "source"] + [f"v{j}" for j in range(n)])
    for i, row in enumerate(plan.frames):
        w.writerow([i, plan.source] + [repr(float(x)) for x in row])
    return buf.getvalue()


def save_plan(plan: VideoPlan, path) -> None:
    Path(path).write_text(plan_to_csv(plan))


def load_plan(path, start_obs=None, goal_obs=None) -> VideoPlan:
    """Read a plan file; if observations are given the endpoints are validated."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty plan file")
    header = rows[0]
    if header[:2] != ["frame_idx", "source"] or header[2:] != [f"v{j}" for j in range(len(header) - 2)]:
        raise ValueError(f"{path}: bad header {header}")
    body = rows[1:]
    if [int(r[0]) for r in body] != list(range(len(body))):
        raise ValueError(f"{path}: frame indices must run 0..T")
    sources = {r[1] for r in body}
    if len(sources) != 1:
        raise ValueError(f"{path}: mixed source tags")
    plan = VideoPlan(np.array([[float(x) for x in r[2:]] for r in body]), sources.pop())
    if start_obs is not None and goal_obs is not None:
        check_endpoints(plan, start_obs, goal_obs)
    return plan


def observe_start_goal(s0: EnvState, g: Goal) -> tuple[np.ndarray, np.ndarray]:
    return env_observe(s0), np.asarray(g.target)
