"""Shared value types, vector helpers and deterministic random streams."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DegenerateLatentError(ValueError):
    """Raised when a latent with zero norm is projected onto the unit sphere."""


def as_vector(x, dim: int | None = None, name: str = "vector") -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise ValueError(f"{name} has length {v.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} has non-finite entries")
    return v


def l2_normalize(z) -> np.ndarray:
    """Project ``z`` onto the unit L2 sphere."""
    z = np.asarray(z, dtype=np.float64)
    norm = np.linalg.norm(z)
    if norm == 0.0:
        raise DegenerateLatentError("degenerate latent: zero norm")
    return z / norm


def mse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.mean(d * d))


@dataclass(frozen=True)
class ActionBounds:
    a_min: np.ndarray
    a_max: np.ndarray

    def __post_init__(self):
        lo = as_vector(self.a_min, name="a_min")
        hi = as_vector(self.a_max, dim=lo.shape[0], name="a_max")
        if not np.all(lo < hi):
            raise ValueError("action bounds require a_min < a_max componentwise")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "a_min", lo)
        object.__setattr__(self, "a_max", hi)

    @classmethod
    def symmetric(cls, half_width) -> ActionBounds:
        hw = np.asarray(half_width, dtype=np.float64)
        return cls(-hw, hw)

    @property
    def dim(self) -> int:
        return self.a_min.shape[0]

    def clip(self, a) -> np.ndarray:
        return np.clip(a, self.a_min, self.a_max)

    def __eq__(self, other):
        if not isinstance(other, ActionBounds):
            return NotImplemented
        return bool(np.array_equal(self.a_min, other.a_min) and np.array_equal(self.a_max, other.a_max))

    def __hash__(self):
        return hash((self.a_min.tobytes(), self.a_max.tobytes()))


@dataclass(frozen=True)
class WeightConfig:
    """Weights of the video, goal and action-regularisation terms."""

    lambda_v: float = 1.0
    lambda_g: float = 10.0
    lambda_r: float = 0.05

    def __post_init__(self):
        for name in ("lambda_v", "lambda_g", "lambda_r"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be nonnegative")


_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream identified by ``(seed, stream_id)``.

    Draws come from a Philox counter-based generator keyed by both integers,
    so the same pair yields the same sequence in any process.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "seed", int(self.seed) & _MASK64)
        object.__setattr__(self, "stream_id", int(self.stream_id) & _MASK64)

    def fork(self, label: int) -> RngStream:
        mixed = np.random.SeedSequence([self.stream_id, int(label) & _MASK64, 0x9E3779B97F4A7C15])
        child = int(mixed.generate_state(1, np.uint64)[0])
        return RngStream(self.seed, child)

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence([self.seed, self.stream_id])
        return np.random.Generator(np.random.Philox(ss))


def rng_fork(parent: RngStream, label: int) -> RngStream:
    return parent.fork(label)
