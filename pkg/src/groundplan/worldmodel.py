"""Latent world model: a frozen linear encoder plus action-conditioned latent
dynamics, either the smoothed environment conjugated by the encoder or a small
MLP trained on transitions. All Jacobians are analytic.
"""

from __future__ import annotations

import io
import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import _kernels
from .core import RngStream
from .envs import EnvKind, EnvSpec

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class Encoder:
    """Linear isometric embedding ``z = E o`` with orthonormal columns."""

    def __init__(self, matrix):
        E = np.array(matrix, dtype=np.float64)
        if E.ndim != 2 or E.shape[0] < E.shape[1]:
            raise ValueError("encoder matrix must be d x n with d >= n")
        if not np.allclose(E.T @ E, np.eye(E.shape[1]), atol=1e-10, rtol=0.0):
            raise ValueError("encoder columns must be orthonormal")
        E.flags.writeable = False
        self.E = E

    @classmethod
    def identity(cls, n: int) -> Encoder:
        return cls(np.eye(n))

    @classmethod
    def random(cls, n: int, d: int, rng: RngStream) -> Encoder:
        g = rng.generator().standard_normal((d, n))
        q, r = np.linalg.qr(g)
        q = q * np.sign(np.diag(r))
        return cls(q)

    @property
    def latent_dim(self) -> int:
        return self.E.shape[0]

    @property
    def obs_dim(self) -> int:
        return self.E.shape[1]

    def encode(self, o) -> np.ndarray:
        o = np.asarray(o, dtype=np.float64)
        if o.shape[-1] != self.obs_dim:
            raise ValueError(f"observation has dim {o.shape[-1]}, encoder expects {self.obs_dim}")
        return o @ self.E.T

    def decode(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.shape[-1] != self.latent_dim:
            raise ValueError(f"latent has dim {z.shape[-1]}, encoder expects {self.latent_dim}")
        return z @ self.E


def encode(E: Encoder, o) -> np.ndarray:
    return E.encode(o)


def decode(E: Encoder, z) -> np.ndarray:
    return E.decode(z)


# --------------------------------------------------------------------------- forward-mode pairs

class _Fwd:
    """Value with its derivative w.r.t. a fixed set of k inputs, batched over B."""

    __slots__ = ("v", "g")

    def __init__(self, v, g):
        self.v = v
        self.g = g

    def __add__(self, o):
        if isinstance(o, _Fwd):
            return _Fwd(self.v + o.v, self.g + o.g)
        return _Fwd(self.v + o, self.g)

    __radd__ = __add__

    def __sub__(self, o):
        if isinstance(o, _Fwd):
            return _Fwd(self.v - o.v, self.g - o.g)
        return _Fwd(self.v - o, self.g)

    def __rsub__(self, o):
        return _Fwd(o - self.v, -self.g)

    def __neg__(self):
        return _Fwd(-self.v, -self.g)

    def __mul__(self, o):
        if isinstance(o, _Fwd):
            return _Fwd(self.v * o.v, self.g * o.v[:, None] + o.g * self.v[:, None])
        return _Fwd(self.v * o, self.g * o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        if isinstance(o, _Fwd):
            q = self.v / o.v
            return _Fwd(q, (self.g - o.g * q[:, None]) / o.v[:, None])
        return _Fwd(self.v / o, self.g / o)


def _softplus(x: _Fwd, beta: float) -> _Fwd:
    # log(1 + exp(beta x)) / beta; smooth max(x, 0)
    return _Fwd(np.logaddexp(0.0, beta * x.v) / beta, x.g * expit(beta * x.v)[:, None])


def _sigmoid(x: _Fwd, beta: float) -> _Fwd:
    s = expit(beta * x.v)
    return _Fwd(s, x.g * (beta * s * (1.0 - s))[:, None])


def _sqrt(x: _Fwd) -> _Fwd:
    r = np.sqrt(x.v)
    return _Fwd(r, x.g / (2.0 * r)[:, None])


def _soft_unit_clip(x: _Fwd, beta: float) -> _Fwd:
    return x - _softplus(x - 1.0, beta) + _softplus(-x, beta)


def _inputs(cols: np.ndarray) -> list[_Fwd]:
    B, k = cols.shape
    eye = np.eye(k)
    return [_Fwd(cols[:, i].copy(), np.broadcast_to(eye[i], (B, k)).copy()) for i in range(k)]


def _wall_block_fraction(h, u, y0, ay, lo, hi, beta, beta_wall):
    """Smoothed fraction of the step removed by the wall for one approach side."""
    hp = _softplus(h, beta_wall)
    over = _softplus(u - h, beta_wall)
    frac = over / (over + hp + 1e-300)
    yc = y0 + (1.0 - frac) * ay
    in_gap = _sigmoid(yc - lo, beta) * _sigmoid(hi - yc, beta)
    toward = _sigmoid(u, beta_wall)
    return toward * (1.0 - in_gap) * frac


def wall_temperature(spec: EnvSpec, beta: float) -> float:
    """Temperature of the wall-face terms: at least twelve per half-thickness.

    With a thin wall and a soft barrier, an agent pressed against a face
    leaks a little each step and can tunnel through the model. At this
    sharpness the face gates are saturated at both faces and the leak
    would need far more steps than any episode to cross.
    """
    if spec.wall_half_thickness <= 0:
        return float(beta)
    return max(float(beta), 12.0 / spec.wall_half_thickness)


def smooth_env_step(spec: EnvSpec, obs: np.ndarray, act: np.ndarray, beta: float, reference: bool = False):
    """Smoothed environment step in observation space.

    Returns ``(next_obs, J)`` with ``J`` of shape (B, n, n + m), the derivative
    of each output w.r.t. the concatenated ``[obs, act]`` inputs. The default
    route is a compiled kernel; ``reference=True`` evaluates the same formulas
    with the vectorised ``_Fwd`` pairs.
    """
    obs = np.ascontiguousarray(np.atleast_2d(obs), dtype=np.float64)
    act = np.ascontiguousarray(np.atleast_2d(act), dtype=np.float64)
    if not reference:
        if spec.kind is EnvKind.WALLNAV:
            return _kernels.wall_step(obs, act, spec.wall_x, spec.wall_half_thickness,
                                      spec.gap_lo, spec.gap_hi, float(beta), wall_temperature(spec, beta))
        return _kernels.push_step(obs, act, spec.contact_radius, float(beta))
    x = _inputs(np.concatenate([obs, act], axis=1))
    if spec.kind is EnvKind.WALLNAV:
        px, py, ax, ay = x
        # clip the target to the arena first, then truncate at the wall
        ax = _soft_unit_clip(px + ax, beta) - px
        ay = _soft_unit_clip(py + ay, beta) - py
        face_l = spec.wall_x - spec.wall_half_thickness
        face_r = spec.wall_x + spec.wall_half_thickness
        bw = wall_temperature(spec, beta)
        w_l = _wall_block_fraction(face_l - px, ax, py, ay, spec.gap_lo, spec.gap_hi, beta, bw)
        w_r = _wall_block_fraction(px - face_r, -ax, py, ay, spec.gap_lo, spec.gap_hi, beta, bw)
        # each face acts until the agent is most of the way to the far face,
        # so a state that has leaked into the solid is held from both sides
        half = 0.5 * spec.wall_half_thickness
        g_l = _sigmoid(face_r - half - px, bw)
        g_r = _sigmoid(px - face_l - half, bw)
        keep = (1.0 - g_l * w_l) * (1.0 - g_r * w_r)
        outs = [px + keep * ax, py + keep * ay]
    else:
        gx, gy, bx, by, ax, ay = x
        mx = _soft_unit_clip(gx + ax, beta)
        my = _soft_unit_clip(gy + ay, beta)
        dx = bx - mx
        dy = by - my
        dist = _sqrt(dx * dx + dy * dy + 1e-24)
        overlap = _softplus(spec.contact_radius - dist, beta)
        push = overlap / dist
        outs = [
            mx,
            my,
            _soft_unit_clip(bx + dx * push, beta),
            _soft_unit_clip(by + dy * push, beta),
        ]
    value = np.stack([o.v for o in outs], axis=1)
    jac = np.stack([o.g for o in outs], axis=1)
    return value, jac


# --------------------------------------------------------------------------- latent dynamics

class LatentDynamics:
    """Common interface. Histories are ordered oldest -> newest."""

    kind: str
    H: int
    latent_dim: int
    action_dim: int

    def step_batch(self, z_hist: np.ndarray, a_hist: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jacobians_batch(self, z_hist: np.ndarray, a_hist: np.ndarray):
        """Return ``(z_next (B,d), Jz (B,H,d,d), Ja (B,H,d,m))``."""
        raise NotImplementedError

    def _check(self, z_hist, a_hist):
        z_hist = np.asarray(z_hist, dtype=np.float64)
        a_hist = np.asarray(a_hist, dtype=np.float64)
        if z_hist.shape[-2:] != (self.H, self.latent_dim):
            raise ValueError(f"latent history shape {z_hist.shape[-2:]} != {(self.H, self.latent_dim)}")
        if a_hist.shape[-2:] != (self.H, self.action_dim):
            raise ValueError(f"action history shape {a_hist.shape[-2:]} != {(self.H, self.action_dim)}")
        if z_hist.shape[:-2] != a_hist.shape[:-2]:
            raise ValueError("batch shapes of latent and action histories differ")
        return z_hist, a_hist


class AnalyticConjugate(LatentDynamics):
    """``z' = E smooth_step(E^T z_newest, a_newest)``; older history slots are unused."""

    kind = "analytic"

    def __init__(self, spec: EnvSpec, encoder: Encoder, beta: float = 200.0, H: int = 1):
        if H < 1:
            raise ValueError("history length must be >= 1")
        if encoder.obs_dim != spec.obs_dim:
            raise ValueError("encoder observation dim does not match the environment")
        self.spec = spec
        self.encoder = encoder
        self.beta = float(beta)
        self.H = int(H)
        self.latent_dim = encoder.latent_dim
        self.action_dim = spec.action_dim

    def step_batch(self, z_hist, a_hist):
        z_hist, a_hist = self._check(z_hist, a_hist)
        z = z_hist[..., -1, :]
        a = a_hist[..., -1, :]
        lead = z.shape[:-1]
        o = self.encoder.decode(z.reshape(-1, self.latent_dim))
        nxt, _ = smooth_env_step(self.spec, o, a.reshape(-1, self.action_dim), self.beta)
        return self.encoder.encode(nxt).reshape(lead + (self.latent_dim,))

    def obs_jacobians(self, o, a):
        """Next observation and its Jacobians in observation space (batched)."""
        nxt, J = smooth_env_step(self.spec, o, a, self.beta)
        n = self.spec.obs_dim
        return nxt, J[:, :, :n], J[:, :, n:]

    def jacobians_batch(self, z_hist, a_hist):
        z_hist, a_hist = self._check(z_hist, a_hist)
        z_hist = z_hist.reshape(-1, self.H, self.latent_dim)
        a_hist = a_hist.reshape(-1, self.H, self.action_dim)
        B = z_hist.shape[0]
        E = self.encoder.E
        o = self.encoder.decode(z_hist[:, -1])
        nxt, Jo, Ja_obs = self.obs_jacobians(o, a_hist[:, -1])
        Jz = np.zeros((B, self.H, self.latent_dim, self.latent_dim))
        Ja = np.zeros((B, self.H, self.latent_dim, self.action_dim))
        Jz[:, -1] = E @ Jo @ E.T
        Ja[:, -1] = E @ Ja_obs
        return self.encoder.encode(nxt), Jz, Ja


class LinearDynamics(LatentDynamics):
    """``z' = F z + G a`` on the newest slot; used by the linear-quadratic oracle."""

    kind = "linear"

    def __init__(self, F, G, H: int = 1):
        self.F = np.atleast_2d(np.asarray(F, dtype=np.float64))
        self.G = np.atleast_2d(np.asarray(G, dtype=np.float64))
        if self.F.shape[0] != self.F.shape[1] or self.G.shape[0] != self.F.shape[0]:
            raise ValueError("F must be d x d and G must be d x m")
        self.H = int(H)
        self.latent_dim, self.action_dim = self.G.shape

    def step_batch(self, z_hist, a_hist):
        z_hist, a_hist = self._check(z_hist, a_hist)
        return z_hist[..., -1, :] @ self.F.T + a_hist[..., -1, :] @ self.G.T

    def jacobians_batch(self, z_hist, a_hist):
        z_hist, a_hist = self._check(z_hist, a_hist)
        z_hist = z_hist.reshape(-1, self.H, self.latent_dim)
        a_hist = a_hist.reshape(-1, self.H, self.action_dim)
        B = z_hist.shape[0]
        Jz = np.zeros((B, self.H, self.latent_dim, self.latent_dim))
        Ja = np.zeros((B, self.H, self.latent_dim, self.action_dim))
        Jz[:, -1] = self.F
        Ja[:, -1] = self.G
        return self.step_batch(z_hist, a_hist), Jz, Ja


@dataclass
class MlpParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray
    in_mean: np.ndarray
    in_scale: np.ndarray

    NAMES = ("W1", "b1", "W2", "b2", "W3", "b3")

    def trainable(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in self.NAMES}


class LearnedMLP(LatentDynamics):
    """Two tanh hidden layers on the flattened history ``[z_1..z_H, a_1..a_H]``.

    Inputs are standardised by a fixed affine map stored with the weights.
    """

    kind = "mlp"

    def __init__(self, params: MlpParams, H: int, latent_dim: int, action_dim: int):
        self.params = params
        self.H = int(H)
        self.latent_dim = int(latent_dim)
        self.action_dim = int(action_dim)
        if params.W1.shape[0] != self.H * (self.latent_dim + self.action_dim):
            raise ValueError("first layer input size does not match H*(d+m)")
        if params.W3.shape[1] != self.latent_dim:
            raise ValueError("output layer size does not match the latent dim")

    @classmethod
    def initialize(cls, H: int, latent_dim: int, action_dim: int, rng: RngStream, width: int = 64) -> LearnedMLP:
        gen = rng.generator()
        n_in = H * (latent_dim + action_dim)

        def dense(a, b):
            return gen.normal(0.0, np.sqrt(1.0 / a), size=(a, b))

        params = MlpParams(
            W1=dense(n_in, width), b1=np.zeros(width),
            W2=dense(width, width), b2=np.zeros(width),
            W3=dense(width, latent_dim) * 0.1, b3=np.zeros(latent_dim),
            in_mean=np.zeros(n_in), in_scale=np.ones(n_in),
        )
        return cls(params, H, latent_dim, action_dim)

    def _flatten(self, z_hist, a_hist):
        B = z_hist.shape[0]
        return np.concatenate([z_hist.reshape(B, -1), a_hist.reshape(B, -1)], axis=1)

    def forward(self, x):
        p = self.params
        xs = (x - p.in_mean) / p.in_scale
        h1 = np.tanh(xs @ p.W1 + p.b1)
        h2 = np.tanh(h1 @ p.W2 + p.b2)
        return xs, h1, h2, h2 @ p.W3 + p.b3

    def step_batch(self, z_hist, a_hist):
        z_hist, a_hist = self._check(z_hist, a_hist)
        lead = z_hist.shape[:-2]
        x = self._flatten(z_hist.reshape((-1, self.H, self.latent_dim)), a_hist.reshape((-1, self.H, self.action_dim)))
        return self.forward(x)[-1].reshape(lead + (self.latent_dim,))

    def jacobians_batch(self, z_hist, a_hist):
        z_hist, a_hist = self._check(z_hist, a_hist)
        z_hist = z_hist.reshape(-1, self.H, self.latent_dim)
        a_hist = a_hist.reshape(-1, self.H, self.action_dim)
        p = self.params
        B = z_hist.shape[0]
        _, h1, h2, out = self.forward(self._flatten(z_hist, a_hist))
        # d out / d x = W3^T diag(1-h2^2) W2^T diag(1-h1^2) W1^T diag(1/scale)
        g2 = (1.0 - h2 * h2)[:, :, None] * p.W3[None]            # (B, w, d)
        g1 = (1.0 - h1 * h1)[:, :, None] * np.einsum("ij,bjd->bid", p.W2, g2)
        J = np.einsum("ij,bjd->bdi", p.W1, g1) / p.in_scale      # (B, d, n_in)
        nz = self.H * self.latent_dim
        Jz = J[:, :, :nz].reshape(B, self.latent_dim, self.H, self.latent_dim).transpose(0, 2, 1, 3)
        Ja = J[:, :, nz:].reshape(B, self.latent_dim, self.H, self.action_dim).transpose(0, 2, 1, 3)
        return out, Jz, Ja


def latent_step(f: LatentDynamics, z_hist, a_hist) -> np.ndarray:
    return f.step_batch(np.asarray(z_hist)[None], np.asarray(a_hist)[None])[0]


def latent_jacobians(f: LatentDynamics, z_hist, a_hist):
    """Per-slot Jacobians ``(Jz[H,d,d], Ja[H,d,m])`` of one latent step."""
    _, Jz, Ja = f.jacobians_batch(np.asarray(z_hist)[None], np.asarray(a_hist)[None])
    return Jz[0], Ja[0]


def pad_history(z_seq, a_seq, H: int, action_dim: int):
    """History window ending at the newest latent of ``z_seq``.

    Returns the last ``H`` latents and the ``H - 1`` actions preceding the
    next decision; missing early slots repeat the first latent and use zero
    actions.
    """
    z_seq = np.atleast_2d(np.asarray(z_seq, dtype=np.float64))
    a_seq = np.asarray(a_seq, dtype=np.float64).reshape(-1, action_dim)
    k = z_seq.shape[0]
    zh = z_seq[-H:] if k >= H else np.concatenate([np.repeat(z_seq[:1], H - k, axis=0), z_seq])
    n_a = H - 1
    if a_seq.shape[0] >= n_a:
        ah = a_seq[a_seq.shape[0] - n_a:]
    else:
        ah = np.concatenate([np.zeros((n_a - a_seq.shape[0], action_dim)), a_seq])
    return zh, ah


def rollout(f: LatentDynamics, z0_hist, a_hist0, actions) -> np.ndarray:
    """Open-loop rollout. ``a_hist0`` holds the H-1 actions preceding ``actions[0]``.

    Returns the latents ``z_1..z_T``.
    """
    z_hist = np.array(z0_hist, dtype=np.float64).reshape(f.H, f.latent_dim)
    actions = np.asarray(actions, dtype=np.float64).reshape(-1, f.action_dim)
    a_prev = np.asarray(a_hist0, dtype=np.float64).reshape(f.H - 1, f.action_dim)
    out = np.empty((actions.shape[0], f.latent_dim))
    for t, a in enumerate(actions):
        a_hist = np.concatenate([a_prev, a[None]], axis=0)
        z = latent_step(f, z_hist, a_hist)
        out[t] = z
        z_hist = np.concatenate([z_hist[1:], z[None]], axis=0)
        a_prev = a_hist[1:]
    return out


def rollout_batch(f: LatentDynamics, z0_hist, a_hist0, actions) -> np.ndarray:
    """Rollout of a batch of action sequences (C, T, m) from one shared history."""
    actions = np.asarray(actions, dtype=np.float64)
    C, T, _ = actions.shape
    z_hist = np.broadcast_to(np.asarray(z0_hist, dtype=np.float64), (C, f.H, f.latent_dim)).copy()
    a_prev = np.broadcast_to(np.asarray(a_hist0, dtype=np.float64).reshape(f.H - 1, f.action_dim),
                             (C, f.H - 1, f.action_dim)).copy()
    out = np.empty((C, T, f.latent_dim))
    for t in range(T):
        a_hist = np.concatenate([a_prev, actions[:, t:t + 1]], axis=1)
        z = f.step_batch(z_hist, a_hist)
        out[:, t] = z
        z_hist = np.concatenate([z_hist[:, 1:], z[:, None]], axis=1)
        a_prev = a_hist[:, 1:]
    return out


# --------------------------------------------------------------------------- training

@dataclass
class TransitionDataset:
    z_hist: np.ndarray   # (N, H, d)
    a_hist: np.ndarray   # (N, H, m)
    z_next: np.ndarray   # (N, d)

    def __post_init__(self):
        self.z_hist = np.asarray(self.z_hist, dtype=np.float64)
        self.a_hist = np.asarray(self.a_hist, dtype=np.float64)
        self.z_next = np.asarray(self.z_next, dtype=np.float64)
        N = self.z_hist.shape[0]
        if self.z_hist.ndim != 3 or self.a_hist.ndim != 3 or self.z_next.ndim != 2:
            raise ValueError("dataset arrays must be (N,H,d), (N,H,m), (N,d)")
        if self.a_hist.shape[:2] != self.z_hist.shape[:2] or self.z_next.shape != (N, self.z_hist.shape[2]):
            raise ValueError("inconsistent dataset shapes")
        if not all(np.all(np.isfinite(x)) for x in (self.z_hist, self.a_hist, self.z_next)):
            raise ValueError("dataset has non-finite values")

    def __len__(self):
        return self.z_hist.shape[0]

    @property
    def H(self) -> int:
        return self.z_hist.shape[1]

    def split(self, frac: float, rng: RngStream):
        idx = rng.generator().permutation(len(self))
        k = int(round(frac * len(self)))
        take = lambda ix: TransitionDataset(self.z_hist[ix], self.a_hist[ix], self.z_next[ix])
        return take(idx[:k]), take(idx[k:])


def collect_transitions(f: LatentDynamics, encoder: Encoder, n: int, H: int, bounds, rng: RngStream,
                        obs_low=0.05, obs_high=0.95) -> TransitionDataset:
    """Random-action walks of length H under ``f`` (which must have history 1).

    Start observations are uniform in the box [obs_low, obs_high]^n.
    """
    gen = rng.generator()
    n_obs = encoder.obs_dim
    m = bounds.dim
    o0 = gen.uniform(obs_low, obs_high, size=(n, n_obs))
    acts = gen.uniform(bounds.a_min, bounds.a_max, size=(n, H, m))
    z = encoder.encode(o0)
    zs = [z]
    for k in range(H):
        z = f.step_batch(z[:, None, :], acts[:, k:k + 1])
        zs.append(z)
    zs = np.stack(zs, axis=1)
    return TransitionDataset(zs[:, :H], acts, zs[:, H])


@dataclass
class TrainConfig:
    width: int = 64
    epochs: int = 200
    batch_size: int = 64
    lr: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class TrainResult:
    model: LearnedMLP
    final_loss: float
    epoch_losses: list = field(default_factory=list)


def _mlp_loss_and_grads(model: LearnedMLP, x, y):
    p = model.params
    xs, h1, h2, out = model.forward(x)
    diff = out - y
    n = diff.size
    loss = float(np.sum(diff * diff) / n)
    d_out = 2.0 * diff / n
    g = {"W3": h2.T @ d_out, "b3": d_out.sum(0)}
    d_h2 = (d_out @ p.W3.T) * (1.0 - h2 * h2)
    g["W2"] = h1.T @ d_h2
    g["b2"] = d_h2.sum(0)
    d_h1 = (d_h2 @ p.W2.T) * (1.0 - h1 * h1)
    g["W1"] = xs.T @ d_h1
    g["b1"] = d_h1.sum(0)
    return loss, g


def train_mlp_dynamics(dataset: TransitionDataset, cfg: TrainConfig | None, rng: RngStream) -> TrainResult:
    """Mini-batch Adam on mean squared next-latent error (hand-written backprop)."""
    from .collocation import AdamHyper, AdamState, adam_step

    if len(dataset) == 0:
        raise ValueError("empty dataset")
    cfg = cfg or TrainConfig()
    H, d = dataset.z_hist.shape[1:]
    m = dataset.a_hist.shape[2]
    model = LearnedMLP.initialize(H, d, m, rng.fork(0), width=cfg.width)
    x_all = model._flatten(dataset.z_hist, dataset.a_hist)
    y_all = dataset.z_next
    model.params.in_mean = x_all.mean(0)
    model.params.in_scale = np.maximum(x_all.std(0), 1e-6)
    params = model.params.trainable()
    hyper = AdamHyper(cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    state = AdamState.zeros_like(params)
    gen = rng.fork(1).generator()
    N = len(dataset)
    losses = [_mlp_loss_and_grads(model, x_all, y_all)[0]]
    for epoch in range(cfg.epochs):
        order = gen.permutation(N)
        for start in range(0, N, cfg.batch_size):
            ix = order[start:start + cfg.batch_size]
            _, grads = _mlp_loss_and_grads(model, x_all[ix], y_all[ix])
            params, state = adam_step(params, grads, state, hyper)
            for k, v in params.items():
                setattr(model.params, k, v)
        losses.append(_mlp_loss_and_grads(model, x_all, y_all)[0])
        if epoch % 50 == 0:
            log.debug("epoch %d loss %.3e", epoch, losses[-1])
    return TrainResult(model, losses[-1], losses)


def dataset_mse(model: LatentDynamics, data: TransitionDataset) -> float:
    pred = model.step_batch(data.z_hist, data.a_hist)
    return float(np.mean((pred - data.z_next) ** 2))


# --------------------------------------------------------------------------- gradient check

@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    samples: int


def _rel_err(J, J_fd) -> float:
    scale = max(np.linalg.norm(J_fd), np.linalg.norm(J), 1e-6)
    return float(np.linalg.norm(J - J_fd) / scale)


def sample_check_points(f: LatentDynamics, n: int, rng: RngStream):
    """Random latent/action histories; for the analytic model a third of the
    points sit within a few step lengths of the wall or in contact."""
    gen = rng.generator()
    d, m, H = f.latent_dim, f.action_dim, f.H
    if isinstance(f, AnalyticConjugate):
        spec = f.spec
        lo, hi = spec.bounds.a_min, spec.bounds.a_max
        o = gen.uniform(0.05, 0.95, size=(n, H, spec.obs_dim))
        near = gen.random(n) < 1.0 / 3.0
        if spec.kind is EnvKind.WALLNAV:
            o[near, -1, 0] = spec.wall_x + gen.uniform(-0.08, 0.08, size=near.sum())
            o[near, -1, 1] = np.clip(spec.gap_center + gen.uniform(-0.25, 0.25, size=near.sum()), 0.05, 0.95)
        else:
            ang = gen.uniform(0, 2 * np.pi, size=near.sum())
            r = spec.contact_radius + gen.uniform(-0.02, 0.08, size=near.sum())
            o[near, -1, 2:] = o[near, -1, :2] + r[:, None] * np.stack([np.cos(ang), np.sin(ang)], 1)
        z = f.encoder.encode(o)
        a = gen.uniform(lo, hi, size=(n, H, m))
    else:
        z = gen.normal(0.0, 0.5, size=(n, H, d))
        a = gen.uniform(-0.1, 0.1, size=(n, H, m))
    return z, a


def finite_difference_jacobians(f: LatentDynamics, z_hist, a_hist, h: float = 1e-5):
    z_hist = np.asarray(z_hist, dtype=np.float64)
    a_hist = np.asarray(a_hist, dtype=np.float64)
    H, d = z_hist.shape
    m = a_hist.shape[1]
    Jz = np.zeros((H, f.latent_dim, d))
    Ja = np.zeros((H, f.latent_dim, m))
    for i in range(H):
        for j in range(d):
            zp, zm = z_hist.copy(), z_hist.copy()
            zp[i, j] += h
            zm[i, j] -= h
            Jz[i, :, j] = (latent_step(f, zp, a_hist) - latent_step(f, zm, a_hist)) / (2 * h)
        for j in range(m):
            ap, am = a_hist.copy(), a_hist.copy()
            ap[i, j] += h
            am[i, j] -= h
            Ja[i, :, j] = (latent_step(f, z_hist, ap) - latent_step(f, z_hist, am)) / (2 * h)
    return Jz, Ja


def gradient_check(f: LatentDynamics, samples: int, tol: float, rng: RngStream, h: float = 1e-5) -> GradCheckReport:
    if samples < 1:
        raise ValueError("samples must be >= 1")
    zs, as_ = sample_check_points(f, samples, rng)
    worst = 0.0
    for z_hist, a_hist in zip(zs, as_):
        Jz, Ja = latent_jacobians(f, z_hist, a_hist)
        Fz, Fa = finite_difference_jacobians(f, z_hist, a_hist, h)
        worst = max(worst, _rel_err(Jz, Fz), _rel_err(Ja, Fa))
    return GradCheckReport(worst, worst <= tol, samples)


# --------------------------------------------------------------------------- checkpoints

def save_checkpoint(f: LatentDynamics, path) -> None:
    meta = {"version": CHECKPOINT_VERSION, "kind": f.kind, "H": f.H,
            "latent_dim": f.latent_dim, "action_dim": f.action_dim}
    arrays = {}
    if isinstance(f, AnalyticConjugate):
        s = f.spec
        meta["beta"] = f.beta.hex()
        meta["spec"] = {
            "kind": s.kind.value, "wall_x": s.wall_x.hex(), "wall_half_thickness": s.wall_half_thickness.hex(),
            "gap_center": s.gap_center.hex(), "gap_half_width": s.gap_half_width.hex(),
            "agent_radius": s.agent_radius.hex(), "block_radius": s.block_radius.hex(), "eps": s.eps.hex(),
        }
        arrays["encoder"] = f.encoder.E
        arrays["a_min"] = s.bounds.a_min
        arrays["a_max"] = s.bounds.a_max
    elif isinstance(f, LearnedMLP):
        for k in MlpParams.NAMES + ("in_mean", "in_scale"):
            arrays[k] = getattr(f.params, k)
    else:
        raise TypeError(f"cannot checkpoint {type(f).__name__}")
    buf = io.BytesIO()
    np.savez(buf, meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8), **arrays)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> LatentDynamics:
    from .core import ActionBounds

    with np.load(path) as data:
        meta = json.loads(bytes(data["meta"]).decode())
        arrays = {k: data[k].copy() for k in data.files if k != "meta"}
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
    if meta["kind"] == "analytic":
        sp = meta["spec"]
        spec = EnvSpec(
            kind=sp["kind"], bounds=ActionBounds(arrays["a_min"], arrays["a_max"]),
            **{k: float.fromhex(v) for k, v in sp.items() if k != "kind"},
        )
        return AnalyticConjugate(spec, Encoder(arrays["encoder"]), float.fromhex(meta["beta"]), meta["H"])
    if meta["kind"] == "mlp":
        return LearnedMLP(MlpParams(**arrays), meta["H"], meta["latent_dim"], meta["action_dim"])
    raise ValueError(f"unknown dynamics kind {meta['kind']!r}")
