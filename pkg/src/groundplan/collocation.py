"""Video-guided latent collocation solved with an augmented Lagrangian.

Decision variables are the free latent knots ``z_{t+1..T}`` and unconstrained
action pre-images ``u_{t..T-1}``; the current latent ``z_t`` is pinned. Each
dynamics step is an equality constraint handled by multipliers plus a
quadratic penalty whose weight grows geometrically across outer iterations.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .core import ActionBounds, RngStream, WeightConfig, l2_normalize, mse
from .worldmodel import LatentDynamics

log = logging.getLogger(__name__)

# tanh(15) is 1 - 2e-13, so clamped pre-images keep actions strictly inside the bounds
U_SATURATION = 15.0

DIAGNOSTIC_FIELDS = ("outer_iter", "rho", "max_residual", "cost", "video_term", "goal_term", "reg_term")


class AlignMetric(str, enum.Enum):
    COSINE = "cosine"
    MSE = "mse"


class ActionParam(str, enum.Enum):
    TANH = "tanh"
    PROJECTED = "projected"


class SolverAbort(RuntimeError):
    def __init__(self, message, diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


# --------------------------------------------------------------------------- losses

def video_alignment_loss(z, z_vid) -> float:
    """Squared distance between the unit-sphere projections, i.e. ``2 (1 - cos)``."""
    d = l2_normalize(z) - l2_normalize(z_vid)
    return float(d @ d)


def goal_loss(z_T, z_g) -> float:
    return mse(z_T, z_g)


def _align_terms(Z, V, metric: AlignMetric):
    """Per-row alignment values and gradients w.r.t. Z (rows are time steps)."""
    if Z.shape[0] == 0:
        return np.zeros(0), np.zeros_like(Z)
    if metric is AlignMetric.MSE:
        diff = Z - V
        return np.mean(diff * diff, axis=1), 2.0 * diff / Z.shape[1]
    zn = np.linalg.norm(Z, axis=1, keepdims=True)
    vn = np.linalg.norm(V, axis=1, keepdims=True)
    if np.any(zn == 0.0) or np.any(vn == 0.0):
        raise ValueError("degenerate latent: zero norm in cosine alignment")
    phi = Z / zn
    w = V / vn
    diff = phi - w
    vals = np.sum(diff * diff, axis=1)
    cos = np.sum(phi * w, axis=1, keepdims=True)
    grads = -2.0 * (w - cos * phi) / zn
    return vals, grads


# --------------------------------------------------------------------------- reparameterisation

def reparam_action(u, b: ActionBounds) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    return b.a_min + (b.a_max - b.a_min) * (np.tanh(u) + 1.0) / 2.0


def reparam_jacobian(u, b: ActionBounds) -> np.ndarray:
    """Diagonal of d a / d u."""
    t = np.tanh(np.asarray(u, dtype=np.float64))
    return (b.a_max - b.a_min) * (1.0 - t * t) / 2.0


def reparam_inverse(a, b: ActionBounds) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if np.any(a <= b.a_min) or np.any(a >= b.a_max):
        raise ValueError("reparam_inverse requires actions strictly inside the bounds")
    y = 2.0 * (a - b.a_min) / (b.a_max - b.a_min) - 1.0
    return np.arctanh(y)


# --------------------------------------------------------------------------- Adam

@dataclass(frozen=True)
class AdamHyper:
    lr: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def zeros_like(cls, params: dict) -> AdamState:
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, 0)


def adam_step(params: dict, grads: dict, state: AdamState, hyper: AdamHyper):
    """One bias-corrected Adam update. Returns new ``(params, state)``."""
    if params.keys() != grads.keys():
        raise ValueError("parameter and gradient keys differ")
    t = state.t + 1
    b1, b2 = hyper.beta1, hyper.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"shape mismatch for {k}: {g.shape} vs {p.shape}")
        m = b1 * state.m[k] + (1.0 - b1) * g
        v = b2 * state.v[k] + (1.0 - b2) * (g * g)
        new_p[k] = p - hyper.lr * (m / bc1) / (np.sqrt(v / bc2) + hyper.eps)
        new_m[k] = m
        new_v[k] = v
    return new_p, AdamState(new_m, new_v, t)


# --------------------------------------------------------------------------- problem data

@dataclass(frozen=True)
class SolverConfig:
    weights: WeightConfig = field(default_factory=WeightConfig)
    inner_iters: int = 25
    outer_iters: int = 25
    rho0: float = 1.0
    gamma: float = 1.9
    rho_max: float = 1e4
    adam: AdamHyper = field(default_factory=AdamHyper)
    metric: AlignMetric = AlignMetric.COSINE
    tau_dyn: float = 1e-3
    action_param: ActionParam = ActionParam.TANH
    freeze_latents: bool = False
    lr_decay: float = 1.0
    reset_moments: bool = False

    def __post_init__(self):
        object.__setattr__(self, "metric", AlignMetric(self.metric))
        object.__setattr__(self, "action_param", ActionParam(self.action_param))
        if self.inner_iters < 1 or self.outer_iters < 1:
            raise ValueError("iteration counts must be >= 1")
        if not self.rho0 > 0 or not self.gamma > 1 or not self.rho_max >= self.rho0:
            raise ValueError("need rho0 > 0, gamma > 1, rho_max >= rho0")


@dataclass
class DecisionVars:
    Z: np.ndarray   # (N, d): z_{t+1..T}
    U: np.ndarray   # (N, m): action pre-images (raw actions for the projected variant)

    def copy(self) -> DecisionVars:
        return DecisionVars(self.Z.copy(), self.U.copy())

    def __len__(self):
        return self.Z.shape[0]


@dataclass
class DualState:
    lam: np.ndarray  # (N, d)
    rho: float
    rho_max: float = 1e4
    gamma: float = 1.9

    @classmethod
    def initial(cls, N: int, d: int, cfg: SolverConfig) -> DualState:
        return cls(np.zeros((N, d)), cfg.rho0, cfg.rho_max, cfg.gamma)

    def update(self, residuals: np.ndarray) -> None:
        self.lam = self.lam + self.rho * residuals
        self.rho = min(self.gamma * self.rho, self.rho_max)


@dataclass
class CollocationProblem:
    """Everything fixed during one solve.

    ``z_hist`` (H, d) ends with the pinned latent ``z_t``; ``a_prev`` (H-1, m)
    are the executed actions before ``a_t``; ``z_vid`` (N+1, d) is the video
    latent plan for times ``t..T``.
    """

    f: LatentDynamics
    z_hist: np.ndarray
    a_prev: np.ndarray
    z_vid: np.ndarray
    z_goal: np.ndarray
    bounds: ActionBounds
    weights: WeightConfig = field(default_factory=WeightConfig)
    metric: AlignMetric = AlignMetric.COSINE
    action_param: ActionParam = ActionParam.TANH

    def __post_init__(self):
        H, d, m = self.f.H, self.f.latent_dim, self.f.action_dim
        self.z_hist = np.asarray(self.z_hist, dtype=np.float64).reshape(H, d)
        self.a_prev = np.asarray(self.a_prev, dtype=np.float64).reshape(H - 1, m)
        self.z_vid = np.asarray(self.z_vid, dtype=np.float64)
        self.z_goal = np.asarray(self.z_goal, dtype=np.float64).reshape(d)
        self.metric = AlignMetric(self.metric)
        self.action_param = ActionParam(self.action_param)
        if self.z_vid.ndim != 2 or self.z_vid.shape[1] != d or self.z_vid.shape[0] < 2:
            raise ValueError("video latent plan must be (N+1, d) with N >= 1")

    @property
    def horizon(self) -> int:
        return self.z_vid.shape[0] - 1

    def actions(self, U) -> np.ndarray:
        if self.action_param is ActionParam.PROJECTED:
            return np.asarray(U, dtype=np.float64)
        return reparam_action(U, self.bounds)

    def _check(self, x: DecisionVars):
        N = self.horizon
        if x.Z.shape != (N, self.f.latent_dim) or x.U.shape != (N, self.f.action_dim):
            raise ValueError(f"decision variables must have {N} knots, got {x.Z.shape} / {x.U.shape}")

    def windows(self, Z, A):
        H = self.f.H
        Zfull = np.concatenate([self.z_hist, Z], axis=0)
        Afull = np.concatenate([self.a_prev, A], axis=0)
        N = Z.shape[0]
        idx = np.arange(N)[:, None] + np.arange(H)[None, :]
        return Zfull[idx], Afull[idx]


# --------------------------------------------------------------------------- objective pieces

def dynamics_residuals(prob: CollocationProblem, Z, A) -> np.ndarray:
    """``r_k = z_{t+k+1} - f(history ending at t+k)`` for every remaining step."""
    Zw, Aw = prob.windows(Z, A)
    return Z - prob.f.step_batch(Zw, Aw)


def dynamics_residual(f: LatentDynamics, Z_full, A_full, t: int) -> np.ndarray:
    """Residual of step ``t`` for full sequences ``Z_full`` (z_0..z_T) and
    ``A_full`` (a_0..a_{T-1}); indices before 0 are padded per the history rule."""
    Z_full = np.asarray(Z_full, dtype=np.float64)
    A_full = np.asarray(A_full, dtype=np.float64)
    T = A_full.shape[0]
    if not 0 <= t < T or Z_full.shape[0] != T + 1:
        raise IndexError(f"step {t} out of range for horizon {T}")
    H = f.H
    zi = np.clip(np.arange(t - H + 1, t + 1), 0, None)
    z_hist = Z_full[zi]
    ai = np.arange(t - H + 1, t + 1)
    a_hist = np.where((ai >= 0)[:, None], A_full[np.clip(ai, 0, None)], 0.0)
    return Z_full[t + 1] - f.step_batch(z_hist[None], a_hist[None])[0]


@dataclass
class CostTerms:
    video: float
    goal: float
    reg: float

    @property
    def total(self) -> float:
        return self.video + self.goal + self.reg


def cost_terms(prob: CollocationProblem, Z, A) -> CostTerms:
    w = prob.weights
    vals, _ = _align_terms(Z[:-1], prob.z_vid[1:-1], prob.metric) if w.lambda_v else (np.zeros(0), None)
    return CostTerms(
        video=w.lambda_v * float(np.sum(vals)),
        goal=w.lambda_g * mse(Z[-1], prob.z_goal),
        reg=w.lambda_r * float(np.sum(A * A)),
    )


def latent_cost(Z, A, z_vid_plan, z_g, w: WeightConfig, metric=AlignMetric.COSINE) -> float:
    """Video alignment on ``z_{t+1..T-1}``, terminal goal MSE and action energy.

    ``Z`` holds ``z_{t+1..T}``, ``A`` holds ``a_{t..T-1}``, ``z_vid_plan``
    holds ``z_vid_{t..T}``.
    """
    Z = np.asarray(Z, dtype=np.float64)
    A = np.asarray(A, dtype=np.float64)
    V = np.asarray(z_vid_plan, dtype=np.float64)
    if Z.shape[0] != A.shape[0] or V.shape[0] != Z.shape[0] + 1:
        raise ValueError("length mismatch between latents, actions and video plan")
    video = 0.0
    if w.lambda_v:
        vals, _ = _align_terms(Z[:-1], V[1:-1], AlignMetric(metric))
        video = w.lambda_v * float(np.sum(vals))
    return video + w.lambda_g * mse(Z[-1], z_g) + w.lambda_r * float(np.sum(A * A))


def augmented_lagrangian(prob: CollocationProblem, x: DecisionVars, dual: DualState) -> float:
    prob._check(x)
    A = prob.actions(x.U)
    r = dynamics_residuals(prob, x.Z, A)
    return cost_terms(prob, x.Z, A).total + float(np.sum(dual.lam * r) + 0.5 * dual.rho * np.sum(r * r))


def alm_value_and_gradients(prob: CollocationProblem, x: DecisionVars, dual: DualState):
    """Value of the augmented Lagrangian and its exact gradients w.r.t. (Z, U)."""
    f = prob.f
    H = f.H
    w = prob.weights
    Z = x.Z
    A = prob.actions(x.U)
    N = Z.shape[0]
    Zw, Aw = prob.windows(Z, A)
    pred, Jz, Ja = f.jacobians_batch(Zw, Aw)
    r = Z - pred
    mu = dual.lam + dual.rho * r

    gZfull = np.zeros((H + N, Z.shape[1]))
    gAfull = np.zeros((H - 1 + N, A.shape[1]))
    gZfull[H:] += mu
    for j in range(H):
        gZfull[j:j + N] -= (mu[:, None, :] @ Jz[:, j])[:, 0]
        gAfull[j:j + N] -= (mu[:, None, :] @ Ja[:, j])[:, 0]
    gZ = gZfull[H:]
    gA = gAfull[H - 1:]

    video = 0.0
    if w.lambda_v and N > 1:
        vals, gv = _align_terms(Z[:-1], prob.z_vid[1:-1], prob.metric)
        video = w.lambda_v * float(np.sum(vals))
        gZ[:-1] += w.lambda_v * gv
    dg = Z[-1] - prob.z_goal
    goal = w.lambda_g * float(np.mean(dg * dg))
    gZ[-1] += w.lambda_g * 2.0 * dg / dg.size
    reg = w.lambda_r * float(np.sum(A * A))
    gA += 2.0 * w.lambda_r * A

    if prob.action_param is ActionParam.PROJECTED:
        gU = gA
    else:
        gU = gA * reparam_jacobian(x.U, prob.bounds)
    value = video + goal + reg + float(np.sum(dual.lam * r) + 0.5 * dual.rho * np.sum(r * r))
    return value, gZ, gU, r, CostTerms(video, goal, reg)


def alm_gradients(prob: CollocationProblem, x: DecisionVars, dual: DualState):
    _, gZ, gU, _, _ = alm_value_and_gradients(prob, x, dual)
    return gZ, gU


# --------------------------------------------------------------------------- solver

@dataclass
class SolveResult:
    Z: np.ndarray
    U: np.ndarray
    A: np.ndarray
    diagnostics: list
    final_cost: float
    max_residual: float
    dual: DualState

    @property
    def vars(self) -> DecisionVars:
        return DecisionVars(self.Z, self.U)


def alm_solve(prob: CollocationProblem, init: DecisionVars, cfg: SolverConfig) -> SolveResult:
    """Primal-dual augmented Lagrangian with Adam inner steps.

    Adam moments persist across all inner and outer iterations of this call.
    After each block of inner steps the multipliers move by ``rho * r`` and
    ``rho`` grows by ``gamma`` up to ``rho_max``.
    """
    prob._check(init)
    x = init.copy()
    if prob.action_param is ActionParam.PROJECTED:
        x.U = prob.bounds.clip(x.U)
    dual = DualState.initial(len(x), prob.f.latent_dim, cfg)
    params = {"Z": x.Z, "U": x.U}
    state = AdamState.zeros_like(params)
    diagnostics = []
    for k in range(cfg.outer_iters):
        hyper = replace(cfg.adam, lr=cfg.adam.lr * cfg.lr_decay ** k)
        if cfg.reset_moments:
            state = AdamState.zeros_like(params)
        for _ in range(cfg.inner_iters):
            value, gZ, gU, _, _ = alm_value_and_gradients(prob, x, dual)
            if not np.isfinite(value) or not (np.all(np.isfinite(gZ)) and np.all(np.isfinite(gU))):
                raise SolverAbort(f"non-finite augmented Lagrangian at outer iteration {k}", diagnostics)
            if cfg.freeze_latents:
                gZ = np.zeros_like(gZ)
            params, state = adam_step(params, {"Z": gZ, "U": gU}, state, hyper)
            if cfg.freeze_latents:
                params["Z"] = x.Z
            if prob.action_param is ActionParam.PROJECTED:
                params["U"] = prob.bounds.clip(params["U"])
            x = DecisionVars(params["Z"], params["U"])
        A = prob.actions(x.U)
        r = dynamics_residuals(prob, x.Z, A)
        terms = cost_terms(prob, x.Z, A)
        max_res = float(np.max(np.linalg.norm(r, axis=1)))
        if not np.isfinite(terms.total) or not np.isfinite(max_res):
            raise SolverAbort(f"non-finite cost at outer iteration {k}", diagnostics)
        diagnostics.append({
            "outer_iter": k, "rho": dual.rho, "max_residual": max_res, "cost": terms.total,
            "video_term": terms.video, "goal_term": terms.goal, "reg_term": terms.reg,
        })
        dual.update(r)
    if prob.action_param is ActionParam.TANH:
        x.U = np.clip(x.U, -U_SATURATION, U_SATURATION)
    A = prob.actions(x.U)
    return SolveResult(x.Z, x.U, A, diagnostics, diagnostics[-1]["cost"], diagnostics[-1]["max_residual"], dual)


def diagnostics_csv(rows) -> str:
    lines = [",".join(DIAGNOSTIC_FIELDS)]
    for row in rows:
        lines.append(",".join(repr(row[k]) if isinstance(row[k], float) else str(row[k]) for k in DIAGNOSTIC_FIELDS))
    return "\n".join(lines) + "\n"


def with_weights(cfg: SolverConfig, **kw) -> SolverConfig:
    return replace(cfg, weights=replace(cfg.weights, **kw))


# --------------------------------------------------------------------------- gradient check

def _fd_grad(fun, x: np.ndarray, h: float) -> np.ndarray:
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = fun()
        flat[i] = keep - h
        down = fun()
        flat[i] = keep
        gflat[i] = (up - down) / (2.0 * h)
    return g


def random_problem(f: LatentDynamics, horizon: int, rng: RngStream, metric=AlignMetric.COSINE,
                   bounds: ActionBounds | None = None):
    """A random collocation instance with random multipliers, for derivative checks."""
    from .worldmodel import sample_check_points

    gen = rng.generator()
    if bounds is None:
        spec = getattr(f, "spec", None)
        bounds = spec.bounds if spec is not None else ActionBounds.symmetric(np.full(f.action_dim, 0.1))
    zs, as_ = sample_check_points(f, horizon + 2, rng.fork(1))
    z_hist = zs[0]
    Z = zs[1:horizon + 1, -1]
    z_vid = np.concatenate([z_hist[-1:], zs[2:horizon + 2, -1]], axis=0)
    z_goal = zs[-1, -1] + 0.05 * gen.standard_normal(f.latent_dim)
    A = np.clip(as_[1:horizon + 1, -1], 0.98 * bounds.a_min, 0.98 * bounds.a_max)
    U = reparam_inverse(A, bounds)
    weights = WeightConfig(*gen.uniform(0.1, 10.0, size=3))
    prob = CollocationProblem(f, z_hist, as_[0, 1:], z_vid, z_goal, bounds, weights, metric)
    dual = DualState(gen.standard_normal((horizon, f.latent_dim)), float(gen.uniform(0.5, 20.0)))
    return prob, DecisionVars(Z, U), dual


def alm_gradient_check(f: LatentDynamics, samples: int, tol: float, rng: RngStream,
                       metric=AlignMetric.COSINE, horizon: int = 3, h: float = 1e-6):
    """Largest relative error between :func:`alm_gradients` and central differences."""
    from .worldmodel import GradCheckReport, _rel_err

    worst = 0.0
    for k in range(samples):
        prob, x, dual = random_problem(f, horizon, rng.fork(k), metric)
        gZ, gU = alm_gradients(prob, x, dual)
        x = x.copy()

        def value():
            return augmented_lagrangian(prob, x, dual)

        fZ = _fd_grad(value, x.Z, h)
        fU = _fd_grad(value, x.U, h)
        worst = max(worst, _rel_err(np.concatenate([gZ.ravel(), gU.ravel()]),
                                    np.concatenate([fZ.ravel(), fU.ravel()])))
    return GradCheckReport(worst, worst <= tol, samples)
