"""Independent checks used by the ``gradcheck`` and ``oracle-lq`` commands."""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from ..collocation import (
    AdamHyper,
    AlignMetric,
    CollocationProblem,
    DecisionVars,
    SolverConfig,
    alm_gradient_check,
    alm_solve,
)
from ..core import ActionBounds, RngStream, WeightConfig
from ..envs import EnvSpec
from ..worldmodel import AnalyticConjugate, Encoder, LearnedMLP, gradient_check

# Tighter primal schedule for linear-quadratic instances: a smaller step that
# shrinks geometrically per outer iteration, so the Adam iterates settle
# instead of hovering at the step-size scale around the optimum.
LQ_SOLVER = SolverConfig(
    inner_iters=200,
    outer_iters=30,
    gamma=1.5,
    adam=AdamHyper(lr=0.1),
    lr_decay=0.75,
    metric=AlignMetric.MSE,
)

LQ_ACTION_BOUND = 5.0


@dataclass
class LqInstance:
    F: np.ndarray
    G: np.ndarray
    z0: np.ndarray
    z_goal: np.ndarray
    z_vid: np.ndarray   # (T+1, d)
    weights: WeightConfig

    @property
    def horizon(self) -> int:
        return self.z_vid.shape[0] - 1


def random_lq_instance(rng: RngStream) -> LqInstance:
    gen = rng.generator()
    d = int(gen.integers(1, 4))
    m = int(gen.integers(1, 3))
    T = int(gen.integers(2, 6))
    F = np.eye(d) + 0.1 * gen.standard_normal((d, d))
    G = 0.5 * gen.standard_normal((d, m))
    w = WeightConfig(float(gen.uniform(0.0, 1.0)), float(gen.uniform(1.0, 10.0)), float(gen.uniform(0.05, 0.5)))
    return LqInstance(F, G, gen.standard_normal(d), gen.standard_normal(d), gen.standard_normal((T + 1, d)), w)


def kkt_solve(inst: LqInstance, multipliers: bool = False):
    """Solve the equality-constrained quadratic program through its KKT system.

    Variables are ``z_1..z_T`` then ``a_0..a_{T-1}``; the cost is the MSE
    video term on ``z_1..z_{T-1}``, MSE goal term on ``z_T`` and action energy.
    With ``multipliers`` the constraint multipliers (T, d) are returned too, in
    the sign convention of ``lambda . (z_{k+1} - F z_k - G a_k)``.
    """
    F, G, w = inst.F, inst.G, inst.weights
    d, m = G.shape
    T = inst.horizon
    nz, na = T * d, T * m
    n = nz + na
    Q = np.zeros((n, n))
    c = np.zeros(n)
    for k in range(1, T):
        sl = slice((k - 1) * d, k * d)
        Q[sl, sl] += 2.0 * w.lambda_v / d * np.eye(d)
        c[sl] -= 2.0 * w.lambda_v / d * inst.z_vid[k]
    sl = slice((T - 1) * d, T * d)
    Q[sl, sl] += 2.0 * w.lambda_g / d * np.eye(d)
    c[sl] -= 2.0 * w.lambda_g / d * inst.z_goal
    Q[nz:, nz:] += 2.0 * w.lambda_r * np.eye(na)
    Aeq = np.zeros((nz, n))
    beq = np.zeros(nz)
    for k in range(T):
        rows = slice(k * d, (k + 1) * d)
        Aeq[rows, k * d:(k + 1) * d] = np.eye(d)
        if k > 0:
            Aeq[rows, (k - 1) * d:k * d] = -F
        else:
            beq[rows] = F @ inst.z0
        Aeq[rows, nz + k * m:nz + (k + 1) * m] = -G
    K = np.block([[Q, Aeq.T], [Aeq, np.zeros((nz, nz))]])
    sol = np.linalg.solve(K, np.concatenate([-c, beq]))
    Z, A = sol[:nz].reshape(T, d), sol[nz:n].reshape(T, m)
    if multipliers:
        return Z, A, sol[n:].reshape(T, d)
    return Z, A


def alm_on_instance(inst: LqInstance, cfg: SolverConfig = LQ_SOLVER, bound: float = LQ_ACTION_BOUND):
    """Solve the instance with the collocation solver; ``bound`` should leave the
    unconstrained optimum well inside the tanh range."""
    from ..worldmodel import LinearDynamics

    d, m = inst.G.shape
    T = inst.horizon
    prob = CollocationProblem(LinearDynamics(inst.F, inst.G), inst.z0[None], np.zeros((0, m)), inst.z_vid,
                              inst.z_goal, ActionBounds.symmetric(np.full(m, bound)), inst.weights,
                              AlignMetric.MSE)
    res = alm_solve(prob, DecisionVars(inst.z_vid[1:].copy(), np.zeros((T, m))), replace(cfg, weights=inst.weights))
    return res.Z, res.A


@dataclass
class OracleReport:
    name: str
    value: float
    tol: float
    passed: bool
    seconds: float
    detail: str = ""

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"{verdict} {self.name}: {self.value:.3e} (tol {self.tol:g}, {self.seconds:.1f}s) {self.detail}".rstrip()


def lq_oracle(n: int = 12, seed: int = 0, tol: float = 1e-3) -> OracleReport:
    """Largest per-variable gap between ALM and the KKT solution over ``n`` instances."""
    t0 = time.perf_counter()
    root = RngStream(seed, 0x1A)
    worst = 0.0
    for k in range(n):
        inst = random_lq_instance(root.fork(k))
        Zs, As = kkt_solve(inst)
        # keep the action bounds inactive: the optimum stays within a third of the range
        bound = max(LQ_ACTION_BOUND, 3.0 * float(np.max(np.abs(As))))
        Z, A = alm_on_instance(inst, bound=bound)
        worst = max(worst, float(np.max(np.abs(Z - Zs))), float(np.max(np.abs(A - As))))
    return OracleReport("oracle-lq", worst, tol, worst <= tol, time.perf_counter() - t0, f"instances={n}")


def gradient_suite(samples: int = 50, seed: int = 0) -> list[OracleReport]:
    """Jacobian and augmented-Lagrangian gradient checks for every dynamics kind."""
    root = RngStream(seed, 0x6C)
    reports = []
    models = []
    for k, (spec, d) in enumerate([(EnvSpec.wallnav(), 8), (EnvSpec.pushtoy(), 12)]):
        E = Encoder.random(spec.obs_dim, d, root.fork(10 + k))
        models.append((f"analytic-{spec.kind.value}", AnalyticConjugate(spec, E), 1e-4))
    models.append(("mlp", LearnedMLP.initialize(3, 8, 2, root.fork(20)), 1e-3))
    for j, (name, f, tol) in enumerate(models):
        t0 = time.perf_counter()
        rep = gradient_check(f, samples, tol, root.fork(100 + j))
        reports.append(OracleReport(f"jacobians[{name}]", rep.max_rel_err, tol, rep.passed,
                                    time.perf_counter() - t0, f"points={samples}"))
        for metric in AlignMetric:
            t0 = time.perf_counter()
            rep = alm_gradient_check(f, samples, tol, root.fork(200 + 10 * j + len(reports)), metric)
            reports.append(OracleReport(f"alm_gradients[{name},{metric.value}]", rep.max_rel_err, tol, rep.passed,
                                        time.perf_counter() - t0, f"points={samples}"))
    return reports
