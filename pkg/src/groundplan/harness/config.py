"""TOML campaign configuration with strict key checking.

Every section maps onto a frozen dataclass; unknown sections or keys, wrong
value types and invalid values raise :class:`ConfigError`.
"""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from ..baselines import CemConfig, GdConfig
from ..collocation import ActionParam, AdamHyper, AlignMetric, SolverConfig
from ..core import WeightConfig
from ..envs import EnvKind
from ..executor import DEFAULT_REFINE_STD, MpcConfig
from ..videoplan import parse_source

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    """Invalid or unreadable configuration."""


METHODS = ("GVPWM", "MPC_CEM", "MPC_GD", "UNIPI")


@dataclass(frozen=True)
class CampaignSection:
    env: str = "wallnav"
    horizons: tuple = (25,)
    sources: tuple = ("ORACLE",)
    methods: tuple = ("GVPWM", "UNIPI")
    episodes: int = 50
    seed: int = 0
    presets: bool = False


@dataclass(frozen=True)
class WorldModelSection:
    kind: str = "analytic"
    beta: float = 200.0
    latent_dim: int = 0          # 0 -> 8 for wallnav, 12 for pushtoy
    history: int = 0             # 0 -> 1 analytic, 3 mlp
    train_samples: int = 4000
    train_epochs: int = 200


@dataclass(frozen=True)
class SolverSection:
    lambda_v: float = 1.0
    lambda_g: float = 10.0
    lambda_r: float = 0.05
    inner_iters: int = 25
    outer_iters: int = 25
    rho0: float = 1.0
    gamma: float = 1.9
    rho_max: float = 1e4
    lr: float = 0.1
    lr_decay: float = 0.8
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    metric: str = "cosine"
    action_param: str = "tanh"
    tau_dyn: float = 1e-3


@dataclass(frozen=True)
class MpcSection:
    K: object = 1                # integer, or "T" for open loop
    refine: bool = True
    samples: int = 500
    sigma: float = DEFAULT_REFINE_STD


@dataclass(frozen=True)
class CemSection:
    population: int = 300
    elites: int = 30
    iterations: int = 10
    init_std: float = 0.0        # 0 -> half of a_max
    std_floor: float = 0.01


@dataclass(frozen=True)
class GdSection:
    iterations: int = 100
    lr: float = 0.1


@dataclass(frozen=True)
class CorruptionSection:
    teleport_back: int = 0
    teleport_ahead: int = 3
    drift_sigma0: float = 0.05
    drift_growth: float = 1.1


@dataclass(frozen=True)
class ReportSection:
    timing: bool = False


@dataclass(frozen=True)
class HarnessConfig:
    campaign: CampaignSection = field(default_factory=CampaignSection)
    world_model: WorldModelSection = field(default_factory=WorldModelSection)
    solver: SolverSection = field(default_factory=SolverSection)
    mpc: MpcSection = field(default_factory=MpcSection)
    cem: CemSection = field(default_factory=CemSection)
    gd: GdSection = field(default_factory=GdSection)
    corruption: CorruptionSection = field(default_factory=CorruptionSection)
    report: ReportSection = field(default_factory=ReportSection)

    # ---- derived objects -------------------------------------------------

    @property
    def env_kind(self) -> EnvKind:
        return EnvKind(self.campaign.env)

    def solver_config(self, horizon: int | None = None) -> SolverConfig:
        s = self.solver
        cfg = SolverConfig(
            weights=WeightConfig(s.lambda_v, s.lambda_g, s.lambda_r),
            inner_iters=s.inner_iters,
            outer_iters=s.outer_iters,
            rho0=s.rho0,
            gamma=s.gamma,
            rho_max=s.rho_max,
            adam=AdamHyper(s.lr, s.beta1, s.beta2, s.adam_eps),
            metric=AlignMetric(s.metric),
            tau_dyn=s.tau_dyn,
            action_param=ActionParam(s.action_param),
            lr_decay=s.lr_decay,
        )
        if self.campaign.presets and horizon is not None:
            cfg = apply_presets(cfg, self.env_kind, horizon)
        return cfg

    def mpc_config(self) -> MpcConfig:
        m = self.mpc
        K = None if m.K == "T" else m.K
        return MpcConfig(K=K, refine=m.refine, C=m.samples, sigma=m.sigma)

    def cem_config(self) -> CemConfig:
        c = self.cem
        return CemConfig(c.population, c.elites, c.iterations, c.init_std or None, c.std_floor)

    def gd_config(self) -> GdConfig:
        return GdConfig(self.gd.iterations, AdamHyper(lr=self.gd.lr))

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            sec = asdict(getattr(self, f.name))
            out[f.name] = {k: list(v) if isinstance(v, tuple) else v for k, v in sec.items()}
        return out


def apply_presets(cfg: SolverConfig, env: EnvKind, horizon: int) -> SolverConfig:
    """Per-environment, per-horizon overrides used for the published settings:
    WallNav at T=25 uses gamma=1.5, PushToy at T>=50 uses lambda_r=0.1."""
    if env is EnvKind.WALLNAV and horizon == 25:
        return replace(cfg, gamma=1.5)
    if env is EnvKind.PUSHTOY and horizon >= 50:
        return replace(cfg, weights=replace(cfg.weights, lambda_r=0.1))
    return cfg


_SECTIONS = {f.name: f.default_factory for f in fields(HarnessConfig)}


def _coerce(section: str, key: str, default, value):
    where = f"[{section}].{key}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be a boolean")
        return value
    if isinstance(default, int) and key != "K":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{where} must be an array")
        return tuple(value)
    if key == "K":
        if value == "T" or (isinstance(value, int) and not isinstance(value, bool)):
            return value
        raise ConfigError(f"{where} must be a positive integer or \"T\"")
    return value


def config_from_dict(data: dict) -> HarnessConfig:
    sections = {}
    for name, body in data.items():
        if name not in _SECTIONS:
            raise ConfigError(f"unknown section [{name}]")
        if not isinstance(body, dict):
            raise ConfigError(f"[{name}] must be a table")
        default = _SECTIONS[name]()
        known = {f.name: getattr(default, f.name) for f in fields(default)}
        values = {}
        for key, value in body.items():
            if key not in known:
                raise ConfigError(f"unknown key '{key}' in [{name}]")
            values[key] = _coerce(name, key, known[key], value)
        sections[name] = replace(default, **values)
    cfg = HarnessConfig(**sections)
    validate(cfg)
    return cfg


def validate(cfg: HarnessConfig) -> None:
    c = cfg.campaign
    try:
        EnvKind(c.env)
    except ValueError:
        raise ConfigError(f"[campaign].env must be one of {[k.value for k in EnvKind]}") from None
    if c.episodes < 1:
        raise ConfigError("[campaign].episodes must be >= 1")
    if not c.horizons or any(not isinstance(T, int) or T < 1 for T in c.horizons):
        raise ConfigError("[campaign].horizons must be positive integers")
    for tag in c.sources:
        try:
            parse_source(tag)
        except ValueError as exc:
            raise ConfigError(f"[campaign].sources: {exc}") from None
    for m in c.methods:
        if m not in METHODS:
            raise ConfigError(f"[campaign].methods: unknown method {m!r}; expected one of {METHODS}")
    if cfg.world_model.kind not in ("analytic", "mlp"):
        raise ConfigError("[world_model].kind must be 'analytic' or 'mlp'")
    if cfg.mpc.K != "T" and cfg.mpc.K < 1:
        raise ConfigError("[mpc].K must be >= 1 or \"T\"")
    try:
        cfg.solver_config()
        cfg.mpc_config()
        cfg.cem_config()
        cfg.gd_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    k = cfg.corruption
    if k.teleport_back < 0 or k.teleport_ahead < 1 or k.drift_sigma0 < 0 or k.drift_growth < 1:
        raise ConfigError("[corruption] needs teleport_back >= 0, teleport_ahead >= 1, "
                          "drift_sigma0 >= 0, drift_growth >= 1")


def load_config(path) -> HarnessConfig:
    p = Path(path)
    try:
        raw = p.read_bytes()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {p}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read config file {p}: {exc}") from None
    try:
        data = tomllib.loads(raw.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{p}: {exc}") from None
    return config_from_dict(data)
