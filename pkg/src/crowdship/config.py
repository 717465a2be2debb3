"""Experiment configuration (TOML) and derived quantities."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np
import tomli
import tomli_w
from scipy.stats import norm

from .economics import FeeSchedule

POLICIES = ("neuradp+ddqn", "neuradp+fixed", "greedy+ddqn", "greedy+fixed")
POLICY_LABELS = {"neuradp+ddqn": "N+D", "neuradp+fixed": "N+F", "greedy+ddqn": "G+D", "greedy+fixed": "G+F"}

# Stand-in daily arrival shape, expected arrivals per hour over the 13 h day
# (the real curves are not available). Orders build towards an evening peak and
# stop two hours before closing; shippers are spread more evenly, so supply is
# loose early and tight at the order peak.
DEFAULT_ORDER_SHAPE = (6.0, 8.0, 10.0, 12.0, 14.0, 16.0, 18.0, 22.0, 28.0, 32.0, 30.0, 0.0, 0.0)
DEFAULT_SHIPPER_SHAPE = (30.0, 36.0, 42.0, 46.0, 46.0, 44.0, 40.0, 36.0, 32.0, 30.0, 30.0, 30.0, 28.0)


class ConfigError(ValueError):
    pass


@dataclass
class EnvConfig:
    horizon_minutes: int = 780
    delta: int = 5
    max_delay: int = 90              # D, minutes from order entry to deadline
    speed_kmh: float = 30.0
    num_locations: int = 988         # non-store locations
    radius_km: float = 6.0
    location_seed: int = 7
    locations_csv: str = ""
    orders_per_day: float = 215.0
    order_shipper_ratio: float = 0.45   # expected orders / expected shippers per day
    order_shape: tuple[float, ...] = DEFAULT_ORDER_SHAPE
    shipper_shape: tuple[float, ...] = DEFAULT_SHIPPER_SHAPE
    arrival_noise: float = 1.0
    order_cutoff_minutes: int = 120  # no new orders during the final two hours
    spatial_rate: float = 1.0
    spatial_eps: float = 0.01

    @property
    def num_epochs(self) -> int:
        return self.horizon_minutes // self.delta

    @property
    def cutoff_epoch(self) -> int:
        return (self.horizon_minutes - self.order_cutoff_minutes) // self.delta

    @property
    def max_epochs(self) -> int:
        return max(1, self.max_delay // self.delta)


@dataclass
class TrainConfig:
    episodes: int = 800
    lr: float = 1e-3
    batch_size: int = 32
    buffer_capacity: int = 50_000
    warmup: int = 1000
    priority_alpha: float = 0.6
    priority_beta: float = 0.4
    tau: float = 0.001
    epsilon_start: float = 1.0
    epsilon_decay: float = 0.995
    epsilon_min: float = 0.05
    softmax_temperature: float = 1.0
    noise_std: float = 0.5
    noise_decay: float = 0.995
    embed_dim: int = 10
    hidden: tuple[int, ...] = (300, 300, 300)
    precision: str = "float32"       # network parameter dtype
    train_pricing: bool = True
    train_matching: bool = True


@dataclass
class EvalConfig:
    days: int = 50
    repeats: int = 5
    seed: int = 20_000


@dataclass
class ExperimentConfig:
    env: EnvConfig = field(default_factory=EnvConfig)
    fees: FeeSchedule = field(default_factory=FeeSchedule)
    kappa: int = 1
    policy: str = "neuradp+ddqn"
    fixed_multiplier: float = 1.0
    seed: int = 0
    solver: str = "bnb"
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        e = self.env
        if e.delta <= 0 or e.horizon_minutes % e.delta:
            raise ConfigError(f"delta ({e.delta}) must divide the horizon ({e.horizon_minutes})")
        if e.max_delay <= 0 or e.speed_kmh <= 0:
            raise ConfigError("max_delay and speed_kmh must be positive")
        if len(e.order_shape) == 0 or len(e.shipper_shape) == 0:
            raise ConfigError("arrival shapes must be non-empty")
        if min(e.order_shape) < 0 or min(e.shipper_shape) < 0:
            raise ConfigError("arrival means must be non-negative")
        if e.order_shipper_ratio <= 0 or e.orders_per_day < 0:
            raise ConfigError("order_shipper_ratio must be positive and orders_per_day non-negative")
        if not 1 <= self.kappa <= 4:
            raise ConfigError(f"kappa must be in 1..4, got {self.kappa}")
        if self.policy not in POLICIES:
            raise ConfigError(f"unknown policy {self.policy!r}; choose from {', '.join(POLICIES)}")
        if self.fixed_multiplier not in self.fees.multipliers:
            raise ConfigError(f"fixed multiplier {self.fixed_multiplier} not in {self.fees.multipliers}")
        if self.train.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32 or float64, got {self.train.precision!r}")
        if self.solver not in ("bnb", "milp"):
            raise ConfigError(f"unknown solver {self.solver!r}")

    def replace(self, **changes) -> "ExperimentConfig":
        """Copy with dotted-path overrides, e.g. ``replace(**{"fees.base_fee": 3.0})``."""
        data = to_dict(self)
        for key, value in changes.items():
            node = data
            *parents, leaf = key.split(".")
            for p in parents:
                node = node[p]
            if leaf not in node:
                raise ConfigError(f"unknown config key {key!r}")
            node[leaf] = value
        return from_dict(data)


def _plain(value):
    if isinstance(value, tuple):
        return list(value)
    return value


def to_dict(cfg: ExperimentConfig) -> dict[str, Any]:
    def conv(obj):
        if dataclasses.is_dataclass(obj):
            return {f.name: conv(getattr(obj, f.name)) for f in fields(obj)}
        return _plain(obj)
    return conv(cfg)


def _build(cls, data: dict[str, Any]):
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown keys for {cls.__name__}: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = getattr(cls(), name) if cls is not ExperimentConfig else None
        if isinstance(default, tuple) or name in ("multipliers",):
            value = tuple(value)
        kwargs[name] = value
    return cls(**kwargs)


def from_dict(data: dict[str, Any]) -> ExperimentConfig:
    data = dict(data)
    sub = {"env": EnvConfig, "fees": FeeSchedule, "train": TrainConfig, "eval": EvalConfig}
    kwargs = {}
    for key, value in data.items():
        if key in sub:
            kwargs[key] = _build(sub[key], value)
        elif key in {f.name for f in fields(ExperimentConfig)}:
            kwargs[key] = value
        else:
            raise ConfigError(f"unknown top-level config key {key!r}")
    return ExperimentConfig(**kwargs)


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        return from_dict(tomli.load(fh))


def dump_config(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(to_dict(cfg))


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(dump_config(cfg))


# -- arrival rates -----------------------------------------------------------

def expected_rounded_count(mu, sigma: float = 1.0):
    """E[round(max(0, N(mu, sigma)))], summed over the integer support."""
    mu = np.asarray(mu, dtype=float)
    if sigma == 0:
        return np.maximum(0.0, np.round(mu))
    # P(count >= k) = P(X >= k - 0.5) for k >= 1
    ks = np.arange(1, int(np.ceil(mu.max(initial=0.0) + 10 * sigma)) + 2)
    return norm.sf((ks[None, :] - 0.5 - mu.reshape(-1, 1)) / sigma).sum(axis=1).reshape(mu.shape)


def _shape_per_epoch(shape: tuple[float, ...], env: EnvConfig) -> np.ndarray:
    """Linearly interpolate hourly means to epoch start times (per-epoch scale)."""
    hours = len(shape)
    span = env.horizon_minutes / hours
    mids = (np.arange(hours) + 0.5) * span
    t = np.arange(env.num_epochs) * env.delta
    return np.interp(t, mids, np.asarray(shape, dtype=float)) * env.delta / span


def _calibrate(shape_epoch: np.ndarray, target: float, sigma: float, active: np.ndarray) -> np.ndarray:
    """Scale the shape so the expected realised total over ``active`` epochs hits ``target``."""
    if target <= 0:
        return np.zeros_like(shape_epoch)
    base = shape_epoch[active]

    def total(s):
        return float(expected_rounded_count(s * base, sigma).sum())

    if total(0.0) >= target or base.sum() == 0:
        return np.zeros_like(shape_epoch)
    lo, hi = 0.0, 1.0
    while total(hi) < target:
        hi *= 2.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if total(mid) < target else (lo, mid)
    return np.where(active, 0.5 * (lo + hi) * shape_epoch, 0.0)


@dataclass(frozen=True)
class ArrivalProfile:
    order_means: np.ndarray
    shipper_means: np.ndarray
    sigma: float
    cutoff_epoch: int

    @classmethod
    def from_config(cls, env: EnvConfig) -> "ArrivalProfile":
        epochs = np.arange(env.num_epochs)
        order_active = epochs < env.cutoff_epoch
        orders = _calibrate(_shape_per_epoch(env.order_shape, env), env.orders_per_day,
                            env.arrival_noise, order_active)
        shippers = _calibrate(_shape_per_epoch(env.shipper_shape, env),
                              env.orders_per_day / env.order_shipper_ratio, env.arrival_noise,
                              np.ones(env.num_epochs, dtype=bool))
        return cls(orders, shippers, env.arrival_noise, env.cutoff_epoch)

    def expected_daily(self) -> tuple[float, float]:
        eo = expected_rounded_count(self.order_means[:self.cutoff_epoch], self.sigma).sum()
        es = expected_rounded_count(self.shipper_means, self.sigma).sum()
        return float(eo), float(es)
