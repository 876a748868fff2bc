"""Synthetic decoy-server link utilization under a Crossfire warm-up.

Each simulated network has ``n_servers`` decoy servers with Gaussian
background traffic.  An attack instance adds low-rate bot traffic to a random
subset of servers: a jittered linear ramp over the warm-up period followed by
a constant plateau at the peak rate.  Samples are one minute apart; rates are
in Kbps.  Only warm-up samples are labeled as attack.
"""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .seeding import derive_seed, make_rng

MEAN_RATE_RANGE = (100.0, 150.0)
STD_RATE_RANGE = (0.45, 2.45)
BOT_RATE_RANGE = (0.43, 2.2)


@dataclass(frozen=True)
class ScenarioConfig:
    n_servers: int = 80
    n_attacked: int = 80
    pre_len: int = 45
    warmup_len: int = 30
    plateau_len: int = 45
    n_instances: int = 6000
    master_seed: int = 20180601
    bots_min: int = 5
    bots_max: int = 20
    ramp_jitter: float = 0.25

    def __post_init__(self):
        if self.n_servers < 1:
            raise ValueError("n_servers must be positive")
        if not 0 <= self.n_attacked <= self.n_servers:
            raise ValueError(
                f"n_attacked={self.n_attacked} must lie in [0, n_servers={self.n_servers}]"
            )
        if self.warmup_len < 1:
            raise ValueError("warmup_len must be >= 1")
        if self.pre_len < 0 or self.plateau_len < 0:
            raise ValueError("pre_len and plateau_len must be >= 0")
        if self.n_instances < 0:
            raise ValueError("n_instances must be >= 0")
        if not 1 <= self.bots_min <= self.bots_max:
            raise ValueError("need 1 <= bots_min <= bots_max")
        if not 0.0 <= self.ramp_jitter < 1.0:
            raise ValueError("ramp_jitter must lie in [0, 1)")

    @property
    def n_samples(self) -> int:
        return self.pre_len + self.warmup_len + self.plateau_len

    @property
    def condition(self) -> str:
        """Tag such as ``"70/80"``."""
        return f"{self.n_attacked}/{self.n_servers}"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        return cls(**d)


@dataclass(frozen=True)
class ServerProfile:
    mean_rate: float
    std_rate: float

    def __post_init__(self):
        if not self.std_rate > 0:
            raise ValueError("std_rate must be positive")


@dataclass(frozen=True)
class AttackProfile:
    bot_rates: tuple[float, ...]

    @property
    def bots_per_server(self) -> int:
        return len(self.bot_rates)

    @property
    def peak_rate(self) -> float:
        return float(sum(self.bot_rates))


@dataclass(frozen=True)
class NormStats:
    global_min: float
    global_max: float

    def __post_init__(self):
        if not self.global_max > self.global_min:
            raise ValueError(
                f"degenerate normalization range [{self.global_min}, {self.global_max}]"
            )

    def to_dict(self) -> dict:
        return {"global_min": self.global_min, "global_max": self.global_max}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(float(d["global_min"]), float(d["global_max"]))


@dataclass
class UtilizationInstance:
    """One attack episode: ``values[t, s]`` in Kbps and per-sample labels."""

    values: np.ndarray
    labels: np.ndarray
    attacked_set: tuple[int, ...]
    instance_seed: int
    index: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def warmup_start(self) -> int | None:
        hits = np.flatnonzero(self.labels)
        return int(hits[0]) if hits.size else None

    @property
    def warmup_end(self) -> int | None:
        """One past the last warm-up sample."""
        hits = np.flatnonzero(self.labels)
        return int(hits[-1]) + 1 if hits.size else None


def warmup_labels(config: ScenarioConfig) -> np.ndarray:
    t = np.arange(config.n_samples)
    return (t >= config.pre_len) & (t < config.pre_len + config.warmup_len)


def draw_server_profiles(config: ScenarioConfig, seed: int) -> list[ServerProfile]:
    rng = make_rng(seed, "profiles")
    means = rng.uniform(*MEAN_RATE_RANGE, size=config.n_servers)
    stds = rng.uniform(*STD_RATE_RANGE, size=config.n_servers)
    return [ServerProfile(float(m), float(s)) for m, s in zip(means, stds)]


def sample_background(profile: ServerProfile, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` Gaussian background samples, clamped at zero."""
    if n < 0:
        raise ValueError("n must be >= 0")
    x = rng.normal(profile.mean_rate, profile.std_rate, size=n)
    return np.maximum(x, 0.0)


def draw_attack_profile(config: ScenarioConfig, rng: np.random.Generator) -> AttackProfile:
    n_bots = int(rng.integers(config.bots_min, config.bots_max + 1))
    rates = rng.uniform(*BOT_RATE_RANGE, size=n_bots)
    return AttackProfile(tuple(float(r) for r in rates))


def attack_ramp(
    profile: AttackProfile, warmup_len: int, jitter: float, rng: np.random.Generator
) -> np.ndarray:
    """Jittered linear ramp from ``peak/warmup_len`` up to exactly ``peak``.

    Step ``k`` is ``(k+1)/warmup_len * peak * (1 + u_k)`` with ``u_k`` uniform
    in ``[-jitter, jitter]``, clipped to ``[0, peak]``.  The last step carries no
    jitter.
    """
    if warmup_len < 1:
        raise ValueError("warmup_len must be >= 1")
    if not 0.0 <= jitter < 1.0:
        raise ValueError("jitter must lie in [0, 1)")
    peak = profile.peak_rate
    k = np.arange(warmup_len)
    u = rng.uniform(-jitter, jitter, size=warmup_len)
    u[-1] = 0.0
    ramp = (k + 1) / warmup_len * peak * (1.0 + u)
    ramp = np.clip(ramp, 0.0, peak)
    ramp[-1] = peak
    return ramp


def synthesize_instance(
    config: ScenarioConfig,
    profiles: list[ServerProfile],
    instance_seed: int,
    index: int = 0,
) -> UtilizationInstance:
    if len(profiles) != config.n_servers:
        raise ValueError(f"expected {config.n_servers} profiles, got {len(profiles)}")
    n, w0, w1 = config.n_samples, config.pre_len, config.pre_len + config.warmup_len

    means = np.array([p.mean_rate for p in profiles])
    stds = np.array([p.std_rate for p in profiles])
    values = make_rng(instance_seed, "background").normal(means, stds, size=(n, config.n_servers))
    np.maximum(values, 0.0, out=values)

    chooser = make_rng(instance_seed, "attacked")
    attacked = np.sort(chooser.choice(config.n_servers, size=config.n_attacked, replace=False))

    attack_rng = make_rng(instance_seed, "attack")
    for s in attacked:
        ap = draw_attack_profile(config, attack_rng)
        values[w0:w1, s] += attack_ramp(ap, config.warmup_len, config.ramp_jitter, attack_rng)
        values[w1:, s] += ap.peak_rate

    return UtilizationInstance(
        values=values.astype(np.float32),
        labels=warmup_labels(config),
        attacked_set=tuple(int(s) for s in attacked),
        instance_seed=int(instance_seed),
        index=index,
    )


def instance_seed(config: ScenarioConfig, index: int) -> int:
    return derive_seed(config.master_seed, "instance", index)


def _synth_chunk(args):
    config, profiles, indices = args
    return [synthesize_instance(config, profiles, instance_seed(config, i), i) for i in indices]


def synthesize_dataset(
    config: ScenarioConfig, n_jobs: int | None = None, order: list[int] | None = None
) -> list[UtilizationInstance]:
    """All ``config.n_instances`` instances, sorted by index.

    Instance ``i`` is seeded by ``derive_seed(master_seed, "instance", i)`` and
    the server profiles by ``derive_seed(master_seed, "profiles")``, so the
    result does not depend on ``order`` or on ``n_jobs``.  ``n_jobs`` defaults
    to ``$XFIRE_THREADS`` (or 1).
    """
    if n_jobs is None:
        n_jobs = int(os.environ.get("XFIRE_THREADS", "1") or 1)
    profiles = draw_server_profiles(config, config.master_seed)
    indices = list(range(config.n_instances)) if order is None else list(order)
    if sorted(indices) != list(range(config.n_instances)):
        raise ValueError("order must be a permutation of range(n_instances)")

    if n_jobs <= 1 or len(indices) < 2 * n_jobs:
        out = _synth_chunk((config, profiles, indices))
    else:
        chunks = [indices[i::n_jobs] for i in range(n_jobs)]
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            out = [inst for part in ex.map(_synth_chunk, [(config, profiles, c) for c in chunks]) for inst in part]
    return sorted(out, key=lambda inst: inst.index)


def compute_minmax(instances: list[UtilizationInstance]) -> NormStats:
    if not instances:
        raise ValueError("cannot compute normalization stats of an empty set")
    lo = min(float(inst.values.min()) for inst in instances)
    hi = max(float(inst.values.max()) for inst in instances)
    return NormStats(lo, hi)


def normalize_values(values: np.ndarray, stats: NormStats) -> np.ndarray:
    # deliberately unclamped: held-out data may fall outside [0, 1]
    v = np.asarray(values, dtype=np.float64)
    return (v - stats.global_min) / (stats.global_max - stats.global_min)


def denormalize_values(values: np.ndarray, stats: NormStats) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    return v * (stats.global_max - stats.global_min) + stats.global_min


def normalize(instance: UtilizationInstance, stats: NormStats) -> UtilizationInstance:
    return UtilizationInstance(
        values=normalize_values(instance.values, stats),
        labels=instance.labels,
        attacked_set=instance.attacked_set,
        instance_seed=instance.instance_seed,
        index=instance.index,
        meta={**instance.meta, "normalized": True},
    )
