"""Experiment configuration: YAML in, validated dataclasses out.

Unknown keys are rejected rather than ignored so a typo cannot silently
run the default. validate() raises ConfigError with the offending field
in the message; the CLI maps that to exit code 2.
"""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field, fields
from typing import Any

import yaml

from .cost import DeviceProfile
from .mobility import LAMBDA_BUCKETS
from .partition import ClassifierCandidate, MemoryBudget
from .selection import SelectionParams

STRATEGIES = ("partitioned", "ucd_only", "ap_only")
PRETRAIN_MODES = ("none", "clean", "label_shuffle")
POLICIES = ("smallest_feasible", "largest_feasible")


class ConfigError(Exception):
    """Invalid experiment configuration; message names the field."""


@dataclass
class DatasetConfig:
    classes: int = 10
    per_class: int = 200
    dim: int = 32
    spread: float = 1.5  # tuned so a frozen random encoder caps out near 75%
    test_fraction: float = 0.2
    pretrain_fraction: float = 0.2
    lda_alpha: float = 1000.0
    csv_path: str | None = None


@dataclass
class FederationConfig:
    num_clients: int = 20
    participation_fraction: float = 0.8
    rounds: int = 40  # communication rounds; the partitioned strategy runs rounds/2 iterations
    epochs: int = 3
    batch_size: int = 64
    lr: float = 0.2
    weighted_fedavg: bool = False


@dataclass
class SelectionConfig:
    alpha: float = 5.0
    beta: float = 3.0
    gamma: float = 0.0
    queue_capacity: int = 64  # small queue keeps the loss CDF fresh as the model improves
    warmup_min: int = 32


@dataclass
class ModelConfig:
    encoder_widths: list[int] = field(default_factory=lambda: [64, 64])
    classifier_candidates: list[list[int]] = field(default_factory=lambda: [[], [64], [128]])
    memory_budget_bytes: int = 20000
    bytes_per_param: int = 4
    policy: str = "largest_feasible"
    backward_multiplier: float = 2.0
    pretrain_mode: str = "label_shuffle"
    pretrain_epochs: int = 20


@dataclass
class ProfileConfig:
    cpu_freq_hz: float
    storage_bytes: int
    compute_power_w: float
    uplink_bps: float
    downlink_bps: float
    comm_power_w: float
    disconnect_prob: float
    instr_per_mac: float = 2.0

    def to_profile(self, name: str) -> DeviceProfile:
        return DeviceProfile(name=name, **asdict(self))


def _default_ucd() -> ProfileConfig:
    return ProfileConfig(
        cpu_freq_hz=100e6, storage_bytes=5 * 2**20, compute_power_w=0.005,
        uplink_bps=2e6, downlink_bps=2e6, comm_power_w=0.0001, disconnect_prob=0.5,
    )


def _default_ap() -> ProfileConfig:
    return ProfileConfig(
        cpu_freq_hz=2000e6, storage_bytes=4096 * 2**20, compute_power_w=3.0,
        uplink_bps=10e6, downlink_bps=100e6, comm_power_w=10.0, disconnect_prob=0.0,
    )


@dataclass
class DevicesConfig:
    sample_bytes: int = 30_000
    ucd: ProfileConfig = field(default_factory=_default_ucd)
    ap: ProfileConfig = field(default_factory=_default_ap)


@dataclass
class MobilityConfig:
    enabled: bool = False
    n_slots: int = 5
    n_locations: int = 3
    lambda_bucket: str = "high"


@dataclass
class RunConfig:
    strategies: list[str] = field(default_factory=lambda: list(STRATEGIES))
    seeds: list[int] = field(default_factory=lambda: [0])
    outdir: str = "runs"
    workers: int = 1


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    federation: FederationConfig = field(default_factory=FederationConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    devices: DevicesConfig = field(default_factory=DevicesConfig)
    mobility: MobilityConfig = field(default_factory=MobilityConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def selection_params(self) -> SelectionParams:
        s = self.selection
        return SelectionParams(alpha=s.alpha, beta=s.beta, gamma=s.gamma,
                               warmup_min=s.warmup_min)

    def memory_budget(self) -> MemoryBudget:
        return MemoryBudget(available_bytes=self.model.memory_budget_bytes,
                            bytes_per_param=self.model.bytes_per_param)

    def classifier_candidates(self) -> list[ClassifierCandidate]:
        return [ClassifierCandidate(hidden_widths=list(w), output_classes=self.dataset.classes)
                for w in self.model.classifier_candidates]


def _build(cls, raw: Any, path: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(raw).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = set(raw) - set(known)
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, f in known.items():
        if name not in raw:
            continue
        value = raw[name]
        sub = {"dataset": DatasetConfig, "federation": FederationConfig,
               "selection": SelectionConfig, "model": ModelConfig,
               "devices": DevicesConfig, "mobility": MobilityConfig,
               "run": RunConfig, "ucd": ProfileConfig, "ap": ProfileConfig}.get(name)
        kwargs[name] = _build(sub, value, f"{path}.{name}" if path else name) if sub else value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from None


def from_dict(raw: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, raw or {}, "")


def to_dict(cfg: ExperimentConfig) -> dict:
    return asdict(cfg)


def load(path: str) -> ExperimentConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if raw is None:
        raw = {}
    cfg = from_dict(raw)
    validate(cfg)
    return cfg


def dumps(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=True)


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(dumps(cfg).encode()).hexdigest()[:16]


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def validate(cfg: ExperimentConfig) -> None:
    d, f, s, m = cfg.dataset, cfg.federation, cfg.selection, cfg.model
    _require(d.classes >= 2, "dataset.classes: need at least 2")
    _require(d.per_class >= 1, "dataset.per_class: need at least 1")
    _require(d.dim >= 1, "dataset.dim: need at least 1")
    _require(d.spread >= 0, "dataset.spread: must be non-negative")
    _require(0 < d.test_fraction < 1, "dataset.test_fraction: must be in (0, 1)")
    _require(0 <= d.pretrain_fraction < 1, "dataset.pretrain_fraction: must be in [0, 1)")
    _require(d.test_fraction + d.pretrain_fraction < 1,
             "dataset: test_fraction + pretrain_fraction must leave training data")
    _require(d.lda_alpha > 0, "dataset.lda_alpha: must be positive")

    _require(f.num_clients >= 1, "federation.num_clients: need at least 1")
    _require(0 < f.participation_fraction <= 1,
             "federation.participation_fraction: must be in (0, 1]")
    _require(round(f.num_clients * f.participation_fraction) >= 1,
             "federation.participation_fraction: rounds to zero clients per round")
    _require(f.rounds >= 1, "federation.rounds: need at least 1")
    _require(f.epochs >= 1, "federation.epochs: need at least 1")
    _require(f.batch_size >= 1, "federation.batch_size: need at least 1")
    _require(f.lr > 0, "federation.lr: must be positive")

    _require(s.alpha >= 0 and s.beta >= 0 and s.gamma >= 0,
             "selection: alpha, beta, gamma must be non-negative")
    _require(s.queue_capacity >= 1, "selection.queue_capacity: need at least 1")
    _require(1 <= s.warmup_min <= s.queue_capacity,
             "selection.warmup_min: must be in [1, queue_capacity]")

    _require(len(m.encoder_widths) >= 1, "model.encoder_widths: need at least one layer")
    _require(all(w >= 1 for w in m.encoder_widths),
             "model.encoder_widths: widths must be positive")
    _require(len(m.classifier_candidates) >= 1,
             "model.classifier_candidates: need at least one candidate")
    _require(all(all(w >= 1 for w in c) for c in m.classifier_candidates),
             "model.classifier_candidates: hidden widths must be positive")
    _require(m.memory_budget_bytes >= 1, "model.memory_budget_bytes: must be positive")
    _require(m.bytes_per_param >= 1, "model.bytes_per_param: must be positive")
    _require(m.policy in POLICIES, f"model.policy: must be one of {POLICIES}")
    _require(m.backward_multiplier > 0, "model.backward_multiplier: must be positive")
    _require(m.pretrain_mode in PRETRAIN_MODES,
             f"model.pretrain_mode: must be one of {PRETRAIN_MODES}")
    _require(m.pretrain_epochs >= 0, "model.pretrain_epochs: must be non-negative")

    _require(cfg.devices.sample_bytes >= 1, "devices.sample_bytes: must be positive")
    for tier in ("ucd", "ap"):
        try:
            getattr(cfg.devices, tier).to_profile(tier)
        except ValueError as exc:
            raise ConfigError(f"devices.{tier}: {exc}") from None

    mb = cfg.mobility
    _require(mb.n_slots >= 1, "mobility.n_slots: need at least 1")
    _require(mb.n_locations >= 1, "mobility.n_locations: need at least 1")
    _require(mb.lambda_bucket in LAMBDA_BUCKETS,
             f"mobility.lambda_bucket: must be one of {sorted(LAMBDA_BUCKETS)}")

    r = cfg.run
    _require(len(r.strategies) >= 1, "run.strategies: need at least one")
    for st in r.strategies:
        _require(st in STRATEGIES, f"run.strategies: unknown strategy {st!r}")
    _require("partitioned" not in r.strategies or f.rounds % 2 == 0,
             "federation.rounds: must be even for the partitioned strategy "
             "(each iteration spends two communication rounds)")
    _require(len(r.seeds) >= 1, "run.seeds: need at least one seed")
    _require(all(isinstance(x, int) for x in r.seeds), "run.seeds: seeds must be integers")
    _require(r.workers >= 1, "run.workers: need at least 1")
