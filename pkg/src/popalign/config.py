"""Experiment configuration: YAML files with preset inheritance and full validation."""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from .errors import ConfigurationError

PRESETS = ("desk", "setting1", "setting2", "setting3", "setting4", "mnist")


@dataclass
class DataConfig:
    source: str = "synthetic"
    n_classes: int = 5
    per_class: int = 500
    test_per_class: int = 200
    n_features: int = 20
    separation: float = 1.0
    noise: float = 1.0
    train_images: str | None = None
    train_labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    # per-class keep fraction range for a globally imbalanced population
    imbalance: list[float] | None = None
    # share of the raw training data held back as the attacker's public pool
    public_fraction: float = 0.01


@dataclass
class ModelConfig:
    hidden: list[int] = field(default_factory=lambda: [32])
    activation: str = "tanh"


@dataclass
class PartitionConfig:
    n_clients: int = 10
    alpha: float = 1.0


@dataclass
class TrainingConfig:
    clients_per_round: int = 10
    local_steps: int = 1
    local_lr: float = 0.1
    batch_size: int | None = None


@dataclass
class DefenseSettings:
    kind: str = "none"
    dp_epsilon: float = 50.0
    dp_delta: float = 1e-5
    clip_bound: Any = "median"
    history_depth: int | None = None
    foolsgold_variant: str = "full"


@dataclass
class TriggerSettings:
    # explicit feature indices; None uses the default corner block / first features
    region: list[int] | None = None
    size: int = 4
    # None writes the largest feature value seen in the training data
    value: float | None = None
    target_label: int = 0


@dataclass
class PoisonSettings:
    poisoned_per_batch: int = 40
    batch_size: int = 128
    epochs: int = 10
    lr: float = 0.05
    gamma: Any = "K"


@dataclass
class EvolutionSettings:
    population_size: int = 20
    nfe_budget: int = 400
    crossover_rate: float = 0.9
    mutation_rate: float = 0.3
    mutation_scale: float = 0.05


@dataclass
class AugmentationSettings:
    theta: float = 0.8
    max_growth: float = 4.0
    batch_size: int | None = None
    max_shift: float = 2.0
    max_rotation: float = 15.0
    max_shear: float = 0.1
    zoom_range: list[float] = field(default_factory=lambda: [0.9, 1.1])
    jitter_scale: float = 0.3


@dataclass
class AttackSettings:
    enabled: bool = True
    aligned_fraction: float = 0.0
    aligned_clients: list[int] | None = None
    inference_client: int | None = None
    inference_rounds: list[int] = field(default_factory=list)
    injection_round: int | None = None
    injection_client: int | None = None
    aux_size: int | None = None
    trigger: TriggerSettings = field(default_factory=TriggerSettings)
    poison: PoisonSettings = field(default_factory=PoisonSettings)
    evolution: EvolutionSettings = field(default_factory=EvolutionSettings)
    augmentation: AugmentationSettings = field(default_factory=AugmentationSettings)


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    rounds: int = 30
    output_dir: str = "results"
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    defense: DefenseSettings = field(default_factory=DefenseSettings)
    attack: AttackSettings = field(default_factory=AttackSettings)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> list[str]:
        return validate(self)


# ------------------------------------------------------------ loading


def _build(cls, raw: dict, path: str, errors: list[str]):
    if not isinstance(raw, dict):
        errors.append(f"{path or '<root>'}: expected a mapping")
        return cls()
    kwargs = {}
    known = {f.name: f for f in dataclasses.fields(cls)}
    for key, value in raw.items():
        where = f"{path}.{key}" if path else key
        if key not in known:
            errors.append(f"{where}: unknown field")
            continue
        default = known[key].default_factory() if known[key].default_factory is not dataclasses.MISSING else known[key].default
        if dataclasses.is_dataclass(default):
            kwargs[key] = _build(type(default), value or {}, where, errors)
        else:
            kwargs[key] = value
    return cls(**kwargs)


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def preset_dict(name: str, _seen: tuple[str, ...] = ()) -> dict:
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    if name in _seen:
        raise ConfigurationError(f"preset cycle through {name!r}")
    text = resources.files("popalign.presets").joinpath(f"{name}.yaml").read_text()
    return resolve_inheritance(yaml.safe_load(text) or {}, _seen + (name,))


def resolve_inheritance(raw: dict, _seen: tuple[str, ...] = ()) -> dict:
    raw = dict(raw)
    parent = raw.pop("preset", None)
    if parent is None:
        return raw
    return deep_merge(preset_dict(parent, _seen), raw)


def config_from_dict(raw: dict) -> tuple[ExperimentConfig, list[str]]:
    errors: list[str] = []
    cfg = _build(ExperimentConfig, resolve_inheritance(raw), "", errors)
    return cfg, errors + validate(cfg)


def load_config(path: str | Path | None = None, preset: str | None = None, overrides: dict | None = None):
    """Resolve a config file (and/or a named preset) into a validated config.

    Returns ``(config, violations)``; the config is unusable if violations is
    non-empty.  File fields override the preset's.
    """
    raw: dict = {}
    if preset is not None:
        raw = preset_dict(preset)
    if path is not None:
        text = Path(path).read_text()
        try:
            loaded = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            return ExperimentConfig(), [f"<file>: YAML error: {exc}"]
        if not isinstance(loaded, dict):
            return ExperimentConfig(), ["<root>: expected a mapping"]
        raw = deep_merge(raw, resolve_inheritance(loaded))
    if overrides:
        raw = deep_merge(raw, overrides)
    return config_from_dict(raw)


# ------------------------------------------------------------ validation


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _is_num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def validate(cfg: ExperimentConfig) -> list[str]:
    """Every constraint violation, each prefixed by its field path."""
    e: list[str] = []

    def need(cond, path, msg):
        if not cond:
            e.append(f"{path}: {msg}")

    need(_is_int(cfg.seed) and cfg.seed >= 0, "seed", "must be a non-negative integer")
    need(_is_int(cfg.rounds) and cfg.rounds >= 1, "rounds", "must be an integer >= 1")

    d = cfg.data
    need(d.source in ("synthetic", "idx"), "data.source", "must be 'synthetic' or 'idx'")
    need(_is_int(d.n_classes) and d.n_classes >= 2, "data.n_classes", "must be an integer >= 2")
    if d.source == "synthetic":
        need(_is_int(d.per_class) and d.per_class >= 1, "data.per_class", "must be >= 1")
        need(_is_int(d.test_per_class) and d.test_per_class >= 1, "data.test_per_class", "must be >= 1")
        need(_is_int(d.n_features) and d.n_features >= 1, "data.n_features", "must be >= 1")
        need(_is_num(d.separation) and d.separation >= 0, "data.separation", "must be >= 0")
        need(_is_num(d.noise) and d.noise > 0, "data.noise", "must be > 0")
    else:
        for f in ("train_images", "train_labels", "test_images", "test_labels"):
            need(getattr(d, f) is not None, f"data.{f}", "required for idx sources")
    if d.imbalance is not None:
        ok = isinstance(d.imbalance, list) and len(d.imbalance) == 2 and all(_is_num(x) for x in d.imbalance)
        need(ok and 0 < d.imbalance[0] <= d.imbalance[1] <= 1, "data.imbalance", "must be [lo, hi] with 0 < lo <= hi <= 1")
    need(_is_num(d.public_fraction) and 0 <= d.public_fraction < 1, "data.public_fraction", "must lie in [0, 1)")

    m = cfg.model
    need(isinstance(m.hidden, list) and all(_is_int(h) and h >= 1 for h in m.hidden), "model.hidden", "must be a list of positive integers")
    need(m.activation in ("tanh", "sigmoid", "relu"), "model.activation", "must be tanh, sigmoid or relu")

    p = cfg.partition
    n_ok = _is_int(p.n_clients) and p.n_clients >= 1
    need(n_ok, "partition.n_clients", "must be an integer >= 1")
    need(_is_num(p.alpha) and p.alpha > 0, "partition.alpha", "must be > 0")
    n_clients = p.n_clients if n_ok else None

    t = cfg.training
    need(_is_int(t.clients_per_round) and t.clients_per_round >= 1, "training.clients_per_round", "must be an integer >= 1")
    if n_clients is not None and _is_int(t.clients_per_round):
        need(t.clients_per_round <= n_clients, "training.clients_per_round",
             f"K={t.clients_per_round} exceeds partition.n_clients N={n_clients}")
    need(_is_int(t.local_steps) and t.local_steps >= 1, "training.local_steps", "must be >= 1")
    need(_is_num(t.local_lr) and t.local_lr > 0, "training.local_lr", "must be > 0")
    need(t.batch_size is None or (_is_int(t.batch_size) and t.batch_size >= 1), "training.batch_size", "must be null or >= 1")

    df = cfg.defense
    need(df.kind in ("none", "foolsgold", "local_dp"), "defense.kind", "must be none, foolsgold or local_dp")
    need(_is_num(df.dp_epsilon) and df.dp_epsilon > 0, "defense.dp_epsilon", "must be > 0")
    need(_is_num(df.dp_delta) and 0 < df.dp_delta < 1, "defense.dp_delta", "must lie in (0, 1)")
    need(df.clip_bound == "median" or (_is_num(df.clip_bound) and df.clip_bound > 0), "defense.clip_bound", "must be 'median' or > 0")
    need(df.history_depth is None or (_is_int(df.history_depth) and df.history_depth >= 1), "defense.history_depth", "must be null or >= 1")
    need(df.foolsgold_variant in ("full", "max_cosine"), "defense.foolsgold_variant", "must be full or max_cosine")

    a = cfg.attack
    ids_ok = lambda x: x is None or (_is_int(x) and 0 <= x < (n_clients or 0))
    need(_is_num(a.aligned_fraction) and 0 <= a.aligned_fraction <= 1, "attack.aligned_fraction", "must lie in [0, 1]")
    if a.aligned_clients is not None:
        need(isinstance(a.aligned_clients, list) and all(ids_ok(c) and c is not None for c in a.aligned_clients),
             "attack.aligned_clients", f"client ids must be < N={n_clients}")
    need(ids_ok(a.inference_client), "attack.inference_client", f"must be < N={n_clients}")
    need(ids_ok(a.injection_client), "attack.injection_client", f"must be < N={n_clients}")
    need(isinstance(a.inference_rounds, list) and all(_is_int(r) and 1 <= r < cfg.rounds for r in a.inference_rounds),
         "attack.inference_rounds", "rounds must lie in [1, rounds)")
    if a.injection_round is not None:
        need(_is_int(a.injection_round) and 0 <= a.injection_round < cfg.rounds, "attack.injection_round",
             f"must lie in [0, rounds={cfg.rounds})")
    aligned_wanted = bool(a.aligned_clients) or (_is_num(a.aligned_fraction) and a.aligned_fraction > 0)
    if a.enabled and aligned_wanted:
        need(bool(a.inference_rounds), "attack.inference_rounds", "aligned clients need at least one inference round")
    need(a.aux_size is None or (_is_int(a.aux_size) and a.aux_size >= d.n_classes), "attack.aux_size", "must be null or >= n_classes")

    tr = a.trigger
    need(_is_int(tr.target_label) and 0 <= tr.target_label < d.n_classes, "attack.trigger.target_label",
         f"must lie in [0, n_classes={d.n_classes})")
    need(_is_int(tr.size) and tr.size >= 1, "attack.trigger.size", "must be >= 1")
    need(tr.value is None or _is_num(tr.value), "attack.trigger.value", "must be null or a number")
    if tr.region is not None:
        need(isinstance(tr.region, list) and tr.region and all(_is_int(i) and i >= 0 for i in tr.region),
             "attack.trigger.region", "must be a non-empty list of feature indices")
        if d.source == "synthetic" and isinstance(tr.region, list) and tr.region:
            need(max(tr.region) < d.n_features, "attack.trigger.region", f"exceeds n_features={d.n_features}")

    po = a.poison
    need(_is_int(po.batch_size) and po.batch_size >= 1, "attack.poison.batch_size", "must be >= 1")
    need(_is_int(po.poisoned_per_batch) and 0 <= po.poisoned_per_batch, "attack.poison.poisoned_per_batch", "must be >= 0")
    if _is_int(po.poisoned_per_batch) and _is_int(po.batch_size):
        need(po.poisoned_per_batch <= po.batch_size, "attack.poison.poisoned_per_batch", "exceeds attack.poison.batch_size")
    need(_is_int(po.epochs) and po.epochs >= 1, "attack.poison.epochs", "must be >= 1")
    need(_is_num(po.lr) and po.lr > 0, "attack.poison.lr", "must be > 0")
    need(po.gamma in ("K", "n_over_na") or (_is_num(po.gamma) and po.gamma >= 1), "attack.poison.gamma",
         "must be >= 1, 'K' or 'n_over_na'")

    ev = a.evolution
    need(_is_int(ev.population_size) and ev.population_size >= 2, "attack.evolution.population_size", "must be >= 2")
    if _is_int(ev.population_size):
        need(_is_int(ev.nfe_budget) and ev.nfe_budget >= ev.population_size, "attack.evolution.nfe_budget", "must be >= population_size")
    for f in ("crossover_rate", "mutation_rate"):
        v = getattr(ev, f)
        need(_is_num(v) and 0 <= v <= 1, f"attack.evolution.{f}", "must lie in [0, 1]")
    need(_is_num(ev.mutation_scale) and ev.mutation_scale >= 0, "attack.evolution.mutation_scale", "must be >= 0")

    au = a.augmentation
    need(_is_num(au.theta) and 0 <= au.theta <= 1, "attack.augmentation.theta", "must lie in [0, 1]")
    need(_is_num(au.max_growth) and au.max_growth >= 1, "attack.augmentation.max_growth", "must be >= 1")
    need(au.batch_size is None or (_is_int(au.batch_size) and au.batch_size >= 1), "attack.augmentation.batch_size", "must be null or >= 1")
    need(_is_num(au.jitter_scale) and au.jitter_scale >= 0, "attack.augmentation.jitter_scale", "must be >= 0")
    zr = au.zoom_range
    need(isinstance(zr, list) and len(zr) == 2 and all(_is_num(z) for z in zr) and 0 < zr[0] <= zr[1],
         "attack.augmentation.zoom_range", "must be [lo, hi] with 0 < lo <= hi")
    return e
