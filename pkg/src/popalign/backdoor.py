"""Pixel-pattern triggers, poisoned minibatches, and scaled submission."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import model
from .data import ClientDataset
from .engine import ClientUpdate
from .errors import ConfigurationError, NumericError
from .model import NetworkArch


@dataclass(frozen=True)
class TriggerSpec:
    region: tuple[int, ...]
    value: float
    target_label: int = 0

    @classmethod
    def default_for(
        cls,
        n_features: int,
        value: float,
        target_label: int = 0,
        image_shape: tuple[int, int] | None = None,
        size: int = 4,
    ) -> "TriggerSpec":
        """Top-left ``size x size`` block for images, the first ``size`` features otherwise."""
        if image_shape is not None:
            rows, cols = image_shape
            region = tuple(r * cols + c for r in range(size) for c in range(size))
        else:
            region = tuple(range(min(size, n_features)))
        return cls(region, float(value), target_label)

    def validate(self, n_features: int, n_classes: int) -> list[str]:
        errs = []
        if not self.region:
            errs.append("trigger region is empty")
        elif min(self.region) < 0 or max(self.region) >= n_features:
            errs.append(f"trigger region exceeds the {n_features} features")
        if not 0 <= self.target_label < n_classes:
            errs.append(f"target_label {self.target_label} outside [0, {n_classes})")
        return errs


def apply_trigger(features: np.ndarray, labels: np.ndarray, trigger: TriggerSpec):
    """Triggered copies: region overwritten by the trigger value, labels set to the target."""
    out = np.array(features, dtype=np.float64, copy=True)
    region = np.asarray(trigger.region, dtype=np.int64)
    if out.ndim == 1:
        out[region] = trigger.value
    else:
        out[:, region] = trigger.value
    return out, np.full_like(np.asarray(labels), trigger.target_label)


@dataclass(frozen=True)
class PoisonConfig:
    poisoned_per_batch: int = 40
    batch_size: int = 128
    epochs: int = 10
    lr: float = 0.05
    gamma: float = 10.0

    def validate(self) -> list[str]:
        errs = []
        if self.poisoned_per_batch < 0:
            errs.append("poisoned_per_batch must be >= 0")
        if self.poisoned_per_batch > self.batch_size:
            errs.append("poisoned_per_batch exceeds batch_size")
        if self.epochs < 1:
            errs.append("epochs must be >= 1")
        if not self.lr > 0:
            errs.append("lr must be > 0")
        if not (np.isfinite(self.gamma) and self.gamma >= 1):
            errs.append("gamma must be >= 1")
        return errs


def poison_batches(local: ClientDataset, cfg: PoisonConfig, trigger: TriggerSpec, rng: np.random.Generator):
    """One epoch of shuffled minibatches; the first rows of each batch are poisoned.

    A short final batch gets a proportional share of poisoned rows.  Yields
    ``(features, labels, n_poisoned)``.
    """
    errs = cfg.validate()
    if errs:
        raise ConfigurationError("; ".join(errs))
    order = rng.permutation(len(local))
    for lo in range(0, len(local), cfg.batch_size):
        b = order[lo : lo + cfg.batch_size]
        n_p = cfg.poisoned_per_batch
        if len(b) < cfg.batch_size:
            n_p = int(round(cfg.poisoned_per_batch * len(b) / cfg.batch_size))
        feats = local.features[b].copy()
        labels = local.labels[b].copy()
        if n_p:
            feats[:n_p], labels[:n_p] = apply_trigger(feats[:n_p], labels[:n_p], trigger)
        yield feats, labels, n_p


def poison_partition(local: ClientDataset, cfg: PoisonConfig, trigger: TriggerSpec, rng: np.random.Generator):
    """Split one epoch's pass into (D_clean, D_poison)."""
    if len(local) < 1:
        raise ConfigurationError("local dataset is empty")
    clean_f, clean_y, pois_f, pois_y = [], [], [], []
    for feats, labels, n_p in poison_batches(local, cfg, trigger, rng):
        pois_f.append(feats[:n_p])
        pois_y.append(labels[:n_p])
        clean_f.append(feats[n_p:])
        clean_y.append(labels[n_p:])
    mk = lambda f, y: ClientDataset(np.concatenate(f), np.concatenate(y), local.n_classes, local.owner_id)
    return mk(clean_f, clean_y), mk(pois_f, pois_y)


def backdoor_train(
    arch: NetworkArch,
    global_params: np.ndarray,
    local: ClientDataset,
    cfg: PoisonConfig,
    trigger: TriggerSpec,
    rng: np.random.Generator,
) -> ClientUpdate:
    """Minibatch SGD on mixed clean/poisoned batches; the delta is not scaled."""
    params = global_params.copy()
    for _ in range(cfg.epochs):
        for feats, labels, _ in poison_batches(local, cfg, trigger, rng):
            params = model.sgd_step(params, model.gradient(arch, params, feats, labels), cfg.lr)
    delta = params - global_params
    if not np.all(np.isfinite(delta)):
        raise NumericError("backdoor training diverged")
    return ClientUpdate(delta, len(local), local.owner_id, "backdoor")


def scale_update(update: ClientUpdate, gamma: float) -> ClientUpdate:
    if not np.isfinite(gamma):
        raise NumericError("gamma must be finite")
    return replace(update, delta=update.delta * gamma)


def replacement_gamma(n_total: int, n_attacker: int) -> float:
    """Scale that lets one update replace the global model when the others vanish."""
    return n_total / n_attacker
