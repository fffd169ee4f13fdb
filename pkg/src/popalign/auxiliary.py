"""Auxiliary dataset whose label mix matches an inferred global distribution."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .augment import AugmentationPolicy, augment_class
from .data import ClientDataset, concat
from .errors import ConfigurationError, ConstructionError


def largest_remainder_counts(total: int, probs) -> np.ndarray:
    """Integer counts proportional to ``probs`` that sum to ``total`` exactly.

    Ties in the fractional parts go to the lower class index.
    """
    probs = np.asarray(probs, dtype=np.float64)
    raw = total * probs
    counts = np.floor(raw + 1e-9).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


@dataclass(frozen=True)
class AuxSpec:
    total_size: int
    target: tuple[float, ...]
    policy: AugmentationPolicy = AugmentationPolicy()
    seed: int = 0

    def validate(self) -> list[str]:
        errs = []
        if self.total_size < len(self.target):
            errs.append("auxiliary size must be at least the number of classes")
        t = np.asarray(self.target, dtype=np.float64)
        if np.any(t < 0) or abs(t.sum() - 1) > 1e-9:
            errs.append("target must be a distribution")
        return errs + self.policy.validate()


def build_auxiliary(
    local: ClientDataset,
    spec: AuxSpec,
    rng: np.random.Generator,
    pool: ClientDataset | None = None,
) -> ClientDataset:
    """Downsample classes above their target count and augment those below it.

    A short class first takes every local row, then rows from ``pool`` (the
    attacker's public data), and is topped up by augmenting what it has.
    """
    errs = spec.validate()
    if errs:
        raise ConfigurationError("; ".join(errs))
    targets = largest_remainder_counts(spec.total_size, spec.target)
    parts = []
    for c, m_c in enumerate(targets):
        if m_c == 0:
            continue
        idx = local.indices_of(c)
        if len(idx) >= m_c:
            parts.append(local.subset(np.sort(rng.choice(idx, size=m_c, replace=False))))
            continue
        have = [local.subset(idx)] if len(idx) else []
        if pool is not None:
            pidx = pool.indices_of(c)
            need = m_c - len(idx)
            if len(pidx):
                pick = np.sort(rng.choice(pidx, size=min(need, len(pidx)), replace=False))
                have.append(pool.subset(pick, owner_id=local.owner_id))
        if not have:
            raise ConstructionError(f"class {c} is needed ({m_c} samples) but no samples of it are available")
        base = concat(have, owner_id=local.owner_id)
        short = m_c - len(base)
        if short > 0:
            base = concat([base, augment_class(base, short, spec.policy, rng)], owner_id=local.owner_id)
        parts.append(base)
    aux = concat(parts, owner_id=local.owner_id)
    return aux.subset(rng.permutation(len(aux)))
