"""Server-side FoolsGold re-weighting and client-side local DP."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .engine import ClientUpdate, aggregate, fedavg
from .errors import ConfigurationError
from .rng import Streams


@dataclass(frozen=True)
class DefenseConfig:
    kind: str = "none"
    dp_epsilon: float = 50.0
    dp_delta: float = 1e-5
    # "median" or a fixed positive bound
    clip_bound: float | str = "median"
    history_depth: int | None = None
    foolsgold_variant: str = "full"

    def validate(self) -> list[str]:
        errs = []
        if self.kind not in ("none", "foolsgold", "local_dp"):
            errs.append(f"unknown defense kind {self.kind!r}")
        if not self.dp_epsilon > 0:
            errs.append("dp_epsilon must be > 0")
        if not 0 < self.dp_delta < 1:
            errs.append("dp_delta must lie in (0, 1)")
        if isinstance(self.clip_bound, str):
            if self.clip_bound != "median":
                errs.append("clip_bound must be 'median' or a positive number")
        elif not self.clip_bound > 0:
            errs.append("clip_bound must be positive")
        if self.history_depth is not None and self.history_depth < 1:
            errs.append("history_depth must be >= 1")
        if self.foolsgold_variant not in ("full", "max_cosine"):
            errs.append("foolsgold_variant must be 'full' or 'max_cosine'")
        return errs


# ---------------------------------------------------------------- FoolsGold


@dataclass
class GradientHistory:
    depth: int | None = None
    _records: dict[int, list[np.ndarray]] = field(default_factory=dict)

    def add(self, client_id: int, delta: np.ndarray) -> None:
        rec = self._records.setdefault(client_id, [])
        rec.append(np.array(delta, dtype=np.float64, copy=True))
        if self.depth is not None and len(rec) > self.depth:
            del rec[0]

    def vector(self, client_id: int) -> np.ndarray:
        # summed in insertion order so repeated runs agree bitwise
        rec = self._records[client_id]
        out = np.zeros_like(rec[0])
        for r in rec:
            out += r
        return out

    def __contains__(self, client_id: int) -> bool:
        return client_id in self._records


def _cosine_matrix(vectors: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = vectors / safe[:, None]
    cs = unit @ unit.T
    zero = norms == 0
    cs[zero, :] = 0.0
    cs[:, zero] = 0.0
    return np.clip(cs, -1.0, 1.0)


def foolsgold_weights(history: GradientHistory, participants: list[int], variant: str = "full") -> dict[int, float]:
    """Per-participant aggregation weights in [0, 1].

    ``max_cosine`` is ``1 - max_j cos(h_i, h_j)`` clipped to [0, 1].  ``full``
    additionally applies pardoning (similarities of a less suspicious client
    are scaled down by the ratio of maximum similarities), normalizes by the
    largest weight, and passes the result through the logit confidence map.
    """
    ids = list(participants)
    if any(i not in history for i in ids):
        raise ConfigurationError("every participant needs a history entry")
    if len(ids) == 1:
        return {ids[0]: 1.0}
    cs = _cosine_matrix(np.array([history.vector(i) for i in ids]))
    np.fill_diagonal(cs, -np.inf)
    maxcs = cs.max(axis=1)
    if variant == "full":
        n = len(ids)
        for i in range(n):
            for j in range(n):
                if i != j and maxcs[i] < maxcs[j] and maxcs[j] > 0:
                    cs[i, j] *= maxcs[i] / maxcs[j]
    wv = np.clip(1.0 - cs.max(axis=1), 0.0, 1.0)
    if variant == "full":
        top = wv.max()
        if top == 0:
            return {i: 0.0 for i in ids}
        wv = wv / top
        wv[wv == 1.0] = 0.99
        with np.errstate(divide="ignore"):
            wv = np.log(wv / (1.0 - wv)) + 0.5
        wv[np.isinf(wv) & (wv > 0)] = 1.0
        wv = np.clip(wv, 0.0, 1.0)
    return {i: float(w) for i, w in zip(ids, wv)}


class FoolsGold:
    """Aggregator: FedAvg with n_k scaled by FoolsGold weights."""

    def __init__(self, depth: int | None = None, variant: str = "full"):
        self.history = GradientHistory(depth)
        self.variant = variant
        self.last_weights: dict[int, float] = {}

    def __call__(self, rnd: int, global_params: np.ndarray, updates: list[ClientUpdate]) -> np.ndarray:
        for u in sorted(updates, key=lambda u: u.client_id):
            self.history.add(u.client_id, u.delta)
        self.last_weights = foolsgold_weights(self.history, [u.client_id for u in updates], self.variant)
        return aggregate(global_params, updates, self.last_weights)


# ------------------------------------------------------------------ local DP


def dp_sigma(epsilon: float, delta: float) -> float:
    """Gaussian-mechanism noise multiplier sqrt(2 ln(1.25/delta)) / epsilon."""
    if not epsilon > 0 or not delta > 0:
        raise ConfigurationError("epsilon and delta must be positive")
    return math.sqrt(2.0 * math.log(1.25 / delta)) / epsilon


def dp_perturb(update: ClientUpdate, clip: float, sigma: float, rng: np.random.Generator) -> ClientUpdate:
    """Rescale the delta to norm <= clip, then add N(0, (sigma * clip)^2) per coordinate."""
    if not clip > 0:
        raise ConfigurationError("clip bound must be positive")
    norm = float(np.linalg.norm(update.delta))
    delta = update.delta * min(1.0, clip / norm) if norm > 0 else update.delta.copy()
    if sigma > 0:
        delta = delta + rng.normal(0.0, sigma * clip, size=delta.shape)
    return replace(update, delta=delta, noised=True)


class LocalDP:
    """Aggregator: clip and noise every non-backdoor update, then FedAvg."""

    def __init__(self, epsilon: float, delta: float, clip_bound: float | str, streams: Streams):
        self.sigma = dp_sigma(epsilon, delta)
        self.clip_bound = clip_bound
        self.streams = streams
        self.last_clip: float | None = None
        self.last_updates: list[ClientUpdate] = []

    def round_clip(self, updates: list[ClientUpdate]) -> float:
        if self.clip_bound != "median":
            return float(self.clip_bound)
        norms = [np.linalg.norm(u.delta) for u in updates if u.origin != "backdoor"]
        bound = float(np.median(norms)) if norms else 0.0
        return bound if bound > 0 else 1.0

    def __call__(self, rnd: int, global_params: np.ndarray, updates: list[ClientUpdate]) -> np.ndarray:
        ordered = sorted(updates, key=lambda u: u.client_id)
        clip = self.round_clip(ordered)
        out = [
            u if u.origin == "backdoor"
            else dp_perturb(u, clip, self.sigma, self.streams.get("dp", rnd, u.client_id))
            for u in ordered
        ]
        self.last_clip, self.last_updates = clip, out
        return aggregate(global_params, out)


def make_aggregator(cfg: DefenseConfig, streams: Streams):
    if cfg.kind == "none":
        return fedavg
    if cfg.kind == "foolsgold":
        return FoolsGold(cfg.history_depth, cfg.foolsgold_variant)
    if cfg.kind == "local_dp":
        return LocalDP(cfg.dp_epsilon, cfg.dp_delta, cfg.clip_bound, streams)
    raise ConfigurationError(f"unknown defense kind {cfg.kind!r}")
