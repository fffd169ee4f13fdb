"""FedAvg rounds, a centralized-training twin, and the adversary hook."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from . import model
from .data import ClientDataset
from .errors import ConfigurationError, NumericError, PopAlignError
from .model import NetworkArch
from .rng import Streams


@dataclass(frozen=True)
class RoundConfig:
    clients_per_round: int
    local_steps: int = 1
    local_lr: float = 0.1
    # None means full-batch gradient descent; otherwise each local step is one
    # pass over shuffled minibatches of this size
    batch_size: int | None = None

    def validate(self, n_clients: int | None = None) -> list[str]:
        errs = []
        if self.clients_per_round < 1:
            errs.append("clients_per_round must be >= 1")
        if n_clients is not None and self.clients_per_round > n_clients:
            errs.append(f"clients_per_round ({self.clients_per_round}) exceeds n_clients ({n_clients})")
        if self.local_steps < 1:
            errs.append("local_steps must be >= 1")
        if not self.local_lr > 0:
            errs.append("local_lr must be > 0")
        if self.batch_size is not None and self.batch_size < 1:
            errs.append("batch_size must be >= 1")
        return errs


@dataclass
class ClientUpdate:
    delta: np.ndarray
    n_k: int
    client_id: int
    # benign | aligned | backdoor
    origin: str = "benign"
    noised: bool = False

    def __post_init__(self):
        if self.n_k < 1:
            raise ConfigurationError("n_k must be >= 1")


@dataclass
class RoundLog:
    round: int
    selected: list[int]
    params_before: np.ndarray
    params_after: np.ndarray
    n_samples: dict[int, int] = field(default_factory=dict)
    origins: dict[int, str] = field(default_factory=dict)
    metrics: dict[str, float] = field(default_factory=dict)


def select_clients(rng: np.random.Generator, n_clients: int, k: int) -> list[int]:
    if not 1 <= k <= n_clients:
        raise ConfigurationError(f"cannot select {k} of {n_clients} clients")
    return sorted(int(i) for i in rng.choice(n_clients, size=k, replace=False))


def _local_sgd(arch, start, features, labels, steps, eta, batch_size, rng):
    params = start.copy()
    n = len(labels)
    for _ in range(steps):
        if batch_size is None or batch_size >= n:
            params = model.sgd_step(params, model.gradient(arch, params, features, labels), eta)
            continue
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            b = order[lo : lo + batch_size]
            params = model.sgd_step(params, model.gradient(arch, params, features[b], labels[b]), eta)
    return params


def local_train(
    arch: NetworkArch,
    client: ClientDataset,
    global_params: np.ndarray,
    cfg: RoundConfig,
    rng: np.random.Generator | None = None,
    origin: str = "benign",
) -> ClientUpdate:
    if len(client) == 0:
        raise ConfigurationError(f"client {client.owner_id} has no data")
    if rng is None:
        rng = np.random.default_rng(0)
    final = _local_sgd(
        arch, global_params, client.features, client.labels,
        cfg.local_steps, cfg.local_lr, cfg.batch_size, rng,
    )
    delta = final - global_params
    if not np.all(np.isfinite(delta)):
        raise NumericError(f"client {client.owner_id} diverged during local training")
    return ClientUpdate(delta, len(client), client.owner_id, origin)


def aggregate(global_params: np.ndarray, updates: list[ClientUpdate], weights=None) -> np.ndarray:
    """w + sum_k (n_k / n) delta_k, summed in client-id order.

    ``weights`` optionally rescales each n_k (keyed by client id), as robust
    aggregators do; when every rescaled weight is zero the model is unchanged.
    """
    if not updates:
        raise ConfigurationError("aggregate needs at least one update")
    ordered = sorted(updates, key=lambda u: u.client_id)
    mass = np.array(
        [u.n_k * (1.0 if weights is None else weights[u.client_id]) for u in ordered],
        dtype=np.float64,
    )
    total = mass.sum()
    if total <= 0:
        return global_params.copy()
    step = np.zeros_like(global_params)
    for m, u in zip(mass, ordered):
        if u.delta.shape != global_params.shape:
            raise ConfigurationError("update shape does not match the global model")
        step += (m / total) * u.delta
    return global_params + step


def centralized_train(
    arch: NetworkArch,
    dataset: ClientDataset,
    start: np.ndarray,
    steps: int,
    eta: float,
    record: list | None = None,
) -> np.ndarray:
    """Full-batch gradient descent on the whole population.

    When ``record`` is a list, the parameters before each step are appended to it.
    """
    params = start.copy()
    for _ in range(steps):
        if record is not None:
            record.append(params.copy())
        params = model.sgd_step(params, model.gradient(arch, params, dataset.features, dataset.labels), eta)
    return params


# ------------------------------------------------------------ orchestration


class Adversary(Protocol):
    """Hook the engine calls each round; see ``popalign.attack.TwoPhaseAttack``."""

    def forced_clients(self, rnd: int) -> list[int]: ...

    def observe(self, rnd: int, global_params: np.ndarray, logs: list[RoundLog]) -> None: ...

    def client_update(self, rnd: int, client_id: int, global_params: np.ndarray, ctx: "RoundContext") -> ClientUpdate | None: ...


class Aggregator(Protocol):
    def __call__(self, rnd: int, global_params: np.ndarray, updates: list[ClientUpdate]) -> np.ndarray: ...


def fedavg(rnd: int, global_params: np.ndarray, updates: list[ClientUpdate]) -> np.ndarray:
    return aggregate(global_params, updates)


@dataclass
class RoundContext:
    round_cfg: RoundConfig
    selected: list[int]
    n_samples: dict[int, int]
    rng: np.random.Generator


class RoundError(PopAlignError):
    def __init__(self, rnd: int, cause: Exception):
        self.round = rnd
        super().__init__(f"round {rnd}: {cause}")


@dataclass
class Simulation:
    arch: NetworkArch
    clients: list[ClientDataset]
    round_cfg: RoundConfig
    streams: Streams
    aggregator: Aggregator = fedavg
    adversary: Adversary | None = None
    evaluate: Callable[[int, np.ndarray], dict[str, float]] | None = None
    jobs: int = 1

    def __post_init__(self):
        errs = self.round_cfg.validate(len(self.clients))
        if errs:
            raise ConfigurationError("; ".join(errs))

    def selection(self, rnd: int) -> list[int]:
        chosen = select_clients(
            self.streams.get("select", rnd), len(self.clients), self.round_cfg.clients_per_round
        )
        if self.adversary is None:
            return chosen
        forced = [c for c in self.adversary.forced_clients(rnd) if c not in chosen]
        if forced:
            # swap out the last non-forced picks; the rest of the draw is kept
            keep_forced = set(self.adversary.forced_clients(rnd))
            removable = [c for c in chosen if c not in keep_forced]
            for f in forced:
                chosen.remove(removable.pop())
                chosen.append(f)
        return sorted(chosen)

    def _update(self, rnd, cid, params, ctx_base):
        rng = self.streams.get("local", rnd, cid)
        if self.adversary is not None:
            ctx = RoundContext(self.round_cfg, ctx_base.selected, ctx_base.n_samples, rng)
            upd = self.adversary.client_update(rnd, cid, params, ctx)
            if upd is not None:
                return upd
        return local_train(self.arch, self.clients[cid], params, self.round_cfg, rng)

    def step(self, rnd: int, params: np.ndarray, logs: list[RoundLog]) -> RoundLog:
        if self.adversary is not None:
            self.adversary.observe(rnd, params, logs)
        selected = self.selection(rnd)
        n_samples = {c: len(self.clients[c]) for c in selected}
        base = RoundContext(self.round_cfg, selected, n_samples, None)
        if self.jobs > 1:
            with ThreadPoolExecutor(self.jobs) as pool:
                updates = list(pool.map(lambda c: self._update(rnd, c, params, base), selected))
        else:
            updates = [self._update(rnd, c, params, base) for c in selected]
        new = self.aggregator(rnd, params, updates)
        if not np.all(np.isfinite(new)):
            raise NumericError("global model became non-finite")
        log = RoundLog(
            rnd, selected, params.copy(), new.copy(), n_samples,
            {u.client_id: u.origin for u in updates},
        )
        if self.evaluate is not None:
            log.metrics = dict(self.evaluate(rnd, new))
        return log

    def run(self, init_params: np.ndarray, n_rounds: int) -> list[RoundLog]:
        logs: list[RoundLog] = []
        params = init_params.copy()
        for rnd in range(n_rounds):
            try:
                log = self.step(rnd, params, logs)
            except RoundError:
                raise
            except PopAlignError as exc:
                raise RoundError(rnd, exc) from exc
            logs.append(log)
            params = log.params_after
        return logs
