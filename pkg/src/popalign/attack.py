"""Two-phase attack driver plugged into the engine's adversary hook.

Preliminary phase: one attacker client infers the population label mix from
the broadcast global models; every aligned client then trains on an
auxiliary dataset rebuilt to that mix.  Attack phase: the injecting client
trains on poisoned batches once and submits a scaled update.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .augment import AugmentationPolicy
from .auxiliary import AuxSpec, build_auxiliary
from .backdoor import PoisonConfig, TriggerSpec, backdoor_train, replacement_gamma, scale_update
from .data import ClientDataset, concat, label_distribution
from .engine import ClientUpdate, RoundConfig, RoundContext, RoundLog, local_train
from .errors import ConfigurationError
from .inference import EvolutionConfig, InferenceResult, infer_from_update
from .model import NetworkArch
from .rng import Streams

log = logging.getLogger(__name__)


@dataclass
class AttackPlan:
    aligned_clients: list[int] = field(default_factory=list)
    inference_client: int | None = None
    inference_rounds: list[int] = field(default_factory=list)
    injection_round: int | None = None
    injection_client: int | None = None
    trigger: TriggerSpec | None = None
    poison: PoisonConfig = PoisonConfig()
    # a number, "K" (clients per round) or "n_over_na"
    gamma: float | str = "K"
    evolution: EvolutionConfig = EvolutionConfig()
    augmentation: AugmentationPolicy = AugmentationPolicy()
    aux_size: int | None = None


@dataclass
class InferenceRecord:
    round: int
    client: int
    result: InferenceResult


class TwoPhaseAttack:
    def __init__(
        self,
        arch: NetworkArch,
        clients: list[ClientDataset],
        plan: AttackPlan,
        round_cfg: RoundConfig,
        streams: Streams,
        pool: ClientDataset | None = None,
    ):
        if plan.aligned_clients and plan.inference_client is None:
            raise ConfigurationError("aligned clients need an inference client")
        if plan.aligned_clients and not plan.inference_rounds:
            raise ConfigurationError("aligned clients need at least one inference round")
        if plan.injection_round is not None and (plan.injection_client is None or plan.trigger is None):
            raise ConfigurationError("an injection needs a client and a trigger")
        self.arch, self.clients, self.plan = arch, clients, plan
        self.round_cfg = round_cfg
        self.streams, self.pool = streams, pool
        self.broadcasts: dict[int, np.ndarray] = {}
        self.inferences: list[InferenceRecord] = []
        self.p_hat: np.ndarray | None = None
        self.aux: dict[int, ClientDataset] = {}
        # classes each aligned client had to drop from its target, by client id
        self.unbuildable: dict[int, list[int]] = {}
        self.injected_update: ClientUpdate | None = None
        self.unscaled_update: ClientUpdate | None = None

    # -- hook interface

    def forced_clients(self, rnd: int) -> list[int]:
        if rnd == self.plan.injection_round:
            return [self.plan.injection_client]
        return []

    def observe(self, rnd: int, global_params: np.ndarray, logs: list[RoundLog]) -> None:
        self.broadcasts[rnd] = global_params.copy()
        if rnd in self.plan.inference_rounds and rnd - 1 in self.broadcasts:
            self._infer(rnd, logs)

    def client_update(self, rnd: int, client_id: int, global_params: np.ndarray, ctx: RoundContext):
        plan = self.plan
        if rnd == plan.injection_round and client_id == plan.injection_client:
            return self._inject(rnd, global_params, ctx)
        if client_id in self.aux:
            return local_train(self.arch, self.aux[client_id], global_params, ctx.round_cfg, ctx.rng, origin="aligned")
        return None

    # -- phases

    def estimation_data(self, client_id: int) -> ClientDataset:
        own = self.clients[client_id]
        if self.pool is None or len(self.pool) == 0:
            return own
        return concat([own, self.pool.with_owner(client_id)], owner_id=client_id)

    def _infer(self, rnd: int, logs: list[RoundLog]) -> None:
        cid = self.plan.inference_client
        start = self.broadcasts[rnd - 1]
        observed = self.broadcasts[rnd] - start
        round_cfg = self.round_cfg
        steps = round_cfg.local_steps
        if round_cfg.batch_size is not None:
            # replay minibatch epochs as the same number of full-batch steps
            steps *= max(1, int(np.ceil(len(self.clients[cid]) / round_cfg.batch_size)))
        evo = EvolutionConfig(**{**self.plan.evolution.__dict__, "seed": self.streams.child_seed("evolution", rnd)})
        result = infer_from_update(
            self.arch, start, observed, self.estimation_data(cid), steps, round_cfg.local_lr,
            evo, self.plan.augmentation, prior=label_distribution(self.clients[cid]),
        )
        self.inferences.append(InferenceRecord(rnd - 1, cid, result))
        log.debug("round %d: inferred %s (objective %.3g)", rnd, np.round(result.p_hat, 3), result.objective)
        if self.p_hat is None:
            self.p_hat = result.p_hat
            self._build_aux()

    def _build_aux(self) -> None:
        for cid in sorted(self.plan.aligned_clients):
            local = self.clients[cid]
            have = local.class_counts() > 0
            if self.pool is not None:
                have |= self.pool.class_counts() > 0
            p = np.where(have, self.p_hat, 0.0)
            if p.sum() == 0:
                raise ConfigurationError(f"client {cid} holds no class the inferred distribution needs")
            missing = [int(c) for c in np.flatnonzero(~have & (self.p_hat > 0))]
            if missing:
                # nothing to augment from: spread that mass over the classes the client can build
                log.info("client %d cannot build classes %s; renormalizing its target", cid, missing)
                self.unbuildable[cid] = missing
            target = tuple(float(x) for x in p / p.sum())
            # a client smaller than C still needs one slot per class
            size = max(self.plan.aux_size or len(local), local.n_classes)
            spec = AuxSpec(size, target, self.plan.augmentation)
            self.aux[cid] = build_auxiliary(local, spec, self.streams.get("aux", cid), self.pool)

    def _gamma(self, ctx: RoundContext, n_attacker: int) -> float:
        g = self.plan.gamma
        if g == "K":
            return float(len(ctx.selected))
        if g == "n_over_na":
            return replacement_gamma(sum(ctx.n_samples.values()), n_attacker)
        return float(g)

    def _inject(self, rnd: int, global_params: np.ndarray, ctx: RoundContext) -> ClientUpdate:
        local = self.clients[self.plan.injection_client]
        upd = backdoor_train(self.arch, global_params, local, self.plan.poison, self.plan.trigger, ctx.rng)
        self.unscaled_update = upd
        self.injected_update = scale_update(upd, self._gamma(ctx, len(local)))
        return self.injected_update
