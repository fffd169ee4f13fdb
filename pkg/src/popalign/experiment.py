"""Build a simulation from an ExperimentConfig, run it, and persist the results."""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data as data_mod
from .attack import AttackPlan, TwoPhaseAttack
from .augment import AugmentationPolicy
from .backdoor import PoisonConfig, TriggerSpec
from .config import ExperimentConfig
from .data import ClientDataset, SyntheticSpec, label_distribution, l2_distance
from .defenses import DefenseConfig, make_aggregator
from .engine import RoundConfig, RoundLog, Simulation
from .errors import ConfigurationError
from .inference import EvolutionConfig
from .metrics import MetricSeries, backdoor_success, main_accuracy
from .model import NetworkArch
from .rng import PRNG_VERSION, Streams


@dataclass
class Setup:
    cfg: ExperimentConfig
    streams: Streams
    arch: NetworkArch
    population: ClientDataset
    test: ClientDataset
    clients: list[ClientDataset]
    pool: ClientDataset | None
    trigger: TriggerSpec
    round_cfg: RoundConfig
    init_params: np.ndarray
    plan: AttackPlan | None


def load_or_synthesize(cfg: ExperimentConfig, streams: Streams) -> tuple[ClientDataset, ClientDataset]:
    d = cfg.data
    if d.source == "synthetic":
        spec = SyntheticSpec(d.n_classes, d.per_class, d.n_features, d.separation, d.noise, streams.child_seed("data"))
        return data_mod.synthesize(spec, stream=1), data_mod.synthesize(spec, d.test_per_class, stream=2)
    train = data_mod.load_idx_dataset(d.train_images, d.train_labels, d.n_classes)
    test = data_mod.load_idx_dataset(d.test_images, d.test_labels, d.n_classes)
    return train, test


def _attack_plan(cfg: ExperimentConfig, streams: Streams, trigger: TriggerSpec) -> AttackPlan | None:
    a = cfg.attack
    if not a.enabled:
        return None
    n = cfg.partition.n_clients
    if a.aligned_clients is not None:
        aligned = sorted(set(a.aligned_clients))
    elif a.aligned_fraction > 0:
        k = max(1, int(round(a.aligned_fraction * n)))
        aligned = sorted(int(i) for i in streams.get("attack", "aligned").choice(n, size=k, replace=False))
    else:
        aligned = []
    injector = a.injection_client
    if a.injection_round is not None and injector is None:
        injector = int(streams.get("attack", "injector").integers(n))
    inferrer = a.inference_client
    if inferrer is None and (aligned or a.inference_rounds):
        inferrer = aligned[0] if aligned else int(streams.get("attack", "inferrer").integers(n))
    p = a.poison
    return AttackPlan(
        aligned_clients=aligned,
        inference_client=inferrer,
        inference_rounds=sorted(set(a.inference_rounds)),
        injection_round=a.injection_round,
        injection_client=injector if a.injection_round is not None else None,
        trigger=trigger,
        poison=PoisonConfig(p.poisoned_per_batch, p.batch_size, p.epochs, p.lr, 10.0 if isinstance(p.gamma, str) else float(p.gamma)),
        gamma=p.gamma,
        evolution=EvolutionConfig(**a.evolution.__dict__),
        augmentation=AugmentationPolicy(**{**a.augmentation.__dict__, "zoom_range": tuple(a.augmentation.zoom_range)}),
        aux_size=a.aux_size,
    )


def build(cfg: ExperimentConfig) -> Setup:
    errs = cfg.validate()
    if errs:
        raise ConfigurationError("invalid config:\n  " + "\n  ".join(errs))
    streams = Streams(cfg.seed)
    raw, test = load_or_synthesize(cfg, streams)

    pool = None
    if cfg.data.public_fraction > 0:
        n_pool = int(np.floor(cfg.data.public_fraction * len(raw)))
        if n_pool > 0:
            order = streams.get("pool").permutation(len(raw))
            pool = raw.subset(np.sort(order[:n_pool]))
            raw = raw.subset(np.sort(order[n_pool:]))

    population = raw
    if cfg.data.imbalance is not None:
        population, _ = data_mod.global_downsample(raw, tuple(cfg.data.imbalance), streams.get("imbalance"))
    clients = data_mod.dirichlet_partition(population, cfg.partition.n_clients, cfg.partition.alpha, streams.get("partition"))

    arch = NetworkArch((population.n_features, *cfg.model.hidden, cfg.data.n_classes), cfg.model.activation)
    t = cfg.attack.trigger
    value = float(population.features.max()) if t.value is None else float(t.value)
    if t.region is not None:
        trigger = TriggerSpec(tuple(t.region), value, t.target_label)
    else:
        trigger = TriggerSpec.default_for(population.n_features, value, t.target_label, population.image_shape, t.size)
    errs = trigger.validate(population.n_features, cfg.data.n_classes)
    if errs:
        raise ConfigurationError("; ".join(errs))

    tr = cfg.training
    round_cfg = RoundConfig(tr.clients_per_round, tr.local_steps, tr.local_lr, tr.batch_size)
    return Setup(
        cfg, streams, arch, population, test, clients, pool, trigger, round_cfg,
        arch.init_params(streams.get("init")), _attack_plan(cfg, streams, trigger),
    )


@dataclass
class RunResult:
    setup: Setup
    logs: list[RoundLog]
    series: dict[str, MetricSeries]
    attack: TwoPhaseAttack | None
    manifest: dict = field(default_factory=dict)


def run_experiment(cfg: ExperimentConfig, jobs: int = 1, setup: Setup | None = None) -> RunResult:
    setup = setup or build(cfg)
    arch, test, trigger = setup.arch, setup.test, setup.trigger

    def evaluate(rnd, params):
        return {
            "main_accuracy": main_accuracy(arch, params, test),
            "backdoor_success": backdoor_success(arch, params, test, trigger),
        }

    attack = None
    if setup.plan is not None:
        attack = TwoPhaseAttack(arch, setup.clients, setup.plan, setup.round_cfg, setup.streams, setup.pool)
    sim = Simulation(
        arch, setup.clients, setup.round_cfg, setup.streams,
        aggregator=make_aggregator(_defense(cfg), setup.streams),
        adversary=attack, evaluate=evaluate, jobs=jobs,
    )
    logs = sim.run(setup.init_params, cfg.rounds)

    series = {name: MetricSeries(name) for name in ("main_accuracy", "backdoor_success")}
    for lg in logs:
        for name in series:
            series[name].append(lg.round, lg.metrics[name])
    p_global = label_distribution(setup.population)
    if attack is not None and attack.inferences:
        s = MetricSeries("inferred_to_true")
        for rec in attack.inferences:
            s.append(rec.round, l2_distance(rec.result.p_hat, p_global))
        series["inferred_to_true"] = s
    result = RunResult(setup, logs, series, attack)
    result.manifest = manifest(result)
    return result


def _defense(cfg: ExperimentConfig):
    d = cfg.defense
    return DefenseConfig(d.kind, d.dp_epsilon, d.dp_delta, d.clip_bound, d.history_depth, d.foolsgold_variant)


def manifest(result: RunResult) -> dict:
    setup = result.setup
    p_global = label_distribution(setup.population)
    out = {
        "name": setup.cfg.name,
        "seed": setup.cfg.seed,
        "prng": PRNG_VERSION,
        "config": setup.cfg.to_dict(),
        "metrics": {name: f"{name}.csv" for name in sorted(result.series)},
        "population": {
            "size": len(setup.population),
            "distribution": [float(x) for x in p_global],
            "client_sizes": [len(c) for c in setup.clients],
            "original_to_true": [l2_distance(label_distribution(c), p_global) for c in setup.clients],
        },
        "final_main_accuracy": result.series["main_accuracy"].values[-1],
    }
    attack = result.attack
    if attack is not None:
        plan = attack.plan
        out["attack"] = {
            "aligned_clients": plan.aligned_clients,
            "inference_client": plan.inference_client,
            "injection_client": plan.injection_client,
            "injection_round": plan.injection_round,
            "trigger": {"region": list(plan.trigger.region), "value": plan.trigger.value, "target_label": plan.trigger.target_label},
            "inference": [
                {"round": r.round, "client": r.client, **r.result.to_json(),
                 "inferred_to_true": l2_distance(r.result.p_hat, p_global)}
                for r in attack.inferences
            ],
        }
    return out


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_results(result: RunResult, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, s in sorted(result.series.items()):
        _atomic_write(out / f"{name}.csv", s.to_csv())
    _atomic_write(out / "manifest.json", json.dumps(result.manifest, indent=2, sort_keys=True) + "\n")
    return out
