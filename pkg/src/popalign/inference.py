"""Whole-population label distribution inference from one global update.

The observed update ``w^T - w^{T-1}`` is compared with a simulated update
obtained by replaying the benign local schedule on the attacker's data, where
each step's gradient is the p-weighted mix of per-class gradients.  The
weights p that best reproduce the observed update are searched for with an
elitist evolutionary algorithm whose individuals never leave the simplex.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import model
from .augment import AugmentationPolicy, augment_class
from .data import ClientDataset, concat
from .engine import RoundLog
from .errors import ConfigurationError, UsageError
from .model import NetworkArch
from .rng import make_generator


def observe_global_update(log_prev: RoundLog, log_curr: RoundLog) -> np.ndarray:
    """Global update of round ``log_prev.round`` as seen by any participant.

    A participant only sees the models broadcast at the start of consecutive
    rounds, so the update is the difference of the two synchronizations.
    """
    if log_curr.round != log_prev.round + 1:
        raise UsageError(
            f"rounds {log_prev.round} and {log_curr.round} are not consecutive"
        )
    if log_prev.params_after.shape != log_curr.params_before.shape:
        raise UsageError("snapshots have different shapes")
    return log_curr.params_before - log_prev.params_before


# -------------------------------------------------------------- simplex


def project_to_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {p : p >= 0, sum p = 1}."""
    v = np.asarray(v, dtype=np.float64)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ks = np.arange(1, len(v) + 1)
    rho = np.nonzero(u - css / ks > 0)[0][-1]
    tau = css[rho] / (rho + 1.0)
    p = np.maximum(v - tau, 0.0)
    # one renormalization pass absorbs the last ulp of rounding
    return p / p.sum()


# ------------------------------------------------- gradient estimation


@dataclass
class AlignedEstimate:
    dataset: ClientDataset
    unavailable: list[int]
    added: dict[int, int]


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(a @ b / (na * nb))


def augment_until_aligned(
    local: ClientDataset,
    arch: NetworkArch,
    params: np.ndarray,
    policy: AugmentationPolicy,
    rng: np.random.Generator,
) -> AlignedEstimate:
    """Grow each class by augmentation batches until the newest batch's
    gradient points along the running per-class estimate.

    Similarity is ``max(0, cos)``, so a threshold of 0 stops after one batch.
    A class stops growing once it reaches ``policy.max_growth`` times its
    original size.
    """
    parts = [local]
    unavailable, added = [], {}
    for c in range(local.n_classes):
        idx = local.indices_of(c)
        if len(idx) == 0:
            unavailable.append(c)
            continue
        cls = local.subset(idx)
        cap = max(int(np.floor(policy.max_growth * len(idx))), len(idx))
        batch_size = policy.batch_size or len(idx)
        current = cls
        estimate = model.gradient(arch, params, current.features, current.labels)
        while len(current) < cap:
            take = min(batch_size, cap - len(current))
            new = augment_class(cls, take, policy, rng)
            g_new = model.gradient(arch, params, new.features, new.labels)
            similarity = max(0.0, _cosine(g_new, estimate))
            current = concat([current, new])
            estimate = model.gradient(arch, params, current.features, current.labels)
            if similarity >= policy.theta:
                break
        added[c] = len(current) - len(cls)
        if added[c]:
            parts.append(current.subset(np.arange(len(cls), len(current))))
    return AlignedEstimate(concat(parts, owner_id=local.owner_id), unavailable, added)


# ------------------------------------------------------------- objective


class InferenceObjective:
    """||observed - simulated|| for a candidate label distribution.

    The simulated update starts from the synchronized global model and runs
    ``steps`` full-batch steps at ``eta`` whose gradient is
    ``sum_c p(c) * per_class_gradient(c)`` on the attacker's estimate data.
    Classes missing from that data contribute a zero gradient and are listed
    in ``unavailable``.
    """

    def __init__(
        self,
        arch: NetworkArch,
        start: np.ndarray,
        observed_delta: np.ndarray,
        estimate: ClientDataset,
        steps: int,
        eta: float,
    ):
        if steps < 1:
            raise ConfigurationError("steps must be >= 1")
        model.check_params(arch, start)
        if observed_delta.shape != start.shape:
            raise ConfigurationError("observed update does not match the model")
        self.arch, self.start, self.observed = arch, start, observed_delta
        self.estimate, self.steps, self.eta = estimate, steps, eta
        self._g0, present = model.class_gradient_matrix(arch, start, estimate.features, estimate.labels)
        self.unavailable = [int(c) for c in np.flatnonzero(~present)]
        self.n_evals = 0

    @property
    def degraded(self) -> bool:
        return bool(self.unavailable)

    def simulate(self, p: np.ndarray) -> np.ndarray:
        params = self.start
        for step in range(self.steps):
            if step == 0:
                grads = self._g0
            else:
                grads, _ = model.class_gradient_matrix(
                    self.arch, params, self.estimate.features, self.estimate.labels
                )
            params = params - self.eta * (p @ grads)
        return params - self.start

    def __call__(self, p: np.ndarray) -> float:
        self.n_evals += 1
        return float(np.linalg.norm(self.observed - self.simulate(np.asarray(p, dtype=np.float64))))


def objective_value(
    p: np.ndarray,
    delta_global: np.ndarray,
    attacker: ClientDataset,
    arch: NetworkArch,
    start: np.ndarray,
    steps: int,
    eta: float,
) -> float:
    return InferenceObjective(arch, start, delta_global, attacker, steps, eta)(p)


# ------------------------------------------------------------- evolution


@dataclass(frozen=True)
class EvolutionConfig:
    population_size: int = 20
    nfe_budget: int = 400
    crossover_rate: float = 0.9
    mutation_rate: float = 0.3
    mutation_scale: float = 0.05
    seed: int = 0

    def validate(self) -> list[str]:
        errs = []
        if self.population_size < 2:
            errs.append("population_size must be >= 2")
        if self.nfe_budget < self.population_size:
            errs.append("nfe_budget must be >= population_size")
        for name in ("crossover_rate", "mutation_rate"):
            if not 0 <= getattr(self, name) <= 1:
                errs.append(f"{name} must lie in [0, 1]")
        if self.mutation_scale < 0:
            errs.append("mutation_scale must be >= 0")
        return errs


@dataclass
class InferenceResult:
    p_hat: np.ndarray
    objective: float
    nfe_used: int
    best_per_generation: list[float] = field(default_factory=list)
    unavailable: list[int] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "p_hat": [float(x) for x in self.p_hat],
            "objective": float(self.objective),
            "nfe_used": int(self.nfe_used),
            "unavailable_classes": list(self.unavailable),
        }


def _make_child(population: np.ndarray, cfg: EvolutionConfig, rng: np.random.Generator) -> np.ndarray:
    i, j = rng.choice(len(population), size=2, replace=False)
    child = population[i].copy()
    if rng.random() < cfg.crossover_rate:
        take = rng.random(child.shape[0]) < 0.5
        child[take] = population[j][take]
    mutate = rng.random(child.shape[0]) < cfg.mutation_rate
    child[mutate] += rng.normal(0.0, cfg.mutation_scale, size=int(mutate.sum()))
    return project_to_simplex(np.maximum(child, 0.0))


def infer_distribution(
    cfg: EvolutionConfig,
    objective,
    n_classes: int,
    prior: np.ndarray | None = None,
    initial: np.ndarray | None = None,
    trace: list | None = None,
) -> InferenceResult:
    """(mu + lambda) evolution over the simplex under an evaluation budget.

    The starting population is ``initial`` when given; otherwise S-1
    Dirichlet(1) draws plus ``prior`` (or one more draw).  Each child is
    generated from its own stream keyed by (seed, generation, index).  Every
    evaluated individual is appended to ``trace`` when provided.
    """
    errs = cfg.validate()
    if errs:
        raise ConfigurationError("; ".join(errs))
    s = cfg.population_size
    if initial is not None:
        population = np.array([project_to_simplex(x) for x in np.asarray(initial, dtype=np.float64)])
        if population.shape != (s, n_classes):
            raise ConfigurationError("initial population has the wrong shape")
    else:
        rng = make_generator(cfg.seed, "init")
        population = rng.dirichlet(np.ones(n_classes), size=s)
        if prior is not None:
            population[-1] = project_to_simplex(prior)

    def evaluate(batch):
        vals = np.array([objective(p) for p in batch])
        if trace is not None:
            trace.extend(p.copy() for p in batch)
        return vals

    scores = evaluate(population)
    used = s
    best_hist = [float(scores.min())]
    gen = 0
    while used < cfg.nfe_budget:
        gen += 1
        n_children = min(s, cfg.nfe_budget - used)
        children = np.array(
            [_make_child(population, cfg, make_generator(cfg.seed, "child", gen, i)) for i in range(n_children)]
        )
        child_scores = evaluate(children)
        used += n_children
        pool = np.vstack([population, children])
        pool_scores = np.concatenate([scores, child_scores])
        # stable sort keeps parents ahead of equally scored children
        order = np.argsort(pool_scores, kind="stable")[:s]
        population, scores = pool[order], pool_scores[order]
        best_hist.append(float(scores[0]))
    return InferenceResult(population[0].copy(), float(scores[0]), used, best_hist)


def infer_from_update(
    arch: NetworkArch,
    start: np.ndarray,
    observed_delta: np.ndarray,
    attacker_data: ClientDataset,
    steps: int,
    eta: float,
    evo: EvolutionConfig,
    policy: AugmentationPolicy | None = None,
    prior: np.ndarray | None = None,
) -> InferenceResult:
    """Full inference pipeline: estimate per-class gradients, then search."""
    if policy is not None:
        estimate = augment_until_aligned(
            attacker_data, arch, start, policy, make_generator(evo.seed, "augment")
        ).dataset
    else:
        estimate = attacker_data
    obj = InferenceObjective(arch, start, observed_delta, estimate, steps, eta)
    result = infer_distribution(evo, obj, arch.n_classes, prior=prior)
    result.unavailable = list(obj.unavailable)
    return result
