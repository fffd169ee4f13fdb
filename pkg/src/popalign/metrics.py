"""Evaluation quantities, metric series, and the weight-divergence bound check."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import model
from .backdoor import TriggerSpec, apply_trigger
from .data import ClientDataset, concat, label_distribution
from .engine import centralized_train
from .errors import ConfigurationError, UndefinedMetricError
from .model import NetworkArch


def main_accuracy(arch: NetworkArch, params: np.ndarray, test: ClientDataset) -> float:
    if len(test) == 0:
        raise UndefinedMetricError("accuracy of an empty test set")
    return float(np.mean(model.predict(arch, params, test.features) == test.labels))


def backdoor_test_set(test: ClientDataset, trigger: TriggerSpec) -> ClientDataset:
    """Triggered copies of every test sample whose true label is not the target."""
    keep = np.flatnonzero(test.labels != trigger.target_label)
    if len(keep) == 0:
        raise UndefinedMetricError("every test sample carries the target label")
    feats, labels = apply_trigger(test.features[keep], test.labels[keep], trigger)
    return ClientDataset(feats, labels, test.n_classes, image_shape=test.image_shape)


def backdoor_success(arch: NetworkArch, params: np.ndarray, test: ClientDataset, trigger: TriggerSpec) -> float:
    poisoned = backdoor_test_set(test, trigger)
    return float(np.mean(model.predict(arch, params, poisoned.features) == trigger.target_label))


# ------------------------------------------------------------------ series


@dataclass
class MetricSeries:
    name: str
    rounds: list[int] = field(default_factory=list)
    values: list[float] = field(default_factory=list)

    def append(self, rnd: int, value: float) -> None:
        if self.rounds and rnd <= self.rounds[-1]:
            raise ConfigurationError(f"{self.name}: round {rnd} does not follow {self.rounds[-1]}")
        self.rounds.append(int(rnd))
        self.values.append(float(value))

    def at(self, rnd: int) -> float:
        return self.values[self.rounds.index(rnd)]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["round", "value"])
        for r, v in zip(self.rounds, self.values):
            w.writerow([r, repr(float(v))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, name: str, text: str) -> "MetricSeries":
        rows = list(csv.reader(io.StringIO(text)))
        if rows[0] != ["round", "value"]:
            raise ConfigurationError("metric CSV must start with 'round,value'")
        s = cls(name)
        for r, v in rows[1:]:
            s.append(int(r), float(v))
        return s


def success_window_stats(series: MetricSeries, injection_round: int, window: int = 10) -> tuple[float, float]:
    """Mean and population std over ``window`` rounds starting at the injection round.

    The value logged for a round is measured on the model aggregated in that
    round, so the injection round itself is the first post-injection value.
    """
    wanted = list(range(injection_round, injection_round + window))
    have = set(series.rounds)
    missing = [r for r in wanted if r not in have]
    if missing:
        raise ConfigurationError(
            f"{series.name}: window {wanted[0]}..{wanted[-1]} is truncated (missing {missing})"
        )
    vals = np.array([series.at(r) for r in wanted])
    return float(vals.mean()), float(vals.std())


# ------------------------------------------------- divergence bound check


# The bound is attained with equality whenever only one step contributes
# (t <= 2: the first step's term vanishes because every model starts at the
# same point), so both sides agree up to the rounding of parameter-sized sums.
BOUND_RTOL = 1e-9
BOUND_ATOL = 1e-12


@dataclass
class BoundReport:
    lhs: float
    rhs: float
    setting: str
    skipped_terms: list[tuple[int, int]] = field(default_factory=list)

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs * (1.0 + BOUND_RTOL) + BOUND_ATOL

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs


def _class_grads(arch, params, data: ClientDataset):
    return model.class_gradient_matrix(arch, params, data.features, data.labels)


def divergence_bound_check(
    arch: NetworkArch,
    start: np.ndarray,
    clients: list[ClientDataset],
    steps: int,
    eta: float,
    literal_first_term: bool = False,
) -> tuple[BoundReport, list[BoundReport]]:
    """Measure intra-round weight divergence and the per-step bounds on it.

    FL, every local model and the centralized twin all start from ``start``;
    the population is the union of ``clients`` and each trains ``steps``
    full-batch steps at ``eta``.  Returns the report for the FL global model
    and one report per client.

    The per-client bound's distribution term is evaluated at the centralized
    weights, which is what the triangle-inequality argument produces.
    ``literal_first_term=True`` evaluates it at the local weights instead.
    """
    if steps < 0:
        raise ConfigurationError("steps must be >= 0")
    population = concat(clients)
    p = label_distribution(population)
    n = len(population)
    sizes = np.array([len(c) for c in clients], dtype=np.float64)
    pk = [label_distribution(c) for c in clients]

    cen_path: list[np.ndarray] = []
    w_cen = centralized_train(arch, population, start, steps, eta, record=cen_path)
    loc_paths: list[list[np.ndarray]] = []
    w_loc = []
    for data in clients:
        path: list[np.ndarray] = []
        w_loc.append(centralized_train(arch, data, start, steps, eta, record=path))
        loc_paths.append(path)

    rhs8 = 0.0
    rhs9 = np.zeros(len(clients))
    skipped8: list[tuple[int, int]] = []
    skipped9: list[list[tuple[int, int]]] = [[] for _ in clients]
    for tau in range(steps):
        g_cen, _ = _class_grads(arch, cen_path[tau], population)
        fl_term = np.zeros_like(start)
        for k, data in enumerate(clients):
            g_k, present_k = _class_grads(arch, loc_paths[k][tau], data)
            for c in np.flatnonzero(~present_k):
                skipped8.append((k, int(c)))
                skipped9[k].append((k, int(c)))
            # absent classes have p_k(c) = 0, so their zero rows drop out
            mix = pk[k] @ (g_k - g_cen)
            fl_term += (sizes[k] / n) * mix
            if literal_first_term:
                g_dist, _ = _class_grads(arch, loc_paths[k][tau], population)
            else:
                g_dist = g_cen
            dist_term = (p - pk[k]) @ g_dist
            rhs9[k] += eta * (np.linalg.norm(dist_term) + np.linalg.norm(mix))
        rhs8 += eta * float(np.linalg.norm(fl_term))

    w_fl = sum((sizes[k] / n) * w_loc[k] for k in range(len(clients)))
    eq8 = BoundReport(float(np.linalg.norm(w_fl - w_cen)), float(rhs8), f"fl-vs-cl t={steps}", skipped8)
    eq9 = [
        BoundReport(float(np.linalg.norm(w_loc[k] - w_cen)), float(rhs9[k]), f"client{k}-vs-cl t={steps}", skipped9[k])
        for k in range(len(clients))
    ]
    return eq8, eq9
