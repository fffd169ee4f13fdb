import numpy as np
import pytest

from popalign.data import ClientDataset
from popalign.model import NetworkArch


def random_instance(rng, n=None, max_hidden_layers=2, activation="tanh", all_classes=False):
    """Random (arch, params, features, labels) with small layer sizes."""
    c = int(rng.integers(2, 6))
    sizes = [int(rng.integers(2, 7))]
    sizes += [int(rng.integers(2, 8)) for _ in range(int(rng.integers(0, max_hidden_layers + 1)))]
    sizes.append(c)
    arch = NetworkArch(tuple(sizes), activation)
    params = rng.normal(0.0, 0.8, arch.n_params)
    n = n or int(rng.integers(c, 40))
    x = rng.normal(size=(n, sizes[0]))
    y = rng.integers(0, c, n)
    if all_classes:
        y[:c] = np.arange(c)
    return arch, params, x, y


def central_difference(f, params, h=1e-6):
    out = np.empty_like(params)
    for i in range(len(params)):
        e = np.zeros_like(params)
        e[i] = h
        out[i] = (f(params + e) - f(params - e)) / (2 * h)
    return out


def relative_error(a, b):
    return np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), 1e-8)


def blobs(rng, n_classes=3, per_class=30, n_features=4, sep=2.0):
    means = rng.normal(0, sep, size=(n_classes, n_features))
    y = np.repeat(np.arange(n_classes), per_class)
    x = means[y] + rng.normal(size=(len(y), n_features))
    return ClientDataset(x, y, n_classes)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed after the run
VERDICTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
