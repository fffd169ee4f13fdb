import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize

from popalign import model
from popalign.errors import ConfigurationError, EmptyClassError, NumericError
from popalign.model import NetworkArch

from .conftest import central_difference, random_instance, relative_error


class TestArch:
    def test_param_count(self):
        arch = NetworkArch((4, 3, 2))
        assert arch.n_params == 4 * 3 + 3 + 3 * 2 + 2

    @pytest.mark.parametrize("sizes", [(3,), (3, 1), (3, 0, 2)])
    def test_invalid(self, sizes):
        with pytest.raises(ConfigurationError):
            NetworkArch(sizes)

    def test_init_range(self, rng):
        arch = NetworkArch((16, 4, 3))
        p = arch.init_params(rng)
        (w1, b1), (w2, b2) = arch.unflatten(p)
        assert np.abs(w1).max() <= 0.25 and np.abs(b1).max() <= 0.25
        assert np.abs(w2).max() <= 0.5

    def test_shape_mismatch(self, rng):
        arch = NetworkArch((3, 2))
        with pytest.raises(ConfigurationError):
            model.forward(arch, np.zeros(5), rng.normal(size=(2, 3)))
        with pytest.raises(ConfigurationError):
            model.forward(arch, np.zeros(arch.n_params), rng.normal(size=(2, 4)))


class TestForward:
    def test_zero_weights_uniform(self, rng):
        arch = NetworkArch((5, 7, 4))
        probs = model.forward(arch, np.zeros(arch.n_params), rng.normal(size=(6, 5)))
        np.testing.assert_array_equal(probs, np.full((6, 4), 0.25))

    def test_hand_computed_2_2_2(self):
        arch = NetworkArch((2, 2, 2), "tanh")
        # W1 = [[1, -1], [0.5, 2]], b1 = [0.1, -0.2], W2 = [[1, 0], [-1, 1]], b2 = [0, 0.3]
        params = np.array([1, -1, 0.5, 2, 0.1, -0.2, 1, 0, -1, 1, 0, 0.3], dtype=float)
        x = np.array([[0.4, -0.6]])
        h1 = math.tanh(0.4 * 1 + -0.6 * 0.5 + 0.1)
        h2 = math.tanh(0.4 * -1 + -0.6 * 2 - 0.2)
        z1 = h1 * 1 + h2 * -1 + 0.0
        z2 = h1 * 0 + h2 * 1 + 0.3
        e1, e2 = math.exp(z1), math.exp(z2)
        expected = [e1 / (e1 + e2), e2 / (e1 + e2)]
        np.testing.assert_allclose(model.forward(arch, params, x)[0], expected, rtol=1e-14)

    def test_row_permutation(self, rng):
        arch, params, x, _ = random_instance(rng)
        perm = rng.permutation(len(x))
        np.testing.assert_array_equal(model.forward(arch, params, x)[perm], model.forward(arch, params, x[perm]))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.1, 30.0))
    def test_rows_are_distributions(self, seed, scale):
        rng = np.random.default_rng(seed)
        arch, params, x, _ = random_instance(rng)
        probs = model.forward(arch, params * scale, x * scale)
        assert np.all(probs >= 0)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)


def scalar_loss(arch, params, x, y):
    """Loop-based cross-entropy written independently of the vectorized path."""
    layers = arch.unflatten(params)
    total = 0.0
    for row, label in zip(x, y):
        h = list(row)
        for li, (w, b) in enumerate(layers):
            z = [sum(h[i] * w[i, j] for i in range(len(h))) + b[j] for j in range(w.shape[1])]
            h = [math.tanh(v) for v in z] if li < len(layers) - 1 else z
        m = max(h)
        log_norm = m + math.log(sum(math.exp(v - m) for v in h))
        total += log_norm - h[label]
    return total / len(y)


class TestLoss:
    def test_confident_correct_is_zero(self):
        arch = NetworkArch((2, 2))
        params = np.array([0, 0, 0, 0, 1000.0, -1000.0])
        assert model.loss(arch, params, np.zeros((3, 2)), np.zeros(3, dtype=int)) == 0.0

    def test_uniform_is_log_c(self, rng):
        arch = NetworkArch((3, 5, 4))
        y = rng.integers(0, 4, 9)
        assert model.loss(arch, np.zeros(arch.n_params), rng.normal(size=(9, 3)), y) == pytest.approx(math.log(4), abs=1e-15)

    def test_matches_scalar_oracle(self, rng):
        for _ in range(10):
            arch, params, x, y = random_instance(rng)
            assert model.loss(arch, params, x, y) == pytest.approx(scalar_loss(arch, params, x, y), rel=1e-12)

    def test_clamped_not_infinite(self):
        arch = NetworkArch((2, 2))
        params = np.array([0, 0, 0, 0, 1e4, -1e4])
        val = model.loss(arch, params, np.zeros((1, 2)), np.array([1]))
        assert val == pytest.approx(-math.log(1e-12))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_nonnegative_and_pure(self, seed):
        arch, params, x, y = random_instance(np.random.default_rng(seed))
        a = model.loss(arch, params, x, y)
        assert a >= 0
        assert a == model.loss(arch, params.copy(), x.copy(), y.copy())
        np.testing.assert_array_equal(model.gradient(arch, params, x, y), model.gradient(arch, params, x, y))


class TestGradient:
    @pytest.mark.parametrize("activation", ["tanh", "sigmoid"])
    def test_central_difference(self, rng, activation):
        for _ in range(5):
            arch, params, x, y = random_instance(rng, activation=activation)
            fd = central_difference(lambda p: model.loss(arch, p, x, y), params)
            assert relative_error(model.gradient(arch, params, x, y), fd).max() < 1e-5

    def test_vanishes_at_fitted_minimum(self, rng):
        # overlapping classes keep the softmax-regression optimum finite
        arch = NetworkArch((2, 2))
        x = rng.normal(size=(40, 2))
        y = (x[:, 0] + rng.normal(0, 1.5, 40) > 0).astype(int)
        res = optimize.minimize(
            lambda p: model.loss(arch, p, x, y), np.zeros(arch.n_params),
            jac=lambda p: model.gradient(arch, p, x, y), method="BFGS", options={"gtol": 1e-10},
        )
        assert np.linalg.norm(model.gradient(arch, res.x, x, y)) < 1e-6

    def test_duplicate_batch(self, rng):
        arch, params, x, y = random_instance(rng)
        np.testing.assert_allclose(
            model.gradient(arch, params, np.vstack([x, x]), np.concatenate([y, y])),
            model.gradient(arch, params, x, y), rtol=1e-12, atol=1e-15,
        )


class TestPerClass:
    def test_single_class_dataset(self, rng):
        arch, params, x, _ = random_instance(rng)
        y = np.full(len(x), 1)
        np.testing.assert_array_equal(model.per_class_gradient(arch, params, x, y, 1), model.gradient(arch, params, x, y))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_linearity_identity(self, seed):
        arch, params, x, y = random_instance(np.random.default_rng(seed))
        props = np.bincount(y, minlength=arch.n_classes) / len(y)
        mix = sum(props[c] * model.per_class_gradient(arch, params, x, y, c) for c in np.unique(y))
        assert np.abs(mix - model.gradient(arch, params, x, y)).max() < 1e-10

    def test_disjoint_subsets(self, rng):
        arch, params, x, y = random_instance(rng, n=30)
        y[:] = 0
        a, b = 12, 18
        ga = model.per_class_gradient(arch, params, x[:a], y[:a], 0)
        gb = model.per_class_gradient(arch, params, x[a:], y[a:], 0)
        np.testing.assert_allclose(
            model.per_class_gradient(arch, params, x, y, 0), (a * ga + b * gb) / (a + b), atol=1e-14
        )

    def test_absent_class(self, rng):
        arch, params, x, _ = random_instance(rng)
        with pytest.raises(EmptyClassError) as info:
            model.per_class_gradient(arch, params, x, np.zeros(len(x), dtype=int), 1)
        assert info.value.label == 1

    def test_matrix_marks_absent_rows(self, rng):
        arch, params, x, _ = random_instance(rng)
        y = np.zeros(len(x), dtype=int)
        g, present = model.class_gradient_matrix(arch, params, x, y)
        assert present.tolist() == [True] + [False] * (arch.n_classes - 1)
        assert not g[1:].any()


class TestSgdStep:
    def test_zero_gradient(self):
        p = np.array([1.0, -2.0])
        np.testing.assert_array_equal(model.sgd_step(p, np.zeros(2), 0.5), p)

    def test_arithmetic(self):
        np.testing.assert_allclose(model.sgd_step(np.array([1.0, 1.0]), np.array([10.0, -10.0]), 0.1), [0.0, 2.0])

    def test_non_finite(self):
        with pytest.raises(NumericError):
            model.sgd_step(np.zeros(2), np.array([np.nan, 0.0]), 0.1)

    def test_composition_matches_unrolled_loop(self, rng):
        arch, params, x, y = random_instance(rng)
        composed = params
        for _ in range(4):
            composed = model.sgd_step(composed, model.gradient(arch, composed, x, y), 0.05)
        w = params.copy()
        for _ in range(4):
            w -= 0.05 * model.gradient(arch, w, x, y)
        np.testing.assert_array_equal(composed, w)
