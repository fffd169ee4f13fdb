import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from popalign.defenses import (
    DefenseConfig,
    FoolsGold,
    GradientHistory,
    LocalDP,
    dp_perturb,
    dp_sigma,
    foolsgold_weights,
    make_aggregator,
)
from popalign.engine import ClientUpdate, aggregate, fedavg
from popalign.errors import ConfigurationError
from popalign.rng import Streams, make_generator


def history(vectors):
    h = GradientHistory()
    for i, v in enumerate(vectors):
        h.add(i, np.asarray(v, dtype=float))
    return h


class TestFoolsGold:
    @pytest.mark.parametrize("variant", ["full", "max_cosine"])
    def test_identical_histories_zero(self, variant):
        w = foolsgold_weights(history([[1.0, 2.0, 3.0]] * 3), [0, 1, 2], variant)
        assert w == {0: 0.0, 1: 0.0, 2: 0.0}

    @pytest.mark.parametrize("variant", ["full", "max_cosine"])
    def test_orthogonal_histories_one(self, variant):
        w = foolsgold_weights(history(np.eye(4)), [0, 1, 2, 3], variant)
        assert all(v == 1.0 for v in w.values())

    def test_sybils_downweighted(self, rng):
        honest = rng.normal(size=(3, 20))
        sybil = rng.normal(size=20)
        vecs = np.vstack([honest, sybil, sybil + 1e-3 * rng.normal(size=20)])
        w = foolsgold_weights(history(vecs), list(range(5)), "full")
        assert max(w[3], w[4]) < min(w[0], w[1], w[2])

    @settings(max_examples=50)
    @given(st.integers(0, 2**32 - 1), st.sampled_from(["full", "max_cosine"]))
    def test_scale_invariance(self, seed, variant):
        rng = np.random.default_rng(seed)
        vecs = rng.normal(size=(4, 6))
        factors = rng.uniform(1e-3, 1e3, 4)
        a = foolsgold_weights(history(vecs), [0, 1, 2, 3], variant)
        b = foolsgold_weights(history(vecs * factors[:, None]), [0, 1, 2, 3], variant)
        for i in a:
            assert a[i] == pytest.approx(b[i], abs=1e-12)

    def test_single_participant(self):
        assert foolsgold_weights(history([[1.0, 0.0]]), [0]) == {0: 1.0}

    def test_missing_history(self):
        with pytest.raises(ConfigurationError):
            foolsgold_weights(history([[1.0, 0.0]]), [0, 1])

    def test_history_depth(self):
        h = GradientHistory(depth=2)
        for v in ([1.0, 0.0], [0.0, 1.0], [0.0, 2.0]):
            h.add(0, np.array(v))
        np.testing.assert_array_equal(h.vector(0), [0.0, 3.0])

    def test_aggregator_uses_weights(self, rng):
        fg = FoolsGold()
        ups = [ClientUpdate(rng.normal(size=3), 10, i) for i in range(3)]
        out = fg(0, np.zeros(3), ups)
        np.testing.assert_array_equal(out, aggregate(np.zeros(3), ups, fg.last_weights))


class TestSigma:
    def test_reference_value(self):
        assert dp_sigma(50, 1e-5) == pytest.approx(0.09689610525210778, abs=1e-15)

    def test_formula(self):
        for eps, delta in ((1.0, 1e-3), (8.0, 1e-6), (50.0, 0.5)):
            assert dp_sigma(eps, delta) == pytest.approx(math.sqrt(2 * math.log(1.25 / delta)) / eps, rel=1e-15)

    def test_doubling_epsilon_halves(self):
        assert dp_sigma(100, 1e-5) == pytest.approx(dp_sigma(50, 1e-5) / 2, rel=1e-15)

    def test_delta_edge(self):
        assert dp_sigma(50, 1.25) == 0.0

    def test_invalid(self):
        with pytest.raises(ConfigurationError):
            dp_sigma(0.0, 1e-5)


class TestPerturb:
    def test_clip_arithmetic(self):
        out = dp_perturb(ClientUpdate(np.array([3.0, 4.0]), 1, 0), 1.0, 0.0, make_generator(0, "dp"))
        np.testing.assert_allclose(out.delta, [0.6, 0.8], atol=1e-15)
        assert out.noised

    def test_short_vector_kept(self):
        d = np.array([0.3, 0.4])
        np.testing.assert_array_equal(dp_perturb(ClientUpdate(d, 1, 0), 1.0, 0.0, make_generator(0, "dp")).delta, d)

    @settings(max_examples=100)
    @given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
    def test_norm_bounded(self, seed, bound):
        rng = np.random.default_rng(seed)
        d = rng.normal(size=12) * 10.0 ** rng.uniform(-4, 4)
        out = dp_perturb(ClientUpdate(d, 1, 0), bound, 0.0, rng)
        assert np.linalg.norm(out.delta) <= bound * (1 + 1e-12)

    def test_noise_std(self):
        sigma, bound = 0.2, 3.0
        out = dp_perturb(ClientUpdate(np.zeros(100_000), 1, 0), bound, sigma, make_generator(1, "dp"))
        assert out.delta.std() == pytest.approx(sigma * bound, rel=0.02)
        assert abs(out.delta.mean()) < 5 * sigma * bound / math.sqrt(100_000)


class TestLocalDP:
    def updates(self, rng):
        ups = [ClientUpdate(rng.normal(size=50) * (i + 1), 10, i) for i in range(4)]
        ups.append(ClientUpdate(rng.normal(size=50) * 100, 10, 4, "backdoor"))
        return ups

    def test_backdoor_bypasses_and_others_noised(self, rng):
        dp = LocalDP(50, 1e-5, "median", Streams(0))
        ups = self.updates(rng)
        dp(3, np.zeros(50), ups)
        by_id = {u.client_id: u for u in dp.last_updates}
        assert not by_id[4].noised
        np.testing.assert_array_equal(by_id[4].delta, ups[4].delta)
        assert all(by_id[i].noised for i in range(4))

    def test_median_excludes_backdoor(self, rng):
        dp = LocalDP(50, 1e-5, "median", Streams(0))
        ups = self.updates(rng)
        assert dp.round_clip(ups) == pytest.approx(np.median([np.linalg.norm(u.delta) for u in ups[:4]]), rel=1e-15)

    def test_fixed_bound(self, rng):
        assert LocalDP(50, 1e-5, 2.5, Streams(0)).round_clip(self.updates(rng)) == 2.5

    def test_deterministic(self, rng):
        ups = self.updates(rng)
        a = LocalDP(50, 1e-5, "median", Streams(7))(2, np.zeros(50), ups)
        b = LocalDP(50, 1e-5, "median", Streams(7))(2, np.zeros(50), list(reversed(ups)))
        assert a.tobytes() == b.tobytes()


class TestFactory:
    def test_none_is_fedavg(self, rng):
        agg = make_aggregator(DefenseConfig(), Streams(0))
        assert agg is fedavg
        ups = [ClientUpdate(rng.normal(size=4), 3, 0), ClientUpdate(rng.normal(size=4), 5, 1)]
        assert agg(0, np.ones(4), ups).tobytes() == aggregate(np.ones(4), ups).tobytes()

    def test_kinds(self):
        assert isinstance(make_aggregator(DefenseConfig("foolsgold"), Streams(0)), FoolsGold)
        assert isinstance(make_aggregator(DefenseConfig("local_dp"), Streams(0)), LocalDP)
        with pytest.raises(ConfigurationError):
            make_aggregator(DefenseConfig("krum"), Streams(0))

    def test_validate(self):
        assert not DefenseConfig().validate()
        errs = DefenseConfig("krum", dp_epsilon=0, clip_bound="mean", foolsgold_variant="x").validate()
        assert len(errs) == 4
