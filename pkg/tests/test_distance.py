import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diversifed import distance
from diversifed.distance import ServerHyper
from diversifed.gradcheck import central_difference, relative_error
from diversifed.params import DistanceRow, ModelPool

# 3-model worked example at (0,0), (1,0), (0,2) with tau = 1, seen from model 0.
# Frozen from the closed forms softmax = (1, e)/(1+e), xi = 1/2 - softmax,
# beta_j = xi_j / d_j (30-digit mpmath evaluation).
P_NEAR, P_FAR = 0.268941421369995, 0.731058578630005
LOSS = -0.813261687518223
XI = 0.231058578630005
BETA_SELF, BETA_NEAR, BETA_FAR = 0.884470710684998, 0.231058578630005, -0.115529289315002


def toy_pool():
    return ModelPool.from_models({0: [0.0, 0.0], 1: [1.0, 0.0], 2: [0.0, 2.0]})


def equidistant_pool():
    return ModelPool.from_models({0: [0.0, 0.0, 0.0], 1: [1.0, 0.0, 0.0],
                                  2: [0.0, 1.0, 0.0], 3: [0.0, 0.0, 1.0]})


def pools(min_n=3, max_n=10, min_dim=5, max_dim=100):
    return st.builds(
        lambda n, dim, seed: ModelPool(tuple(range(n)), np.random.default_rng(seed).standard_normal((n, dim))),
        st.integers(min_n, max_n), st.integers(min_dim, max_dim), st.integers(0, 2**32 - 1))


hypers = st.builds(ServerHyper, tau=st.floats(0.5, 1.1), alpha_t=st.sampled_from([0.5, 1.0]))


def test_server_hyper_validation():
    with pytest.raises(ValueError):
        ServerHyper(tau=0.0)
    with pytest.raises(ValueError):
        ServerHyper(alpha_t=-1.0)


class TestSoftmax:
    def test_uniform(self):
        probs = distance.softmax_over_distances(DistanceRow(0, (1, 2, 3, 4), np.full(4, 3.3)))
        assert np.allclose(probs, 0.25, atol=1e-15)

    def test_worked_example(self):
        probs = distance.softmax_over_distances(DistanceRow(0, (1, 2), np.array([1.0, 2.0])))
        assert probs == pytest.approx([P_NEAR, P_FAR], abs=1e-5)
        assert probs.sum() == pytest.approx(1.0, abs=1e-12)

    def test_no_overflow(self):
        probs = distance.softmax_over_distances(DistanceRow(0, (1, 2, 3), np.array([1e6, 0.0, 0.0])))
        assert np.all(np.isfinite(probs))
        assert probs[0] == pytest.approx(1.0)

    def test_log_softmax_direct(self):
        row = DistanceRow(0, (1, 2), np.array([0.0, 800.0]))
        logp = distance.log_softmax_over_distances(row)
        assert logp[0] == pytest.approx(-800.0)
        assert np.isfinite(logp).all()


class TestLoss:
    def test_two_clients_is_zero(self):
        pool = ModelPool.from_models({0: [0.0, 1.0], 1: [5.0, 2.0]})
        assert distance.model_distance_loss(pool, 0) == 0.0

    def test_equidistant(self):
        loss = distance.model_distance_loss(equidistant_pool(), 0)
        assert loss == pytest.approx(math.log(1 / 3), abs=1e-12)

    def test_three_equidistant_is_log_half(self):
        pool = ModelPool.from_models({0: [0.0, 0.0], 1: [1.0, 0.0], 2: [0.5, math.sqrt(3) / 2]})
        assert distance.model_distance_loss(pool, 0) == pytest.approx(-0.693147, abs=1e-6)

    def test_worked_example(self):
        assert distance.model_distance_loss(toy_pool(), 0) == pytest.approx(LOSS, abs=1e-5)

    @settings(max_examples=100)
    @given(pools(min_n=2), hypers)
    def test_nonpositive_and_zero_only_at_two(self, pool, hyper):
        loss = distance.model_distance_loss(pool, 0, hyper)
        assert loss <= 0.0
        if pool.n == 2:
            assert loss == 0.0
        else:
            assert loss < 0.0


class TestGrad:
    def test_identical_models_zero(self):
        pool = ModelPool(tuple(range(4)), np.ones((4, 5)))
        assert not np.any(distance.model_distance_grad(pool, 2))

    def test_worked_example(self):
        assert distance.model_distance_grad(toy_pool(), 0) == pytest.approx([-XI, XI], abs=1e-5)

    def test_fd_on_random_pool(self):
        rng = np.random.default_rng(7)
        pool = ModelPool(tuple(range(5)), rng.standard_normal((5, 20)))

        def loss(w):
            m = pool.matrix.copy()
            m[0] = w
            return distance.model_distance_loss(ModelPool(pool.ids, m), 0)

        numeric = central_difference(loss, pool[0], 1e-4)
        assert relative_error(distance.model_distance_grad(pool, 0), numeric) < 1e-5

    @settings(max_examples=30, deadline=None)
    @given(pools(max_dim=40), hypers, st.integers(0, 9))
    def test_fd_property(self, pool, hyper, which):
        center = which % pool.n
        row = pool.index(center)

        def loss(w):
            m = pool.matrix.copy()
            m[row] = w
            return distance.model_distance_loss(ModelPool(pool.ids, m), center, hyper)

        numeric = central_difference(loss, pool[center], 1e-4)
        assert relative_error(distance.model_distance_grad(pool, center, hyper), numeric) < 1e-5

    def test_normalized_distances_fd(self):
        rng = np.random.default_rng(8)
        pool = ModelPool(tuple(range(4)), rng.standard_normal((4, 12)))
        hyper = ServerHyper(tau=0.8, normalize_by_sqrt_dim=True)

        def loss(w):
            m = pool.matrix.copy()
            m[1] = w
            return distance.model_distance_loss(ModelPool(pool.ids, m), 1, hyper)

        numeric = central_difference(loss, pool[1], 1e-4)
        assert relative_error(distance.model_distance_grad(pool, 1, hyper), numeric) < 1e-5


class TestServerStep:
    def test_identical_models_keep_anchor(self):
        pool = ModelPool(tuple(range(3)), np.ones((3, 4)))
        assert np.array_equal(distance.server_step(pool, 0), pool[0])

    def test_worked_example(self):
        assert distance.server_step(toy_pool(), 0) == pytest.approx([XI, -XI], abs=1e-5)

    def test_alpha_scales_step(self):
        z = distance.server_step(toy_pool(), 0, ServerHyper(alpha_t=0.5))
        assert z == pytest.approx([XI / 2, -XI / 2], abs=1e-12)

    @settings(max_examples=100)
    @given(pools(), hypers, st.integers(0, 9))
    def test_equals_weighted_combination(self, pool, hyper, which):
        center = which % pool.n
        weights = distance.combination_weights(pool, center, hyper)
        z = distance.server_step(pool, center, hyper)
        assert np.max(np.abs(z - distance.apply_weights(pool, weights))) <= 1e-9
        assert abs(weights.total - 1.0) <= 1e-9


class TestCombinationWeights:
    def test_identical_models(self):
        weights = distance.combination_weights(ModelPool(tuple(range(3)), np.zeros((3, 2))), 0)
        assert weights.beta_self == 1.0
        assert not np.any(weights.betas)

    def test_worked_example(self):
        w = distance.combination_weights(toy_pool(), 0).as_dict()
        assert w[0] == pytest.approx(BETA_SELF, abs=1e-5)
        assert w[1] == pytest.approx(BETA_NEAR, abs=1e-5)
        assert w[2] == pytest.approx(BETA_FAR, abs=1e-5)
        assert sum(w.values()) == pytest.approx(1.0, abs=1e-12)

    def test_two_clients_no_interaction(self):
        pool = ModelPool.from_models({0: [0.0, 1.0], 1: [3.0, -2.0]})
        weights = distance.combination_weights(pool, 0)
        assert weights.betas.tolist() == [0.0]
        assert np.array_equal(distance.server_step(pool, 0), pool[0])


class TestSignRule:
    def test_equidistant_all_neutral(self):
        assert set(distance.sign_rule_check(equidistant_pool(), 0).values()) == {distance.NEUTRAL}

    def test_worked_example(self):
        assert distance.sign_rule_check(toy_pool(), 0) == {1: distance.ATTRACT, 2: distance.REPEL}

    def test_outlier_repelled_from_cluster(self):
        rng = np.random.default_rng(11)
        cluster = rng.normal(0.0, 0.1, size=(39, 30))
        outlier = np.full((1, 30), 5.0)
        pool = ModelPool(tuple(range(40)), np.vstack([cluster, outlier]))
        labels = distance.sign_rule_check(pool, 0)
        assert labels[39] == distance.REPEL
        assert all(labels[j] == distance.ATTRACT for j in range(1, 39))

    @settings(max_examples=100)
    @given(pools(), hypers, st.integers(0, 9))
    def test_matches_softmax_comparison(self, pool, hyper, which):
        center = which % pool.n
        by_beta = distance.sign_rule_check(pool, center, hyper)
        by_softmax = distance.softmax_rule(pool, center, hyper)
        for cid, label in by_beta.items():
            if label != distance.NEUTRAL:
                assert label == by_softmax[cid]


@settings(max_examples=100)
@given(st.lists(st.floats(0.0, 20.0), min_size=2, max_size=12), st.floats(0.2, 5.0), st.floats(1.0, 4.0))
def test_larger_tau_flattens_softmax(raw, tau, factor):
    def entropy(t):
        p = distance.softmax_over_distances(DistanceRow(0, tuple(range(len(raw))), np.array(raw) / t))
        return -float(np.sum(p * np.log(p)))

    assert entropy(tau * factor) >= entropy(tau) - 1e-12
