"""Model families: init, gradients, local SGD, averaging, checkpoints."""

import math

import numpy as np
import pytest

from radfed.errors import ConsistencyError, NumericError, ParameterError
from radfed.model import (
    ModelState,
    TrainingConfig,
    average_models,
    client_update,
    init_model,
    linear_family,
    load_checkpoint,
    logistic_family,
    loss_and_grad,
    mlp_family,
    predict_proba,
    save_checkpoint,
    weighted_average_models,
)

from conftest import make_client


def finite_difference_grad(state, x, y, anchor=None, prox_mu=0.0, h=1e-6):
    """Central-difference oracle, one coordinate at a time."""
    grad = np.zeros_like(state.params)
    for i in range(len(state.params)):
        plus = state.copy()
        plus.params[i] += h
        minus = state.copy()
        minus.params[i] -= h
        lp, _ = loss_and_grad(plus, x, y, anchor, prox_mu)
        lm, _ = loss_and_grad(minus, x, y, anchor, prox_mu)
        grad[i] = (lp - lm) / (2 * h)
    return grad


def random_state_and_batch(kind, rng):
    n_features = int(rng.integers(2, 5))
    n = int(rng.integers(2, 8))
    x = rng.normal(size=(n, n_features))
    if kind == "logistic":
        family = logistic_family(n_features)
        y = rng.integers(0, 2, size=n)
    else:
        n_classes = int(rng.integers(2, 4))
        family = mlp_family((n_features, int(rng.integers(2, 6)), n_classes))
        y = rng.integers(0, n_classes, size=n)
    state = init_model(family, seed=int(rng.integers(1000)))
    state.params = rng.normal(scale=0.5, size=len(state.params))
    return state, x, y


# ---------------------------------------------------------------------------
# init_model
# ---------------------------------------------------------------------------


class TestInit:
    def test_logistic_starts_at_zero(self):
        state = init_model(logistic_family(4), seed=99)
        assert state.params.tolist() == [0.0] * 5

    def test_mlp_deterministic_given_seed(self):
        a = init_model(mlp_family((2, 3, 2)), seed=7)
        b = init_model(mlp_family((2, 3, 2)), seed=7)
        np.testing.assert_array_equal(a.params, b.params)

    def test_different_seeds_differ(self):
        a = init_model(mlp_family((2, 3, 2)), seed=7)
        b = init_model(mlp_family((2, 3, 2)), seed=8)
        assert not np.array_equal(a.params, b.params)

    def test_mlp_param_count(self):
        family = mlp_family((4, 8, 3))
        assert family.n_params == (4 + 1) * 8 + (8 + 1) * 3
        assert len(init_model(family).params) == family.n_params

    def test_invalid_layer_sizes(self):
        with pytest.raises(ParameterError):
            mlp_family((4, 0, 3))

    def test_state_length_checked(self):
        with pytest.raises(ConsistencyError):
            ModelState(params=np.zeros(3), family=logistic_family(4))


# ---------------------------------------------------------------------------
# loss_and_grad
# ---------------------------------------------------------------------------


class TestLossAndGrad:
    def test_logistic_hand_gradient(self):
        # one sample x=1, y=1 at w=0: d/dw = (sigmoid(0) - 1) * 1 = -0.5
        state = init_model(logistic_family(1))
        loss, grad = loss_and_grad(state, np.array([[1.0]]), np.array([1]))
        assert loss == pytest.approx(math.log(2))
        assert grad[0] == pytest.approx(-0.5)
        assert grad[1] == pytest.approx(-0.5)  # bias sees the same error

    def test_plain_cross_entropy_fixture(self):
        # 2 samples, w=[1, 0], b=0: loss = mean of log(1+e^-1), log(1+e^0)
        state = ModelState(np.array([1.0, 0.0]), logistic_family(1))
        x = np.array([[1.0], [0.0]])
        y = np.array([1, 0])
        loss, _ = loss_and_grad(state, x, y)
        expected = (math.log(1 + math.exp(-1)) + math.log(2)) / 2
        assert loss == pytest.approx(expected, rel=1e-12)

    def test_anchor_equal_to_state_adds_nothing(self):
        rng = np.random.default_rng(0)
        state, x, y = random_state_and_batch("logistic", rng)
        plain = loss_and_grad(state, x, y)
        anchored = loss_and_grad(state, x, y, anchor=state.copy(), prox_mu=0.5)
        assert anchored[0] == pytest.approx(plain[0])
        np.testing.assert_allclose(anchored[1], plain[1])

    def test_prox_requires_anchor(self):
        state = init_model(logistic_family(1))
        with pytest.raises(ParameterError):
            loss_and_grad(state, np.array([[1.0]]), np.array([1]), prox_mu=0.1)

    @pytest.mark.parametrize("kind", ["logistic", "mlp"])
    def test_gradient_matches_finite_differences(self, kind):
        rng = np.random.default_rng(42)
        for _ in range(20):
            state, x, y = random_state_and_batch(kind, rng)
            _, grad = loss_and_grad(state, x, y)
            fd = finite_difference_grad(state, x, y)
            np.testing.assert_allclose(grad, fd, rtol=1e-5, atol=1e-7)

    def test_gradient_with_l2_and_prox(self):
        rng = np.random.default_rng(3)
        state, x, y = random_state_and_batch("mlp", rng)
        state.l2 = 0.3
        anchor = state.copy()
        anchor.params = rng.normal(size=len(anchor.params))
        _, grad = loss_and_grad(state, x, y, anchor=anchor, prox_mu=0.7)
        fd = finite_difference_grad(state, x, y, anchor=anchor, prox_mu=0.7)
        np.testing.assert_allclose(grad, fd, rtol=1e-5, atol=1e-7)

    def test_nan_features_rejected(self):
        state = init_model(logistic_family(1))
        with pytest.raises(NumericError):
            loss_and_grad(state, np.array([[np.nan]]), np.array([1]))

    def test_empty_batch_rejected(self):
        state = init_model(logistic_family(1))
        with pytest.raises(ParameterError):
            loss_and_grad(state, np.zeros((0, 1)), np.array([], dtype=int))


# ---------------------------------------------------------------------------
# client_update
# ---------------------------------------------------------------------------


class TestClientUpdate:
    def test_squared_loss_probe_fixture(self):
        # linear probe, 1 sample (x=1, y=1), w=0: grad = -1, step 0.5 -> w=0.5,
        # importance = ||grad||^2 = 1
        data = make_client(0, [[1.0]], [1])
        state = init_model(linear_family(1))
        cfg = TrainingConfig(batch_size=1, epochs=1, learning_rate=0.5)
        new, importance = client_update(state, data, cfg, rng=np.random.default_rng(0))
        assert new.params[0] == pytest.approx(0.5)
        assert importance == pytest.approx(1.0)

    def test_zero_learning_rate_scores_without_moving(self):
        data = make_client(0, [[1.0], [2.0], [-1.0]], [1, 0, 1])
        state = init_model(logistic_family(1))
        cfg = TrainingConfig(batch_size=3, epochs=1, learning_rate=0.0)
        new, importance = client_update(state, data, cfg, rng=np.random.default_rng(0))
        np.testing.assert_array_equal(new.params, state.params)
        _, grad = loss_and_grad(state, data.features, data.labels)
        assert importance == pytest.approx(float(grad @ grad))

    def test_two_epochs_full_batch_equals_two_steps(self):
        data = make_client(0, [[1.0], [2.0]], [1, 0])
        state = init_model(logistic_family(1))
        cfg2 = TrainingConfig(batch_size=2, epochs=2, learning_rate=0.3)
        got, _ = client_update(state, data, cfg2, rng=np.random.default_rng(0))
        manual = state.copy()
        for _ in range(2):
            _, grad = loss_and_grad(manual, data.features, data.labels)
            manual.params = manual.params - 0.3 * grad
        np.testing.assert_allclose(got.params, manual.params, rtol=1e-12)

    def test_deterministic_given_seed(self):
        rng = np.random.default_rng(5)
        data = make_client(0, rng.normal(size=(13, 3)), rng.integers(0, 2, 13))
        state = init_model(logistic_family(3), seed=1)
        cfg = TrainingConfig(batch_size=4, epochs=3, learning_rate=0.2)
        a, pa = client_update(state, data, cfg, rng=np.random.default_rng(77))
        b, pb = client_update(state, data, cfg, rng=np.random.default_rng(77))
        np.testing.assert_array_equal(a.params, b.params)
        assert pa == pb

    def test_input_state_not_mutated(self):
        data = make_client(0, [[1.0]], [1])
        state = init_model(logistic_family(1))
        before = state.params.copy()
        client_update(state, data,
                      TrainingConfig(batch_size=1, epochs=1, learning_rate=1.0),
                      rng=np.random.default_rng(0))
        np.testing.assert_array_equal(state.params, before)

    def test_importance_order_invariant_in_scoring_mode(self):
        # B=1, eta=0: every per-sample gradient is taken at the same w, and
        # fsum makes the average independent of shuffle order, bitwise
        rng = np.random.default_rng(9)
        features = rng.normal(size=(11, 2))
        labels = rng.integers(0, 2, 11)
        state = init_model(logistic_family(2), seed=3)
        state.params = rng.normal(size=3)
        cfg = TrainingConfig(batch_size=1, epochs=1, learning_rate=0.0)
        scores = set()
        for seed in range(5):
            perm = np.random.default_rng(seed).permutation(11)
            data = make_client(0, features[perm], labels[perm])
            _, imp = client_update(state, data, cfg, rng=np.random.default_rng(seed))
            scores.add(imp)
        assert len(scores) == 1

    def test_final_per_sample_mode(self):
        rng = np.random.default_rng(2)
        data = make_client(0, rng.normal(size=(6, 2)), rng.integers(0, 2, 6))
        state = init_model(logistic_family(2))
        cfg = TrainingConfig(batch_size=2, epochs=1, learning_rate=0.1)
        new, importance = client_update(
            state, data, cfg, rng=np.random.default_rng(0),
            importance_mode="final_per_sample",
        )
        expected = []
        for i in range(6):
            _, g = loss_and_grad(new, data.features[i:i + 1], data.labels[i:i + 1])
            expected.append(float(g @ g))
        assert importance == pytest.approx(math.fsum(expected) / 6)

    def test_empty_client_rejected(self):
        data = make_client(0, np.zeros((0, 1)), [])
        with pytest.raises(ParameterError):
            client_update(init_model(logistic_family(1)), data,
                          TrainingConfig(batch_size=1, epochs=1, learning_rate=0.1))

    def test_divergence_raises_numeric_error(self):
        data = make_client(0, [[1e150]], [1])
        state = init_model(linear_family(1))
        cfg = TrainingConfig(batch_size=1, epochs=4, learning_rate=1e200)
        with pytest.raises(NumericError):
            client_update(state, data, cfg, rng=np.random.default_rng(0))


# ---------------------------------------------------------------------------
# averaging
# ---------------------------------------------------------------------------


class TestAveraging:
    def test_mean_of_identical_models(self):
        v = ModelState(np.array([1.0, 2.0, 3.0]), linear_family(3))
        out = average_models([v, v.copy()])
        np.testing.assert_array_equal(out.params, v.params)

    def test_mean_arithmetic(self):
        a = ModelState(np.array([1.0, 3.0]), linear_family(2))
        b = ModelState(np.array([3.0, 5.0]), linear_family(2))
        np.testing.assert_allclose(average_models([a, b]).params, [2.0, 4.0])

    def test_mean_permutation_invariant(self):
        rng = np.random.default_rng(1)
        models = [ModelState(rng.normal(size=4), linear_family(4)) for _ in range(5)]
        fwd = average_models(models).params
        rev = average_models(models[::-1]).params
        np.testing.assert_allclose(fwd, rev, rtol=1e-15)

    def test_family_mismatch_rejected(self):
        a = ModelState(np.zeros(2), linear_family(2))
        b = ModelState(np.zeros(3), logistic_family(2))
        with pytest.raises(ConsistencyError):
            average_models([a, b])

    def test_weighted_fixture(self):
        a = ModelState(np.array([1.0, 3.0]), linear_family(2))
        b = ModelState(np.array([3.0, 5.0]), linear_family(2))
        out = weighted_average_models([a, b], [3, 1])
        np.testing.assert_allclose(out.params, [1.5, 3.5])

    def test_weighted_equal_weights_is_mean(self):
        rng = np.random.default_rng(2)
        models = [ModelState(rng.normal(size=3), linear_family(3)) for _ in range(4)]
        np.testing.assert_allclose(
            weighted_average_models(models, [2, 2, 2, 2]).params,
            average_models(models).params,
            rtol=1e-14,
        )

    def test_weight_zero_selects_other_model(self):
        a = ModelState(np.array([1.0]), linear_family(1))
        b = ModelState(np.array([9.0]), linear_family(1))
        np.testing.assert_allclose(weighted_average_models([a, b], [1, 0]).params, [1.0])

    def test_all_zero_weights_rejected(self):
        a = ModelState(np.zeros(1), linear_family(1))
        with pytest.raises(ParameterError):
            weighted_average_models([a, a.copy()], [0, 0])


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


class TestCheckpoints:
    def test_round_trip(self, tmp_path):
        state = init_model(mlp_family((3, 4, 2)), seed=5, l2=0.25)
        state.params = np.random.default_rng(0).normal(size=len(state.params))
        path = tmp_path / "model.ckpt"
        save_checkpoint(state, path)
        loaded = load_checkpoint(path)
        np.testing.assert_array_equal(loaded.params, state.params)
        assert loaded.family == state.family
        assert loaded.l2 == 0.25

    def test_bad_file_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b'{"format": "something-else"}\n')
        with pytest.raises(ConsistencyError):
            load_checkpoint(path)

    def test_probabilities_sum_to_one(self):
        state = init_model(mlp_family((2, 5, 3)), seed=1)
        x = np.random.default_rng(0).normal(size=(6, 2))
        probs = predict_proba(state, x)
        np.testing.assert_allclose(probs.sum(axis=1), np.ones(6), rtol=1e-12)
        assert (probs >= 0).all()
