"""Unit test for the linear and feed-forward prediction processes."""

import numpy as np
import pytest
from d4decoder.densities import GridDensity
from d4decoder.densities import StateGrid
from d4decoder.models.linear import LinearPredictor
from d4decoder.models.mlp import MlpPredictor
from d4decoder.models.model_protocol import HistoryWindow
from d4decoder.models.model_protocol import history_marginal
from d4decoder.models.model_protocol import history_marginal_sequence
from d4decoder.models.model_protocol import lagged_features
from d4decoder.models.model_protocol import prediction_densities
from d4decoder.state_transition import LinearGaussianTransition
from d4decoder.validation import DimensionMismatchError
from tests import numerical_gradient


def empty_history(n_channels):
    return HistoryWindow(0, np.zeros((0, n_channels)), np.zeros(0, dtype=bool))


@pytest.fixture
def observations():
    return np.random.default_rng(3).normal(size=(30, 3))


def test_history_window_padding(observations):
    window = HistoryWindow.at(observations, 1, 3)
    np.testing.assert_array_equal(window.mask, [True, False, False])
    np.testing.assert_array_equal(window.values[0], observations[0])
    np.testing.assert_array_equal(window.values[1:], 0.0)


def test_lagged_features(observations):
    features = lagged_features(observations, 2)
    assert features.shape == (30, 9)
    np.testing.assert_array_equal(features[5, 3:6], observations[4])
    np.testing.assert_array_equal(features[0, 3:], 0.0)


class TestLinearPredictor:
    """Test the LinearPredictor class."""

    def test_passthrough(self):
        model = LinearPredictor(3, 0, sigma=0.2)
        model.params["weights"][0, 0] = 1.0
        params = model.predict(np.array([0.7, 0.1, -0.3]), empty_history(3))
        assert params.mean[0] == pytest.approx(0.7)
        assert params.std[0] == pytest.approx(0.2)

    def test_closed_form_gradient(self):
        model = LinearPredictor(3, 0, sigma=0.2)
        model.params["weights"][0, 0] = 1.0
        s_k = np.array([0.7, 0.1, -0.3])
        _, grad = model.log_density_grad(s_k, empty_history(3), np.array([1.0]))
        np.testing.assert_allclose(grad[:3], (1.0 - 0.7) / 0.2**2 * s_k)

    def test_invalid_sigma(self):
        with pytest.raises(ValueError, match="positive"):
            LinearPredictor(3, 0, sigma=0.0)

    def test_negative_lag(self):
        with pytest.raises(ValueError, match="can not be negative"):
            LinearPredictor(3, -1)

    def test_finite_difference_gradient(self, observations):
        model = LinearPredictor(3, 2)
        model.set_params(np.random.default_rng(0).normal(0, 0.3, model.n_params))
        samples = np.random.default_rng(1).normal(size=(4, 30, 1))

        def objective(params):
            model.set_params(params)
            return model.expected_log_prediction(observations, samples)[0]

        params = model.get_params()
        _, grad = model.expected_log_prediction(observations, samples)
        numeric = numerical_gradient(objective, params)
        np.testing.assert_allclose(grad, numeric, rtol=1e-4, atol=1e-6)


class TestMlpPredictor:
    """Test the MlpPredictor class."""

    def test_zero_network(self):
        model = MlpPredictor(3, 1, hidden=(8, 8))
        model.set_params(np.zeros(model.n_params))
        s_k = np.array([0.5, -1.0, 2.0])
        history = HistoryWindow(1, np.array([1.0, 1.0, 1.0]), np.array([True]))
        params = model.predict(s_k, history)
        assert params.mean[0] == pytest.approx(0.0)
        assert params.std[0] == pytest.approx(np.log(2.0))

    def test_zero_network_log_density(self):
        model = MlpPredictor(3, 0, hidden=(8,))
        model.set_params(np.zeros(model.n_params))
        value, grad = model.log_density_grad(
            np.ones(3), empty_history(3), np.array([0.0])
        )
        assert value == pytest.approx(-0.5 * np.log(2 * np.pi * np.log(2.0) ** 2))
        # the output bias is laid out as [mean, std]
        assert grad[-2] == pytest.approx(0.0)

    def test_seeded_initialization(self):
        first = MlpPredictor(3, 2, hidden=(5,), seed=11)
        second = MlpPredictor(3, 2, hidden=(5,), seed=11)
        np.testing.assert_array_equal(first.get_params(), second.get_params())
        assert first.n_params == (9 * 5 + 5) + (5 * 2 + 2)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_finite_difference_gradient(self, seed):
        rng = np.random.default_rng(seed)
        model = MlpPredictor(3, 2, hidden=(5, 4), seed=seed)
        observations = rng.normal(size=(6, 3))
        model.fit_standardization(observations)
        history = HistoryWindow.at(observations, 4, 2)
        x = rng.normal(size=1)

        def objective(params):
            model.set_params(params)
            return model.log_density_grad(observations[4], history, x)[0]

        params = model.get_params()
        _, grad = model.log_density_grad(observations[4], history, x)
        numeric = numerical_gradient(objective, params)
        np.testing.assert_allclose(grad, numeric, rtol=1e-4, atol=1e-7)

    def test_input_gradient(self, observations):
        model = MlpPredictor(3, 1, n_extra=1, hidden=(5, 4), seed=6)
        extra = np.random.default_rng(8).normal(size=len(observations))
        features = model.features(observations, extra=extra)
        weights = np.random.default_rng(9).normal(size=(len(features), 2))

        def objective(flat):
            mu, sigma, _ = model.forward(flat.reshape(features.shape))
            return float((weights[:, :1] * mu + weights[:, 1:] * sigma).sum())

        _, _, cache = model.forward(features)
        _, inputs = model.backward_with_inputs(cache, weights[:, :1], weights[:, 1:])
        numeric = numerical_gradient(objective, features.ravel())
        np.testing.assert_allclose(inputs.ravel(), numeric, rtol=1e-4, atol=1e-7)

    def test_zero_lag_ignores_history(self):
        model = MlpPredictor(3, 0, hidden=(6,), seed=4)
        s_k = np.array([0.2, 0.4, -0.1])
        first = model.predict(s_k, empty_history(3))
        second = model.predict(s_k, HistoryWindow(0, np.ones((0, 3)), np.ones(0)))
        np.testing.assert_array_equal(first.mean, second.mean)
        np.testing.assert_array_equal(first.std, second.std)

    def test_sequence_matches_single_steps(self, observations):
        model = MlpPredictor(3, 2, hidden=(6,), seed=4)
        model.fit_standardization(observations)
        mu, sigma, _ = model.prediction_params(observations)
        for k in (0, 1, 10):
            history = HistoryWindow.at(observations, k, 2)
            params = model.predict(observations[k], history)
            assert params.mean[0] == pytest.approx(mu[k, 0])
            assert params.std[0] == pytest.approx(sigma[k, 0])

    def test_history_lag_mismatch(self, observations):
        model = MlpPredictor(3, 2, hidden=(6,))
        with pytest.raises(DimensionMismatchError):
            model.predict(observations[5], HistoryWindow.at(observations, 5, 1))

    def test_channel_mismatch(self, observations):
        model = MlpPredictor(4, 0, hidden=(6,))
        with pytest.raises(DimensionMismatchError):
            model.prediction_params(observations)

    def test_std_floor(self):
        model = MlpPredictor(1, 0, hidden=(2,))
        model.set_params(np.zeros(model.n_params))
        model.params["bias_1"][1] = -50.0
        params = model.predict(np.zeros(1), empty_history(1))
        assert params.std[0] == pytest.approx(1e-3)


def test_prediction_densities_are_normalized(observations):
    grid = StateGrid.default_1d()
    model = MlpPredictor(3, 1, hidden=(6,), seed=2)
    values = prediction_densities(model, observations, grid)
    assert values.shape == (30, 400)
    np.testing.assert_allclose(values.sum(axis=1) * grid.cell_volume, 1.0, atol=1e-9)


def test_history_marginal_first_step():
    grid = StateGrid.default_1d()
    trans = LinearGaussianTransition(0.9, 0.0, 0.1)
    model = LinearPredictor(3, 0)
    marginal = history_marginal(model, None, None, trans, grid)
    expected = trans.chapman_kolmogorov(trans.initial_density(grid))
    np.testing.assert_allclose(marginal.values, expected.values)


def test_history_marginal_memoryless_transition():
    grid = StateGrid.default_1d()
    trans = LinearGaussianTransition(0.0, 0.3, 0.2)
    model = LinearPredictor(3, 0, sigma=0.5)
    model.params["bias"][:] = 2.0
    marginal = history_marginal(model, np.ones(3), empty_history(3), trans, grid)
    assert marginal.mean()[0] == pytest.approx(0.3, abs=1e-6)
    assert marginal.std()[0] == pytest.approx(0.2, abs=1e-4)


def test_history_marginal_gaussian_convolution():
    grid = StateGrid.default_1d()
    trans = LinearGaussianTransition(0.9, 0.1, 0.1)
    model = LinearPredictor(3, 0, sigma=0.4)
    model.params["weights"][1, 0] = 0.5
    s_prev = np.array([0.0, 2.0, 0.0])
    marginal = history_marginal(model, s_prev, empty_history(3), trans, grid)
    assert marginal.mean()[0] == pytest.approx(0.9 * 1.0 + 0.1, abs=1e-6)
    expected_std = np.sqrt(0.81 * 0.4**2 + 0.1**2)
    assert marginal.std()[0] == pytest.approx(expected_std, abs=1e-4)


def test_history_marginal_sequence_matches_single_steps(observations):
    grid = StateGrid.default_1d()
    trans = LinearGaussianTransition(0.9, 0.0, 0.2)
    model = MlpPredictor(3, 1, hidden=(6,), seed=8)
    marginals = history_marginal_sequence(
        prediction_densities(model, observations, grid), trans, grid
    )
    k = 7
    single = history_marginal(
        model,
        observations[k - 1],
        HistoryWindow.at(observations, k - 1, 1),
        trans,
        grid,
    )
    np.testing.assert_allclose(marginals[k], single.values, atol=1e-9)
    assert isinstance(single, GridDensity)
