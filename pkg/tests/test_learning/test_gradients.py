"""Unit test for the penalty gradient and the ascent optimizer."""

import numpy as np
import pytest
from d4decoder.densities import StateGrid
from d4decoder.learning.gradients import AdamAscent
from d4decoder.learning.gradients import ascent_step
from d4decoder.learning.gradients import grad_step_regularized
from d4decoder.learning.gradients import penalty_gradient
from d4decoder.learning.gradients import regularization_penalty
from d4decoder.models.catalog import build_model
from d4decoder.models.linear import LinearPredictor
from d4decoder.models.mlp import MlpPredictor
from d4decoder.state_transition import LinearGaussianTransition
from tests import numerical_gradient


@pytest.fixture
def problem():
    rng = np.random.default_rng(17)
    grid = StateGrid(-4.0, 4.0, 40)
    observations = rng.normal(size=(6, 2))
    smoother = rng.uniform(0.5, 1.5, size=(6, 40))
    smoother /= smoother.sum(axis=1, keepdims=True) * grid.cell_volume
    trans = LinearGaussianTransition(0.8, 0.0, 0.4)
    return observations, smoother, trans, grid


@pytest.mark.parametrize(
    "model",
    [
        LinearPredictor(2, 1, sigma=0.6),
        MlpPredictor(2, 1, hidden=(4,), seed=2),
    ],
    ids=["linear", "mlp"],
)
def test_penalty_gradient_finite_differences(problem, model):
    observations, smoother, trans, grid = problem
    if isinstance(model, LinearPredictor):
        model.params["weights"][:] = np.random.default_rng(3).normal(
            0, 0.3, model.params["weights"].shape
        )

    def objective(params):
        model.set_params(params)
        return regularization_penalty(observations, model, trans, smoother, grid, 0.7)

    params = model.get_params()
    penalty, grad = penalty_gradient(observations, model, trans, smoother, grid, 0.7)
    assert penalty == pytest.approx(objective(params))
    numeric = numerical_gradient(objective, params)
    np.testing.assert_allclose(grad, numeric, rtol=1e-4, atol=1e-5)


@pytest.fixture
def planar_problem():
    rng = np.random.default_rng(23)
    grid = StateGrid((-2.0, -2.0), (2.0, 2.0), (10, 10))
    observations = rng.normal(size=(5, 3))
    smoother = rng.uniform(0.5, 1.5, size=(5, 10, 10))
    smoother /= smoother.reshape(5, -1).sum(axis=1)[:, None, None] * grid.cell_volume
    trans = LinearGaussianTransition((0.9, 0.7), (0.0, 0.0), (0.5, 0.5))
    return observations, smoother, trans, grid


@pytest.mark.parametrize("kind", ["ddd", "d4"])
def test_planar_penalty_gradient_finite_differences(planar_problem, kind):
    observations, smoother, trans, grid = planar_problem
    model = build_model(kind, 3, 1, state_dim=2, seed=4, hidden=(3,))
    if kind == "ddd":
        rng = np.random.default_rng(5)
        for factor in (model.x_model, model.y_model):
            shape = factor.params["weights"].shape
            factor.params["weights"][:] = rng.normal(0, 0.3, shape)
        # the x-mean depends strongly on the y-mean input
        model.x_model.params["weights"][-1, 0] = 0.8

    def objective(params):
        model.set_params(params)
        return regularization_penalty(observations, model, trans, smoother, grid, 1.0)

    params = model.get_params()
    _, grad = penalty_gradient(observations, model, trans, smoother, grid, 1.0)
    numeric = numerical_gradient(objective, params)
    np.testing.assert_allclose(grad, numeric, rtol=1e-4, atol=1e-5)


def test_zero_penalty_without_lam(problem):
    observations, smoother, trans, grid = problem
    model = LinearPredictor(2, 1)
    penalty, grad = penalty_gradient(observations, model, trans, smoother, grid, 0.0)
    assert penalty == 0.0
    np.testing.assert_array_equal(grad, 0.0)


class TestAdamAscent:
    """Test the AdamAscent class."""

    def test_first_step_follows_sign(self):
        optimizer = AdamAscent(0.1)
        updated = optimizer.step(np.zeros(3), np.array([2.0, -0.5, 1e3]))
        np.testing.assert_allclose(updated, [0.1, -0.1, 0.1], rtol=1e-6)
        assert optimizer.step_count == 1

    def test_invalid_learning_rate(self):
        with pytest.raises(ValueError, match="must be positive"):
            AdamAscent(0.0)

    def test_ascends_quadratic(self):
        optimizer = AdamAscent(0.05)
        params = np.array([3.0, -2.0])
        for _ in range(1000):
            params = optimizer.step(params, -2 * (params - 1.0))
        np.testing.assert_allclose(params, 1.0, atol=0.1)


def test_non_finite_gradient_is_skipped():
    model = LinearPredictor(2, 0)
    optimizer = AdamAscent(0.1)
    before = model.get_params()
    grad = np.full(model.n_params, np.nan)
    with pytest.warns(RuntimeWarning, match="halved"):
        assert not ascent_step(model, grad, optimizer)
    assert optimizer.learning_rate == pytest.approx(0.05)
    np.testing.assert_array_equal(model.get_params(), before)


def test_regularized_step_changes_parameters(problem):
    observations, smoother, trans, grid = problem
    model = LinearPredictor(2, 1)
    samples = np.random.default_rng(0).normal(size=(3, 6, 1))
    before = model.get_params()
    grad_step_regularized(
        observations, model, trans, smoother, samples, grid, 0.5, AdamAscent(0.01)
    )
    assert not np.array_equal(model.get_params(), before)


def test_unregularized_step_follows_prediction_gradient(problem):
    observations, smoother, trans, grid = problem
    model = LinearPredictor(2, 1, sigma=0.8)
    shape = model.params["weights"].shape
    model.params["weights"][:] = np.random.default_rng(4).normal(0, 0.5, shape)
    samples = np.random.default_rng(5).normal(size=(8, 6, 1))

    def objective(params):
        model.set_params(params)
        return model.expected_log_prediction(observations, samples)[0]

    before = model.get_params()
    numeric = numerical_gradient(objective, before)
    model.set_params(before)
    grad_step_regularized(
        observations, model, trans, smoother, samples, grid, 0.0, AdamAscent(1e-3)
    )
    step = model.get_params() - before
    informative = np.abs(numeric) > 1e-2
    assert informative.sum() >= 4
    np.testing.assert_allclose(
        step[informative], 1e-3 * np.sign(numeric[informative]), rtol=1e-5
    )


def test_regularized_step_ascends(problem):
    observations, smoother, trans, grid = problem
    samples = np.random.default_rng(6).normal(size=(4, 6, 1))
    increased = 0
    for seed in range(20):
        model = MlpPredictor(2, 1, hidden=(4,), seed=seed)

        def objective(model=model):
            value, _ = model.expected_log_prediction(observations, samples)
            return value + regularization_penalty(
                observations, model, trans, smoother, grid, 0.5
            )

        before = objective()
        grad_step_regularized(
            observations, model, trans, smoother, samples, grid, 0.5, AdamAscent(1e-3)
        )
        increased += objective() > before
    assert increased >= 18
