"""Unit test for the filter, smoother and trajectory sampler."""

import numpy as np
import pytest
from d4decoder.densities import GaussianParams
from d4decoder.densities import GridDensity
from d4decoder.densities import StateGrid
from d4decoder.densities import discretize
from d4decoder.inference import _discriminative_update
from d4decoder.inference import decode
from d4decoder.inference import filter_step
from d4decoder.inference import run_filter
from d4decoder.inference import run_smoother
from d4decoder.inference import sample_trajectories
from d4decoder.inference import total_variation
from d4decoder.models.linear import LinearPredictor
from d4decoder.models.model_protocol import HistoryWindow
from d4decoder.reference.variables import unit_registry
from d4decoder.state_transition import LinearGaussianTransition
from d4decoder.validation import DegenerateDensityError
from d4decoder.validation import MissingSamplesError


A, SIGMA_X, SIGMA_S = 0.9, 0.3, 0.5


def kalman_rts(observations):
    """Scalar Kalman filter and RTS smoother with a stationary start."""
    n_steps = len(observations)
    q, r = SIGMA_X**2, SIGMA_S**2
    mean, var = 0.0, q / (1 - A**2)
    f_mean, f_var = np.zeros(n_steps), np.zeros(n_steps)
    p_mean, p_var = np.zeros(n_steps), np.zeros(n_steps)
    for k, z in enumerate(observations):
        p_mean[k], p_var[k] = A * mean, A**2 * var + q
        gain = p_var[k] / (p_var[k] + r)
        mean = p_mean[k] + gain * (z - p_mean[k])
        var = (1 - gain) * p_var[k]
        f_mean[k], f_var[k] = mean, var
    s_mean, s_var = f_mean.copy(), f_var.copy()
    for k in range(n_steps - 2, -1, -1):
        smoother_gain = f_var[k] * A / p_var[k + 1]
        s_mean[k] = f_mean[k] + smoother_gain * (s_mean[k + 1] - p_mean[k + 1])
        s_var[k] = f_var[k] + smoother_gain**2 * (s_var[k + 1] - p_var[k + 1])
    return f_mean, f_var, s_mean, s_var


@pytest.fixture
def linear_gaussian():
    rng = np.random.default_rng(42)
    n_steps = 100
    states = np.zeros(n_steps)
    previous = rng.normal(0, SIGMA_X / np.sqrt(1 - A**2))
    for k in range(n_steps):
        previous = A * previous + rng.normal(0, SIGMA_X)
        states[k] = previous
    observations = (states + rng.normal(0, SIGMA_S, n_steps))[:, None]
    model = LinearPredictor(1, 0, sigma=SIGMA_S)
    model.params["weights"][0, 0] = 1.0
    trans = LinearGaussianTransition(A, 0.0, SIGMA_X)
    return observations, model, trans, StateGrid.default_1d()


def test_filter_and_smoother_match_kalman(linear_gaussian):
    observations, model, trans, grid = linear_gaussian
    post = decode(observations, model, trans, grid, denominator="flat")
    f_mean, f_var, s_mean, s_var = kalman_rts(observations[:, 0])

    np.testing.assert_array_less(
        np.abs(post.means("filter")[:, 0] - f_mean), 0.02 * np.sqrt(f_var)
    )
    np.testing.assert_array_less(
        np.abs(post.means("smoother")[:, 0] - s_mean), 0.02 * np.sqrt(s_var)
    )
    np.testing.assert_allclose(post.stds("filter")[:, 0], np.sqrt(f_var), rtol=0.02)
    np.testing.assert_allclose(post.stds("smoother")[:, 0], np.sqrt(s_var), rtol=0.02)


def test_posterior_invariants(linear_gaussian):
    observations, model, trans, grid = linear_gaussian
    post = decode(observations, model, trans, grid)
    for kind in ("filter", "one_step", "history_marginal", "smoother"):
        masses = getattr(post, kind).sum(axis=1) * grid.cell_volume
        np.testing.assert_allclose(masses, 1.0, atol=1e-9)
    np.testing.assert_allclose(post.smoother[-1], post.filter[-1], atol=1e-12)
    assert np.all(post.stds("smoother") <= post.stds("filter") + 1e-3)


def test_single_step_filter(linear_gaussian):
    observations, model, trans, grid = linear_gaussian
    post = run_filter(observations[:1], model, trans, grid)
    history = HistoryWindow.at(observations, 0, 0)
    filtered, one_step, marginal = filter_step(
        trans.initial_density(grid), observations[0], history, model, trans
    )
    np.testing.assert_allclose(post.filter[0], filtered.values, atol=1e-9)
    np.testing.assert_allclose(post.one_step[0], one_step.values, atol=1e-9)
    np.testing.assert_allclose(post.history_marginal[0], marginal.values, atol=1e-9)


def test_uninformative_observation_coasts():
    grid = StateGrid.default_1d()
    trans = LinearGaussianTransition(0.0, 0.0, 1.0)
    model = LinearPredictor(1, 0, sigma=1.0)
    prior = discretize(GaussianParams(2.0, 0.5), grid)
    filtered, one_step, marginal = filter_step(
        prior,
        np.array([3.0]),
        HistoryWindow(0, np.zeros((0, 1)), np.zeros(0)),
        model,
        trans,
        s_prev=np.array([1.0]),
        history_prev=HistoryWindow(0, np.zeros((0, 1)), np.zeros(0)),
    )
    np.testing.assert_allclose(filtered.values, one_step.values, atol=1e-9)
    assert total_variation(filtered, one_step) < 1e-9


def test_uninformative_model_stays_stationary():
    grid = StateGrid.default_1d()
    trans = LinearGaussianTransition(0.0, 0.0, 1.0)
    model = LinearPredictor(1, 0, sigma=1.0)
    observations = np.full((60, 1), 0.25)
    post = run_filter(observations, model, trans, grid)
    stationary = trans.initial_density(grid)
    assert total_variation(post.density("filter", 59), stationary) < 0.01


def test_filter_mean_between_prior_and_prediction():
    grid = StateGrid.default_1d()
    trans = LinearGaussianTransition.random_walk(0.3)
    model = LinearPredictor(1, 0, sigma=0.5)
    model.params["bias"][:] = 1.0
    empty = HistoryWindow(0, np.zeros((0, 1)), np.zeros(0))
    filtered, _, _ = filter_step(
        GridDensity.delta(grid, np.array([0.0])),
        np.zeros(1),
        empty,
        model,
        trans,
        denominator="flat",
    )
    assert 0.0 < filtered.mean()[0] < 1.0


def test_degenerate_filter():
    grid = StateGrid.default_1d()
    trans = LinearGaussianTransition.random_walk(0.01)
    model = LinearPredictor(1, 0, sigma=0.01)
    model.params["bias"][:] = 7.0
    empty = HistoryWindow(0, np.zeros((0, 1)), np.zeros(0))
    with pytest.raises(DegenerateDensityError):
        filter_step(
            GridDensity.delta(grid, np.array([-7.0])),
            np.zeros(1),
            empty,
            model,
            trans,
            denominator="flat",
        )


@pytest.mark.parametrize("scale", [1e-6, 0.5, 3.0, 1e8])
def test_filter_update_ignores_scale(linear_gaussian, scale):
    observations, model, trans, grid = linear_gaussian
    post = run_filter(observations[:5], model, trans, grid)
    expected = _discriminative_update(
        post.one_step[4], post.prediction[4], post.history_marginal[4], grid
    )
    scaled = _discriminative_update(
        scale * post.one_step[4],
        post.prediction[4],
        post.history_marginal[4],
        grid,
    )
    np.testing.assert_allclose(scaled, expected, rtol=1e-10, atol=1e-300)
    np.testing.assert_allclose(post.filter[4], expected, rtol=1e-10, atol=1e-300)


def test_filter_means_converge_under_grid_refinement(linear_gaussian):
    observations, model, trans, _ = linear_gaussian
    coarse = run_filter(observations, model, trans, StateGrid(-8.0, 8.0, 400))
    fine = run_filter(observations, model, trans, StateGrid(-8.0, 8.0, 800))
    np.testing.assert_allclose(coarse.means("filter"), fine.means("filter"), atol=1e-3)
    np.testing.assert_allclose(coarse.stds("filter"), fine.stds("filter"), atol=1e-3)


def test_unknown_denominator(linear_gaussian):
    observations, model, trans, grid = linear_gaussian
    with pytest.raises(ValueError, match="denominator"):
        run_filter(observations, model, trans, grid, denominator="median")


class TestSampler:
    """Test the backward trajectory sampler."""

    def test_needs_smoother(self, linear_gaussian):
        observations, model, trans, grid = linear_gaussian
        post = run_filter(observations, model, trans, grid)
        with pytest.raises(MissingSamplesError):
            sample_trajectories(post, trans, 5, seed=0)

    def test_deterministic(self, linear_gaussian):
        observations, model, trans, grid = linear_gaussian
        post = run_smoother(run_filter(observations[:20], model, trans, grid), trans)
        first = sample_trajectories(post, trans, 10, seed=3)
        second = sample_trajectories(post, trans, 10, seed=3)
        assert first.shape == (10, 20, 1)
        np.testing.assert_array_equal(first, second)

    def test_sample_means_match_smoother(self, linear_gaussian):
        observations, model, trans, grid = linear_gaussian
        post = decode(observations[:30], model, trans, grid, n_samples=2000, seed=7)
        standard_error = post.stds("smoother")[:, 0] / np.sqrt(2000)
        difference = np.abs(post.samples.mean(axis=0)[:, 0] - post.means()[:, 0])
        assert np.all(difference < 4.5 * standard_error)

    def test_sample_means_within_standard_errors(self, linear_gaussian):
        observations, model, trans, grid = linear_gaussian
        post = decode(observations, model, trans, grid, n_samples=2000, seed=11)
        standard_error = post.stds("smoother")[:, 0] / np.sqrt(2000)
        difference = np.abs(post.samples.mean(axis=0)[:, 0] - post.means()[:, 0])
        assert np.mean(difference < 3 * standard_error) >= 0.95

    def test_samples_are_cell_centers(self, linear_gaussian):
        observations, model, trans, grid = linear_gaussian
        post = decode(observations[:10], model, trans, grid, n_samples=4, seed=1)
        assert np.all(np.isin(post.samples[..., 0], grid.centers[0]))


def test_to_dataset(linear_gaussian):
    observations, model, trans, grid = linear_gaussian
    post = decode(observations[:15], model, trans, grid)
    ds = post.to_dataset("position")
    assert ds["smoother"].dims == ("k", "x")
    np.testing.assert_array_equal(ds["k"].values, np.arange(1, 16))
    assert ds["x"].attrs["units"] == "m"
    density_unit = unit_registry.Unit(ds["filter"].attrs["units"])
    assert density_unit == unit_registry.meter**-1
    assert "samples" not in ds.data_vars
