"""Unit test for the state transition."""

import numpy as np
import pytest
from d4decoder.densities import GaussianParams
from d4decoder.densities import GridDensity
from d4decoder.densities import StateGrid
from d4decoder.densities import discretize
from d4decoder.simulation.sim20 import SimSpec
from d4decoder.simulation.sim20 import simulate_states
from d4decoder.state_transition import LinearGaussianTransition
from d4decoder.state_transition import fit_transition_mle
from d4decoder.utils import make_rng
from d4decoder.validation import DegenerateInputError
from d4decoder.validation import DegenerateInputWarning
from d4decoder.validation import DimensionMismatchError
from d4decoder.validation import TruncationError


@pytest.fixture
def grid():
    return StateGrid.default_1d()


@pytest.mark.parametrize(
    "a, b, x_prev, expected",
    [(0.9, 0.0, 1.0, 0.9), (1.0, 0.0, 2.3, 2.3), (0.0, 0.5, -3.0, 0.5)],
)
def test_kernel_column_center(grid, a, b, x_prev, expected):
    trans = LinearGaussianTransition(a, b, 0.1)
    column = trans.kernel_column(np.array([x_prev]), grid)
    assert column.mean()[0] == pytest.approx(expected, abs=1e-6)
    assert column.std()[0] == pytest.approx(0.1, abs=1e-4)


def test_kernel_column_off_grid(grid):
    trans = LinearGaussianTransition.random_walk(0.1)
    with pytest.raises(TruncationError):
        trans.kernel_column(np.array([7.95]), grid)


def test_kernel_column_dimension(grid):
    trans = LinearGaussianTransition.random_walk(0.1, ndim=2)
    with pytest.raises(DimensionMismatchError):
        trans.kernel_column(np.array([0.0]), grid)


def test_kernel_matrix_columns_sum_to_one(grid):
    (matrix,) = LinearGaussianTransition(0.9, 0.0, 0.1).kernel_matrices(grid)
    np.testing.assert_allclose(matrix.sum(axis=0), 1.0, atol=1e-12)


def test_chapman_kolmogorov_delta(grid):
    trans = LinearGaussianTransition(0.9, 0.0, 0.1)
    prior = GridDensity.delta(grid, np.array([1.0]))
    one_step = trans.chapman_kolmogorov(prior)
    assert one_step.mass == pytest.approx(1.0, abs=1e-9)
    assert one_step.mean()[0] == pytest.approx(0.9, abs=0.04)
    assert one_step.std()[0] == pytest.approx(0.1, abs=1e-3)


def test_chapman_kolmogorov_stationary(grid):
    trans = LinearGaussianTransition(0.9, 0.0, 0.1)
    stationary = trans.initial_density(grid)
    assert stationary.std()[0] == pytest.approx(0.1 / np.sqrt(0.19), abs=1e-4)
    one_step = trans.chapman_kolmogorov(stationary)
    assert abs(one_step.mean()[0] - stationary.mean()[0]) < grid.widths[0]
    np.testing.assert_allclose(one_step.values, stationary.values, atol=1e-3)


def test_random_walk_variance_adds(grid):
    trans = LinearGaussianTransition.random_walk(0.1)
    density = discretize(GaussianParams(0.0, 0.1), grid)
    for _ in range(2):
        density = trans.chapman_kolmogorov(density)
    assert density.variance()[0] == pytest.approx(0.03, abs=1e-4)


def test_random_walk_initial_density_is_flat(grid):
    density = LinearGaussianTransition.random_walk(0.1).initial_density(grid)
    np.testing.assert_allclose(density.values, 1 / 16)


def test_chapman_kolmogorov_2d():
    grid = StateGrid((-2.0, -2.0), (2.0, 2.0), (40, 40))
    trans = LinearGaussianTransition((1.0, 0.5), (0.0, 0.0), (0.2, 0.2))
    prior = GridDensity.delta(grid, np.array([0.55, 0.85]))
    one_step = trans.chapman_kolmogorov(prior)
    np.testing.assert_allclose(one_step.mean(), [0.55, 0.425], atol=1e-6)


def test_invalid_transition():
    with pytest.raises(ValueError, match="must be positive"):
        LinearGaussianTransition(0.9, 0.0, 0.0)
    with pytest.raises(ValueError, match="sanity bound"):
        LinearGaussianTransition(2.0, 0.0, 0.1)


def test_transition_dict():
    trans = LinearGaussianTransition(0.9, 0.1, 0.2).with_initial([0.0], [1.0])
    assert LinearGaussianTransition.from_dict(trans.to_dict()) == trans


def test_fit_on_simulated_states():
    spec = SimSpec()
    states = simulate_states(spec, 10_000, make_rng(1234))
    trans = fit_transition_mle(states)
    assert 0.87 <= trans.a[0] <= 0.93
    assert trans.sigma[0] == pytest.approx(0.1, abs=0.01)


def test_fit_noiseless_sequence():
    states = np.zeros(12)
    for k in range(1, 12):
        states[k] = 0.5 * states[k - 1] + 1.0
    with pytest.warns(DegenerateInputWarning):
        trans = fit_transition_mle(states)
    assert trans.a[0] == pytest.approx(0.5, abs=1e-10)
    assert trans.b[0] == pytest.approx(1.0, abs=1e-10)
    assert trans.sigma[0] == 1e-4


def test_fit_explosive_sequence_is_clipped():
    states = 2.0 ** np.arange(12) + make_rng(2).normal(0.0, 0.1, 12)
    with pytest.warns(DegenerateInputWarning, match="clipped"):
        trans = fit_transition_mle(states, empirical_initial=False)
    assert trans.a[0] == 1.5
    np.testing.assert_allclose(trans.b[0], np.mean(states[1:] - 1.5 * states[:-1]))


def test_fit_constant_sequence():
    with pytest.raises(DegenerateInputError, match="constant"):
        fit_transition_mle(np.ones(50))


def test_fit_too_short():
    with pytest.raises(DegenerateInputError, match="At least 3"):
        fit_transition_mle(np.array([0.0, 1.0]))


def test_fit_random_walk_2d():
    rng = make_rng(5)
    states = np.cumsum(rng.normal(0.0, [0.05, 0.02], size=(5000, 2)), axis=0)
    trans = fit_transition_mle(states, random_walk=True)
    assert trans.a == (1.0, 1.0)
    np.testing.assert_allclose(trans.sigma, [0.05, 0.02], rtol=0.05)
