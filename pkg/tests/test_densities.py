"""Unit test for densities."""

import numpy as np
import pytest
from scipy import special
from d4decoder.densities import GaussianParams
from d4decoder.densities import GridDensity
from d4decoder.densities import StateGrid
from d4decoder.densities import discretize
from d4decoder.densities import discretize_batch
from d4decoder.densities import entropy
from d4decoder.densities import kl_divergence
from d4decoder.validation import DegenerateDensityError
from d4decoder.validation import GridMismatchError
from d4decoder.validation import TruncationError


@pytest.fixture
def grid():
    return StateGrid.default_1d()


def gaussian(grid, mean, std):
    return discretize(GaussianParams(mean, std), grid)


def test_default_grid():
    grid = StateGrid.default_1d()
    assert grid.lower == (-8.0,)
    assert grid.upper == (8.0,)
    assert grid.cells == (400,)
    assert grid.cell_volume == pytest.approx(0.04)
    assert grid.points.shape == (400, 1)


def test_grid_from_states():
    states = np.array([[0.0, 0.0], [1.0, 2.0]])
    grid = StateGrid.from_states(states, padding=0.1, cells=20)
    np.testing.assert_allclose(grid.lower, (-0.1, -0.2))
    np.testing.assert_allclose(grid.upper, (1.1, 2.2))
    assert grid.shape == (20, 20)


def test_invalid_grid_bounds():
    with pytest.raises(ValueError, match="greater than the lower"):
        StateGrid(1.0, 0.0, 10)


def test_invalid_grid_cells():
    with pytest.raises(ValueError, match="at least 8 cells"):
        StateGrid(0.0, 1.0, 4)


def test_invalid_grid_dimension():
    with pytest.raises(ValueError, match="Only 1-D and 2-D"):
        StateGrid((0, 0, 0), (1, 1, 1), (10, 10, 10))


def test_nearest_index_and_contains():
    grid = StateGrid((0.0, 0.0), (1.0, 2.0), (10, 10))
    index = grid.nearest_index(np.array([[0.05, 0.1], [0.95, 1.9], [5.0, -1.0]]))
    np.testing.assert_array_equal(index, [0, 99, 90])
    inside = grid.contains(np.array([[0.5, 0.5], [1.5, 0.5]]))
    np.testing.assert_array_equal(inside, [True, False])


def test_standard_normal_mass_and_symmetry(grid):
    density = gaussian(grid, 0.0, 1.0)
    assert density.mass == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_allclose(density.values, density.values[::-1], rtol=1e-9)
    assert density.mean()[0] == pytest.approx(0.0, abs=1e-9)
    assert density.std()[0] == pytest.approx(1.0, abs=1e-4)


def test_narrow_gaussian_peak(grid):
    density = gaussian(grid, 0.0, 0.1)
    assert density.values.max() == pytest.approx(3.989, abs=0.1)
    assert grid.points[np.argmax(density.values), 0] == pytest.approx(0.0, abs=0.04)


def test_truncated_gaussian(grid):
    with pytest.raises(TruncationError):
        gaussian(grid, 7.9, 0.1)


def test_truncation_check_disabled(grid):
    density = discretize(GaussianParams(7.9, 0.1), grid, check=False)
    assert density.mass == pytest.approx(1.0, abs=1e-9)


def test_discretize_batch_2d():
    grid = StateGrid((-3.0, -3.0), (3.0, 3.0), (40, 50))
    values = discretize_batch(grid, np.array([[0.0, 1.0]]), np.array([[0.5, 0.4]]))
    assert values.shape == (1, 40, 50)
    density = GridDensity(grid, values[0])
    assert density.mass == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_allclose(density.mean(), [0.0, 1.0], atol=1e-5)
    assert density.marginal(1).std()[0] == pytest.approx(0.4, abs=1e-3)


def test_kl_identical(grid):
    density = gaussian(grid, 0.3, 0.7)
    assert kl_divergence(density, density) == pytest.approx(0.0, abs=1e-12)


def test_kl_shifted_mean(grid):
    kl = kl_divergence(gaussian(grid, 0.0, 1.0), gaussian(grid, 1.0, 1.0))
    assert kl == pytest.approx(0.5, abs=1e-3)


def test_kl_wider_std(grid):
    kl = kl_divergence(gaussian(grid, 0.0, 1.0), gaussian(grid, 0.0, 2.0))
    assert kl == pytest.approx(np.log(2) + 1 / 8 - 1 / 2, abs=1e-3)


def test_kl_grid_mismatch(grid):
    other = StateGrid(-4.0, 4.0, 100)
    with pytest.raises(GridMismatchError):
        kl_divergence(gaussian(grid, 0.0, 1.0), gaussian(other, 0.0, 1.0))


def test_entropy_standard_normal(grid):
    assert entropy(gaussian(grid, 0.0, 1.0)) == pytest.approx(1.4189, abs=1e-3)


def test_entropy_can_be_negative(grid):
    assert entropy(gaussian(grid, 0.0, 0.1)) == pytest.approx(-0.8837, abs=1e-3)


def test_entropy_uniform_unit_interval():
    density = GridDensity.uniform(StateGrid(0.0, 1.0, 10))
    assert entropy(density) == pytest.approx(0.0, abs=1e-12)


def test_density_rejects_negative_values():
    with pytest.raises(ValueError, match="non-negative"):
        GridDensity(StateGrid(0.0, 1.0, 10), -np.ones(10))


def test_zero_mass_density():
    with pytest.raises(DegenerateDensityError):
        GridDensity.from_unnormalized(StateGrid(0.0, 1.0, 10), np.zeros(10))


def test_invalid_gaussian_std():
    with pytest.raises(ValueError, match="positive"):
        GaussianParams(0.0, 0.0)


def random_mixture(grid, rng):
    weights = rng.dirichlet(np.ones(3))
    values = sum(
        weight * gaussian(grid, rng.uniform(-3, 3), rng.uniform(0.3, 1.5)).values
        for weight in weights
    )
    return GridDensity.from_unnormalized(grid, values)


@pytest.mark.parametrize("seed", range(25))
def test_kl_non_negative_for_mixtures(grid, seed):
    rng = np.random.default_rng(seed)
    p, q = random_mixture(grid, rng), random_mixture(grid, rng)
    raw = float(special.rel_entr(p.values, q.values).sum() * grid.cell_volume)
    assert raw >= -1e-12
    assert kl_divergence(p, q) == pytest.approx(raw, abs=1e-12)


def test_grid_refinement_convergence():
    coarse = StateGrid(-8.0, 8.0, 400)
    fine = StateGrid(-8.0, 8.0, 800)
    for first, second in ((coarse, fine), (fine, coarse)):
        assert abs(
            kl_divergence(gaussian(first, 0.0, 1.0), gaussian(first, 1.0, 1.5))
            - kl_divergence(gaussian(second, 0.0, 1.0), gaussian(second, 1.0, 1.5))
        ) < 1e-3
    assert abs(
        entropy(gaussian(coarse, 0.3, 0.8)) - entropy(gaussian(fine, 0.3, 0.8))
    ) < 1e-3
