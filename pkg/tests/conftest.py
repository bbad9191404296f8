import numpy as np
import pytest

from thermotomo.grid_field import Grid, Region, ScalarField, make_phantom
from thermotomo.medium import build_medium, uniform_medium


@pytest.fixture
def small_grid():
    return Grid(65, 65, 2.0 / 64, origin=(-1.0, -1.0))


@pytest.fixture
def small_medium(small_grid):
    return uniform_medium(small_grid)


@pytest.fixture
def small_rect(small_grid):
    return Region.rectangle(small_grid, 8, 56, 8, 56)


@pytest.fixture
def small_disk(small_grid):
    return Region.disk(small_grid, (0.0, 0.0), 0.45)


def example1_setup(N=161, L=4.6, T=1.2, r0=0.5, c0=0.5, kr=0.2):
    """Small Example-1 style geometry: slow disk inside a unit square omega."""
    g = Grid(N, N, L / (N - 1), origin=(-L / 2, -L / 2))
    m = build_medium([(r0, c0)], g)
    omega = Region.rectangle_from_physical(g, -1.0, 1.0, -1.0, 1.0)
    kset = Region.disk(g, (0.0, 0.0), kr)
    return g, m, omega, kset


def centered_bump(g, support, sigma=0.05, center=(0.0, 0.0)):
    return make_phantom("gaussian_bump", {"center": center, "sigma": sigma}, g, support)


def random_field(g, seed=0):
    rng = np.random.default_rng(seed)
    return ScalarField(g, rng.standard_normal(g.shape))
