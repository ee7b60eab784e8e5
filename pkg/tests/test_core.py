import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fkfpe.core import (
    DensityGrid,
    ParticleEnsemble,
    SchemeConfig,
    cell_centers,
    logcosh_potential,
    lp_norm_p,
    mass,
    potential_energy,
    quadratic_potential,
    quartic_potential,
    second_moment_v,
    zero_potential,
)


def gauss_v(Nx=8, Nv=256, Lx=0.5, Lv=8.0, sigma=1.0, center=0.0):
    return DensityGrid.from_function(
        lambda x, v: np.exp(-((v - center) ** 2) / (2 * sigma**2)) + 0 * x, Nx, Nv, Lx, Lv
    )


def test_cell_centers_symmetric():
    c = cell_centers(8, 2.0)
    assert np.allclose(c, -c[::-1])
    assert math.isclose(c[1] - c[0], 0.5)


def test_mass_uniform_and_zero():
    g = DensityGrid(np.full((16, 32), 1.0 / (4 * 2.0 * 3.0)), 2.0, 3.0)
    assert math.isclose(mass(g), 1.0, rel_tol=1e-14)
    assert mass(DensityGrid.zeros(16, 32, 2.0, 3.0)) == 0.0


def test_mass_gaussian_quadrature():
    L = 6.0
    x = cell_centers(64, L)
    v = cell_centers(64, L)
    vals = np.exp(-(x[:, None] ** 2 + v[None, :] ** 2) / 2) / (2 * np.pi)
    assert abs(mass(DensityGrid(vals, L, L)) - 1.0) <= 1e-6


def test_normalize_exact():
    g = gauss_v().normalize()
    assert abs(mass(g) - 1.0) <= 1e-10


def test_lp_norm_indicator_and_homogeneity():
    # one unit of phase volume with value 1
    g = DensityGrid.zeros(4, 4, 1.0, 1.0)
    g.values[1:3, 1:3] = 1.0
    assert math.isclose(lp_norm_p(g, 2), 1.0)
    assert math.isclose(lp_norm_p(g.with_values(2 * g.values), 2), 4.0)
    with pytest.raises(ValueError):
        lp_norm_p(g, 1.0)


def test_lp_norm_gaussian_in_v():
    # N(0,1) in v times uniform on an x-interval of length 1
    Lv = 8.0
    v = cell_centers(512, Lv)
    vals = np.tile(np.exp(-(v**2) / 2) / math.sqrt(2 * math.pi), (4, 1))
    g = DensityGrid(vals, 0.5, Lv)
    assert abs(lp_norm_p(g, 2) - 1 / (2 * math.sqrt(math.pi))) <= 1e-3


def test_second_moment_and_energy_gaussian():
    g = gauss_v(sigma=0.7).normalize()
    assert abs(second_moment_v(g) - 0.49) <= 1e-6
    g1 = gauss_v().normalize()
    assert abs(potential_energy(g1, quadratic_potential()) - 0.5) <= 1e-3
    assert potential_energy(g1, zero_potential()) == 0.0


def test_point_masses():
    g = DensityGrid.zeros(1, 8, 0.5, 4.0)  # v centers -3.5 .. 3.5, dv = 1
    j0 = int(np.argmin(np.abs(g.v - 0.5)))
    g.values[0, j0] = 1.0
    m2_half = second_moment_v(g)
    g2 = DensityGrid.zeros(1, 8, 0.5, 4.0)
    g2.values[0, int(np.argmin(np.abs(g2.v - 1.5)))] = 1.0
    assert math.isclose(second_moment_v(g2) / m2_half, 9.0)
    g3 = DensityGrid(np.zeros((1, 9)), 0.5, 4.5)
    g3.values[0, 6] = 1.0  # v = 2 with dv = 1, cell volume 1
    assert math.isclose(g3.v[6], 2.0)
    assert math.isclose(potential_energy(g3, quadratic_potential()), 2.0)


def test_grid_rejects_negative():
    with pytest.raises(ValueError):
        DensityGrid(np.array([[1.0, -1.0]]), 1.0, 1.0)


@pytest.mark.parametrize(
    "psi", [quadratic_potential(), quartic_potential(3.0), logcosh_potential(), zero_potential()]
)
def test_potential_spot_check(psi):
    assert psi.spot_check() <= 1e-6


@pytest.mark.parametrize("psi", [quadratic_potential(), quartic_potential(3.0), logcosh_potential()])
def test_potential_hessian_bound(psi):
    v = np.linspace(-3, 3, 601)
    g = psi.grad(v)
    lip = np.max(np.abs(np.diff(g)) / np.diff(v))
    assert lip <= psi.hessian_sup * (1 + 1e-9)


def test_config_invariants():
    SchemeConfig(s=1, h=0.25, T=1)
    bad = [
        dict(s=0, h=0.1, T=1),
        dict(s=1.2, h=0.1, T=1),
        dict(s=1, h=0.3, T=1),
        dict(s=1, h=0.25, T=1, Nx=48),
        dict(s=1, h=0.25, T=1, alpha=1.0),
        dict(s=1, h=0.25, T=1, p=1.0),
        dict(s=1, h=0.25, T=1, mode="homogeneous"),
    ]
    for kw in bad:
        with pytest.raises(ValueError):
            SchemeConfig(**kw)


def test_coupled_radius():
    assert math.isclose(SchemeConfig(s=1, h=1 / 16, T=1).radius, 4.0)
    assert SchemeConfig(s=1, h=1 / 16, T=1, truncation="fixed", R=2.0).radius == 2.0


def test_particle_ensemble():
    e = ParticleEnsemble(np.zeros(10), np.ones(10))
    assert math.isclose(e.weights.sum(), 1.0)
    ParticleEnsemble(np.zeros((5, 3)), np.zeros((5, 3)))
    with pytest.raises(ValueError):
        ParticleEnsemble(np.zeros((5, 4)), np.zeros((5, 4)))
    with pytest.raises(ValueError):
        ParticleEnsemble(np.array([np.nan]), np.array([0.0]))


@settings(max_examples=30, deadline=None)
@given(c=st.floats(0.1, 10.0), p=st.sampled_from([1.5, 2.0, 4.0]), seed=st.integers(0, 2**16))
def test_functionals_homogeneity(c, p, seed):
    rng = np.random.default_rng(seed)
    g = DensityGrid(rng.random((4, 8)), 1.0, 2.0)
    cg = g.with_values(c * g.values)
    assert math.isclose(mass(cg), c * mass(g), rel_tol=1e-12)
    assert math.isclose(lp_norm_p(cg, p), c**p * lp_norm_p(g, p), rel_tol=1e-12)
    assert math.isclose(second_moment_v(cg), c * second_moment_v(g), rel_tol=1e-12)
    psi = quadratic_potential()
    assert math.isclose(potential_energy(cg, psi), c * potential_energy(g, psi), rel_tol=1e-12)
