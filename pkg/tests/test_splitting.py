import math

import numpy as np
import pytest

from fkfpe.core import (
    Potential,
    SchemeConfig,
    gaussian_test_function,
    lp_norm_p,
    mass,
    quadratic_potential,
    quartic_potential,
    test_battery,
)
from fkfpe.frac_kernel import build_kernel, diffusion_step, truncate_renormalize
from fkfpe.kinetic_step import jko_map_step
from fkfpe.splitting import (
    ConvergenceTable,
    SchemeAbort,
    apriori_report,
    apriori_scaling,
    fitted_constant_check,
    fitted_order,
    fractional_laplacian_v,
    interpolate,
    left_limit,
    run_scheme,
    weak_residual,
)


@pytest.fixture(scope="module")
def baseline():
    return run_scheme(SchemeConfig(s=1.0, h=1 / 8, T=1.0, Lv=4.0, Nx=32, Nv=64))


def test_step_is_diffusion_then_jko(baseline):
    cfg = baseline.config
    f0 = baseline.f[0]
    K = truncate_renormalize(build_kernel(cfg.s, cfg.h, f0), cfg.radius)
    fbar = diffusion_step(f0, K)
    f1 = jko_map_step(fbar, quadratic_potential(), cfg.h, cfg.remap).f
    assert np.allclose(baseline.fbar[0].values, fbar.values, atol=1e-14)
    assert np.allclose(baseline.f[1].values, f1.values, atol=1e-14)


def test_records(baseline):
    assert baseline.N == 8 and len(baseline.records) == 9
    assert np.allclose(baseline.times, np.arange(9) / 8)
    assert np.all(np.abs(baseline.column("mass") - 1) <= 1e-9)
    assert baseline.column("wh2")[0] == 0.0 and np.all(baseline.column("wh2")[1:] > 0)


def test_apriori_exact_flags(baseline):
    rep = apriori_report(baseline)
    for key in ("mass", "nonnegative", "sum_wh2_exact", "m2_exact", "coupling", "lp_growth"):
        assert rep.flags[key], key
    assert rep.coupling_ratio <= 1.0
    assert rep.min_value >= 0.0


def test_interpolation_continuity(baseline):
    f = interpolate(baseline, 0.0)
    assert f is baseline.f[0]
    assert interpolate(baseline, 0.25) is baseline.f[2]
    # left limit = heat flow over a full step, close to t_n - tiny
    a = left_limit(baseline, 3)
    b = interpolate(baseline, 3 / 8 - 1e-6)
    assert np.max(np.abs(a.values - b.values)) <= 1e-3
    with pytest.raises(ValueError):
        interpolate(baseline, 1.5)


def test_interpolation_preserves_mass(baseline):
    for t in (0.01, 0.3, 0.99):
        assert abs(mass(interpolate(baseline, t)) - 1.0) <= 1e-9


def test_lp_growth_between_steps(baseline):
    cfg = baseline.config
    lp0 = lp_norm_p(baseline.f[0], 2)
    for t in np.linspace(0, 0.99, 12):
        assert lp_norm_p(interpolate(baseline, t), 2) <= math.exp(cfg.alpha * t) * lp0 * 1.01


def test_transport_mode_conserves_lp():
    tr = run_scheme(SchemeConfig(s=1.0, h=1 / 8, T=0.5, mode="transport", potential="zero", Nx=32, Nv=32))
    assert tr.moment == 0.0 and tr.weights_mode == "none"
    assert np.all(tr.column("wh2") == 0.0)
    lp = tr.column("lp_p")
    assert np.all(np.abs(lp - lp[0]) <= 1e-3 * lp[0])


def test_homogeneous_mode_keeps_x_uniform():
    tr = run_scheme(SchemeConfig(s=0.75, h=1 / 8, T=0.5, mode="homogeneous", Nx=1, Lx=1.0, Nv=64))
    assert tr.f[-1].Nx == 1 and abs(mass(tr.f[-1]) - 1) <= 1e-9


def test_contraction_violation_aborts():
    with pytest.raises(SchemeAbort):
        run_scheme(SchemeConfig(s=1.0, h=1.0, T=2.0, Nx=8, Nv=16))
    cfg = SchemeConfig(s=1.0, h=0.25, T=0.5, Nx=8, Nv=16)
    with pytest.raises(SchemeAbort):
        run_scheme(cfg, psi=quartic_potential(6.0))


def test_leakage_aborts():
    # a bump pushed against the velocity edge with a tiny box
    cfg = SchemeConfig(s=0.5, h=1 / 8, T=1.0, Lv=1.0, Nx=8, Nv=16, v0=0.8, sigma_v=0.1,
                       truncation="fixed", R=math.inf)
    # linear potential pushing mass towards +v
    push = Potential("push", lambda v: -2.0 * np.asarray(v, float),
                     lambda v: np.full_like(np.asarray(v, float), -2.0), 0.0)
    with pytest.raises(SchemeAbort):
        run_scheme(cfg, psi=push)


def test_wrong_grid_rejected():
    cfg = SchemeConfig(s=1.0, h=1 / 8, T=0.25, Nx=8, Nv=16)
    f0 = SchemeConfig(s=1.0, h=1 / 8, T=0.25, Nx=16, Nv=16).initial_density()
    with pytest.raises(ValueError):
        run_scheme(cfg, f0)


def test_fractional_laplacian_s1_is_minus_second_derivative():
    phi = gaussian_test_function(0.0, 0.3, 1.0, 0.7)
    x = np.array([0.0, 0.5])
    v = np.linspace(-3, 3, 61)
    got = fractional_laplacian_v(phi, 1.0, x, v)
    X, V = np.meshgrid(x, v, indexing="ij")
    want = (1 / 0.49 - (V - 0.3) ** 2 / 0.49**2) * phi(X, V)
    assert np.max(np.abs(got - want)) <= 1e-4


def test_fractional_laplacian_of_gaussian_s_half():
    # (-d^2)^{1/2} e^{-v^2/2} via its Fourier multiplier |xi|
    phi = gaussian_test_function(0.0, 0.0, 10.0, 1.0)
    v = np.linspace(-4, 4, 33)
    got = fractional_laplacian_v(phi, 0.5, np.array([0.0]), v)[0]
    from scipy import integrate

    def exact(w):
        val, _ = integrate.quad(lambda k: k * math.exp(-k * k / 2) * math.cos(k * w), 0, 40, limit=200)
        return val * math.sqrt(2 * math.pi) / math.pi

    want = np.array([exact(w) for w in v]) * float(phi(np.array(0.0), np.array(0.0)))
    assert np.max(np.abs(got - want)) <= 1e-3


def test_weak_residual_decays():
    base = SchemeConfig(s=1.0, h=1 / 8, T=1.0, Lv=4.0, Nx=32, Nv=64)
    bat = test_battery(4, seed=1, x_scale=0.5, v_scale=0.5)
    res = []
    for h in (1 / 8, 1 / 16, 1 / 32):
        tr = run_scheme(base.with_(h=h), keep_fbar=False)
        res.append(sum(weak_residual(tr, p) for p in bat))
    assert res[0] > res[1] > res[2]
    assert fitted_order([1 / 8, 1 / 16, 1 / 32], res) >= 0.7


def test_fitted_helpers():
    assert fitted_order([1, 0.5, 0.25], [1, 0.25, 0.0625]) == pytest.approx(2.0)
    C, ok = fitted_constant_check([1.0, 0.5, 0.3], [1.0, 0.5, 0.25])
    assert C == 1.0 and ok == [True, False]
    t = ConvergenceTable([1, 0.5], [2.0, 1.0], 1.0)
    assert t.monotone and t.rows() == [(1, 2.0), (0.5, 1.0)]


def test_apriori_scaling_structure(baseline):
    fine = run_scheme(baseline.config.with_(h=1 / 16), keep_fbar=False)
    out = apriori_scaling([baseline, fine], "1/2")
    assert len(out["sum_wh2"]) == 2 and len(out["ok_a"]) == 1
    # sum of W_h^2 roughly halves with h
    assert 0.4 <= out["sum_wh2"][1] / out["sum_wh2"][0] <= 0.6
