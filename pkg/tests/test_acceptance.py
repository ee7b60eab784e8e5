"""Acceptance criteria 1-10.

Each test prints one ``[PASS]`` / ``[FAIL]`` line with the measured numbers,
visible even when pytest captures output.
"""

import math

import numpy as np
import pytest

from fkfpe.accel_cost import DiscreteMeasure, cost_ch, cubic_oracle, free_transport, wh, wh_direct_lp
from fkfpe.core import (
    DensityGrid,
    SchemeConfig,
    cell_centers,
    l1_distance,
    quadratic_potential,
    quartic_potential,
    test_battery,
)
from fkfpe.frac_kernel import build_kernel
from fkfpe.kinetic_step import el_residual, jko_map_step, jko_variational_step
from fkfpe.ot_solver import w2_exact
from fkfpe.reference import (
    characteristics_density,
    gaussian_initial,
    ks_to_grid_marginal,
    reference_pde_solve,
    sde_simulate,
    stationary_stable,
)
from fkfpe.splitting import (
    apriori_report,
    apriori_scaling,
    convergence_study,
    fitted_order,
    run_scheme,
    weak_residual,
)


@pytest.fixture
def report(capsys):
    def emit(criterion, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}")

    return emit


def _atoms(f):
    X, V = np.meshgrid(f.x, f.v, indexing="ij")
    m = f.masses().ravel()
    keep = m > 1e-14 * m.max()
    return np.column_stack([X.ravel()[keep], V.ravel()[keep]]), m[keep] / m[keep].sum()


def _monotone(errs):
    return all(b < a for a, b in zip(errs, errs[1:]))


# ---------------------------------------------------------------- 1


def test_c1_kernel(report):
    h = 1 / 8
    K = build_kernel(1.0, h, cell_centers(256, 6.0))
    g_err = float(np.max(np.abs(K.samples - np.exp(-K.lags**2 / (4 * h)) / math.sqrt(4 * math.pi * h))))
    K = build_kernel(0.5, h, cell_centers(64, 6.0))
    c_err = float(np.max(np.abs(K.samples - h / (math.pi * (h * h + K.lags**2)))))
    l1 = {s: build_kernel(s, 0.25, cell_centers(256, 6.0)).sample_l1 for s in (0.5, 0.6, 0.75, 0.9, 1.0)}
    ok = g_err <= 1e-6 and c_err <= 1e-4 and all(abs(v - 1) <= 1e-3 for v in l1.values())
    worst = max(abs(v - 1) for v in l1.values())
    report(1, ok, f"gaussian sup {g_err:.2e}, cauchy sup {c_err:.2e}, max |L1-1| {worst:.2e}")
    assert ok


# ---------------------------------------------------------------- 2


def test_c2_cost_identity(report):
    rng = np.random.default_rng(20)
    worst = 0.0
    for _ in range(100):
        h = float(rng.uniform(0.05, 3.0))
        a, b = rng.normal(size=2) * 2, rng.normal(size=2) * 2
        c, o = float(cost_ch(h, a, b)), cubic_oracle(h, a, b)
        worst = max(worst, abs(c - o) / max(abs(o), 1e-300))
    ok = worst <= 1e-9
    report(2, ok, f"max relative gap {worst:.2e} over 100 instances")
    assert ok


# ---------------------------------------------------------------- 3


def test_c3_wh_reduction(report):
    rng = np.random.default_rng(30)
    gap = zero = 0.0
    for _ in range(50):
        h = float(rng.uniform(0.1, 2.0))
        n, m = rng.integers(1, 9, size=2)
        mu = DiscreteMeasure(rng.normal(size=n), rng.normal(size=n), rng.dirichlet(np.ones(n)))
        nu = DiscreteMeasure(rng.normal(size=m), rng.normal(size=m), rng.dirichlet(np.ones(m)))
        a, _ = wh(h, mu, nu)
        b, _ = wh_direct_lp(h, mu, nu)
        gap = max(gap, abs(a * a - b * b))
        zero = max(zero, wh(h, mu, free_transport(h, mu))[0])
    ok = gap <= 1e-8 and zero <= 1e-10
    report(3, ok, f"max |W_h^2 - LP| {gap:.2e}, max W_h(mu, F_h mu) {zero:.2e}")
    assert ok


# ---------------------------------------------------------------- 4


def test_c4_jko_cross_validation(report):
    f = DensityGrid.from_function(lambda x, v: np.exp(-(x**2) / 0.5 - (v - 0.5) ** 2 / 0.5), 16, 16, 2.0, 2.0)
    rows, ok = [], True
    for psi, h in ((quadratic_potential(), 0.25), (quartic_potential(2.0), 1 / 16)):
        a = jko_map_step(f, psi, h, remap="deposit")
        b = jko_variational_step(f, psi, h)
        gap = abs(a.objective - b.objective)
        d, _ = w2_exact(_atoms(a.f), _atoms(b.f))
        ok &= gap <= 1e-3 and d <= 2 * f.dv
        rows.append(f"{psi.name}: gap {gap:.1e}, W2 {d:.1e} cells {d / f.dv:.2f}")
    report(4, ok, "; ".join(rows))
    assert ok


# ---------------------------------------------------------------- 5


def test_c5_euler_lagrange(report):
    fbar = DensityGrid.from_function(lambda x, v: np.exp(-(x**2 + (v - 1) ** 2) / (2 * 0.09)), 64, 64, 4.0, 4.0)
    psi = quadratic_potential()
    bat = test_battery(10, seed=2, x_scale=0.5, v_scale=0.5)
    hs = [1 / 8, 1 / 16, 1 / 32]
    res = {k: [] for k in ("flipped", "none", "corrected")}
    for h in hs:
        r = jko_map_step(fbar, psi, h)
        for k in res:
            res[k].append(sum(el_residual(fbar, r, psi, h, p, remainder=k) for p in bat))
    atoms = sum(el_residual(fbar, jko_map_step(fbar, psi, 1 / 32), psi, 1 / 32, p, measure="atoms") for p in bat)
    order = fitted_order(hs, res["flipped"])
    ok = order >= 1.5 and _monotone(res["flipped"])
    report(5, ok, f"order {order:.2f} (remainder with negative sign); without remainder "
                  f"{fitted_order(hs, res['none']):.2f}; with +h^2/2 remainder residual "
                  f"{max(res['corrected']):.1e} on the grid, {atoms:.1e} on atoms")
    assert ok


# ---------------------------------------------------------------- 6


@pytest.fixture(scope="module")
def c6_trajs():
    base = SchemeConfig(s=1.0, h=1 / 8, T=1.0, Lv=6.0)
    return [run_scheme(base.with_(h=h), keep_fbar=False) for h in (1 / 8, 1 / 16, 1 / 32)]


def test_c6_mass_and_positivity(report, c6_trajs):
    reps = [apriori_report(t) for t in c6_trajs]
    ok = all(r.flags["mass"] and r.flags["nonnegative"] for r in reps)
    report("6a", ok, f"max mass error {max(r.mass_error for r in reps):.1e}, "
                     f"min value {min(r.min_value for r in reps):.1e}")
    assert ok


def test_c6_lp_bound(report, c6_trajs):
    reps = [apriori_report(t) for t in c6_trajs]
    ratio = max(float(np.max(r.lp_values / r.lp_decay_bound)) for r in reps)
    growth = max(float(np.max(r.lp_values / r.lp_growth_bound)) for r in reps)
    ok = all(r.flags["lp_decay"] for r in reps)
    report("6b", ok, f"max |f(t)|_p^p / (e^(alpha T (1-p)) |f0|_p^p) = {ratio:.3f} (limit 1.01); "
                     f"against e^(alpha t (p-1)) |f0|_p^p the ratio is {growth:.3f}")
    assert ok


def test_c6_frozen_constant(report, c6_trajs):
    reps = [apriori_report(t) for t in c6_trajs]
    exact = all(r.flags[k] for r in reps for k in ("sum_wh2_exact", "m2_exact", "coupling"))
    verdict = {}
    for e in ("1/s", "1/2"):
        sc = apriori_scaling(c6_trajs, e)
        verdict[e] = (all(sc["ok_a"]), all(sc["ok_b"]),
                      max(v / (sc["C_a"] * s) for v, s in zip(sc["sum_wh2"][1:], sc["scale_a"][1:])))
    satisfied = [e for e, (a, b, _) in verdict.items() if a and b]
    ok = exact and bool(satisfied)
    detail = "; ".join(f"h^{e}: sum {'ok' if a else 'over'} (worst ratio {w:.3f}), M2 {'ok' if b else 'over'}"
                       for e, (a, b, w) in verdict.items())
    report("6c", ok, f"{detail}; satisfied by {', '.join(satisfied) or 'none'}; explicit-constant bounds "
                     f"{'hold' if exact else 'violated'}")
    assert ok


# ---------------------------------------------------------------- 7


@pytest.mark.parametrize("s", [0.5, 0.75, 1.0])
def test_c7_weak_residual(report, s):
    base = SchemeConfig(s=s, h=1 / 8, T=1.0, Lv=6.0, Nx=32, Nv=256)
    bat = test_battery(10, seed=1, x_scale=0.5, v_scale=0.5)
    hs = [1 / 8, 1 / 16, 1 / 32, 1 / 64]
    res = []
    for h in hs:
        tr = run_scheme(base.with_(h=h), keep_fbar=False)
        res.append(sum(weak_residual(tr, p) for p in bat))
    order = fitted_order(hs, res)
    target = min(1.0, 1 / s, s)
    ok = _monotone(res) and abs(order - target) <= 0.3
    report(f"7 (s={s:g})", ok, f"residuals {', '.join(f'{r:.3e}' for r in res)}; order {order:.2f}, "
                               f"target {target:.2f} +- 0.3")
    assert ok


# ---------------------------------------------------------------- 8


def test_c8_oracle_mol(report):
    base = SchemeConfig(s=1.0, h=1 / 8, T=1.0, Lx=4.0, Lv=4.0, Nx=64, Nv=64)
    ref = reference_pde_solve(base)
    tab = convergence_study([base.with_(h=2.0**-k) for k in (3, 4, 5, 6)], None, None, ref)
    ok = tab.monotone and tab.order >= 0.7
    report("8a", ok, f"L1 vs method of lines {', '.join(f'{e:.4f}' for e in tab.errors)}; order {tab.order:.3f}")
    assert ok


def test_c8_oracle_transport(report):
    base = SchemeConfig(s=1.0, h=1 / 8, T=1.0, Lx=4.0, Lv=4.0, Nx=64, Nv=64, mode="transport")
    ref = characteristics_density(base, gaussian_initial(base))
    tab = convergence_study([base.with_(h=2.0**-k) for k in (3, 4, 5, 6)], None, None, ref)
    ok = tab.monotone and tab.order >= 0.7
    report("8b", ok, f"L1 vs characteristics {', '.join(f'{e:.4f}' for e in tab.errors)}; order {tab.order:.3f}")
    assert ok


# ---------------------------------------------------------------- 9


@pytest.mark.parametrize("s", [0.5, 0.75])
def test_c9_stationary(report, s):
    cfg = SchemeConfig(s=s, h=1 / 64, T=10.0, mode="homogeneous", truncation="fixed", R=math.inf,
                       Nx=1, Lx=1.0, Lv=80.0, Nv=2048)
    law = stationary_stable(s, cell_centers(cfg.Nv, cfg.Lv))
    err = law.l1_to(run_scheme(cfg, keep_fbar=False).f[-1].v_marginal())
    # informational: the coupled truncation R = h^(-1/2) at the same T
    coupled = []
    for h in (1 / 16, 1 / 64):
        c = cfg.with_(h=h, truncation="coupled")
        coupled.append(law.l1_to(run_scheme(c, keep_fbar=False).f[-1].v_marginal()))
    ok = err <= 5e-2
    report(f"9 (s={s:g})", ok, f"L1 {err:.4f} untruncated kernel; with R = h^(-1/2): "
                               f"{coupled[0]:.3f} (h=1/16), {coupled[1]:.3f} (h=1/64)")
    assert ok


# ---------------------------------------------------------------- 10


@pytest.mark.parametrize("s", [0.5, 0.75, 1.0])
def test_c10_sde(report, s):
    cfg = SchemeConfig(s=s, h=1 / 16, T=1.0, Lv=12.0, Nv=256, seed=10)
    grid = run_scheme(cfg, keep_fbar=False).f[-1]
    ens = sde_simulate(cfg, M=100_000)
    ks = ks_to_grid_marginal(ens.velocities, grid)
    ok = ks <= 0.05
    report(f"10 (s={s:g})", ok, f"KS {ks:.4f} with M = 1e5")
    assert ok
