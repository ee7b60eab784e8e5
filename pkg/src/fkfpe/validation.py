"""Quick validation suites behind ``fkfpe validate``.

Each suite returns a list of :class:`Check` rows. They are reduced-size
versions of the acceptance tests and finish in seconds to a minute.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


def _chk(name, ok, detail=""):
    return Check(name, bool(ok), detail)


def suite_kernel():
    from .core import DensityGrid, cell_centers, lp_norm_p, mass
    from .frac_kernel import build_kernel, diffusion_step, truncate_renormalize

    out = []
    h = 1 / 8
    K = build_kernel(1.0, h, cell_centers(256, 6.0))
    w = K.lags
    err = np.max(np.abs(K.samples - np.exp(-w**2 / (4 * h)) / np.sqrt(4 * np.pi * h)))
    out.append(_chk("gaussian closed form (s=1)", err <= 1e-6, f"sup err {err:.2e}"))
    K = build_kernel(0.5, h, cell_centers(64, 6.0))
    w = K.lags
    err = np.max(np.abs(K.samples - h / (np.pi * (h * h + w**2))))
    out.append(_chk("cauchy closed form (s=1/2)", err <= 1e-4, f"sup err {err:.2e}"))
    for s in (0.5, 0.6, 0.75, 0.9, 1.0):
        K = build_kernel(s, 0.25, cell_centers(256, 6.0))
        out.append(_chk(f"L1 = 1 (s={s:g})", abs(K.sample_l1 - 1) <= 1e-3, f"{K.sample_l1:.6f}"))
    f = DensityGrid.from_function(lambda x, v: np.exp(-x**2 - (v - 0.5) ** 2 / 0.1), 16, 64, 4.0, 6.0)
    for s in (0.5, 0.75, 1.0):
        K = truncate_renormalize(build_kernel(s, h, f), h**-0.5)
        g = diffusion_step(f, K)
        out.append(_chk(f"mass and L2 contraction (s={s:g})",
                        abs(mass(g) - mass(f)) <= 1e-10 and lp_norm_p(g, 2) <= lp_norm_p(f, 2),
                        f"dmass {abs(mass(g) - mass(f)):.1e}"))
    return out


def suite_cost():
    from .accel_cost import (DiscreteMeasure, cost_ch, cubic_oracle, free_transport, wh,
                             wh_direct_lp)

    rng = np.random.default_rng(0)
    out = []
    worst = 0.0
    for _ in range(100):
        h = rng.choice([0.5, 1.0, 2.0])
        a, b = rng.normal(size=2), rng.normal(size=2)
        c, o = float(cost_ch(h, a, b)), cubic_oracle(h, a, b)
        worst = max(worst, abs(c - o) / max(abs(o), 1e-300))
    out.append(_chk("cost equals cubic oracle", worst <= 1e-9, f"max rel {worst:.1e}"))
    worst = 0.0
    for _ in range(20):
        n, m = rng.integers(1, 9, size=2)
        mu = DiscreteMeasure(rng.normal(size=n), rng.normal(size=n), rng.dirichlet(np.ones(n)))
        nu = DiscreteMeasure(rng.normal(size=m), rng.normal(size=m), rng.dirichlet(np.ones(m)))
        a, _ = wh(0.7, mu, nu)
        b, _ = wh_direct_lp(0.7, mu, nu)
        worst = max(worst, abs(a * a - b * b))
    out.append(_chk("W_h reduction vs direct LP", worst <= 1e-8, f"max gap {worst:.1e}"))
    mu = DiscreteMeasure(rng.normal(size=6), rng.normal(size=6), np.full(6, 1 / 6))
    z, _ = wh(0.5, mu, free_transport(0.5, mu))
    out.append(_chk("W_h(mu, F_h mu) = 0", z <= 1e-10, f"{z:.1e}"))
    return out


def suite_jko():
    from .core import DensityGrid, quadratic_potential, quartic_potential
    from .kinetic_step import jko_map_step, jko_variational_step
    from .ot_solver import w2_exact

    out = []
    f = DensityGrid.from_function(
        lambda x, v: np.exp(-(x**2) / 0.5 - (v - 0.5) ** 2 / 0.5), 16, 16, 2.0, 2.0
    )
    for psi, h in ((quadratic_potential(), 0.25), (quartic_potential(2.0), 1 / 16)):
        a = jko_map_step(f, psi, h, remap="deposit")
        b = jko_variational_step(f, psi, h)
        gap = abs(a.objective - b.objective)
        d, _ = w2_exact(_atoms(a.f), _atoms(b.f))
        out.append(_chk(f"map vs variational ({psi.name})", gap <= 1e-3 * (1 + abs(a.objective))
                        and d <= 2 * f.dv, f"gap {gap:.1e}, W2 {d:.2e}"))
    return out


def _atoms(f):
    X, V = np.meshgrid(f.x, f.v, indexing="ij")
    m = f.masses().ravel()
    keep = m > 1e-14 * m.max()
    w = m[keep] / m[keep].sum()
    return np.column_stack([X.ravel()[keep], V.ravel()[keep]]), w


def suite_scheme():
    from .core import SchemeConfig, test_battery
    from .splitting import apriori_report, fitted_order, run_scheme, weak_residual

    out = []
    base = SchemeConfig(s=1.0, h=1 / 8, T=1.0, Lv=4.0)
    hs = [1 / 8, 1 / 16, 1 / 32, 1 / 64]
    bat = test_battery(10, seed=1, x_scale=0.5, v_scale=0.5)
    res = []
    for h in hs:
        tr = run_scheme(base.with_(h=h))
        rep = apriori_report(tr)
        for key in ("mass", "nonnegative", "sum_wh2_exact", "m2_exact", "coupling", "lp_growth"):
            out.append(_chk(f"h={h:g} {key}", rep.flags[key]))
        res.append(sum(weak_residual(tr, p) for p in bat))
    order = fitted_order(hs, res)
    mono = all(b < a for a, b in zip(res, res[1:]))
    out.append(_chk("weak residual decay", mono and abs(order - 1.0) <= 0.3, f"order {order:.2f}"))
    return out


def suite_oracle():
    from .core import SchemeConfig, l1_distance
    from .reference import (characteristics_density, gaussian_initial, ks_to_grid_marginal,
                            reference_pde_solve, sde_simulate, stationary_stable)
    from .splitting import run_scheme

    out = []
    c = SchemeConfig(s=1.0, h=1 / 8, T=1.0, mode="transport", potential="zero")
    err = l1_distance(reference_pde_solve(c), characteristics_density(c, gaussian_initial(c)))
    out.append(_chk("reference solver reproduces shear", err <= 1e-3, f"L1 {err:.1e}"))
    c = SchemeConfig(s=1.0, h=1 / 16, T=10.0, mode="homogeneous", Nx=1, Lv=6.0)
    g = reference_pde_solve(c)
    err = stationary_stable(1.0, g.v).l1_to(g.v_marginal())
    out.append(_chk("reference solver reaches N(0,1)", err <= 1e-2, f"L1 {err:.1e}"))
    c = SchemeConfig(s=0.75, h=1 / 16, T=1.0, Lv=12.0, Nv=256)
    tr = run_scheme(c, keep_fbar=False)
    ens = sde_simulate(c, M=100_000)
    ks = ks_to_grid_marginal(ens.velocities, tr.f[-1])
    out.append(_chk("particles vs grid (s=0.75)", ks <= 0.05, f"KS {ks:.4f}"))
    return out


SUITES = {
    "kernel": suite_kernel,
    "cost": suite_cost,
    "jko": suite_jko,
    "scheme": suite_scheme,
    "oracle": suite_oracle,
}


def run_suite(name):
    if name not in SUITES:
        raise KeyError(name)
    return SUITES[name]()
