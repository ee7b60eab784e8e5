"""Splitting driver: fractional diffusion, then the kinetic minimizing step.

One step of length ``h`` is

    fbar^n = (truncated, renormalized kernel) *_v f^{n-1}
    f^n    = argmin  W_h(fbar^n, f)^2 / (2h) + int Psi f

and between grid times the trajectory follows the untruncated fractional
heat flow from the last grid point. This module also computes the a priori
diagnostics of the scheme, weak-form residuals and convergence tables.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import (
    DensityGrid,
    DiagnosticsRecord,
    Potential,
    SchemeConfig,
    TestFunction,
    gaussian_test_function,
    lp_norm_p,
    mass,
    potential_energy,
    second_moment_v,
)
from .frac_kernel import build_kernel, diffusion_step, table_moment, truncate_renormalize
from .kinetic_step import LEAKAGE_LIMIT, ContractionError, el_residual, jko_map_step


class SchemeAbort(RuntimeError):
    """Run stopped: leakage, contraction violation or non-finite values."""


@dataclass
class Trajectory:
    config: SchemeConfig
    psi: Potential
    times: np.ndarray
    f: list  # f^0 .. f^N
    fbar: list  # fbar^1 .. fbar^N (index n-1)
    records: list  # DiagnosticsRecord for n = 0 .. N
    moment: float = 0.0  # second moment of the truncated kernel table
    energy_map: list = field(default_factory=list)  # int Psi of the exact push-forward
    coupling_moments: list = field(default_factory=list)  # per step (lhs, m2 fbar, m2 f')
    weights_mode: str = ""
    _kernels: dict = field(default_factory=dict, repr=False)

    @property
    def h(self) -> float:
        return self.config.h

    @property
    def N(self) -> int:
        return len(self.f) - 1

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])


def run_scheme(config: SchemeConfig, f0: Optional[DensityGrid] = None, psi: Optional[Potential] = None,
               *, weights="auto", el_phi: Optional[TestFunction] = None, keep_fbar=True) -> Trajectory:
    """Run ``N = T/h`` splitting steps and collect diagnostics."""
    psi = config.potential_obj() if psi is None else psi
    f0 = config.initial_density() if f0 is None else f0
    if f0.Nx != config.Nx or f0.Nv != config.Nv:
        raise ValueError("initial density does not match the configured grid")
    e0 = potential_energy(f0, psi)
    if not math.isfinite(e0):
        raise SchemeAbort("initial potential energy is not finite")
    h = config.h
    try:
        if not psi.is_zero():
            from .kinetic_step import check_contraction

            check_contraction(psi, h)
    except ContractionError as exc:
        raise SchemeAbort(str(exc)) from None

    diffuse = config.mode != "transport"
    K = None
    moment = 0.0
    mode_used = "none"
    if diffuse:
        K = truncate_renormalize(build_kernel(config.s, h, f0, weights=weights), _radius(config, f0))
        moment = table_moment(K)
        mode_used = K.mode
    phi = el_phi or gaussian_test_function(0.0, 0.0, 1.0, 1.0)

    f = f0.copy()
    recs = [_record(0, 0.0, f, config.p, psi, 0.0, 0.0, 0.0, 0.0)]
    fs, fbars, emap, cmom = [f], [], [], []
    leak = 0.0
    for n in range(1, config.N + 1):
        t0 = time.perf_counter()
        fbar = diffusion_step(f, K) if diffuse else f
        try:
            res = jko_map_step(fbar, psi, h, config.remap)
        except ContractionError as exc:
            raise SchemeAbort(str(exc)) from None
        leak += res.leakage
        if leak > LEAKAGE_LIMIT:
            raise SchemeAbort(f"cumulative velocity leakage {leak:.3e} exceeds {LEAKAGE_LIMIT:g}")
        f = res.f
        cp = res.coupling
        emap.append(float(np.sum(cp.m * psi.eval(cp.vp))))
        cmom.append((
            float(np.sum(cp.m * ((cp.xp - cp.x) ** 2 + (cp.vp - cp.v) ** 2))),
            float(np.sum(cp.m * cp.v**2)),
            float(np.sum(cp.m * cp.vp**2)),
        ))
        el = el_residual(fbar, res, psi, h, phi)
        rec = _record(n, n * h, f, config.p, psi, res.wh2, el, time.perf_counter() - t0, leak)
        if not rec.is_finite():
            raise SchemeAbort(f"non-finite diagnostics at step {n}")
        recs.append(rec)
        fs.append(f)
        fbars.append(fbar if keep_fbar else None)
    return Trajectory(config, psi, h * np.arange(config.N + 1), fs, fbars, recs, moment, emap, cmom,
                      mode_used)


def _radius(config: SchemeConfig, grid: DensityGrid) -> float:
    R = config.radius
    return max(R, grid.dv) if math.isfinite(R) else R


def _record(n, t, f, p, psi, wh2, el, wall, leak):
    return DiagnosticsRecord(
        n=n, t=t, mass=mass(f), lp_p=lp_norm_p(f, p), m2v=second_moment_v(f),
        epot=potential_energy(f, psi), wh2=wh2, el_res=el, wallclock=wall, leakage=leak,
    )


# ------------------------------------------------------------- interpolation


def _heat_kernel(traj: Trajectory, tau: float, grid: DensityGrid):
    key = round(tau, 15)
    K = traj._kernels.get(key)
    if K is None:
        K = truncate_renormalize(build_kernel(traj.config.s, tau, grid), math.inf)
        traj._kernels[key] = K
    return K


def interpolate(traj: Trajectory, t: float) -> DensityGrid:
    """Fractional heat flow from the last grid time: ``Phi_s(t - t_n) *_v f^n``."""
    T = traj.config.T
    if not (0.0 <= t < T + 1e-12 * T):
        raise ValueError(f"t={t} outside [0, {T})")
    h = traj.h
    n = int(math.floor(t / h + 1e-9))
    n = min(n, traj.N)
    tau = t - n * h
    fn = traj.f[n]
    if tau <= 1e-12 * h or traj.config.mode == "transport":
        return fn
    return diffusion_step(fn, _heat_kernel(traj, tau, fn))


def left_limit(traj: Trajectory, n: int) -> DensityGrid:
    """``lim_{t -> t_n^-}`` of the interpolation, i.e. ``Phi_s(h) *_v f^{n-1}``."""
    f = traj.f[n - 1]
    if traj.config.mode == "transport":
        return f
    return diffusion_step(f, _heat_kernel(traj, traj.h, f))


# ------------------------------------------------------------- a priori report


def bound_scale(traj: Trajectory, exponent="1/s") -> float:
    """``h int Psi f0 + T |D^2 Psi| (h^a + h R^(2-2s))`` with ``a = 1/s``
    or ``a = 1/2``."""
    cfg = traj.config
    h, s = cfg.h, cfg.s
    R = _radius(cfg, traj.f[0])
    a = 1.0 / s if exponent == "1/s" else 0.5
    tail = 0.0 if math.isinf(R) else h * R ** (2 - 2 * s)
    if cfg.mode == "transport":
        a_term = 0.0
        tail = 0.0
    else:
        a_term = h**a
    return h * traj.records[0].epot + cfg.T * traj.psi.hessian_sup * (a_term + tail)


def step_scale(traj: Trajectory, exponent="1/s") -> float:
    """``h^a + h R^(2-2s)`` (per-step moment growth scale)."""
    cfg = traj.config
    if cfg.mode == "transport":
        return 0.0
    R = _radius(cfg, traj.f[0])
    a = 1.0 / cfg.s if exponent == "1/s" else 0.5
    return cfg.h**a + (0.0 if math.isinf(R) else cfg.h * R ** (2 - 2 * cfg.s))


@dataclass
class AprioriReport:
    sum_wh2: float
    sum_wh2_exact_bound: float  # 2 h E0 + T |D^2 Psi| * moment + remap slack
    sum_wh2_scale: dict  # exponent -> bound scale
    m2_increments: np.ndarray  # M2(f^i) - M2(f^{i-1}) - 4 W_i^2
    m2_exact_ok: bool
    lp_values: np.ndarray  # |f(t)|_p^p at the checked times
    lp_times: np.ndarray
    lp_decay_bound: float  # e^{alpha T (1-p)} |f0|_p^p
    lp_growth_bound: np.ndarray  # e^{alpha t (p-1)} |f0|_p^p
    coupling_ok: bool
    coupling_ratio: float
    mass_error: float
    min_value: float
    flags: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(self.flags.values())


def apriori_report(traj: Trajectory, lp_slack=0.01, sub=4) -> AprioriReport:
    """Per-trajectory a priori checks; see :func:`apriori_scaling` for the
    fitted-constant protocol across step sizes."""
    cfg = traj.config
    h, p = cfg.h, cfg.p
    psi = traj.psi
    wh2 = traj.column("wh2")[1:]
    e0 = traj.records[0].epot
    epot = traj.column("epot")
    # remap slack: grid energy after the step vs energy of the exact push-forward
    remap_slack = float(np.sum(np.abs(epot[1:] - np.array(traj.energy_map)))) * 2 * h
    exact_bound = 2 * h * e0 + cfg.T * psi.hessian_sup * traj.moment + remap_slack

    m2 = traj.column("m2v")
    incr = m2[1:] - m2[:-1] - 4 * wh2
    m2_exact_ok = bool(np.all(incr <= traj.moment + 1e-9 + _remap_m2_slack(traj)))

    times, lp_vals = [], []
    for n in range(traj.N):
        for k in range(sub):
            t = (n + k / sub) * h
            times.append(t)
            lp_vals.append(lp_norm_p(interpolate(traj, t), p))
    times.append(cfg.T)
    lp_vals.append(traj.records[-1].lp_p)
    times = np.array(times)
    lp_vals = np.array(lp_vals)
    lp0 = traj.records[0].lp_p
    decay = math.exp(cfg.alpha * cfg.T * (1 - p)) * lp0
    growth = np.exp(cfg.alpha * times * (p - 1)) * lp0

    # explicit-constant form of the coupling moment bound
    lhs = np.array([c[0] for c in traj.coupling_moments])
    rhs = (1 + h * h / 6) * wh2 + 0.5 * h * h * np.array(
        [c[1] + c[2] for c in traj.coupling_moments]
    )
    coupling_ok = bool(np.all(lhs <= rhs * (1 + 1e-12) + 1e-15))
    ratio = float(np.max(np.divide(lhs, rhs, out=np.zeros_like(lhs), where=rhs > 0))) if len(lhs) else 0.0

    mass_err = float(np.max(np.abs(traj.column("mass") - 1.0)))
    min_val = float(min(f.values.min() for f in traj.f))
    flags = {
        "mass": mass_err <= 1e-9,
        "nonnegative": min_val >= 0.0,
        "sum_wh2_exact": float(wh2.sum()) <= exact_bound * (1 + 1e-9) + 1e-14,
        "m2_exact": m2_exact_ok,
        "lp_decay": bool(np.all(lp_vals <= decay * (1 + lp_slack))),
        "lp_growth": bool(np.all(lp_vals <= growth * (1 + lp_slack))),
        "coupling": coupling_ok,
    }
    return AprioriReport(
        float(wh2.sum()), exact_bound,
        {"1/s": bound_scale(traj, "1/s"), "1/2": bound_scale(traj, "1/2")},
        incr, m2_exact_ok, lp_vals, times, decay, growth, coupling_ok, ratio, mass_err, min_val,
        flags,
    )


def _remap_m2_slack(traj: Trajectory) -> float:
    """Largest per-step change of M2 caused by remapping the push-forward."""
    m2 = traj.column("m2v")[1:]
    exact = np.array([c[2] for c in traj.coupling_moments])
    return float(np.max(np.abs(m2 - exact))) if len(exact) else 0.0


def fitted_constant_check(values, scales):
    """Fit ``C = values[0] / scales[0]`` on the coarsest level and test
    ``values[k] <= C * scales[k]`` for the finer ones.

    Returns ``(C, ok_per_level)``.
    """
    values = np.asarray(values, dtype=float)
    scales = np.asarray(scales, dtype=float)
    C = values[0] / scales[0] if scales[0] > 0 else 0.0
    return C, [bool(v <= C * s * (1 + 1e-12) + 1e-15) for v, s in zip(values[1:], scales[1:])]


def apriori_scaling(trajs, exponent="1/s"):
    """Frozen-constant protocol across trajectories ordered coarse to fine.

    (a) ``sum W_h^2 <= C (h int Psi f0 + T |D^2 Psi| (h^a + h R^(2-2s)))``;
    (b) ``max_i [M2(f^i) - M2(f^{i-1}) - 4 W_i^2] <= C (h^a + h R^(2-2s))``.
    """
    sums = [float(t.column("wh2").sum()) for t in trajs]
    scales_a = [bound_scale(t, exponent) for t in trajs]
    Ca, oka = fitted_constant_check(sums, scales_a)
    incs = []
    for t in trajs:
        m2 = t.column("m2v")
        incs.append(float(np.max(m2[1:] - m2[:-1] - 4 * t.column("wh2")[1:])))
    scales_b = [step_scale(t, exponent) for t in trajs]
    Cb, okb = fitted_constant_check(incs, scales_b)
    return {
        "sum_wh2": sums, "scale_a": scales_a, "C_a": Ca, "ok_a": oka,
        "m2_increment": incs, "scale_b": scales_b, "C_b": Cb, "ok_b": okb,
    }


# ------------------------------------------------------------- weak residual


def fractional_laplacian_v(phi: TestFunction, s, x, v, refine=4, widen=4):
    """``(-Laplacian_v)^s phi`` at ``(x[i], v[j])`` by FFT in v on a padded,
    refined periodic lattice."""
    v = np.asarray(v, dtype=float)
    dv = v[1] - v[0]
    d = dv / refine
    half = widen * (v[-1] - v[0] + dv)
    n = int(round(2 * half / d))
    n += n % 2
    # lattice through v[0] extending both ways
    k0 = n // 2
    vf = v[0] + d * (np.arange(n) - k0)
    vals = phi.value(np.asarray(x)[:, None], vf[None, :])
    xi = 2 * np.pi * np.fft.fftfreq(n, d=d)
    out = np.fft.ifft(np.fft.fft(vals, axis=1) * np.abs(xi) ** (2 * s), axis=1).real
    idx = k0 + refine * np.arange(len(v))
    return out[:, idx]


def _time_profile(T):
    """``chi(t) = cos^2(pi t / (2T))``: smooth, ``chi(T) = chi'(T) = 0``."""

    def chi(t):
        return math.cos(0.5 * math.pi * t / T) ** 2

    def dchi(t):
        return -0.5 * math.pi / T * math.sin(math.pi * t / T)

    return chi, dchi


def weak_form_residual(density_at: Callable, f0: DensityGrid, phi: TestFunction, psi: Potential,
                       s, T, h, sub=4, diffusion=True, frac_phi=None) -> float:
    """``|int_0^T int f (d_t + v d_x - Psi' d_v - (-Lap_v)^s) phi + int f0 phi(0)|``
    for ``phi(t, x, v) = chi(t) phi(x, v)``, with midpoint quadrature on
    ``sub`` sub-intervals of each step of length ``h``."""
    chi, dchi = _time_profile(T)
    x, v = f0.x, f0.v
    X, V = np.meshgrid(x, v, indexing="ij")
    ps = phi.value(X, V)
    transport = V * phi.grad_x(X, V) - psi.grad(V) * phi.grad_v(X, V)
    if diffusion:
        L = fractional_laplacian_v(phi, s, x, v) if frac_phi is None else frac_phi
        transport = transport - L
    vol = f0.cell_volume
    N = int(round(T / h))
    total = float(np.sum(f0.values * ps) * vol) * chi(0.0)
    dt = h / sub
    for n in range(N):
        for k in range(sub):
            t = n * h + (k + 0.5) * dt
            f = density_at(t).values
            total += dt * float(np.sum(f * (dchi(t) * ps + chi(t) * transport)) * vol)
    return abs(total)


def weak_residual(traj: Trajectory, phi: TestFunction, sub=4) -> float:
    cfg = traj.config
    return weak_form_residual(
        lambda t: interpolate(traj, t), traj.f[0], phi, traj.psi, cfg.s, cfg.T, cfg.h, sub,
        diffusion=cfg.mode != "transport",
    )


# ------------------------------------------------------------- convergence


def fitted_order(hs, errors) -> float:
    """Least-squares slope of ``log error`` against ``log h``."""
    hs = np.asarray(hs, dtype=float)
    errors = np.asarray(errors, dtype=float)
    return float(np.polyfit(np.log(hs), np.log(errors), 1)[0])


@dataclass
class ConvergenceTable:
    hs: list
    errors: list
    order: float

    @property
    def monotone(self) -> bool:
        return all(b < a for a, b in zip(self.errors, self.errors[1:]))

    def rows(self):
        return list(zip(self.hs, self.errors))


def convergence_study(configs, f0, psi, reference, **run_kw) -> ConvergenceTable:
    """L1 error at time T of each configuration against ``reference``.

    ``reference`` is a DensityGrid or a callable ``config -> DensityGrid``.
    """
    base = configs[0]
    for c in configs[1:]:
        if (c.Nx, c.Nv, c.Lx, c.Lv, c.s, c.T, c.mode) != (base.Nx, base.Nv, base.Lx, base.Lv, base.s,
                                                           base.T, base.mode):
            raise ValueError("configurations must differ only in h")
    from .core import l1_distance

    hs, errs = [], []
    for c in configs:
        traj = run_scheme(c, f0, psi, keep_fbar=False, **run_kw)
        ref = reference(c) if callable(reference) else reference
        if not ref.same_geometry(traj.f[-1]):
            raise ValueError("reference grid does not match the scheme grid")
        hs.append(c.h)
        errs.append(l1_distance(traj.f[-1], ref))
    return ConvergenceTable(hs, errs, fitted_order(hs, errs))
