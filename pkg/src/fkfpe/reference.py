"""Independent oracles for the splitting scheme.

* ``reference_pde_solve``: method of lines, 4th-order centered differences
  for transport and drift, a cosine-transform multiplier ``|xi|^(2s)`` for
  the fractional term, classical RK4 in time.
* ``sde_simulate``: particles driven by stable increments.
* ``characteristics_transport`` / ``characteristics_density``: exact
  solutions of the transport-only equation.
* ``stationary_stable``: the equilibrium of the homogeneous equation with
  quadratic friction, characteristic function ``exp(-|xi|^(2s) / (2s))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.fft import dct, idct

from .core import DensityGrid, ParticleEnsemble, Potential, SchemeConfig, cell_centers
from .frac_kernel import sample_stable_increment
from .kinetic_step import implicit_velocity_map

# ------------------------------------------------------------ stationary law


@dataclass
class StationaryLaw:
    s: float
    v: np.ndarray
    density: np.ndarray

    @property
    def dv(self) -> float:
        return float(self.v[1] - self.v[0])

    def mass(self) -> float:
        return float(self.density.sum() * self.dv)

    def l1_to(self, g) -> float:
        return float(np.abs(np.asarray(g) - self.density).sum() * self.dv)


def stable_density(s, v, scale_t=None):
    """Density with characteristic function ``exp(-t |xi|^(2s))`` at points
    ``v`` by oscillatory quadrature (``t = 1/(2s)`` by default)."""
    t = 1.0 / (2 * s) if scale_t is None else scale_t
    v = np.atleast_1d(np.asarray(v, dtype=float))
    out = np.empty_like(v)

    def amp(xi):
        return math.exp(-t * xi ** (2 * s))

    for i, w in enumerate(np.abs(v)):
        if w < 1e-12:
            val, _ = integrate.quad(amp, 0, np.inf, limit=400)
        else:
            # smooth head, then Fourier-weighted tail
            c = min(1.0, 1.0 / w)
            head, _ = integrate.quad(lambda xi: amp(xi) * math.cos(w * xi), 0, c, limit=200)
            tail, _ = integrate.quad(lambda xi: amp(xi + c), 0, np.inf, weight="cos", wvar=w,
                                     limlst=200)
            # cos(w (xi + c)) = cos(w xi) cos(wc) - sin(w xi) sin(wc)
            tail_s, _ = integrate.quad(lambda xi: amp(xi + c), 0, np.inf, weight="sin", wvar=w,
                                       limlst=200)
            val = head + math.cos(w * c) * tail - math.sin(w * c) * tail_s
        out[i] = val / math.pi
    return out


def stationary_stable(s, v_grid) -> StationaryLaw:
    """Stationary v-law of the homogeneous equation with ``Psi = |v|^2 / 2``."""
    if not (0 < s <= 1):
        raise ValueError("s must lie in (0, 1]")
    v = v_grid.v if isinstance(v_grid, DensityGrid) else np.asarray(v_grid, dtype=float)
    dens = np.clip(stable_density(s, v), 0.0, None)
    dv = v[1] - v[0]
    dens = dens / (dens.sum() * dv)
    return StationaryLaw(s, v, dens)


# ------------------------------------------------------------ method of lines


def _d1_periodic(f, d, axis):
    return (
        -np.roll(f, -2, axis) + 8 * np.roll(f, -1, axis) - 8 * np.roll(f, 1, axis) + np.roll(f, 2, axis)
    ) / (12 * d)


def _div_flux(g, d):
    """4th-order centered derivative of ``g`` along the last axis in flux
    form, with zero flux through the two outer faces (exactly conservative)."""
    p = np.pad(g, [(0, 0)] * (g.ndim - 1) + [(2, 2)])
    # faces j + 1/2 for j = -1 .. N-1
    F = (-p[..., :-3] + 7 * p[..., 1:-2] + 7 * p[..., 2:-1] - p[..., 3:]) / 12
    F[..., 0] = 0.0
    F[..., -1] = 0.0
    return (F[..., 1:] - F[..., :-1]) / d


class _Rhs:
    def __init__(self, grid: DensityGrid, psi: Potential, s, transport=True, drift=True,
                 diffusion=True):
        self.grid = grid
        self.v = grid.v[None, :]
        self.dpsi = psi.grad(grid.v)[None, :]
        self.transport = transport and grid.Nx > 1
        self.drift = drift and not psi.is_zero()
        self.diffusion = diffusion
        # cosine basis of the even extension: xi_k = pi k / (2 Lv)
        k = np.arange(grid.Nv)
        self.symbol = (np.pi * k / (2 * grid.Lv)) ** (2 * s)

    def __call__(self, f):
        out = np.zeros_like(f)
        g = self.grid
        if self.transport:
            out -= self.v * _d1_periodic(f, g.dx, 0)
        if self.drift:
            out += _div_flux(self.dpsi * f, g.dv)
        if self.diffusion:
            out -= idct(self.symbol * dct(f, type=2, axis=1, norm="ortho"), type=2, axis=1,
                        norm="ortho")
        return out

    def stable_dt(self, cfl=0.5):
        g = self.grid
        rates = [1e-300]
        if self.transport:
            rates.append(1.372 * np.max(np.abs(self.v)) / g.dx)  # spectral radius of D1 on 4th order
        if self.drift:
            lip = float(np.max(np.abs(self.dpsi)))
            rates.append(1.372 * lip / g.dv + lip)
        if self.diffusion:
            rates.append(float(self.symbol[-1]) / 1.0)
        # RK4 covers |z| <= 2.78 on both axes
        return cfl * 2.78 / max(rates)


def reference_pde_solve(config: SchemeConfig, f0: DensityGrid = None, psi: Potential = None,
                        T=None, diffusion=None, cfl=0.5, return_steps=False):
    """Terminal density of the full equation by the method of lines."""
    psi = config.potential_obj() if psi is None else psi
    f0 = config.initial_density() if f0 is None else f0
    T = config.T if T is None else T
    diffusion = (config.mode != "transport") if diffusion is None else diffusion
    rhs = _Rhs(f0, psi, config.s, transport=config.mode != "homogeneous", diffusion=diffusion)
    n = max(1, int(math.ceil(T / rhs.stable_dt(cfl))))
    dt = T / n
    f = f0.values.copy()
    for _ in range(n):
        k1 = rhs(f)
        k2 = rhs(f + 0.5 * dt * k1)
        k3 = rhs(f + 0.5 * dt * k2)
        k4 = rhs(f + dt * k3)
        f = f + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    # centered differences leave small negative lobes; clip them and
    # rescale so the conserved mass of the raw solution is kept
    total = f.sum()
    f = np.clip(f, 0.0, None)
    if f.sum() > 0:
        f *= total / f.sum()
    out = f0.with_values(f)
    return (out, n) if return_steps else out


# ------------------------------------------------------------ characteristics


def _ode_flow(psi: Potential, x, v, T, dt_max=1e-3):
    """RK4 for ``x' = v, v' = -grad Psi(v)`` on all particles at once."""
    n = max(1, int(math.ceil(T / dt_max)))
    dt = T / n
    for _ in range(n):
        k1x, k1v = v, -psi.grad(v)
        v2 = v + 0.5 * dt * k1v
        k2x, k2v = v2, -psi.grad(v2)
        v3 = v + 0.5 * dt * k2v
        k3x, k3v = v3, -psi.grad(v3)
        v4 = v + dt * k3v
        k4x, k4v = v4, -psi.grad(v4)
        x = x + dt / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
        v = v + dt / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
    return x, v


def characteristics_transport(ens: ParticleEnsemble, psi: Potential, T, dt_max=1e-3) -> ParticleEnsemble:
    """Flow particles along ``x' = v, v' = -grad Psi(v)`` up to time ``T``.

    Zero and quadratic friction use the closed-form flow.
    """
    x, v = ens.positions, ens.velocities
    if psi.is_zero():
        return ParticleEnsemble(x + T * v, v.copy())
    if psi.name == "quadratic":
        g = psi.hessian_sup
        decay = math.exp(-g * T)
        return ParticleEnsemble(x + v * (1 - decay) / g, v * decay)
    x2, v2 = _ode_flow(psi, x, v, T, dt_max)
    return ParticleEnsemble(x2, v2)


def _backward_flow(psi: Potential, x, v, T, dt_max=1e-3):
    """Foot of the characteristic through ``(x, v)`` at time ``T`` and the
    density amplification ``exp(int_0^T Psi''(V) dt)``."""
    if psi.is_zero():
        return x - T * v, v, np.ones_like(v)
    if psi.name == "quadratic":
        g = psi.hessian_sup
        v0 = v * math.exp(g * T)
        return x - v0 * (1 - math.exp(-g * T)) / g, v0, np.full_like(v, math.exp(g * T))
    n = max(1, int(math.ceil(T / dt_max)))
    dt = T / n
    logj = np.zeros_like(v)

    def rhs(v):
        return psi.grad(v)

    for _ in range(n):
        # backward in time: x' = -v, v' = +grad Psi(v), (log J)' = Psi''(v)
        k1 = rhs(v)
        k2 = rhs(v + 0.5 * dt * k1)
        k3 = rhs(v + 0.5 * dt * k2)
        k4 = rhs(v + dt * k3)
        h1 = psi.second_derivative(v)
        h2 = psi.second_derivative(v + 0.5 * dt * k1)
        h3 = psi.second_derivative(v + 0.5 * dt * k2)
        h4 = psi.second_derivative(v + dt * k3)
        x = x - dt / 6 * (v + 2 * (v + 0.5 * dt * k1) + 2 * (v + 0.5 * dt * k2) + (v + dt * k3))
        v = v + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        logj += dt / 6 * (h1 + 2 * h2 + 2 * h3 + h4)
    return x, v, np.exp(logj)


def characteristics_density(config: SchemeConfig, f0_func, psi: Potential = None, T=None,
                            normalization=None) -> DensityGrid:
    """Exact transport-only density at time ``T`` on the config grid.

    ``f0_func(x, v)`` is the (unnormalized) initial density; x is wrapped
    onto the periodic box. ``normalization`` divides the result (defaults to
    the grid mass of ``f0_func``).
    """
    psi = config.potential_obj() if psi is None else psi
    T = config.T if T is None else T
    x = cell_centers(config.Nx, config.Lx)
    v = cell_centers(config.Nv, config.Lv)
    X, V = np.meshgrid(x, v, indexing="ij")
    X0, V0, J = _backward_flow(psi, X, V, T)
    L = 2 * config.Lx
    X0 = (X0 + config.Lx) % L - config.Lx
    vals = f0_func(X0, V0) * J
    if normalization is None:
        g0 = f0_func(X, V)
        normalization = g0.sum() * (L / config.Nx) * (2 * config.Lv / config.Nv)
    return DensityGrid(vals / normalization, config.Lx, config.Lv)


def gaussian_initial(config: SchemeConfig):
    """The config's initial bump as a function of ``(x, v)`` (unnormalized)."""

    def f(x, v):
        return np.exp(-((x - config.x0) ** 2) / (2 * config.sigma_x**2)
                      - (v - config.v0) ** 2 / (2 * config.sigma_v**2))

    return f


# ------------------------------------------------------------ particles


def sample_initial(config: SchemeConfig, M, rng) -> ParticleEnsemble:
    """Draw ``M`` particles from the config's Gaussian bump (x wrapped)."""
    x = rng.normal(config.x0, config.sigma_x, M)
    v = rng.normal(config.v0, config.sigma_v, M)
    if config.mode == "homogeneous":
        x = np.zeros(M)
    else:
        x = (x + config.Lx) % (2 * config.Lx) - config.Lx
    return ParticleEnsemble(x, v)


def sde_simulate(config: SchemeConfig, sampler=None, psi: Potential = None, M=100_000, seed=None,
                 truncate=True) -> ParticleEnsemble:
    """Monte Carlo for ``dX = V dt, dV = -grad Psi(V) dt + dL^s``.

    Each step matches the splitting order: a stable increment of scale
    ``h^(1/(2s))`` (rejected outside the truncation ball when ``truncate``),
    then the implicit drift ``V' = S(V)`` and ``X' = X + h (V + V') / 2``.
    ``sampler(rng, M)`` returns the initial ensemble.
    """
    if M < 10_000:
        raise ValueError("use at least 1e4 particles")
    psi = config.potential_obj() if psi is None else psi
    rng = np.random.default_rng(config.seed if seed is None else seed)
    ens = sampler(rng, M) if sampler is not None else sample_initial(config, M, rng)
    x, v = ens.positions.copy(), ens.velocities.copy()
    h = config.h
    R = config.radius if truncate else math.inf
    moving = config.mode != "homogeneous"
    for _ in range(config.N):
        if config.mode != "transport":
            v = v + sample_stable_increment(rng, config.s, h, R, size=M)
        vp = implicit_velocity_map(psi, h, v) if not psi.is_zero() else v
        if moving:
            x = x + 0.5 * h * (v + vp)
        v = vp
    if moving:
        x = (x + config.Lx) % (2 * config.Lx) - config.Lx
    return ParticleEnsemble(x, v)


def histogram(ens: ParticleEnsemble, grid: DensityGrid, marginal="v") -> np.ndarray:
    """Particle density histogram aligned with the grid cells of one axis."""
    if marginal == "v":
        edges = -grid.Lv + grid.dv * np.arange(grid.Nv + 1)
        data = ens.velocities
        d = grid.dv
    else:
        edges = -grid.Lx + grid.dx * np.arange(grid.Nx + 1)
        data = ens.positions
        d = grid.dx
    counts, _ = np.histogram(data, bins=edges)
    return counts / (ens.M * d)


def ks_to_grid_marginal(samples, grid: DensityGrid, marginal="v") -> float:
    """Kolmogorov-Smirnov distance between an empirical sample and the
    piecewise-linear CDF of a grid marginal."""
    if marginal == "v":
        dens, lo, d = grid.v_marginal(), -grid.Lv, grid.dv
    else:
        dens, lo, d = grid.x_marginal(), -grid.Lx, grid.dx
    edges = lo + d * np.arange(len(dens) + 1)
    cdf = np.concatenate([[0.0], np.cumsum(dens * d)])
    cdf /= cdf[-1]
    xs = np.sort(np.asarray(samples, dtype=float))
    n = len(xs)
    F = np.interp(xs, edges, cdf, left=0.0, right=1.0)
    hi = np.arange(1, n + 1) / n
    lo_ = np.arange(n) / n
    return float(max(np.max(hi - F), np.max(F - lo_)))


def ensemble_rows(ens: ParticleEnsemble):
    return list(zip(ens.positions.tolist(), ens.velocities.tolist()))
