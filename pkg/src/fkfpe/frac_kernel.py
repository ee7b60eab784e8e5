"""Fractional heat kernel tables and the fractional diffusion phase.

The kernel ``Phi_s(., t)`` is the inverse Fourier transform of
``exp(-t |xi|^(2s))`` with the convention that puts ``(2 pi)^-1`` on the
inverse transform, so that the kernel has unit integral.

Two objects live in a :class:`KernelTable`:

``samples``
    point values ``Phi_s(k dv, t)``, computed spectrally on a lattice
    ``refine`` times finer than the velocity grid so that the symbol is
    negligible past the Nyquist frequency;
``weights``
    transition probabilities of the lattice operator that the diffusion
    step actually applies. When the kernel is resolved by the grid these
    are ``samples * dv``; otherwise they are the lattice kernel generated by
    the fractional power of the discrete Laplacian, whose symbol is
    ``exp(-t (2 sin(xi dv / 2) / dv)^(2s))``. Point samples of an
    unresolved stable kernel collapse onto the central cell and stop
    diffusing, whereas the lattice kernel keeps the right generator.

Velocity boundaries reflect: the density is evenly extended to ``2 Nv``
cells and convolved circularly with the ``2 Nv``-periodized kernel, so the
step is a symmetric doubly stochastic matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import integrate

from .core import DensityGrid

WEIGHT_MODES = ("auto", "sampled", "discrete")
_SPECTRAL_CUTOFF = 40.0  # exp(-40) ~ 4e-18: symbol treated as zero past this


@dataclass(frozen=True)
class KernelTable:
    """Kernel of ``exp(-t (-Laplacian)^s)`` on the lags ``k dv``,
    ``|k| <= H``. ``weights`` halve the two end entries, which are the
    same point of the ``2H``-periodic lattice."""

    s: float
    t: float
    dv: float
    Nv: int
    samples: np.ndarray
    weights: np.ndarray
    R: float = math.inf
    l1: float = 1.0
    sample_l1: float = 1.0
    mode: str = "sampled"
    renormalized: bool = False
    resolved: bool = True

    @property
    def H(self) -> int:
        return (len(self.weights) - 1) // 2

    @property
    def lags(self) -> np.ndarray:
        return np.arange(-self.H, self.H + 1) * self.dv

    def periodic_weights(self) -> np.ndarray:
        """Weights wrapped onto the ``2 Nv`` period of the even extension."""
        period = 2 * self.Nv
        out = np.zeros(period)
        idx = np.arange(-self.H, self.H + 1) % period
        np.add.at(out, idx, self.weights)
        return out

    def is_symmetric(self) -> bool:
        return bool(
            np.array_equal(self.samples, self.samples[::-1])
            and np.array_equal(self.weights, self.weights[::-1])
        )


def _grid_spacing(v_grid):
    """``(dv, Nv)`` from a DensityGrid or an array of uniform cell centers."""
    if isinstance(v_grid, DensityGrid):
        return v_grid.dv, v_grid.Nv
    v = np.asarray(v_grid, dtype=float)
    if v.ndim != 1 or v.size < 2:
        raise ValueError("v_grid must be a 1-d array of cell centers")
    dv = float(v[1] - v[0])
    if not np.allclose(np.diff(v), dv, rtol=1e-9, atol=0):
        raise ValueError("v_grid must be uniform")
    return dv, v.size


def _mirror(half: np.ndarray) -> np.ndarray:
    """Symmetric array from its nonnegative-lag half (bit-exact mirror)."""
    return np.concatenate([half[:0:-1], half])


def _lattice_kernel(symbol, M: int, dv: float) -> np.ndarray:
    """Nonnegative-lag half (lags 0..M/2) of the ``M``-periodic lattice
    kernel with the given symbol (a function of xi)."""
    xi = 2 * np.pi * np.fft.rfftfreq(M, d=dv)
    spec = symbol(xi)
    # even real spectrum: inverse real transform gives the periodic kernel
    ker = np.fft.irfft(spec, n=M)
    return ker[: M // 2 + 1]


def discrete_symbol(xi, s, dv):
    """Symbol of the fractional power of the 3-point discrete Laplacian."""
    return (2.0 * np.abs(np.sin(0.5 * xi * dv)) / dv) ** (2 * s)


def build_kernel(s, t, v_grid, *, refine=4, widen=4, weights="auto") -> KernelTable:
    """Sample ``Phi_s(., t)`` on the lags of a velocity grid.

    ``refine`` is the initial oversampling of the spectral lattice (raised
    while the symbol is not negligible at the fine Nyquist frequency, while
    the fine lattice stays below 2^22 points); ``widen`` sets the lattice period to ``widen * 2 Nv`` cells, which
    controls periodization of heavy tails.
    """
    if t <= 0:
        raise ValueError("kernel time t must be positive")
    if not (0 < s <= 1):
        raise ValueError("s must lie in (0, 1]")
    if weights not in WEIGHT_MODES:
        raise ValueError(f"weights must be one of {WEIGHT_MODES}")
    dv, Nv = _grid_spacing(v_grid)
    M = int(widen) * 2 * Nv
    H = M // 2

    r = max(2, int(refine))
    r = 1 << (r - 1).bit_length()
    while t * (np.pi * r / dv) ** (2 * s) < _SPECTRAL_CUTOFF and M * r < 2**22:
        r *= 2
    resolved_band = t * (np.pi * r / dv) ** (2 * s) >= _SPECTRAL_CUTOFF

    fine = _lattice_kernel(lambda xi: np.exp(-t * np.abs(xi) ** (2 * s)), M * r, dv / r)
    samples_half = np.clip(fine[::r] * (r / dv), 0.0, None)
    samples = _mirror(samples_half)
    # lattice sum over all of Z (the M-periodic samples cover one period)
    sample_l1 = float((2 * samples_half[1:H].sum() + samples_half[0] + samples_half[H]) * dv)

    resolved = bool(resolved_band and abs(sample_l1 - 1.0) < 1e-9)
    mode = weights
    if mode == "auto":
        mode = "sampled" if resolved else "discrete"
    if mode == "sampled":
        w_half = samples_half * dv
    else:
        w_half = np.clip(
            _lattice_kernel(lambda xi: np.exp(-t * discrete_symbol(xi, s, dv)), M, dv), 0.0, None
        )
    w_half = w_half.copy()
    w_half[H] *= 0.5
    w = _mirror(w_half)
    return KernelTable(
        s=float(s), t=float(t), dv=dv, Nv=Nv, samples=samples, weights=w,
        l1=float(w.sum()), sample_l1=sample_l1, mode=mode, resolved=resolved,
    )


def identity_kernel(v_grid) -> KernelTable:
    """The ``t -> 0`` limit: a discrete delta, already renormalized."""
    dv, Nv = _grid_spacing(v_grid)
    w = np.zeros(2 * Nv + 1)
    w[Nv] = 1.0
    samples = w / dv
    return KernelTable(1.0, 0.0, dv, Nv, samples, w, l1=1.0, renormalized=True)


def _ball_fraction(lags, dv, R):
    """Fraction of each lag cell ``[|k| dv - dv/2, |k| dv + dv/2]`` inside
    the ball of radius R."""
    return np.clip((R - (np.abs(lags) - 0.5 * dv)) / dv, 0.0, 1.0)


def truncate_renormalize(K: KernelTable, R) -> KernelTable:
    """Restrict the kernel to ``|w| <= R`` and rescale it to unit mass.

    ``R = inf`` only renormalizes. ``l1`` of the result is the mass kept
    before rescaling.
    """
    if not R > 0 or R < K.dv:
        raise ValueError(f"truncation radius {R} is smaller than one cell ({K.dv})")
    if math.isinf(R) or R >= (K.H + 0.5) * K.dv:
        kept = K.weights.copy()
        samples = K.samples.copy()
    else:
        frac = _ball_fraction(K.lags, K.dv, R)
        kept = K.weights * frac
        samples = np.where(frac > 0, K.samples, 0.0)
    mass = float(kept.sum())
    if mass <= 0:
        raise ValueError("truncated kernel has no mass")
    return replace(K, weights=kept / mass, samples=samples, R=float(R), l1=mass, renormalized=True)


def renormalization_factor(K: KernelTable) -> float:
    return 1.0 / K.l1


def diffusion_step(f: DensityGrid, K: KernelTable) -> DensityGrid:
    """Convolve every x-slice of ``f`` in v with the kernel table."""
    if not K.renormalized:
        raise ValueError("kernel table must be renormalized (see truncate_renormalize)")
    if K.Nv != f.Nv or not math.isclose(K.dv, f.dv, rel_tol=1e-12):
        raise ValueError("kernel table does not match the velocity grid")
    return f.with_values(apply_periodic_kernel(f.values, K.periodic_weights()))


def apply_periodic_kernel(values: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Reflecting-boundary convolution along the last axis.

    ``c`` is a kernel on the ``2 Nv`` period; the rows are evenly extended,
    convolved circularly and restricted.
    """
    Nv = values.shape[-1]
    ext = np.concatenate([values, values[..., ::-1]], axis=-1)
    nz = np.flatnonzero(c)
    if nz.size <= 16:
        out = np.zeros_like(ext)
        for k in nz:
            out += c[k] * np.roll(ext, k, axis=-1)
    else:
        out = np.fft.irfft(np.fft.rfft(ext, axis=-1) * np.fft.rfft(c), n=2 * Nv, axis=-1)
    return np.clip(out[..., :Nv], 0.0, None)


# --------------------------------------------------------------- moments


def _continuum_ball_integrals(s, t, R):
    """``(int_{|w|<R} Phi, int_{|w|<R} w^2 Phi)`` by Fourier integrals."""

    def env(xi):
        return np.exp(-t * xi ** (2 * s))

    # split [0, c] (smooth integrands) and [c, inf) (oscillatory, QAWF)
    c = min(1.0, 1.0 / R)

    def mass_head(xi):
        return env(xi) * R * np.sinc(R * xi / np.pi)

    def mom_head(xi):
        a = R * xi
        if a < 1e-3:
            g = 1.0 / 3.0 - a * a / 10.0
        else:
            g = (a * a * math.sin(a) + 2 * a * math.cos(a) - 2 * math.sin(a)) / a**3
        return env(xi) * R**3 * g

    kw = dict(limit=400, epsabs=1e-13, epsrel=1e-12)
    m0 = integrate.quad(mass_head, 0, c, **kw)[0]
    m0 += integrate.quad(lambda x: env(x) / x, c, np.inf, weight="sin", wvar=R, limlst=200)[0]
    m2 = integrate.quad(mom_head, 0, c, **kw)[0]
    for func, wt in (
        (lambda x: R * R * env(x) / x, "sin"),
        (lambda x: 2 * R * env(x) / x**2, "cos"),
        (lambda x: -2 * env(x) / x**3, "sin"),
    ):
        m2 += integrate.quad(func, c, np.inf, weight=wt, wvar=R, limlst=200)[0]
    return 2 * m0 / np.pi, 2 * m2 / np.pi


def moment_ratio(s, h, R, v_grid=None, **kernel_kw) -> float:
    """``int_{B_R} |w|^2 Phi_s^h / int_{B_R} Phi_s^h``.

    Without ``v_grid`` the integrals are the continuum ones; with a grid
    the ratio is the lattice moment of the truncated operator weights, which
    is what a diffusion step on that grid adds to the second moment.
    """
    if R <= 0:
        raise ValueError("empty ball")
    if v_grid is None:
        if math.isinf(R):
            return math.inf if s < 1 else 2.0 * h
        m0, m2 = _continuum_ball_integrals(s, h, R)
        if m0 <= 0:
            raise ValueError("empty ball")
        return m2 / m0
    K = truncate_renormalize(build_kernel(s, h, v_grid, **kernel_kw), R)
    return float(np.sum(K.weights * K.lags**2))


def table_moment(K: KernelTable) -> float:
    """Second moment of a renormalized table's weights."""
    return float(np.sum(K.weights * K.lags**2) / K.weights.sum())


def potential_inflation_check(f: DensityGrid, psi, s, h, R, **kernel_kw):
    """``(lhs, rhs)`` with ``lhs = int Psi fbar`` and
    ``rhs = int Psi f + |D^2 Psi|_inf / 2 * moment_ratio``, where ``fbar`` is
    the truncated, renormalized convolution of ``f``."""
    from .core import potential_energy

    K = truncate_renormalize(build_kernel(s, h, f, **kernel_kw), R)
    fbar = diffusion_step(f, K)
    lhs = potential_energy(fbar, psi)
    rhs = potential_energy(f, psi) + 0.5 * psi.hessian_sup * table_moment(K)
    return lhs, rhs


# --------------------------------------------------------------- sampling


def sample_stable_increment(rng, s, h, R=math.inf, size=None):
    """Draw increments with characteristic function ``exp(-h |xi|^(2s))``.

    Chambers-Mallows-Stuck for the symmetric stable law of index ``2s``,
    scaled by ``h^(1/(2s))``; a finite ``R`` rejects draws with ``|w| > R``.
    """
    if not (0 < s <= 1):
        raise ValueError("s must lie in (0, 1]")
    alpha = 2.0 * s
    scale = h ** (1.0 / alpha)
    n = 1 if size is None else int(np.prod(size))

    def draw(m):
        u = rng.uniform(-0.5 * np.pi, 0.5 * np.pi, m)
        w = rng.exponential(1.0, m)
        if alpha == 2.0:
            return scale * 2.0 * np.sin(u) * np.sqrt(w)
        x = (np.sin(alpha * u) / np.cos(u) ** (1 / alpha)) * (
            np.cos((1 - alpha) * u) / w
        ) ** ((1 - alpha) / alpha)
        return scale * x

    out = draw(n)
    if math.isfinite(R):
        bad = np.abs(out) > R
        while np.any(bad):
            out[bad] = draw(int(bad.sum()))
            bad = np.abs(out) > R
    if size is None:
        return float(out[0])
    return out.reshape(size)


class KernelCache:
    """Kernel tables stored as FKFP files keyed by ``(s, t, Nv, Lv)``.

    The file holds two rows (point samples, operator weights); the header's
    ``Lx`` slot carries ``t`` and ``Lv`` the velocity half-width.
    """

    def __init__(self, directory):
        from pathlib import Path

        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def path(self, s, t, Nv, Lv):
        return self.directory / f"kernel_s{s:.6g}_t{t:.6g}_N{Nv}_L{Lv:.6g}.fkfp"

    def get(self, s, t, v_grid, **kw) -> KernelTable:
        from .io import read_grid, write_grid

        dv, Nv = _grid_spacing(v_grid)
        Lv = 0.5 * dv * Nv
        p = self.path(s, t, Nv, Lv)
        if p.exists():
            samples, w = read_grid(p).values
            return KernelTable(
                s=float(s), t=float(t), dv=dv, Nv=Nv, samples=samples.copy(), weights=w.copy(),
                l1=float(w.sum()), sample_l1=float(samples.sum() * dv),
                mode="sampled" if np.allclose(w[1:-1], samples[1:-1] * dv) else "discrete",
            )
        K = build_kernel(s, t, v_grid, **kw)
        write_grid(p, DensityGrid(np.vstack([K.samples, K.weights]), t, Lv))
        return K
