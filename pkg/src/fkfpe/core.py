"""Grid geometry, domain types and integral functionals on phase space.

The grid engine works in one space dimension: ``x`` is periodic on
``[-Lx, Lx)`` and ``v`` lives on ``[-Lv, Lv)`` with zero density outside.
Densities are stored row-major with shape ``(Nx, Nv)``; integrals use the
midpoint rule on cell centers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

MODES = ("full", "transport", "homogeneous")
TRUNCATIONS = ("coupled", "fixed")
REMAPS = ("semi_lagrangian", "deposit")


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def cell_centers(n: int, half_width: float) -> np.ndarray:
    """Centers of ``n`` equal cells tiling ``[-half_width, half_width)``."""
    d = 2.0 * half_width / n
    return -half_width + (np.arange(n) + 0.5) * d


@dataclass(frozen=True)
class Potential:
    """Friction potential with its gradient and a bound on the Hessian.

    ``hess`` is optional; when absent, second derivatives are taken by
    central differences of ``grad``.
    """

    name: str
    eval: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    hessian_sup: float
    hess: Optional[Callable[[np.ndarray], np.ndarray]] = None

    def __call__(self, v):
        return self.eval(v)

    def second_derivative(self, v):
        v = np.asarray(v, dtype=float)
        if self.hess is not None:
            return self.hess(v)
        eps = 1e-5 * (1.0 + np.abs(v))
        return (self.grad(v + eps) - self.grad(v - eps)) / (2 * eps)

    def is_zero(self) -> bool:
        return self.name == "zero"

    def spot_check(self, rng=None, n: int = 100, scale: float = 3.0) -> float:
        """Largest normalized mismatch between ``grad`` and a finite-difference
        gradient over ``n`` random velocities. Also checks nonnegativity."""
        rng = np.random.default_rng(0) if rng is None else rng
        v = rng.normal(scale=scale, size=n)
        if np.any(self.eval(v) < 0):
            raise ValueError(f"potential {self.name!r} takes negative values")
        eps = 1e-5
        fd = (self.eval(v + eps) - self.eval(v - eps)) / (2 * eps)
        g = self.grad(v)
        return float(np.max(np.abs(g - fd) / (1.0 + np.abs(g))))


def zero_potential() -> Potential:
    return Potential(
        "zero",
        lambda v: np.zeros_like(np.asarray(v, dtype=float)),
        lambda v: np.zeros_like(np.asarray(v, dtype=float)),
        0.0,
        lambda v: np.zeros_like(np.asarray(v, dtype=float)),
    )


def quadratic_potential(gamma: float = 1.0) -> Potential:
    """``gamma * |v|^2 / 2`` (linear friction)."""
    return Potential(
        "quadratic",
        lambda v: 0.5 * gamma * np.asarray(v, dtype=float) ** 2,
        lambda v: gamma * np.asarray(v, dtype=float),
        float(gamma),
        lambda v: np.full_like(np.asarray(v, dtype=float), gamma),
    )


def quartic_potential(v_max: float) -> Potential:
    """``v^4 / 4``. The Hessian is unbounded on the line, so the bound is
    taken over ``|v| <= v_max`` (the velocity box of the grid)."""
    return Potential(
        "quartic",
        lambda v: 0.25 * np.asarray(v, dtype=float) ** 4,
        lambda v: np.asarray(v, dtype=float) ** 3,
        3.0 * v_max**2,
        lambda v: 3.0 * np.asarray(v, dtype=float) ** 2,
    )


def logcosh_potential() -> Potential:
    """``log cosh v``: quadratic near 0, linear growth, Hessian in (0, 1]."""

    def ev(v):
        v = np.abs(np.asarray(v, dtype=float))
        return v + np.log1p(np.exp(-2 * v)) - math.log(2.0)

    return Potential(
        "logcosh",
        ev,
        lambda v: np.tanh(np.asarray(v, dtype=float)),
        1.0,
        lambda v: 1.0 / np.cosh(np.asarray(v, dtype=float)) ** 2,
    )


def make_potential(name: str, v_max: float = 1.0) -> Potential:
    if name == "zero":
        return zero_potential()
    if name == "quadratic":
        return quadratic_potential()
    if name == "quartic":
        return quartic_potential(v_max)
    if name == "logcosh":
        return logcosh_potential()
    raise ValueError(f"unknown potential {name!r}")


@dataclass
class DensityGrid:
    """Nonnegative density on the ``(x, v)`` cell grid.

    ``values[i, j]`` is the density at ``(x[i], v[j])``.
    """

    values: np.ndarray
    Lx: float
    Lv: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("values must be a 2-d array (Nx, Nv)")
        if not np.all(self.values >= 0):
            raise ValueError("density values must be finite and nonnegative")

    @classmethod
    def zeros(cls, Nx: int, Nv: int, Lx: float, Lv: float) -> "DensityGrid":
        return cls(np.zeros((Nx, Nv)), Lx, Lv)

    @classmethod
    def from_function(cls, func, Nx, Nv, Lx, Lv, normalize=True) -> "DensityGrid":
        """Sample ``func(x, v)`` (broadcasting) at cell centers."""
        x = cell_centers(Nx, Lx)[:, None]
        v = cell_centers(Nv, Lv)[None, :]
        vals = np.broadcast_to(func(x, v), (Nx, Nv)).astype(float)
        g = cls(vals.copy(), Lx, Lv)
        return g.normalize() if normalize else g

    @property
    def Nx(self) -> int:
        return self.values.shape[0]

    @property
    def Nv(self) -> int:
        return self.values.shape[1]

    @property
    def dx(self) -> float:
        return 2.0 * self.Lx / self.Nx

    @property
    def dv(self) -> float:
        return 2.0 * self.Lv / self.Nv

    @property
    def cell_volume(self) -> float:
        return self.dx * self.dv

    @property
    def x(self) -> np.ndarray:
        return cell_centers(self.Nx, self.Lx)

    @property
    def v(self) -> np.ndarray:
        return cell_centers(self.Nv, self.Lv)

    def masses(self) -> np.ndarray:
        return self.values * self.cell_volume

    def copy(self) -> "DensityGrid":
        return DensityGrid(self.values.copy(), self.Lx, self.Lv)

    def with_values(self, values) -> "DensityGrid":
        return DensityGrid(np.asarray(values, dtype=float), self.Lx, self.Lv)

    def same_geometry(self, other: "DensityGrid") -> bool:
        return (
            self.values.shape == other.values.shape
            and math.isclose(self.Lx, other.Lx)
            and math.isclose(self.Lv, other.Lv)
        )

    def normalize(self) -> "DensityGrid":
        m = mass(self)
        if m <= 0:
            raise ValueError("cannot normalize a grid with zero mass")
        return self.with_values(self.values / m)

    def v_marginal(self) -> np.ndarray:
        """Density of the velocity marginal on the v-grid."""
        return self.values.sum(axis=0) * self.dx

    def x_marginal(self) -> np.ndarray:
        return self.values.sum(axis=1) * self.dv


@dataclass
class ParticleEnsemble:
    """Equally weighted particles; ``positions`` and ``velocities`` have
    shape ``(M,)`` for d=1 or ``(M, d)`` for d in {2, 3}."""

    positions: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.velocities = np.asarray(self.velocities, dtype=float)
        if self.positions.shape != self.velocities.shape:
            raise ValueError("positions and velocities must have equal shapes")
        if self.positions.ndim == 2 and self.positions.shape[1] not in (1, 2, 3):
            raise ValueError("particle dimension must be 1, 2 or 3")
        if not (np.all(np.isfinite(self.positions)) and np.all(np.isfinite(self.velocities))):
            raise ValueError("non-finite particle coordinates")

    @property
    def M(self) -> int:
        return self.positions.shape[0]

    @property
    def weights(self) -> np.ndarray:
        return np.full(self.M, 1.0 / self.M)


@dataclass
class DiagnosticsRecord:
    n: int
    t: float
    mass: float
    lp_p: float
    m2v: float
    epot: float
    wh2: float
    el_res: float = 0.0
    wallclock: float = 0.0
    leakage: float = 0.0

    def is_finite(self) -> bool:
        return all(
            math.isfinite(getattr(self, k))
            for k in ("mass", "lp_p", "m2v", "epot", "wh2", "el_res")
        )


@dataclass(frozen=True)
class SchemeConfig:
    """Parameters of one run of the splitting scheme.

    ``R`` is only used with ``truncation='fixed'``; the coupled policy sets
    ``R = h**-0.5``.
    """

    s: float
    h: float
    T: float
    truncation: str = "coupled"
    R: float = math.inf
    Lx: float = 4.0
    Lv: float = 6.0
    Nx: int = 64
    Nv: int = 64
    p: float = 2.0
    alpha: float = 1.01
    seed: int = 0
    mode: str = "full"
    potential: str = "quadratic"
    remap: str = "semi_lagrangian"
    x0: float = 0.0
    v0: float = 0.0
    sigma_x: float = 0.5
    sigma_v: float = 0.5
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not (0.0 < self.s <= 1.0):
            raise ValueError(f"s must lie in (0, 1], got {self.s}")
        if self.h <= 0:
            raise ValueError("h must be positive")
        if self.T <= 0:
            raise ValueError("T must be positive")
        n = round(self.T / self.h)
        if n < 1 or abs(n * self.h - self.T) > 1e-9 * max(1.0, self.T):
            raise ValueError(f"T={self.T} is not an integer multiple of h={self.h}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.truncation not in TRUNCATIONS:
            raise ValueError(f"truncation must be one of {TRUNCATIONS}")
        if self.remap not in REMAPS:
            raise ValueError(f"remap must be one of {REMAPS}")
        if not (_is_pow2(self.Nx) and _is_pow2(self.Nv)):
            raise ValueError("Nx and Nv must be powers of two")
        if self.mode == "homogeneous" and self.Nx != 1:
            raise ValueError("homogeneous mode collapses x: set Nx = 1")
        if not (1.0 < self.p < math.inf):
            raise ValueError("p must lie in (1, inf)")
        if self.truncation == "fixed" and not self.R > 0:
            raise ValueError("fixed truncation needs R > 0")
        if self.Lx <= 0 or self.Lv <= 0:
            raise ValueError("domain extents must be positive")
        if self.alpha <= self.potential_obj().hessian_sup:
            raise ValueError(
                f"alpha={self.alpha} must exceed the Hessian bound "
                f"{self.potential_obj().hessian_sup} of the {self.potential} potential"
            )

    @property
    def N(self) -> int:
        return int(round(self.T / self.h))

    @property
    def radius(self) -> float:
        return self.h**-0.5 if self.truncation == "coupled" else self.R

    def potential_obj(self) -> Potential:
        return make_potential(self.potential, self.Lv)

    def with_(self, **kw) -> "SchemeConfig":
        return replace(self, **kw)

    def initial_density(self) -> DensityGrid:
        """Gaussian bump centered at ``(x0, v0)``."""
        sx, sv = self.sigma_x, self.sigma_v

        def f(x, v):
            return np.exp(-((x - self.x0) ** 2) / (2 * sx**2) - (v - self.v0) ** 2 / (2 * sv**2))

        return DensityGrid.from_function(f, self.Nx, self.Nv, self.Lx, self.Lv)


def mass(f: DensityGrid) -> float:
    return float(f.values.sum() * f.cell_volume)


def lp_norm_p(f: DensityGrid, p: float) -> float:
    """``integral |f|^p`` (the p-th power of the L^p norm)."""
    if p <= 1:
        raise ValueError("p must exceed 1")
    return float(np.sum(np.abs(f.values) ** p) * f.cell_volume)


def second_moment_v(f: DensityGrid) -> float:
    return float(np.sum(f.values * f.v[None, :] ** 2) * f.cell_volume)


def potential_energy(f: DensityGrid, psi: Potential) -> float:
    return float(np.sum(f.values * psi.eval(f.v)[None, :]) * f.cell_volume)


def l1_distance(f: DensityGrid, g: DensityGrid) -> float:
    if not f.same_geometry(g):
        raise ValueError("grid mismatch")
    return float(np.abs(f.values - g.values).sum() * f.cell_volume)


@dataclass(frozen=True)
class TestFunction:
    """Smooth phase-space test function with its two partial gradients.

    All callables take broadcasting arrays ``(x, v)``.
    """

    value: Callable
    grad_x: Callable
    grad_v: Callable
    name: str = ""

    __test__ = False  # keep pytest from collecting it

    def __call__(self, x, v):
        return self.value(x, v)


def gaussian_test_function(x0=0.0, v0=0.0, wx=1.0, wv=1.0) -> TestFunction:
    """``exp(-(x-x0)^2/(2 wx^2) - (v-v0)^2/(2 wv^2))``."""

    def val(x, v):
        return np.exp(-((x - x0) ** 2) / (2 * wx**2) - (v - v0) ** 2 / (2 * wv**2))

    return TestFunction(
        val,
        lambda x, v: -(x - x0) / wx**2 * val(x, v),
        lambda x, v: -(v - v0) / wv**2 * val(x, v),
        f"gauss({x0:g},{v0:g},{wx:g},{wv:g})",
    )


def constant_test_function(c=1.0) -> TestFunction:
    def zero(x, v):
        return np.zeros(np.broadcast(np.asarray(x), np.asarray(v)).shape)

    return TestFunction(lambda x, v: c + zero(x, v), zero, zero, f"const({c:g})")


def x_cutoff_test_function(width=2.0) -> TestFunction:
    """``x exp(-(x^2 + v^2)/(2 width^2))``: linear in x near the origin."""

    def g(x, v):
        return np.exp(-(x**2 + v**2) / (2 * width**2))

    return TestFunction(
        lambda x, v: x * g(x, v),
        lambda x, v: (1 - x**2 / width**2) * g(x, v),
        lambda x, v: -x * v / width**2 * g(x, v),
        "x-cutoff",
    )


def test_battery(n=10, seed=0, x_scale=1.0, v_scale=1.0):
    """Fixed family of separable Gaussian test functions."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        out.append(
            gaussian_test_function(
                rng.uniform(-x_scale, x_scale),
                rng.uniform(-v_scale, v_scale),
                rng.uniform(0.5, 1.5) * x_scale,
                rng.uniform(0.5, 1.5) * v_scale,
            )
        )
    return out


test_battery.__test__ = False
