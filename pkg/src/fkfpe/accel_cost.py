"""Minimal-acceleration cost and the Kantorovich functional built on it.

For a time step ``h`` the cost of moving from ``(x, v)`` to ``(x', v')`` is

    C_h = |v' - v|^2 + 12 |(x' - x)/h - (v' + v)/2|^2,

which is ``h`` times the squared-acceleration action of the cubic Hermite
path joining the two states. Under ``G_h o F_h`` on the source and ``G_h``
on the target this cost becomes the squared Euclidean distance, so
``W_h(mu, nu) = W_2((G_h o F_h)#mu, G_h#nu)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ot_solver import TransportPlan, w2_exact

SQRT3 = math.sqrt(3.0)


def _check_h(h):
    if not h > 0:
        raise ValueError("time step h must be positive")


@dataclass(frozen=True)
class PhasePoint:
    x: float
    v: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.v)):
            raise ValueError("phase point coordinates must be finite")

    def as_array(self):
        return np.array([self.x, self.v])


@dataclass
class DiscreteMeasure:
    """Weighted atoms at phase points ``(x[i], v[i])`` (one dimension)."""

    x: np.ndarray
    v: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.x = np.atleast_1d(np.asarray(self.x, dtype=float))
        self.v = np.atleast_1d(np.asarray(self.v, dtype=float))
        self.weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if not (self.x.shape == self.v.shape == self.weights.shape):
            raise ValueError("x, v and weights must have equal lengths")
        if self.x.size == 0:
            raise ValueError("empty measure")
        if np.any(self.weights < 0):
            raise ValueError("negative weights")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {self.weights.sum()!r}, not 1")
        if not (np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.v))):
            raise ValueError("non-finite support point")

    @classmethod
    def from_points(cls, points, weights=None):
        pts = [p.as_array() if isinstance(p, PhasePoint) else np.asarray(p, float) for p in points]
        arr = np.array(pts, dtype=float).reshape(-1, 2)
        w = np.full(len(arr), 1.0 / len(arr)) if weights is None else np.asarray(weights, float)
        return cls(arr[:, 0], arr[:, 1], w)

    @classmethod
    def dirac(cls, x, v):
        return cls([x], [v], [1.0])

    @property
    def points(self) -> np.ndarray:
        return np.column_stack([self.x, self.v])

    def __len__(self):
        return self.x.size

    def merged(self, decimals=12) -> "DiscreteMeasure":
        """Merge atoms whose coordinates agree to ``decimals`` places."""
        key = np.round(self.points, decimals)
        uniq, inv = np.unique(key, axis=0, return_inverse=True)
        w = np.zeros(len(uniq))
        np.add.at(w, inv.ravel(), self.weights)
        first = np.zeros(len(uniq), dtype=int)
        first[inv.ravel()[::-1]] = np.arange(len(inv))[::-1]
        return DiscreteMeasure(self.x[first], self.v[first], w)

    def pushforward(self, fn) -> "DiscreteMeasure":
        """Relocate atoms by ``fn(x, v) -> (x', v')``; weights unchanged."""
        x2, v2 = fn(self.x, self.v)
        return DiscreteMeasure(x2, v2, self.weights.copy())

    def same_as(self, other: "DiscreteMeasure", tol=1e-10) -> bool:
        """Equality as measures (atoms merged, order ignored)."""
        a, b = self.merged(), other.merged()
        if len(a) != len(b):
            return False
        ia = np.lexsort((a.v, a.x))
        ib = np.lexsort((b.v, b.x))
        return bool(
            np.allclose(a.points[ia], b.points[ib], atol=tol, rtol=0)
            and np.allclose(a.weights[ia], b.weights[ib], atol=tol, rtol=0)
        )


# ------------------------------------------------------------ cost and maps


def cost_ch(h, a, b):
    """``C_h(a; b)``; ``a`` and ``b`` are PhasePoints or ``(x, v)`` arrays
    (broadcasting over leading axes)."""
    _check_h(h)
    xa, va = _xv(a)
    xb, vb = _xv(b)
    return (vb - va) ** 2 + 12.0 * ((xb - xa) / h - 0.5 * (vb + va)) ** 2


def cost_matrix(h, mu: DiscreteMeasure, nu: DiscreteMeasure) -> np.ndarray:
    _check_h(h)
    return cost_ch(h, (mu.x[:, None], mu.v[:, None]), (nu.x[None, :], nu.v[None, :]))


def _xv(p):
    if isinstance(p, PhasePoint):
        return p.x, p.v
    x, v = p
    return np.asarray(x, dtype=float), np.asarray(v, dtype=float)


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(3)


def cubic_oracle(h, a, b) -> float:
    """``h * int_0^h |xi''(t)|^2 dt`` for the cubic Hermite curve with
    ``xi(0) = x, xi'(0) = v, xi(h) = x', xi'(h) = v'``."""
    _check_h(h)
    x0, v0 = _xv(a)
    x1, v1 = _xv(b)
    # xi(t) = x0 + v0 t + c2 t^2 + c3 t^3
    d = x1 - x0 - v0 * h
    e = v1 - v0
    c2 = (3 * d - e * h) / h**2
    c3 = (e * h - 2 * d) / h**3
    t = 0.5 * h * (_GL_NODES + 1.0)
    acc = 2 * c2 + 6 * c3 * t
    return float(h * 0.5 * h * np.sum(_GL_WEIGHTS * acc**2))


def map_Fh(h, p):
    """Free transport ``(x, v) -> (x + h v, v)``."""
    _check_h(h)
    x, v = _xv(p)
    out = (x + h * v, v)
    return PhasePoint(float(out[0]), float(out[1])) if isinstance(p, PhasePoint) else out


def map_Gh(h, p):
    """``(x, v) -> (sqrt(3) (2x/h - v), v)``."""
    _check_h(h)
    x, v = _xv(p)
    out = (SQRT3 * (2.0 * x / h - v), v)
    return PhasePoint(float(out[0]), float(out[1])) if isinstance(p, PhasePoint) else out


def map_Gh_inv(h, p):
    """``(y, v) -> ((h/2) (y/sqrt(3) + v), v)``."""
    _check_h(h)
    y, v = _xv(p)
    out = (0.5 * h * (y / SQRT3 + v), v)
    return PhasePoint(float(out[0]), float(out[1])) if isinstance(p, PhasePoint) else out


def map_GFh(h, p):
    """``G_h o F_h``, i.e. ``(x, v) -> (sqrt(3) (2x/h + v), v)``."""
    _check_h(h)
    x, v = _xv(p)
    out = (SQRT3 * (2.0 * x / h + v), v)
    return PhasePoint(float(out[0]), float(out[1])) if isinstance(p, PhasePoint) else out


# ------------------------------------------------------------ W_h


def wh(h, mu: DiscreteMeasure, nu: DiscreteMeasure):
    """``W_h(mu, nu)`` through the transformed W2 problem.

    The returned plan indexes the atoms of ``mu`` and ``nu`` directly, so
    it is also a coupling in the original coordinates; its ``cost`` field
    holds the C_h cost of that coupling.
    """
    _check_h(h)
    if len(mu) == 0 or len(nu) == 0:
        raise ValueError("empty measure")
    src = np.column_stack(map_GFh(h, (mu.x, mu.v)))
    tgt = np.column_stack(map_Gh(h, (nu.x, nu.v)))
    _, plan = w2_exact((src, mu.weights), (tgt, nu.weights))
    plan.cost = float(np.sum(plan.pi * cost_matrix(h, mu, nu)))
    return math.sqrt(max(plan.cost, 0.0)), plan


def wh_direct_lp(h, mu: DiscreteMeasure, nu: DiscreteMeasure):
    """``W_h`` by solving the Kantorovich program on the raw C_h matrix
    with the HiGHS simplex (no change of variables)."""
    from scipy.optimize import linprog
    from scipy.sparse import eye, kron, vstack

    C = cost_matrix(h, mu, nu)
    n, m = C.shape
    A = vstack([kron(eye(n), np.ones((1, m))), kron(np.ones((1, n)), eye(m))]).tocsr()
    res = linprog(
        C.ravel(), A_eq=A, b_eq=np.concatenate([mu.weights, nu.weights]),
        bounds=(0, None), method="highs-ds",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if not res.success:
        raise RuntimeError(f"linear program failed: {res.message}")
    pi = res.x.reshape(n, m)
    cost = float(np.sum(pi * C))
    return math.sqrt(max(cost, 0.0)), TransportPlan(pi, mu.weights, nu.weights, cost)


def free_transport(h, mu: DiscreteMeasure) -> DiscreteMeasure:
    """``F_h # mu``."""
    return mu.pushforward(lambda x, v: map_Fh(h, (x, v)))


def plan_rows(h, mu, nu, plan: TransportPlan, tol=0.0):
    """``(i, j, weight, cost)`` rows for dumping a coupling to CSV."""
    rows = []
    for i, j, w in plan.pairs(tol):
        c = float(cost_ch(h, (mu.x[i], mu.v[i]), (nu.x[j], nu.v[j])))
        rows.append((i, j, w, c))
    return rows
