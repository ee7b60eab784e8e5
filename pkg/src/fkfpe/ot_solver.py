"""Discrete quadratic optimal transport.

``w2_exact`` solves the transport linear program exactly (network simplex
from POT, with a HiGHS fallback); ``w2_entropic`` is a log-domain Sinkhorn
iteration with epsilon annealing. Both return the Wasserstein distance and
a :class:`TransportPlan`.
"""

from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

MAX_SUPPORT = 4096

_ot = None


def _pot():
    """Import POT lazily with the heavy array backends switched off."""
    global _ot
    if _ot is None:
        for b in ("PYTORCH", "JAX", "CUPY", "TENSORFLOW"):
            os.environ.setdefault(f"POT_BACKEND_DISABLE_{b}", "1")
        try:
            import ot  # noqa: F401

            _ot = ot
        except ImportError:  # pragma: no cover - exercised only without POT
            _ot = False
    return _ot or None


class ConvergenceWarning(UserWarning):
    pass


@dataclass
class PointMeasure:
    """Weighted points in R^k; ``points`` has shape ``(n, k)``."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        self.points = pts.reshape(len(pts), -1)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (len(self.points),):
            raise ValueError("one weight per point required")
        if len(self.weights) == 0:
            raise ValueError("empty measure")
        if np.any(self.weights < 0):
            raise ValueError("negative weights")


@dataclass
class TransportPlan:
    """Coupling matrix ``pi[i, j]`` between source point i and target j."""

    pi: np.ndarray
    a: np.ndarray
    b: np.ndarray
    cost: float = math.nan
    converged: bool = True
    marginal_error: float = 0.0

    @property
    def row_error(self) -> float:
        return float(np.max(np.abs(self.pi.sum(axis=1) - self.a)))

    @property
    def col_error(self) -> float:
        return float(np.max(np.abs(self.pi.sum(axis=0) - self.b)))

    def is_feasible(self, tol=1e-8) -> bool:
        return bool(np.all(self.pi >= 0) and self.row_error <= tol and self.col_error <= tol)

    def pairs(self, tol=0.0):
        """``(i, j, weight)`` for the entries above ``tol``."""
        i, j = np.nonzero(self.pi > tol)
        return list(zip(i.tolist(), j.tolist(), self.pi[i, j].tolist()))


def _as_measure(m) -> PointMeasure:
    if isinstance(m, PointMeasure):
        return m
    if hasattr(m, "points") and hasattr(m, "weights"):
        return PointMeasure(m.points, m.weights)
    pts, w = m
    return PointMeasure(pts, w)


def sq_distances(X, Y) -> np.ndarray:
    X = np.asarray(X, dtype=float).reshape(len(X), -1)
    Y = np.asarray(Y, dtype=float).reshape(len(Y), -1)
    d = X[:, None, :] - Y[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


def solve_lp(a, b, C) -> np.ndarray:
    """Exact optimal plan for cost matrix ``C`` and marginals ``a``, ``b``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    # the simplex needs equal totals to machine precision
    b = b * (a.sum() / b.sum())
    ot = _pot()
    if ot is not None:
        pi = ot.emd(a, b, np.ascontiguousarray(C, dtype=float), numItermax=10_000_000)
        return np.asarray(pi)
    return _solve_lp_highs(a, b, C)


def _solve_lp_highs(a, b, C):
    from scipy.optimize import linprog
    from scipy.sparse import eye, kron, vstack

    n, m = C.shape
    rows = kron(eye(n), np.ones((1, m)))
    cols = kron(np.ones((1, n)), eye(m))

    res = linprog(
        C.ravel(), A_eq=vstack([rows, cols]).tocsr(), b_eq=np.concatenate([a, b]),
        bounds=(0, None), method="highs",
    )
    if not res.success:
        raise RuntimeError(f"linear program failed: {res.message}")
    return res.x.reshape(n, m)


def w2_exact(mu, nu):
    """Exact W2 distance between two finitely supported measures."""
    mu, nu = _as_measure(mu), _as_measure(nu)
    if len(mu.weights) + len(nu.weights) > MAX_SUPPORT:
        raise ValueError(f"combined support exceeds {MAX_SUPPORT} points")
    C = sq_distances(mu.points, nu.points)
    pi = solve_lp(mu.weights, nu.weights, C)
    cost = float(np.sum(pi * C))
    plan = TransportPlan(pi, mu.weights, nu.weights, cost)
    return math.sqrt(max(cost, 0.0)), plan


def _round_to_marginals(pi, a, b):
    """Project a nearly feasible plan onto exact marginals, keeping pi >= 0."""
    r = pi.sum(axis=1)
    x = np.minimum(1.0, np.divide(a, r, out=np.ones_like(a), where=r > 0))
    pi = pi * x[:, None]
    c = pi.sum(axis=0)
    y = np.minimum(1.0, np.divide(b, c, out=np.ones_like(b), where=c > 0))
    pi = pi * y[None, :]
    ea = np.maximum(a - pi.sum(axis=1), 0.0)
    eb = np.maximum(b - pi.sum(axis=0), 0.0)
    if ea.sum() > 0:
        pi = pi + np.outer(ea, eb) / ea.sum()
    return pi


def sinkhorn_log(a, b, C, eps, max_iter=5000, tol=1e-9, f=None, g=None):
    """Log-domain Sinkhorn; returns ``(pi, f, g, marginal_error, iterations)``."""
    la = np.log(np.where(a > 0, a, 1e-300))
    lb = np.log(np.where(b > 0, b, 1e-300))
    f = np.zeros(len(a)) if f is None else f
    g = np.zeros(len(b)) if g is None else g
    err = math.inf
    it = 0
    for it in range(1, max_iter + 1):
        f = -eps * logsumexp((g[None, :] - C) / eps + lb[None, :], axis=1)
        g = -eps * logsumexp((f[:, None] - C) / eps + la[:, None], axis=0)
        if it % 10 == 0 or it == max_iter:
            logpi = (f[:, None] + g[None, :] - C) / eps + la[:, None] + lb[None, :]
            err = float(np.abs(np.exp(logpi).sum(axis=1) - a).sum())
            if err < tol:
                break
    logpi = (f[:, None] + g[None, :] - C) / eps + la[:, None] + lb[None, :]
    return np.exp(logpi), f, g, err, it


def w2_entropic(mu, nu, eps, max_iter=5000, tol=1e-9, anneal=True, cost=None):
    """Entropic W2: Sinkhorn plan, reported value ``sqrt(<pi, C>)``.

    With ``anneal`` the regularization is decreased geometrically from the
    cost scale to ``eps``, warm-starting the potentials. The final plan is
    rounded onto the exact marginals.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    mu, nu = _as_measure(mu), _as_measure(nu)
    a, b = mu.weights, nu.weights / nu.weights.sum() * mu.weights.sum()
    C = sq_distances(mu.points, nu.points) if cost is None else np.asarray(cost, dtype=float)
    schedule = [eps]
    if anneal:
        e = max(float(C.max()), eps)
        schedule = []
        while e > eps:
            schedule.append(e)
            e *= 0.25
        schedule.append(eps)
    f = g = None
    err, it = math.inf, 0
    for e in schedule:
        pi, f, g, err, it = sinkhorn_log(a, b, C, e, max_iter, tol, f, g)
    converged = err < tol or it < max_iter
    if not converged:
        warnings.warn(
            f"Sinkhorn did not converge in {max_iter} iterations (marginal error {err:.2e})",
            ConvergenceWarning,
            stacklevel=2,
        )
    pi = _round_to_marginals(pi, a, b)
    value = float(np.sum(pi * C))
    plan = TransportPlan(pi, a, b, value, converged=converged, marginal_error=err)
    return math.sqrt(max(value, 0.0)), plan
