"""Kinetic transport phase: one minimizing step of

    A(f) = W_h(fbar, f)^2 / (2h) + int Psi(v) f.

In the coordinates ``(sqrt(3)(2x/h + v), v)`` for the source and
``(sqrt(3)(2x'/h - v'), v')`` for the target this is a plain quadratic
Wasserstein proximal step for an energy that only sees ``v``, so the
minimizer is the push-forward of ``fbar`` under

    v' = S(v),  S + h grad Psi(S) = v,      x' = x + h (v + v') / 2.

``jko_map_step`` applies that map on the grid. ``jko_variational_step``
minimizes ``A`` directly over atomic candidates with optimal transport and
never uses the map, so the two paths check each other.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import make_interp_spline
from scipy.optimize import minimize_scalar

from .accel_cost import SQRT3, DiscreteMeasure, wh
from .core import DensityGrid, Potential, mass
from .ot_solver import ConvergenceWarning, solve_lp, sq_distances, w2_entropic

LEAKAGE_LIMIT = 1e-4


class ContractionError(ValueError):
    """``h * |D^2 Psi|`` is not below 1."""


@dataclass
class MapCoupling:
    """Deterministic coupling: atom ``k`` of mass ``m[k]`` moves from
    ``(x[k], v[k])`` to ``(xp[k], vp[k])``."""

    x: np.ndarray
    v: np.ndarray
    xp: np.ndarray
    vp: np.ndarray
    m: np.ndarray

    def cost(self, h) -> float:
        from .accel_cost import cost_ch

        return float(np.sum(self.m * cost_ch(h, (self.x, self.v), (self.xp, self.vp))))


@dataclass
class JkoResult:
    f: DensityGrid
    objective: float
    wh2: float
    coupling: object
    path: str
    leakage: float = 0.0
    info: dict = field(default_factory=dict)


def check_contraction(psi: Potential, h):
    if h * psi.hessian_sup >= 1.0:
        raise ContractionError(
            f"h * |D^2 Psi| = {h * psi.hessian_sup:.4g} >= 1: implicit velocity map not contractive"
        )


def implicit_velocity_map(psi: Potential, h, v, tol=1e-12, max_iter=60):
    """Solve ``S + h grad Psi(S) = v`` elementwise."""
    check_contraction(psi, h)
    v = np.asarray(v, dtype=float)
    scalar = v.ndim == 0
    v = np.atleast_1d(v)
    S = v.copy()

    def resid(S):
        return S + h * psi.grad(S) - v

    r = resid(S)
    scale = np.maximum(1.0, np.abs(v))
    for _ in range(max_iter):
        if np.all(np.abs(r) <= tol * scale):
            break
        dS = r / (1.0 + h * psi.second_derivative(S))
        step = np.ones_like(S)
        trial = S - dS
        rt = resid(trial)
        # halve the step where Newton does not reduce the residual
        for _ in range(30):
            bad = np.abs(rt) > np.abs(r)
            if not np.any(bad):
                break
            step = np.where(bad, 0.5 * step, step)
            trial = S - step * dS
            rt = resid(trial)
        S, r = trial, rt
    bad = np.abs(r) > tol * scale
    if np.any(bad):
        S[bad] = _bisect(psi, h, v[bad], tol)
    return float(S[0]) if scalar else S


def _bisect(psi, h, v, tol):
    """Bisection on the increasing map ``S -> S + h grad Psi(S)``."""
    out = np.empty_like(v)
    for k, target in enumerate(v):
        def g(s):
            return s + h * float(psi.grad(np.array(s))) - target

        w = 1.0 + abs(target)
        lo, hi = target - w, target + w
        while g(lo) > 0:
            lo -= 2 * w
            w *= 2
        while g(hi) < 0:
            hi += 2 * w
            w *= 2
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if g(mid) > 0:
                hi = mid
            else:
                lo = mid
            if hi - lo <= tol * max(1.0, abs(target)):
                break
        out[k] = 0.5 * (lo + hi)
    return out


# ------------------------------------------------------------- remapping


def deposit(grid_like: DensityGrid, x, v, m):
    """Cloud-in-cell deposit of point masses onto the grid of ``grid_like``.

    ``x`` wraps periodically; ``v`` beyond the outermost cell centers goes
    to the boundary cell. Returns ``(values, leaked_mass)`` where the leaked
    mass is that carried by points with ``|v| > Lv``.
    """
    Nx, Nv = grid_like.Nx, grid_like.Nv
    dx, dv = grid_like.dx, grid_like.dv
    x = np.asarray(x, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    m = np.asarray(m, dtype=float).ravel()
    leaked = float(m[np.abs(v) > grid_like.Lv].sum())

    fx = (x + grid_like.Lx) / dx - 0.5
    i0 = np.floor(fx)
    wx = fx - i0
    i0 = i0.astype(np.int64) % Nx
    i1 = (i0 + 1) % Nx
    if Nx == 1:
        wx = np.zeros_like(wx)

    fv = np.clip((v + grid_like.Lv) / dv - 0.5, 0.0, Nv - 1.0)
    j0 = np.minimum(np.floor(fv).astype(np.int64), Nv - 2) if Nv > 1 else np.zeros(len(v), int)
    wv = fv - j0

    acc = np.zeros(Nx * Nv)
    for ii, ax in ((i0, 1 - wx), (i1, wx)):
        for jj, av in ((j0, 1 - wv), (j0 + 1, wv)):
            acc += np.bincount(ii * Nv + np.minimum(jj, Nv - 1), weights=m * ax * av, minlength=Nx * Nv)
    return acc.reshape(Nx, Nv) / grid_like.cell_volume, leaked


def _shift_x(values, d, Lx):
    """Translate each column ``j`` by ``d[j]`` in periodic x (spectrally)."""
    Nx = values.shape[0]
    if Nx == 1:
        return values.copy()
    k = 2 * np.pi * np.fft.rfftfreq(Nx, d=2 * Lx / Nx)
    spec = np.fft.rfft(values, axis=0) * np.exp(-1j * k[:, None] * d[None, :])
    return np.fft.irfft(spec, n=Nx, axis=0)


def _semi_lagrangian(fbar: DensityGrid, psi, h):
    """Pull back ``fbar`` through the inverse map at target cell centers."""
    vt = fbar.v
    vpre = vt + h * psi.grad(vt)
    jac = 1.0 + h * psi.second_derivative(vt)
    pad = 3
    dv = fbar.dv
    vext = np.concatenate([vt[0] - dv * np.arange(pad, 0, -1), vt, vt[-1] + dv * np.arange(1, pad + 1)])
    vals = np.pad(fbar.values, ((0, 0), (pad, pad)))
    spline = make_interp_spline(vext, vals, k=3, axis=1)
    inside = np.abs(vpre) <= vext[-1]
    col = np.zeros_like(fbar.values)
    col[:, inside] = spline(vpre[inside]) * jac[inside][None, :]
    shifted = _shift_x(col, 0.5 * h * (vpre + vt), fbar.Lx)
    return np.clip(shifted, 0.0, None)


def jko_map_step(fbar: DensityGrid, psi: Potential, h, remap="semi_lagrangian") -> JkoResult:
    """Minimizer of the kinetic step through the closed-form map."""
    check_contraction(psi, h)
    v = fbar.v
    S = implicit_velocity_map(psi, h, v)
    col_mass = fbar.values.sum(axis=0) * fbar.cell_volume  # mass per v column
    wh2 = float(np.sum(col_mass * (S - v) ** 2))
    objective = wh2 / (2 * h) + float(np.sum(col_mass * psi.eval(S)))

    X, V = np.meshgrid(fbar.x, v, indexing="ij")
    Sp = np.broadcast_to(S, X.shape)
    Xp = X + 0.5 * h * (V + Sp)
    m = fbar.masses()
    coupling = MapCoupling(X.ravel(), V.ravel(), Xp.ravel(), Sp.ravel().copy(), m.ravel())
    leaked = float(m[:, np.abs(S) > fbar.Lv].sum())

    if remap == "deposit":
        vals, _ = deposit(fbar, Xp, Sp, m)
    elif remap == "semi_lagrangian":
        vals = _semi_lagrangian(fbar, psi, h)
    else:
        raise ValueError(f"unknown remap {remap!r}")
    out = fbar.with_values(vals)
    target = mass(fbar)
    got = mass(out)
    if got > 0:
        out = out.with_values(out.values * (target / got))
    return JkoResult(out, objective, wh2, coupling, "map", leaked, {"remap": remap, "S": S})


# ------------------------------------------------------------- variational path


def _atoms(f: DensityGrid, rel_cut=1e-14):
    m = f.masses()
    X, V = np.meshgrid(f.x, f.v, indexing="ij")
    keep = m > rel_cut * m.max()
    w = m[keep]
    return X[keep], V[keep], w / w.sum(), float(w.sum())


def _prox_v(psi, h, vbar):
    """``argmin_v |v - vbar|^2 / (2h) + Psi(v)`` by bounded Brent search."""
    out = np.empty_like(vbar)
    for k, c in enumerate(vbar):
        width = 1.0 + abs(c)
        res = minimize_scalar(
            lambda u: (u - c) ** 2 / (2 * h) + float(psi.eval(np.array(u))),
            bounds=(c - width, c + width),
            method="bounded",
            options={"xatol": 1e-13, "maxiter": 500},
        )
        out[k] = res.x
    return out


def jko_variational_step(fbar: DensityGrid, psi: Potential, h, eps=1e-3, max_outer=60, tol=1e-12,
                         remap="deposit") -> JkoResult:
    """Minimize the kinetic objective over atomic candidates.

    Source atoms sit at the cell centers of ``fbar``; the candidate has one
    movable atom per source atom, in transformed coordinates. Each outer
    iteration computes a transport plan between the two atom clouds
    (entropic with regularization decreasing to ``eps`` times the cost
    scale first, exact afterwards) and moves
    every candidate atom to the minimizer of its share of the objective
    given that plan. The objective never increases.
    """
    x, v, a, total = _atoms(fbar)
    P = np.column_stack([SQRT3 * (2 * x / h + v), v])
    Q = P.copy()  # free transport candidate: zero transport cost

    def objective(Q, pi=None):
        C = sq_distances(P, Q)
        if pi is None:
            pi = solve_lp(a, a, C)
        return float(np.sum(pi * C)) / (2 * h) + float(np.sum(a * psi.eval(Q[:, 1]))), pi

    history = [objective(Q)[0]]
    scale = float(sq_distances(P, P).max()) or 1.0
    # entropic stages (relative regularization) warm up the plan; exact
    # transport takes over once the schedule reaches eps
    schedule = [e for e in (1e-1, 1e-2) if e > eps] + [eps]
    for it in range(max_outer):
        if it < len(schedule):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ConvergenceWarning)
                _, plan = w2_entropic((P, a), (Q, a), schedule[it] * scale, max_iter=500, tol=1e-8)
            pi = plan.pi
        else:
            pi = solve_lp(a, a, sq_distances(P, Q))
        bary = (pi.T @ P) / a[:, None]
        Qn = np.column_stack([bary[:, 0], _prox_v(psi, h, bary[:, 1])])
        val, _ = objective(Qn)
        if val <= history[-1] + 1e-15:
            Q = Qn
        history.append(min(val, history[-1]))
        if it >= len(schedule) and abs(history[-2] - history[-1]) <= tol * (1 + abs(history[-1])):
            break

    final, pi = objective(Q)
    xp = 0.5 * h * (Q[:, 0] / SQRT3 + Q[:, 1])
    vp = Q[:, 1]
    m = a * total
    if remap == "deposit":
        vals, leaked = deposit(fbar, xp, vp, m)
    else:
        raise ValueError("the variational path only supports deposit remapping")
    out = fbar.with_values(vals)
    wh2 = float(np.sum(pi * sq_distances(P, Q)))
    coupling = {"source": (x, v), "target": (xp, vp), "weights": a, "plan": pi}
    return JkoResult(out, final, wh2, coupling, "variational", leaked,
                     {"history": history, "iterations": len(history) - 1})


# ------------------------------------------------------------- objective checks


def grid_objective(fbar: DensityGrid, g: DensityGrid, psi: Potential, h) -> float:
    """``A(g)`` for a grid candidate, with ``W_h`` from exact transport
    between the cell-center atoms of ``fbar`` and ``g``."""
    xs, vs, a, _ = _atoms(fbar)
    xt, vt, b, _ = _atoms(g)
    w, _ = wh(h, DiscreteMeasure(xs, vs, a), DiscreteMeasure(xt, vt, b))
    energy = float(np.sum(b * psi.eval(vt)))
    return w * w / (2 * h) + energy


def el_residual(fbar: DensityGrid, result: JkoResult, psi: Potential, h, phi,
                remainder="corrected", measure="grid") -> float:
    """Euler-Lagrange defect of a map step, per-step normalization.

    Computes ``| int [(x'-x) phi_x + (v'-v) phi_v] dP
    - h int (v' phi_x - grad Psi(v') phi_v) f - rem |`` where the remainder is
    ``+(h^2/2) int grad Psi phi_x f`` (``"corrected"``), its negative
    (``"flipped"``) or zero (``"none"``). ``measure`` picks whether the
    integrals against ``f`` use the grid density or the exact atoms.
    """
    cp = result.coupling
    if not isinstance(cp, MapCoupling):
        raise TypeError("el_residual needs the deterministic coupling of a map step")
    lhs = np.sum(cp.m * ((cp.xp - cp.x) * phi.grad_x(cp.xp, cp.vp) + (cp.vp - cp.v) * phi.grad_v(cp.xp, cp.vp)))

    def integrate(func):
        if measure == "atoms":
            return float(np.sum(cp.m * func(cp.xp, cp.vp)))
        f = result.f
        X, V = np.meshgrid(f.x, f.v, indexing="ij")
        return float(np.sum(f.values * func(X, V)) * f.cell_volume)

    rhs = h * integrate(lambda x, v: v * phi.grad_x(x, v) - psi.grad(v) * phi.grad_v(x, v))
    rem = 0.5 * h * h * integrate(lambda x, v: psi.grad(v) * phi.grad_x(x, v))
    sign = {"corrected": 1.0, "flipped": -1.0, "none": 0.0}[remainder]
    return float(abs(lhs - rhs - sign * rem))
