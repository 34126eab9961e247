"""Integration of the Pfaff system ``dV/dx^i = b_i(x, V)`` and recovery of ``W``.

``V(x, w)`` solves the Cauchy problem ``V(p0, w) = w`` by integrating along
a path from ``p0`` to ``x``; for a compatible ``b`` the result does not
depend on the path.  Inverting ``v = V(x, w)`` in ``w`` gives a generating
function ``W(x, v)`` whose section reproduces ``b``.
"""

from __future__ import annotations

import numpy as np
from scipy import integrate

from .errors import (
    IncompatibleSectionError, InversionError, NotClosedError, OutOfDomainError,
    PfaffEscapeError,
)
from .ode import dopri5
from .section import (
    CovectorField, ProjectiveSectionField, closedness_sweep, omega_closedness_sweep,
)

__all__ = [
    "PfaffSolution", "solve_cauchy", "path_independence_check", "invert_to_W",
    "reconstructed_section", "integrating_factor", "psi_residual", "line_integral_W",
    "COMPATIBILITY_THRESHOLD",
]

COMPATIBILITY_THRESHOLD = 1e-6
Z_STEP = 1e-5
W_FLOOR = 1e-12


class PfaffSolution:
    """Numerical ``V(x, w)`` with ``V(p0, w) = w``, realized by re-integration."""

    def __init__(self, b: ProjectiveSectionField, p0, path_policy="segment",
                 rtol=1e-10, atol=1e-10, z_step=Z_STEP):
        if path_policy not in ("segment", "staircase"):
            raise ValueError(f"unknown path policy {path_policy!r}")
        self.b = b
        self.n = b.n
        self.p0 = np.asarray(p0, dtype=float)
        b.chart.check_domain(self.p0)
        self.path_policy = path_policy
        self.rtol = rtol
        self.atol = atol
        self.z_step = z_step

    def _leg(self, start, delta, axis, V0, escaped):
        """Integrate along ``start + s * delta`` for ``s`` in [0, 1].

        Rows whose ``V`` leaves ``R+`` are frozen and marked in ``escaped``.
        """
        b = self.b

        def rhs(s, V):
            out = np.zeros_like(V)
            bad = ~(V > 0)
            if np.any(bad):
                np.logical_or(escaped, bad, out=escaped)
            ok = ~escaped
            if np.any(ok):
                pts = start[ok] + s * delta[ok]
                comps = b.components(list(pts.T) + [V[ok]])
                if axis is None:
                    out[ok] = sum(np.asarray(comps[i]) * delta[ok, i] for i in range(self.n))
                else:
                    out[ok] = np.asarray(comps[axis]) * delta[ok, axis]
            return out

        def guard(s, V):
            np.logical_or(escaped, ~(V > 0), out=escaped)

        V = dopri5(rhs, [0.0, 1.0], V0, rtol=self.rtol, atol=self.atol, on_step=guard)[-1]
        return np.where(escaped, np.nan, V)

    def V(self, X, w, path_policy=None, escape="raise") -> np.ndarray:
        """``V(x, w)`` for a batch of points ``X (B, n)`` and values ``w (B,)``.

        With ``escape="nan"`` rows whose solution leaves ``R+`` come back as
        NaN instead of raising :class:`PfaffEscapeError`.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        w = np.broadcast_to(np.asarray(w, dtype=float), (len(X),)).copy()
        self.b.chart.check_domain(X)
        if np.any(w <= 0):
            raise OutOfDomainError("Cauchy data w must be positive")
        policy = path_policy or self.path_policy
        start = np.broadcast_to(self.p0, X.shape).copy()
        delta = X - start
        escaped = np.zeros(len(X), dtype=bool)
        if policy == "segment":
            V = self._leg(start, delta, None, w, escaped)
        else:
            V = w
            for axis in range(self.n):
                step = np.zeros_like(delta)
                step[:, axis] = delta[:, axis]
                V = self._leg(start, step, axis, np.where(escaped, 1.0, V), escaped)
                start = start + step
        if escape == "raise" and np.any(escaped):
            k = int(np.flatnonzero(escaped)[0])
            raise PfaffEscapeError(f"V left R+ on the path to x={X[k].tolist()}, w={w[k]}",
                                   X[k].tolist() + [float(w[k])])
        return V

    def V_and_Z(self, X, w, path_policy=None, escape="raise"):
        """``V`` and ``Z = dV/dw`` (central difference in ``w`` in one shared batch)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        w = np.broadcast_to(np.asarray(w, dtype=float), (len(X),))
        d = np.minimum(self.z_step, 0.5 * w)
        B = len(X)
        out = self.V(np.concatenate([X, X, X]), np.concatenate([w, w + d, w - d]),
                     path_policy, escape)
        return out[:B], (out[B:2 * B] - out[2 * B:]) / (2 * d)

    def Z(self, X, w, path_policy=None):
        return self.V_and_Z(X, w, path_policy)[1]


def solve_cauchy(b: ProjectiveSectionField, p0=None, path_policy="segment",
                 check_compatibility=True, rtol=1e-10, atol=1e-10,
                 points_per_axis=5) -> PfaffSolution:
    """Set up the Cauchy problem at ``p0`` (box center by default).

    Refuses a section whose closedness residual exceeds the compatibility
    threshold on the validation grid, unless ``check_compatibility`` is off
    (used to demonstrate the path-dependence detector).
    """
    if p0 is None:
        p0 = 0.5 * (b.chart.lo + b.chart.hi)
    if check_compatibility:
        sweep = closedness_sweep(b, points_per_axis=points_per_axis)
        if sweep.max_abs > COMPATIBILITY_THRESHOLD:
            i, j = sweep.index
            raise IncompatibleSectionError(
                f"closedness residual {sweep.max_abs:.3e} for (i,j)=({i + 1},{j + 1}) "
                f"at {sweep.argmax}")
    return PfaffSolution(b, p0, path_policy, rtol, atol)


def path_independence_check(sol: PfaffSolution, x, w) -> float:
    """``|V_segment - V_staircase|`` at ``(x, w)``."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    seg = sol.V(X, w, "segment")
    stair = sol.V(X, w, "staircase")
    return float(np.max(np.abs(seg - stair)))


def invert_to_W(sol: PfaffSolution, X, v, tol=1e-10, max_iter=60) -> np.ndarray:
    """Solve ``V(x, w) = v`` for ``w`` by safeguarded Newton iteration.

    All rows iterate together so the last integration shares one step
    sequence across the batch, which keeps finite differences of the result
    smooth.  Rows that escape ``R+`` back off; Newton failures fall back to
    bracketing plus Brent's method.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    v = np.broadcast_to(np.asarray(v, dtype=float), (len(X),)).copy()
    w = v.copy()
    w_prev = np.full_like(w, np.nan)
    for _ in range(max_iter):
        Vw, Z = sol.V_and_Z(X, w, escape="nan")
        r = Vw - v
        lost = np.isfinite(Z) & (Z <= 0)
        if np.any(lost):
            k = int(np.flatnonzero(lost)[0])
            raise InversionError(f"dV/dw is not positive at x={X[k].tolist()}: "
                                 "local invertibility lost")
        escaped = ~np.isfinite(r) | ~np.isfinite(Z)
        # V is increasing in w, so an escape below zero means w is too small
        step = np.where(escaped, -w, r / np.where(escaped, 1.0, Z))
        w_new = w - step
        low = w_new <= 0
        w_new = np.where(low, 0.5 * w, w_new)
        if np.any(w_new < W_FLOOR):
            k = int(np.flatnonzero(w_new < W_FLOOR)[0])
            raise InversionError(f"V(x, w) = {v[k]} has no solution with w > 0 "
                                 f"at x={X[k].tolist()}")
        converged = ~escaped & (np.abs(r) < 1e-3 * tol)
        if np.all(converged) or np.array_equal(w_new, w_prev):
            break
        w_prev = w
        w = np.where(converged, w, w_new)
    Vw = sol.V(X, w, escape="nan")
    resid = np.abs(Vw - v)
    for k in np.flatnonzero(~(resid < tol)):
        w[k] = _bracketed_root(sol, X[k], v[k], tol)
    return w


def _bracketed_root(sol, x, v, tol):
    def f(w):
        val = float(sol.V(x[None], [w], escape="nan")[0]) - v
        return -np.inf if np.isnan(val) else val

    lo, hi = v, v
    for _ in range(12):
        lo, hi = lo / 2.0, hi * 2.0
        flo, fhi = f(lo), f(hi)
        if flo < 0 < fhi:
            root = integrate_brentq(f, lo, hi)
            if abs(f(root)) < tol:
                return root
            break
    raise InversionError(f"no bracket for V(x, w) = {v} at x={x.tolist()}")


def integrate_brentq(f, lo, hi):
    from scipy.optimize import brentq
    return brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)


def reconstructed_section(sol: PfaffSolution, Q, step=1e-4) -> np.ndarray:
    """``-d_i W / W_v`` of the reconstructed ``W`` by central differences.

    All stencil points are inverted in one batch.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    n = sol.n
    stencils = []
    for m in range(n + 1):
        for sgn in (1.0, -1.0):
            P = Q.copy()
            P[:, m] += sgn * step
            stencils.append(P)
    P = np.concatenate(stencils)
    W = invert_to_W(sol, P[:, :n], P[:, n]).reshape(2 * (n + 1), len(Q))
    grad = (W[0::2] - W[1::2]) / (2 * step)
    return (-grad[:n] / grad[n]).T


def integrating_factor(sol: PfaffSolution, C, X, v) -> np.ndarray:
    """``phi(x, v) = C(W) / Z(x, W)`` with ``W`` the reconstructed function."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    W = invert_to_W(sol, X, v)
    return np.asarray(C(W), dtype=float) * np.ones(len(X)) / sol.Z(X, W)


def psi_residual(sol: PfaffSolution, C, Y, w, step=1e-3) -> np.ndarray:
    """``d psi/d y^i + B_i psi`` with ``psi = C(w)/Z`` and ``B_i = (dZ/dy^i)/Z``.

    Returns an array ``(B, n)``; every stencil point shares one integration.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    w = np.broadcast_to(np.asarray(w, dtype=float), (len(Y),))
    n = sol.n
    pts = [Y]
    for i in range(n):
        for sgn in (1.0, -1.0):
            P = Y.copy()
            P[:, i] += sgn * step
            pts.append(P)
    P = np.concatenate(pts)
    Z = sol.Z(P, np.tile(w, 2 * n + 1)).reshape(2 * n + 1, len(Y))
    c = np.asarray(C(w), dtype=float) * np.ones(len(Y))
    psi = c / Z
    out = np.empty((len(Y), n))
    for i in range(n):
        dpsi = (psi[1 + 2 * i] - psi[2 + 2 * i]) / (2 * step)
        dZ = (Z[1 + 2 * i] - Z[2 + 2 * i]) / (2 * step)
        out[:, i] = dpsi + dZ / Z[0] * psi[0]
    return out


def line_integral_W(omega: CovectorField, path, check_closed=True, tube=1e-2,
                    samples_per_segment=9) -> float:
    """Integral of ``omega`` along a polyline in ``M x R+`` by adaptive quadrature.

    Equals ``W(q) - W(q0)`` when ``omega = dW``.  A non-closed ``omega`` is
    refused because the value would depend on the path.
    """
    path = np.atleast_2d(np.asarray(path, dtype=float))
    if path.shape[1] != omega.n + 1:
        raise ValueError("path vertices must have n+1 coordinates")
    s = np.linspace(0.0, 1.0, samples_per_segment)
    pts = np.concatenate([a + s[:, None] * (b - a) for a, b in zip(path[:-1], path[1:])])
    omega.check(list(pts.T))
    if check_closed:
        tubed = [pts]
        lo = np.append(omega.chart.lo, 1e-12)
        hi = np.append(omega.chart.hi, np.inf)
        for m in range(omega.n + 1):
            for sgn in (1.0, -1.0):
                P = pts.copy()
                P[:, m] += sgn * tube
                tubed.append(np.clip(P, lo, hi))
        sweep = omega_closedness_sweep(omega, np.concatenate(tubed))
        if sweep.max_abs > COMPATIBILITY_THRESHOLD:
            raise NotClosedError(f"omega is not closed near the path "
                                 f"(residual {sweep.max_abs:.3e} at {sweep.argmax})")
    total = 0.0
    for a, b in zip(path[:-1], path[1:]):
        d = b - a

        def integrand(t, a=a, d=d):
            comps = omega.components(list(a + t * d))
            return float(sum(c * dk for c, dk in zip(comps, d)))

        value, _ = integrate.quad(integrand, 0.0, 1.0, epsabs=1e-14, epsrel=1e-13, limit=200)
        total += value
    return total
