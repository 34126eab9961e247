"""Generating pairs ``(h, W)`` and their gauge transformations."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import kernels
from .errors import GaugeError, OutOfDomainError, RegularityError
from .expr import (
    Dual, as_expression, compile_tape, evaluate, new_tag, substitute,
    tangent, value_and_gradient,
)
from .geometry import RiemannianChart, box_grid

__all__ = ["Profile", "GaugedProfile", "GeneratingPair", "gauge_transform"]

REGULARITY_EPS = 1e-12


class Profile:
    """A function of the single variable ``w``."""

    def __init__(self, expr):
        self.expr = as_expression(expr, ["w"])

    def __call__(self, w):
        return evaluate(self.expr, {"w": w})

    def derivative(self, w):
        tag = new_tag()
        return tangent(self(Dual(tag, w, 1.0)), tag)

    def __str__(self):
        return str(self.expr)

    def __repr__(self):
        return f"Profile({str(self.expr)!r})"


class GaugedProfile:
    """``h(rho^-1(w)) * rho'(rho^-1(w))``, the gauge-transformed ``h``."""

    def __init__(self, base, rho: Profile, rho_inv: Profile):
        self.base = base
        self.rho = rho
        self.rho_inv = rho_inv

    def __call__(self, w):
        u = self.rho_inv(w)
        return self.base(u) * self.rho.derivative(u)

    def derivative(self, w):
        tag = new_tag()
        return tangent(self(Dual(tag, w, 1.0)), tag)

    def __str__(self):
        return f"gauge[{self.rho}]({self.base})"


def _as_profile(h):
    if isinstance(h, (Profile, GaugedProfile)):
        return h
    return Profile(h)


class GeneratingPair:
    """The functions ``h(w)`` and ``W(x1..xn, v)`` that fix a force field.

    ``v_range`` is where regularity ``W_v != 0`` is validated and where
    random states are drawn; evaluation itself only requires ``v > 0``.
    """

    def __init__(self, h, W, chart: RiemannianChart, v_range=(0.5, 2.0),
                 validate=True, points_per_axis=5):
        self.chart = chart
        self.n = chart.n
        self.h = _as_profile(h)
        self.names = list(chart.names) + ["v"]
        self.W = as_expression(W, self.names)
        lo, hi = float(v_range[0]), float(v_range[1])
        if not 0.0 < lo < hi:
            raise ValueError("v_range must be an interval inside (0, inf)")
        self.v_range = (lo, hi)
        self._tape = compile_tape([self.W], self.names)
        if validate:
            self.check_regularity(points_per_axis)

    def __repr__(self):
        return f"GeneratingPair(h={self.h}, W={self.W})"

    # -- grids ----------------------------------------------------------------

    def grid(self, points_per_axis=5) -> np.ndarray:
        """Tensor grid over chart box x v_range, shape ``(k**(n+1), n+1)``."""
        lo = np.append(self.chart.lo, self.v_range[0])
        hi = np.append(self.chart.hi, self.v_range[1])
        return box_grid(lo, hi, points_per_axis)

    def check_regularity(self, points_per_axis=5):
        Q = self.grid(points_per_axis)
        _, _, wv = self.jet(Q[:, :-1], Q[:, -1], check=False)
        bad = np.abs(wv) < REGULARITY_EPS
        if np.any(bad):
            q = Q[np.flatnonzero(bad)[0]]
            raise RegularityError(f"W_v vanishes at {q.tolist()}")
        if np.any(wv > 0) and np.any(wv < 0):
            raise RegularityError("W_v changes sign on the validation grid")

    # -- evaluation -----------------------------------------------------------

    def _check_points(self, X, V):
        self.chart.check_domain(X)
        if np.any(np.asarray(V) <= 0):
            raise OutOfDomainError("v must be positive")

    def jet(self, X, V, check=True):
        """Batch ``W``, ``grad_x W`` (B, n) and ``W_v`` via the tape kernel."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        V = np.atleast_1d(np.asarray(V, dtype=float))
        self._check_points(X, V)
        Q = np.column_stack([X, V])
        val, grad = kernels.tape_jet(self._tape, Q)
        wv = grad[:, 0, -1]
        if check and np.any(np.abs(wv) < REGULARITY_EPS):
            q = Q[np.flatnonzero(np.abs(wv) < REGULARITY_EPS)[0]]
            raise RegularityError(f"W_v vanishes at {q.tolist()}")
        return val[:, 0], grad[:, 0, :-1], wv

    def w_partials(self, x, v):
        """``(W, grad W, W_v)`` at a single point of M x R+."""
        W, grad, wv = self.jet(np.asarray(x, dtype=float)[None], [v])
        return float(W[0]), grad[0], float(wv[0])

    def W_value(self, X, V):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        V = np.atleast_1d(np.asarray(V, dtype=float))
        return evaluate(self.W, dict(zip(self.names, list(X.T) + [V])))

    def W_generic(self, q: Sequence):
        return evaluate(self.W, dict(zip(self.names, q)))

    def partials_generic(self, q: Sequence):
        """``W``, list of ``d_i W`` and ``W_v`` at ``q = (x1..xn, v)``.

        Works for any number type in ``q``, including nested duals.
        """
        W, grad = value_and_gradient(self.W_generic, q)
        wv = grad[-1]
        if np.any(np.abs(_primal(wv)) < REGULARITY_EPS):
            raise RegularityError("W_v vanishes")
        return W, grad[:-1], wv

    def gauge_transform(self, rho, rho_inv, points_per_axis=5) -> "GeneratingPair":
        return gauge_transform(self, rho, rho_inv, points_per_axis)


def _primal(x):
    while isinstance(x, Dual):
        x = x.val
    return x


def gauge_transform(pair: GeneratingPair, rho, rho_inv, points_per_axis=5) -> GeneratingPair:
    """Apply ``W -> rho(W)`` and ``h -> h(rho^-1) * rho'(rho^-1)``.

    ``rho_inv`` must invert ``rho`` on the range of ``W``; both are checked
    on the validation grid.
    """
    rho = rho if isinstance(rho, Profile) else Profile(rho)
    rho_inv = rho_inv if isinstance(rho_inv, Profile) else Profile(rho_inv)
    Q = pair.grid(points_per_axis)
    W, _, _ = pair.jet(Q[:, :-1], Q[:, -1])
    samples = np.linspace(W.min(), W.max(), 257)
    samples = np.concatenate([samples, W])
    slope = np.asarray(rho.derivative(samples), dtype=float) * np.ones_like(samples)
    if np.any(slope == 0) or (np.any(slope > 0) and np.any(slope < 0)):
        raise GaugeError("rho is not strictly monotone on the range of W")
    images = np.asarray(rho(samples), dtype=float) * np.ones_like(samples)
    mismatch = np.abs(np.asarray(rho(rho_inv(images))) - images)
    if np.max(mismatch) > 1e-8:
        raise GaugeError(f"rho_inv does not invert rho (mismatch {np.max(mismatch):.3e})")
    back = np.abs(np.asarray(rho_inv(images)) - samples)
    if np.max(back) > 1e-8:
        raise GaugeError(f"rho_inv does not invert rho (mismatch {np.max(back):.3e})")
    W_new = substitute(rho.expr, {"w": pair.W})
    h_new = GaugedProfile(pair.h, rho, rho_inv)
    return GeneratingPair(h_new, W_new, pair.chart, pair.v_range,
                          points_per_axis=points_per_axis)
