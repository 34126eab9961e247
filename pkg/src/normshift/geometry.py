"""Riemannian metrics on a single coordinate box."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import kernels
from .errors import OutOfDomainError, SingularMetricError
from .expr import Expression, as_expression, compile_tape, evaluate, parse

__all__ = ["RiemannianChart", "ChartTransition", "euclidean", "conformal", "box_grid"]


def coordinate_names(n: int) -> list[str]:
    return [f"x{i + 1}" for i in range(n)]


def box_grid(lo, hi, points_per_axis: int) -> np.ndarray:
    """Tensor grid over a box, shape ``(points_per_axis**d, d)``."""
    axes = [np.linspace(a, b, points_per_axis) for a, b in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


class RiemannianChart:
    """Metric ``g_ij(x)`` given by expressions on the box ``[lo, hi]``.

    Every evaluator raises :class:`OutOfDomainError` for points outside the
    box; trajectories that leave the chart must fail loudly.
    """

    def __init__(self, metric, lo, hi, christoffel=None, name="custom", validate=True):
        self.n = n = len(metric)
        if n < 2:
            raise ValueError("dimension must be at least 2")
        self.names = coordinate_names(n)
        self.metric = [[as_expression(metric[i][j], self.names) for j in range(n)]
                       for i in range(n)]
        if any(len(row) != n for row in metric):
            raise ValueError("metric must be an n x n array")
        self.lo = np.array(np.broadcast_to(np.asarray(lo, dtype=float), (n,)))
        self.hi = np.array(np.broadcast_to(np.asarray(hi, dtype=float), (n,)))
        if np.any(self.lo >= self.hi):
            raise ValueError("empty coordinate box")
        self.name = name
        self._metric_tape = compile_tape(
            [self.metric[i][j] for i in range(n) for j in range(n)], self.names)
        self.christoffel_exprs = None
        if christoffel is not None:
            self.christoffel_exprs = [[[as_expression(christoffel[k][i][j], self.names)
                                        for j in range(n)] for i in range(n)] for k in range(n)]
            self._gamma_tape = compile_tape(
                [self.christoffel_exprs[k][i][j]
                 for k in range(n) for i in range(n) for j in range(n)], self.names)
        if validate:
            self.validate()

    def __repr__(self):
        return f"RiemannianChart({self.name!r}, n={self.n})"

    # -- domain -------------------------------------------------------------

    def contains(self, X, tol=0.0) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return np.all((X >= self.lo - tol) & (X <= self.hi + tol), axis=-1)

    def check_domain(self, X):
        X = np.asarray(X, dtype=float)
        inside = self.contains(X)
        if not np.all(inside):
            bad = X.reshape(-1, self.n)[~np.asarray(inside).reshape(-1)][0]
            raise OutOfDomainError(f"point {bad.tolist()} outside chart box "
                                   f"{self.lo.tolist()}..{self.hi.tolist()}")

    def grid(self, points_per_axis=5) -> np.ndarray:
        return box_grid(self.lo, self.hi, points_per_axis)

    def validate(self, points_per_axis=5):
        """Symmetry and positive definiteness on a ``points_per_axis**n`` grid."""
        X = self.grid(points_per_axis)
        g, _ = self.metric_jet(X)
        if not np.allclose(g, np.swapaxes(g, 1, 2), rtol=0, atol=1e-12):
            raise SingularMetricError("metric is not symmetric")
        self._cholesky(g, X)

    # -- batch evaluators ---------------------------------------------------

    def metric_jet(self, X):
        """``g[b, i, j]`` and ``dg[b, i, j, m] = d_m g_ij`` for points ``X (B, n)``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        self.check_domain(X)
        val, grad = kernels.tape_jet(self._metric_tape, X)
        B, n = X.shape[0], self.n
        return val.reshape(B, n, n), grad.reshape(B, n, n, n)

    def metric_batch(self, X):
        return self.metric_jet(X)[0]

    def _cholesky(self, g, X):
        try:
            np.linalg.cholesky(g)
        except np.linalg.LinAlgError:
            for b in range(len(g)):
                try:
                    np.linalg.cholesky(g[b])
                except np.linalg.LinAlgError:
                    raise SingularMetricError(
                        f"metric not positive definite at {X[b].tolist()}") from None
            raise

    def inverse_metric_batch(self, X, g=None):
        if g is None:
            g = self.metric_batch(X)
        self._cholesky(g, np.atleast_2d(X))
        return np.linalg.inv(g)

    def christoffel_batch(self, X, derived=False):
        """Gamma[b, k, i, j] at the points ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        n = self.n
        if self.christoffel_exprs is not None and not derived:
            self.check_domain(X)
            val, _ = kernels.tape_jet(self._gamma_tape, X)
            return val.reshape(len(X), n, n, n)
        g, dg = self.metric_jet(X)
        return kernels.christoffel(self.inverse_metric_batch(X, g), dg)

    # -- single-point API -----------------------------------------------------

    def metric_at(self, x) -> np.ndarray:
        return self.metric_batch(np.asarray(x, dtype=float)[None, :])[0]

    def christoffel_at(self, x, derived=False) -> np.ndarray:
        """Array ``G[k, i, j]`` of connection coefficients at ``x``."""
        return self.christoffel_batch(np.asarray(x, dtype=float)[None, :], derived)[0]

    def inner(self, x, u, w) -> float:
        return float(np.asarray(u) @ self.metric_at(x) @ np.asarray(w))

    def norm(self, x, u) -> float:
        return float(np.sqrt(self.inner(x, u, u)))

    def lower(self, x, u) -> np.ndarray:
        return self.metric_at(x) @ np.asarray(u, dtype=float)

    def raise_(self, x, alpha) -> np.ndarray:
        g = self.metric_at(x)
        self._cholesky(g[None], np.asarray(x, dtype=float)[None])
        return np.linalg.solve(g, np.asarray(alpha, dtype=float))

    # -- generic (dual-friendly) evaluation --------------------------------

    def metric_generic(self, x: Sequence):
        """Metric as nested lists; entries follow the number type of ``x``."""
        bind = dict(zip(self.names, x))
        return [[evaluate(self.metric[i][j], bind) for j in range(self.n)]
                for i in range(self.n)]


def euclidean(n=3, lo=-1.0, hi=1.0) -> RiemannianChart:
    metric = [["1" if i == j else "0" for j in range(n)] for i in range(n)]
    return RiemannianChart(metric, lo, hi, name=f"euclidean{n}")


def conformal(n=3, lam="x1", lo=-1.0, hi=1.0, christoffel=None) -> RiemannianChart:
    """Metric ``exp(2 lam(x)) delta_ij`` for a user function ``lam``."""
    names = coordinate_names(n)
    lam_expr = parse(lam, names) if isinstance(lam, str) else lam
    diag = parse(f"exp(2*({lam_expr}))", names)
    metric = [[diag if i == j else "0" for j in range(n)] for i in range(n)]
    chart = RiemannianChart(metric, lo, hi, christoffel=christoffel, name=f"conformal{n}")
    chart.lam = lam_expr
    return chart


class ChartTransition:
    """Coordinate change ``x' = forward(x)`` with inverse, valid on an overlap box.

    Both maps are written in the variables ``x1..xn``; for ``inverse`` they
    stand for the primed coordinates.
    """

    def __init__(self, forward, inverse, lo, hi, validate=True):
        self.n = n = len(forward)
        names = coordinate_names(n)
        self.names = names
        self.forward = [as_expression(e, names) for e in forward]
        self.inverse = [as_expression(e, names) for e in inverse]
        self.lo = np.array(np.broadcast_to(np.asarray(lo, dtype=float), (n,)))
        self.hi = np.array(np.broadcast_to(np.asarray(hi, dtype=float), (n,)))
        self._fwd = compile_tape(self.forward, names)
        self._inv = compile_tape(self.inverse, names)
        if validate:
            err = self.roundtrip_error()
            if err > 1e-10:
                raise ValueError(f"forward/inverse mismatch {err:.3e} on overlap")

    def _check(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if not np.all((X >= self.lo) & (X <= self.hi)):
            raise OutOfDomainError("point outside the transition overlap")
        return X

    def to_new(self, X):
        X = self._check(X)
        return kernels.tape_jet(self._fwd, X)[0]

    def to_old(self, Xp):
        return kernels.tape_jet(self._inv, np.atleast_2d(np.asarray(Xp, dtype=float)))[0]

    def inverse_jacobian(self, Xp):
        """``J[b, i, j] = d x^i / d x'^j`` at new-chart points."""
        Xp = np.atleast_2d(np.asarray(Xp, dtype=float))
        _, grad = kernels.tape_jet(self._inv, Xp)
        J = grad
        if np.any(np.abs(np.linalg.det(J)) < 1e-14):
            raise SingularMetricError("singular transition Jacobian")
        return J

    def forward_jacobian(self, X):
        X = self._check(X)
        return kernels.tape_jet(self._fwd, X)[1]

    def roundtrip_error(self, points_per_axis=5) -> float:
        X = box_grid(self.lo, self.hi, points_per_axis)
        back = self.to_old(self.to_new(X))
        return float(np.max(np.abs(back - X)))

    def old_generic(self, xp):
        bind = dict(zip(self.names, xp))
        return [evaluate(e, bind) for e in self.inverse]
