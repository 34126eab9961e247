"""Section data ``(b, a)`` on ``M x R+`` and the residuals that characterize it.

Points ``q`` of ``M x R+`` are sequences ``(x1, ..., xn, v)``; entries may be
floats, numpy arrays (for grid sweeps) or dual numbers.  Indices are
0-based, with index ``n`` standing for ``v``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import OutOfDomainError, TransversalityError, VanishingNormalizationError
from .expr import (
    Dual, Expression, as_expression, evaluate, new_tag, primal, tangent,
    value_and_gradient,
)
from .geometry import ChartTransition, RiemannianChart, box_grid
from .pair import GeneratingPair

__all__ = [
    "ProjectiveSectionField", "NormalizingField", "CovectorField", "Sweep",
    "section_from_pair", "section_from_omega", "closedness_residual",
    "normalizing_residual", "omega_from_section", "omega_closedness_residual",
    "omega_normalization_residual", "integrating_factor_residual",
    "transform_section", "transformed_section", "lie_bracket", "frame_fields",
    "normalizing_vector_field", "manifold_grid", "closedness_sweep",
    "normalizing_sweep", "omega_closedness_sweep",
]

NONZERO_EPS = 1e-12


def manifold_grid(chart: RiemannianChart, v_range, points_per_axis=5) -> np.ndarray:
    lo = np.append(chart.lo, v_range[0])
    hi = np.append(chart.hi, v_range[1])
    return box_grid(lo, hi, points_per_axis)


def _compile_components(items, names):
    if callable(items) and not isinstance(items, Expression):
        return items
    comps = []
    for item in items:
        if callable(item) and not isinstance(item, Expression):
            comps.append(item)
        else:
            expr = as_expression(item, names)
            comps.append(lambda q, e=expr: evaluate(e, dict(zip(names, q))))
    return lambda q: [c(q) for c in comps]


class _MField:
    """Function on the chart box times ``v_range`` with one or more components."""

    def __init__(self, chart: RiemannianChart, v_range):
        self.chart = chart
        self.n = chart.n
        self.names = list(chart.names) + ["v"]
        self.v_range = (float(v_range[0]), float(v_range[1]))

    def check(self, q):
        pts = np.column_stack([np.atleast_1d(np.asarray(primal(c), dtype=float)) for c in q])
        self.chart.check_domain(pts[:, :-1])
        if np.any(pts[:, -1] <= 0):
            raise OutOfDomainError("v must be positive on M x R+")

    def grid(self, points_per_axis=5):
        return manifold_grid(self.chart, self.v_range, points_per_axis)


class ProjectiveSectionField(_MField):
    """Affine-chart coordinates ``b_1..b_n`` of a section (last slot normalized to 1)."""

    def __init__(self, b, chart: RiemannianChart, v_range=(0.5, 2.0)):
        super().__init__(chart, v_range)
        self._fn = _compile_components(b, self.names)

    def components(self, q):
        return self._fn(list(q))

    def at(self, q) -> np.ndarray:
        self.check(q)
        return np.array([float(c) for c in self.components(q)])


class NormalizingField(_MField):
    """The scalar ``a`` of the normalizing vector field ``X = a d/dv``."""

    def __init__(self, a, chart: RiemannianChart, v_range=(0.5, 2.0)):
        super().__init__(chart, v_range)
        fn = _compile_components([a], self.names)
        self._fn = lambda q: fn(q)[0]

    def value(self, q):
        return self._fn(list(q))


class CovectorField(_MField):
    """Components ``w_1..w_{n+1}`` of a 1-form on ``M x R+``."""

    def __init__(self, omega, chart: RiemannianChart, v_range=(0.5, 2.0)):
        super().__init__(chart, v_range)
        self._fn = _compile_components(omega, self.names)

    def components(self, q):
        return self._fn(list(q))

    def at(self, q) -> np.ndarray:
        self.check(q)
        return np.array([float(c) for c in self.components(q)])

    def scaled(self, alpha) -> "CovectorField":
        """``alpha * omega`` for a scalar function ``alpha`` on ``M x R+``."""
        alpha_fn = _compile_components([alpha], self.names)
        return CovectorField(lambda q: [alpha_fn(q)[0] * c for c in self.components(q)],
                             self.chart, self.v_range)


# ---------------------------------------------------------------------------
# Construction


def section_from_pair(pair: GeneratingPair):
    """``b_i = -d_i W / W_v`` and ``a = h(W) / W_v`` as exact callable fields."""

    def b(q):
        _, grad, wv = pair.partials_generic(q)
        return [-g / wv for g in grad]

    def a(q):
        W, _, wv = pair.partials_generic(q)
        return pair.h(W) / wv

    return (ProjectiveSectionField(b, pair.chart, pair.v_range),
            NormalizingField(a, pair.chart, pair.v_range))


def section_from_omega(omega: CovectorField) -> ProjectiveSectionField:
    """``b_i = -w_i / w_{n+1}``; invariant under ``omega -> alpha * omega``."""

    def b(q):
        comps = omega.components(q)
        last = comps[-1]
        if np.any(np.abs(np.asarray(primal(last))) < NONZERO_EPS):
            raise TransversalityError("omega_{n+1} vanishes")
        return [-c / last for c in comps[:-1]]

    return ProjectiveSectionField(b, omega.chart, omega.v_range)


def omega_from_section(b: ProjectiveSectionField, a: NormalizingField,
                       points_per_axis=5) -> CovectorField:
    """Closed 1-form ``w = (1/a)(-b_1, ..., -b_n, 1)`` with ``w(a d/dv) = 1``.

    Requires ``a != 0`` on the validation grid.
    """
    Q = b.grid(points_per_axis)
    vals = np.asarray(a.value(list(Q.T)), dtype=float) * np.ones(len(Q))
    bad = np.abs(vals) < NONZERO_EPS
    if np.any(bad):
        raise VanishingNormalizationError(
            f"a vanishes at {Q[np.flatnonzero(bad)[0]].tolist()}")
    if np.any(vals > 0) and np.any(vals < 0):
        raise VanishingNormalizationError("a changes sign on the validation grid")

    def omega(q):
        av = a.value(q)
        inv = 1.0 / av
        return [-c * inv for c in b.components(q)] + [inv]

    field = CovectorField(omega, b.chart, b.v_range)
    err = omega_normalization_residual(field, a, list(Q.T))
    if np.max(np.abs(err)) > 1e-12:
        raise VanishingNormalizationError(f"normalization w(X)=1 off by {np.max(np.abs(err)):.3e}")
    return field


# ---------------------------------------------------------------------------
# Derivatives


def _column(fn: Callable, q: Sequence, j: int):
    """Partials of every component of ``fn`` w.r.t. coordinate ``j``."""
    tag = new_tag()
    seeded = list(q)
    seeded[j] = Dual(tag, seeded[j], 1.0)
    return [tangent(c, tag) for c in fn(seeded)]


def _scalar_partial(fn, q, j):
    tag = new_tag()
    seeded = list(q)
    seeded[j] = Dual(tag, seeded[j], 1.0)
    return tangent(fn(seeded), tag)


# ---------------------------------------------------------------------------
# Residuals


def closedness_residual(b: ProjectiveSectionField, q, i: int, j: int):
    """``(d_j + b_j d_v) b_i - (d_i + b_i d_v) b_j`` at ``q`` (zero iff compatible)."""
    b.check(q)
    return _closedness_all(b, q)[(i, j)]


def _closedness_all(b, q):
    n = b.n
    q = list(q)
    vals = b.components(q)
    cols = [_column(b.components, q, m) for m in range(n + 1)]
    dv = cols[n]
    out = {}
    for i in range(n):
        for j in range(n):
            out[(i, j)] = (cols[j][i] + vals[j] * dv[i]) - (cols[i][j] + vals[i] * dv[j])
    return out


def normalizing_residual(b: ProjectiveSectionField, a: NormalizingField, q, i: int):
    """``(d_i + b_i d_v) a - (d_v b_i) a`` at ``q``."""
    b.check(q)
    return _normalizing_all(b, a, q)[i]


def _normalizing_all(b, a, q):
    n = b.n
    q = list(q)
    av = a.value(q)
    vals = b.components(q)
    da = [_scalar_partial(a.value, q, m) for m in range(n + 1)]
    dbv = _column(b.components, q, n)
    return [da[i] + vals[i] * da[n] - dbv[i] * av for i in range(n)]


def omega_closedness_residual(omega: CovectorField, q, i: int, j: int):
    """``d w_i / d x^j - d w_j / d x^i`` for ``0 <= i, j <= n``."""
    omega.check(q)
    q = list(q)
    ci = _column(omega.components, q, j)[i]
    cj = _column(omega.components, q, i)[j]
    return ci - cj


def omega_normalization_residual(omega: CovectorField, a: NormalizingField, q):
    """``w(X) - 1`` for ``X = a d/dv``."""
    return a.value(q) * omega.components(q)[-1] - 1.0


def integrating_factor_residual(phi, b: ProjectiveSectionField, q, i: int):
    """``d_i phi + (d_v b_i) phi + (d_v phi) b_i``: zero iff ``phi`` closes the form."""
    b.check(q)
    if not callable(phi) or isinstance(phi, Expression):
        expr = as_expression(phi, b.names)
        phi_fn = lambda p: evaluate(expr, dict(zip(b.names, p)))  # noqa: E731
    else:
        phi_fn = phi
    q = list(q)
    n = b.n
    ph = phi_fn(q)
    dphi_i = _scalar_partial(phi_fn, q, i)
    dphi_v = _scalar_partial(phi_fn, q, n)
    dbv = _column(b.components, q, n)[i]
    return dphi_i + dbv * ph + dphi_v * b.components(q)[i]


# ---------------------------------------------------------------------------
# Vector fields and brackets


def frame_fields(b: ProjectiveSectionField):
    """The fields ``L_i = d/dx^i + b_i d/dv`` spanning the kernel distribution."""
    n = b.n

    def make(i):
        def L(q):
            comps = [0.0] * (n + 1)
            comps[i] = 1.0
            comps[n] = b.components(q)[i]
            return comps
        return L

    return [make(i) for i in range(n)]


def normalizing_vector_field(a: NormalizingField):
    """``L_{n+1} = a d/dv``."""
    n = a.n
    return lambda q: [0.0] * n + [a.value(q)]


def lie_bracket(X: Callable, Y: Callable, q):
    """Components of ``[X, Y]`` at ``q`` by AD."""
    q = list(q)
    m = len(q)
    xv, yv = X(q), Y(q)
    dX = [_column(X, q, j) for j in range(m)]
    dY = [_column(Y, q, j) for j in range(m)]
    return [sum(xv[j] * dY[j][k] - yv[j] * dX[j][k] for j in range(m)) for k in range(m)]


# ---------------------------------------------------------------------------
# Chart transitions


def _jacobian_generic(transition: ChartTransition, xp):
    """``J[i][j] = d x^i / d x'^j`` evaluated with the number type of ``xp``."""
    n = transition.n
    J = [[None] * n for _ in range(n)]
    for i in range(n):
        e = transition.inverse[i]
        _, grad = value_and_gradient(
            lambda p, e=e: evaluate(e, dict(zip(transition.names, p))), xp)
        for j in range(n):
            J[i][j] = grad[j]
    return J


def transform_section(b: ProjectiveSectionField, transition: ChartTransition, q) -> np.ndarray:
    """Components ``b'_j = sum_i (d x^i / d x'^j) b_i`` at the old-chart point ``q``."""
    q = np.asarray(q, dtype=float)
    x, v = q[:-1], q[-1]
    xp = transition.to_new(x)[0]
    J = transition.inverse_jacobian(xp)[0]
    return J.T @ b.at(list(x) + [v])


def transformed_section(b: ProjectiveSectionField, transition: ChartTransition,
                        new_chart: RiemannianChart) -> ProjectiveSectionField:
    """The same section written in the primed coordinates of ``new_chart``."""
    n = b.n

    def bp(q):
        xp, v = list(q[:-1]), q[-1]
        x = transition.old_generic(xp)
        J = _jacobian_generic(transition, xp)
        old = b.components(x + [v])
        return [sum(J[i][j] * old[i] for i in range(n)) for j in range(n)]

    return ProjectiveSectionField(bp, new_chart, b.v_range)


# ---------------------------------------------------------------------------
# Grid sweeps


@dataclass(frozen=True)
class Sweep:
    """Max-abs residual over a point set, where it occurs and for which indices."""

    max_abs: float
    argmax: list
    index: tuple

    def to_dict(self):
        return {"max_residual": self.max_abs, "argmax": self.argmax,
                "index": [i + 1 for i in self.index]}


def _sweep(residuals: dict, Q: np.ndarray) -> Sweep:
    best = (-1.0, None, ())
    for idx, r in residuals.items():
        r = np.abs(np.asarray(r, dtype=float) * np.ones(len(Q)))
        k = int(np.argmax(r))
        if r[k] > best[0] or not math.isfinite(r[k]):
            best = (float(r[k]), Q[k].tolist(), idx)
    return Sweep(*best)


def closedness_sweep(b: ProjectiveSectionField, Q=None, points_per_axis=5) -> Sweep:
    Q = b.grid(points_per_axis) if Q is None else np.atleast_2d(Q)
    q = list(Q.T)
    b.check(q)
    res = {k: r for k, r in _closedness_all(b, q).items() if k[0] < k[1]}
    if not res:
        return Sweep(0.0, Q[0].tolist(), ())
    return _sweep(res, Q)


def normalizing_sweep(b: ProjectiveSectionField, a: NormalizingField, Q=None,
                      points_per_axis=5) -> Sweep:
    Q = b.grid(points_per_axis) if Q is None else np.atleast_2d(Q)
    q = list(Q.T)
    b.check(q)
    res = {(i,): r for i, r in enumerate(_normalizing_all(b, a, q))}
    return _sweep(res, Q)


def omega_closedness_sweep(omega: CovectorField, Q=None, points_per_axis=5) -> Sweep:
    Q = omega.grid(points_per_axis) if Q is None else np.atleast_2d(Q)
    q = list(Q.T)
    omega.check(q)
    m = omega.n + 1
    cols = [_column(omega.components, q, j) for j in range(m)]
    res = {(i, j): cols[j][i] - cols[i][j] for i in range(m) for j in range(i + 1, m)}
    return _sweep(res, Q)
