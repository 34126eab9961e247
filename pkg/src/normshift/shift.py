"""Normal shift of a hypersurface patch along trajectories of a pair force.

Every point of the patch starts with velocity ``nu(p) n(p)``, where ``n`` is
the unit normal and ``nu`` is picked so that ``W(p, nu(p))`` is one value
``w0`` across the patch.  The shifted fronts ``S_t`` are point clouds; their
tangents come from finite differences over the parameter grid, and the
cosine between trajectory velocity and front tangents measures normality.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .dynamics import TrajectoryRecord, integrate, solve_profile
from .errors import BracketError, RankDeficiencyError
from .expr import as_expression, compile_tape
from .geometry import RiemannianChart, box_grid
from .pair import GeneratingPair

__all__ = [
    "HypersurfacePatch", "ShiftResult", "unit_normal", "unit_normals",
    "solve_initial_speed", "initial_speeds", "normal_shift",
]

RANK_TOL = 1e-12


class HypersurfacePatch:
    """Embedding ``u -> x(u)`` of a box in ``R^(n-1)`` sampled on a tensor grid.

    ``reference`` is the covector whose pairing with the normal fixes the
    orientation (default ``dx1``); ``orientation=-1`` flips it.
    """

    def __init__(self, embedding, lo, hi, resolution=21, reference=None, orientation=1):
        self.n = n = len(embedding)
        self.dim = n - 1
        if self.dim < 1:
            raise ValueError("a hypersurface needs n >= 2")
        self.param_names = [f"u{a + 1}" for a in range(self.dim)]
        self.embedding = [as_expression(e, self.param_names) for e in embedding]
        self.lo = np.array(np.broadcast_to(np.asarray(lo, dtype=float), (self.dim,)))
        self.hi = np.array(np.broadcast_to(np.asarray(hi, dtype=float), (self.dim,)))
        if np.any(self.lo >= self.hi):
            raise ValueError("empty parameter box")
        self.resolution = int(resolution)
        if self.resolution < 3:
            raise ValueError("resolution must be at least 3 for tangent estimation")
        ref = np.zeros(n) if reference is None else np.asarray(reference, dtype=float)
        if reference is None:
            ref[0] = 1.0
        self.reference = ref * (1.0 if orientation >= 0 else -1.0)
        self._tape = compile_tape(self.embedding, self.param_names)

    @property
    def shape(self) -> tuple:
        return (self.resolution,) * self.dim

    @property
    def spacing(self) -> np.ndarray:
        return (self.hi - self.lo) / (self.resolution - 1)

    def parameter_grid(self) -> np.ndarray:
        """Grid of ``u`` values, shape ``(resolution**(n-1), n-1)`` in C order."""
        return box_grid(self.lo, self.hi, self.resolution)

    def refined(self, factor=2) -> "HypersurfacePatch":
        res = factor * (self.resolution - 1) + 1
        return HypersurfacePatch(self.embedding, self.lo, self.hi, res, self.reference)

    def embed(self, U):
        """Points ``x(u) (B, n)`` and tangents ``dx/du^a (B, n-1, n)``."""
        U = np.atleast_2d(np.asarray(U, dtype=float))
        val, grad = kernels.tape_jet(self._tape, U)
        return val, np.swapaxes(grad, 1, 2)


def _normals(chart, X, T, reference):
    B, r, n = T.shape
    # the normal covector spans the null space of the tangent frame
    _, s, vt = np.linalg.svd(T)
    if np.any(s[:, -1] <= RANK_TOL * np.maximum(1.0, s[:, 0])):
        b = int(np.flatnonzero(s[:, -1] <= RANK_TOL * np.maximum(1.0, s[:, 0]))[0])
        raise RankDeficiencyError(f"tangent frame loses rank at x={X[b].tolist()}")
    alpha = vt[:, -1, :]
    g = chart.metric_batch(X)
    N = np.linalg.solve(g, alpha[..., None])[..., 0]
    N /= np.sqrt(np.einsum("bij,bi,bj->b", g, N, N))[:, None]
    sign = np.where(N @ reference < 0, -1.0, 1.0)
    return N * sign[:, None]


def unit_normals(chart: RiemannianChart, patch: HypersurfacePatch, U=None):
    """Unit normals at parameter values ``U`` (default: the whole grid)."""
    U = patch.parameter_grid() if U is None else np.atleast_2d(np.asarray(U, dtype=float))
    X, T = patch.embed(U)
    chart.check_domain(X)
    return _normals(chart, X, T, patch.reference)


def unit_normal(chart: RiemannianChart, patch: HypersurfacePatch, u) -> np.ndarray:
    """``n`` with ``g(n, tau_a) = 0``, ``g(n, n) = 1``, oriented by the reference covector."""
    return unit_normals(chart, patch, np.atleast_2d(u))[0]


def initial_speeds(pair: GeneratingPair, X, w0, samples=129, tol=1e-10) -> np.ndarray:
    """Solve ``W(x, nu) = w0`` for ``nu`` in ``pair.v_range`` at each row of ``X``.

    The first sign change on a sample grid brackets the root; safeguarded
    Newton then converges inside the bracket.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    B = len(X)
    vs = np.linspace(*pair.v_range, samples)
    Xr = np.repeat(X, samples, axis=0)
    Vr = np.tile(vs, B)
    W, _, wv = pair.jet(Xr, Vr, check=False)
    f = (W - w0).reshape(B, samples)
    wv = wv.reshape(B, samples)
    exact = f == 0
    change = (np.sign(f[:, :-1]) * np.sign(f[:, 1:]) < 0) | exact[:, :-1]
    has = np.any(change, axis=1) | exact[:, -1]
    if not np.all(has):
        b = int(np.flatnonzero(~has)[0])
        raise BracketError(f"W(x, v) = {w0} has no root for v in {pair.v_range} "
                           f"at x={X[b].tolist()}")
    multi = (np.any(wv > 0, axis=1) & np.any(wv < 0, axis=1)) | (change.sum(axis=1) > 1)
    if np.any(multi):
        warnings.warn(f"{int(multi.sum())} point(s) admit several roots; taking the first",
                      RuntimeWarning, stacklevel=2)
    first = np.where(np.any(change, axis=1), np.argmax(change, axis=1), samples - 1)
    a = vs[first]
    b = vs[np.minimum(first + 1, samples - 1)]
    fa = f[np.arange(B), first]
    nu = np.where(fa == 0, a, 0.5 * (a + b))
    for _ in range(100):
        Wn, _, d = pair.jet(X, nu, check=False)
        r = Wn - w0
        if np.all(np.abs(r) < 1e-3 * tol):
            break
        left = np.sign(r) == np.sign(fa)
        a = np.where(left, nu, a)
        fa = np.where(left, r, fa)
        b = np.where(left, b, nu)
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = nu - r / d
        inside = np.isfinite(newton) & (newton > np.minimum(a, b)) & (newton < np.maximum(a, b))
        nu = np.where(r == 0, nu, np.where(inside, newton, 0.5 * (a + b)))
    resid = np.abs(pair.jet(X, nu, check=False)[0] - w0)
    if np.any(resid >= tol):
        b = int(np.argmax(resid))
        raise BracketError(f"speed equation not solved at x={X[b].tolist()} "
                           f"(residual {resid[b]:.3e})")
    return nu


def solve_initial_speed(pair: GeneratingPair, patch: HypersurfacePatch, u, w0) -> float:
    X, _ = patch.embed(np.atleast_2d(u))
    return float(initial_speeds(pair, X, w0)[0])


@dataclass
class ShiftResult:
    """Shifted fronts and their orthogonality residuals.

    ``points[k]`` is ``S_{t_k}`` as ``(P, n)``; ``R[p, k, a]`` is the cosine
    between the velocity at ``p`` and the ``a``-th front tangent at time
    ``t_k``.  Entries are NaN where a trajectory halted.
    """

    t: np.ndarray
    u: np.ndarray
    points: np.ndarray
    velocities: np.ndarray
    normals: np.ndarray
    speeds: np.ndarray
    w0: float
    R: np.ndarray
    w_deviation: np.ndarray
    halted: list
    record: TrajectoryRecord

    @property
    def max_residual(self) -> float:
        return float(np.nanmax(np.abs(self.R)))

    def residual_vs_t(self) -> np.ndarray:
        return np.nanmax(np.abs(self.R), axis=(0, 2))

    @property
    def max_w_deviation(self) -> float:
        return float(np.nanmax(np.abs(self.w_deviation)))

    def to_report(self) -> dict:
        return {
            "w0": float(self.w0),
            "max_residual": self.max_residual,
            "max_w_deviation": self.max_w_deviation,
            "residual_vs_t": [[float(t), float(r)] for t, r in zip(self.t, self.residual_vs_t())],
            "halted": self.halted,
        }


def _front_tangents(points, shape, spacing):
    """Finite-difference tangents of a point cloud laid out on the parameter grid."""
    P, n = points.shape
    cloud = points.reshape(shape + (n,))
    tangents = []
    for a in range(len(shape)):
        d = np.gradient(cloud, spacing[a], axis=a, edge_order=2)
        tangents.append(d.reshape(P, n))
    return np.stack(tangents, axis=1)


def normal_shift(chart: RiemannianChart, pair: GeneratingPair, patch: HypersurfacePatch,
                 w0=None, t_grid=None, dt=1e-3, speeds=None, method="rk4") -> ShiftResult:
    """Shift ``patch`` along trajectories of the pair force.

    ``t_grid`` lists the frames to assemble (multiples of ``dt``; default
    ``0, 0.05, ..., 0.5``).  ``speeds`` overrides the level-set choice of
    ``nu``; this is how a deliberately wrong shift is produced.
    """
    if patch.n != chart.n:
        raise ValueError("patch and chart dimensions differ")
    t_grid = np.linspace(0.0, 0.5, 11) if t_grid is None else np.asarray(t_grid, dtype=float)
    if t_grid[0] != 0.0 or np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must start at 0 and increase")
    steps = np.rint(t_grid / dt).astype(int)
    if not np.allclose(steps * dt, t_grid, rtol=0, atol=1e-9):
        raise ValueError("t_grid entries must be multiples of dt")

    U = patch.parameter_grid()
    X0, T0 = patch.embed(U)
    chart.check_domain(X0)
    N = _normals(chart, X0, T0, patch.reference)
    if w0 is None:
        W_mid, _, _ = pair.jet(X0, np.full(len(X0), 0.5 * sum(pair.v_range)), check=False)
        w0 = float(np.median(W_mid))
    if speeds is None:
        nu = initial_speeds(pair, X0, w0)
    else:
        nu = np.broadcast_to(np.asarray(speeds, dtype=float), (len(X0),)).copy()
    V0 = nu[:, None] * N

    if steps[-1] == 0:
        record = None
        xs, vs = X0[None], V0[None]
        W = pair.jet(X0, nu, check=False)[0][None]
        halt_index = np.full(len(X0), -1)
        reasons = [None] * len(X0)
        t_all = np.zeros(1)
    else:
        record = integrate(chart, pair, X0, V0, (0.0, steps[-1] * dt), dt, method=method)
        xs, vs, W = record.x, record.vel, record.W
        halt_index, reasons, t_all = record.halt_index, record.halt_reason, record.t

    P = len(X0)
    F = len(t_grid)
    points = xs[steps]
    vels = vs[steps]
    R = np.full((P, F, patch.dim), np.nan)
    R[:, 0] = kernels.orthogonality(chart.metric_batch(X0), V0, T0)
    for k in range(1, F):
        S = points[k]
        alive = np.all(np.isfinite(S), axis=1)
        _check_coverage(alive, patch.shape, t_grid[k], reasons)
        T = _front_tangents(S, patch.shape, patch.spacing)
        ok = alive & np.all(np.isfinite(T), axis=(1, 2))
        if np.any(ok):
            g = chart.metric_batch(S[ok])
            R[ok, k] = kernels.orthogonality(g, vels[k][ok], T[ok])

    w = solve_profile(pair.h, np.array([w0]), t_all)[:, 0]
    deviation = (W - w[:, None])[steps]
    halted = [{"index": int(p), "u": U[p].tolist(), "t": float(t_all[halt_index[p]]),
               "reason": reasons[p]} for p in np.flatnonzero(halt_index >= 0)]
    return ShiftResult(t_grid, U, points, vels, N, nu, float(w0), R, deviation.T, halted, record)


def _check_coverage(alive, shape, t, reasons):
    grid = alive.reshape(shape)
    for a in range(len(shape)):
        counts = grid.sum(axis=a)
        if np.any((counts > 0) & (counts < 3)) or not np.any(counts >= 3):
            why = sorted({r for r in reasons if r})
            raise RankDeficiencyError(
                f"fewer than 3 surviving points along parameter direction u{a + 1} at t={t:g}: "
                f"{int((~alive).sum())} of {alive.size} trajectories halted ({', '.join(why)})")
