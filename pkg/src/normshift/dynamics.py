"""Trajectories of ``x'' + Gamma(x', x') = F^k`` and the conservation law for ``W``.

Trajectories are integrated as one batch in lockstep.  A trajectory that
leaves the chart box or whose speed drops below ``v_min`` is halted: its
recorded states after the last good step are NaN and the reason is kept.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import kernels
from .errors import ZeroVelocityError
from .field import V_MIN, PhaseState, pair_force_batch, scalar_A_function
from .geometry import RiemannianChart
from .ode import dopri5, rk4_step
from .pair import GeneratingPair

__all__ = [
    "TrajectoryRecord", "integrate", "state_force", "conservation_deviation",
    "conservation_residual", "conservation_identity_residual", "solve_profile",
]

HALT_EXIT = "chart exit"
HALT_SLOW = "speed below v_min"


@dataclass
class TrajectoryRecord:
    """Batch of trajectories on a common time grid.

    ``x`` and ``vel`` have shape ``(K+1, B, n)``; ``speed`` and ``W`` have
    shape ``(K+1, B)``.  ``halt_index[b]`` is the last valid grid index of a
    halted trajectory (``-1`` when it ran to the end).
    """

    t: np.ndarray
    x: np.ndarray
    vel: np.ndarray
    speed: np.ndarray
    W: np.ndarray | None = None
    halt_index: np.ndarray = field(default=None)
    halt_reason: list = field(default=None)

    @property
    def halted(self) -> np.ndarray:
        return self.halt_index >= 0

    @property
    def batch(self) -> int:
        return self.x.shape[1]

    def final(self, b=0) -> PhaseState:
        return PhaseState(self.x[-1, b], self.vel[-1, b])


def state_force(chart: RiemannianChart, fn: Callable) -> Callable:
    """Batch force evaluator from a per-state ``fn(chart, PhaseState) -> ForceVector``."""

    def force(X, VEL):
        return np.array([fn(chart, PhaseState(x, v)).covariant for x, v in zip(X, VEL)])

    return force


def _force_evaluator(chart, force):
    if force is None:
        return lambda X, VEL: np.zeros_like(X)
    if isinstance(force, GeneratingPair):
        if force.chart is not chart:
            raise ValueError("pair is defined on a different chart")
        return lambda X, VEL: pair_force_batch(force, X, VEL)[0]
    return force


def _acceleration(chart, force, X, VEL):
    g = chart.metric_batch(X)
    gamma = chart.christoffel_batch(X)
    F = np.asarray(force(X, VEL), dtype=float)
    return np.linalg.solve(g, F[..., None])[..., 0] - kernels.connection_term(gamma, VEL)


def _valid(chart, X, VEL, v_min):
    """Reason code per row: 0 fine, 1 chart exit, 2 slow."""
    code = np.zeros(len(X), dtype=int)
    inside = chart.contains(X) & np.all(np.isfinite(X), axis=1)
    code[~inside] = 1
    if np.any(inside):
        g = chart.metric_batch(X[inside])
        s = np.sqrt(np.einsum("bij,bi,bj->b", g, VEL[inside], VEL[inside]))
        sub = np.where(s < v_min, 2, 0)
        code[np.flatnonzero(inside)] = sub
    return code


def integrate(chart: RiemannianChart, force, x0, v0, t_span=(0.0, 1.0), dt=1e-3,
              method="rk4", v_min=V_MIN, pair: GeneratingPair | None = None,
              rtol=1e-9, atol=1e-9) -> TrajectoryRecord:
    """Integrate a batch of trajectories.

    ``force`` is ``None`` (free motion), a :class:`GeneratingPair`, or a
    callable ``F(X (B,n), VEL (B,n)) -> (B,n)`` of covariant components.
    ``x0`` and ``v0`` are ``(n,)`` or ``(B, n)``.  Output is recorded on the
    grid ``t_span[0] + k*dt``; ``method="rk45"`` integrates each interval
    adaptively instead of with one fixed RK4 step.
    """
    if method not in ("rk4", "rk45"):
        raise ValueError(f"unknown method {method!r}")
    if pair is None and isinstance(force, GeneratingPair):
        pair = force
    evaluator = _force_evaluator(chart, force)
    X0 = np.atleast_2d(np.asarray(x0, dtype=float))
    V0 = np.atleast_2d(np.asarray(v0, dtype=float))
    X0, V0 = np.broadcast_arrays(X0, V0)
    B, n = X0.shape
    if n != chart.n:
        raise ValueError("state dimension does not match the chart")
    chart.check_domain(X0)
    code0 = _valid(chart, X0, V0, v_min)
    if np.any(code0 == 2):
        raise ZeroVelocityError("initial speed below v_min")

    t0, t1 = map(float, t_span)
    K = int(round((t1 - t0) / dt))
    if K < 1 or not np.isclose(t0 + K * dt, t1, rtol=0, atol=1e-12 * max(1.0, abs(t1))):
        raise ValueError("t_span must be a whole number of steps")
    t = t0 + dt * np.arange(K + 1)

    xs = np.full((K + 1, B, n), np.nan)
    vs = np.full((K + 1, B, n), np.nan)
    xs[0], vs[0] = X0, V0
    halt_index = np.full(B, -1)
    halt_reason = [None] * B
    y = np.concatenate([X0, V0], axis=1)
    active = np.ones(B, dtype=bool)

    def make_rhs(rows_flag):
        def rhs(_t, Y):
            X, VEL = Y[:, :n], Y[:, n:]
            code = _valid(chart, X, VEL, v_min)
            bad = code > 0
            np.maximum(rows_flag, code, out=rows_flag)
            out = np.zeros_like(Y)
            ok = ~bad
            if np.any(ok):
                out[ok, :n] = VEL[ok]
                out[ok, n:] = _acceleration(chart, evaluator, X[ok], VEL[ok])
            return out
        return rhs

    for k in range(K):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        flag = np.zeros(idx.size, dtype=int)
        rhs = make_rhs(flag)
        if method == "rk4":
            y_new = rk4_step(rhs, t[k], y[idx], dt)
        else:
            y_new = _adaptive_interval(rhs, t[k], t[k + 1], y[idx], rtol, atol)
        flag = np.maximum(flag, _valid(chart, y_new[:, :n], y_new[:, n:], v_min))
        for j in np.flatnonzero(flag):
            b = idx[j]
            active[b] = False
            halt_index[b] = k
            halt_reason[b] = HALT_EXIT if flag[j] == 1 else HALT_SLOW
        good = flag == 0
        y[idx[good]] = y_new[good]
        xs[k + 1, idx[good]] = y_new[good, :n]
        vs[k + 1, idx[good]] = y_new[good, n:]

    speed = _speeds(chart, xs, vs)
    W = None
    if pair is not None:
        W = _w_along(pair, xs, speed)
    return TrajectoryRecord(t, xs, vs, speed, W, halt_index, halt_reason)


def _adaptive_interval(rhs, ta, tb, y0, rtol, atol):
    # rows whose stages leave the chart are flagged by rhs and dropped afterwards
    return dopri5(rhs, [ta, tb], y0, rtol=rtol, atol=atol)[-1]


def _speeds(chart, xs, vs):
    K1, B, n = xs.shape
    flat_x = xs.reshape(-1, n)
    flat_v = vs.reshape(-1, n)
    ok = np.all(np.isfinite(flat_x), axis=1)
    out = np.full(len(flat_x), np.nan)
    if np.any(ok):
        g = chart.metric_batch(flat_x[ok])
        out[ok] = np.sqrt(np.einsum("bij,bi,bj->b", g, flat_v[ok], flat_v[ok]))
    return out.reshape(K1, B)


def _w_along(pair, xs, speed):
    K1, B, n = xs.shape
    flat_x = xs.reshape(-1, n)
    flat_s = speed.reshape(-1)
    ok = np.isfinite(flat_s)
    out = np.full(len(flat_s), np.nan)
    if np.any(ok):
        out[ok] = pair.jet(flat_x[ok], flat_s[ok], check=False)[0]
    return out.reshape(K1, B)


def solve_profile(h, w0, t) -> np.ndarray:
    """RK4 solution of ``w' = h(w)`` on the grid ``t`` (vectorized over ``w0``)."""
    w0 = np.atleast_1d(np.asarray(w0, dtype=float))
    out = np.empty((len(t),) + w0.shape)
    out[0] = w0

    def rhs(_t, w):
        return np.asarray(h(w), dtype=float) * np.ones_like(w)

    for k in range(len(t) - 1):
        out[k + 1] = rk4_step(rhs, t[k], out[k], t[k + 1] - t[k])
    return out


def conservation_deviation(record: TrajectoryRecord, pair: GeneratingPair) -> np.ndarray:
    """``W(x(t_k), |v(t_k)|) - w(t_k)`` with ``w' = h(w)``, ``w(0) = W`` at ``t_0``."""
    if record.x.shape[2] != pair.n:
        raise ValueError("record and pair have different dimensions")
    W = record.W if record.W is not None else _w_along(pair, record.x, record.speed)
    w = solve_profile(pair.h, W[0], record.t)
    return W - w


def conservation_residual(record: TrajectoryRecord, pair: GeneratingPair) -> float:
    """Max ``|W - w|`` over every recorded (non-halted) state."""
    return float(np.nanmax(np.abs(conservation_deviation(record, pair))))


def conservation_identity_residual(pair: GeneratingPair, states) -> float:
    """Max of ``|(grad W | v) + W_v A - h(W)|`` at the given phase states.

    This is the pointwise identity behind ``dW/dt = h(W)``: along a
    trajectory ``d|v|/dt = A``, so the chain rule gives the left-hand side.
    """
    A = scalar_A_function(pair)
    worst = 0.0
    for s in states:
        speed = pair.chart.norm(s.x, s.vel)
        W, grad, wv = pair.w_partials(s.x, speed)
        lhs = float(grad @ s.vel) + wv * float(A(s.x, list(s.vel)))
        worst = max(worst, abs(lhs - float(pair.h(W))))
    return worst
