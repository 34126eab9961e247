"""Force fields of the normal-shift class and their scalar projections.

Covariant components ``F_k`` are primary; ``F^k`` is obtained by raising
with the metric.  All per-state functions are generic over the number type
so that velocity derivatives can be taken by forward-mode AD.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import kernels
from .errors import TransversalityError, ZeroVelocityError
from .expr import derivative, primal, sqrt
from .geometry import RiemannianChart
from .pair import GeneratingPair

__all__ = [
    "V_MIN", "PhaseState", "ForceVector", "force_from_pair", "scalar_A_from_pair",
    "scalar_A_function", "project_force_to_A", "force_from_A", "force_from_omega",
    "A_from_omega", "pair_force_batch", "random_states", "relative_error",
]

V_MIN = 1e-8
TRANSVERSALITY_EPS = 1e-12


@dataclass(frozen=True)
class PhaseState:
    x: np.ndarray
    vel: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float))
        object.__setattr__(self, "vel", np.asarray(self.vel, dtype=float))

    def reversed(self) -> "PhaseState":
        return PhaseState(self.x, -self.vel)


@dataclass(frozen=True)
class ForceVector:
    covariant: np.ndarray
    contravariant: np.ndarray


def _kinematics(chart: RiemannianChart, x, vel, v_min=V_MIN):
    """Speed and the unit velocity direction with upper and lower indices."""
    chart.check_domain(np.asarray(primal_list(x), dtype=float))
    n = chart.n
    g = chart.metric_generic(x)
    lower = [sum(g[k][j] * vel[j] for j in range(n)) for k in range(n)]
    s2 = sum(lower[k] * vel[k] for k in range(n))
    if np.any(np.asarray(primal(s2)) < v_min * v_min):
        raise ZeroVelocityError(f"speed below v_min={v_min}")
    speed = sqrt(s2)
    return speed, [vel[i] / speed for i in range(n)], [lower[k] / speed for k in range(n)]


def primal_list(values):
    return [primal(v) for v in values]


def _covector(chart, x, cov) -> ForceVector:
    cov = np.array([float(c) for c in cov])
    return ForceVector(cov, chart.raise_(x, cov))


def _pair_terms(pair: GeneratingPair, x, vel, v_min):
    speed, n_up, n_low = _kinematics(pair.chart, x, vel, v_min)
    W, grad, wv = pair.partials_generic(list(x) + [speed])
    gn = sum(grad[i] * n_up[i] for i in range(pair.n))
    return speed, n_low, W, grad, wv, gn


def force_from_pair(pair: GeneratingPair, state: PhaseState, v_min=V_MIN) -> ForceVector:
    """``F_k = h(W) N_k / W_v - v sum_i (d_i W / W_v)(2 N^i N_k - delta^i_k)``."""
    speed, n_low, W, grad, wv, gn = _pair_terms(pair, state.x, state.vel, v_min)
    a = pair.h(W) / wv
    cov = [a * n_low[k] - speed * (2.0 * gn * n_low[k] - grad[k]) / wv
           for k in range(pair.n)]
    return _covector(pair.chart, state.x, cov)


def scalar_A_function(pair: GeneratingPair, v_min=V_MIN) -> Callable:
    """``A(x, vel) = h(W)/W_v - (v/W_v) (grad W | N)`` as a generic callable."""

    def A(x, vel):
        speed, _, W, _, wv, gn = _pair_terms(pair, x, vel, v_min)
        return pair.h(W) / wv - speed * gn / wv

    return A


def scalar_A_from_pair(pair: GeneratingPair, state: PhaseState, v_min=V_MIN) -> float:
    return float(scalar_A_function(pair, v_min)(state.x, state.vel))


def project_force_to_A(chart: RiemannianChart, state: PhaseState, F: ForceVector,
                       v_min=V_MIN) -> float:
    """``A = F_k N^k``."""
    _, n_up, _ = _kinematics(chart, state.x, state.vel, v_min)
    return float(sum(F.covariant[k] * n_up[k] for k in range(chart.n)))


def force_from_A(chart: RiemannianChart, A: Callable, state: PhaseState,
                 v_min=V_MIN) -> ForceVector:
    """Scalar ansatz ``F_k = A N_k - |v| sum_i P^i_k dA/dv^i``.

    ``A(x, vel)`` must accept dual numbers in ``vel``; its velocity gradient
    is taken by forward-mode AD through whatever it computes.
    """
    x, vel = state.x, state.vel
    n = chart.n
    speed, n_up, n_low = _kinematics(chart, x, vel, v_min)
    a0 = A(x, list(vel))
    dA = [derivative(lambda p: A(x, p), list(vel), i) for i in range(n)]
    cov = []
    for k in range(n):
        proj = sum(((1.0 if i == k else 0.0) - n_up[i] * n_low[k]) * dA[i] for i in range(n))
        cov.append(a0 * n_low[k] - speed * proj)
    return _covector(chart, x, cov)


def _omega_parts(omega, x, speed):
    comps = omega.components(list(x) + [speed])
    last = comps[-1]
    if np.any(np.abs(np.asarray(primal(last))) < TRANSVERSALITY_EPS):
        raise TransversalityError("omega_{n+1} vanishes: kernel parallel to the v rulings")
    return comps[:-1], last


def force_from_omega(chart: RiemannianChart, omega, state: PhaseState,
                     v_min=V_MIN) -> ForceVector:
    """``F_k = N_k/w_{n+1} - v sum_i (w_i/w_{n+1})(2 N^i N_k - delta^i_k)``.

    This corresponds to a pair gauged to ``h = 1``.
    """
    speed, n_up, n_low = _kinematics(chart, state.x, state.vel, v_min)
    om, last = _omega_parts(omega, state.x, speed)
    on = sum(om[i] * n_up[i] for i in range(chart.n))
    cov = [n_low[k] / last - speed * (2.0 * on * n_low[k] - om[k]) / last
           for k in range(chart.n)]
    return _covector(chart, state.x, cov)


def A_from_omega(chart: RiemannianChart, omega, state: PhaseState, v_min=V_MIN) -> float:
    """``A = 1/w_{n+1} - sum_i w_i v^i / w_{n+1}``."""
    speed, _, _ = _kinematics(chart, state.x, state.vel, v_min)
    om, last = _omega_parts(omega, state.x, speed)
    return float(1.0 / last - sum(om[i] * state.vel[i] for i in range(chart.n)) / last)


# ---------------------------------------------------------------------------
# Batched evaluation for the integrators


def pair_force_batch(pair: GeneratingPair, X, VEL, v_min=V_MIN):
    """Covariant forces ``(B, n)`` and projections ``A (B,)`` for many states."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    VEL = np.atleast_2d(np.asarray(VEL, dtype=float))
    g = pair.chart.metric_batch(X)
    speed = np.sqrt(np.einsum("bij,bi,bj->b", g, VEL, VEL))
    if np.any(speed < v_min):
        raise ZeroVelocityError(f"speed below v_min={v_min}")
    W, grad, wv = pair.jet(X, speed)
    h = np.asarray(pair.h(W), dtype=float) * np.ones_like(W)
    return kernels.pair_force(g, VEL, grad, wv, h)


# ---------------------------------------------------------------------------
# Sampling and comparison helpers


def random_states(chart: RiemannianChart, v_range, count, rng, margin=0.1):
    """Seeded phase states: ``x`` inside the shrunken box, ``|vel|`` in ``v_range``."""
    width = chart.hi - chart.lo
    lo = chart.lo + margin * width
    hi = chart.hi - margin * width
    states = []
    for _ in range(count):
        x = rng.uniform(lo, hi)
        d = rng.normal(size=chart.n)
        speed = rng.uniform(*v_range)
        d *= speed / chart.norm(x, d)
        states.append(PhaseState(x, d))
    return states


def relative_error(a, b) -> float:
    """``max|a - b| / max|b|`` (plain absolute difference when ``b`` vanishes)."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    scale = np.max(np.abs(b))
    diff = np.max(np.abs(a - b))
    return float(diff / scale) if scale > 0 else float(diff)
