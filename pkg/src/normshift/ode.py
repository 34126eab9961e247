"""Batched explicit Runge-Kutta steppers.

Each row of the state is an independent system sharing one step sequence.
The adaptive stepper controls the *max* of the per-component error ratios,
so no row's local error exceeds the tolerance.  Sharing the step sequence
also makes solutions depend smoothly on their parameters, which keeps
finite differences across a batch clean.
"""

from __future__ import annotations

import numpy as np

from .errors import StepSizeUnderflowError

__all__ = ["rk4_step", "dopri5"]

_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


def rk4_step(fun, t, y, h):
    """One classical fourth-order step of ``y' = fun(t, y)``."""
    k1 = fun(t, y)
    k2 = fun(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = fun(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = fun(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def dopri5(fun, t_eval, y0, rtol=1e-10, atol=1e-10, h0=None, max_steps=100_000,
           on_step=None):
    """Dormand-Prince 5(4) with max-norm error control.

    Returns the solution at every time in ``t_eval`` (the first entry is the
    initial time), shape ``(len(t_eval),) + y0.shape``.  ``on_step(t, y)`` is
    called after each accepted step and may raise to abort.
    """
    t_eval = np.asarray(t_eval, dtype=float)
    y = np.array(y0, dtype=float)
    out = np.empty((len(t_eval),) + y.shape)
    out[0] = y
    t = float(t_eval[0])
    span = float(t_eval[-1] - t_eval[0])
    if span == 0.0:
        out[:] = y
        return out
    direction = np.sign(span)
    h = abs(h0) if h0 else min(abs(span), 1e-2)
    k1 = fun(t, y)
    steps = 0
    for idx in range(1, len(t_eval)):
        target = float(t_eval[idx])
        while direction * (target - t) > 0:
            if steps >= max_steps:
                raise StepSizeUnderflowError("too many steps")
            hs = min(h, abs(target - t))
            hd = direction * hs
            ks = [k1]
            for s in range(1, 7):
                acc = y.copy()
                for j, a in enumerate(_A[s]):
                    if a != 0.0:
                        acc = acc + hd * a * ks[j]
                ks.append(fun(t + _C[s] * hd, acc))
            y_new = y.copy()
            for j in range(6):
                if _B5[j] != 0.0:
                    y_new = y_new + hd * _B5[j] * ks[j]
            err = np.zeros_like(y)
            for j in range(7):
                err = err + hd * _E[j] * ks[j]
            scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
            ratio = float(np.max(np.abs(err) / scale)) if err.size else 0.0
            if ratio <= 1.0:
                t = target if hs == abs(target - t) else t + hd
                y = y_new
                k1 = ks[6]
                steps += 1
                if on_step is not None:
                    on_step(t, y)
                factor = 5.0 if ratio == 0.0 else min(5.0, max(0.2, 0.9 * ratio ** -0.2))
                if hs == h or factor < 1.0:
                    h = hs * factor
            else:
                h = hs * max(0.2, 0.9 * ratio ** -0.2)
            if h < 1e-14 * max(1.0, abs(t)):
                raise StepSizeUnderflowError(f"step size underflow at t={t}")
        out[idx] = y
    return out
