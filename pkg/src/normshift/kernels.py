"""Hot numeric kernels, each with a numba and a pure-numpy implementation.

The public functions dispatch on :data:`normshift._accel.USE_NUMBA`; the
``*_numba`` / ``*_numpy`` variants are importable directly so tests and the
benchmark can compare them.
"""

from __future__ import annotations

import numpy as np

from . import _accel
from .errors import DomainError
from .expr import (
    OP_ADD, OP_CONST, OP_COS, OP_DIV, OP_EXP, OP_LOG, OP_MUL, OP_NEG, OP_POW,
    OP_POWC, OP_SIN, OP_SQRT, OP_SUB, OP_TANH, OP_VAR, Tape,
)

# error kinds reported by the tape kernels
ERR_NONE, ERR_DIV, ERR_LOG, ERR_SQRT, ERR_POW = 0, 1, 2, 3, 4
_ERR_TEXT = {
    ERR_DIV: "division by zero",
    ERR_LOG: "log of non-positive value",
    ERR_SQRT: "sqrt of negative value (or its derivative at zero)",
    ERR_POW: "power outside its domain",
}


# ---------------------------------------------------------------------------
# Tape jets: value and gradient w.r.t. every input column


@_accel.njit
def _tape_jet_loop(ops, arg0, arg1, consts, outputs, X, val_out, grad_out, err):
    B, m = X.shape
    L = ops.shape[0]
    val = np.empty(L)
    grad = np.empty((L, m))
    for b in range(B):
        for i in range(L):
            op = ops[i]
            p = arg0[i]
            q = arg1[i]
            if op == OP_CONST:
                val[i] = consts[p]
                for j in range(m):
                    grad[i, j] = 0.0
            elif op == OP_VAR:
                val[i] = X[b, p]
                for j in range(m):
                    grad[i, j] = 0.0
                grad[i, p] = 1.0
            elif op == OP_ADD:
                val[i] = val[p] + val[q]
                for j in range(m):
                    grad[i, j] = grad[p, j] + grad[q, j]
            elif op == OP_SUB:
                val[i] = val[p] - val[q]
                for j in range(m):
                    grad[i, j] = grad[p, j] - grad[q, j]
            elif op == OP_MUL:
                val[i] = val[p] * val[q]
                for j in range(m):
                    grad[i, j] = grad[p, j] * val[q] + val[p] * grad[q, j]
            elif op == OP_DIV:
                d = val[q]
                if d == 0.0:
                    err[0] = 1
                    err[1] = i
                    err[2] = b
                    return
                r = val[p] / d
                val[i] = r
                for j in range(m):
                    grad[i, j] = (grad[p, j] - r * grad[q, j]) / d
            elif op == OP_NEG:
                val[i] = -val[p]
                for j in range(m):
                    grad[i, j] = -grad[p, j]
            elif op == OP_POWC:
                c = consts[q]
                a = val[p]
                integral = c == np.floor(c)
                if (a < 0.0 and not integral) or (a == 0.0 and c < 1.0 and c != 0.0):
                    err[0] = 4
                    err[1] = i
                    err[2] = b
                    return
                if c == 0.0:
                    val[i] = 1.0
                    for j in range(m):
                        grad[i, j] = 0.0
                else:
                    val[i] = a ** c
                    s = c * a ** (c - 1.0)
                    for j in range(m):
                        grad[i, j] = s * grad[p, j]
            elif op == OP_POW:
                a = val[p]
                if a <= 0.0:
                    err[0] = 4
                    err[1] = i
                    err[2] = b
                    return
                la = np.log(a)
                r = a ** val[q]
                val[i] = r
                for j in range(m):
                    grad[i, j] = r * (grad[q, j] * la + val[q] * grad[p, j] / a)
            elif op == OP_SIN:
                val[i] = np.sin(val[p])
                s = np.cos(val[p])
                for j in range(m):
                    grad[i, j] = s * grad[p, j]
            elif op == OP_COS:
                val[i] = np.cos(val[p])
                s = -np.sin(val[p])
                for j in range(m):
                    grad[i, j] = s * grad[p, j]
            elif op == OP_EXP:
                e = np.exp(val[p])
                val[i] = e
                for j in range(m):
                    grad[i, j] = e * grad[p, j]
            elif op == OP_LOG:
                a = val[p]
                if a <= 0.0:
                    err[0] = 2
                    err[1] = i
                    err[2] = b
                    return
                val[i] = np.log(a)
                for j in range(m):
                    grad[i, j] = grad[p, j] / a
            elif op == OP_SQRT:
                a = val[p]
                if a <= 0.0:
                    err[0] = 3
                    err[1] = i
                    err[2] = b
                    return
                s = np.sqrt(a)
                val[i] = s
                for j in range(m):
                    grad[i, j] = grad[p, j] / (2.0 * s)
            else:  # OP_TANH
                t = np.tanh(val[p])
                val[i] = t
                for j in range(m):
                    grad[i, j] = (1.0 - t * t) * grad[p, j]
        for k in range(outputs.shape[0]):
            o = outputs[k]
            val_out[b, k] = val[o]
            for j in range(m):
                grad_out[b, k, j] = grad[o, j]


def _raise_tape_error(tape, kind, instr, point):
    raise DomainError(f"{_ERR_TEXT[kind]} at batch index {point}", tape.labels[instr])


def tape_jet_numba(tape: Tape, X: np.ndarray):
    X = np.ascontiguousarray(X, dtype=np.float64)
    B, m = X.shape
    k = len(tape.outputs)
    val = np.empty((B, k))
    grad = np.empty((B, k, m))
    err = np.zeros(3, dtype=np.int64)
    _tape_jet_loop(tape.ops, tape.arg0, tape.arg1, tape.consts, tape.outputs, X, val, grad, err)
    if err[0]:
        _raise_tape_error(tape, int(err[0]), int(err[1]), int(err[2]))
    return val, grad


def tape_jet_numpy(tape: Tape, X: np.ndarray):
    X = np.asarray(X, dtype=np.float64)
    B, m = X.shape
    vals: list = []
    grads: list = []
    ops, a0, a1, consts = tape.ops, tape.arg0, tape.arg1, tape.consts

    def fail(kind, i, bad):
        _raise_tape_error(tape, kind, i, int(np.flatnonzero(bad)[0]))

    for i in range(len(ops)):
        op, p, q = ops[i], a0[i], a1[i]
        if op == OP_CONST:
            v = np.full(B, consts[p])
            g = np.zeros((B, m))
        elif op == OP_VAR:
            v = X[:, p].copy()
            g = np.zeros((B, m))
            g[:, p] = 1.0
        elif op == OP_ADD:
            v, g = vals[p] + vals[q], grads[p] + grads[q]
        elif op == OP_SUB:
            v, g = vals[p] - vals[q], grads[p] - grads[q]
        elif op == OP_MUL:
            v = vals[p] * vals[q]
            g = grads[p] * vals[q][:, None] + vals[p][:, None] * grads[q]
        elif op == OP_DIV:
            d = vals[q]
            if np.any(d == 0.0):
                fail(ERR_DIV, i, d == 0.0)
            v = vals[p] / d
            g = (grads[p] - v[:, None] * grads[q]) / d[:, None]
        elif op == OP_NEG:
            v, g = -vals[p], -grads[p]
        elif op == OP_POWC:
            c = consts[q]
            a = vals[p]
            bad = ((a < 0.0) & (c != np.floor(c))) | ((a == 0.0) & (c < 1.0) & (c != 0.0))
            if np.any(bad):
                fail(ERR_POW, i, bad)
            if c == 0.0:
                v = np.ones(B)
                g = np.zeros((B, m))
            else:
                v = a ** c
                g = (c * a ** (c - 1.0))[:, None] * grads[p]
        elif op == OP_POW:
            a = vals[p]
            if np.any(a <= 0.0):
                fail(ERR_POW, i, a <= 0.0)
            la = np.log(a)
            v = np.power(a, vals[q])
            g = v[:, None] * (grads[q] * la[:, None] + (vals[q] / a)[:, None] * grads[p])
        elif op == OP_SIN:
            v = np.sin(vals[p])
            g = np.cos(vals[p])[:, None] * grads[p]
        elif op == OP_COS:
            v = np.cos(vals[p])
            g = -np.sin(vals[p])[:, None] * grads[p]
        elif op == OP_EXP:
            v = np.exp(vals[p])
            g = v[:, None] * grads[p]
        elif op == OP_LOG:
            a = vals[p]
            if np.any(a <= 0.0):
                fail(ERR_LOG, i, a <= 0.0)
            v = np.log(a)
            g = grads[p] / a[:, None]
        elif op == OP_SQRT:
            a = vals[p]
            if np.any(a <= 0.0):
                fail(ERR_SQRT, i, a <= 0.0)
            v = np.sqrt(a)
            g = grads[p] / (2.0 * v)[:, None]
        elif op == OP_TANH:
            v = np.tanh(vals[p])
            g = (1.0 - v * v)[:, None] * grads[p]
        else:  # pragma: no cover
            raise ValueError(f"bad opcode {op}")
        vals.append(v)
        grads.append(g)
    val = np.stack([vals[o] for o in tape.outputs], axis=1)
    grad = np.stack([grads[o] for o in tape.outputs], axis=1)
    return val, grad


def tape_jet(tape: Tape, X: np.ndarray):
    """Values ``(B, k)`` and gradients ``(B, k, m)`` of the tape outputs."""
    if _accel.USE_NUMBA:
        return tape_jet_numba(tape, X)
    return tape_jet_numpy(tape, X)


# ---------------------------------------------------------------------------
# Connection: Christoffel symbols and the quadratic velocity term


@_accel.njit
def _christoffel_loop(ginv, dg, out):
    B, n, _ = ginv.shape
    for b in range(B):
        for k in range(n):
            for i in range(n):
                for j in range(i, n):
                    s = 0.0
                    for m in range(n):
                        s += ginv[b, k, m] * (dg[b, m, j, i] + dg[b, m, i, j] - dg[b, i, j, m])
                    out[b, k, i, j] = 0.5 * s
                    out[b, k, j, i] = 0.5 * s


def christoffel_numba(ginv, dg):
    out = np.empty_like(dg)
    _christoffel_loop(np.ascontiguousarray(ginv), np.ascontiguousarray(dg), out)
    return out


def christoffel_numpy(ginv, dg):
    # t[b, m, i, j] = d_i g_mj + d_j g_mi - d_m g_ij
    t = np.einsum("bmji->bmij", dg) + dg - np.einsum("bijm->bmij", dg)
    return 0.5 * np.einsum("bkm,bmij->bkij", ginv, t)


def christoffel(ginv, dg):
    """Gamma[b, k, i, j] from the inverse metric and ``dg[b, i, j, m] = d_m g_ij``."""
    if _accel.USE_NUMBA:
        return christoffel_numba(ginv, dg)
    return christoffel_numpy(ginv, dg)


@_accel.njit
def _quadratic_loop(gamma, vel, out):
    B, n = vel.shape
    for b in range(B):
        for k in range(n):
            s = 0.0
            for i in range(n):
                for j in range(n):
                    s += gamma[b, k, i, j] * vel[b, i] * vel[b, j]
            out[b, k] = s


def connection_term_numba(gamma, vel):
    out = np.empty(vel.shape)
    _quadratic_loop(np.ascontiguousarray(gamma), np.ascontiguousarray(vel), out)
    return out


def connection_term_numpy(gamma, vel):
    return np.einsum("bkij,bi,bj->bk", gamma, vel, vel)


def connection_term(gamma, vel):
    """``sum_ij Gamma^k_ij v^i v^j`` for each batch row."""
    if _accel.USE_NUMBA:
        return connection_term_numba(gamma, vel)
    return connection_term_numpy(gamma, vel)


# ---------------------------------------------------------------------------
# Force assembly from a generating pair


@_accel.njit
def _pair_force_loop(g, vel, grad_w, w_v, h_w, force, accel_a):
    B, n = vel.shape
    lower = np.empty(n)
    for b in range(B):
        s2 = 0.0
        for k in range(n):
            t = 0.0
            for j in range(n):
                t += g[b, k, j] * vel[b, j]
            lower[k] = t
            s2 += t * vel[b, k]
        speed = np.sqrt(s2)
        gn = 0.0
        for i in range(n):
            gn += grad_w[b, i] * vel[b, i]
        gn /= speed
        a = h_w[b] / w_v[b]
        for k in range(n):
            nk = lower[k] / speed
            force[b, k] = a * nk - speed * (2.0 * gn * nk - grad_w[b, k]) / w_v[b]
        accel_a[b] = a - speed * gn / w_v[b]


def pair_force_numba(g, vel, grad_w, w_v, h_w):
    B, n = vel.shape
    force = np.empty((B, n))
    a = np.empty(B)
    _pair_force_loop(np.ascontiguousarray(g), np.ascontiguousarray(vel),
                     np.ascontiguousarray(grad_w), np.ascontiguousarray(w_v),
                     np.ascontiguousarray(h_w), force, a)
    return force, a


def pair_force_numpy(g, vel, grad_w, w_v, h_w):
    lower = np.einsum("bkj,bj->bk", g, vel)
    speed = np.sqrt(np.einsum("bk,bk->b", lower, vel))
    n_low = lower / speed[:, None]
    gn = np.einsum("bi,bi->b", grad_w, vel) / speed
    a = h_w / w_v
    force = a[:, None] * n_low - (speed / w_v)[:, None] * (2.0 * gn[:, None] * n_low - grad_w)
    return force, a - speed * gn / w_v


def pair_force(g, vel, grad_w, w_v, h_w):
    """Covariant force and its velocity projection for a batch of states."""
    if _accel.USE_NUMBA:
        return pair_force_numba(g, vel, grad_w, w_v, h_w)
    return pair_force_numpy(g, vel, grad_w, w_v, h_w)


# ---------------------------------------------------------------------------
# Orthogonality of velocities to front tangents


@_accel.njit
def _orthogonality_loop(g, vel, tangents, out):
    B, r, n = tangents.shape
    for b in range(B):
        vv = 0.0
        for i in range(n):
            for j in range(n):
                vv += g[b, i, j] * vel[b, i] * vel[b, j]
        for a in range(r):
            tt = 0.0
            vt = 0.0
            for i in range(n):
                for j in range(n):
                    tt += g[b, i, j] * tangents[b, a, i] * tangents[b, a, j]
                    vt += g[b, i, j] * vel[b, i] * tangents[b, a, j]
            out[b, a] = vt / np.sqrt(vv * tt)


def orthogonality_numba(g, vel, tangents):
    out = np.empty(tangents.shape[:2])
    _orthogonality_loop(np.ascontiguousarray(g), np.ascontiguousarray(vel),
                        np.ascontiguousarray(tangents), out)
    return out


def orthogonality_numpy(g, vel, tangents):
    vv = np.einsum("bij,bi,bj->b", g, vel, vel)
    tt = np.einsum("bij,bai,baj->ba", g, tangents, tangents)
    vt = np.einsum("bij,bi,baj->ba", g, vel, tangents)
    return vt / np.sqrt(vv[:, None] * tt)


def orthogonality(g, vel, tangents):
    """Cosine ``g(v, tau_a) / (|v| |tau_a|)`` for each batch row and tangent."""
    if _accel.USE_NUMBA:
        return orthogonality_numba(g, vel, tangents)
    return orthogonality_numpy(g, vel, tangents)
