import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from normshift import _accel, kernels
from normshift.errors import DomainError
from normshift.expr import compile_tape, parse

pytestmark = pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba not installed")

TAPE = compile_tape([parse("x1*v + sin(x1)^2"), parse("exp(-x2)*v^3 / (2 + cos(x1))"),
                     parse("sqrt(v) * log(v) + tanh(x1 - x2) + v^x1")], ["x1", "x2", "v"])


def _batch(seed, B=64, n=3):
    r = np.random.default_rng(seed)
    X = r.uniform(-1, 1, size=(B, n))
    X[:, -1] = r.uniform(0.5, 2.0, size=B)
    return X


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1))
def test_tape_backends_agree(seed):
    X = _batch(seed)
    a = kernels.tape_jet_numba(TAPE, X)
    b = kernels.tape_jet_numpy(TAPE, X)
    for x, y in zip(a, b):
        np.testing.assert_allclose(x, y, rtol=1e-13, atol=1e-14)


@settings(max_examples=30)
@given(st.integers(0, 2**32 - 1))
def test_geometry_backends_agree(seed):
    r = np.random.default_rng(seed)
    B, n = 32, 3
    M = r.normal(size=(B, n, n))
    g = M @ np.swapaxes(M, 1, 2) + n * np.eye(n)
    dg = r.normal(size=(B, n, n, n))
    dg = 0.5 * (dg + np.swapaxes(dg, 1, 2))
    ginv = np.linalg.inv(g)
    np.testing.assert_allclose(kernels.christoffel_numba(ginv, dg),
                               kernels.christoffel_numpy(ginv, dg), rtol=1e-12, atol=1e-13)
    gamma = kernels.christoffel_numpy(ginv, dg)
    vel = r.normal(size=(B, n))
    np.testing.assert_allclose(kernels.connection_term_numba(gamma, vel),
                               kernels.connection_term_numpy(gamma, vel), rtol=1e-12, atol=1e-13)
    grad = r.normal(size=(B, n))
    wv = r.uniform(0.5, 2.0, size=B)
    h = r.normal(size=B)
    for x, y in zip(kernels.pair_force_numba(g, vel, grad, wv, h),
                    kernels.pair_force_numpy(g, vel, grad, wv, h)):
        np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-13)
    tang = r.normal(size=(B, 2, n))
    np.testing.assert_allclose(kernels.orthogonality_numba(g, vel, tang),
                               kernels.orthogonality_numpy(g, vel, tang), rtol=1e-12, atol=1e-13)


@pytest.mark.parametrize("jet", [kernels.tape_jet_numba, kernels.tape_jet_numpy])
@pytest.mark.parametrize("text,point", [("log(x1)", [0.0]), ("1/x1", [0.0]),
                                        ("sqrt(x1)", [-1.0]), ("x1^0.5", [-1.0])])
def test_tape_domain_errors(jet, text, point):
    tape = compile_tape([parse("1 + " + text)], ["x1"])
    with pytest.raises(DomainError) as info:
        jet(tape, np.array([[0.5], point]))
    assert info.value.subexpression == str(parse(text))


def test_christoffel_symmetry_numpy():
    r = np.random.default_rng(0)
    dg = r.normal(size=(5, 3, 3, 3))
    dg = 0.5 * (dg + np.swapaxes(dg, 1, 2))
    G = kernels.christoffel_numpy(np.broadcast_to(np.eye(3), (5, 3, 3)), dg)
    np.testing.assert_allclose(G, np.swapaxes(G, 2, 3), atol=1e-15)


@pytest.mark.parametrize("flag,expected", [("0", "False"), ("off", "False"), ("1", "True")])
def test_env_flag_selects_backend(flag, expected):
    env = dict(os.environ, NORMSHIFT_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", "from normshift import _accel; print(_accel.USE_NUMBA)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == expected


def test_numpy_fallback_runs_a_scenario_path():
    code = ("import numpy as np\n"
            "from normshift.geometry import conformal\n"
            "from normshift.pair import GeneratingPair\n"
            "from normshift.dynamics import integrate, conservation_residual\n"
            "c = conformal(3, 'x1', -2, 2)\n"
            "p = GeneratingPair('1', 'x1 + v', c, (0.5, 1.5))\n"
            "r = integrate(c, p, [0, 0, 0], [0.3, 0.5, 0.2], (0, 0.2), 1e-3)\n"
            "print(repr(float(r.x[-1, 0, 0])), conservation_residual(r, p) < 1e-9)\n")
    outs = []
    for flag in ("0", "1"):
        env = dict(os.environ, NORMSHIFT_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                             text=True, check=True)
        outs.append(res.stdout.split())
    assert outs[0][1] == outs[1][1] == "True"
    assert abs(float(outs[0][0]) - float(outs[1][0])) < 1e-13
