import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from normshift.errors import OutOfDomainError, SingularMetricError
from normshift.geometry import ChartTransition, RiemannianChart, conformal, euclidean

coord = st.floats(-0.9, 0.9)


def _fd_christoffel(chart, x, h=1e-5):
    """Christoffel symbols from central differences of the metric."""
    n = chart.n
    dg = np.zeros((n, n, n))
    for m in range(n):
        e = np.zeros(n)
        e[m] = h
        dg[:, :, m] = (chart.metric_at(x + e) - chart.metric_at(x - e)) / (2 * h)
    ginv = np.linalg.inv(chart.metric_at(x))
    G = np.zeros((n, n, n))
    for k in range(n):
        for i in range(n):
            for j in range(n):
                G[k, i, j] = 0.5 * sum(ginv[k, l] * (dg[l, i, j] + dg[l, j, i] - dg[i, j, l])
                                       for l in range(n))
    return G


def _conformal_christoffel(dlam):
    n = len(dlam)
    d = np.eye(n)
    return (np.einsum("ki,j->kij", d, dlam) + np.einsum("kj,i->kij", d, dlam)
            - np.einsum("ij,k->kij", d, dlam))


def test_euclidean_christoffel_vanishes(flat3):
    assert np.all(flat3.christoffel_at([0.3, -1.0, 1.5]) == 0.0)


def test_conformal_christoffel_at_origin(conf3):
    G = conf3.christoffel_at([0.0, 0.0, 0.0])
    expected = np.zeros((3, 3, 3))
    expected[0, 0, 0] = 1.0
    expected[0, 1, 1] = expected[0, 2, 2] = -1.0
    expected[1, 0, 1] = expected[1, 1, 0] = 1.0
    expected[2, 0, 2] = expected[2, 2, 0] = 1.0
    np.testing.assert_allclose(G, expected, atol=1e-14)
    np.testing.assert_allclose(_fd_christoffel(conf3, np.zeros(3)), expected, atol=1e-8)


@settings(max_examples=40)
@given(st.lists(coord, min_size=3, max_size=3))
def test_conformal_christoffel_closed_form(x):
    chart = conformal(3, "x1*x2 + 0.5*sin(x3)", -1.0, 1.0)
    x = np.array(x)
    dlam = np.array([x[1], x[0], 0.5 * math.cos(x[2])])
    np.testing.assert_allclose(chart.christoffel_at(x), _conformal_christoffel(dlam),
                               atol=1e-12)


@settings(max_examples=40)
@given(st.lists(coord, min_size=3, max_size=3))
def test_christoffel_symmetric_and_matches_fd(x):
    chart = RiemannianChart([["1 + x2^2", "x1*x2/4", "0"],
                             ["x1*x2/4", "2 + sin(x3)", "0"],
                             ["0", "0", "exp(x1)"]], -1, 1)
    x = np.array(x)
    G = chart.christoffel_at(x)
    np.testing.assert_allclose(G, np.swapaxes(G, 1, 2), atol=1e-15)
    np.testing.assert_allclose(G, _fd_christoffel(chart, x), atol=1e-8)


def test_analytic_christoffel_matches_derived():
    n = 3
    expr = [[[None] * n for _ in range(n)] for _ in range(n)]
    d = np.eye(n)
    for k in range(n):
        for i in range(n):
            for j in range(n):
                # lam = x1, so only d_1 lam = 1 contributes
                c = d[k, i] * (j == 0) + d[k, j] * (i == 0) - d[i, j] * (k == 0)
                expr[k][i][j] = str(c)
    chart = conformal(3, "x1", -1, 1, christoffel=expr)
    X = chart.grid(4)
    np.testing.assert_allclose(chart.christoffel_batch(X), chart.christoffel_batch(X, derived=True),
                               atol=1e-13)


def test_norms(flat3, conf3):
    assert flat3.norm([0.0, 0.0, 0.0], [1.0, 0.0, 0.0]) == 1.0
    x, u = [1.0, 0.0, 0.0], [1.0, 0.0, 0.0]
    assert conf3.norm(x, u) == pytest.approx(math.e, rel=1e-14)
    assert conf3.inner(x, u, u) == pytest.approx(math.e ** 2, rel=1e-14)


@settings(max_examples=30)
@given(st.lists(coord, min_size=3, max_size=3), st.lists(st.floats(-2, 2), min_size=3, max_size=3))
def test_raise_lower_inverse(x, u):
    chart = conformal(3, "x1 - x3/2", -1, 1)
    np.testing.assert_allclose(chart.raise_(x, chart.lower(x, u)), u, atol=1e-12)


def test_out_of_box_is_loud(conf3):
    with pytest.raises(OutOfDomainError):
        conf3.metric_at([1.5, 0.0, 0.0])
    with pytest.raises(OutOfDomainError):
        conf3.christoffel_at([0.0, -1.01, 0.0])


def test_indefinite_metric_rejected():
    with pytest.raises(SingularMetricError):
        RiemannianChart([["1", "0"], ["0", "x1"]], -1, 1)


def test_invalid_boxes():
    with pytest.raises(ValueError):
        euclidean(3, 1.0, -1.0)
    with pytest.raises(ValueError):
        RiemannianChart([["1"]], -1, 1)


def test_rotation_transition():
    rot = ChartTransition(["-x2", "x1", "x3"], ["x2", "-x1", "x3"], -1, 1)
    assert rot.roundtrip_error() < 1e-15
    J = rot.inverse_jacobian([[0.2, 0.1, 0.0]])[0]
    np.testing.assert_allclose(J, [[0, 1, 0], [-1, 0, 0], [0, 0, 1]], atol=1e-15)
    np.testing.assert_allclose(J @ rot.forward_jacobian([[0.1, -0.2, 0.0]])[0], np.eye(3),
                               atol=1e-15)


def test_bad_transition_rejected():
    with pytest.raises(ValueError):
        ChartTransition(["2*x1", "x2"], ["x1", "x2"], -1, 1)
