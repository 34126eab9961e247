import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from normshift.errors import GaugeError, OutOfDomainError, RegularityError
from normshift.geometry import euclidean
from normshift.pair import GeneratingPair, Profile, gauge_transform
from normshift.section import section_from_pair

CUBIC_INV = ("(sqrt(w^2/4 + 1/27) + w/2)^(1/3)"
             " - (sqrt(w^2/4 + 1/27) - w/2)^(1/3)")


@pytest.mark.parametrize("W,x,v,expected", [
    ("v", [0.4, -0.3, 0.2], 2.0, (2.0, [0, 0, 0], 1.0)),
    ("x1 + v", [1.0, 0.0, 0.0], 2.0, (3.0, [1, 0, 0], 1.0)),
    ("v*exp(-x1)", [0.0, 0.0, 0.0], 1.0, (1.0, [-1, 0, 0], 1.0)),
])
def test_w_partials(flat3, W, x, v, expected):
    pair = GeneratingPair("1", W, flat3)
    val, grad, wv = pair.w_partials(x, v)
    assert val == pytest.approx(expected[0], abs=1e-15)
    np.testing.assert_allclose(grad, expected[1], atol=1e-15)
    assert wv == pytest.approx(expected[2], abs=1e-15)


@settings(max_examples=30)
@given(st.lists(st.floats(-1.5, 1.5), min_size=3, max_size=3), st.floats(0.5, 2.0))
def test_w_partials_match_fd(x, v):
    chart = euclidean(3, -2, 2)
    pair = GeneratingPair("w", "v*exp(-x1/4) + x2*x3*v^2/40", chart)
    x = np.array(x)
    _, grad, wv = pair.w_partials(x, v)
    h = 1e-6
    fd = []
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        fd.append((pair.W_value(x + e, v)[0] - pair.W_value(x - e, v)[0]) / (2 * h))
    fd_v = (pair.W_value(x, v + h)[0] - pair.W_value(x, v - h)[0]) / (2 * h)
    np.testing.assert_allclose(grad, fd, atol=1e-8)
    assert wv == pytest.approx(fd_v, abs=1e-8)


def test_batch_and_single_agree(flat3, rng):
    pair = GeneratingPair("1", "v^2 + x2*v + x1*x3", flat3, (2.5, 3.0))
    X = rng.uniform(-1, 1, (20, 3))
    V = rng.uniform(2.5, 3.0, 20)
    W, G, WV = pair.jet(X, V)
    for b in range(20):
        w, g, wv = pair.w_partials(X[b], V[b])
        assert W[b] == pytest.approx(w, rel=1e-15)
        np.testing.assert_allclose(G[b], g, rtol=1e-15)
        assert WV[b] == pytest.approx(wv, rel=1e-15)


def test_regularity_violation(flat3):
    with pytest.raises(RegularityError):
        GeneratingPair("1", "x1", flat3)
    with pytest.raises(RegularityError):
        GeneratingPair("1", "(v - 1)^2", flat3)


def test_negative_speed_rejected(flat3):
    pair = GeneratingPair("1", "v", flat3)
    with pytest.raises(OutOfDomainError):
        pair.jet([[0.0, 0.0, 0.0]], [-1.0])


def test_linear_gauge(flat3):
    pair = GeneratingPair("1", "v", flat3)
    g = gauge_transform(pair, "2*w", "w/2")
    for w in (0.3, 1.0, 7.0):
        assert g.h(w) == pytest.approx(2.0)
    assert g.w_partials([0.1, 0.2, 0.3], 1.25)[0] == pytest.approx(2.5)


def test_identity_gauge(flat3, rng):
    pair = GeneratingPair("w^2 + 1", "x1 + v", flat3)
    g = gauge_transform(pair, "w", "w")
    X = rng.uniform(-1, 1, (10, 3))
    V = rng.uniform(0.5, 2, 10)
    for a, b in zip(pair.jet(X, V), g.jet(X, V)):
        np.testing.assert_array_equal(a, b)
    for w in (0.5, 1.5):
        assert g.h(w) == pytest.approx(pair.h(w), rel=1e-15)


def test_cubic_gauge_inverse(flat3):
    pair = GeneratingPair("1", "x1 + v", flat3)
    g = gauge_transform(pair, "w^3 + w", CUBIC_INV)
    for w in (-1.0, 0.5, 2.0):
        # h~(rho(w)) = rho'(w) for h = 1
        assert g.h(w ** 3 + w) == pytest.approx(3 * w ** 2 + 1, rel=1e-12)


def test_gauge_rejects_non_inverse(flat3):
    pair = GeneratingPair("1", "x1 + v", flat3)
    with pytest.raises(GaugeError):
        gauge_transform(pair, "2*w", "w/3")


def test_gauge_rejects_non_monotone(flat3):
    pair = GeneratingPair("1", "x1 + v", flat3)
    with pytest.raises(GaugeError):
        gauge_transform(pair, "w^2", "sqrt(w)")


@pytest.mark.parametrize("rho,rho_inv", [("2*w", "w/2"), ("w^3 + w", CUBIC_INV),
                                         ("exp(w)", "log(w)")])
def test_section_is_gauge_invariant(rho, rho_inv, rng):
    chart = euclidean(3, -1, 1)
    pair = GeneratingPair("w", "v*exp(-x1) + 0.2*x2*v", chart)
    g = gauge_transform(pair, rho, rho_inv)
    b0, a0 = section_from_pair(pair)
    b1, a1 = section_from_pair(g)
    for _ in range(20):
        q = list(rng.uniform(-1, 1, 3)) + [rng.uniform(0.5, 2.0)]
        np.testing.assert_allclose(b1.at(q), b0.at(q), rtol=1e-12, atol=1e-14)
        # h~(W~)/W~_v = h(W) rho'(W) / (rho'(W) W_v)
        assert a1.value(q) == pytest.approx(a0.value(q), rel=1e-10)


def test_profile_derivative():
    p = Profile("exp(w) + w^2")
    assert p.derivative(1.0) == pytest.approx(math.e + 2)
