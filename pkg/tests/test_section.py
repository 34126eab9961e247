import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from normshift.errors import TransversalityError, VanishingNormalizationError
from normshift.geometry import ChartTransition, euclidean
from normshift.pair import GeneratingPair
from normshift.section import (
    CovectorField, NormalizingField, ProjectiveSectionField, closedness_residual,
    closedness_sweep, frame_fields, integrating_factor_residual, lie_bracket,
    normalizing_residual, normalizing_sweep, omega_closedness_residual,
    omega_closedness_sweep, omega_from_section, section_from_omega, section_from_pair,
    transform_section, transformed_section,
)

E3 = euclidean(3, -1, 1)
Q1 = [0.3, -0.4, 0.2, 1.3]


def _random_q(rng, count=100):
    return [list(rng.uniform(-1, 1, 3)) + [rng.uniform(0.5, 2.0)] for _ in range(count)]


@pytest.mark.parametrize("h,W,b,a", [
    ("1", "v", lambda q: [0, 0, 0], lambda q: 1.0),
    ("0", "x1 + v", lambda q: [-1, 0, 0], lambda q: 0.0),
    ("w", "v*exp(-x1)", lambda q: [q[3], 0, 0], lambda q: q[3]),
])
def test_section_from_pair_examples(h, W, b, a, rng):
    bs, as_ = section_from_pair(GeneratingPair(h, W, E3))
    for q in _random_q(rng, 10):
        np.testing.assert_allclose(bs.at(q), b(q), atol=1e-14)
        assert as_.value(q) == pytest.approx(a(q), abs=1e-14)


def test_constant_section_is_closed():
    b = ProjectiveSectionField(["1", "-2", "0.5"], E3)
    for i in range(3):
        for j in range(3):
            assert closedness_residual(b, Q1, i, j) == 0.0


def test_incompatible_section():
    b = ProjectiveSectionField(["x2", "0", "0"], E3)
    rng = np.random.default_rng(1)
    for q in _random_q(rng, 10):
        assert closedness_residual(b, q, 0, 1) == pytest.approx(1.0)
        assert closedness_residual(b, q, 1, 0) == pytest.approx(-1.0)
    sweep = closedness_sweep(b)
    assert sweep.index == (0, 1)
    assert sweep.to_dict()["index"] == [1, 2]
    assert sweep.max_abs == pytest.approx(1.0)


PAIRS = [("1", "x1 + v"), ("w", "v*exp(-x1)"), ("1 + w^2/4", "x1 + v + x2*x3*v/4"),
         ("sin(w) + 2", "v*(1 + x1^2/4) + x2*x3")]


@pytest.mark.parametrize("h,W", PAIRS)
def test_pair_sections_satisfy_both_systems(h, W, rng):
    b, a = section_from_pair(GeneratingPair(h, W, E3))
    Q = np.array(_random_q(rng))
    assert closedness_sweep(b, Q).max_abs < 1e-9
    assert normalizing_sweep(b, a, Q).max_abs < 1e-9
    omega = omega_from_section(b, a)
    assert omega_closedness_sweep(omega, Q).max_abs < 1e-9


@settings(max_examples=25)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.2, 1), st.floats(-0.5, 0.5))
def test_sections_from_random_pairs_are_closed(c1, c2, c3, c4):
    W = f"v*exp({c1}*x1) + {c2}*x2*x3 + {c3}*v^2 + {c4}*sin(x1 + v)"
    pair = GeneratingPair(f"{c4}*w + 1", W, E3, (0.5, 1.5))
    b, a = section_from_pair(pair)
    Q = b.grid(3)
    assert closedness_sweep(b, Q).max_abs < 1e-9
    assert normalizing_sweep(b, a, Q).max_abs < 1e-9


def test_normalizing_examples():
    b = ProjectiveSectionField(["x2", "v", "0"], E3)
    assert all(normalizing_residual(b, NormalizingField("0", E3), Q1, i) == 0 for i in range(3))
    b0 = ProjectiveSectionField(["0", "0", "0"], E3)
    assert all(normalizing_residual(b0, NormalizingField("v", E3), Q1, i) == 0 for i in range(3))


def test_omega_from_section_examples():
    one = NormalizingField("1", E3)
    w = omega_from_section(ProjectiveSectionField(["0", "0", "0"], E3), one)
    np.testing.assert_array_equal(w.at(Q1), [0, 0, 0, 1])
    w = omega_from_section(ProjectiveSectionField(["-1", "0", "0"], E3), one)
    np.testing.assert_array_equal(w.at(Q1), [1, 0, 0, 1])
    assert omega_closedness_sweep(w).max_abs == 0.0


def test_omega_from_section_rejects_vanishing_a():
    with pytest.raises(VanishingNormalizationError):
        omega_from_section(ProjectiveSectionField(["0", "0", "0"], E3), NormalizingField("x1", E3))


def test_omega_closedness_examples():
    exact = CovectorField(["cos(x1)*v", "2*x2", "0", "sin(x1)"], E3)  # d(v sin x1 + x2^2)
    assert omega_closedness_sweep(exact).max_abs < 1e-15
    bad = CovectorField(["-x2", "0", "0", "1"], E3)
    # d_2 w_1 - d_1 w_2 = -1, so the pair (1,2) is nonzero in either order
    assert omega_closedness_residual(bad, Q1, 0, 1) == pytest.approx(-1.0)
    assert omega_closedness_residual(bad, Q1, 1, 0) == pytest.approx(1.0)


@settings(max_examples=25)
@given(st.floats(0.2, 3))
def test_section_from_omega_is_scale_invariant(alpha):
    omega = CovectorField(["cos(x1)*v", "2*x2", "x3", "sin(x1) + 2"], E3)
    b1 = section_from_omega(omega)
    b2 = section_from_omega(omega.scaled(f"{alpha}*(1 + v^2)"))
    np.testing.assert_allclose(b1.at(Q1), b2.at(Q1), rtol=1e-13)


def test_section_from_omega_transversality():
    b = section_from_omega(CovectorField(["1", "0", "0", "x1"], E3))
    with pytest.raises(TransversalityError):
        b.at([0.0, 0.0, 0.0, 1.0])


def test_integrating_factor_examples():
    b0 = ProjectiveSectionField(["0", "0", "0"], E3)
    assert integrating_factor_residual("1", b0, Q1, 0) == 0.0
    b = ProjectiveSectionField(["-1", "0", "0"], E3)
    # phi = C(W) W_v with C = 1 and W = x1 + v
    assert abs(integrating_factor_residual("1", b, Q1, 0)) < 1e-10
    assert integrating_factor_residual("x1", b, Q1, 0) == pytest.approx(1.0)


@pytest.mark.parametrize("C", ["1", "w", "exp(-w)"])
def test_integrating_factor_family(C, rng):
    pair = GeneratingPair("w", "v*exp(-x1) + x2*v/4", E3)
    b, _ = section_from_pair(pair)
    from normshift.expr import evaluate, parse
    Ce = parse(C, ["w"])

    def phi(q):
        W, _, wv = pair.partials_generic(q)
        return evaluate(Ce, {"w": W}) * wv

    for q in _random_q(rng, 10):
        for i in range(3):
            assert abs(integrating_factor_residual(phi, b, q, i)) < 1e-10


def test_lie_bracket_measures_closedness(rng):
    b = ProjectiveSectionField(["x2*v", "sin(x3) + v^2", "x1"], E3)
    L = frame_fields(b)
    for q in _random_q(rng, 10):
        for i in range(3):
            for j in range(3):
                br = lie_bracket(L[i], L[j], q)
                np.testing.assert_allclose(br[:3], 0, atol=1e-15)
                assert br[3] == pytest.approx(-closedness_residual(b, q, i, j), abs=1e-12)


def test_transform_section_identity():
    ident = ChartTransition(["x1", "x2", "x3"], ["x1", "x2", "x3"], -1, 1)
    b = ProjectiveSectionField(["x2*v", "x3", "1"], E3)
    np.testing.assert_allclose(transform_section(b, ident, Q1), b.at(Q1), atol=1e-15)


def test_transform_section_rotation():
    rot = ChartTransition(["x2", "-x1", "x3"], ["-x2", "x1", "x3"], -1, 1)
    b = ProjectiveSectionField(["-1", "0", "0"], E3)
    np.testing.assert_allclose(transform_section(b, rot, Q1), [0, 1, 0], atol=1e-15)


def test_transformed_section_stays_closed(rng):
    rot = ChartTransition(["x2", "-x1", "x3"], ["-x2", "x1", "x3"], -1, 1)
    b, _ = section_from_pair(GeneratingPair("w", "v*exp(-x1) + x2*v/4", E3))
    bp = transformed_section(b, rot, E3)
    assert closedness_sweep(bp, points_per_axis=3).max_abs < 1e-12
    for q in _random_q(rng, 5):
        xp = list(rot.to_new(q[:3])[0]) + [q[3]]
        np.testing.assert_allclose(bp.at(xp), transform_section(b, rot, q), atol=1e-14)
