import math
import warnings

import numpy as np
import pytest

from normshift.errors import BracketError, RankDeficiencyError
from normshift.geometry import conformal, euclidean
from normshift.pair import GeneratingPair
from normshift.shift import (
    HypersurfacePatch, initial_speeds, normal_shift, solve_initial_speed, unit_normal,
    unit_normals,
)

E3 = euclidean(3, -2, 2)
PLANE = HypersurfacePatch(["0", "u1", "u2"], -0.5, 0.5)
TILTED = HypersurfacePatch(["u1", "u2", "0"], -0.25, 0.25, reference=[0, 0, 1])


def test_plane_normal():
    np.testing.assert_allclose(unit_normal(E3, PLANE, [0.1, 0.2]), [1, 0, 0], atol=1e-15)


@pytest.mark.parametrize("orientation,sign", [(1, 1.0), (-1, -1.0)])
def test_sphere_normal(orientation, sign):
    sphere = HypersurfacePatch(["cos(u1)*cos(u2)", "sin(u1)*cos(u2)", "sin(u2)"], -0.3, 0.3,
                               orientation=orientation)
    np.testing.assert_allclose(unit_normal(E3, sphere, [0, 0]), [sign, 0, 0], atol=1e-15)
    U = sphere.parameter_grid()
    X, _ = sphere.embed(U)
    np.testing.assert_allclose(unit_normals(E3, sphere), sign * X, atol=1e-14)


def test_conformal_normals():
    chart = conformal(3, "x1", -1.5, 1.5)
    n0 = unit_normal(chart, PLANE, [0, 0])
    np.testing.assert_allclose(n0, [1, 0, 0], atol=1e-15)
    shifted = HypersurfacePatch(["1", "u1", "u2"], -0.5, 0.5)
    np.testing.assert_allclose(unit_normal(chart, shifted, [0.2, -0.1]), [math.exp(-1), 0, 0],
                               atol=1e-15)


def test_curved_normal_is_orthogonal_and_unit():
    chart = conformal(3, "x1 + x2/3", -1.5, 1.5)
    patch = HypersurfacePatch(["0.3*u1 + u2^2/4", "u1", "u2"], -0.5, 0.5, resolution=5)
    X, T = patch.embed(patch.parameter_grid())
    N = unit_normals(chart, patch)
    g = chart.metric_batch(X)
    np.testing.assert_allclose(np.einsum("bij,bi,bj->b", g, N, N), 1.0, atol=1e-14)
    np.testing.assert_allclose(np.einsum("bij,bi,baj->ba", g, N, T), 0.0, atol=1e-14)


def test_degenerate_patch():
    flat = HypersurfacePatch(["0", "u1", "u1"], -0.5, 0.5, resolution=3)
    with pytest.raises(RankDeficiencyError):
        unit_normals(E3, flat)


def test_speed_examples():
    pair = GeneratingPair("1", "v", E3)
    np.testing.assert_allclose(initial_speeds(pair, PLANE.embed(PLANE.parameter_grid())[0], 1.0),
                               1.0, atol=1e-12)
    pair = GeneratingPair("0", "x1 + v", E3, (0.5, 2.0))
    assert solve_initial_speed(pair, PLANE, [0.1, -0.3], 1.0) == pytest.approx(1.0, abs=1e-12)
    for u1 in (-0.25, 0.0, 0.2):
        assert solve_initial_speed(pair, TILTED, [u1, 0.1], 1.0) == pytest.approx(1 - u1, abs=1e-12)
    pair = GeneratingPair("w", "v*exp(-x1)", E3, (0.5, 6.0))
    assert solve_initial_speed(pair, PLANE, [0, 0], 2.0) == pytest.approx(2.0, abs=1e-12)
    assert initial_speeds(pair, [[1.0, 0, 0]], 2.0)[0] == pytest.approx(2 * math.e, rel=1e-12)


def test_speed_without_root():
    pair = GeneratingPair("1", "v", E3, (0.5, 2.0))
    with pytest.raises(BracketError):
        initial_speeds(pair, [[0, 0, 0]], 5.0)


def test_multiple_roots_warn():
    pair = GeneratingPair("1", "(v - 1)^2 + x1", E3, (0.5, 2.0), validate=False)
    with pytest.warns(RuntimeWarning, match="several roots"):
        nu = initial_speeds(pair, [[0.0, 0, 0]], 0.09)
    assert nu[0] == pytest.approx(0.7, abs=1e-10)


def test_straight_shift_closed_form():
    pair = GeneratingPair("1", "v", E3)
    res = normal_shift(E3, pair, PLANE, w0=1.0)
    t = res.t
    np.testing.assert_allclose(res.points[:, :, 0], (t + t ** 2 / 2)[:, None] * np.ones(441),
                               atol=1e-10)
    assert res.max_residual < 1e-6
    assert res.max_w_deviation < 1e-10


def test_shift_residual_at_start_is_exact():
    chart = conformal(3, "x1", -1.5, 1.5)
    pair = GeneratingPair("1", "x1 + v", chart, (0.5, 1.5))
    curved = HypersurfacePatch(["0.3*u1 + u2^2/4", "u1", "u2"], -0.5, 0.5, resolution=11)
    res = normal_shift(chart, pair, curved, w0=1.0,
                       t_grid=[0.0, 0.1])
    assert np.max(np.abs(res.R[:, 0])) < 1e-10


def test_linear_w_shift():
    pair = GeneratingPair("0", "x1 + v", E3, (0.5, 2.0))
    res = normal_shift(E3, pair, PLANE, w0=1.0)
    np.testing.assert_allclose(res.speeds, 1.0, atol=1e-12)
    assert res.max_residual < 1e-5
    assert res.max_w_deviation < 1e-6
    assert res.R.shape == (441, 11, 2)


def test_curved_shift_and_negative_control():
    chart = conformal(3, "x1", -1.5, 1.5)
    pair = GeneratingPair("1", "x1 + v", chart, (0.5, 1.5))
    patch = HypersurfacePatch(["0.3*u1", "u1", "u2"], -0.5, 0.5)
    good = normal_shift(chart, pair, patch, w0=1.0)
    assert good.max_residual < 1e-4
    assert good.max_w_deviation < 1e-6
    flat_pair = GeneratingPair("0", "x1 + v", E3, (0.5, 2.0))
    bad = normal_shift(E3, flat_pair, TILTED, speeds=1.0)
    right = normal_shift(E3, flat_pair, TILTED, w0=1.0)
    assert bad.max_residual > 1e-2
    assert bad.max_residual > 100 * right.max_residual
    assert bad.max_w_deviation > 1e-2


def test_refinement_keeps_residual_bounded():
    chart = conformal(3, "x1", -1.5, 1.5)
    pair = GeneratingPair("1", "x1 + v", chart, (0.5, 1.5))
    patch = HypersurfacePatch(["0.3*u1 + u2^2/4", "u1", "u2"], -0.5, 0.5, resolution=11)
    coarse = normal_shift(chart, pair, patch, w0=1.0, t_grid=[0, 0.1, 0.2])
    fine = normal_shift(chart, pair, patch.refined(), w0=1.0, t_grid=[0, 0.1, 0.2])
    assert fine.max_residual < 2 * coarse.max_residual
    assert fine.R.shape[0] == 21 * 21


def test_halted_points_are_reported():
    chart = euclidean(3, -1, 1)
    pair = GeneratingPair("1", "v", chart)
    patch = HypersurfacePatch(["0.9 + 0.05*u1", "u1", "u2"], -0.5, 0.5, resolution=5)
    with pytest.raises(RankDeficiencyError, match="chart exit"):
        normal_shift(chart, pair, patch, w0=1.0, t_grid=[0, 0.5])


def test_report_shape():
    pair = GeneratingPair("1", "v", E3)
    patch = HypersurfacePatch(["0", "u1", "u2"], -0.5, 0.5, resolution=5)
    rep = normal_shift(E3, pair, patch, w0=1.0, t_grid=[0, 0.05, 0.1]).to_report()
    assert rep["w0"] == 1.0 and rep["halted"] == []
    assert [row[0] for row in rep["residual_vs_t"]] == [0.0, 0.05, 0.1]


def test_bad_time_grid():
    pair = GeneratingPair("1", "v", E3)
    with pytest.raises(ValueError):
        normal_shift(E3, pair, PLANE, w0=1.0, t_grid=[0.1, 0.2])
    with pytest.raises(ValueError):
        normal_shift(E3, pair, PLANE, w0=1.0, t_grid=[0, 0.00015])
