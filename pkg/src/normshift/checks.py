"""Scenario checks: each one computes residuals, compares them with thresholds
and returns a JSON-ready result.  CSV side outputs go to the output directory.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .config import CHECK_NAMES, Scenario
from .dynamics import conservation_deviation, conservation_residual, integrate
from .errors import ConfigError, IncompatibleSectionError
from .field import (
    A_from_omega, PhaseState, force_from_A, force_from_omega, force_from_pair,
    random_states, relative_error, scalar_A_from_pair, scalar_A_function,
)
from .geometry import box_grid
from .pair import gauge_transform
from .pfaff import (
    COMPATIBILITY_THRESHOLD, invert_to_W, line_integral_W, path_independence_check,
    reconstructed_section, solve_cauchy,
)
from .section import (
    CovectorField, closedness_sweep, normalizing_sweep, omega_closedness_sweep,
    omega_from_section,
)
from .shift import HypersurfacePatch, normal_shift

__all__ = ["run_check", "CHECKS", "DEFAULT_GAUGES"]

CARDANO = "(w/2 + sqrt(w^2/4 + 1/27))^(1/3) - 1/(3*(w/2 + sqrt(w^2/4 + 1/27))^(1/3))"
DEFAULT_GAUGES = [["2*w", "w/2"], ["w^3 + w", CARDANO], ["exp(w)", "log(w)"]]
ROUNDOFF_FLOOR = 1e-12


class Result:
    """Accumulates metrics and threshold comparisons for one check."""

    def __init__(self, scale):
        self.scale = scale
        self.metrics = {}
        self.thresholds = {}
        self.failures = []

    def upper(self, key, value, bound, label=None):
        bound = bound * self.scale
        self.metrics[key] = _clean(value)
        self.thresholds[key] = {"max": bound}
        if not value < bound:
            self.failures.append(f"{label or key} = {value:.3e} exceeds {bound:.3e}")

    def lower(self, key, value, bound, label=None):
        bound = bound / self.scale
        self.metrics[key] = _clean(value)
        self.thresholds[key] = {"min": bound}
        if not value > bound:
            self.failures.append(f"{label or key} = {value:.3e} is not above {bound:.3e}")

    def info(self, key, value):
        self.metrics[key] = _clean(value)

    def to_dict(self):
        return {"passed": not self.failures, "metrics": self.metrics,
                "thresholds": self.thresholds, "failures": self.failures}


def _clean(value):
    """JSON-safe copy: numpy scalars to Python, NaN/inf to None."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_clean(v) for v in value]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if np.isfinite(value) else None
    return value


def _rng(scenario: Scenario, name: str):
    return np.random.default_rng([scenario.seed, CHECK_NAMES.index(name)])


def _need_pair(scenario, name):
    if scenario.pair is None:
        raise ConfigError(f"checks.{name}: requires a [pair] generator")
    return scenario.pair


def _states(scenario, name, opts):
    pair = scenario.pair
    return random_states(scenario.chart, pair.v_range, int(opts.get("states", 100)),
                         _rng(scenario, name), float(opts.get("margin", 0.1)))


def _write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(x) for x in row])


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


# ---------------------------------------------------------------------------


def check_field(scenario: Scenario, opts: dict, scale: float, out: Path | None) -> dict:
    pair = _need_pair(scenario, "field")
    chart = scenario.chart
    res = Result(scale)
    states = _states(scenario, "field", opts)
    forces = [force_from_pair(pair, s) for s in states]
    A_fn = scalar_A_function(pair)
    ansatz = max(relative_error(force_from_A(chart, A_fn, s).covariant, F.covariant)
                 for s, F in zip(states, forces))
    res.upper("ansatz_round_trip", ansatz, float(opts.get("ansatz_tolerance", 1e-8)),
              "scalar ansatz round trip")
    A0 = [scalar_A_from_pair(pair, s) for s in states]
    gauge_errors = {}
    for rho, rho_inv in opts.get("gauges", DEFAULT_GAUGES):
        gp = gauge_transform(pair, rho, rho_inv)
        eA = max(relative_error(scalar_A_from_pair(gp, s), a) for s, a in zip(states, A0))
        eF = max(relative_error(force_from_pair(gp, s).covariant, F.covariant)
                 for s, F in zip(states, forces))
        gauge_errors[rho] = max(eA, eF)
    worst = max(gauge_errors.values()) if gauge_errors else 0.0
    res.info("gauge_errors", gauge_errors)
    res.upper("gauge_invariance", worst, float(opts.get("gauge_tolerance", 1e-9)),
              "gauge invariance")
    res.info("states", len(states))
    if "x" in opts and "vel" in opts:
        s = PhaseState(opts["x"], opts["vel"])
        F = force_from_pair(pair, s)
        res.info("probe", {"x": s.x.tolist(), "vel": s.vel.tolist(),
                           "F_covariant": F.covariant.tolist(),
                           "F_contravariant": F.contravariant.tolist(),
                           "A": scalar_A_from_pair(pair, s)})
    if out is not None:
        n = chart.n
        header = ([f"x{i + 1}" for i in range(n)] + [f"vel{i + 1}" for i in range(n)]
                  + [f"F_{i + 1}" for i in range(n)] + ["A"])
        _write_csv(out / "field.csv", header,
                   [list(s.x) + list(s.vel) + list(F.covariant) + [a]
                    for s, F, a in zip(states, forces, A0)])
    return res.to_dict()


def check_trajectory(scenario: Scenario, opts: dict, scale: float, out: Path | None) -> dict:
    pair = _need_pair(scenario, "trajectory")
    chart = scenario.chart
    res = Result(scale)
    dt = float(opts.get("dt", 1e-3))
    t_end = float(opts.get("t_end", 1.0))
    if "x0" in opts and "v0" in opts:
        X0 = np.atleast_2d(np.asarray(opts["x0"], dtype=float))
        V0 = np.atleast_2d(np.asarray(opts["v0"], dtype=float))
    else:
        states = random_states(chart, pair.v_range, int(opts.get("count", 20)),
                               _rng(scenario, "trajectory"), float(opts.get("margin", 0.25)))
        X0 = np.array([s.x for s in states])
        V0 = np.array([s.vel for s in states])
    method = opts.get("method", "rk4")
    rec = integrate(chart, pair, X0, V0, (0.0, t_end), dt, method=method)
    residual = conservation_residual(rec, pair)
    res.upper("conservation_residual", residual, float(opts.get("tolerance", 1e-7)),
              "conservation residual")
    res.info("trajectories", int(rec.batch))
    res.info("halted", [{"trajectory": int(b), "t": float(rec.t[rec.halt_index[b]]),
                         "reason": rec.halt_reason[b]} for b in np.flatnonzero(rec.halted)])
    if rec.halted.any() and not opts.get("allow_halts", False):
        res.failures.append(f"{int(rec.halted.sum())} of {rec.batch} trajectories halted "
                            f"before t={t_end:g}")
    if opts.get("order_check", False):
        coarse = conservation_residual(
            integrate(chart, pair, X0, V0, (0.0, t_end), 2 * dt, method="rk4"), pair)
        ratio = coarse / residual if residual > 0 else float("inf")
        res.info("residual_double_step", coarse)
        if max(coarse, residual) < ROUNDOFF_FLOOR:
            res.info("order_ratio", ratio)
            res.info("order_check", "roundoff-limited")
        else:
            res.lower("order_ratio", ratio, float(opts.get("order_ratio", 8.0)),
                      "step-halving improvement")
    if out is not None:
        n = chart.n
        dev = conservation_deviation(rec, pair)
        header = (["trajectory", "t"] + [f"x{i + 1}" for i in range(n)]
                  + [f"v{i + 1}" for i in range(n)] + ["speed", "W", "deviation"])
        rows = []
        stride = max(1, int(opts.get("csv_stride", 10)))
        for b in range(rec.batch):
            for k in range(0, len(rec.t), stride):
                if np.isfinite(rec.speed[k, b]):
                    rows.append([b, rec.t[k], *rec.x[k, b], *rec.vel[k, b],
                                 rec.speed[k, b], rec.W[k, b], dev[k, b]])
        _write_csv(out / "trajectory.csv", header, rows)
    return res.to_dict()


def _patch(scenario, opts):
    n = scenario.chart.n
    emb = opts.get("embedding")
    if not isinstance(emb, list) or len(emb) != n:
        raise ConfigError(f"checks.shift.embedding: expected {n} expressions in u1..u{n - 1}")
    return HypersurfacePatch([str(e) for e in emb], opts.get("lo", -0.5), opts.get("hi", 0.5),
                             int(opts.get("resolution", 21)), opts.get("reference"),
                             int(opts.get("orientation", 1)))


def check_shift(scenario: Scenario, opts: dict, scale: float, out: Path | None) -> dict:
    pair = _need_pair(scenario, "shift")
    chart = scenario.chart
    res = Result(scale)
    patch = _patch(scenario, opts)
    dt = float(opts.get("dt", 1e-3))
    frames = int(opts.get("frames", 11))
    t_grid = np.round(np.linspace(0.0, float(opts.get("t_end", 0.5)), frames) / dt) * dt
    expect = opts.get("expect", "normal")
    if expect not in ("normal", "non-normal"):
        raise ConfigError("checks.shift.expect: 'normal' or 'non-normal'")
    result = normal_shift(chart, pair, patch, opts.get("w0"), t_grid, dt,
                          speeds=opts.get("speeds"))
    tol = float(opts.get("tolerance", 1e-4 if expect == "normal" else 1e-2))
    if expect == "normal":
        res.upper("max_residual", result.max_residual, tol, "orthogonality residual")
        res.upper("max_w_deviation", result.max_w_deviation,
                  float(opts.get("w_tolerance", 1e-6)), "W deviation across the front")
    else:
        res.lower("max_residual", result.max_residual, tol, "orthogonality residual")
        res.info("max_w_deviation", result.max_w_deviation)
    res.info("w0", result.w0)
    res.info("initial_residual", float(np.nanmax(np.abs(result.R[:, 0]))))
    res.info("residual_vs_t", [[float(t), r] for t, r in zip(result.t, result.residual_vs_t())])
    res.info("halted", result.halted)
    if opts.get("refinement_check", False):
        fine = normal_shift(chart, pair, patch.refined(), result.w0, t_grid, dt,
                            speeds=opts.get("speeds"))
        ratio = fine.max_residual / max(result.max_residual, ROUNDOFF_FLOOR)
        res.info("fine_max_residual", fine.max_residual)
        if max(fine.max_residual, result.max_residual) < ROUNDOFF_FLOOR:
            res.info("refinement_ratio", ratio)
        else:
            res.upper("refinement_ratio", ratio, 2.0, "grid refinement growth")
    if out is not None:
        n, r = chart.n, patch.dim
        header = ([f"u{a + 1}" for a in range(r)] + [f"x{i + 1}" for i in range(n)]
                  + [f"R{a + 1}" for a in range(r)])
        for k, t in enumerate(result.t):
            rows = [list(result.u[p]) + list(result.points[k, p]) + list(result.R[p, k])
                    for p in range(len(result.u))]
            _write_csv(out / f"shift_t{k:03d}.csv", header, rows)
    return res.to_dict()


def check_section(scenario: Scenario, opts: dict, scale: float, out: Path | None) -> dict:
    res = Result(scale)
    k = int(opts.get("points_per_axis", 5))
    tol = float(opts.get("tolerance", 1e-9))
    sweep = closedness_sweep(scenario.b, points_per_axis=k)
    label = "closedness residual"
    if sweep.index:
        label += " (i,j)=({},{})".format(*(i + 1 for i in sweep.index))
    res.upper("closedness", sweep.max_abs, tol, label)
    res.info("closedness_at", sweep.to_dict())
    if scenario.a is not None:
        ns = normalizing_sweep(scenario.b, scenario.a, points_per_axis=k)
        res.upper("normalizing", ns.max_abs, tol,
                  "normalizing residual (i)=({})".format(ns.index[0] + 1))
        res.info("normalizing_at", ns.to_dict())
    if "probe" in opts:
        pr = closedness_sweep(scenario.b, np.atleast_2d(np.asarray(opts["probe"], dtype=float)))
        res.info("probe", pr.to_dict())
    return res.to_dict()


def check_recover_w(scenario: Scenario, opts: dict, scale: float, out: Path | None) -> dict:
    res = Result(scale)
    b = scenario.b
    chart = scenario.chart
    p0 = opts.get("p0")
    margin = float(opts.get("margin", 0.1))
    vr = opts.get("v_range", b.v_range)
    width = chart.hi - chart.lo
    lo = np.append(chart.lo + margin * width, vr[0])
    hi = np.append(chart.hi - margin * width, vr[1])
    probes = np.asarray(opts.get("probes", box_grid(lo, hi, 2)[::3].tolist()), dtype=float)
    gap_tol = float(opts.get("gap_tolerance", 1e-8))
    try:
        sol = solve_cauchy(b, p0, check_compatibility=True)
    except IncompatibleSectionError as exc:
        sol = solve_cauchy(b, p0, check_compatibility=False)
        gap = path_independence_check(sol, probes[:, :-1], probes[:, -1])
        res.failures.append(f"incompatible section: {exc}")
        res.info("compatible", False)
        res.info("path_gap", gap)
        res.thresholds["compatibility"] = {"max": COMPATIBILITY_THRESHOLD}
        return res.to_dict()
    res.info("compatible", True)
    gap = path_independence_check(sol, probes[:, :-1], probes[:, -1])
    res.upper("path_gap", gap, gap_tol, "path-independence gap")
    Q = box_grid(lo, hi, int(opts.get("points_per_axis", 5)))
    rebuilt = reconstructed_section(sol, Q, float(opts.get("fd_step", 1e-4)))
    exact = np.column_stack([np.broadcast_to(np.asarray(c, dtype=float), (len(Q),))
                             for c in b.components(list(Q.T))])
    err = np.abs(rebuilt - exact)
    res.upper("reconstruction_error", float(err.max()), float(opts.get("tolerance", 1e-7)),
              "reconstructed section error")
    res.info("grid_points", len(Q))
    if out is not None:
        W = invert_to_W(sol, Q[:, :-1], Q[:, -1])
        n = chart.n
        _write_csv(out / "recover_w.csv",
                   [f"x{i + 1}" for i in range(n)] + ["v", "W_reconstructed"],
                   [list(q) + [w] for q, w in zip(Q, W)])
    return res.to_dict()


def check_round_trip(scenario: Scenario, opts: dict, scale: float, out: Path | None) -> dict:
    res = Result(scale)
    tol = float(opts.get("tolerance", 1e-9))
    k = int(opts.get("points_per_axis", 5))
    chart = scenario.chart
    if scenario.omega is not None:
        omega = scenario.omega
    elif scenario.a is not None:
        omega = omega_from_section(scenario.b, scenario.a, k)
    else:
        raise ConfigError("checks.round_trip: needs a normalizing scalar a or an omega generator")
    sweep = omega_closedness_sweep(omega, points_per_axis=k)
    res.upper("omega_closedness", sweep.max_abs, tol, "omega closedness residual")
    pair = scenario.pair
    if pair is None:
        return res.to_dict()

    def dW(q):
        W, grad, wv = pair.partials_generic(q)
        return list(grad) + [wv]

    dw = CovectorField(dW, chart, pair.v_range)
    width = chart.hi - chart.lo
    c = chart.lo + 0.5 * width
    vr = pair.v_range
    q0 = np.append(chart.lo + 0.3 * width, vr[0] + 0.25 * (vr[1] - vr[0]))
    q1 = np.append(chart.hi - 0.3 * width, vr[0] + 0.75 * (vr[1] - vr[0]))
    corner = q0.copy()
    corner[0] = q1[0]
    mid = np.append(c, q0[-1])
    straight = line_integral_W(dw, [q0, q1])
    bent = line_integral_W(dw, [q0, corner, mid, q1])
    exact = pair.W_generic(list(q1)) - pair.W_generic(list(q0))
    res.upper("line_integral_error", abs(straight - exact), tol, "line integral error")
    res.upper("line_integral_path_gap", abs(straight - bent), tol, "line integral path gap")
    states = _states(scenario, "round_trip", opts)
    errF = max(relative_error(force_from_omega(chart, omega, s).covariant,
                              force_from_pair(pair, s).covariant) for s in states)
    errA = max(relative_error(A_from_omega(chart, omega, s), scalar_A_from_pair(pair, s))
               for s in states)
    res.upper("omega_force_error", max(errF, errA), tol, "omega force mismatch")
    return res.to_dict()


CHECKS = {
    "field": check_field,
    "trajectory": check_trajectory,
    "shift": check_shift,
    "section": check_section,
    "recover_w": check_recover_w,
    "round_trip": check_round_trip,
}


def run_check(name: str, scenario: Scenario, scale=1.0, out: Path | None = None) -> dict:
    opts = scenario.checks.get(name, {})
    return CHECKS[name](scenario, opts, scale, out)
