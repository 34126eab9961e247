"""Scenario files: TOML with a mandatory ``version`` and exactly one generator.

A scenario names a chart, one generator (``[pair]``, ``[section]`` or
``[omega]``) and optional ``[checks.<name>]`` blocks.  Validation happens
before anything runs; every problem is reported with its field path.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError, ExprSyntaxError, NormShiftError, UnknownIdentifierError
from .geometry import RiemannianChart, conformal, euclidean
from .pair import GeneratingPair
from .section import (
    CovectorField, NormalizingField, ProjectiveSectionField, section_from_omega,
    section_from_pair,
)

__all__ = ["Scenario", "load_scenario", "parse_scenario", "SUPPORTED_VERSIONS", "CHECK_NAMES"]

SUPPORTED_VERSIONS = (1,)
GENERATORS = ("pair", "section", "omega")
CHECK_NAMES = ("field", "trajectory", "shift", "section", "recover_w", "round_trip")
DEFAULT_V_RANGE = (0.5, 2.0)


@dataclass
class Scenario:
    name: str
    version: int
    seed: int
    chart: RiemannianChart
    generator: str
    pair: GeneratingPair | None
    b: ProjectiveSectionField
    a: NormalizingField | None
    omega: CovectorField | None
    checks: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parse_scenario(data, default_name=path.stem)


def _require(data, key, path, problems, kind=None):
    if key not in data:
        problems.append(f"{path}{key}: missing required field")
        return None
    value = data[key]
    if kind is not None and not isinstance(value, kind):
        problems.append(f"{path}{key}: expected {_kind_name(kind)}")
        return None
    return value


def _kind_name(kind):
    if isinstance(kind, tuple):
        return " or ".join(k.__name__ for k in kind)
    return kind.__name__


def _v_range(block, path, problems):
    vr = block.get("v_range", list(DEFAULT_V_RANGE))
    if (not isinstance(vr, list) or len(vr) != 2
            or not all(isinstance(x, (int, float)) for x in vr) or not 0 < vr[0] < vr[1]):
        problems.append(f"{path}v_range: expected [lo, hi] with 0 < lo < hi")
        return DEFAULT_V_RANGE
    return (float(vr[0]), float(vr[1]))


def _expr_list(block, key, length, path, problems):
    items = _require(block, key, path, problems, list)
    if items is None:
        return None
    if len(items) != length or not all(isinstance(x, (str, int, float)) for x in items):
        problems.append(f"{path}{key}: expected {length} expression strings")
        return None
    return [str(x) for x in items]


def parse_scenario(data: dict, default_name="scenario") -> Scenario:
    """Validate a parsed config and build the chart and generator objects."""
    problems: list[str] = []
    if not isinstance(data, dict):
        raise ConfigError("config root must be a table")
    version = _require(data, "version", "", problems, int)
    if version is not None and version not in SUPPORTED_VERSIONS:
        problems.append(f"version: unsupported value {version}")
    chart_block = _require(data, "chart", "", problems, dict)
    present = [g for g in GENERATORS if g in data]
    if not present:
        problems.append("pair|section|omega: exactly one generator block is required")
    elif len(present) > 1:
        problems.append(f"{'|'.join(present)}: only one generator block is allowed")
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        problems.append("seed: expected a non-negative integer")
        seed = 0
    checks = data.get("checks", {})
    if not isinstance(checks, dict):
        problems.append("checks: expected a table")
        checks = {}
    for key, block in checks.items():
        if key not in CHECK_NAMES:
            problems.append(f"checks.{key}: unknown check (known: {', '.join(CHECK_NAMES)})")
        elif not isinstance(block, dict):
            problems.append(f"checks.{key}: expected a table")
    if problems:
        raise ConfigError("invalid scenario:\n  " + "\n  ".join(problems))

    chart = _build_chart(chart_block, problems)
    if problems:
        raise ConfigError("invalid scenario:\n  " + "\n  ".join(problems))

    gen = present[0]
    block = data[gen]
    if not isinstance(block, dict):
        raise ConfigError(f"{gen}: expected a table")
    path = f"{gen}."
    v_range = _v_range(block, path, problems)
    n = chart.n
    pair = a = omega = None
    try:
        if gen == "pair":
            h = _require(block, "h", path, problems, (str, int, float))
            W = _require(block, "W", path, problems, str)
            if problems:
                raise ConfigError("invalid scenario:\n  " + "\n  ".join(problems))
            pair = GeneratingPair(str(h), W, chart, v_range)
            b, a = section_from_pair(pair)
        elif gen == "section":
            bs = _expr_list(block, "b", n, path, problems)
            if problems:
                raise ConfigError("invalid scenario:\n  " + "\n  ".join(problems))
            b = ProjectiveSectionField(bs, chart, v_range)
            if "a" in block:
                a = NormalizingField(str(block["a"]), chart, v_range)
        else:
            comps = _expr_list(block, "components", n + 1, path, problems)
            if problems:
                raise ConfigError("invalid scenario:\n  " + "\n  ".join(problems))
            omega = CovectorField(comps, chart, v_range)
            b = section_from_omega(omega)
    except (ExprSyntaxError, UnknownIdentifierError) as exc:
        raise ConfigError(f"{gen}: {exc}") from None
    except ConfigError:
        raise
    except NormShiftError as exc:
        raise ConfigError(f"{gen}: {type(exc).__name__}: {exc}") from None
    name = data.get("name", default_name)
    return Scenario(str(name), version, seed, chart, gen, pair, b, a, omega,
                    {k: dict(v) for k, v in checks.items()}, data)


def _build_chart(block, problems) -> RiemannianChart | None:
    kind = block.get("kind", "euclidean")
    lo = block.get("lo", -1.0)
    hi = block.get("hi", 1.0)
    try:
        if kind in ("euclidean", "conformal"):
            n = block.get("n", 3)
            if not isinstance(n, int) or not 2 <= n <= 4:
                problems.append("chart.n: expected an integer in 2..4")
                return None
            if kind == "euclidean":
                return euclidean(n, lo, hi)
            return conformal(n, str(block.get("lambda", "x1")), lo, hi)
        if kind == "custom":
            metric = block.get("metric")
            if (not isinstance(metric, list) or not metric
                    or not all(isinstance(r, list) and len(r) == len(metric) for r in metric)):
                problems.append("chart.metric: expected a square array of expressions")
                return None
            return RiemannianChart([[str(e) for e in row] for row in metric], lo, hi)
        problems.append(f"chart.kind: unknown kind {kind!r} (euclidean, conformal, custom)")
    except (ExprSyntaxError, UnknownIdentifierError) as exc:
        problems.append(f"chart: {exc}")
    except (NormShiftError, ValueError) as exc:
        problems.append(f"chart: {exc}")
    return None
