"""Command line front end: scenarios in, grids and JSON/CSV reports out.

Exit codes: 0 success, 1 validation error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from . import dimension as dim
from . import frint
from .field import EvalError, ParseError, SampledSurface, as_field
from .fif import (AlphaSpec, DivergenceError, FifSpec, InterpolationData, ResolutionError,
                  SpecError, axis_trace, build, grid_level, knot_values, residual, structured_grid)
from .gridio import GridFileError, read_grid, write_grid
from .net import Net, PartitionError

SCHEMA_VERSION = 1

EXPRESSION_HELP = """\
expressions: numbers, variables x1..x9, constants pi and e, operators
+ - * / ^ (right-assoc) with unary minus, and sin cos exp abs sqrt log.
"""

_number = {"type": "number"}
_expr = {"type": ["string", "number"]}

SCHEMA = {
    "type": "object",
    "required": ["schema_version", "kind", "domain", "level"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "kind": {"enum": ["fif", "alpha"]},
        "domain": {"type": "array", "minItems": 1, "maxItems": 9,
                   "items": {"type": "array", "items": _number, "minItems": 2, "maxItems": 2}},
        "knots": {"type": "array", "items": {"type": "array", "items": _number, "minItems": 3}},
        "M": {"type": "array", "items": {"type": "integer", "minimum": 2}},
        "z": {"type": ["array", "number"]},
        "delta": _number,
        "germ": _expr,
        "base": _expr,
        "scale": _expr,
        "scale_at": {"enum": ["preimage", "image"]},
        "check": {"enum": ["corners", "strict", "none"]},
        "level": {"type": "integer", "minimum": 1, "maximum": 30},
        "tol": {"type": "number", "exclusiveMinimum": 0},
        "seed": {"type": "integer"},
        "dimension": {
            "type": "object",
            "properties": {
                "mesh": {"type": "integer", "minimum": 2},
                "m_min": {"type": "integer", "minimum": 1},
                "m_max": {"type": "integer", "minimum": 1},
                "sigma": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "M1": {"type": "integer", "minimum": 2},
            },
            "additionalProperties": False,
        },
        "frint": {
            "type": "object",
            "properties": {
                "beta": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
                "levels": {"type": "array", "items": {"type": "integer", "minimum": 1}},
                "points_per_cell": {"type": "integer", "minimum": 1},
                "cells": {"type": "array", "items": {"type": "array", "items": {"type": "integer"}}},
                "allow_even": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}


class ScenarioError(ValueError):
    pass


@dataclass
class Scenario:
    raw: dict
    net: Net
    spec: object
    level: int
    tol: float
    seed: int

    @property
    def kind(self) -> str:
        return self.raw["kind"]

    def section(self, name: str) -> dict:
        return dict(self.raw.get(name, {}))


def _path(parts) -> str:
    out = "$"
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def parse_scenario(raw: dict) -> Scenario:
    """Validate a scenario dict and build its net and spec."""
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ScenarioError(f"{_path(exc.absolute_path)}: {exc.message}") from None
    domain = raw["domain"]
    q = len(domain)
    if ("knots" in raw) == ("M" in raw):
        raise ScenarioError("$: give exactly one of 'knots' or 'M'")
    try:
        if "knots" in raw:
            if len(raw["knots"]) != q:
                raise ScenarioError(f"$.knots: {len(raw['knots'])} knot lists for {q} axes")
            net = Net.from_domain_knots(raw["knots"], domain)
        else:
            if len(raw["M"]) != q:
                raise ScenarioError(f"$.M: {len(raw['M'])} counts for {q} axes")
            net = Net.uniform(raw["M"], domain)
    except PartitionError as exc:
        where = "$.knots" if "knots" in raw else "$.domain"
        raise ScenarioError(f"{where}: {exc}") from None
    if raw["kind"] == "fif":
        spec = _fif_spec(raw, net)
    else:
        spec = _alpha_spec(raw, net)
    d = raw.get("dimension", {})
    if d.get("m_min", 1) > d.get("m_max", 1):
        raise ScenarioError("$.dimension.m_min: exceeds m_max")
    fr = raw.get("frint", {})
    if "beta" in fr and len(fr["beta"]) != q:
        raise ScenarioError(f"$.frint.beta: {len(fr['beta'])} orders for {q} axes")
    return Scenario(raw, net, spec, raw["level"], raw.get("tol", 1e-12), raw.get("seed", 0))


def _fif_spec(raw: dict, net: Net) -> FifSpec:
    for key in ("z", "delta"):
        if key not in raw:
            raise ScenarioError(f"$.{key}: required for kind 'fif'")
    z = np.asarray(raw["z"], dtype=float)
    shape = tuple(M + 1 for M in net.Ms)
    if z.shape != shape:
        raise ScenarioError(f"$.z: shape {z.shape} does not match knots {shape}")
    try:
        return FifSpec(InterpolationData(net, z), float(raw["delta"]))
    except (SpecError, ValueError) as exc:
        raise ScenarioError(f"$.delta: {exc}") from None


def _alpha_spec(raw: dict, net: Net) -> AlphaSpec:
    fields = {}
    for key in ("germ", "base", "scale"):
        if key not in raw:
            raise ScenarioError(f"$.{key}: required for kind 'alpha'")
        try:
            f = as_field(raw[key])
        except ParseError as exc:
            raise ScenarioError(f"$.{key}: {exc}") from None
        if f.dim > net.q:
            raise ScenarioError(f"$.{key}: uses x{f.dim} but the box has {net.q} axes")
        fields[key] = f
    try:
        return AlphaSpec(net, fields["germ"], fields["base"], fields["scale"],
                         scale_at=raw.get("scale_at", "preimage"), check=raw.get("check", "corners"))
    except SpecError as exc:
        where = "$.scale" if "alpha" in str(exc) else "$.base"
        raise ScenarioError(f"{where}: {exc}") from None


def load_scenario(path) -> Scenario:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ScenarioError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ScenarioError("$: scenario must be a JSON object")
    return parse_scenario(raw)


def _attach_axes(surface: SampledSurface, sc: Scenario) -> SampledSurface:
    """Re-attach the structured sample axes of the scenario's net to a loaded grid."""
    if surface.q != sc.net.q:
        raise ResolutionError(f"grid has {surface.q} axes, scenario has {sc.net.q}")
    L = grid_level(sc.net, surface.dims)
    axes = [g.coords for g in structured_grid(sc.net, L)]
    return SampledSurface(surface.values, axes, sc.net.domain, L)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, allow_nan=True) + "\n")


def _outdir(args) -> Path:
    if not args.out:
        raise ScenarioError("--out is required for this command")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _grid(args, sc: Scenario) -> SampledSurface:
    if not args.grid:
        raise ScenarioError("--grid is required for this command")
    return _attach_axes(read_grid(args.grid), sc)


# --- commands ----------------------------------------------------------------


def cmd_build(args) -> int:
    sc = load_scenario(args.scenario)
    out = _outdir(args)
    surface, report = build(sc.spec, sc.level, tol=sc.tol)
    write_grid(out / "surface.frgrid", surface)
    info = report.as_dict()
    info["knot_max_error"] = _knot_error(sc, surface)
    if isinstance(sc.spec, AlphaSpec):
        info["corner_mismatch"] = sc.spec.corner_mismatch
    _write_json(out / "build_report.json", info)
    print(f"built {surface.dims} in {report.iterations} iterations, residual {report.residual:.3e}")
    return 0


def _knot_error(sc: Scenario, surface: SampledSurface) -> float:
    got = knot_values(surface, sc.net)
    if isinstance(sc.spec, FifSpec):
        want = sc.spec.data.z
    else:
        want = sc.spec.germ.on_grid([sc.net.denormalize_axis(k, sc.net.knot_coords(k))
                                     for k in range(sc.net.q)])
    return float(np.max(np.abs(got - want)))


def cmd_residual(args) -> int:
    sc = load_scenario(args.scenario)
    surface = _grid(args, sc)
    r = residual(sc.spec, surface)
    ok = r <= 10 * sc.tol
    print(json.dumps({"residual": r, "threshold": 10 * sc.tol, "ok": ok}))
    return 0 if ok else 2


def _dimension_options(sc: Scenario) -> dict:
    d = sc.section("dimension")
    M = d.get("mesh", max(sc.net.Ms))
    return {"mesh": M, "m_min": d.get("m_min", 1), "m_max": d.get("m_max", 4),
            "sigma": d.get("sigma", 1.0), "M1": d.get("M1", max(sc.net.Ms))}


def dimension_pipeline(sc: Scenario, surface: SampledSurface) -> dim.DimensionReport:
    o = _dimension_options(sc)
    levels = list(range(o["m_min"], o["m_max"] + 1))
    counted = dim.resample_for_mesh(surface, o["mesh"], o["m_max"])
    report = dim.measure_dimension(counted, o["mesh"], levels)
    if counted is not surface:
        report.notes.append(f"grid {surface.dims} resampled multilinearly to {counted.dims} "
                            f"for the {o['mesh']}-adic mesh")
    if isinstance(sc.spec, AlphaSpec):
        report.theory = dim.spec_bounds(sc.spec, o["sigma"], o["mesh"], o["M1"])
        report.holder = dim.holder_contraction_check(sc.spec.scale, o["sigma"], sc.net).as_dict()
    else:
        report.notes.append("theoretical bounds apply to alpha-fractal scenarios only")
    return report


def cmd_dim(args) -> int:
    sc = load_scenario(args.scenario)
    surface = _grid(args, sc)
    out = _outdir(args)
    report = dimension_pipeline(sc, surface)
    dim.write_loglog_csv(out / "loglog.csv", report.counts)
    _write_json(out / "dimension_report.json", report.as_dict())
    print(f"fitted slope {report.fit.slope:.4f} +- {report.fit.stderr:.4f}")
    return 0


def cmd_trace(args) -> int:
    sc = load_scenario(args.scenario)
    if not isinstance(sc.spec, AlphaSpec):
        raise ScenarioError("$.kind: trace needs an 'alpha' scenario")
    surface = _grid(args, sc)
    out = _outdir(args)
    if not 1 <= args.axis <= sc.net.q:
        raise ScenarioError(f"--axis {args.axis} outside 1..{sc.net.q}")
    sub, trace = axis_trace(sc.spec, surface, args.axis)
    r = residual(sub, trace)
    write_grid(out / f"trace_axis{args.axis}.frgrid", trace)
    _write_json(out / "trace_report.json", {"axis": args.axis, "samples": len(trace.values),
                                             "induced_residual": r})
    print(f"trace along axis {args.axis}: induced residual {r:.3e}")
    return 0 if r <= 10 * sc.tol else 2


def cmd_frint(args) -> int:
    sc = load_scenario(args.scenario)
    if not isinstance(sc.spec, FifSpec):
        raise ScenarioError("$.kind: frint identity needs a 'fif' scenario")
    surface = _grid(args, sc)
    out = _outdir(args)
    f = sc.section("frint")
    beta = f.get("beta", [1.0] * sc.net.q)
    report = frint.verify_identity(surface, sc.spec, beta, cells=f.get("cells"),
                                   points_per_cell=f.get("points_per_cell", 3),
                                   levels=f.get("levels"), seed=sc.seed,
                                   allow_even=f.get("allow_even", False))
    _write_json(out / "frint_report.json", report.as_dict())
    print(f"max residual per level {report.max_residual}, observed order {report.observed_order}")
    return 0


# --- the two-variable example --------------------------------------------------

FIG1_ALPHAS = (0.1, 0.2, 0.4, 0.5, 0.7, 0.9)
FIG1_GERM = "41*(x2^3 - x1^5)^2 + (x2 - x1^2)^3"


def fig1_scenario(alpha: float, level: int = 5) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "alpha",
        "domain": [[-1.0, 1.0], [-1.0, 1.0]],
        "knots": [[-1.0, -0.5, 0.0, 0.5, 1.0]] * 2,
        "germ": FIG1_GERM,
        "base": f"x1^3 * x2^5 * ({FIG1_GERM})",
        "scale": alpha,
        "check": "none",
        "level": level,
        "dimension": {"mesh": 4, "m_min": 2, "m_max": 5, "sigma": 1.0},
    }


def run_fig1_case(alpha: float, level: int = 5):
    sc = parse_scenario(fig1_scenario(alpha, level))
    surface, rep = build(sc.spec, sc.level, tol=sc.tol)
    report = dimension_pipeline(sc, surface)
    row = {
        "alpha": alpha,
        "fitted_slope": report.fit.slope,
        "slope_stderr": report.fit.stderr,
        "theoretical_upper_bound": report.theory.upper,
        "cases": "+".join(report.theory.cases),
        "iterations": rep.iterations,
        "residual": rep.residual,
        "knot_max_error": _knot_error(sc, surface),
        "corner_mismatch": sc.spec.corner_mismatch,
        "holder_seminorm": report.holder["seminorm"],
    }
    return surface, row


def cmd_fig1(args) -> int:
    out = _outdir(args)
    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as pool:
        results = list(pool.map(run_fig1_case, FIG1_ALPHAS))
    rows = []
    for alpha, (surface, row) in zip(FIG1_ALPHAS, results):
        write_grid(out / f"alpha_{alpha}.frgrid", surface)
        rows.append(row)
    with open(out / "fig1_summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    _write_json(out / "fig1_summary.json", rows)
    for row in rows:
        print(f"alpha={row['alpha']}: slope {row['fitted_slope']:.4f}, bound {row['theoretical_upper_bound']:.4f}")
    return 0


COMMANDS = {
    "build": cmd_build,
    "residual": cmd_residual,
    "dim": cmd_dim,
    "trace": cmd_trace,
    "frint": cmd_frint,
    "fig1": cmd_fig1,
}

VALIDATION_ERRORS = (ScenarioError, ParseError, PartitionError, SpecError, GridFileError,
                     ResolutionError, frint.OrientationError, frint.OrderError)
NUMERICAL_ERRORS = (DivergenceError, EvalError, FloatingPointError, dim.InsufficientDataError)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="mfif",
        description="Build multivariate fractal interpolation surfaces and analyse them.",
        epilog=EXPRESSION_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("command", choices=list(COMMANDS))
    p.add_argument("--scenario", help="scenario JSON file")
    p.add_argument("--out", help="output directory")
    p.add_argument("--grid", help="grid file written by 'build'")
    p.add_argument("--axis", type=int, default=1, help="1-based axis for 'trace'")
    p.add_argument("--threads", type=int, default=1, help="worker threads for 'fig1'")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command != "fig1" and not args.scenario:
        print("error: --scenario is required", file=sys.stderr)
        return 1
    try:
        return COMMANDS[args.command](args)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
