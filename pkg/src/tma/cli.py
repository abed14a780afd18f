"""Experiment orchestration: JSON configs in, CSV sweeps and manifests out.

The ``tma`` command drives the package's verification suites from declarative
configs.  Each run writes one CSV of per-row measurements plus one JSON
manifest recording the config echo, library versions, wall time, and every
assertion with its observed value — the manifest is written even when a suite
fails, so a red run is as inspectable as a green one.

Determinism contract: the same config and seed produce byte-identical CSV no
matter how many workers execute the sweep.  Work is partitioned by draw index
up front and results are concatenated in partition order, never in completion
order; every row is a pure function of (suite, shape, seed, draw index).
"""

from __future__ import annotations

import argparse
import json
import math
import operator
import os
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .errors import ConfigInvalid, ParseError, UnknownAtom
from .estimates import (
    CylinderSpec,
    OSCILLATION_CSV_HEADER,
    flow_quantities,
    oscillation_csv_rows,
    oscillation_ladder,
    rigidity_probe,
)
from .evolution import (
    assemble_Q,
    complexification_scaling,
    complexify_point,
    complexify_real,
    evolution_residual,
    flow_report,
    heat_residual,
    real_evolution_lhs,
)
from .funclass import EnsembleSpec, draw_member, sample_points
from .jets import ExpressionSpec, evaluate_jet, wirtinger_from_real
from .legendre import det_transform_residual, real_W
from .solver import (
    BoxGrid,
    evaluate_on_grid,
    flow_from_spec,
    periodic_base_for,
    perturbed_flow_spec,
    reference_flow_spec,
    run_flow,
    solve_elliptic,
    spatial_order_estimate,
    time_order_estimate,
)

__all__ = [
    "ExperimentConfig",
    "ExperimentResult",
    "SUITES",
    "ingest_function_spec",
    "load_config",
    "main",
    "run_experiment",
]


# ---------------------------------------------------------------------------
# field validators
# ---------------------------------------------------------------------------


def _v_int(key: str, v, least: int) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigInvalid(f"{key}: expected an integer, got {v!r}")
    if v < least:
        raise ConfigInvalid(f"{key}: must be >= {least}, got {v}")
    return v


def _v_posint(key: str, v) -> int:
    return _v_int(key, v, 1)


def _v_nodes(key: str, v) -> int:
    # a framed grid needs 2*frame + 3 nodes per axis at the default frame 2
    return _v_int(key, v, 7)


def _v_float(key: str, v) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigInvalid(f"{key}: expected a number, got {v!r}")
    return float(v)


def _v_pos(key: str, v) -> float:
    x = _v_float(key, v)
    if not x > 0.0:
        raise ConfigInvalid(f"{key}: must be > 0, got {v}")
    return x


def _v_nonneg(key: str, v) -> float:
    x = _v_float(key, v)
    if x < 0.0:
        raise ConfigInvalid(f"{key}: must be >= 0, got {v}")
    return x


def _v_shapes(key: str, v) -> List[List[int]]:
    if not isinstance(v, list) or not v:
        raise ConfigInvalid(f"{key}: expected a non-empty list of [k, l] pairs, got {v!r}")
    out = []
    for i, item in enumerate(v):
        ok = (
            isinstance(item, list)
            and len(item) == 2
            and all(not isinstance(c, bool) and isinstance(c, int) and c >= 1 for c in item)
        )
        if not ok:
            raise ConfigInvalid(f"{key}[{i}]: expected a pair of integers >= 1, got {item!r}")
        out.append([item[0], item[1]])
    return out


def _v_pair(key: str, v) -> List[float]:
    ok = (
        isinstance(v, list)
        and len(v) == 2
        and all(not isinstance(c, bool) and isinstance(c, (int, float)) for c in v)
    )
    if not ok:
        raise ConfigInvalid(f"{key}: expected a pair of numbers, got {v!r}")
    return [float(v[0]), float(v[1])]


def _v_modes(key: str, v) -> List[List[float]]:
    if not isinstance(v, list) or not v:
        raise ConfigInvalid(f"{key}: expected a non-empty list of [kx, ky] pairs, got {v!r}")
    return [_v_pair(f"{key}[{i}]", item) for i, item in enumerate(v)]


def _v_ladder(key: str, v) -> List[float]:
    if not isinstance(v, list) or len(v) < 3:
        raise ConfigInvalid(f"{key}: expected a list of at least 3 radii, got {v!r}")
    vals = []
    for i, c in enumerate(v):
        if isinstance(c, bool) or not isinstance(c, (int, float)) or not c > 0:
            raise ConfigInvalid(f"{key}[{i}]: expected a positive number, got {c!r}")
        vals.append(float(c))
    if any(nxt >= cur for cur, nxt in zip(vals, vals[1:])):
        raise ConfigInvalid(f"{key}: radii must be strictly decreasing, got {vals}")
    return vals


# ---------------------------------------------------------------------------
# suite registry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SuiteDef:
    """One runnable suite: its defaults, field schema, and runner."""

    randomized: bool
    defaults: Dict[str, object]
    fields: Dict[str, Callable]
    runner: Callable
    post: Optional[Callable] = None


_SWEEP_FIELDS: Dict[str, Callable] = {
    "shapes": _v_shapes,
    "draws": _v_posint,
    "points": _v_posint,
    "eps": _v_nonneg,
    "a": _v_pos,
    "b": _v_pos,
    "tolerance": _v_pos,
}

_FLOW_FIELDS: Dict[str, Callable] = {
    "nodes_real": _v_nodes,
    "nodes_complex": _v_nodes,
    "dt_real": _v_pos,
    "dt_complex": _v_pos,
    "steps": _v_posint,
    "a": _v_pos,
    "b": _v_pos,
    "tolerance": _v_pos,
    "time_order_min": _v_float,
    "semi_order_min": _v_float,
    "semi_order_max": _v_float,
    "space_order_min": _v_float,
    "space_order_max": _v_float,
}

_OSC_FIELDS: Dict[str, Callable] = {
    "nodes": _v_nodes,
    "amplitude": _v_nonneg,
    "a": _v_pos,
    "b": _v_pos,
    "modes": _v_modes,
    "dt": _v_pos,
    "steps": _v_posint,
    "snapshot_every": _v_posint,
    "center": _v_pair,
    "radius": _v_pos,
    "ladder": _v_ladder,
    "alpha_min": _v_float,
    "residual_max": _v_pos,
    "monotone_tol": _v_nonneg,
}

_RIG_FIELDS: Dict[str, Callable] = {
    "nodes": _v_nodes,
    "guess_eps": _v_nonneg,
    "mode": _v_pair,
    "det_tol": _v_pos,
    "variation_tol": _v_pos,
}


def _post_oscillation(params: Dict[str, object]) -> None:
    if params["ladder"][0] > params["radius"]:
        raise ConfigInvalid(
            f"ladder: largest rung {params['ladder'][0]} exceeds radius {params['radius']}"
        )


# ---------------------------------------------------------------------------
# config
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated experiment: suite name, seed, output directory, parameters.

    ``params`` holds the suite's full parameter set — defaults merged with the
    config file's overrides, every value type-checked.  ``seed`` is mandatory
    for randomized suites and ``None`` is only accepted for deterministic
    ones, so a loaded config is always runnable as-is.
    """

    suite: str
    seed: Optional[int]
    out: str
    params: Dict[str, object] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigInvalid(f"config: expected a JSON object, got {type(raw).__name__}")
        suite = raw.get("suite")
        if suite is None:
            raise ConfigInvalid("suite: required")
        if not isinstance(suite, str) or suite not in SUITES:
            raise ConfigInvalid(
                f"suite: unknown suite {suite!r}; expected one of {', '.join(sorted(SUITES))}"
            )
        sd = SUITES[suite]
        params = dict(sd.defaults)
        seed: Optional[int] = None
        out = "."
        for key, value in raw.items():
            if key == "suite":
                continue
            if key == "seed":
                if isinstance(value, bool) or not isinstance(value, int):
                    raise ConfigInvalid(f"seed: expected an integer, got {value!r}")
                if value < 0:
                    raise ConfigInvalid(f"seed: must be >= 0, got {value}")
                seed = value
            elif key == "out":
                if not isinstance(value, str) or not value:
                    raise ConfigInvalid(f"out: expected a non-empty string, got {value!r}")
                out = value
            elif key in sd.fields:
                params[key] = sd.fields[key](key, value)
            else:
                raise ConfigInvalid(
                    f"{key}: not a recognized field for suite {suite!r} "
                    f"(known: {', '.join(sorted(sd.fields))})"
                )
        if sd.randomized and seed is None:
            raise ConfigInvalid(f"seed: required for randomized suite {suite!r}")
        if sd.post is not None:
            sd.post(params)
        return cls(suite=suite, seed=seed, out=out, params=params)


def load_config(path: str, seed: Optional[int] = None, out: Optional[str] = None) -> ExperimentConfig:
    """Read and validate a config file, folding in command-line overrides.

    Overrides are merged before validation, so ``--seed`` satisfies the
    seed-presence requirement of randomized suites exactly as a ``seed`` field
    in the file would.
    """
    with open(path, "r") as fh:
        text = fh.read()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigInvalid(
            f"{path}: invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}"
        ) from e
    if isinstance(raw, dict):
        if seed is not None:
            raw = {**raw, "seed": seed}
        if out is not None:
            raw = {**raw, "out": out}
    return ExperimentConfig.from_dict(raw)


# ---------------------------------------------------------------------------
# assertions
# ---------------------------------------------------------------------------

_RELATIONS = {"<=": operator.le, ">=": operator.ge, "<": operator.lt, ">": operator.gt}


def _check(name: str, observed: float, relation: str, bound: float) -> Dict[str, object]:
    return {
        "name": name,
        "observed": float(observed),
        "relation": relation,
        "bound": float(bound),
        "passed": bool(_RELATIONS[relation](float(observed), float(bound))),
    }


# ---------------------------------------------------------------------------
# randomized sweeps
# ---------------------------------------------------------------------------

_COMPLEX_SWEEPS = frozenset({"q-sign", "evolution-identity", "heat-identity"})

_SWEEP_HEADERS: Dict[str, Tuple[str, ...]] = {
    "det-law": ("draw", "shape_k", "shape_l", "point", "residual"),
    "w-psd": ("draw", "shape_k", "shape_l", "point", "lambda_min"),
    "q-sign": ("draw", "shape_k", "shape_l", "point", "q_lambda_max", "g1", "g2", "g3", "g4"),
    "evolution-identity": ("draw", "shape_k", "shape_l", "point", "residual"),
    "heat-identity": ("draw", "shape_k", "shape_l", "point", "residual"),
    "real-complexify": ("draw", "shape_k", "shape_l", "point", "entry_gap"),
}


def _sweep_draw_rows(payload: Tuple) -> List[Tuple]:
    """Rows for one ensemble draw; pure function of the payload (picklable)."""
    suite, k, l, a, b, eps, seed, draw, n_points = payload
    flavor = "complex" if suite in _COMPLEX_SWEEPS else "real"
    es = EnsembleSpec(k=k, l=l, flavor=flavor, a=a, b=b, eps=eps, seed=seed)
    member = draw_member(es, draw)
    pts = sample_points(es, draw, n_points)
    if suite == "real-complexify":
        d = complexification_scaling(k, l)
        lifted = complexify_real(member)
    rows: List[Tuple] = []
    for i, x in enumerate(pts):
        point = tuple(float(c) for c in x)
        if suite == "det-law":
            rows.append((draw, k, l, i, det_transform_residual(member, point)))
        elif suite == "w-psd":
            lam_min = float(np.linalg.eigvalsh(real_W(member, point))[0])
            rows.append((draw, k, l, i, lam_min))
        elif suite == "q-sign":
            rep = flow_report(member, point)
            g = dict(rep.grouping_spectrum_max)
            rows.append(
                (draw, k, l, i, rep.q_spectrum_max, g["g1"], g["g2"], g["g3"], g["g4"])
            )
        elif suite == "evolution-identity":
            rows.append((draw, k, l, i, evolution_residual(member, point)))
        elif suite == "heat-identity":
            rows.append((draw, k, l, i, heat_residual(member, point)))
        else:  # real-complexify
            lhs = d @ real_evolution_lhs(member, point) @ d
            table = wirtinger_from_real(
                evaluate_jet(lifted, complexify_point(point), order=4)
            )
            gap = float(np.max(np.abs(lhs - assemble_Q(table).matrix)))
            rows.append((draw, k, l, i, gap))
    return rows


def _shape_draw_counts(total: int, n_shapes: int) -> List[int]:
    """Split ``total`` draws across shapes, remainder going to the earliest."""
    base, extra = divmod(total, n_shapes)
    return [base + (1 if i < extra else 0) for i in range(n_shapes)]


def _run_sweep(cfg: ExperimentConfig, workers: int):
    p = cfg.params
    shapes = p["shapes"]
    payloads: List[Tuple] = []
    for si, (k, l) in enumerate(shapes):
        count = _shape_draw_counts(p["draws"], len(shapes))[si]
        for draw in range(count):
            payloads.append(
                (cfg.suite, k, l, p["a"], p["b"], p["eps"], cfg.seed + si, draw, p["points"])
            )
    rows: List[Tuple] = []
    if workers <= 1:
        for payload in payloads:
            rows.extend(_sweep_draw_rows(payload))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for chunk in pool.map(_sweep_draw_rows, payloads, chunksize=8):
                rows.extend(chunk)
    tol = p["tolerance"]
    if cfg.suite == "w-psd":
        assertions = [_check("min_w_eigenvalue", min(r[4] for r in rows), ">=", -tol)]
    elif cfg.suite == "q-sign":
        assertions = [_check("max_q_eigenvalue", max(r[4] for r in rows), "<=", tol)]
        for j, g in enumerate(("g1", "g2", "g3", "g4")):
            assertions.append(
                _check(f"max_{g}_eigenvalue", max(r[5 + j] for r in rows), "<=", tol)
            )
    else:
        label = {
            "det-law": "max_det_residual",
            "evolution-identity": "max_evolution_residual",
            "heat-identity": "max_heat_residual",
            "real-complexify": "max_entry_gap",
        }[cfg.suite]
        assertions = [_check(label, max(r[4] for r in rows), "<=", tol)]
    return _SWEEP_HEADERS[cfg.suite], rows, assertions


# ---------------------------------------------------------------------------
# deterministic suites
# ---------------------------------------------------------------------------


def _run_flow_convergence(cfg: ExperimentConfig, workers: int):
    p = cfg.params
    rows: List[Tuple] = []

    # exact-transport check, planar flavor
    spec_r = reference_flow_spec(p["a"], p["b"], "real")
    grid_r = BoxGrid((-1.0, -1.0), (1.0, 1.0), (p["nodes_real"],) * 2)
    f = flow_from_spec(spec_r, grid_r, p["dt_real"])
    f = run_flow(f, p["steps"], scheme="rk4", snapshot_every=p["steps"])
    exact = evaluate_on_grid(spec_r, grid_r, time=f.times[-1])
    ii = grid_r.interior
    err_real = float(np.abs(f.slices[-1][ii] - exact[ii]).max()) / p["steps"]
    rows.append(("per_step_error_real", err_real))

    # exact-transport check, paired flavor on the 4-axis grid
    spec_c = reference_flow_spec(p["a"], p["b"], "complex11")
    grid_c = BoxGrid((-1.0,) * 4, (1.0,) * 4, (p["nodes_complex"],) * 4)
    fc = flow_from_spec(spec_c, grid_c, p["dt_complex"])
    fc = run_flow(fc, p["steps"], scheme="rk4", snapshot_every=p["steps"])
    exact_c = evaluate_on_grid(spec_c, grid_c, time=fc.times[-1])
    iic = grid_c.interior
    err_complex = float(np.abs(fc.slices[-1][iic] - exact_c[iic]).max()) / p["steps"]
    rows.append(("per_step_error_complex11", err_complex))

    # measured orders on a rippled field with genuine time error
    ripple = perturbed_flow_spec(
        1.0, 1.0, 0.1, modes=((1.0, 1.0), (2.0, -1.0)), weights=(1.0, 0.5)
    )
    grid_t = BoxGrid((-1.0, -1.0), (1.0, 1.0), (17, 17))
    horizon = 8e-4 * 16
    t_rk4 = time_order_estimate(flow_from_spec(ripple, grid_t, 8e-4), horizon, scheme="rk4")
    t_semi = time_order_estimate(
        flow_from_spec(ripple, grid_t, 8e-4), horizon, scheme="semi-implicit"
    )
    rows.append(("time_order_rk4", t_rk4.order))
    rows.append(("time_order_semi_implicit", t_semi.order))
    sp = spatial_order_estimate(ripple, grid_t)
    rows.append(("spatial_ratio", sp.ratio))
    rows.append(("spatial_order", sp.order))

    assertions = [
        _check("per_step_error_real", err_real, "<=", p["tolerance"]),
        _check("per_step_error_complex11", err_complex, "<=", p["tolerance"]),
        _check("time_order_rk4", t_rk4.order, ">=", p["time_order_min"]),
        _check("time_order_semi_min", t_semi.order, ">=", p["semi_order_min"]),
        _check("time_order_semi_max", t_semi.order, "<=", p["semi_order_max"]),
        _check("spatial_order_min", sp.order, ">=", p["space_order_min"]),
        _check("spatial_order_max", sp.order, "<=", p["space_order_max"]),
    ]
    return ("quantity", "value"), rows, assertions


def _run_oscillation(cfg: ExperimentConfig, workers: int):
    p = cfg.params
    n = p["nodes"]
    grid = BoxGrid((0.0, 0.0), (2.0 * math.pi, 2.0 * math.pi), (n, n), frame=0)
    modes = tuple(tuple(m) for m in p["modes"])
    spec = perturbed_flow_spec(p["a"], p["b"], p["amplitude"], modes=modes)
    f = flow_from_spec(spec, grid, p["dt"], policy=periodic_base_for(p["a"], p["b"]))
    f = run_flow(f, p["steps"], snapshot_every=p["snapshot_every"])

    center = tuple(p["center"])
    radius = p["radius"]
    crop_radius = radius + 2.0 * max(grid.spacing)
    quantities = flow_quantities(f, center=center, radius=crop_radius)
    cyl = CylinderSpec(
        center=center, time=f.times[-1], radius=radius, ladder=tuple(p["ladder"])
    )
    rep = oscillation_ladder(quantities, cyl)
    rows = oscillation_csv_rows([rep], ids=["cyl0"])

    worst_increase = 0.0
    for series in list(rep.per_quantity.values()) + [rep.totals]:
        for cur, nxt in zip(series, series[1:]):
            worst_increase = max(worst_increase, nxt - cur)
    total_fit = rep.fits["total"]
    assertions = [
        _check("max_ladder_increase", worst_increase, "<=", p["monotone_tol"]),
        _check("total_decay_exponent", total_fit.alpha, ">", p["alpha_min"]),
        _check("total_fit_residual", total_fit.residual, "<=", p["residual_max"]),
    ]
    return OSCILLATION_CSV_HEADER, rows, assertions


def _run_rigidity(cfg: ExperimentConfig, workers: int):
    p = cfg.params
    n = p["nodes"]
    grid = BoxGrid((-1.0, -1.0), (1.0, 1.0), (n, n), frame=2)
    boundary = reference_flow_spec(1.0, 1.0)
    guess = None
    if p["guess_eps"] > 0.0:
        guess = perturbed_flow_spec(
            1.0, 1.0, p["guess_eps"], modes=[tuple(p["mode"])], weights=[1.0]
        )
    solved = solve_elliptic(boundary, grid, guess=guess)
    rep = rigidity_probe(solved)
    rows = [
        ("det_deviation", rep.det_deviation),
        ("entry_variation", rep.entry_variation),
        ("n_nodes", float(rep.n_nodes)),
    ]
    assertions = [
        _check("det_deviation", rep.det_deviation, "<=", p["det_tol"]),
        _check("entry_variation", rep.entry_variation, "<=", p["variation_tol"]),
    ]
    return ("quantity", "value"), rows, assertions


# ---------------------------------------------------------------------------
# the registry itself
# ---------------------------------------------------------------------------

_SHAPES_ALL = [[1, 1], [2, 1], [1, 2], [2, 2]]
_SHAPES_COMPLEX = [[1, 1], [2, 1], [1, 2]]

SUITES: Dict[str, SuiteDef] = {
    "det-law": SuiteDef(
        randomized=True,
        defaults={
            "shapes": _SHAPES_ALL, "draws": 100, "points": 20,
            "eps": 0.1, "a": 1.0, "b": 1.0, "tolerance": 1e-10,
        },
        fields=_SWEEP_FIELDS,
        runner=_run_sweep,
    ),
    "w-psd": SuiteDef(
        randomized=True,
        defaults={
            "shapes": _SHAPES_ALL, "draws": 100, "points": 20,
            "eps": 0.1, "a": 1.0, "b": 1.0, "tolerance": 1e-10,
        },
        fields=_SWEEP_FIELDS,
        runner=_run_sweep,
    ),
    "q-sign": SuiteDef(
        randomized=True,
        defaults={
            "shapes": [[1, 1]], "draws": 100, "points": 1,
            "eps": 0.1, "a": 1.0, "b": 1.0, "tolerance": 1e-8,
        },
        fields=_SWEEP_FIELDS,
        runner=_run_sweep,
    ),
    "evolution-identity": SuiteDef(
        randomized=True,
        defaults={
            "shapes": _SHAPES_COMPLEX, "draws": 100, "points": 1,
            "eps": 0.1, "a": 1.0, "b": 1.0, "tolerance": 1e-8,
        },
        fields=_SWEEP_FIELDS,
        runner=_run_sweep,
    ),
    "heat-identity": SuiteDef(
        randomized=True,
        defaults={
            "shapes": _SHAPES_COMPLEX, "draws": 100, "points": 1,
            "eps": 0.1, "a": 1.0, "b": 1.0, "tolerance": 1e-10,
        },
        fields=_SWEEP_FIELDS,
        runner=_run_sweep,
    ),
    "real-complexify": SuiteDef(
        randomized=True,
        defaults={
            "shapes": _SHAPES_ALL, "draws": 50, "points": 2,
            "eps": 0.1, "a": 1.0, "b": 1.0, "tolerance": 1e-10,
        },
        fields=_SWEEP_FIELDS,
        runner=_run_sweep,
    ),
    "flow-convergence": SuiteDef(
        randomized=False,
        defaults={
            "nodes_real": 65, "nodes_complex": 9,
            "dt_real": 5e-5, "dt_complex": 1e-3, "steps": 4,
            "a": math.e, "b": 1.0, "tolerance": 1e-10,
            "time_order_min": 3.5,
            "semi_order_min": 0.7, "semi_order_max": 1.5,
            "space_order_min": 1.8, "space_order_max": 2.2,
        },
        fields=_FLOW_FIELDS,
        runner=_run_flow_convergence,
    ),
    "oscillation-decay": SuiteDef(
        randomized=False,
        defaults={
            "nodes": 64, "amplitude": 0.05, "a": 1.0, "b": 1.0,
            "modes": [[1.0, 1.0]],
            "dt": 1.5e-3, "steps": 200, "snapshot_every": 1,
            "center": [1.5, 1.2], "radius": 0.5,
            "ladder": [0.5, 0.25, 0.125],
            "alpha_min": 0.0, "residual_max": 0.1, "monotone_tol": 0.0,
        },
        fields=_OSC_FIELDS,
        runner=_run_oscillation,
        post=_post_oscillation,
    ),
    "rigidity": SuiteDef(
        randomized=False,
        defaults={
            "nodes": 33, "guess_eps": 1e-3, "mode": [2.0, 1.0],
            "det_tol": 1e-9, "variation_tol": 1e-8,
        },
        fields=_RIG_FIELDS,
        runner=_run_rigidity,
    ),
}


# ---------------------------------------------------------------------------
# output writers
# ---------------------------------------------------------------------------


def _csv_cell(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return format(float(v), ".17g")


def _write_csv(path: str, header: Sequence[str], rows: Sequence[Tuple]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_csv_cell(c) for c in row))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


@dataclass
class ExperimentResult:
    """Everything one run produced: rows, assertions, file paths, verdict."""

    suite: str
    header: Optional[Tuple[str, ...]]
    rows: List[Tuple]
    assertions: List[Dict[str, object]]
    passed: bool
    error: Optional[str]
    csv_path: Optional[str]
    manifest_path: str
    wall_time_s: float
    workers: int


def run_experiment(cfg: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    """Execute one suite; write its CSV and manifest; never raise past config.

    The manifest is written unconditionally once the config has validated —
    an assertion failure or a runner crash is recorded in it rather than
    leaving no trace.  Assertion failures are data (``passed: false``);
    only the orchestration itself reports exceptions, as the ``error`` field.
    """
    if workers < 1:
        raise ConfigInvalid(f"workers: must be >= 1, got {workers}")
    sd = SUITES[cfg.suite]
    os.makedirs(cfg.out, exist_ok=True)
    csv_path = os.path.join(cfg.out, f"{cfg.suite}.csv")
    manifest_path = os.path.join(cfg.out, f"{cfg.suite}-manifest.json")

    start = time.perf_counter()
    header: Optional[Tuple[str, ...]] = None
    rows: List[Tuple] = []
    assertions: List[Dict[str, object]] = []
    error: Optional[str] = None
    try:
        header, rows, assertions = sd.runner(cfg, workers)
    except Exception as e:  # recorded in the manifest, not propagated
        error = f"{type(e).__name__}: {e}"
    wall = time.perf_counter() - start
    passed = error is None and all(a["passed"] for a in assertions)

    wrote_csv: Optional[str] = None
    if header is not None:
        _write_csv(csv_path, header, rows)
        wrote_csv = csv_path

    import scipy

    manifest = {
        "suite": cfg.suite,
        "config": {
            "suite": cfg.suite, "seed": cfg.seed, "out": cfg.out, "params": cfg.params,
        },
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "package": __version__,
        },
        "workers": workers,
        "wall_time_s": round(wall, 6),
        "csv": os.path.basename(wrote_csv) if wrote_csv else None,
        "rows": len(rows),
        "assertions": assertions,
        "passed": passed,
    }
    if error is not None:
        manifest["error"] = error
    with open(manifest_path, "w", newline="") as fh:
        fh.write(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    return ExperimentResult(
        suite=cfg.suite,
        header=header,
        rows=rows,
        assertions=assertions,
        passed=passed,
        error=error,
        csv_path=wrote_csv,
        manifest_path=manifest_path,
        wall_time_s=wall,
        workers=workers,
    )


# ---------------------------------------------------------------------------
# function-spec ingestion
# ---------------------------------------------------------------------------


def ingest_function_spec(path: str) -> ExpressionSpec:
    """Load a function description from JSON with file/line diagnostics.

    Round-trip contract: for a file already in canonical form,
    ``ingest_function_spec(p).canonical_json()`` reproduces its bytes.
    """
    try:
        with open(path, "r") as fh:
            text = fh.read()
    except OSError as e:
        raise ParseError(f"{path}: {e.strerror or e}") from e
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from e
    return ExpressionSpec.from_dict(obj)


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tma",
        description="Run, validate, and inspect the package's verification experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute a suite from a config file")
    run_p.add_argument("--config", required=True, help="experiment config (JSON)")
    run_p.add_argument("--seed", type=int, default=None, help="override/provide the seed")
    run_p.add_argument("--out", default=None, help="output directory (default: from config or '.')")
    run_p.add_argument(
        "--workers", type=int, default=None,
        help="parallel workers for sweeps (default: TMA_WORKERS or 1)",
    )

    val_p = sub.add_parser("validate", help="check a config file without running it")
    val_p.add_argument("--config", required=True, help="experiment config (JSON)")

    spec_p = sub.add_parser("spec", help="parse a function description and print canonical JSON")
    spec_p.add_argument("--check", required=True, metavar="PATH", help="function description (JSON)")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point: 0 all assertions pass, 1 assertion/runtime failure, 2 config error."""
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            cfg = load_config(args.config)
            print(f"config ok: suite {cfg.suite!r}, seed {cfg.seed}, out {cfg.out!r}")
            return 0
        if args.command == "spec":
            spec = ingest_function_spec(args.check)
            print(spec.canonical_json())
            return 0
        # run
        if args.workers is not None:
            workers = args.workers
        else:
            env = os.environ.get("TMA_WORKERS", "1")
            try:
                workers = int(env)
            except ValueError:
                raise ConfigInvalid(f"workers: TMA_WORKERS must be an integer, got {env!r}")
        if workers < 1:
            raise ConfigInvalid(f"workers: must be >= 1, got {workers}")
        cfg = load_config(args.config, seed=args.seed, out=args.out)
    except (ConfigInvalid, ParseError, UnknownAtom) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2

    result = run_experiment(cfg, workers=workers)
    for a in result.assertions:
        status = "pass" if a["passed"] else "FAIL"
        print(f"[{status}] {a['name']}: {a['observed']:.6g} {a['relation']} {a['bound']:.6g}")
    if result.error is not None:
        print(f"error: {result.error}", file=sys.stderr)
    where = result.csv_path if result.csv_path else "(no CSV)"
    print(f"{result.suite}: {len(result.rows)} rows -> {where}; manifest {result.manifest_path}")
    return 0 if result.passed else 1


if __name__ == "__main__":
    sys.exit(main())
