"""Finite-difference flows, elliptic solves, and measurement-grade snapshots.

The exact-jet layers certify pointwise identities; this module supplies the
other half of the laboratory: actual grid dynamics.  It advances the parabolic
flow ``du/dt = F(u)`` (explicit RK4 or a semi-implicit lagged-coefficient
scheme), solves the steady equation ``F(u) = target`` by a damped Newton
iteration, monitors class membership (convex block positive definite, concave
block negative definite, with quantitative bounds) along runs, estimates
convergence orders, and writes field snapshots in text or binary form for the
oscillation-measurement layer.

Two discrete flavors are supported:

``"real"``
    one convex and one concave direction on a 2-D grid; the flow value is
    ``F = log u_xx - log(-u_yy)``.

``"complex11"``
    one complex convex and one complex concave direction carried as a real
    4-D grid with axes ordered ``[X_z, X_w, Y_z, Y_w]`` (real parts first);
    the flow value is ``F = log((u_00 + u_22)/4) - log(-(u_11 + u_33)/4)``,
    the Laplacian quarter-combinations being the complex second derivatives
    of the convex and concave directions.

Grids are *framed* (a frozen frame of ``frame`` node layers carries boundary
values from an analytic description, refreshed at every stage time) or
*periodic* (``frame = 0``), where the evolving part is periodic atop a fixed
diagonal quadratic base.  All spatial derivatives are second-order centered
differences; the interior never reads a wrapped-around stencil on framed
grids because the frame is at least one layer wide.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import (
    CFLViolation,
    ClassExit,
    DimensionMismatch,
    DomainViolation,
    NoConvergence,
    TmaError,
)
from .jets import ExpressionSpec

__all__ = [
    "BoxGrid",
    "ClassSeries",
    "FlowField",
    "FrozenFrame",
    "OrderEstimate",
    "PeriodicBase",
    "discrete_hessian",
    "discrete_time_speed",
    "evaluate_on_grid",
    "flow_from_spec",
    "flow_from_values",
    "hessian_error",
    "monitor_class",
    "perturbed_flow_spec",
    "read_snapshot_csv",
    "read_snapshot_json",
    "reference_flow_spec",
    "run_flow",
    "solve_elliptic",
    "spatial_order_estimate",
    "step_parabolic",
    "time_order_estimate",
    "write_snapshot_csv",
    "write_snapshot_json",
]

FLAVORS = ("real", "complex11")

#: floor used for the "membership with margin" pre-step check
CLASS_MARGIN = 1e-10


# ---------------------------------------------------------------------------
# grid geometry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoxGrid:
    """Axis-aligned box grid, framed or periodic.

    For a framed grid (``frame >= 1``) the nodes along axis ``a`` are
    ``linspace(lo[a], hi[a], shape[a])`` — both endpoints included — and the
    outermost ``frame`` node layers carry boundary data rather than unknowns.
    For a periodic grid (``frame == 0``) the nodes are
    ``lo[a] + j*(hi[a]-lo[a])/shape[a]`` — ``hi`` exclusive — and every node
    is an unknown.
    """

    lo: Tuple[float, ...]
    hi: Tuple[float, ...]
    shape: Tuple[int, ...]
    frame: int = 2

    def __post_init__(self):
        object.__setattr__(self, "lo", tuple(float(v) for v in self.lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in self.hi))
        object.__setattr__(self, "shape", tuple(int(n) for n in self.shape))
        if not (len(self.lo) == len(self.hi) == len(self.shape)):
            raise DimensionMismatch(
                f"grid extents and shape disagree: lo has {len(self.lo)}, "
                f"hi has {len(self.hi)}, shape has {len(self.shape)} entries"
            )
        if len(self.shape) == 0:
            raise DimensionMismatch("grid needs at least one axis")
        if self.frame < 0:
            raise TmaError(f"frame width must be >= 0, got {self.frame}")
        for a, (lo, hi, n) in enumerate(zip(self.lo, self.hi, self.shape)):
            if not (hi > lo):
                raise TmaError(f"axis {a}: hi must exceed lo, got [{lo}, {hi}]")
            least = 3 if self.frame == 0 else 2 * self.frame + 3
            if n < least:
                raise TmaError(
                    f"axis {a}: need at least {least} nodes "
                    f"(frame {self.frame}), got {n}"
                )

    # -- basic geometry ----------------------------------------------------

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def periodic(self) -> bool:
        return self.frame == 0

    @property
    def spacing(self) -> Tuple[float, ...]:
        if self.periodic:
            return tuple((h - l) / n for l, h, n in zip(self.lo, self.hi, self.shape))
        return tuple((h - l) / (n - 1) for l, h, n in zip(self.lo, self.hi, self.shape))

    def axes(self) -> Tuple[np.ndarray, ...]:
        out = []
        for l, h, n, d in zip(self.lo, self.hi, self.shape, self.spacing):
            if self.periodic:
                out.append(l + d * np.arange(n))
            else:
                out.append(np.linspace(l, h, n))
        return tuple(out)

    def mesh(self) -> Tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*self.axes(), indexing="ij"))

    def points(self) -> np.ndarray:
        """All node coordinates as an ``(n_nodes, dim)`` array in C order."""
        return np.stack([m.ravel() for m in self.mesh()], axis=-1)

    # -- interior bookkeeping ----------------------------------------------

    @property
    def interior(self) -> Tuple[slice, ...]:
        if self.periodic:
            return tuple(slice(None) for _ in self.shape)
        return tuple(slice(self.frame, n - self.frame) for n in self.shape)

    @property
    def interior_shape(self) -> Tuple[int, ...]:
        if self.periodic:
            return self.shape
        return tuple(n - 2 * self.frame for n in self.shape)

    def frame_mask(self) -> np.ndarray:
        mask = np.ones(self.shape, dtype=bool)
        mask[self.interior] = False
        return mask

    def refined(self) -> "BoxGrid":
        """The once-refined grid: spacing halved, same box, node-aligned.

        Coarse node ``i`` coincides with fine node ``2*i`` on every axis, for
        framed and periodic grids alike.
        """
        if self.periodic:
            shape = tuple(2 * n for n in self.shape)
        else:
            shape = tuple(2 * n - 1 for n in self.shape)
        return BoxGrid(self.lo, self.hi, shape, self.frame)


# ---------------------------------------------------------------------------
# vectorized expression evaluation on grids
# ---------------------------------------------------------------------------

_ATOM_GRID = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "cosh": np.cosh,
    "sinh": np.sinh,
}


def _eval_node_on_arrays(node: dict, coords: Sequence[np.ndarray]) -> np.ndarray:
    kind = node["kind"]
    if kind == "sum":
        out = _eval_node_on_arrays(node["terms"][0], coords)
        for t in node["terms"][1:]:
            out = out + _eval_node_on_arrays(t, coords)
        return out
    if kind == "product":
        out = _eval_node_on_arrays(node["factors"][0], coords)
        for t in node["factors"][1:]:
            out = out * _eval_node_on_arrays(t, coords)
        return out
    if kind == "scale":
        return node["coefficient"] * _eval_node_on_arrays(node["term"], coords)
    if kind == "quad":
        m, lin, c = node["matrix"], node["linear"], node["constant"]
        out = np.full_like(coords[0], float(c))
        for i, xi in enumerate(coords):
            out += lin[i] * xi
            for j, xj in enumerate(coords):
                out += 0.5 * m[i][j] * xi * xj
        return out
    # atom
    arg = np.full_like(coords[0], float(node["const"]))
    for a, xi in zip(node["affine"], coords):
        if a != 0.0:
            arg += a * xi
    fn = node["fn"]
    if fn in _ATOM_GRID:
        return _ATOM_GRID[fn](arg)
    if fn == "log":
        low = float(arg.min())
        if low <= 0.0:
            raise DomainViolation(f"log atom evaluated at non-positive argument {low}")
        return np.log(arg)
    # pow
    p = node["exponent"]
    if not (float(p).is_integer() and p >= 0):
        low = float(arg.min())
        if low <= 0.0:
            raise DomainViolation(
                f"pow atom with non-integer exponent {p} at non-positive base {low}"
            )
    return arg**p


def evaluate_on_grid(spec: ExpressionSpec, grid: BoxGrid, time: float = 0.0) -> np.ndarray:
    """Evaluate an analytic description on every node of ``grid`` at ``time``.

    Matches ``spec.value(point, time)`` node for node (same expression-tree
    semantics, vectorized), including the linear-in-time drift.
    """
    if spec.nvars != grid.dim:
        raise DimensionMismatch(
            f"description uses {spec.nvars} coordinates but the grid has {grid.dim}"
        )
    reach = max(max(abs(ax[0]), abs(ax[-1])) for ax in grid.axes())
    if reach > spec.domain_halfwidth:
        raise DomainViolation(
            f"grid reaches coordinate magnitude {reach} but the description "
            f"is only valid up to {spec.domain_halfwidth}"
        )
    out = _eval_node_on_arrays(spec.expr, grid.mesh())
    if spec.time_drift != 0.0 and time != 0.0:
        out = out + spec.time_drift * time
    return np.asarray(out, dtype=float)


# ---------------------------------------------------------------------------
# boundary policies and the flow field
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FrozenFrame:
    """Boundary policy: the frame carries exact values of ``spec`` at each time."""

    spec: ExpressionSpec


@dataclass(frozen=True)
class PeriodicBase:
    """Boundary policy: periodic evolution atop a fixed diagonal quadratic base.

    ``coeffs[a]`` is the constant second derivative of the base along axis
    ``a`` (positive on convex axes, negative on concave ones); the base value
    is ``sum_a coeffs[a] * x_a**2 / 2``.  The evolving difference
    ``u - base`` must be periodic on the box.
    """

    coeffs: Tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))

    def values_on(self, grid: BoxGrid) -> np.ndarray:
        if len(self.coeffs) != grid.dim:
            raise DimensionMismatch(
                f"base has {len(self.coeffs)} axis coefficients, grid has {grid.dim} axes"
            )
        out = np.zeros(grid.shape)
        for c, x in zip(self.coeffs, grid.mesh()):
            out += 0.5 * c * x * x
        return out


BoundaryPolicy = Union[FrozenFrame, PeriodicBase]


@dataclass
class FlowField:
    """A grid, a flavor, a boundary policy, and the time slices of a run.

    ``slices[i]`` holds the nodal values at ``times[i]``; stepping appends.
    ``cfl_log`` records the measured explicit-stability bound at each step
    taken with the explicit scheme.  Instances are treated as immutable:
    stepping operations return a new ``FlowField``.
    """

    grid: BoxGrid
    flavor: str
    policy: BoundaryPolicy
    dt: float
    slices: List[np.ndarray]
    times: List[float]
    cfl_constant: float = 0.2
    cfl_log: List[float] = dc_field(default_factory=list)
    # cached boundary data, filled by the factories
    _frame_vals: Optional[np.ndarray] = dc_field(default=None, repr=False)
    _frame_mask: Optional[np.ndarray] = dc_field(default=None, repr=False)
    _base_vals: Optional[np.ndarray] = dc_field(default=None, repr=False)

    @property
    def latest(self) -> Tuple[float, np.ndarray]:
        return self.times[-1], self.slices[-1]


def _flavor_dim(flavor: str) -> int:
    if flavor == "real":
        return 2
    if flavor == "complex11":
        return 4
    raise TmaError(f"unknown flavor {flavor!r}; expected one of {FLAVORS}")


def flow_from_values(
    values: np.ndarray,
    grid: BoxGrid,
    dt: float,
    flavor: str,
    policy: BoundaryPolicy,
    time: float = 0.0,
    cfl_constant: float = 0.2,
) -> FlowField:
    """Wrap explicit nodal values as a single-slice flow field."""
    values = np.asarray(values, dtype=float)
    if values.shape != grid.shape:
        raise DimensionMismatch(
            f"values have shape {values.shape}, grid has {grid.shape}"
        )
    if grid.dim != _flavor_dim(flavor):
        raise DimensionMismatch(
            f"flavor {flavor!r} needs a {_flavor_dim(flavor)}-D grid, got {grid.dim}-D"
        )
    if not (dt >= 0.0):
        raise TmaError(f"timestep must be nonnegative, got {dt}")
    if isinstance(policy, PeriodicBase):
        if not grid.periodic:
            raise TmaError("a periodic-base policy requires a periodic grid (frame == 0)")
        base = policy.values_on(grid)
        f = FlowField(grid, flavor, policy, float(dt), [values.copy()], [float(time)],
                      cfl_constant=cfl_constant, _base_vals=base)
    elif isinstance(policy, FrozenFrame):
        if grid.periodic:
            raise TmaError("a frozen-frame policy requires a framed grid (frame >= 1)")
        mask = grid.frame_mask()
        frame_at_zero = evaluate_on_grid(policy.spec, grid, time=0.0)[mask]
        f = FlowField(grid, flavor, policy, float(dt), [values.copy()], [float(time)],
                      cfl_constant=cfl_constant,
                      _frame_vals=frame_at_zero, _frame_mask=mask)
        _apply_frame(f, f.slices[0], float(time))
    else:
        raise TmaError(f"unknown boundary policy {type(policy).__name__}")
    return f


def flow_from_spec(
    spec: ExpressionSpec,
    grid: BoxGrid,
    dt: float,
    policy: Optional[BoundaryPolicy] = None,
    time: float = 0.0,
    cfl_constant: float = 0.2,
) -> FlowField:
    """Initialize a flow field by evaluating ``spec`` on the grid.

    On a framed grid the policy defaults to a frozen frame carrying the same
    description (so the initial slice and the boundary agree); on a periodic
    grid an explicit :class:`PeriodicBase` must be supplied.
    """
    if policy is None:
        if grid.periodic:
            raise TmaError(
                "periodic grids need an explicit PeriodicBase policy "
                "(the diagonal quadratic base cannot be inferred)"
            )
        policy = FrozenFrame(spec)
    values = evaluate_on_grid(spec, grid, time=time)
    flavor = _infer_flavor(spec, grid)
    return flow_from_values(values, grid, dt, flavor, policy, time=time,
                            cfl_constant=cfl_constant)


def _infer_flavor(spec: ExpressionSpec, grid: BoxGrid) -> str:
    if spec.flavor == "real":
        if (spec.k, spec.l) != (1, 1) or grid.dim != 2:
            raise DimensionMismatch(
                "real grid flows support one convex and one concave direction "
                f"on a 2-D grid; got dims ({spec.k}, {spec.l}) on a {grid.dim}-D grid"
            )
        return "real"
    if (spec.k, spec.l) != (1, 1) or grid.dim != 4:
        raise DimensionMismatch(
            "complex grid flows support one convex and one concave direction "
            f"carried as a 4-D real grid; got dims ({spec.k}, {spec.l}) "
            f"on a {grid.dim}-D grid"
        )
    return "complex11"


def _apply_frame(f: FlowField, u: np.ndarray, t: float) -> None:
    """Refresh the boundary frame of ``u`` in place for time ``t``."""
    if isinstance(f.policy, FrozenFrame):
        u[f._frame_mask] = f._frame_vals + f.policy.spec.time_drift * t


# ---------------------------------------------------------------------------
# centered differences and the flow value
# ---------------------------------------------------------------------------


def _second_diff(u: np.ndarray, axis: int, h: float) -> np.ndarray:
    return (np.roll(u, -1, axis=axis) + np.roll(u, 1, axis=axis) - 2.0 * u) / (h * h)


def _mixed_diff(u: np.ndarray, ax1: int, ax2: int, h1: float, h2: float) -> np.ndarray:
    upp = np.roll(np.roll(u, -1, axis=ax1), -1, axis=ax2)
    upm = np.roll(np.roll(u, -1, axis=ax1), 1, axis=ax2)
    ump = np.roll(np.roll(u, 1, axis=ax1), -1, axis=ax2)
    umm = np.roll(np.roll(u, 1, axis=ax1), 1, axis=ax2)
    return (upp - upm - ump + umm) / (4.0 * h1 * h2)


def _axis_seconds(f: FlowField, u: np.ndarray) -> List[np.ndarray]:
    """Pure second derivatives along each axis (valid on the interior)."""
    if isinstance(f.policy, PeriodicBase):
        p = u - f._base_vals
        return [
            _second_diff(p, a, h) + c
            for a, (h, c) in enumerate(zip(f.grid.spacing, f.policy.coeffs))
        ]
    return [_second_diff(u, a, h) for a, h in enumerate(f.grid.spacing)]


def _block_fields(f: FlowField, u: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Scalar convex-block and (negated) concave-block fields.

    Both are positive wherever the slice is in class.  Entries on the frame
    of a framed grid are not meaningful.
    """
    d2 = _axis_seconds(f, u)
    if f.flavor == "real":
        return d2[0], -d2[1]
    conv = 0.25 * (d2[0] + d2[2])
    conc = -0.25 * (d2[1] + d2[3])
    return conv, conc


def _interior_bounds(grid: BoxGrid, arr: np.ndarray) -> Tuple[float, float]:
    view = arr[grid.interior]
    return float(view.min()), float(view.max())


def _require_membership(f: FlowField, conv: np.ndarray, conc: np.ndarray,
                        where: str, margin: float = CLASS_MARGIN) -> Tuple[float, float]:
    """Check both blocks are definite with margin; return (lam, Lam) measured."""
    cmin, cmax = _interior_bounds(f.grid, conv)
    kmin, kmax = _interior_bounds(f.grid, conc)
    if cmin <= margin:
        raise ClassExit(
            f"{where}: convex block lost definiteness "
            f"(min second derivative {cmin:.3e} <= margin {margin:.0e})"
        )
    if kmin <= margin:
        raise ClassExit(
            f"{where}: concave block lost definiteness "
            f"(min negated second derivative {kmin:.3e} <= margin {margin:.0e})"
        )
    return min(cmin, kmin), max(cmax, kmax)


def _flow_value_from_blocks(f: FlowField, conv: np.ndarray, conc: np.ndarray) -> np.ndarray:
    """``log(conv) - log(conc)`` with frame entries set to NaN on framed grids."""
    if f.grid.periodic:
        return np.log(conv) - np.log(conc)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.log(np.abs(conv)) - np.log(np.abs(conc))
    out[f._frame_mask] = np.nan
    ii = f.grid.interior
    out[ii] = np.log(conv[ii]) - np.log(conc[ii])
    return out


def _stage_value(f: FlowField, u: np.ndarray, where: str) -> np.ndarray:
    conv, conc = _block_fields(f, u)
    _require_membership(f, conv, conc, where)
    return _flow_value_from_blocks(f, conv, conc)


def discrete_time_speed(f: FlowField, index: int = -1) -> np.ndarray:
    """The discrete flow value ``F`` of a stored slice.

    This equals the time speed ``du/dt`` the flow would impose on that slice;
    frame entries are NaN on framed grids.
    """
    return _stage_value(f, f.slices[index], "time-speed evaluation")


def discrete_hessian(f: FlowField, index: int = -1) -> np.ndarray:
    """Full centered-difference Hessian of a stored slice.

    Returns an array of shape ``grid.shape + (dim, dim)``; frame entries are
    NaN on framed grids.  Mixed entries use the standard four-point cross.
    """
    u = f.slices[index]
    grid = f.grid
    d = grid.dim
    h = grid.spacing
    if isinstance(f.policy, PeriodicBase):
        p = u - f._base_vals
        base = np.diag(f.policy.coeffs)
    else:
        p = u
        base = np.zeros((d, d))
    out = np.empty(grid.shape + (d, d))
    for a in range(d):
        out[..., a, a] = _second_diff(p, a, h[a]) + base[a, a]
        for b in range(a + 1, d):
            mixed = _mixed_diff(p, a, b, h[a], h[b]) + base[a, b]
            out[..., a, b] = mixed
            out[..., b, a] = mixed
    if not grid.periodic:
        out[grid.frame_mask()] = np.nan
    return out


# ---------------------------------------------------------------------------
# time stepping
# ---------------------------------------------------------------------------


def _cfl_bound(f: FlowField, lam: float, Lam: float) -> float:
    h_min = min(f.grid.spacing)
    return f.cfl_constant * h_min * h_min * lam / Lam


def _rk4_step(f: FlowField, u: np.ndarray, t: float) -> Tuple[np.ndarray, float]:
    dt = f.dt
    ii = f.grid.interior
    conv, conc = _block_fields(f, u)
    lam, Lam = _require_membership(f, conv, conc, "explicit step")
    bound = _cfl_bound(f, lam, Lam)
    if dt > bound * (1.0 + 1e-12):
        raise CFLViolation(
            f"timestep {dt:.6e} exceeds the explicit stability bound "
            f"{bound:.6e} = c*h^2*lam/Lam with c = {f.cfl_constant}, "
            f"measured lam = {lam:.6e}, Lam = {Lam:.6e}"
        )
    k1 = _flow_value_from_blocks(f, conv, conc)

    def advanced(kval: np.ndarray, scale: float, t_new: float) -> np.ndarray:
        out = u.copy()
        out[ii] += scale * kval[ii]
        _apply_frame(f, out, t_new)
        return out

    u2 = advanced(k1, 0.5 * dt, t + 0.5 * dt)
    k2 = _stage_value(f, u2, "explicit stage 2")
    u3 = advanced(k2, 0.5 * dt, t + 0.5 * dt)
    k3 = _stage_value(f, u3, "explicit stage 3")
    u4 = advanced(k3, dt, t + dt)
    k4 = _stage_value(f, u4, "explicit stage 4")

    unew = u.copy()
    unew[ii] += (dt / 6.0) * (k1[ii] + 2.0 * k2[ii] + 2.0 * k3[ii] + k4[ii])
    _apply_frame(f, unew, t + dt)
    return unew, bound


def _linearized_gammas(f: FlowField, conv: np.ndarray, conc: np.ndarray) -> List[np.ndarray]:
    """Per-axis coefficients of the linearized operator ``L = sum_a gamma_a d^2_a``.

    Linearizing ``F`` at the current slice gives positive coefficients:
    the reciprocal of the convex block on convex axes and of the negated
    concave block on concave axes (with the quarter factor in the 4-D case).
    """
    if f.flavor == "real":
        return [1.0 / conv, 1.0 / conc]
    gz = 0.25 / conv
    gw = 0.25 / conc
    return [gz, gw, gz, gw]


def _operator_matrix(
    f: FlowField, gammas: Sequence[np.ndarray]
) -> Tuple[sp.csc_matrix, np.ndarray, np.ndarray]:
    """Sparse matrix of ``L = sum_a gamma_a d^2_a`` over the unknown nodes.

    Unknowns are the interior nodes (framed grids; frame values are data, so
    stencil legs reaching into the frame drop out of the matrix) or all nodes
    (periodic grids, wrapped legs).  Returns the matrix, the flat indices of
    the unknowns in C order, and the per-row sum of dropped leg weights (the
    coupling of each unknown to the frame; all zero on periodic grids).
    """
    grid = f.grid
    n_total = int(np.prod(grid.shape))
    idx = np.arange(n_total).reshape(grid.shape)
    ii = grid.interior
    unknowns = idx[ii].ravel()
    m = unknowns.size
    compact = np.full(n_total, -1, dtype=np.int64)
    compact[unknowns] = np.arange(m)

    rows: List[np.ndarray] = []
    cols: List[np.ndarray] = []
    vals: List[np.ndarray] = []
    diag = np.zeros(m)
    frame_legs = np.zeros(m)
    rows_self = compact[unknowns]
    for a, (g, h) in enumerate(zip(gammas, grid.spacing)):
        w = (g[ii].ravel()) / (h * h)
        diag -= 2.0 * w
        for shift in (1, -1):
            nb = np.roll(idx, -shift, axis=a)[ii].ravel()
            cn = compact[nb]
            keep = cn >= 0
            rows.append(rows_self[keep])
            cols.append(cn[keep])
            vals.append(w[keep])
            frame_legs[~keep] += w[~keep]
    rows.append(rows_self)
    cols.append(rows_self)
    vals.append(diag)
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(m, m),
    ).tocsc()
    return mat, unknowns, frame_legs


def _semi_implicit_step(f: FlowField, u: np.ndarray, t: float) -> Tuple[np.ndarray, float]:
    """One lagged-coefficient semi-implicit step: ``(I - dt*L_n) du = dt*F_n``.

    The frame increment over the step is known exactly for a frozen frame
    (the boundary values are linear in time), so its stencil coupling moves
    to the right-hand side instead of being lagged.
    """
    dt = f.dt
    conv, conc = _block_fields(f, u)
    _require_membership(f, conv, conc, "semi-implicit step")
    rhs_full = _flow_value_from_blocks(f, conv, conc)
    gammas = _linearized_gammas(f, conv, conc)
    lmat, unknowns, frame_legs = _operator_matrix(f, gammas)
    rhs = dt * rhs_full.ravel()[unknowns]
    if isinstance(f.policy, FrozenFrame):
        frame_delta = f.policy.spec.time_drift * dt
        if frame_delta != 0.0:
            rhs += dt * frame_delta * frame_legs
    a_mat = (sp.identity(lmat.shape[0], format="csc") - dt * lmat).tocsc()
    delta = splu(a_mat).solve(rhs)
    unew = u.copy()
    unew.ravel()[unknowns] += delta
    _apply_frame(f, unew, t + dt)
    return unew, math.inf


_STEPPERS: dict = {"rk4": _rk4_step, "semi-implicit": _semi_implicit_step}


def run_flow(
    f: FlowField,
    steps: int,
    scheme: str = "rk4",
    snapshot_every: int = 1,
) -> FlowField:
    """Advance the flow ``steps`` timesteps, storing every ``snapshot_every``-th slice.

    The final slice is always stored.  Each explicit step checks class
    membership (with margin) and the measured stability bound before moving;
    the semi-implicit scheme checks membership only.  The last slice is
    membership-checked after the run so a field that has just left the class
    cannot be returned silently.
    """
    if steps < 1:
        raise TmaError(f"need at least one step, got {steps}")
    if snapshot_every < 1:
        raise TmaError(f"snapshot_every must be >= 1, got {snapshot_every}")
    if scheme not in _STEPPERS:
        raise TmaError(f"unknown scheme {scheme!r}; expected one of {tuple(_STEPPERS)}")
    if f.dt <= 0.0:
        raise TmaError("stepping needs a positive timestep")
    stepper = _STEPPERS[scheme]
    t0 = f.times[-1]
    u = f.slices[-1]
    new_slices = list(f.slices)
    new_times = list(f.times)
    new_log = list(f.cfl_log)
    for n in range(1, steps + 1):
        t_prev = t0 + (n - 1) * f.dt
        u, bound = stepper(f, u, t_prev)
        if scheme == "rk4":
            new_log.append(bound)
        if n % snapshot_every == 0 or n == steps:
            new_slices.append(u)
            new_times.append(t0 + n * f.dt)
    conv, conc = _block_fields(f, u)
    _require_membership(f, conv, conc, "post-step check")
    return dataclasses.replace(f, slices=new_slices, times=new_times, cfl_log=new_log)


def step_parabolic(f: FlowField, scheme: str = "rk4") -> FlowField:
    """Advance the flow by a single timestep (``rk4`` or ``semi-implicit``)."""
    return run_flow(f, 1, scheme=scheme, snapshot_every=1)


# ---------------------------------------------------------------------------
# elliptic solve
# ---------------------------------------------------------------------------


def solve_elliptic(
    boundary: ExpressionSpec,
    grid: BoxGrid,
    guess: Optional[Union[ExpressionSpec, np.ndarray]] = None,
    target: float = 0.0,
    tol: float = 1e-10,
    max_iterations: int = 50,
) -> FlowField:
    """Solve the steady equation ``F(u) = target`` by damped Newton iteration.

    ``boundary`` supplies the frozen frame (evaluated at time 0); the initial
    guess defaults to the boundary description evaluated everywhere.  Each
    Newton step solves the linearized equation on the interior and halves the
    step until the iterate both stays in class and strictly decreases the
    sup-norm residual.  Raises :class:`ClassExit` if the initial guess is out
    of class and :class:`NoConvergence` after ``max_iterations`` Newton steps
    (or when damping stalls).
    """
    if grid.periodic:
        raise TmaError("the elliptic solve needs boundary data: use a framed grid")
    if guess is None:
        values = evaluate_on_grid(boundary, grid, time=0.0)
    elif isinstance(guess, ExpressionSpec):
        values = evaluate_on_grid(guess, grid, time=0.0)
    else:
        values = np.asarray(guess, dtype=float).copy()
    f = flow_from_values(values, grid, 0.0, _infer_flavor(boundary, grid),
                         FrozenFrame(boundary))
    u = f.slices[0]
    ii = grid.interior

    def residual_of(candidate: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray, np.ndarray]:
        conv, conc = _block_fields(f, candidate)
        r = _flow_value_from_blocks(f, conv, conc) - target
        return float(np.abs(r[ii]).max()), r, conv, conc

    conv, conc = _block_fields(f, u)
    _require_membership(f, conv, conc, "elliptic initial guess")
    res, r, conv, conc = residual_of(u)
    for _ in range(max_iterations):
        if res <= tol:
            return dataclasses.replace(f, slices=[u], times=[0.0])
        lmat, unknowns, _ = _operator_matrix(f, _linearized_gammas(f, conv, conc))
        delta = splu(lmat).solve(-r.ravel()[unknowns])
        step = 1.0
        while True:
            cand = u.copy()
            cand.ravel()[unknowns] += step * delta
            try:
                c2, k2 = _block_fields(f, cand)
                _require_membership(f, c2, k2, "elliptic damping")
            except ClassExit:
                step *= 0.5
                if step < 2.0**-30:
                    raise NoConvergence(
                        "damping stalled: no in-class step decreases the residual"
                    ) from None
                continue
            res_new, r_new, c_new, k_new = residual_of(cand)
            if res_new < res:
                u, res, r, conv, conc = cand, res_new, r_new, c_new, k_new
                break
            step *= 0.5
            if step < 2.0**-30:
                raise NoConvergence(
                    "damping stalled: no in-class step decreases the residual"
                )
    if res <= tol:
        return dataclasses.replace(f, slices=[u], times=[0.0])
    raise NoConvergence(
        f"Newton iteration did not reach residual {tol:.1e} in "
        f"{max_iterations} steps (final residual {res:.3e})"
    )


# ---------------------------------------------------------------------------
# class monitoring
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClassSeries:
    """Per-slice eigenvalue bounds of both Hessian blocks along a run.

    The convex entries bound the convex block's eigenvalues, the concave
    entries bound the eigenvalues of the *negated* concave block, so class
    membership with constants ``(lower, upper)`` means all four series lie in
    ``[lower, upper]``.  ``first_violation`` is the index of the first slice
    leaving that window (``None`` if none does).
    """

    times: np.ndarray
    convex_min: np.ndarray
    convex_max: np.ndarray
    concave_min: np.ndarray
    concave_max: np.ndarray
    first_violation: Optional[int]


def monitor_class(
    f: FlowField,
    lower: float,
    upper: float,
    tol: float = 1e-9,
) -> ClassSeries:
    """Track block eigenvalue bounds over the stored slices of a run.

    For the supported flavors both Hessian blocks are one-dimensional, so the
    eigenvalue bounds are the extrema of the discrete block fields over the
    interior.  A slice violates the window when any of the four bounds falls
    outside ``[lower - tol, upper + tol]``.
    """
    n = len(f.slices)
    cmin = np.empty(n)
    cmax = np.empty(n)
    kmin = np.empty(n)
    kmax = np.empty(n)
    first: Optional[int] = None
    for i, u in enumerate(f.slices):
        conv, conc = _block_fields(f, u)
        cmin[i], cmax[i] = _interior_bounds(f.grid, conv)
        kmin[i], kmax[i] = _interior_bounds(f.grid, conc)
        bad = (
            min(cmin[i], kmin[i]) < lower - tol
            or max(cmax[i], kmax[i]) > upper + tol
        )
        if bad and first is None:
            first = i
    return ClassSeries(np.asarray(f.times, dtype=float), cmin, cmax, kmin, kmax, first)


# ---------------------------------------------------------------------------
# convergence estimators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OrderEstimate:
    """A measured convergence order: ``errors[i]`` at refinement level ``i``.

    ``order`` is ``log2`` of the last error ratio; ``ratio`` the ratio itself.
    """

    order: float
    errors: Tuple[float, ...]

    @property
    def ratio(self) -> float:
        return self.errors[-2] / self.errors[-1]


def time_order_estimate(
    f: FlowField,
    total_time: float,
    scheme: str = "rk4",
) -> OrderEstimate:
    """Richardson self-convergence order of the time stepper.

    Runs from the latest slice to ``total_time`` (a multiple of ``f.dt``)
    with timesteps ``dt``, ``dt/2``, ``dt/4`` on the same grid, and compares
    final slices on the interior: for a scheme of order p the successive
    differences shrink by ``2^p``.
    """
    n0 = int(round(total_time / f.dt))
    if n0 < 1 or abs(n0 * f.dt - total_time) > 1e-9 * abs(total_time):
        raise TmaError(
            f"total_time {total_time} is not a positive multiple of dt {f.dt}"
        )
    ii = f.grid.interior
    finals = []
    for level in range(3):
        fl = dataclasses.replace(
            f,
            dt=f.dt / 2**level,
            slices=[f.slices[-1]],
            times=[f.times[-1]],
            cfl_log=[],
        )
        fl = run_flow(fl, n0 * 2**level, scheme=scheme, snapshot_every=n0 * 2**level)
        finals.append(fl.slices[-1][ii])
    d1 = float(np.abs(finals[0] - finals[1]).max())
    d2 = float(np.abs(finals[1] - finals[2]).max())
    if d2 == 0.0:
        raise TmaError(
            "successive refinements agree exactly; the run has no measurable "
            "time error (use a non-stationary initial condition)"
        )
    return OrderEstimate(order=math.log2(d1 / d2), errors=(d1, d2))


def _aligned_samples(grid: BoxGrid, per_axis: int = 7) -> List[Tuple[int, ...]]:
    """Interior node indices, ~``per_axis`` per axis, refinement-aligned."""
    choices = []
    for n in grid.shape:
        lo = grid.frame if not grid.periodic else 0
        hi = n - 1 - grid.frame if not grid.periodic else n - 1
        count = min(per_axis, hi - lo + 1)
        choices.append(np.unique(np.linspace(lo, hi, count).round().astype(int)))
    mesh = np.meshgrid(*choices, indexing="ij")
    return [tuple(int(m[idx]) for m in mesh) for idx in np.ndindex(mesh[0].shape)]


def hessian_error(
    spec: ExpressionSpec,
    grid: BoxGrid,
    time: float = 0.0,
    samples: Optional[List[Tuple[int, ...]]] = None,
) -> float:
    """Sup-norm gap between the centered-difference Hessian and the exact one.

    The exact Hessian comes from the analytic jet of ``spec``; the gap is
    maximized over a refinement-aligned sample of interior nodes (all Hessian
    entries, mixed included).
    """
    if grid.periodic:
        policy: BoundaryPolicy = PeriodicBase((0.0,) * grid.dim)
        flavor = _infer_flavor(spec, grid)
        f = flow_from_values(evaluate_on_grid(spec, grid, time), grid, 0.0, flavor, policy)
    else:
        f = flow_from_spec(spec, grid, 0.0, time=time)
    hess = discrete_hessian(f, 0)
    axes = grid.axes()
    if samples is None:
        samples = _aligned_samples(grid)
    worst = 0.0
    for idx in samples:
        point = tuple(float(axes[a][i]) for a, i in enumerate(idx))
        exact = spec.jet(point, time, order=2).hessian()
        worst = max(worst, float(np.abs(hess[idx] - exact).max()))
    return worst


def spatial_order_estimate(
    spec: ExpressionSpec,
    grid: BoxGrid,
    time: float = 0.0,
) -> OrderEstimate:
    """Measured spatial order of the discrete Hessian under one refinement.

    Errors are evaluated at the same physical points on the coarse grid and
    its refinement (coarse node ``i`` = fine node ``2i``), so the ratio
    reflects pure stencil error; second-order stencils give a ratio near 4.
    """
    coarse_samples = _aligned_samples(grid)
    fine_samples = [tuple(2 * i for i in idx) for idx in coarse_samples]
    e_coarse = hessian_error(spec, grid, time, samples=coarse_samples)
    e_fine = hessian_error(spec, grid.refined(), time, samples=fine_samples)
    if e_fine == 0.0:
        raise TmaError(
            "discrete Hessian is exact on this description (polynomial of "
            "degree <= 2?); spatial order is not measurable"
        )
    return OrderEstimate(order=math.log2(e_coarse / e_fine), errors=(e_coarse, e_fine))


# ---------------------------------------------------------------------------
# snapshot input/output
# ---------------------------------------------------------------------------


def _snapshot_meta(f: FlowField, index: int) -> dict:
    return {
        "format": "flow-snapshot",
        "flavor": f.flavor,
        "time": f.times[index],
        "dt": f.dt,
        "lo": list(f.grid.lo),
        "hi": list(f.grid.hi),
        "shape": list(f.grid.shape),
        "frame": f.grid.frame,
    }


def write_snapshot_csv(f: FlowField, path: str, index: int = -1) -> None:
    """Write one slice as text: node coordinates and value, one node per row.

    Plain RFC-4180 CSV with LF line endings, '.' decimal separator, and 17
    significant digits (floats round-trip exactly).
    """
    coords = f.grid.points()
    values = f.slices[index].ravel()
    d = f.grid.dim
    header = ",".join([f"x{a}" for a in range(d)] + ["u"])
    lines = [header]
    for row, v in zip(coords, values):
        lines.append(",".join(format(c, ".17g") for c in row) + "," + format(v, ".17g"))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def read_snapshot_csv(path: str) -> Tuple[np.ndarray, np.ndarray]:
    """Read a CSV snapshot back as ``(coordinates, values)`` arrays."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, :-1], data[:, -1]


def write_snapshot_json(
    f: FlowField,
    path: str,
    index: int = -1,
    data_path: Optional[str] = None,
) -> str:
    """Write one slice as JSON metadata plus a flat little-endian float64 file.

    Returns the data-file path (default: ``path`` with a ``.bin`` suffix).
    The array is stored in C order with the grid shape in the metadata.
    """
    if data_path is None:
        data_path = path[: -len(".json")] + ".bin" if path.endswith(".json") else path + ".bin"
    meta = _snapshot_meta(f, index)
    meta["data_file"] = data_path.rsplit("/", 1)[-1]
    meta["dtype"] = "<f8"
    meta["order"] = "C"
    with open(data_path, "wb") as fh:
        fh.write(np.ascontiguousarray(f.slices[index], dtype="<f8").tobytes())
    with open(path, "w", newline="") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return data_path


def read_snapshot_json(path: str) -> Tuple[dict, np.ndarray]:
    """Read a JSON+binary snapshot back as ``(metadata, values)``."""
    with open(path) as fh:
        meta = json.load(fh)
    directory = path.rsplit("/", 1)[0] if "/" in path else "."
    data_path = directory + "/" + meta["data_file"]
    raw = np.fromfile(data_path, dtype="<f8")
    return meta, raw.reshape(tuple(meta["shape"]))


# ---------------------------------------------------------------------------
# ready-made analytic descriptions
# ---------------------------------------------------------------------------


def reference_flow_spec(a: float, b: float, flavor: str = "real") -> ExpressionSpec:
    """The separable quadratic whose flow is exactly linear in time.

    Real flavor: ``u0 = a x^2/2 - b y^2/2``; complex flavor: the analogue
    with convex complex direction scaled by ``a`` and concave by ``b``.  In
    both cases ``F(u0) = log(a/b)`` identically, so the exact flow is
    ``u0 + t log(a/b)``; the returned description carries that drift.
    """
    if a <= 0 or b <= 0:
        raise TmaError(f"need positive block scales, got a = {a}, b = {b}")
    drift = math.log(a / b)
    if flavor == "real":
        expr = {
            "kind": "quad",
            "matrix": [[a, 0.0], [0.0, -b]],
            "linear": [0.0, 0.0],
            "constant": 0.0,
        }
        return ExpressionSpec(expr=expr, k=1, l=1, flavor="real", time_drift=drift)
    if flavor == "complex11":
        expr = {
            "kind": "quad",
            "matrix": [
                [2 * a, 0.0, 0.0, 0.0],
                [0.0, -2 * b, 0.0, 0.0],
                [0.0, 0.0, 2 * a, 0.0],
                [0.0, 0.0, 0.0, -2 * b],
            ],
            "linear": [0.0, 0.0, 0.0, 0.0],
            "constant": 0.0,
        }
        return ExpressionSpec(expr=expr, k=1, l=1, flavor="complex", time_drift=drift)
    raise TmaError(f"unknown flavor {flavor!r}; expected one of {FLAVORS}")


def perturbed_flow_spec(
    a: float,
    b: float,
    eps: float,
    flavor: str = "real",
    modes: Optional[Sequence[Tuple[float, ...]]] = None,
    weights: Optional[Sequence[float]] = None,
) -> ExpressionSpec:
    """The reference quadratic plus trigonometric ripples, no time drift.

    Each mode contributes ``eps * weight * sin(mode . x)``; integer modes make
    the ripple ``2*pi``-periodic, so the description is directly usable atop a
    :class:`PeriodicBase` with the matching quadratic coefficients.
    """
    base = reference_flow_spec(a, b, flavor)
    nvars = base.nvars
    if modes is None:
        modes = ((1.0,) * nvars,)
    if weights is None:
        weights = (1.0,) * len(modes)
    if len(weights) != len(modes):
        raise TmaError(f"{len(modes)} modes but {len(weights)} weights")
    terms: List[dict] = [base.expr]
    for mode, w in zip(modes, weights):
        if len(mode) != nvars:
            raise DimensionMismatch(
                f"mode {mode} has {len(mode)} entries, need {nvars}"
            )
        terms.append(
            {
                "kind": "scale",
                "coefficient": float(eps) * float(w),
                "term": {
                    "kind": "atom",
                    "fn": "sin",
                    "affine": [float(c) for c in mode],
                    "const": 0.0,
                },
            }
        )
    return ExpressionSpec(
        expr={"kind": "sum", "terms": terms},
        k=base.k,
        l=base.l,
        flavor=base.flavor,
        time_drift=0.0,
    )


def periodic_base_for(a: float, b: float, flavor: str = "real") -> PeriodicBase:
    """The periodic-run base matching :func:`reference_flow_spec`'s quadratic."""
    if flavor == "real":
        return PeriodicBase((a, -b))
    if flavor == "complex11":
        return PeriodicBase((2 * a, -2 * b, 2 * a, -2 * b))
    raise TmaError(f"unknown flavor {flavor!r}; expected one of {FLAVORS}")


__all__.append("periodic_base_for")
