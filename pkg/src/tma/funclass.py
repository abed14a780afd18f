"""Convexity-class membership and reproducible random ensembles.

A function belongs to the class with bounds ``(lam, Lam)`` when, at every
sampled point, the convex-block Hessian (real: u_xx; complex: the z-block of
Wirtinger second derivatives) has eigenvalues in ``[lam, Lam]`` and so does the
negated concave block.  Membership is certified on a finite sample cloud — the
cloud density is a config knob, continuous verification being impossible.

Ensembles are convex-concave quadratic bases plus bounded-Hessian trig atoms,
scaled so membership is guaranteed by construction: universal sign and
identity claims become sweep-testable without rejection sampling.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy.stats import qmc

from .errors import AmplitudeTooLarge, ParseError
from .jets import ExpressionSpec, evaluate_jet, wirtinger_from_real
from .linalg import min_max_eigenvalues


def default_cloud(dim: int, halfwidth: float = 1.0, grid_per_axis: int | None = None, n_quasi: int = 500):
    """Tensor grid plus Halton points filling the box ``[-halfwidth, halfwidth]^dim``.

    The default grid is 11 points per axis for dim <= 4 (the spec-scale
    cases); higher dimensions drop to 5 and then 3 per axis to stay at desk
    scale.  The Halton sequence is unscrambled, so clouds are deterministic.
    """
    if grid_per_axis is None:
        grid_per_axis = 11 if dim <= 4 else (5 if dim <= 6 else 3)
    axis = np.linspace(-halfwidth, halfwidth, grid_per_axis)
    grid = np.array(list(itertools.product(axis, repeat=dim)))
    halton = qmc.Halton(d=dim, scramble=False).random(n_quasi)
    quasi = (2.0 * halton - 1.0) * halfwidth
    return np.vstack([grid, quasi])


@dataclass
class ClassReport:
    """Outcome of a membership check over a sample cloud."""

    member: bool
    lam: float
    Lam: float
    bounds: np.ndarray  # (n_points, 4): min/max of convex block, min/max of negated concave block
    first_violation: Optional[Tuple[float, ...]]


def _point_block_bounds(spec: ExpressionSpec, point) -> Tuple[float, float, float, float]:
    jet = evaluate_jet(spec, point, order=2)
    if spec.flavor == "real":
        a, _, c = jet.hessian_blocks()
        neg_c = -c
    else:
        z, _, v = wirtinger_from_real(jet).second_blocks()
        a, neg_c = z, -v
    if a.size:
        min_x, max_x = min_max_eigenvalues(a)
    else:
        min_x, max_x = np.inf, -np.inf
    if neg_c.size:
        min_y, max_y = min_max_eigenvalues(neg_c)
    else:
        min_y, max_y = np.inf, -np.inf
    return min_x, max_x, min_y, max_y


def class_membership(spec: ExpressionSpec, cloud, lam: float, Lam: float, tol: float = 1e-9) -> ClassReport:
    """Check both Hessian-block eigenvalue bounds at every cloud point.

    Deterministic given the cloud.  ``member`` is true iff every sampled bound
    lies in ``[lam - tol, Lam + tol]``.
    """
    if not (0.0 < lam <= Lam):
        raise ValueError(f"need 0 < lam <= Lam, got ({lam}, {Lam})")
    cloud = np.atleast_2d(np.asarray(cloud, dtype=float))
    if cloud.shape[0] == 0:
        raise ValueError("empty sample cloud")
    bounds = np.empty((cloud.shape[0], 4))
    first_violation = None
    member = True
    for i, point in enumerate(cloud):
        b = _point_block_bounds(spec, point)
        bounds[i] = b
        ok = True
        if np.isfinite(b[0]):
            ok = ok and (b[0] >= lam - tol) and (b[1] <= Lam + tol)
        if np.isfinite(b[2]):
            ok = ok and (b[2] >= lam - tol) and (b[3] <= Lam + tol)
        if not ok and member:
            member = False
            first_violation = tuple(point)
    return ClassReport(member=member, lam=lam, Lam=Lam, bounds=bounds, first_violation=first_violation)


# ---------------------------------------------------------------------------
# ensembles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnsembleSpec:
    """Generative family of guaranteed class members.

    Base quadratic ``a|x|^2/2 - b|y|^2/2`` (real flavor) or ``a|z|^2 - b|w|^2``
    (complex flavor) plus ``n_atoms`` trig atoms whose Hessian sup-norms sum to
    ``eps``.  Every draw passes membership with ``lam = min(a,b)/2`` and
    ``Lam = 2 max(a,b)`` provided ``eps <= min(a,b)/2``.
    """

    k: int
    l: int
    flavor: str = "real"
    a: float = 1.0
    b: float = 1.0
    eps: float = 0.1
    n_atoms: int = 3
    seed: int = 0
    domain_halfwidth: float = 1.0

    @property
    def nvars(self) -> int:
        return self.k + self.l if self.flavor == "real" else 2 * (self.k + self.l)

    def guaranteed_bounds(self) -> Tuple[float, float]:
        return min(self.a, self.b) / 2.0, 2.0 * max(self.a, self.b)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "l": self.l,
            "flavor": self.flavor,
            "a": self.a,
            "b": self.b,
            "eps": self.eps,
            "n_atoms": self.n_atoms,
            "seed": self.seed,
            "domain_halfwidth": self.domain_halfwidth,
        }

    @classmethod
    def from_dict(cls, obj) -> "EnsembleSpec":
        if not isinstance(obj, dict):
            raise ParseError(f"ensemble: expected an object, got {type(obj).__name__}")
        known = {f for f in cls.__dataclass_fields__}
        extra = set(obj) - known
        if extra:
            raise ParseError(f"ensemble: unknown fields {sorted(extra)}")
        try:
            es = cls(**obj)
        except TypeError as e:
            raise ParseError(f"ensemble: {e}") from e
        if es.flavor not in ("real", "complex"):
            raise ParseError(f"ensemble.flavor: expected real|complex, got {es.flavor!r}")
        if not isinstance(es.seed, int) or es.seed < 0:
            raise ParseError("ensemble.seed: expected an unsigned integer")
        return es

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), allow_nan=False)


def _base_quadratic_hessian(es: EnsembleSpec) -> np.ndarray:
    k, l = es.k, es.l
    if es.flavor == "real":
        return np.diag([es.a] * k + [-es.b] * l)
    m = k + l
    diag = np.empty(2 * m)
    diag[:k] = 2.0 * es.a
    diag[k:m] = -2.0 * es.b
    diag[m : m + k] = 2.0 * es.a
    diag[m + k :] = -2.0 * es.b
    return np.diag(diag)


def draw_member(es: EnsembleSpec, index: int) -> ExpressionSpec:
    """The ``index``-th ensemble member: pure function of (seed, index).

    Splittable per draw so parallel and serial sweeps agree.
    """
    n = es.nvars
    rng = np.random.default_rng(np.random.SeedSequence(entropy=es.seed, spawn_key=(index,)))
    terms = [
        {
            "kind": "quad",
            "matrix": _base_quadratic_hessian(es).tolist(),
            "linear": [0.0] * n,
            "constant": 0.0,
        }
    ]
    per_atom = es.eps / max(es.n_atoms, 1)
    for _ in range(es.n_atoms):
        v = rng.uniform(-1.0, 1.0, n)
        while float(v @ v) < 0.09:
            v = rng.uniform(-1.0, 1.0, n)
        fn = "sin" if rng.integers(2) == 0 else "cos"
        phase = float(rng.uniform(0.0, 2.0 * np.pi))
        coeff = per_atom / float(v @ v)  # atom Hessian sup-norm = coeff * |v|^2 = eps / n_atoms
        terms.append(
            {
                "kind": "scale",
                "coefficient": coeff,
                "term": {"kind": "atom", "fn": fn, "affine": v.tolist(), "const": phase},
            }
        )
    return ExpressionSpec(expr={"kind": "sum", "terms": terms}, k=es.k, l=es.l, flavor=es.flavor)


def sample_ensemble(es: EnsembleSpec, n_draws: int) -> List[ExpressionSpec]:
    """Draw ``n_draws`` members; identical seed implies identical output.

    Raises
    ------
    AmplitudeTooLarge
        when the atom-wise Hessian bound ``eps`` exceeds ``min(a, b)/2``.
    """
    if es.eps > min(es.a, es.b) / 2.0 + 1e-15:
        raise AmplitudeTooLarge(
            f"perturbation bound eps = {es.eps} exceeds min(a,b)/2 = {min(es.a, es.b) / 2.0}"
        )
    return [draw_member(es, i) for i in range(n_draws)]


def sample_points(es: EnsembleSpec, index: int, n_points: int) -> np.ndarray:
    """Deterministic per-draw evaluation points inside the declared box."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=es.seed, spawn_key=(index, 1)))
    return rng.uniform(-es.domain_halfwidth, es.domain_halfwidth, (n_points, es.nvars))


def permute_negate(spec: ExpressionSpec, perm) -> ExpressionSpec:
    """The function ``v(x) = -u(x[perm[0]], ..., x[perm[n-1]])``; block-swap smoke test helper."""
    perm = list(perm)
    inv = [0] * len(perm)
    for i, p in enumerate(perm):
        inv[p] = i
    perm = inv  # coefficient arrays move by the inverse permutation

    def walk(node):
        kind = node["kind"]
        if kind == "sum":
            return {"kind": "sum", "terms": [walk(t) for t in node["terms"]]}
        if kind == "product":
            return {"kind": "product", "factors": [walk(t) for t in node["factors"]]}
        if kind == "scale":
            return {"kind": "scale", "coefficient": node["coefficient"], "term": walk(node["term"])}
        if kind == "quad":
            m = np.asarray(node["matrix"])[np.ix_(perm, perm)]
            lin = np.asarray(node["linear"])[perm]
            return {"kind": "quad", "matrix": m.tolist(), "linear": lin.tolist(), "constant": node["constant"]}
        out = dict(node)
        out["affine"] = np.asarray(node["affine"])[perm].tolist()
        return out

    negated = {"kind": "scale", "coefficient": -1.0, "term": walk(spec.expr)}
    return ExpressionSpec(
        expr=negated,
        k=spec.l,
        l=spec.k,
        flavor=spec.flavor,
        time_drift=-spec.time_drift,
        domain_halfwidth=spec.domain_halfwidth,
    )
