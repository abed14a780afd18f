"""Exact jets of analytic test functions, in real and Wirtinger form.

An :class:`ExpressionSpec` describes a test function as a tree of quadratic
forms, univariate analytic atoms applied to affine arguments, and
sum/product/scale combinators.  :func:`evaluate_jet` pushes a truncated Taylor
polynomial through the tree and returns a :class:`SpaceTimeJet` — every spatial
partial to total order 4, exact up to rounding of the closed-form recursions.

Complex-flavored specs live on real coordinates ``[Re z_1..Re z_m, Im z_1..Im
z_m]`` where the m = k + l complex variables are ``(z_1..z_k, w_1..w_l)``.
:func:`wirtinger_from_real` converts a real jet into mixed
holomorphic/antiholomorphic partials under the fixed normalization
``d/dz = (d/dx - i d/dy)/2``.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Tuple

import numpy as np

from .errors import DimensionMismatch, DomainViolation, ParseError, UnknownAtom
from .taylor import ATOM_NAMES, TaylorPoly, atom_derivatives

MultiIndex = Tuple[int, ...]
WirtKey = Tuple[MultiIndex, MultiIndex]

KINDS = ("sum", "product", "scale", "quad", "atom")
FLAVORS = ("real", "complex")


@lru_cache(maxsize=None)
def multi_indices(nvars: int, max_order: int) -> Tuple[MultiIndex, ...]:
    """All exponent tuples over ``nvars`` variables with total degree <= ``max_order``, sorted."""
    out = []
    for total in range(max_order + 1):
        for combo in itertools.combinations_with_replacement(range(nvars), total):
            e = [0] * nvars
            for i in combo:
                e[i] += 1
            out.append(tuple(e))
    return tuple(sorted(set(out)))


def unit_index(nvars: int, i: int, j: int | None = None) -> MultiIndex:
    e = [0] * nvars
    e[i] += 1
    if j is not None:
        e[j] += 1
    return tuple(e)


# ---------------------------------------------------------------------------
# ExpressionSpec: validation, serialization, evaluation
# ---------------------------------------------------------------------------


def _err(path: str, msg: str) -> ParseError:
    return ParseError(f"at {path}: {msg}")


def _check_number(x, path):
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise _err(path, f"expected a number, got {type(x).__name__}")
    return float(x)


_NODE_KEYS = {
    "sum": {"kind", "terms"},
    "product": {"kind", "factors"},
    "scale": {"kind", "coefficient", "term"},
    "quad": {"kind", "matrix", "linear", "constant"},
    "atom": {"kind", "fn", "affine", "const", "exponent"},
}


def _validate_node(node, nvars: int, path: str) -> None:
    if not isinstance(node, dict):
        raise _err(path, f"expected an object, got {type(node).__name__}")
    kind = node.get("kind")
    if kind not in KINDS:
        raise _err(path, f"unknown kind {kind!r}; expected one of {KINDS}")
    extra = set(node) - _NODE_KEYS[kind]
    if extra:
        raise _err(path, f"unexpected fields for kind {kind!r}: {sorted(extra)}")
    if kind == "sum":
        terms = node.get("terms")
        if not isinstance(terms, list) or not terms:
            raise _err(path + ".terms", "expected a non-empty list")
        for i, t in enumerate(terms):
            _validate_node(t, nvars, f"{path}.terms[{i}]")
    elif kind == "product":
        factors = node.get("factors")
        if not isinstance(factors, list) or len(factors) < 2:
            raise _err(path + ".factors", "expected a list of at least two factors")
        for i, t in enumerate(factors):
            _validate_node(t, nvars, f"{path}.factors[{i}]")
    elif kind == "scale":
        _check_number(node.get("coefficient"), path + ".coefficient")
        _validate_node(node.get("term"), nvars, path + ".term")
    elif kind == "quad":
        m = node.get("matrix")
        if not isinstance(m, list) or len(m) != nvars:
            raise _err(path + ".matrix", f"expected {nvars} rows")
        for i, row in enumerate(m):
            if not isinstance(row, list) or len(row) != nvars:
                raise _err(f"{path}.matrix[{i}]", f"expected {nvars} entries")
            for j, v in enumerate(row):
                _check_number(v, f"{path}.matrix[{i}][{j}]")
        for i in range(nvars):
            for j in range(i):
                if float(m[i][j]) != float(m[j][i]):
                    raise _err(path + ".matrix", f"not symmetric at ({i},{j})")
        lin = node.get("linear")
        if not isinstance(lin, list) or len(lin) != nvars:
            raise _err(path + ".linear", f"expected {nvars} entries")
        for j, v in enumerate(lin):
            _check_number(v, f"{path}.linear[{j}]")
        _check_number(node.get("constant"), path + ".constant")
    elif kind == "atom":
        fn = node.get("fn")
        if not isinstance(fn, str):
            raise _err(path + ".fn", "expected a string")
        if fn not in ATOM_NAMES:
            raise UnknownAtom(f"at {path}.fn: unknown atom function {fn!r}; supported: {', '.join(ATOM_NAMES)}")
        aff = node.get("affine")
        if not isinstance(aff, list) or len(aff) != nvars:
            raise _err(path + ".affine", f"expected {nvars} entries")
        for j, v in enumerate(aff):
            _check_number(v, f"{path}.affine[{j}]")
        _check_number(node.get("const"), path + ".const")
        if fn == "pow":
            _check_number(node.get("exponent"), path + ".exponent")
        elif "exponent" in node:
            raise _err(path + ".exponent", "only pow atoms carry an exponent")


def _infer_nvars(node, path: str = "expr") -> int | None:
    """First dimension hint found in the tree (length of a quad matrix or atom affine)."""
    kind = node.get("kind") if isinstance(node, dict) else None
    if kind == "quad" and isinstance(node.get("matrix"), list):
        return len(node["matrix"])
    if kind == "atom" and isinstance(node.get("affine"), list):
        return len(node["affine"])
    if kind == "sum":
        for t in node.get("terms") or []:
            n = _infer_nvars(t, path)
            if n is not None:
                return n
    if kind == "product":
        for t in node.get("factors") or []:
            n = _infer_nvars(t, path)
            if n is not None:
                return n
    if kind == "scale" and isinstance(node.get("term"), dict):
        return _infer_nvars(node["term"], path)
    return None


@dataclass(frozen=True)
class ExpressionSpec:
    """Analytic test-function description with exact jet evaluation.

    ``expr`` is the validated kind-tree; ``k``/``l`` split the variables into
    the convex and concave blocks; ``flavor`` selects real coordinates
    (``nvars = k + l``) or complex ones (``nvars = 2(k + l)`` real
    coordinates).  ``time_drift`` adds a linear-in-time term ``drift * t``,
    the only explicit time dependence a spec can carry.
    """

    expr: dict
    k: int
    l: int
    flavor: str = "real"
    time_drift: float = 0.0
    domain_halfwidth: float = math.inf

    @property
    def nvars(self) -> int:
        return self.k + self.l if self.flavor == "real" else 2 * (self.k + self.l)

    def __post_init__(self):
        if self.flavor not in FLAVORS:
            raise ParseError(f"at flavor: expected one of {FLAVORS}, got {self.flavor!r}")
        if self.k < 0 or self.l < 0 or self.k + self.l == 0:
            raise ParseError(f"at dims: need k >= 0, l >= 0, k + l >= 1; got ({self.k}, {self.l})")
        _validate_node(self.expr, self.nvars, "expr")

    # -- serialization ---------------------------------------------------

    @classmethod
    def from_dict(cls, obj) -> "ExpressionSpec":
        if not isinstance(obj, dict):
            raise ParseError(f"at top level: expected an object, got {type(obj).__name__}")
        meta_keys = ("dims", "flavor", "time_drift", "domain")
        expr = {k: v for k, v in obj.items() if k not in meta_keys}
        flavor = obj.get("flavor", "real")
        if flavor not in FLAVORS:
            raise ParseError(f"at flavor: expected one of {FLAVORS}, got {flavor!r}")
        n = _infer_nvars(expr)
        if n is None:
            raise ParseError("at expr: no quad/atom node fixes the dimension")
        dims = obj.get("dims")
        if dims is None:
            m = n if flavor == "real" else n // 2
            k, l = m, 0
        else:
            if (not isinstance(dims, list)) or len(dims) != 2 or not all(isinstance(d, int) for d in dims):
                raise ParseError("at dims: expected [k, l] with integer entries")
            k, l = dims
        drift = obj.get("time_drift", 0.0)
        drift = _check_number(drift, "time_drift")
        hw = math.inf
        dom = obj.get("domain")
        if dom is not None:
            if not isinstance(dom, dict) or "halfwidth" not in dom:
                raise ParseError("at domain: expected {\"halfwidth\": number}")
            hw = _check_number(dom["halfwidth"], "domain.halfwidth")
        spec = cls(expr=expr, k=k, l=l, flavor=flavor, time_drift=drift, domain_halfwidth=hw)
        if spec.nvars != n:
            raise ParseError(f"at dims: dims {dims} imply {spec.nvars} coordinates but the tree uses {n}")
        return spec

    def to_dict(self) -> dict:
        out = dict(self.expr)
        out["dims"] = [self.k, self.l]
        out["flavor"] = self.flavor
        out["time_drift"] = self.time_drift
        if math.isfinite(self.domain_halfwidth):
            out["domain"] = {"halfwidth": self.domain_halfwidth}
        return out

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), allow_nan=False)

    @classmethod
    def from_json(cls, text: str) -> "ExpressionSpec":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as e:
            raise ParseError(f"invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}") from e
        return cls.from_dict(obj)

    # -- evaluation --------------------------------------------------------

    def value(self, point, time: float = 0.0) -> float:
        return _eval_scalar(self.expr, tuple(point)) + self.time_drift * time

    def jet(self, point, time: float = 0.0, order: int = 4) -> "SpaceTimeJet":
        return evaluate_jet(self, point, time, order=order)

    def in_domain(self, point) -> bool:
        hw = self.domain_halfwidth
        return all(abs(c) <= hw for c in point)


def _eval_scalar(node: dict, point: Tuple[float, ...]) -> float:
    kind = node["kind"]
    if kind == "sum":
        return sum(_eval_scalar(t, point) for t in node["terms"])
    if kind == "product":
        out = 1.0
        for t in node["factors"]:
            out *= _eval_scalar(t, point)
        return out
    if kind == "scale":
        return node["coefficient"] * _eval_scalar(node["term"], point)
    if kind == "quad":
        m, lin, c = node["matrix"], node["linear"], node["constant"]
        q = 0.0
        for i, xi in enumerate(point):
            q += lin[i] * xi
            for j, xj in enumerate(point):
                q += 0.5 * m[i][j] * xi * xj
        return q + c
    # atom
    arg = node["const"] + sum(a * x for a, x in zip(node["affine"], point))
    derivs = atom_derivatives(node["fn"], arg, 0, node.get("exponent"))
    return derivs[0]


def _node_poly(node: dict, point: Tuple[float, ...], order: int) -> TaylorPoly:
    n = len(point)
    kind = node["kind"]
    if kind == "sum":
        acc = TaylorPoly(n, order, {})
        for t in node["terms"]:
            acc = acc + _node_poly(t, point, order)
        return acc
    if kind == "product":
        acc = None
        for t in node["factors"]:
            p = _node_poly(t, point, order)
            acc = p if acc is None else acc * p
        return acc
    if kind == "scale":
        return _node_poly(node["term"], point, order) * node["coefficient"]
    if kind == "quad":
        m, lin, c = node["matrix"], node["linear"], node["constant"]
        coeffs: Dict[MultiIndex, float] = {}
        const = c
        for i, xi in enumerate(point):
            const += lin[i] * xi
            for j, xj in enumerate(point):
                const += 0.5 * m[i][j] * xi * xj
        coeffs[(0,) * n] = const
        if order >= 1:
            for i in range(n):
                g = lin[i] + sum(m[i][j] * point[j] for j in range(n))
                if g != 0.0:
                    coeffs[unit_index(n, i)] = g
        if order >= 2:
            for i in range(n):
                for j in range(i, n):
                    v = 0.5 * m[i][j] if i == j else float(m[i][j])
                    if v != 0.0:
                        coeffs[unit_index(n, i, j)] = v
        return TaylorPoly(n, order, coeffs)
    # atom
    aff, c = node["affine"], node["const"]
    arg0 = c + sum(a * x for a, x in zip(aff, point))
    inner_coeffs: Dict[MultiIndex, float] = {(0,) * n: arg0}
    for i, a in enumerate(aff):
        if a != 0.0:
            inner_coeffs[unit_index(n, i)] = float(a)
    inner = TaylorPoly(n, order, inner_coeffs)
    derivs = atom_derivatives(node["fn"], arg0, order, node.get("exponent"))
    return inner.compose(derivs)


# ---------------------------------------------------------------------------
# SpaceTimeJet
# ---------------------------------------------------------------------------


@dataclass
class SpaceTimeJet:
    """Truncated derivative table of u at one space-time point.

    ``table`` holds spatial partials to total order <= ``order`` (default 4);
    ``dt1`` holds spatial partials of du/dt to order <= 2; ``dt2`` holds
    d^2u/dt^2 entries (populated at spatial order 0 — the depth the evolution
    checks need).  Entries absent from a dict are zero.
    """

    point: Tuple[float, ...]
    time: float
    nvars: int
    order: int
    k: int
    l: int
    flavor: str
    table: Dict[MultiIndex, float]
    dt1: Dict[MultiIndex, float] = field(default_factory=dict)
    dt2: Dict[MultiIndex, float] = field(default_factory=dict)

    def d(self, beta: MultiIndex) -> float:
        return self.table.get(tuple(beta), 0.0)

    def dt(self, beta: MultiIndex = ()) -> float:
        b = tuple(beta) if beta else (0,) * self.nvars
        return self.dt1.get(b, 0.0)

    def dtt(self, beta: MultiIndex = ()) -> float:
        b = tuple(beta) if beta else (0,) * self.nvars
        return self.dt2.get(b, 0.0)

    def gradient(self):
        return np.array([self.d(unit_index(self.nvars, i)) for i in range(self.nvars)])

    def hessian(self):
        n = self.nvars
        h = np.empty((n, n))
        for i in range(n):
            for j in range(i, n):
                h[i, j] = h[j, i] = self.d(unit_index(n, i, j))
        return h

    def hessian_blocks(self):
        """Convex/mixed/concave Hessian blocks (A, B, C) of a real-flavored jet.

        A is k x k, B is k x l, C is l x l; the class conditions are
        ``lam <= A <= Lam`` and ``lam <= -C <= Lam``.
        """
        if self.flavor != "real":
            raise DimensionMismatch("hessian_blocks applies to real-flavored jets")
        h = self.hessian()
        k = self.k
        return h[:k, :k], h[:k, k:], h[k:, k:]


def evaluate_jet(spec: ExpressionSpec, point, time: float = 0.0, order: int = 4) -> SpaceTimeJet:
    """Exact spatial derivative table of ``spec`` at ``point``, plus its time drift.

    Raises
    ------
    DomainViolation
        when an atom is evaluated outside its domain or the point leaves the
        declared box.
    """
    point = tuple(float(c) for c in point)
    if len(point) != spec.nvars:
        raise DimensionMismatch(f"point has {len(point)} coordinates, spec has {spec.nvars}")
    if not spec.in_domain(point):
        raise DomainViolation(f"point {point} outside declared box of halfwidth {spec.domain_halfwidth}")
    poly = _node_poly(spec.expr, point, order)
    table = poly.table()
    zero = (0,) * spec.nvars
    dt1: Dict[MultiIndex, float] = {}
    if spec.time_drift != 0.0:
        table[zero] = table.get(zero, 0.0) + spec.time_drift * time
        dt1[zero] = spec.time_drift
    return SpaceTimeJet(
        point=point,
        time=time,
        nvars=spec.nvars,
        order=order,
        k=spec.k,
        l=spec.l,
        flavor=spec.flavor,
        table=table,
        dt1=dt1,
    )


# ---------------------------------------------------------------------------
# Wirtinger conversion
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def _wirtinger_expansion(m: int, hol: MultiIndex, anti: MultiIndex):
    """Expansion of prod d/dz^hol d/dzbar^anti into real partials over 2m coords.

    Returns a tuple of (real multi-index, complex coefficient) sorted by the
    multi-index.  For conjugate key pairs the expansions are exact
    coefficient-wise conjugates by construction, which makes the conjugation
    symmetry of converted tables bit-exact.
    """
    if hol < anti:  # canonical half; the other is the exact conjugate
        base = _wirtinger_expansion(m, anti, hol)
        return tuple((beta, coeff.conjugate()) for beta, coeff in base)
    terms: Dict[MultiIndex, complex] = {(0,) * (2 * m): 1.0 + 0.0j}
    for a in range(m):
        for sign, count in ((-0.5j, hol[a]), (0.5j, anti[a])):
            for _ in range(count):
                new: Dict[MultiIndex, complex] = {}
                for beta, c in terms.items():
                    bx = list(beta)
                    bx[a] += 1
                    kx = tuple(bx)
                    new[kx] = new.get(kx, 0.0j) + 0.5 * c
                    by = list(beta)
                    by[m + a] += 1
                    ky = tuple(by)
                    new[ky] = new.get(ky, 0.0j) + sign * c
                terms = new
    return tuple(sorted((beta, c) for beta, c in terms.items() if c != 0.0))


@lru_cache(maxsize=None)
def _real_expansion(m: int, beta: MultiIndex):
    """Expansion of prod d/dX^p d/dY^q into Wirtinger operators; inverse of the above."""
    terms: Dict[WirtKey, complex] = {((0,) * m, (0,) * m): 1.0 + 0.0j}
    for a in range(m):  # d/dX_a = d/dz_a + d/dzbar_a
        for _ in range(beta[a]):
            new: Dict[WirtKey, complex] = {}
            for (h, ab), c in terms.items():
                hh = list(h)
                hh[a] += 1
                key = (tuple(hh), ab)
                new[key] = new.get(key, 0.0j) + c
                aa = list(ab)
                aa[a] += 1
                key = (h, tuple(aa))
                new[key] = new.get(key, 0.0j) + c
            terms = new
    for a in range(m):  # d/dY_a = i (d/dz_a - d/dzbar_a)
        for _ in range(beta[m + a]):
            new = {}
            for (h, ab), c in terms.items():
                hh = list(h)
                hh[a] += 1
                key = (tuple(hh), ab)
                new[key] = new.get(key, 0.0j) + 1.0j * c
                aa = list(ab)
                aa[a] += 1
                key = (h, tuple(aa))
                new[key] = new.get(key, 0.0j) - 1.0j * c
            terms = new
    return tuple(sorted((key, c) for key, c in terms.items() if c != 0.0))


@dataclass
class WirtingerTable:
    """Mixed holomorphic/antiholomorphic partials at one point of C^k x C^l.

    Keys are pairs ``(hol, anti)`` of exponent tuples over the m = k + l
    complex variables (z-slots first, then w-slots); the entry is
    ``d^{hol}_z d^{anti}_zbar u``.  For real-valued u the table satisfies
    ``entry(anti, hol) == conj(entry(hol, anti))`` bit-exactly.
    """

    point: Tuple[float, ...]
    time: float
    k: int
    l: int
    order: int
    entries: Dict[WirtKey, complex]
    dt1: Dict[WirtKey, complex] = field(default_factory=dict)
    dt2: complex = 0.0

    @property
    def m(self) -> int:
        return self.k + self.l

    def d(self, hol: MultiIndex, anti: MultiIndex) -> complex:
        return self.entries.get((tuple(hol), tuple(anti)), 0.0)

    def dt(self, hol: MultiIndex, anti: MultiIndex) -> complex:
        return self.dt1.get((tuple(hol), tuple(anti)), 0.0)

    def zpoint(self) -> Tuple[complex, ...]:
        m = self.m
        return tuple(self.point[a] + 1.0j * self.point[m + a] for a in range(m))

    def second_blocks(self):
        """Wirtinger second-derivative blocks (Z, M, V).

        ``Z[a,b] = u_{z_a zbar_b}`` (k x k), ``M[a,c] = u_{z_a wbar_c}``
        (k x l), ``V[c,d] = u_{w_c wbar_d}`` (l x l); Z and V are Hermitian for
        real-valued u, and the class conditions are ``lam <= Z <= Lam`` and
        ``lam <= -V <= Lam``.
        """
        m, k, l = self.m, self.k, self.l
        z = np.empty((k, k), dtype=complex)
        for a in range(k):
            for b in range(k):
                z[a, b] = self.d(unit_index(m, a), unit_index(m, b))
        mm = np.empty((k, l), dtype=complex)
        for a in range(k):
            for c in range(l):
                mm[a, c] = self.d(unit_index(m, a), unit_index(m, k + c))
        v = np.empty((l, l), dtype=complex)
        for c in range(l):
            for d in range(l):
                v[c, d] = self.d(unit_index(m, k + c), unit_index(m, k + d))
        return z, mm, v


def _convert_real_table(table: Dict[MultiIndex, float], m: int, order: int) -> Dict[WirtKey, complex]:
    out: Dict[WirtKey, complex] = {}
    for hol in multi_indices(m, order):
        for anti in multi_indices(m, order - sum(hol)):
            acc = 0.0 + 0.0j
            for beta, coeff in _wirtinger_expansion(m, hol, anti):
                v = table.get(beta)
                if v is not None and v != 0.0:
                    acc += coeff * v
            out[(hol, anti)] = acc
    return out


def wirtinger_from_real(jet: SpaceTimeJet) -> WirtingerTable:
    """Convert a real-coordinate jet over R^{2m} into a Wirtinger table.

    The pairing is the fixed layout ``[Re z_1..Re z_m, Im z_1..Im z_m]``.

    Raises
    ------
    DimensionMismatch
        if the jet dimension is odd.
    """
    if jet.nvars % 2 != 0:
        raise DimensionMismatch(f"cannot pair {jet.nvars} real coordinates into complex ones")
    m = jet.nvars // 2
    if jet.k + jet.l == m:
        k, l = jet.k, jet.l
    else:
        k, l = m, 0
    entries = _convert_real_table(jet.table, m, jet.order)
    dt1 = _convert_real_table(jet.dt1, m, 2) if jet.dt1 else {}
    return WirtingerTable(
        point=jet.point,
        time=jet.time,
        k=k,
        l=l,
        order=jet.order,
        entries=entries,
        dt1=dt1,
        dt2=jet.dtt(),
    )


def real_from_wirtinger(wt: WirtingerTable) -> Dict[MultiIndex, float]:
    """Inverse change of basis: recover the real partial table from a Wirtinger table."""
    m = wt.m
    out: Dict[MultiIndex, float] = {}
    for beta in multi_indices(2 * m, wt.order):
        acc = 0.0 + 0.0j
        for key, coeff in _real_expansion(m, beta):
            acc += coeff * wt.entries.get(key, 0.0)
        out[beta] = acc.real
    return out
