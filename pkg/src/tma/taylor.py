"""Truncated multivariate Taylor-polynomial arithmetic.

This is the derivative engine: every exact jet in the package is produced by
pushing truncated Taylor polynomials through an expression tree.  A
:class:`TaylorPoly` stores the coefficients of a polynomial in ``nvars``
increment variables, truncated at total degree ``order``; the coefficient of
the monomial ``delta^beta`` is ``(d^beta f)(x0) / beta!``, so partial
derivatives are recovered exactly (up to floating-point rounding of the
closed-form recursions) by multiplying back the factorials.

Nested finite differences are deliberately not used anywhere: the downstream
sign checks need ~1e-10 accuracy on fourth derivatives, which FD noise would
swamp.
"""

from __future__ import annotations

import math
from typing import Dict, Tuple

from .errors import DomainViolation, UnknownAtom

MultiIndex = Tuple[int, ...]

ATOM_NAMES = ("sin", "cos", "exp", "log", "cosh", "sinh", "pow")


def multi_factorial(beta: MultiIndex) -> float:
    """Product of factorials of a multi-index."""
    out = 1
    for b in beta:
        out *= math.factorial(b)
    return float(out)


class TaylorPoly:
    """Polynomial in ``nvars`` increments, truncated at total degree ``order``.

    Parameters
    ----------
    nvars : int
        Number of increment variables.
    order : int
        Total-degree truncation order (inclusive).
    coeffs : dict, optional
        Mapping exponent-tuple -> coefficient.  Shared, not copied; callers
        must not mutate it afterwards.
    """

    __slots__ = ("nvars", "order", "coeffs")

    def __init__(self, nvars: int, order: int, coeffs: Dict[MultiIndex, complex] | None = None):
        self.nvars = nvars
        self.order = order
        self.coeffs = {} if coeffs is None else coeffs

    # -- constructors -----------------------------------------------------

    @classmethod
    def constant(cls, nvars: int, order: int, value) -> "TaylorPoly":
        if value == 0:
            return cls(nvars, order, {})
        return cls(nvars, order, {(0,) * nvars: value})

    @classmethod
    def variable(cls, nvars: int, order: int, index: int, base=0.0) -> "TaylorPoly":
        """The polynomial ``base + delta_index``."""
        e = [0] * nvars
        e[index] = 1
        coeffs = {tuple(e): 1.0}
        if base != 0:
            coeffs[(0,) * nvars] = base
        return cls(nvars, order, coeffs)

    # -- ring operations ---------------------------------------------------

    def __add__(self, other):
        if not isinstance(other, TaylorPoly):
            out = dict(self.coeffs)
            zero = (0,) * self.nvars
            out[zero] = out.get(zero, 0.0) + other
            return TaylorPoly(self.nvars, self.order, out)
        out = dict(self.coeffs)
        for e, c in other.coeffs.items():
            out[e] = out.get(e, 0.0) + c
        return TaylorPoly(self.nvars, self.order, out)

    __radd__ = __add__

    def __neg__(self):
        return TaylorPoly(self.nvars, self.order, {e: -c for e, c in self.coeffs.items()})

    def __sub__(self, other):
        if not isinstance(other, TaylorPoly):
            return self + (-other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, TaylorPoly):
            if other == 0:
                return TaylorPoly(self.nvars, self.order, {})
            return TaylorPoly(self.nvars, self.order, {e: c * other for e, c in self.coeffs.items()})
        order = self.order
        out: Dict[MultiIndex, complex] = {}
        for e1, c1 in self.coeffs.items():
            d1 = sum(e1)
            for e2, c2 in other.coeffs.items():
                if d1 + sum(e2) > order:
                    continue
                e = tuple(a + b for a, b in zip(e1, e2))
                out[e] = out.get(e, 0.0) + c1 * c2
        return TaylorPoly(self.nvars, order, out)

    __rmul__ = __mul__

    # -- composition with a univariate analytic atom -----------------------

    def compose(self, derivs) -> "TaylorPoly":
        """Compose ``f(self)`` where ``derivs[j] = f^(j)(c)`` at ``c = self.value()``.

        Horner evaluation of ``sum_j derivs[j]/j! * (self - c)^j`` truncated at
        ``self.order``; ``derivs`` must have length ``order + 1``.
        """
        zero = (0,) * self.nvars
        ghat_coeffs = {e: c for e, c in self.coeffs.items() if e != zero}
        ghat = TaylorPoly(self.nvars, self.order, ghat_coeffs)
        acc = TaylorPoly.constant(self.nvars, self.order, derivs[self.order] / math.factorial(self.order))
        for j in range(self.order - 1, -1, -1):
            acc = acc * ghat + derivs[j] / math.factorial(j)
        return acc

    # -- extraction ---------------------------------------------------------

    def value(self):
        return self.coeffs.get((0,) * self.nvars, 0.0)

    def deriv(self, beta: MultiIndex):
        """Exact partial derivative ``d^beta f (x0)`` = coefficient * beta!."""
        c = self.coeffs.get(tuple(beta), 0.0)
        return c * multi_factorial(beta) if c != 0 else 0.0 * c

    def table(self, max_order: int | None = None) -> Dict[MultiIndex, complex]:
        """All partial derivatives up to ``max_order`` (default: the truncation order)."""
        cap = self.order if max_order is None else max_order
        out: Dict[MultiIndex, complex] = {}
        for e, c in self.coeffs.items():
            if sum(e) <= cap:
                out[e] = c * multi_factorial(e)
        return out


def atom_derivatives(fn: str, c: float, order: int, exponent: float | None = None):
    """Closed-form derivative list ``[f(c), f'(c), ..., f^(order)(c)]`` of an atom.

    Raises
    ------
    DomainViolation
        log at c <= 0, or non-integer pow at c <= 0.
    UnknownAtom
        unrecognized ``fn``.
    """
    if fn == "sin":
        s, co = math.sin(c), math.cos(c)
        cycle = (s, co, -s, -co)
        return [cycle[j % 4] for j in range(order + 1)]
    if fn == "cos":
        s, co = math.sin(c), math.cos(c)
        cycle = (co, -s, -co, s)
        return [cycle[j % 4] for j in range(order + 1)]
    if fn == "exp":
        e = math.exp(c)
        return [e] * (order + 1)
    if fn == "log":
        if c <= 0:
            raise DomainViolation(f"log atom evaluated at non-positive argument {c}")
        out = [math.log(c)]
        for j in range(1, order + 1):
            # d^j log = (-1)^(j-1) (j-1)! c^-j
            out.append((-1.0) ** (j - 1) * math.factorial(j - 1) * c ** (-j))
        return out
    if fn == "cosh":
        ch, sh = math.cosh(c), math.sinh(c)
        return [ch if j % 2 == 0 else sh for j in range(order + 1)]
    if fn == "sinh":
        ch, sh = math.cosh(c), math.sinh(c)
        return [sh if j % 2 == 0 else ch for j in range(order + 1)]
    if fn == "pow":
        if exponent is None:
            raise UnknownAtom("pow atom requires an 'exponent' field")
        p = exponent
        is_nonneg_int = float(p).is_integer() and p >= 0
        if not is_nonneg_int and c <= 0:
            raise DomainViolation(f"pow atom with non-integer exponent {p} at non-positive base {c}")
        out = []
        fac = 1.0
        for j in range(order + 1):
            if j > 0:
                fac *= p - (j - 1)
            if fac == 0.0:
                out.append(0.0)
            else:
                out.append(fac * c ** (p - j))
        return out
    raise UnknownAtom(f"unknown atom function {fn!r}; supported: {', '.join(ATOM_NAMES)}")
