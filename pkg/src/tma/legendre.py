"""Partial Legendre transform in the concave directions.

For a function u(x, y) convex in the first block of variables and concave in
the second, the transform trades the concave slots for their dual slopes
z = du/dy and produces

    w(x, z) = u(x, y(x, z)) - <y(x, z), z>,

which is convex in (x, z) jointly.  Note the sign convention: w is u *minus*
the pairing, so the gradient of w is (u_x, -y) — this differs by an overall
sign from the textbook full Legendre transform and is chosen so that the
transformed Hessian W below is positive semidefinite.

Everything after the gradient inversion is assembled from the jet of u at the
source point (x, y): the Jacobian T of the coordinate change, the transformed
Hessian

    W = [[u_xx - u_xy u_yy^{-1} u_yx,  u_xy u_yy^{-1}],
         [u_yy^{-1} u_yx,              -u_yy^{-1}   ]],

and the block-diagonal operator diag(u_xx^{-1}, -u_yy^{-1}) obtained by
conjugating W^{-1} with T.  Differentiating w numerically would compound the
inversion error for no benefit, so we never do that.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainExceeded, NoConvergence
from .jets import ExpressionSpec, SpaceTimeJet, evaluate_jet
from .linalg import inverse_and_logdet

_GRAD_TOL = 1e-12
_MAX_NEWTON = 100
_MAX_HALVINGS = 50

__all__ = [
    "PartialLegendreResult",
    "invert_partial_gradient",
    "partial_legendre",
    "det_transform_residual",
    "real_W",
    "transformed_operator_L",
]


@dataclass
class PartialLegendreResult:
    """Transform data at a single dual point (x, z).

    Attributes
    ----------
    w : float
        Transformed value ``u(x, y) - <y, z>``.
    y : ndarray
        Recovered concave-slot coordinates solving ``du/dy(x, y) = z``.
    T : ndarray
        Jacobian of the coordinate change ``(x, y) -> (x, z)``: lower block
        triangular with identity upper-left block and ``u_yy^{-1}`` in the
        lower-right block.
    W : ndarray
        Transformed Hessian, symmetric positive semidefinite, assembled from
        the jet of u at the source point (x, y).
    newton_iters : int
        Newton steps used by the gradient inversion.
    """

    w: float
    y: np.ndarray
    T: np.ndarray
    W: np.ndarray
    newton_iters: int


def _require_transformable(spec: ExpressionSpec) -> None:
    if spec.flavor != "real":
        raise ValueError("the partial Legendre transform is defined for real-flavor functions only")
    if spec.l == 0:
        raise ValueError("no concave directions to transform (l = 0)")


def _gradient_residual(spec: ExpressionSpec, x, y, z):
    point = np.concatenate([x, y])
    if not spec.in_domain(point):
        raise DomainExceeded(
            "iterate left the declared domain; the target slope is not "
            "attained by du/dy on the box"
        )
    jet = evaluate_jet(spec, point, order=2)
    g = jet.gradient()[spec.k :] - z
    return jet, g, float(np.max(np.abs(g)))


def _invert(spec: ExpressionSpec, x, z, y0):
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    y = np.zeros(spec.l) if y0 is None else np.array(y0, dtype=float)
    tol = _GRAD_TOL * (1.0 + float(np.max(np.abs(z))))
    jet, g, res = _gradient_residual(spec, x, y, z)
    for iters in range(_MAX_NEWTON + 1):
        if res <= tol:
            return y, iters, jet
        if iters == _MAX_NEWTON:
            break
        _, _, c_yy = jet.hessian_blocks()
        step = np.linalg.solve(c_yy, -g)
        scale = 1.0
        for _ in range(_MAX_HALVINGS):
            trial = y + scale * step
            tjet, tg, tres = _gradient_residual(spec, x, trial, z)
            if tres < res:
                y, jet, g, res = trial, tjet, tg, tres
                break
            scale *= 0.5
        else:
            raise NoConvergence("step damping failed to reduce the gradient residual")
    raise NoConvergence(f"gradient inversion did not converge in {_MAX_NEWTON} Newton steps")


def invert_partial_gradient(spec: ExpressionSpec, x, z, y0=None):
    """Solve ``du/dy(x, y) = z`` for y by damped Newton iteration.

    The concavity of u in y makes the residual norm decrease along the Newton
    direction, so plain step halving suffices as a globalizer.  Converges to
    ``max|du/dy - z| <= 1e-12 * (1 + max|z|)``.

    Raises
    ------
    NoConvergence
        After 100 Newton steps, or if damping stalls.
    DomainExceeded
        A Newton trial point left the declared box — the signal that z is not
        in the image of du/dy over the domain.
    """
    _require_transformable(spec)
    y, _, _ = _invert(spec, x, z, y0)
    return y


def _assemble_from_jet(jet: SpaceTimeJet):
    """Blocks (A, C), transformed Hessian W and Jacobian T at the jet's point."""
    a, b, c = jet.hessian_blocks()
    neg_cinv, _ = inverse_and_logdet(-c)
    cinv = -neg_cinv
    k, l = a.shape[0], c.shape[0]
    b_cinv = b @ cinv
    w = np.block([[a - b_cinv @ b.T, b_cinv], [b_cinv.T, neg_cinv]])
    w = 0.5 * (w + w.T)
    t = np.block([[np.eye(k), np.zeros((k, l))], [-cinv @ b.T, cinv]])
    return a, c, w, t


def real_W(spec: ExpressionSpec, point, time: float = 0.0) -> np.ndarray:
    """Transformed Hessian W of a real-flavored description at a source point.

    The symmetric block matrix with the concave slot inverted:
    ``[[A - B C^{-1} B^t, B C^{-1}], [C^{-1} B^t, -C^{-1}]]`` where A, B, C
    are the Hessian blocks of u.  For class members W is positive
    semidefinite and ``det W = det A / det(-C)``.
    """
    _require_transformable(spec)
    jet = evaluate_jet(spec, np.asarray(point, dtype=float), time, order=2)
    _, _, w, _ = _assemble_from_jet(jet)
    return w


def partial_legendre(spec: ExpressionSpec, x, z) -> PartialLegendreResult:
    """Transform u at the dual point (x, z).

    Inverts the concave-slot gradient to find the source point (x, y), then
    assembles every output from the exact jet of u there.
    """
    _require_transformable(spec)
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    y, iters, jet = _invert(spec, x, z, None)
    w_value = jet.d((0,) * spec.nvars) - float(y @ z)
    _, _, w, t = _assemble_from_jet(jet)
    return PartialLegendreResult(w=w_value, y=y, T=t, W=w, newton_iters=iters)


def det_transform_residual(spec: ExpressionSpec, point) -> float:
    """``|det W - det u_xx / det(-u_yy)|`` at a source point.

    Exactly zero in exact arithmetic for every u; the returned number is pure
    floating-point noise and should sit comfortably below 1e-10 for
    well-conditioned Hessian blocks.
    """
    _require_transformable(spec)
    jet = evaluate_jet(spec, np.asarray(point, dtype=float), order=2)
    a, c, w, _ = _assemble_from_jet(jet)
    lhs = float(np.linalg.det(w))
    rhs = float(np.linalg.det(a)) / float(np.linalg.det(-c))
    return abs(lhs - rhs)


def transformed_operator_L(spec: ExpressionSpec, point, *, long_form: bool = False):
    """Second-order coefficient matrix ``diag(u_xx^{-1}, -u_yy^{-1})``.

    With ``long_form=True`` the same matrix is assembled the expensive way,
    conjugating the inverse transformed Hessian by the coordinate Jacobian
    (``T W^{-1} T^t``); the two routes agree entry-wise to 1e-12 and the
    short form is preferred for conditioning.
    """
    _require_transformable(spec)
    jet = evaluate_jet(spec, np.asarray(point, dtype=float), order=2)
    a, c, w, t = _assemble_from_jet(jet)
    if long_form:
        w_inv, _ = inverse_and_logdet(w)
        out = t @ w_inv @ t.T
        return 0.5 * (out + out.T)
    a_inv, _ = inverse_and_logdet(a)
    neg_c_inv, _ = inverse_and_logdet(-c)
    k = a.shape[0]
    out = np.zeros((spec.nvars, spec.nvars))
    out[:k, :k] = a_inv
    out[k:, k:] = neg_c_inv
    return out
