"""Reference-element bases built from dual functionals.

Every local space is described by a polynomial spanning set and a list of
linear functionals; the basis is the dual of the functionals, obtained from
one small Vandermonde solve per (family, order).

Reference triangle vertices are (0,0), (1,0), (0,1).  Local edge ``i`` runs
from vertex ``(i+1) % 3`` to ``(i+2) % 3`` and carries the scaled outward
normal ``rot(end - start)``, which the contravariant Piola map preserves, so
edge moments ``int_0^1 v . n_scaled q(s) ds`` are invariant under the map.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre

from .quadrature import UnsupportedDegreeError, edge_rule, triangle_rule

REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
_EDGE_START = REF_VERTICES[[1, 2, 0]]
_EDGE_END = REF_VERTICES[[2, 0, 1]]
REF_EDGE_TANGENTS = _EDGE_END - _EDGE_START
REF_EDGE_NORMALS = np.stack([REF_EDGE_TANGENTS[:, 1], -REF_EDGE_TANGENTS[:, 0]], axis=1)

FAMILIES = ("BDM", "RT", "P", "FacetTangential", "FacetScalar")


def ref_edge_points(edge: int, s) -> np.ndarray:
    """Reference coordinates of parameter values ``s`` on local edge ``edge``."""
    s = np.asarray(s, dtype=float)
    return _EDGE_START[edge] + s[:, None] * REF_EDGE_TANGENTS[edge]


def shifted_legendre(k_max: int, s) -> np.ndarray:
    """``L_k(2s - 1)`` for k = 0..k_max, shape ``(len(s), k_max + 1)``."""
    return legendre.legvander(2.0 * np.asarray(s, dtype=float) - 1.0, k_max)


class PolySpace:
    """P_degree in the product Legendre basis ``L_a(2x-1) L_b(2y-1)``, a + b <= degree.

    Monomial coefficients of dual bases grow like 1e6 at degree 4; this basis
    keeps them O(1e2) and the dual residual near machine precision.
    """

    def __init__(self, degree: int):
        self.degree = degree
        self.exps = [(a, d - a) for d in range(degree + 1) for a in range(d, -1, -1)]
        self.index = {e: i for i, e in enumerate(self.exps)}
        n = len(self.exps)
        self.dx = np.zeros((n, n))
        self.dy = np.zeros((n, n))
        for j, (a, b) in enumerate(self.exps):
            da = 2.0 * legendre.legder(np.eye(degree + 1)[a])
            db = 2.0 * legendre.legder(np.eye(degree + 1)[b])
            for c, v in enumerate(da):
                if v:
                    self.dx[self.index[(c, b)], j] = v
            for c, v in enumerate(db):
                if v:
                    self.dy[self.index[(a, c)], j] = v
        self._a = np.array([e[0] for e in self.exps])
        self._b = np.array([e[1] for e in self.exps])

    def __len__(self):
        return len(self.exps)

    def eval(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        lx = legendre.legvander(2.0 * pts[:, 0] - 1.0, self.degree)
        ly = legendre.legvander(2.0 * pts[:, 1] - 1.0, self.degree)
        return lx[:, self._a] * ly[:, self._b]

    def times_x(self, j):
        """Coefficients (in ``PolySpace(degree + 1)``) of x times basis function j."""
        a, b = self.exps[j]
        up = PolySpace(self.degree + 1)
        cx = 0.5 * (legendre.legmulx(np.eye(a + 1)[a]) + np.pad(np.eye(a + 1)[a], (0, 1)))
        out = np.zeros(len(up))
        for c, v in enumerate(cx):
            if v:
                out[up.index[(c, b)]] = v
        return out

    def times_y(self, j):
        a, b = self.exps[j]
        up = PolySpace(self.degree + 1)
        cy = 0.5 * (legendre.legmulx(np.eye(b + 1)[b]) + np.pad(np.eye(b + 1)[b], (0, 1)))
        out = np.zeros(len(up))
        for c, v in enumerate(cy):
            if v:
                out[up.index[(a, c)]] = v
        return out


@dataclass(frozen=True, eq=False)
class LocalBasis:
    """Dual basis on the reference triangle.

    ``coeffs`` has shape ``(ndof, ncomp, nmono)``; ``dof_classes`` lists
    ``("edge", edge, k)`` or ``("interior", j)`` per dof.
    """

    family: str
    order: int
    coeffs: np.ndarray
    mono: PolySpace
    dof_classes: tuple
    vandermonde_residual: float
    interior_tests: object = None     # pts -> (nint, npts, 2) test fields

    @property
    def ndof(self):
        return self.coeffs.shape[0]

    @property
    def ncomp(self):
        return self.coeffs.shape[1]

    def values(self, pts):
        """Shape ``(npts, ndof)`` for scalars, ``(npts, ndof, 2)`` for vectors."""
        out = np.einsum("qm,icm->qic", self.mono.eval(pts), self.coeffs, optimize=True)
        return out[:, :, 0] if self.ncomp == 1 else out

    def grads(self, pts):
        """Scalar: ``(npts, ndof, 2)``; vector: ``(npts, ndof, 2, 2)``, [..., comp, dir]."""
        m = self.mono.eval(pts)
        gx = np.einsum("qm,icm->qic", m, self.coeffs @ self.mono.dx.T, optimize=True)
        gy = np.einsum("qm,icm->qic", m, self.coeffs @ self.mono.dy.T, optimize=True)
        g = np.stack([gx, gy], axis=-1)
        return g[:, :, 0] if self.ncomp == 1 else g

    def hessians(self, pts):
        """Scalar: ``(npts, ndof, 2, 2)``; vector: ``(npts, ndof, 2, 2, 2)``."""
        m = self.mono.eval(pts)
        dx, dy = self.mono.dx.T, self.mono.dy.T
        c = self.coeffs
        hxx = np.einsum("qm,icm->qic", m, c @ dx @ dx, optimize=True)
        hxy = np.einsum("qm,icm->qic", m, c @ dx @ dy, optimize=True)
        hyy = np.einsum("qm,icm->qic", m, c @ dy @ dy, optimize=True)
        h = np.stack([np.stack([hxx, hxy], -1), np.stack([hxy, hyy], -1)], -2)
        return h[:, :, 0] if self.ncomp == 1 else h

    def divs(self, pts):
        g = self.grads(pts)
        if self.ncomp != 2:
            raise ValueError("divergence needs a vector basis")
        return g[..., 0, 0] + g[..., 1, 1]

    def apply_functionals(self, funcs: np.ndarray) -> np.ndarray:
        """Matrix ``[L_i(phi_j)]`` for functionals acting on flattened coefficients."""
        return funcs @ self.coeffs.reshape(self.ndof, -1).T


@dataclass(frozen=True, eq=False)
class FacetBasis:
    """Scaled Legendre polynomials ``L_k(2s - 1)`` on a facet, k = 0..order.

    The dual functionals are ``(2k + 1) int_0^1 q L_k ds``.  ``vector`` marks
    the tangential family, whose values multiply the facet tangent.
    """

    family: str
    order: int
    vector: bool

    @property
    def ndof(self):
        return self.order + 1

    def values(self, s):
        return shifted_legendre(self.order, s)

    def functionals(self, q_values, rule):
        """Apply the dual functionals to samples ``q_values`` at ``rule.points``."""
        leg = shifted_legendre(self.order, rule.points)
        scale = 2.0 * np.arange(self.ndof) + 1.0
        return scale * (rule.weights @ (np.asarray(q_values)[:, None] * leg))


def _edge_moment_functionals(mono, degree, ncomp=2):
    """Rows: int_0^1 v.n_scaled L_k(2s-1) ds on each edge, k=0..degree."""
    rule = edge_rule(2 * max(mono.degree, degree) + 2)
    rows, classes = [], []
    leg = shifted_legendre(degree, rule.points)
    for e in range(3):
        m = mono.eval(ref_edge_points(e, rule.points))          # (nq, nm)
        for k in range(degree + 1):
            wq = rule.weights * leg[:, k]
            r = np.concatenate([REF_EDGE_NORMALS[e, c] * (wq @ m) for c in range(ncomp)])
            rows.append(r)
            classes.append(("edge", e, k))
    return np.array(rows), classes


def _interior_moment_functionals(mono, test_fields):
    """Rows: int_T v . psi for vector test fields given as (n, 2, nm') coeffs."""
    rule = triangle_rule(2 * mono.degree + 2)
    m = mono.eval(rule.points)
    rows = []
    for psi_vals in test_fields(rule.points):               # (nq, 2)
        r = np.concatenate([(rule.weights * psi_vals[:, c]) @ m for c in range(2)])
        rows.append(r)
    return np.array(rows)


def _orthonormalize(mono, span):
    """L2(T)-orthonormal recombination of ``span``; keeps the Vandermonde well conditioned."""
    rule = triangle_rule(2 * mono.degree)
    vals = np.einsum("qm,icm->iqc", mono.eval(rule.points), span, optimize=True)
    gram = np.einsum("iqc,jqc,q->ij", vals, vals, rule.weights, optimize=True)
    w, v = np.linalg.eigh(gram)
    return np.einsum("ji,jcm->icm", v / np.sqrt(w), span, optimize=True)


def _dual_basis(family, order, mono, span, funcs, classes, tests=None):
    """Solve for coefficients of the basis dual to ``funcs`` inside ``span``."""
    span_flat = _orthonormalize(mono, span).reshape(span.shape[0], -1)
    vander = funcs @ span_flat.T
    if vander.shape[0] != vander.shape[1]:
        raise ValueError(f"{family}_{order}: {vander.shape[0]} functionals for "
                         f"{vander.shape[1]} spanning functions")
    cmat = np.linalg.solve(vander, np.eye(len(vander))).T
    coeffs = (cmat @ span_flat).reshape(span.shape)
    resid = float(np.abs(funcs @ coeffs.reshape(len(coeffs), -1).T - np.eye(len(coeffs))).max())
    return LocalBasis(family, order, coeffs, mono, tuple(classes), resid, tests)


def _vector_span(mono, degree):
    """(P_degree)^2 as coefficient arrays in ``mono`` (degree <= mono.degree)."""
    n = sum(1 for e in mono.exps if sum(e) <= degree)
    span = np.zeros((2 * n, 2, len(mono)))
    for c in range(2):
        for j in range(n):
            span[c * n + j, c, j] = 1.0
    return span


def _bdm_interior_tests(order):
    """``grad P_{order-1}`` (constants dropped) and ``curl(b_T P_{order-2})``.

    With these moments the interpolant commutes with the divergence:
    ``div(Pi u)`` is the L2 projection of ``div u`` onto ``P_{order-1}``.
    ``b_T = x y (1 - x - y)`` is the cubic bubble.
    """
    grads = [(a, b) for a in range(order) for b in range(order - a) if a + b > 0]
    curls = [(a, b) for a in range(order - 1) for b in range(order - 1 - a)]
    # b_T x^a y^b as (coefficient, power of x, power of y) terms
    bubble = [(1.0, 1, 1), (-1.0, 2, 1), (-1.0, 1, 2)]

    def mono_grad(c, a, b, x, y):
        gx = c * a * x ** max(a - 1, 0) * y ** b if a else 0.0 * x
        gy = c * b * x ** a * y ** max(b - 1, 0) if b else 0.0 * y
        return gx, gy

    def tests(pts):
        x, y = pts[:, 0], pts[:, 1]
        out = []
        for a, b in grads:
            gx, gy = mono_grad(1.0, a, b, x, y)
            out.append(np.column_stack([gx, gy]))
        for a, b in curls:
            gx = gy = 0.0 * x
            for c, i, j in bubble:
                tx, ty = mono_grad(c, a + i, b + j, x, y)
                gx, gy = gx + tx, gy + ty
            out.append(np.column_stack([gy, -gx]))
        return out

    return tests


def _bdm(order):
    mono = PolySpace(order)
    span = _vector_span(mono, order)
    edge_funcs, classes = _edge_moment_functionals(mono, order)
    nint = (order + 1) * (order - 1)
    if nint:
        tests = _bdm_interior_tests(order)
        funcs = np.vstack([edge_funcs, _interior_moment_functionals(mono, tests)])
        classes = classes + [("interior", j) for j in range(nint)]
    else:
        funcs, tests = edge_funcs, None
    return _dual_basis("BDM", order, mono, span, funcs, classes, tests)


def _rt(order):
    """RT_order = (P_order)^2 + x * (top-degree part of P_order)."""
    mono = PolySpace(order + 1)
    base = _vector_span(mono, order)
    low = PolySpace(order)
    extra = [np.stack([low.times_x(j), low.times_y(j)])
             for j, e in enumerate(low.exps) if sum(e) == order]
    span = np.concatenate([base, np.array(extra)])
    edge_funcs, classes = _edge_moment_functionals(mono, order)
    if order >= 1:
        inner = PolySpace(order - 1)
        fields = _orthonormalize(inner, _vector_span(inner, order - 1))

        def tests(pts):
            return list(np.einsum("qm,jcm->jqc", inner.eval(pts), fields, optimize=True))

        int_funcs = _interior_moment_functionals(mono, tests)
        funcs = np.vstack([edge_funcs, int_funcs])
        classes = classes + [("interior", j) for j in range(len(int_funcs))]
    else:
        funcs, tests = edge_funcs, None
    return _dual_basis("RT", order, mono, span, funcs, classes, tests)


def lattice_points(order):
    if order == 0:
        return np.array([[1.0 / 3.0, 1.0 / 3.0]])
    pts = [(i / order, j / order) for j in range(order + 1) for i in range(order + 1 - j)]
    return np.array(pts)


def _p_scalar(order):
    """Nodal Lagrange basis of P_order at the equispaced lattice."""
    mono = PolySpace(order)
    span = np.eye(len(mono))[:, None, :]
    funcs = mono.eval(lattice_points(order))
    classes = [("interior", j) for j in range(len(funcs))]
    return _dual_basis("P", order, mono, span, funcs, classes)


_MAX_ORDER = {"BDM": 4, "RT": 3, "P": 4, "FacetTangential": 4, "FacetScalar": 3}
_MIN_ORDER = {"BDM": 1, "RT": 0, "P": 0, "FacetTangential": 0, "FacetScalar": 0}


@lru_cache(maxsize=None)
def build_local_basis(family: str, order: int):
    """Cached reference basis for ``family`` of polynomial ``order``.

    ``order`` is the family's own index: BDM_l, RT_k, P_k, facet P_k.
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    if not _MIN_ORDER[family] <= order <= _MAX_ORDER[family]:
        raise UnsupportedDegreeError(f"{family} order {order} not supported")
    if family == "BDM":
        return _bdm(order)
    if family == "RT":
        return _rt(order)
    if family == "P":
        return _p_scalar(order)
    return FacetBasis(family, order, vector=(family == "FacetTangential"))


def expected_ndof(family, order):
    if family == "BDM":
        return (order + 1) * (order + 2)
    if family == "RT":
        return (order + 1) * (order + 3)
    if family == "P":
        return (order + 1) * (order + 2) // 2
    return order + 1


# ---------------------------------------------------------------------------
# push-forwards for a single affine map (batched versions live in ``forms``)

def push_forward(basis: LocalBasis, amap, pts):
    """Physical values at reference points ``pts`` under ``amap``.

    Returns a dict with ``values`` and, where defined, ``div`` / ``grad``.
    H(div) families use the contravariant Piola map; scalars the plain
    affine pull-back.
    """
    det = amap.det
    if abs(det) < 1e-300:
        from .mesh import SingularGeometryError
        raise SingularGeometryError("singular affine map")
    jac = amap.jac
    jinv = amap.inv_t.T
    if basis.family in ("BDM", "RT"):
        v = basis.values(pts) @ jac.T / det
        g = np.einsum("ak,qikm,mb->qiab", jac, basis.grads(pts), jinv, optimize=True) / det
        return {"values": v, "grad": g, "div": basis.divs(pts) / det}
    if basis.family == "P":
        return {"values": basis.values(pts),
                "grad": basis.grads(pts) @ jinv}
    raise ValueError(f"push_forward not defined for {basis.family}")


def piola(basis: LocalBasis, pts, jac, det, jinv, derivs=1):
    """Contravariant Piola map of an H(div) basis over a stack of cells.

    Parameters
    ----------
    basis : LocalBasis
        BDM or RT reference basis.
    pts : (nq, 2) array
        Reference points.
    jac, det, jinv : arrays
        Stacked affine data, shapes ``(nc, 2, 2)``, ``(nc,)``, ``(nc, 2, 2)``.
    derivs : int
        0 for values and divergence only, 1 adds gradients, 2 adds Hessians.

    Returns
    -------
    dict
        ``values`` (nc, nq, nd, 2), ``div`` (nc, nq, nd) and, if requested,
        ``grad`` (nc, nq, nd, 2, 2) and ``hess`` (nc, nq, nd, 2, 2, 2);
        derivative axes are ordered [component, direction...].
    """
    scale = 1.0 / det
    out = {"values": np.einsum("cab,qib,c->cqia", jac, basis.values(pts), scale, optimize=True),
           "div": np.einsum("qi,c->cqi", basis.divs(pts), scale, optimize=True)}
    if derivs >= 1:
        out["grad"] = np.einsum("cab,qibd,cde,c->cqiae",
                                jac, basis.grads(pts), jinv, scale, optimize=True)
    if derivs >= 2:
        out["hess"] = np.einsum("cab,qibde,cdf,ceg,c->cqiafg",
                                jac, basis.hessians(pts), jinv, jinv, scale, optimize=True)
    return out


def affine_scalar(basis: LocalBasis, pts, jinv, derivs=1):
    """Scalar basis on a stack of cells; values are shared, derivatives are not."""
    out = {"values": basis.values(pts)}
    if derivs >= 1:
        out["grad"] = np.einsum("qid,cde->cqie", basis.grads(pts), jinv, optimize=True)
    if derivs >= 2:
        out["hess"] = np.einsum("qide,cdf,ceg->cqifg", basis.hessians(pts), jinv, jinv,
                                optimize=True)
    return out
