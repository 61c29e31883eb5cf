"""Global dof numbering for the five discrete spaces of the hybridized scheme.

=========  ===================================  ==============================
space      local element                        global coupling
=========  ===================================  ==============================
``U``      BDM_l, contravariant Piola           normal moments shared across
                                                interior facets, zero on the
                                                boundary
``Uhat``   tangential P_l on each facet         interior facets only
``W``      RT_{l-1}, broken                     none (cell local)
``P``      P_{l-1}, broken                      none (cell local)
``Phat``   P_{l-1} on each facet                all facets, boundary included
=========  ===================================  ==============================

Cell-to-global tables use ``-1`` for constrained dofs.  BDM/RT edge dofs
carry a sign: the local moment uses the outward normal and local edge
parameter, the global one the facet normal and facet parameter, so the
sign is ``(facet-normal sign) * (-1)**(k * reversed)``.  Facet-space
bases are defined directly in the facet parameter and need no sign.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .elements import (UnsupportedDegreeError, affine_scalar, build_local_basis,
                       piola, ref_edge_points, shifted_legendre)
from .mesh import Mesh
from .quadrature import edge_rule, triangle_rule

MIN_ORDER, MAX_ORDER = 1, 4


@dataclass(frozen=True, eq=False)
class DofMap:
    """Cell-to-global dof table of one space.

    Attributes
    ----------
    name : str
    ndof : int
        Number of free global dofs.
    cell_dofs : (nc, nloc) int array
        Global index per local dof, ``-1`` where constrained.
    cell_signs : (nc, nloc) float array
        Orientation sign folded into the local basis.
    condensable : bool
        Whether the dofs are eliminated element by element.
    """

    name: str
    ndof: int
    cell_dofs: np.ndarray
    cell_signs: np.ndarray
    condensable: bool = False

    @property
    def nloc(self):
        return self.cell_dofs.shape[1]

    @property
    def coupling_ndof(self):
        return 0 if self.condensable else self.ndof

    def gather(self, x, cells=slice(None)):
        """Signed local coefficients ``(nc, nloc)``; constrained dofs read as 0."""
        x = np.asarray(x)
        idx = self.cell_dofs[cells]
        vals = np.where(idx >= 0, x[np.maximum(idx, 0)], 0.0)
        return vals * self.cell_signs[cells]

    def constrained_count(self):
        return int(np.count_nonzero(self.cell_dofs < 0))


@dataclass(frozen=True, eq=False)
class SpaceSet:
    mesh: Mesh
    order: int
    U: DofMap
    Uhat: DofMap
    W: DofMap
    P: DofMap
    Phat: DofMap

    @property
    def bases(self):
        l = self.order
        return {"U": build_local_basis("BDM", l), "W": build_local_basis("RT", l - 1),
                "P": build_local_basis("P", l - 1),
                "Uhat": build_local_basis("FacetTangential", l),
                "Phat": build_local_basis("FacetScalar", l - 1)}

    def dofmap(self, name):
        return getattr(self, name)

    def dof_report(self):
        """``{space: (dof, coupling dof)}`` for the cost accounting."""
        return {n: (self.dofmap(n).ndof, self.dofmap(n).coupling_ndof)
                for n in ("U", "Uhat", "W", "P", "Phat")}


def _check_order(l):
    if int(l) != l or not MIN_ORDER <= l <= MAX_ORDER:
        raise UnsupportedDegreeError(f"order l={l} outside {MIN_ORDER}..{MAX_ORDER}")
    return int(l)


def _interior_facet_index(mesh):
    idx = -np.ones(mesh.num_facets, dtype=np.int64)
    interior = ~mesh.boundary_flags
    idx[interior] = np.arange(np.count_nonzero(interior))
    return idx


def _hdiv_map(mesh, basis, name, essential, condensable=False):
    """Shared-normal-moment numbering for an H(div) element."""
    nc = mesh.num_cells
    nk = sum(1 for c in basis.dof_classes if c[0] == "edge" and c[1] == 0)
    nint = basis.ndof - 3 * nk
    if essential:
        fidx = _interior_facet_index(mesh)
        nfacet_dofs = mesh.num_interior_facets * nk
    else:
        fidx = np.arange(mesh.num_facets)
        nfacet_dofs = mesh.num_facets * nk
    rev = mesh.edge_reversed()
    dofs = np.empty((nc, basis.ndof), dtype=np.int64)
    signs = np.empty((nc, basis.ndof))
    for i, cls in enumerate(basis.dof_classes):
        if cls[0] == "edge":
            _, e, k = cls
            f = fidx[mesh.cell_facets[:, e]]
            dofs[:, i] = np.where(f >= 0, f * nk + k, -1)
            flip = np.where(rev[:, e] & (k % 2 == 1), -1.0, 1.0)
            signs[:, i] = mesh.cell_facet_signs[:, e] * flip
        else:
            j = cls[1]
            dofs[:, i] = nfacet_dofs + np.arange(nc) * nint + j
            signs[:, i] = 1.0
    return DofMap(name, nfacet_dofs + nc * nint, dofs, signs, condensable)


def _broken_map(mesh, nloc, name):
    nc = mesh.num_cells
    dofs = np.arange(nc * nloc, dtype=np.int64).reshape(nc, nloc)
    return DofMap(name, nc * nloc, dofs, np.ones((nc, nloc)), condensable=True)


def _facet_map(mesh, nk, name, interior_only):
    fidx = _interior_facet_index(mesh) if interior_only else np.arange(mesh.num_facets)
    f = fidx[mesh.cell_facets]                                   # (nc, 3)
    k = np.arange(nk)
    dofs = np.where(f[:, :, None] >= 0, f[:, :, None] * nk + k, -1).reshape(len(f), -1)
    nfac = mesh.num_interior_facets if interior_only else mesh.num_facets
    return DofMap(name, nfac * nk, dofs, np.ones(dofs.shape))


def build_spaces(mesh: Mesh, l: int) -> SpaceSet:
    """Dof maps for ``U_h x Uhat_h x W_h^- x P_h x Phat_h`` of order ``l``."""
    l = _check_order(l)
    U = _hdiv_map(mesh, build_local_basis("BDM", l), "U", essential=True)
    Uhat = _facet_map(mesh, l + 1, "Uhat", interior_only=True)
    W = _broken_map(mesh, build_local_basis("RT", l - 1).ndof, "W")
    P = _broken_map(mesh, build_local_basis("P", l - 1).ndof, "P")
    Phat = _facet_map(mesh, l, "Phat", interior_only=False)
    return SpaceSet(mesh, l, U, Uhat, W, P, Phat)


def conforming_rt_map(mesh: Mesh, l: int) -> DofMap:
    """Globally normal-continuous RT_{l-1} numbering (all facets, boundary kept).

    Used by the non-hybridized mixed Darcy discretization; boundary facet
    dofs are listed first within each facet block like interior ones and
    can be identified through :func:`boundary_facet_dofs`.
    """
    l = _check_order(l)
    return _hdiv_map(mesh, build_local_basis("RT", l - 1), "W_conforming", essential=False)


def boundary_facet_dofs(mesh: Mesh, nk: int) -> np.ndarray:
    """Global dof indices of a per-facet numbering (``f * nk + k``) on boundary facets."""
    bf = np.flatnonzero(mesh.boundary_flags)
    return (bf[:, None] * nk + np.arange(nk)).ravel()


# ---------------------------------------------------------------------------
# interpolation

def _edge_samples(mesh, func, e, rule):
    """Physical points on local edge ``e`` of every cell and ``func`` there."""
    v = mesh.vertices[mesh.cells]
    ref = ref_edge_points(e, rule.points)
    jac = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], 2)
    x = v[:, 0, None, :] + np.einsum("cab,qb->cqa", jac, ref)
    vals = np.asarray(func(x.reshape(-1, 2)))
    return x, vals.reshape(x.shape[:2] + vals.shape[1:])


def _cell_samples(mesh, func, rule):
    v = mesh.vertices[mesh.cells]
    jac = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]], axis=2)
    x = v[:, 0, None, :] + np.einsum("cab,qb->cqa", jac, rule.points, optimize=True)
    vals = np.asarray(func(x.reshape(-1, 2)))
    return x, vals.reshape(x.shape[:2] + vals.shape[1:])


def _hdiv_local_dofs(mesh, basis, func, qdeg):
    """Reference dof functionals applied to the Piola pull-back of ``func``."""
    nc = mesh.num_cells
    jac, det, jinv = mesh.jacobians()
    out = np.zeros((nc, basis.ndof))
    rule = edge_rule(qdeg)
    nk = sum(1 for c in basis.dof_classes if c[0] == "edge" and c[1] == 0)
    leg = shifted_legendre(nk - 1, rule.points)
    n_glob, _ = mesh.facet_normals()
    col = {c: i for i, c in enumerate(basis.dof_classes)}
    for e in range(3):
        _, vals = _edge_samples(mesh, func, e, rule)              # (nc, nq, 2)
        f = mesh.cell_facets[:, e]
        n_out = n_glob[f] * mesh.cell_facet_signs[:, e, None]
        flux = np.einsum("cqa,ca->cq", vals, n_out, optimize=True) * mesh.h_per_facet[f, None]
        mom = (flux * rule.weights) @ leg                          # (nc, nk)
        for k in range(nk):
            out[:, col[("edge", e, k)]] = mom[:, k]
    if basis.interior_tests is not None:
        trule = triangle_rule(qdeg)
        _, vals = _cell_samples(mesh, func, trule)                  # (nc, nq, 2)
        vhat = np.einsum("c,cab,cqb->cqa", det, jinv, vals, optimize=True)
        tests = np.asarray(basis.interior_tests(trule.points))     # (nint, nq, 2)
        mom = np.einsum("cqa,jqa,q->cj", vhat, tests, trule.weights, optimize=True)
        for j in range(tests.shape[0]):
            out[:, col[("interior", j)]] = mom[:, j]
    return out


def _scatter_local(dm, local):
    """Global vector from signed local values (shared dofs are overwritten)."""
    x = np.zeros(dm.ndof)
    mask = dm.cell_dofs >= 0
    x[dm.cell_dofs[mask]] = (local * dm.cell_signs)[mask]
    return x


def interpolate(spaces: SpaceSet, name: str, func, qdeg=None) -> np.ndarray:
    """Coefficient vector of the canonical interpolant of ``func`` in space ``name``.

    ``U`` and ``W`` use the H(div) dof functionals (normal-trace and interior
    moments); ``P`` the cell-wise L2 projection; ``Uhat`` the facet L2
    projection of the tangential trace; ``Phat`` the facet L2 projection.
    ``func`` maps an ``(N, 2)`` array of points to ``(N, 2)`` or ``(N,)``.
    """
    mesh, l = spaces.mesh, spaces.order
    qdeg = qdeg if qdeg is not None else 2 * l + 6
    dm = spaces.dofmap(name)
    if name == "U":
        return _scatter_local(dm, _hdiv_local_dofs(mesh, spaces.bases["U"], func, qdeg))
    if name == "W":
        return _scatter_local(dm, _hdiv_local_dofs(mesh, spaces.bases["W"], func, qdeg))
    if name == "P":
        return project_cells(mesh, spaces.bases["P"], func, qdeg).ravel()
    if name in ("Uhat", "Phat"):
        tangential = name == "Uhat"
        nk = l + 1 if tangential else l
        coef = project_facets(mesh, func, nk - 1, qdeg, tangential)
        fidx = (_interior_facet_index(mesh) if tangential
                else np.arange(mesh.num_facets))
        keep = fidx >= 0
        x = np.zeros(dm.ndof)
        x[(fidx[keep, None] * nk + np.arange(nk)).ravel()] = coef[keep].ravel()
        return x
    raise ValueError(f"unknown space {name!r}")


def interpolate_conforming_rt(mesh: Mesh, l: int, func, qdeg=None) -> np.ndarray:
    dm = conforming_rt_map(mesh, l)
    basis = build_local_basis("RT", l - 1)
    return _scatter_local(dm, _hdiv_local_dofs(mesh, basis, func, qdeg or 2 * l + 6))


def project_cells(mesh, basis, func, qdeg):
    """Cell-wise L2 projection onto a scalar local basis, shape ``(nc, nd)``."""
    rule = triangle_rule(qdeg)
    _, vals = _cell_samples(mesh, func, rule)
    phi = basis.values(rule.points)                                 # (nq, nd)
    mass = np.einsum("qi,qj,q->ij", phi, phi, rule.weights, optimize=True)         # reference mass
    rhs = np.einsum("cq,qi,q->ci", vals, phi, rule.weights, optimize=True)
    return np.linalg.solve(mass, rhs.T).T


def project_facets(mesh, func, degree, qdeg, tangential=False):
    """Facet L2 projection onto ``L_k(2s - 1)``, k <= degree, shape ``(nf, degree+1)``.

    With ``tangential`` the projected quantity is ``func . t_F``.
    """
    rule = edge_rule(qdeg)
    a = mesh.vertices[mesh.facets[:, 0]]
    b = mesh.vertices[mesh.facets[:, 1]]
    x = a[:, None, :] + rule.points[None, :, None] * (b - a)[:, None, :]
    vals = np.asarray(func(x.reshape(-1, 2)))
    vals = vals.reshape(x.shape[:2] + vals.shape[1:])
    if tangential:
        _, t = mesh.facet_normals()
        vals = np.einsum("fqa,fa->fq", vals, t, optimize=True)
    leg = shifted_legendre(degree, rule.points)
    return (2.0 * np.arange(degree + 1) + 1.0) * ((vals * rule.weights) @ leg)


# ---------------------------------------------------------------------------
# evaluation of discrete fields

def evaluate_field(spaces: SpaceSet, name: str, x, pts, derivs=0):
    """Physical values of a discrete field at reference points ``pts`` of every cell.

    Returns a dict with ``values`` and, for ``derivs >= 1``, ``grad``
    (and ``div`` for vector fields), each with leading axes ``(nc, nq)``.
    """
    mesh = spaces.mesh
    dm = spaces.dofmap(name)
    basis = spaces.bases[name]
    coef = dm.gather(x)
    jac, det, jinv = mesh.jacobians()
    if name in ("U", "W"):
        ev = piola(basis, pts, jac, det, jinv, derivs=max(derivs, 0))
        out = {"values": np.einsum("cqia,ci->cqa", ev["values"], coef, optimize=True),
               "div": np.einsum("cqi,ci->cq", ev["div"], coef, optimize=True)}
        if derivs >= 1:
            out["grad"] = np.einsum("cqiab,ci->cqab", ev["grad"], coef, optimize=True)
        return out
    if name == "P":
        ev = affine_scalar(basis, pts, jinv, derivs=derivs)
        out = {"values": coef @ ev["values"].T}
        if derivs >= 1:
            out["grad"] = np.einsum("cqia,ci->cqa", ev["grad"], coef, optimize=True)
        return out
    raise ValueError(f"cell evaluation not defined for {name!r}")
