"""Assembly of the bilinear and linear forms of the hybridized Biot scheme.

Sign conventions of the block system (unknowns ``ubar = (u, uhat)``,
``w``, ``p``, ``phat``)::

    [ A_ubar   0        B_u^T   0        ] [ubar]   [ f     ]
    [ 0        M_w      B_w^T   Bhat_w^T ] [w   ] = [ r_w   ]
    [ B_u      B_w     -M_p     0        ] [p   ]   [ g     ]
    [ 0        Bhat_w   0       0        ] [phat]   [ r_hat ]

with ``B_u ~ -(div u, q)``, ``B_w ~ -(div w, q)_T`` and
``Bhat_w ~ +<w . n, qhat>_{dT}``, so that rows two to four are the
hybrid-mixed Darcy equations with ``b((p, phat), z)`` entering as
``-(B_w^T p + Bhat_w^T phat)``.  ``r_hat`` carries prescribed boundary
fluxes ``<w . n, qhat>_F`` on boundary facets and is zero otherwise.

All cell matrices are computed in chunks with batched ``einsum`` and kept
per cell (the condensation works on them directly); global matrices are
merged in COO form in cell-major order, so assembly is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .elements import affine_scalar, piola, ref_edge_points, shifted_legendre
from .quadrature import edge_rule, triangle_rule
from .spaces import SpaceSet

CHUNK = 1024


@dataclass(frozen=True)
class ScaledParams:
    """Scaled model parameters and stabilization constants.

    ``gamma = S + 1 / max(1, lam)`` is derived on access.
    """

    lam: float = 1.0
    R: float = 1.0
    S: float = 1.0
    eta: float = 10.0
    eta_p: float = 10.0

    def __post_init__(self):
        if not self.R > 0:
            raise ValueError(f"R must be positive, got {self.R}")
        if self.S < 0 or self.lam < 0:
            raise ValueError("S and lam must be non-negative")
        if not (self.eta > 0 and self.eta_p > 0):
            raise ValueError("stabilization parameters must be positive")

    @property
    def lam0(self):
        return max(1.0, self.lam)

    @property
    def gamma(self):
        return self.S + 1.0 / self.lam0


# ---------------------------------------------------------------------------
# geometry helpers

def _chunks(n, size=CHUNK):
    for start in range(0, n, size):
        yield np.arange(start, min(n, start + size))


class _Frame:
    """Affine and facet data for a set of cells."""

    def __init__(self, mesh, cells, normals):
        jac, det, jinv = mesh.jacobians()
        self.cells = cells
        self.jac, self.det, self.jinv = jac[cells], det[cells], jinv[cells]
        self.h = mesh.h_per_cell[cells]
        self.facets = mesh.cell_facets[cells]
        n, t = normals
        sgn = mesh.cell_facet_signs[cells].astype(float)
        self.n_out = n[self.facets] * sgn[:, :, None]             # (nc, 3, 2)
        self.t = t[self.facets]                                    # global tangent
        self.length = mesh.h_per_facet[self.facets]                # (nc, 3)
        self.rev = mesh.edge_reversed()[cells]
        v0 = mesh.vertices[mesh.cells[cells, 0]]
        self.origin = v0

    def physical(self, ref_pts):
        return self.origin[:, None, :] + np.einsum("cab,qb->cqa", self.jac, ref_pts, optimize=True)

    def facet_param(self, e, s):
        """Facet parameter of local edge parameters ``s`` on local edge ``e``."""
        return np.where(self.rev[:, e, None], 1.0 - s[None, :], s[None, :])


def _u_eval(spaces, fr, pts, derivs):
    ev = piola(spaces.bases["U"], pts, fr.jac, fr.det, fr.jinv, derivs)
    sgn = spaces.U.cell_signs[fr.cells]
    out = {"values": ev["values"] * sgn[:, None, :, None],
           "div": ev["div"] * sgn[:, None, :]}
    if derivs >= 1:
        out["grad"] = ev["grad"] * sgn[:, None, :, None, None]
    if derivs >= 2:
        out["hess"] = ev["hess"] * sgn[:, None, :, None, None, None]
    return out


def _sym(g):
    return 0.5 * (g + np.swapaxes(g, -1, -2))


def _stack(parts):
    return np.concatenate(parts, axis=0)


# ---------------------------------------------------------------------------
# cell matrices

def _hdg_elasticity_cells(spaces, params, cells, fr, norm=False):
    """Cell matrices on the local ``(u, uhat)`` dofs.

    With ``norm=False`` the HDG elasticity form plus ``lam (div, div)``;
    with ``norm=True`` the matrix of the squared HDG norm (without ``lam``).
    """
    l = spaces.order
    nu = spaces.bases["U"].ndof
    nk = l + 1
    nl = nu + 3 * nk
    vol = triangle_rule(2 * l + 2)
    ev = _u_eval(spaces, fr, vol.points, 2 if norm else 1)
    wq = vol.weights[None, :] * fr.det[:, None]
    K = np.zeros((len(cells), nl, nl))
    if norm:
        K[:, :nu, :nu] = np.einsum("cqiab,cqjab,cq->cij", ev["grad"], ev["grad"], wq, optimize=True)
        K[:, :nu, :nu] += np.einsum("cqiabd,cqjabd,cq,c->cij",
                                    ev["hess"], ev["hess"], wq, fr.h ** 2, optimize=True)
    else:
        eps = _sym(ev["grad"])
        K[:, :nu, :nu] = (np.einsum("cqiab,cqjab,cq->cij", eps, eps, wq, optimize=True)
                          + params.lam * np.einsum("cqi,cqj,cq->cij", ev["div"], ev["div"], wq,
                                                   optimize=True))
    er = edge_rule(2 * l + 2)
    tau = params.eta * l ** 2 / fr.h
    for e in range(3):
        ev = _u_eval(spaces, fr, ref_edge_points(e, er.points), 1)
        n, t = fr.n_out[:, e], fr.t[:, e]
        b = np.zeros((len(cells), len(er.weights), nl))
        b[:, :, :nu] = -np.einsum("cqia,ca->cqi", ev["values"], t, optimize=True)
        sg = fr.facet_param(e, er.points)
        b[:, :, nu + e * nk:nu + (e + 1) * nk] = shifted_legendre(l, sg.ravel()).reshape(
            sg.shape + (nk,))
        w = er.weights[None, :] * fr.length[:, e, None]
        if norm:
            K += np.einsum("cqi,cqj,cq,c->cij", b, b, w, 1.0 / fr.h, optimize=True)
            continue
        a = np.zeros_like(b)
        a[:, :, :nu] = np.einsum("cqiab,ca,cb->cqi", _sym(ev["grad"]), t, n, optimize=True)
        ab = np.einsum("cqi,cqj,cq->cij", a, b, w, optimize=True)
        K += ab + np.swapaxes(ab, 1, 2) + tau[:, None, None] * np.einsum(
            "cqi,cqj,cq->cij", b, b, w, optimize=True)
    return K


def _flow_cells(spaces, params, cells, fr):
    """Cell blocks of the Darcy and coupling forms."""
    l = spaces.order
    bases = spaces.bases
    vol = triangle_rule(2 * l + 2)
    wq = vol.weights[None, :] * fr.det[:, None]
    uev = _u_eval(spaces, fr, vol.points, 0)
    wev = piola(bases["W"], vol.points, fr.jac, fr.det, fr.jinv, 0)
    q = bases["P"].values(vol.points)                                # (nq, np)
    out = {
        "B_u": -np.einsum("qi,cqj,cq->cij", q, uev["div"], wq, optimize=True),
        "M_w": np.einsum("cqia,cqja,cq->cij", wev["values"], wev["values"], wq,
                         optimize=True) / params.R,
        "B_w": -np.einsum("qi,cqj,cq->cij", q, wev["div"], wq, optimize=True),
        "mass_p": np.einsum("qi,qj,cq->cij", q, q, wq, optimize=True),
    }
    er = edge_rule(2 * l + 2)
    nw = bases["W"].ndof
    bh = np.zeros((len(cells), 3 * l, nw))
    for e in range(3):
        ev = piola(bases["W"], ref_edge_points(e, er.points), fr.jac, fr.det, fr.jinv, 0)
        wn = np.einsum("cqja,ca->cqj", ev["values"], fr.n_out[:, e], optimize=True)
        sg = fr.facet_param(e, er.points)
        qh = shifted_legendre(l - 1, sg.ravel()).reshape(sg.shape + (l,))
        w = er.weights[None, :] * fr.length[:, e, None]
        bh[:, e * l:(e + 1) * l] = np.einsum("cqk,cqj,cq->ckj", qh, wn, w, optimize=True)
    out["Bhat_w"] = bh
    return out


def _pressure_hdg_cells(spaces, cells, fr, eta_p, norm=False):
    """HDG Laplacian (or its norm) on local ``(p, phat)`` dofs, unit coefficient."""
    l = spaces.order
    bP = spaces.bases["P"]
    npl = bP.ndof
    nl = npl + 3 * l
    vol = triangle_rule(2 * l + 2)
    wq = vol.weights[None, :] * fr.det[:, None]
    ev = affine_scalar(bP, vol.points, fr.jinv, 2 if norm else 1)
    K = np.zeros((len(cells), nl, nl))
    K[:, :npl, :npl] = np.einsum("cqia,cqja,cq->cij", ev["grad"], ev["grad"], wq, optimize=True)
    if norm:
        K[:, :npl, :npl] += np.einsum("cqiab,cqjab,cq,c->cij",
                                      ev["hess"], ev["hess"], wq, fr.h ** 2, optimize=True)
    er = edge_rule(2 * l + 2)
    tau = eta_p * l ** 2 / fr.h
    for e in range(3):
        pts = ref_edge_points(e, er.points)
        ev = affine_scalar(bP, pts, fr.jinv, 1)
        d = np.zeros((len(cells), len(er.weights), nl))
        d[:, :, :npl] = ev["values"][None]
        sg = fr.facet_param(e, er.points)
        d[:, :, npl + e * l:npl + (e + 1) * l] = -shifted_legendre(
            l - 1, sg.ravel()).reshape(sg.shape + (l,))
        w = er.weights[None, :] * fr.length[:, e, None]
        if norm:
            K += np.einsum("cqi,cqj,cq,c->cij", d, d, w, 1.0 / fr.h, optimize=True)
            continue
        c = np.zeros_like(d)
        c[:, :, :npl] = np.einsum("cqia,ca->cqi", ev["grad"], fr.n_out[:, e], optimize=True)
        cd = np.einsum("cqi,cqj,cq->cij", c, d, w, optimize=True)
        K += -(cd + np.swapaxes(cd, 1, 2)) + tau[:, None, None] * np.einsum(
            "cqi,cqj,cq->cij", d, d, w, optimize=True)
    return K


def _cellwise(spaces, fn):
    """Run ``fn(cells, frame) -> dict|array`` over chunks and concatenate."""
    mesh = spaces.mesh
    normals = mesh.facet_normals()
    parts = []
    for cells in _chunks(mesh.num_cells):
        parts.append(fn(cells, _Frame(mesh, cells, normals)))
    if isinstance(parts[0], dict):
        return {k: _stack([p[k] for p in parts]) for k in parts[0]}
    return _stack(parts)


# ---------------------------------------------------------------------------
# global assembly

def scatter_matrix(local, rows, cols, shape):
    """Merge cell matrices into a CSR matrix; negative indices are dropped."""
    r = np.broadcast_to(rows[:, :, None], local.shape)
    c = np.broadcast_to(cols[:, None, :], local.shape)
    keep = (r >= 0) & (c >= 0)
    mat = sp.coo_matrix((local[keep], (r[keep], c[keep])), shape=shape).tocsr()
    mat.sum_duplicates()
    return mat


def scatter_vector(local, idx, n):
    keep = idx >= 0
    return np.bincount(idx[keep], weights=local[keep], minlength=n)


def ubar_map(spaces):
    return np.hstack([spaces.U.cell_dofs,
                      np.where(spaces.Uhat.cell_dofs >= 0,
                               spaces.Uhat.cell_dofs + spaces.U.ndof, -1)])


def pbar_map(spaces):
    return np.hstack([spaces.P.cell_dofs, spaces.Phat.cell_dofs + spaces.P.ndof])


def n_ubar(spaces):
    return spaces.U.ndof + spaces.Uhat.ndof


def assemble_hdg_elasticity(spaces: SpaceSet, params: ScaledParams):
    """``A_ubar``: HDG elasticity plus ``lam (div u, div v)`` on ``U_h x Uhat_h``."""
    local = _cellwise(spaces, lambda c, fr: _hdg_elasticity_cells(spaces, params, c, fr))
    m = ubar_map(spaces)
    n = n_ubar(spaces)
    return scatter_matrix(local, m, m, (n, n))


def assemble_dg_elasticity(spaces: SpaceSet, params: ScaledParams):
    """SIPG elasticity plus ``lam (div, div)`` on ``U_h`` alone.

    Facet averages and jumps follow the global normal ``n_F`` (from
    ``facet_cells[f, 0]`` to ``facet_cells[f, 1]``); boundary facets use the
    one-sided trace.
    """
    mesh = spaces.mesh
    l = spaces.order
    nu = spaces.bases["U"].ndof
    n_glob, t_glob = mesh.facet_normals()

    def cells_part(cells, fr):
        vol = triangle_rule(2 * l + 2)
        ev = _u_eval(spaces, fr, vol.points, 1)
        wq = vol.weights[None, :] * fr.det[:, None]
        eps = _sym(ev["grad"])
        return (np.einsum("cqiab,cqjab,cq->cij", eps, eps, wq, optimize=True)
                + params.lam * np.einsum("cqi,cqj,cq->cij", ev["div"], ev["div"], wq,
                                         optimize=True))

    vol_local = _cellwise(spaces, cells_part)
    dofs = spaces.U.cell_dofs
    K = scatter_matrix(vol_local, dofs, dofs, (spaces.U.ndof,) * 2)

    # traces of every cell on each local edge, sampled at facet parameters
    er = edge_rule(2 * l + 2)
    nq = len(er.weights)
    tr_v = np.zeros((mesh.num_cells, 3, nq, nu))
    tr_a = np.zeros((mesh.num_cells, 3, nq, nu))
    normals = (n_glob, t_glob)
    for cells in _chunks(mesh.num_cells):
        fr = _Frame(mesh, cells, normals)
        for e in range(3):
            s_loc = fr.facet_param(e, er.points)                    # involution
            for rev in (False, True):
                sel = fr.rev[:, e] == rev
                if not sel.any():
                    continue
                pts = ref_edge_points(e, s_loc[sel][0])
                sub = _Frame(mesh, cells[sel], normals)
                ev = _u_eval(spaces, sub, pts, 1)
                n, t = n_glob[sub.facets[:, e]], t_glob[sub.facets[:, e]]
                tr_v[cells[sel], e] = np.einsum("cqia,ca->cqi", ev["values"], t, optimize=True)
                tr_a[cells[sel], e] = np.einsum("cqiab,ca,cb->cqi", _sym(ev["grad"]), t, n,
                                                optimize=True)

    f_of = mesh.cell_facets
    c0, c1 = mesh.facet_cells[:, 0], mesh.facet_cells[:, 1]
    e0 = np.argmax(f_of[c0] == np.arange(mesh.num_facets)[:, None], axis=1)
    interior = c1 >= 0
    e1 = np.zeros_like(e0)
    e1[interior] = np.argmax(f_of[c1[interior]] == np.flatnonzero(interior)[:, None], axis=1)
    w = er.weights[None, :] * mesh.h_per_facet[:, None]
    tau = params.eta * l ** 2 / mesh.h_per_facet

    bf = ~interior
    a = tr_a[c0[bf], e0[bf]]
    b = tr_v[c0[bf], e0[bf]]
    ab = np.einsum("fqi,fqj,fq->fij", a, b, w[bf], optimize=True)
    loc = -(ab + np.swapaxes(ab, 1, 2)) + tau[bf, None, None] * np.einsum(
        "fqi,fqj,fq->fij", b, b, w[bf], optimize=True)
    K = K + scatter_matrix(loc, dofs[c0[bf]], dofs[c0[bf]], K.shape)

    fi = interior
    a = 0.5 * np.concatenate([tr_a[c0[fi], e0[fi]], tr_a[c1[fi], e1[fi]]], axis=2)
    b = np.concatenate([tr_v[c0[fi], e0[fi]], -tr_v[c1[fi], e1[fi]]], axis=2)
    ab = np.einsum("fqi,fqj,fq->fij", a, b, w[fi], optimize=True)
    loc = -(ab + np.swapaxes(ab, 1, 2)) + tau[fi, None, None] * np.einsum(
        "fqi,fqj,fq->fij", b, b, w[fi], optimize=True)
    m = np.hstack([dofs[c0[fi]], dofs[c1[fi]]])
    return K + scatter_matrix(loc, m, m, K.shape)


def assemble_b_form(spaces: SpaceSet):
    """``(B_w, Bhat_w)``: the P-side and Phat-side parts of the hybrid b-form."""
    loc = _cellwise(spaces, lambda c, fr: _flow_cells(spaces, ScaledParams(), c, fr))
    s = spaces
    return (scatter_matrix(loc["B_w"], s.P.cell_dofs, s.W.cell_dofs, (s.P.ndof, s.W.ndof)),
            scatter_matrix(loc["Bhat_w"], s.Phat.cell_dofs, s.W.cell_dofs,
                           (s.Phat.ndof, s.W.ndof)))


def assemble_masses(spaces: SpaceSet, params: ScaledParams):
    """``(M_w, M_p, Mt_p)`` weighted by ``1/R``, ``S`` and ``gamma``."""
    loc = _cellwise(spaces, lambda c, fr: _flow_cells(spaces, params, c, fr))
    s = spaces
    mw = scatter_matrix(loc["M_w"], s.W.cell_dofs, s.W.cell_dofs, (s.W.ndof,) * 2)
    mp = scatter_matrix(loc["mass_p"], s.P.cell_dofs, s.P.cell_dofs, (s.P.ndof,) * 2)
    return mw, params.S * mp, params.gamma * mp


def assemble_div_coupling(spaces: SpaceSet):
    """``B_u``: matrix of ``-(div u, q)``, rows ``P_h``, columns ``ubar``."""
    loc = _cellwise(spaces, lambda c, fr: _flow_cells(spaces, ScaledParams(), c, fr))
    return scatter_matrix(loc["B_u"], spaces.P.cell_dofs, spaces.U.cell_dofs,
                          (spaces.P.ndof, n_ubar(spaces)))


def _split_pressure(local, npl):
    return local[:, :npl, :npl], local[:, npl:, :npl], local[:, npl:, npl:]


def assemble_pressure_hdg_laplacian(spaces: SpaceSet, params: ScaledParams):
    """``(A_p, B_p, A_phat)`` of ``R`` times the HDG Laplacian on ``(P_h, Phat_h)``.

    ``B_p`` has ``Phat_h`` rows and ``P_h`` columns.
    """
    loc = params.R * _cellwise(
        spaces, lambda c, fr: _pressure_hdg_cells(spaces, c, fr, params.eta_p))
    s = spaces
    ap, bp, aph = _split_pressure(loc, s.bases["P"].ndof)
    return (scatter_matrix(ap, s.P.cell_dofs, s.P.cell_dofs, (s.P.ndof,) * 2),
            scatter_matrix(bp, s.Phat.cell_dofs, s.P.cell_dofs, (s.Phat.ndof, s.P.ndof)),
            scatter_matrix(aph, s.Phat.cell_dofs, s.Phat.cell_dofs, (s.Phat.ndof,) * 2))


def _rhs_cells(spaces, f, g, cells, fr):
    l = spaces.order
    rule = triangle_rule(2 * l + 6)
    x = fr.physical(rule.points).reshape(-1, 2)
    wq = rule.weights[None, :] * fr.det[:, None]
    out = {}
    if f is not None:
        fv = np.asarray(f(x), dtype=float).reshape(len(cells), -1, 2)
        ev = _u_eval(spaces, fr, rule.points, 0)
        out["f"] = np.einsum("cqia,cqa,cq->ci", ev["values"], fv, wq, optimize=True)
    if g is not None:
        gv = np.asarray(g(x), dtype=float).reshape(len(cells), -1)
        out["g"] = np.einsum("qi,cq,cq->ci", spaces.bases["P"].values(rule.points), gv, wq,
                             optimize=True)
    return out


def assemble_rhs(spaces: SpaceSet, f=None, g=None, flux=None):
    """Load vectors ``(f_h, g_h, r_hat)``.

    ``f_h`` lives on ``ubar`` (zero on the ``Uhat`` part), ``g_h`` on
    ``P_h``; ``r_hat`` on ``Phat_h`` holds ``<flux . n, qhat>_F`` on
    boundary facets when a boundary flux field ``flux`` is given.
    Callables map ``(N, 2)`` points to ``(N, 2)`` or ``(N,)`` values.
    """
    s = spaces
    fh = np.zeros(n_ubar(s))
    gh = np.zeros(s.P.ndof)
    if f is not None or g is not None:
        loc = _cellwise(s, lambda c, fr: _rhs_cells(s, f, g, c, fr))
        if f is not None:
            fh += scatter_vector(loc["f"], s.U.cell_dofs, n_ubar(s))
        if g is not None:
            gh += scatter_vector(loc["g"], s.P.cell_dofs, s.P.ndof)
    rh = np.zeros(s.Phat.ndof)
    if flux is not None:
        rh = boundary_flux_rhs(s.mesh, s.order - 1, flux)
    return fh, gh, rh


def boundary_flux_rhs(mesh, degree, flux, qdeg=None):
    """``<flux . n, L_k>_F`` on boundary facets in a per-facet P_degree numbering."""
    nk = degree + 1
    rule = edge_rule(qdeg or 2 * degree + 8)
    bfac = np.flatnonzero(mesh.boundary_flags)
    a = mesh.vertices[mesh.facets[bfac, 0]]
    b = mesh.vertices[mesh.facets[bfac, 1]]
    x = a[:, None, :] + rule.points[None, :, None] * (b - a)[:, None, :]
    vals = np.asarray(flux(x.reshape(-1, 2))).reshape(len(bfac), -1, 2)
    n, _ = mesh.facet_normals()
    fn = np.einsum("fqa,fa->fq", vals, n[bfac], optimize=True) * mesh.h_per_facet[bfac, None]
    mom = (fn * rule.weights) @ shifted_legendre(degree, rule.points)
    out = np.zeros(mesh.num_facets * nk)
    out[(bfac[:, None] * nk + np.arange(nk)).ravel()] = mom.ravel()
    return out


# ---------------------------------------------------------------------------
# the block system

@dataclass(eq=False)
class BlockSystem:
    """Assembled blocks, their per-cell sources, and right-hand sides.

    ``local`` holds the cell matrices (``A_ubar``, ``B_u``, ``M_w``,
    ``B_w``, ``Bhat_w``, ``mass_p`` and the unit-coefficient pressure HDG
    matrix ``hdg_p``) in local numbering; ``blocks`` the merged sparse
    matrices.
    """

    spaces: SpaceSet
    params: ScaledParams
    local: dict
    f: np.ndarray
    r_w: np.ndarray
    g: np.ndarray
    r_hat: np.ndarray
    blocks: dict = field(default_factory=dict)

    @property
    def sizes(self):
        s = self.spaces
        return (n_ubar(s), s.W.ndof, s.P.ndof, s.Phat.ndof)

    def block(self, name):
        """Global sparse block by name, assembled on first use."""
        if name not in self.blocks:
            self.blocks[name] = self._assemble(name)
        return self.blocks[name]

    def _assemble(self, name):
        s, p, loc = self.spaces, self.params, self.local
        nub, nw, npp, nph = self.sizes
        um, P, W, Ph = ubar_map(s), s.P.cell_dofs, s.W.cell_dofs, s.Phat.cell_dofs
        npl = s.bases["P"].ndof
        if name == "A_ubar":
            return scatter_matrix(loc["A_ubar"], um, um, (nub, nub))
        if name == "B_u":
            return scatter_matrix(loc["B_u"], P, s.U.cell_dofs, (npp, nub))
        if name == "M_w":
            return scatter_matrix(loc["M_w"], W, W, (nw, nw))
        if name == "B_w":
            return scatter_matrix(loc["B_w"], P, W, (npp, nw))
        if name == "Bhat_w":
            return scatter_matrix(loc["Bhat_w"], Ph, W, (nph, nw))
        if name == "M_p":
            return scatter_matrix(p.S * loc["mass_p"], P, P, (npp, npp))
        if name == "Mt_p":
            return scatter_matrix(p.gamma * loc["mass_p"], P, P, (npp, npp))
        if name in ("A_p", "B_p", "A_phat"):
            ap, bp, aph = _split_pressure(p.R * loc["hdg_p"], npl)
            if name == "A_p":
                return scatter_matrix(ap, P, P, (npp, npp))
            if name == "B_p":
                return scatter_matrix(bp, Ph, P, (nph, npp))
            return scatter_matrix(aph, Ph, Ph, (nph, nph))
        raise KeyError(name)

    def full_matrix(self):
        """The symmetric 4x4 block operator in ``(ubar, w, p, phat)`` ordering."""
        b = self.block
        return sp.bmat([
            [b("A_ubar"), None, b("B_u").T, None],
            [None, b("M_w"), b("B_w").T, b("Bhat_w").T],
            [b("B_u"), b("B_w"), -b("M_p"), None],
            [None, b("Bhat_w"), None, None],
        ], format="csr")

    def full_rhs(self):
        return np.concatenate([self.f, self.r_w, self.g, self.r_hat])

    def split(self, x):
        """Split a full vector into ``(ubar, w, p, phat)``."""
        return tuple(np.split(np.asarray(x), np.cumsum(self.sizes)[:-1]))

    def with_params(self, params):
        """Same discretization with different ``(lam, R, S)``; cheap rescaling."""
        if (params.eta, params.eta_p) != (self.params.eta, self.params.eta_p):
            return assemble_system(self.spaces, params)
        loc = dict(self.local)
        if params.lam != self.params.lam:
            loc["A_ubar"] = self.local["A_ubar"] + (params.lam - self.params.lam) * loc["divdiv"]
        loc["M_w"] = self.local["M_w"] * (self.params.R / params.R)
        return BlockSystem(self.spaces, params, loc, self.f.copy(), self.r_w.copy(),
                           self.g.copy(), self.r_hat.copy())


def _divdiv_cells(spaces, cells, fr):
    l = spaces.order
    nu = spaces.bases["U"].ndof
    vol = triangle_rule(2 * l)
    ev = _u_eval(spaces, fr, vol.points, 0)
    wq = vol.weights[None, :] * fr.det[:, None]
    out = np.zeros((len(cells), nu + 3 * (l + 1), nu + 3 * (l + 1)))
    out[:, :nu, :nu] = np.einsum("cqi,cqj,cq->cij", ev["div"], ev["div"], wq, optimize=True)
    return out


def assemble_system(spaces: SpaceSet, params: ScaledParams, f=None, g=None,
                    flux=None) -> BlockSystem:
    """Assemble all cell matrices and load vectors of the hybridized system."""
    def work(cells, fr):
        out = _flow_cells(spaces, params, cells, fr)
        out["A_ubar"] = _hdg_elasticity_cells(spaces, params, cells, fr)
        out["divdiv"] = _divdiv_cells(spaces, cells, fr)
        out["hdg_p"] = _pressure_hdg_cells(spaces, cells, fr, params.eta_p)
        return out

    local = _cellwise(spaces, work)
    fh, gh, rh = assemble_rhs(spaces, f, g, flux)
    return BlockSystem(spaces, params, local, fh, np.zeros(spaces.W.ndof), gh, rh)


# ---------------------------------------------------------------------------
# norms

def norm_matrices(spaces: SpaceSet, params: ScaledParams):
    """Sparse Gram matrices of the discrete norms.

    Keys: ``hdg_u`` and ``ubar`` on ``(u, uhat)``; ``w_minus`` on ``W_h^-``;
    ``hdg_p`` and ``pbar`` on ``(p, phat)``; ``l2_p`` on ``P_h``.  The
    second-derivative terms use the Frobenius norm of the Hessian.
    """
    s = spaces

    def work(cells, fr):
        out = _flow_cells(s, params, cells, fr)
        out["hdg_u"] = _hdg_elasticity_cells(s, params, cells, fr, norm=True)
        out["divdiv"] = _divdiv_cells(s, cells, fr)
        out["hdg_p"] = _pressure_hdg_cells(s, cells, fr, 1.0, norm=True)
        return out

    loc = _cellwise(s, work)
    um, pm = ubar_map(s), pbar_map(s)
    nub, npb = n_ubar(s), s.P.ndof + s.Phat.ndof
    hdg_u = scatter_matrix(loc["hdg_u"], um, um, (nub, nub))
    divdiv = scatter_matrix(loc["divdiv"], um, um, (nub, nub))
    hdg_p = scatter_matrix(loc["hdg_p"], pm, pm, (npb, npb))
    mass = scatter_matrix(loc["mass_p"], s.P.cell_dofs, s.P.cell_dofs, (s.P.ndof,) * 2)
    mass_bar = sp.block_diag([mass, sp.csr_matrix((s.Phat.ndof, s.Phat.ndof))], format="csr")
    return {
        "hdg_u": hdg_u,
        "ubar": (hdg_u + params.lam * divdiv).tocsr(),
        "w_minus": scatter_matrix(loc["M_w"], s.W.cell_dofs, s.W.cell_dofs, (s.W.ndof,) * 2),
        "hdg_p": hdg_p,
        "pbar": (params.R * hdg_p + params.gamma * mass_bar).tocsr(),
        "l2_p": mass,
    }


def _quad_norm(mat, x):
    return float(np.sqrt(max(float(x @ (mat @ x)), 0.0)))


def evaluate_norms(spaces: SpaceSet, params: ScaledParams, ubar=None, w=None, pbar=None,
                   mats=None):
    """Discrete norms of given coefficient vectors (``None`` entries are skipped)."""
    mats = mats or norm_matrices(spaces, params)
    out = {}
    if ubar is not None:
        out["hdg_u"] = _quad_norm(mats["hdg_u"], ubar)
        out["ubar"] = _quad_norm(mats["ubar"], ubar)
    if w is not None:
        out["w_minus"] = _quad_norm(mats["w_minus"], w)
    if pbar is not None:
        out["hdg_p"] = _quad_norm(mats["hdg_p"], pbar)
        out["pbar"] = _quad_norm(mats["pbar"], pbar)
    return out


def export_coo(mat, path):
    """Write ``row col value`` lines (0-based) for external checks."""
    coo = sp.coo_matrix(mat)
    np.savetxt(path, np.column_stack([coo.row, coo.col, coo.data]),
               fmt=["%d", "%d", "%.17g"])
