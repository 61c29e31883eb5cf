"""Static condensation of the cell-local unknowns ``w`` and ``p``.

With ``D = M_p + B_w M_w^{-1} B_w^T``, ``E = B_w M_w^{-1} Bhat_w^T`` and
``G = Bhat_w M_w^{-1} Bhat_w^T`` (all block diagonal over cells) the
remaining system in ``(ubar, phat)`` reads::

    [ A   B^T ] [ubar]   [ f     - B_u^T D^{-1} h                       ]
    [ B  -C   ] [phat] = [ r_hat - Bhat_w M_w^{-1} r_w + E^T D^{-1} h   ]

    A = A_ubar + B_u^T D^{-1} B_u
    B = -E^T D^{-1} B_u
    C = G - E^T D^{-1} E                   (symmetric positive semidefinite)
    h = B_w M_w^{-1} r_w - g

and the eliminated fields follow cell by cell from::

    p = D^{-1} (B_u ubar - E phat + h)
    w = M_w^{-1} (r_w - B_w^T p - Bhat_w^T phat)
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .forms import BlockSystem, n_ubar, scatter_matrix, scatter_vector, ubar_map


class SingularLocalBlockError(np.linalg.LinAlgError):
    """A cell matrix that should be SPD is not; carries the cell id."""

    def __init__(self, name, cell, eigmin, eigmax):
        self.cell = int(cell)
        self.name = name
        cond = np.inf if eigmin <= 0 else eigmax / eigmin
        super().__init__(f"local block {name} of cell {cell} is not positive definite "
                         f"(eigenvalues in [{eigmin:.3e}, {eigmax:.3e}], cond {cond:.3e})")


def _cholesky(stack, name):
    try:
        return np.linalg.cholesky(stack)
    except np.linalg.LinAlgError:
        eig = np.linalg.eigvalsh(stack)
        bad = int(np.argmin(eig[:, 0] / np.maximum(np.abs(eig[:, -1]), 1e-300)))
        raise SingularLocalBlockError(name, bad, eig[bad, 0], eig[bad, -1]) from None


def _chol_solve(L, b):
    """Solve ``L L^T x = b`` for a stack of factors; ``b`` is (nc, n) or (nc, n, k)."""
    vec = b.ndim == 2
    if vec:
        b = b[:, :, None]
    y = np.linalg.solve(L, b)
    x = np.linalg.solve(np.swapaxes(L, 1, 2), y)
    return x[:, :, 0] if vec else x


def _t(a):
    return np.swapaxes(a, 1, 2)


@dataclass(eq=False)
class CondensedSystem:
    """The ``(ubar, phat)`` saddle-point system and per-cell recovery data."""

    system: BlockSystem
    A: sp.csr_matrix
    B: sp.csr_matrix
    C: sp.csr_matrix
    rhs_u: np.ndarray
    rhs_p: np.ndarray
    chol_w: np.ndarray         # Cholesky factors of M_w per cell
    chol_d: np.ndarray         # Cholesky factors of D per cell
    E: np.ndarray
    G: np.ndarray
    BwMBw: np.ndarray          # B_w M_w^{-1} B_w^T per cell
    Bu: np.ndarray             # B_u padded to local ubar numbering
    h: np.ndarray
    r_w_loc: np.ndarray

    @property
    def n_u(self):
        return self.A.shape[0]

    @property
    def n_p(self):
        return self.C.shape[0]

    def matrix(self):
        return sp.bmat([[self.A, self.B.T], [self.B, -self.C]], format="csr")

    def rhs(self):
        return np.concatenate([self.rhs_u, self.rhs_p])

    def split(self, x):
        return x[:self.n_u], x[self.n_u:]

    def schur_with_mass(self, mass_scale):
        """``C`` with ``M_p`` replaced by ``mass_scale`` times the pressure mass.

        ``mass_scale = gamma`` gives the block ``C~`` of the second
        preconditioner; it is SPD whenever ``mass_scale > 0``.
        """
        s = self.system
        D = mass_scale * s.local["mass_p"] + self.BwMBw
        Ld = _cholesky(D, "D~")
        C = self.G - _t(self.E) @ _chol_solve(Ld, self.E)
        ph = s.spaces.Phat.cell_dofs
        return scatter_matrix(C, ph, ph, (self.n_p, self.n_p))


def condense(system: BlockSystem) -> CondensedSystem:
    """Eliminate ``w`` and ``p`` element by element."""
    s = system.spaces
    loc = system.local
    prm = system.params
    nc = s.mesh.num_cells
    nu = s.bases["U"].ndof
    nub_l = loc["A_ubar"].shape[1]

    Lw = _cholesky(loc["M_w"], "M_w")
    X = _chol_solve(Lw, _t(loc["B_w"]))                 # M_w^{-1} B_w^T
    Y = _chol_solve(Lw, _t(loc["Bhat_w"]))              # M_w^{-1} Bhat_w^T
    BwMBw = loc["B_w"] @ X
    D = prm.S * loc["mass_p"] + BwMBw
    E = loc["B_w"] @ Y
    G = loc["Bhat_w"] @ Y
    Ld = _cholesky(D, "M_p + B_w M_w^-1 B_w^T")

    Bu = np.zeros((nc, loc["B_u"].shape[1], nub_l))
    Bu[:, :, :nu] = loc["B_u"]
    DiBu = _chol_solve(Ld, Bu)
    DiE = _chol_solve(Ld, E)
    A_loc = loc["A_ubar"] + _t(Bu) @ DiBu
    B_loc = -_t(E) @ DiBu
    C_loc = G - _t(E) @ DiE

    um = ubar_map(s)
    ph = s.Phat.cell_dofs
    nub, nph = n_ubar(s), s.Phat.ndof
    A = scatter_matrix(A_loc, um, um, (nub, nub))
    B = scatter_matrix(B_loc, ph, um, (nph, nub))
    C = scatter_matrix(C_loc, ph, ph, (nph, nph))

    rw = s.W.gather(system.r_w)
    g = s.P.gather(system.g)
    MiR = _chol_solve(Lw, rw)
    h = np.einsum("cij,cj->ci", loc["B_w"], MiR, optimize=True) - g
    Dih = _chol_solve(Ld, h)
    rhs_u = system.f - scatter_vector(np.einsum("cji,cj->ci", Bu, Dih, optimize=True), um, nub)
    loc_p = (np.einsum("cji,cj->ci", E, Dih, optimize=True)
             - np.einsum("cij,cj->ci", loc["Bhat_w"], MiR, optimize=True))
    rhs_p = system.r_hat + scatter_vector(loc_p, ph, nph)
    return CondensedSystem(system, A, B, C, rhs_u, rhs_p, Lw, Ld, E, G, BwMBw, Bu, h, rw)


def recover(cs: CondensedSystem, ubar, phat):
    """Cell-wise recovery of ``(w, p)`` from the condensed solution."""
    s = cs.system.spaces
    loc = cs.system.local
    um = ubar_map(s)
    u_loc = np.where(um >= 0, np.asarray(ubar)[np.maximum(um, 0)], 0.0)
    ph_loc = np.asarray(phat)[s.Phat.cell_dofs]
    rhs = (np.einsum("cij,cj->ci", cs.Bu, u_loc, optimize=True)
           - np.einsum("cij,cj->ci", cs.E, ph_loc, optimize=True) + cs.h)
    p_loc = _chol_solve(cs.chol_d, rhs)
    w_rhs = (cs.r_w_loc - np.einsum("cji,cj->ci", loc["B_w"], p_loc, optimize=True)
             - np.einsum("cji,cj->ci", loc["Bhat_w"], ph_loc, optimize=True))
    w_loc = _chol_solve(cs.chol_w, w_rhs)
    # broken spaces: local numbering is global numbering, cell-major
    return w_loc.ravel(), p_loc.ravel()
