"""MinRes with block-diagonal preconditioners for the condensed Biot system.

The condensed operator is ``[[A, B^T], [B, -C]]`` in ``(ubar, phat)``.
Preconditioners are block diagonal with symmetric positive definite
blocks, each applied through an exact sparse LU factorization:

``p2``
    ``diag(A, C~)`` where ``C~`` is ``C`` with ``M_p`` replaced by the
    ``gamma``-weighted mass.
``p1``
    ``diag(A, A_phat + B_p (Mt_p^{-1} + A_p^{-1}) B_p^T)``, the pressure block
    written out for the HDG pressure Laplacian.
``p1-schur``
    ``diag(A, A_phat - B_p (Mt_p + A_p)^{-1} B_p^T)``, the exact Schur
    complement of the same HDG pressure block.
``none``
    identity.

The displacement block is ``A_ubar`` by default; ``disp="A"`` uses the
condensed ``A`` instead.

For ``S > 0`` the constant pressure mode ``phat = 1`` is only controlled by
the storage term, while the pressure blocks weight it by ``gamma``.  The
pressure block is therefore corrected by a rank-one term so that this mode
is weighted by ``S`` (applied through Sherman-Morrison); without it the
preconditioned operator has an outlier eigenvalue of size ``S / gamma``.
"""

from __future__ import annotations

import csv
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .condense import CondensedSystem, _chol_solve, _cholesky, _t
from .forms import BlockSystem, scatter_matrix

VARIANTS = ("p1", "p2", "p1-schur", "none")


class PreconditionerError(RuntimeError):
    pass


@dataclass
class SolveReport:
    """Outcome of one Krylov solve.

    ``history`` holds the relative preconditioned residual (the quantity
    MinRes minimizes) after each iteration, starting with 1.0.
    """

    iterations: int = 0
    converged: bool = False
    relative_residual: float = 0.0
    true_relative_residual: float = np.nan
    history: list = field(default_factory=list)
    wall_time: float = 0.0
    lanczos_diag: list = field(default_factory=list)
    lanczos_offdiag: list = field(default_factory=list)

    def ritz_values(self):
        """Eigenvalues of the Lanczos tridiagonal matrix of the preconditioned operator."""
        k = len(self.lanczos_diag)
        if k == 0:
            return np.zeros(0)
        T = np.diag(self.lanczos_diag)
        off = np.asarray(self.lanczos_offdiag[:k - 1])
        T += np.diag(off, 1) + np.diag(off, -1)
        return np.linalg.eigvalsh(T)

    def condition_estimate(self):
        """``max |theta| / min |theta|`` over the Ritz values."""
        th = np.abs(self.ritz_values())
        return float(th.max() / th.min()) if th.size and th.min() > 0 else np.inf

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["iteration", "relative_residual"])
            for i, r in enumerate(self.history):
                wr.writerow([i, f"{r:.6e}"])


def _as_apply(M):
    if M is None:
        return lambda v: v.copy()
    if callable(M):
        return M
    return lambda v: M @ v


def minres(A, b, M=None, tol=1e-10, maxit=1000, x0=None):
    """Preconditioned MINRES for symmetric ``A`` and SPD preconditioner ``M``.

    Parameters
    ----------
    A : matrix or LinearOperator
    b : ndarray
    M : callable, matrix or None
        Action of the preconditioner inverse, ``v -> M^{-1} v``.
    tol : float
        Stop when the preconditioned residual norm ``||r||_{M^{-1}}`` falls
        below ``tol`` times its initial value.
    maxit : int

    Returns
    -------
    x : ndarray
    report : SolveReport
        ``converged`` is False when ``maxit`` is reached.
    """
    t0 = time.perf_counter()
    apply_m = _as_apply(M)
    n = len(b)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    rep = SolveReport()
    v = b - A @ x
    z = apply_m(v)
    gamma1 = np.sqrt(max(float(z @ v), 0.0))
    rep.history.append(1.0)
    bnorm = np.linalg.norm(b)
    if gamma1 == 0.0:
        rep.converged = True
        rep.true_relative_residual = 0.0
        rep.wall_time = time.perf_counter() - t0
        return x, rep

    v_old = np.zeros(n)
    w_old, w = np.zeros(n), np.zeros(n)
    gamma_old, gamma = 1.0, gamma1
    eta = gamma1
    s_old, s = 0.0, 0.0
    c_old, c = 1.0, 1.0
    for j in range(1, maxit + 1):
        z = z / gamma
        Az = A @ z
        delta = float(Az @ z)
        v_new = Az - (delta / gamma) * v - (gamma / gamma_old) * v_old
        z_new = apply_m(v_new)
        gamma_new = np.sqrt(max(float(z_new @ v_new), 0.0))
        rep.lanczos_diag.append(delta)
        rep.lanczos_offdiag.append(gamma_new)

        a0 = c * delta - c_old * s * gamma
        a1 = np.hypot(a0, gamma_new)
        a2 = s * delta + c_old * c * gamma
        a3 = s_old * gamma
        c_new, s_new = a0 / a1, gamma_new / a1
        w_new = (z - a3 * w_old - a2 * w) / a1
        x = x + c_new * eta * w_new
        eta = -s_new * eta

        rel = abs(eta) / gamma1
        rep.history.append(rel)
        rep.iterations = j
        if rel <= tol or gamma_new == 0.0:
            rep.converged = rel <= tol or gamma_new == 0.0
            break
        v_old, v = v, v_new
        z = z_new
        gamma_old, gamma = gamma, gamma_new
        w_old, w = w, w_new
        s_old, s = s, s_new
        c_old, c = c, c_new
    rep.relative_residual = rep.history[-1]
    rep.true_relative_residual = float(np.linalg.norm(b - A @ x) / bnorm) if bnorm else 0.0
    rep.wall_time = time.perf_counter() - t0
    return x, rep


# ---------------------------------------------------------------------------
# preconditioners

class _SPDFactor:
    """Sparse LU of an SPD matrix with a definiteness probe."""

    def __init__(self, mat, name):
        mat = sp.csc_matrix(mat)
        self.name = name
        try:
            # SPD: diagonal pivots are safe and keep the fill-reducing order
            self.lu = spla.splu(mat, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                                options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise PreconditionerError(f"factorization of block {name} failed: {exc}") from None
        diag = self.lu.U.diagonal()
        # with diagonal pivots an SPD matrix has a positive pivot sequence
        if np.any(~np.isfinite(diag)) or np.any(diag <= 0):
            bad = int(np.sum(~(diag > 0)))
            raise PreconditionerError(f"block {name} is not positive definite "
                                      f"({bad} non-positive pivots)")

    def solve(self, v):
        return self.lu.solve(v)


@dataclass(eq=False)
class Preconditioner:
    """Block-diagonal preconditioner acting as ``v -> P^{-1} v``."""

    variant: str
    n_u: int
    disp: object = None
    pres: object = None
    blocks: tuple = ()
    mode: np.ndarray = None        # constant phat mode
    mode_weight: float = 0.0

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        if self.variant == "none":
            return v.copy()
        out = np.empty_like(v)
        out[:self.n_u] = self.disp.solve(v[:self.n_u])
        vp = v[self.n_u:]
        out[self.n_u:] = self.pres.solve(vp)
        if self.mode_weight:
            out[self.n_u:] += self.mode_weight * (self.mode @ vp) * self.mode
        return out

    def matrix_blocks(self):
        """The two SPD blocks, before the rank-one mode correction."""
        return self.blocks


def _pressure_block_local(system: BlockSystem, variant):
    """Cell contributions of the P1 pressure blocks on the local Phat dofs."""
    s, prm, loc = system.spaces, system.params, system.local
    npl = s.bases["P"].ndof
    K = prm.R * loc["hdg_p"]
    Ap, Bp, Aph = K[:, :npl, :npl], K[:, npl:, :npl], K[:, npl:, npl:]
    Mt = prm.gamma * loc["mass_p"]
    if variant == "p1-schur":
        L = _cholesky(Mt + Ap, "Mt_p + A_p")
        return Aph - Bp @ _chol_solve(L, _t(Bp))
    La = _cholesky(Ap, "A_p")
    Lm = _cholesky(Mt, "Mt_p")
    return Aph + Bp @ (_chol_solve(Lm, _t(Bp)) + _chol_solve(La, _t(Bp)))


MODE_CUTOFF = 1e-8


def _mode_weight(Pp, one, S, gamma):
    """Sherman-Morrison weight rescaling the constant mode from ``gamma`` to ``S``.

    Skipped for ``S < MODE_CUTOFF * gamma``, where the mode is numerically
    singular and the load carries no component along it.
    """
    if S < MODE_CUTOFF * gamma:
        return 0.0
    return (gamma / S - 1.0) / float(one @ (Pp @ one))


def build_preconditioner(variant, cs: CondensedSystem, disp="ubar"):
    """Factor the diagonal blocks of the requested preconditioner.

    Parameters
    ----------
    variant : {"p1", "p2", "p1-schur", "none"}
    cs : CondensedSystem
    disp : {"A", "ubar"}
        Condensed displacement block or the plain ``A_ubar``.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown preconditioner {variant!r}; choose from {VARIANTS}")
    if variant == "none":
        return Preconditioner("none", cs.n_u)
    system = cs.system
    if disp == "A":
        Ad = cs.A
    elif disp == "ubar":
        Ad = system.block("A_ubar")
    else:
        raise ValueError(f"unknown displacement block {disp!r}")
    if variant == "p2":
        Pp = cs.schur_with_mass(system.params.gamma)
    else:
        ph = system.spaces.Phat.cell_dofs
        Pp = scatter_matrix(_pressure_block_local(system, variant), ph, ph,
                            (cs.n_p, cs.n_p))
    prm = system.params
    _, one = constant_pressure_mode(system)
    return Preconditioner(variant, cs.n_u, _SPDFactor(Ad, "displacement"),
                          _SPDFactor(Pp, "pressure"), (Ad, Pp), one,
                          _mode_weight(Pp, one, prm.S, prm.gamma))


# ---------------------------------------------------------------------------
# zero-mean pressure handling

def constant_pressure_mode(system: BlockSystem):
    """Coefficients of ``p = 1`` on ``P_h`` and ``phat = 1`` on ``Phat_h``."""
    s = system.spaces
    one_p = np.ones(s.P.ndof)                    # nodal Lagrange basis
    one_ph = np.zeros(s.Phat.ndof)
    one_ph[::s.order] = 1.0                      # L_0 coefficient per facet
    return one_p, one_ph


def handle_pressure_mean(system: BlockSystem, tol=1e-8):
    """Make the load compatible when ``S = 0`` and return a post-solve shift.

    For ``S > 0`` nothing changes.  For ``S = 0`` the constant mode
    ``(0, 0, 1, 1)`` spans the kernel of the full operator; the incompatible
    part ``eps = 1 . g + 1 . r_hat`` is removed from ``g`` as the constant
    ``eps / |Omega|`` (a warning is issued above ``tol`` relative).

    Returns
    -------
    shift : callable
        ``shift(p, phat) -> (p, phat)`` subtracting the mean of ``p`` (the
        identity when ``S > 0``).
    mean_removed : float
    """
    s = system.spaces
    one_p, one_ph = constant_pressure_mode(system)
    if system.params.S > 0:
        return (lambda p, ph: (p, ph)), 0.0
    eps = float(one_p @ system.g + one_ph @ system.r_hat)
    area = float(s.mesh.areas.sum())
    mass_one = scatter_mass_one(system)
    scale = max(np.linalg.norm(system.g), np.linalg.norm(system.r_hat), 1e-300)
    if abs(eps) > tol * scale:
        warnings.warn(f"pressure load incompatible by {eps:.3e}; projecting", RuntimeWarning)
    system.g = system.g - (eps / area) * mass_one

    def shift(p, ph):
        mean = float(mass_one @ p) / area
        return p - mean * one_p, ph - mean * one_ph

    return shift, eps / area


def scatter_mass_one(system: BlockSystem):
    """``(1, q_i)`` for every ``P_h`` basis function."""
    return system.local["mass_p"].sum(axis=2).ravel()


# ---------------------------------------------------------------------------
# drivers

def solve_direct(cs: CondensedSystem, singular=False):
    """Sparse LU solve of the condensed system.

    With ``singular`` the constant ``phat`` mode is pinned by a rank-one
    term on the ``-C`` block (exact for compatible loads).
    """
    t0 = time.perf_counter()
    K = cs.matrix()
    if singular:
        _, one = constant_pressure_mode(cs.system)
        e = np.concatenate([np.zeros(cs.n_u), one])
        scale = abs(cs.C).max() if cs.C.nnz else 1.0
        ecol = sp.csr_matrix(e[:, None])
        K = (K - scale * (ecol @ ecol.T)).tocsr()
    K = sp.csc_matrix(K)
    b = cs.rhs()
    bnorm = max(np.linalg.norm(b), 1e-300)
    # the matrix is quasi-definite (A SPD, C SPD after pinning), so diagonal
    # pivoting in a fill-reducing order is admissible; fall back to partial
    # pivoting if the residual says otherwise
    x = spla.splu(K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                  options={"SymmetricMode": True}).solve(b)
    res = np.linalg.norm(K @ x - b) / bnorm
    if not res < 1e-8:
        x = spla.splu(K).solve(b)
    rep = SolveReport(iterations=0, converged=True, wall_time=time.perf_counter() - t0)
    rep.true_relative_residual = float(np.linalg.norm(cs.matrix() @ x - b) / bnorm)
    return x, rep


def solve_condensed(cs: CondensedSystem, method="p2", tol=1e-10, maxit=1000, disp="ubar",
                    precond=None):
    """Solve the condensed system by ``direct`` LU or preconditioned MinRes."""
    singular = cs.system.params.S == 0
    if method == "direct":
        return solve_direct(cs, singular)
    P = precond or build_preconditioner(method, cs, disp)
    x, rep = minres(cs.matrix(), cs.rhs(), P, tol=tol, maxit=maxit)
    return x, rep
