"""Problem layer: parameter scaling, manufactured solutions, errors, time stepping.

Scaled static system (per time step)::

    a_h(ubar, vbar) - (p, div v)             = (f, v)
    (R^-1 w, z) - b((p, phat), z)            = 0
    -(div u, q) - b((q, qhat), w) - (S p, q) = (g, q)

obtained from the implicit Euler step of the physical model through the
substitutions ``u_s = alpha u``, ``w_s = tau w`` and
``p_s = alpha**2 p / (2 mu)``, with ``f = alpha f~ / (2 mu)`` and
``g = -tau g~ - div u_s^{k-1} - S p_s^{k-1}``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .condense import condense, recover
from .forms import ScaledParams, assemble_system, n_ubar, norm_matrices
from .mesh import Mesh
from .quadrature import triangle_rule
from .solver import handle_pressure_mean, solve_condensed
from .spaces import SpaceSet, build_spaces, evaluate_field, interpolate

PI = np.pi
P0_SHIFT = 4.0 / PI ** 2


@dataclass(frozen=True)
class PhysicalParams:
    mu: float = 0.5
    lam: float = 0.0
    alpha: float = 1.0
    S0: float = 0.0
    K: float = 1.0
    tau: float = 1.0

    def __post_init__(self):
        if not (self.mu > 0 and self.K > 0 and self.tau > 0 and self.alpha > 0):
            raise ValueError("mu, K, tau and alpha must be positive")
        if self.S0 < 0 or self.lam < 0:
            raise ValueError("S0 and lam must be non-negative")


def scale_params(phys: PhysicalParams, eta=10.0, eta_p=10.0) -> ScaledParams:
    """``lam = lam~/(2 mu)``, ``R = 2 mu tau K / alpha^2``, ``S = 2 mu S0 / alpha^2``."""
    two_mu = 2.0 * phys.mu
    return ScaledParams(lam=phys.lam / two_mu,
                        R=two_mu * phys.tau * phys.K / phys.alpha ** 2,
                        S=two_mu * phys.S0 / phys.alpha ** 2,
                        eta=eta, eta_p=eta_p)


# ---------------------------------------------------------------------------
# manufactured solution

def _a(x):
    return x ** 2 * (1 - x) ** 2


def _a1(x):
    return 2 * x * (1 - x) * (1 - 2 * x)


def _a2(x):
    return 2 * (1 - 6 * x + 6 * x ** 2)


def _a3(x):
    return 12 * (2 * x - 1)


@dataclass(frozen=True)
class ManufacturedCase:
    """Exact fields of the scaled static problem and the matching loads.

    ``u = curl(phi)`` with ``phi = x^2 (1-x)^2 y^2 (1-y)^2`` (divergence
    free, zero on the boundary) and ``p = sin(pi x) sin(pi y) - 4/pi^2``
    (zero mean).  ``w = -R grad p`` has a non-zero normal component on the
    boundary, which is supplied as flux data on the boundary facets.
    """

    params: ScaledParams

    @staticmethod
    def u(x):
        X, Y = x[:, 0], x[:, 1]
        return np.column_stack([-_a(X) * _a1(Y), _a1(X) * _a(Y)])

    @staticmethod
    def grad_u(x):
        X, Y = x[:, 0], x[:, 1]
        g = np.empty((len(x), 2, 2))
        g[:, 0, 0] = -_a1(X) * _a1(Y)
        g[:, 0, 1] = -_a(X) * _a2(Y)
        g[:, 1, 0] = _a2(X) * _a(Y)
        g[:, 1, 1] = _a1(X) * _a1(Y)
        return g

    @staticmethod
    def div_u(x):
        g = ManufacturedCase.grad_u(x)
        return g[:, 0, 0] + g[:, 1, 1]

    @staticmethod
    def p(x):
        return np.sin(PI * x[:, 0]) * np.sin(PI * x[:, 1]) - P0_SHIFT

    @staticmethod
    def grad_p(x):
        X, Y = x[:, 0], x[:, 1]
        return PI * np.column_stack([np.cos(PI * X) * np.sin(PI * Y),
                                     np.sin(PI * X) * np.cos(PI * Y)])

    def w(self, x):
        return -self.params.R * self.grad_p(x)

    def f(self, x):
        """``-div eps(u) - lam grad div u + grad p``; the lam term vanishes."""
        X, Y = x[:, 0], x[:, 1]
        dx_lap = _a3(X) * _a(Y) + _a1(X) * _a2(Y)      # d/dx of laplace(phi)
        dy_lap = _a2(X) * _a1(Y) + _a(X) * _a3(Y)
        # div eps(u) = laplace(u) / 2 for divergence-free u
        return np.column_stack([0.5 * dy_lap, -0.5 * dx_lap]) + self.grad_p(x)

    def g(self, x):
        """``-div u - div w - S p = R laplace(p) - S p``."""
        s = np.sin(PI * x[:, 0]) * np.sin(PI * x[:, 1])
        return -2.0 * PI ** 2 * self.params.R * s - self.params.S * self.p(x)


def manufactured_2d(params: ScaledParams) -> ManufacturedCase:
    return ManufacturedCase(params)


# ---------------------------------------------------------------------------
# solving and errors

@dataclass
class Solution:
    spaces: SpaceSet
    params: ScaledParams
    ubar: np.ndarray
    w: np.ndarray
    p: np.ndarray
    phat: np.ndarray
    report: object = None

    @property
    def u(self):
        return self.ubar[:self.spaces.U.ndof]

    @property
    def uhat(self):
        return self.ubar[self.spaces.U.ndof:]


def solve_biot(spaces: SpaceSet, params: ScaledParams, f=None, g=None, flux=None,
               method="direct", tol=1e-10, maxit=1000, system=None, g_vector=None):
    """Assemble, condense, solve and recover one static step.

    ``g_vector`` (a load on ``P_h``) is added to the assembled ``g`` and is
    used by the time stepper for history terms.
    """
    t0 = time.perf_counter()
    bs = system if system is not None else assemble_system(spaces, params, f, g, flux)
    if g_vector is not None:
        bs.g = bs.g + g_vector
    shift, _ = handle_pressure_mean(bs)
    cs = condense(bs)
    x, rep = solve_condensed(cs, method=method, tol=tol, maxit=maxit)
    ubar, phat = cs.split(x)
    w, p = recover(cs, ubar, phat)
    p, phat = shift(p, phat)
    rep.wall_time = time.perf_counter() - t0
    return Solution(spaces, params, ubar, w, p, phat, rep)


def _cell_points(mesh, rule):
    jac, det, _ = mesh.jacobians()
    x = mesh.vertices[mesh.cells[:, 0]][:, None, :] + np.einsum("cab,qb->cqa", jac, rule.points,
                                                                optimize=True)
    return x, rule.weights[None, :] * det[:, None]


def compute_errors(case: ManufacturedCase, sol: Solution, qdeg=None, mats=None):
    """Error norms of a discrete solution against the manufactured fields.

    Keys: ``grad_u``, ``u``, ``grad_p`` (None for l = 1), ``p``,
    ``flux`` (``||grad p + R^-1 w_h||``), ``pbar_proj``
    (``||Pi p - (p_h, phat_h)||_Pbar``) and ``max_div_u``.
    """
    s = sol.spaces
    mesh, l = s.mesh, s.order
    rule = triangle_rule(qdeg or 2 * l + 6)
    x, wq = _cell_points(mesh, rule)
    xf = x.reshape(-1, 2)
    shape = x.shape[:2]

    def l2(diff):
        d = diff.reshape(shape + (-1,))
        return float(np.sqrt(np.einsum("cqk,cqk,cq->", d, d, wq, optimize=True)))

    ue = evaluate_field(s, "U", sol.u, rule.points, derivs=1)
    pe = evaluate_field(s, "P", sol.p, rule.points, derivs=1)
    we = evaluate_field(s, "W", sol.w, rule.points)
    out = {
        "grad_u": l2(ue["grad"].reshape(-1, 4) - case.grad_u(xf).reshape(-1, 4)),
        "u": l2(ue["values"].reshape(-1, 2) - case.u(xf)),
        "grad_p": (l2(pe["grad"].reshape(-1, 2) - case.grad_p(xf)) if l >= 2 else None),
        "p": l2(pe["values"].ravel() - case.p(xf)),
        "flux": l2(case.grad_p(xf) + we["values"].reshape(-1, 2) / sol.params.R),
        "max_div_u": float(np.abs(ue["div"]).max()),
    }
    mats = mats or norm_matrices(s, sol.params)
    proj = np.concatenate([interpolate(s, "P", case.p), interpolate(s, "Phat", case.p)])
    diff = proj - np.concatenate([sol.p, sol.phat])
    out["pbar_proj"] = float(np.sqrt(max(diff @ (mats["pbar"] @ diff), 0.0)))
    return out


def eoc(errors, h=None):
    """Orders ``log(e_k / e_{k+1}) / log(h_k / h_{k+1})``; halving ``h`` by default."""
    e = np.asarray(errors, dtype=float)
    if h is None:
        return np.log2(e[:-1] / e[1:])
    h = np.asarray(h, dtype=float)
    return np.log(e[:-1] / e[1:]) / np.log(h[:-1] / h[1:])


# ---------------------------------------------------------------------------
# time stepping

@dataclass
class TimeState:
    """Scaled coefficient vectors at one time level."""

    ubar: np.ndarray
    w: np.ndarray
    p: np.ndarray
    phat: np.ndarray

    @classmethod
    def zeros(cls, spaces):
        return cls(np.zeros(n_ubar(spaces)), np.zeros(spaces.W.ndof),
                   np.zeros(spaces.P.ndof), np.zeros(spaces.Phat.ndof))


def to_physical(state: TimeState, phys: PhysicalParams) -> TimeState:
    """Undo ``u_s = alpha u``, ``w_s = tau w``, ``p_s = alpha^2 p / (2 mu)``."""
    cp = 2.0 * phys.mu / phys.alpha ** 2
    return TimeState(state.ubar / phys.alpha, state.w / phys.tau,
                     state.p * cp, state.phat * cp)


def to_scaled(state: TimeState, phys: PhysicalParams) -> TimeState:
    cp = 2.0 * phys.mu / phys.alpha ** 2
    return TimeState(state.ubar * phys.alpha, state.w * phys.tau,
                     state.p / cp, state.phat / cp)


def time_step(spaces: SpaceSet, prev: TimeState, phys: PhysicalParams, f_phys=None,
              g_phys=None, flux_phys=None, method="direct", tol=1e-10, maxit=1000):
    """One implicit Euler step in scaled variables.

    ``f_phys``, ``g_phys`` and ``flux_phys`` are the physical body force,
    source and boundary seepage velocity at the new time level.
    """
    params = scale_params(phys)
    f = (lambda x: phys.alpha * f_phys(x) / (2.0 * phys.mu)) if f_phys else None
    g = (lambda x: -phys.tau * g_phys(x)) if g_phys else None
    flux = (lambda x: phys.tau * flux_phys(x)) if flux_phys else None
    bs = assemble_system(spaces, params, f, g, flux)
    hist = bs.block("B_u") @ prev.ubar - bs.block("M_p") @ prev.p
    sol = solve_biot(spaces, params, method=method, tol=tol, maxit=maxit, system=bs,
                     g_vector=hist)
    return TimeState(sol.ubar, sol.w, sol.p, sol.phat), sol.report


def solve_manufactured(mesh: Mesh, l: int, params: ScaledParams, method="direct", **kw):
    spaces = build_spaces(mesh, l)
    case = manufactured_2d(params)
    sol = solve_biot(spaces, params, case.f, case.g, case.w, method=method, **kw)
    return case, sol
