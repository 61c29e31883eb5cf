import warnings

import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from hypothesis import given, settings, strategies as st

from hdgbiot.biot import manufactured_2d
from hdgbiot.condense import condense
from hdgbiot.forms import ScaledParams, assemble_system
from hdgbiot.mesh import unit_square_mesh
from hdgbiot.solver import (PreconditionerError, _SPDFactor, build_preconditioner,
                            constant_pressure_mode, handle_pressure_mean, minres,
                            scatter_mass_one, solve_condensed)
from hdgbiot.spaces import build_spaces


def _system(n=4, l=2, **kw):
    prm = ScaledParams(**kw)
    s = build_spaces(unit_square_mesh(n), l)
    case = manufactured_2d(prm)
    bs = assemble_system(s, prm, case.f, case.g, case.w)
    handle_pressure_mean(bs)
    return condense(bs)


def test_minres_zero_rhs():
    A = sp.diags([1.0, -2.0, 3.0])
    x, rep = minres(A, np.zeros(3))
    assert not x.any() and rep.iterations == 0 and rep.converged


def test_minres_two_by_two():
    A = np.array([[2.0, 1.0], [1.0, -3.0]])
    b = np.array([1.0, 2.0])
    x, rep = minres(A, b, tol=1e-14)
    assert rep.iterations <= 2
    np.testing.assert_allclose(A @ x, b, atol=1e-13)


def test_minres_maxit_reported():
    rng = np.random.default_rng(3)
    Q, _ = np.linalg.qr(rng.standard_normal((60, 60)))
    A = Q @ np.diag(np.linspace(-50, 50, 60) + 0.01) @ Q.T
    x, rep = minres(A, rng.standard_normal(60), tol=1e-14, maxit=3)
    assert not rep.converged and rep.iterations == 3
    assert len(rep.history) == 4


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 40), st.integers(0, 10 ** 6))
def test_minres_matches_dense_solve(n, seed):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((n, n))
    A = B + B.T + np.diag(np.where(rng.random(n) < 0.5, -1.0, 1.0) * n)
    D = np.diag(rng.uniform(0.5, 2.0, n))
    b = rng.standard_normal(n)
    x, rep = minres(A, b, M=lambda v: np.linalg.solve(D, v), tol=1e-12, maxit=4 * n)
    assert rep.converged
    xe = np.linalg.solve(A, b)
    assert np.linalg.norm(x - xe) <= 1e-8 * np.linalg.cond(A) * np.linalg.norm(xe)


def test_minres_agrees_with_scipy():
    cs = _system(n=4, l=1)
    P = build_preconditioner("p2", cs)
    K, b = cs.matrix(), cs.rhs()
    x, rep = minres(K, b, P, tol=1e-12)
    op = spla.LinearOperator(K.shape, matvec=P)
    y, info = spla.minres(K, b, M=op, rtol=1e-12, maxiter=500)
    assert info == 0
    assert np.linalg.norm(x - y) <= 1e-8 * np.linalg.norm(y)


@pytest.mark.parametrize("variant", ["p2", "p1-schur", "p1"])
def test_preconditioner_blocks_spd(variant):
    cs = _system(n=2, l=2)
    P = build_preconditioner(variant, cs)
    for blk in P.matrix_blocks():
        M = blk.toarray()
        assert np.abs(M - M.T).max() <= 1e-12 * np.abs(M).max()
        assert np.linalg.eigvalsh(M).min() > 0


def test_spd_factor_rejects_indefinite():
    with pytest.raises(PreconditionerError):
        _SPDFactor(sp.diags([1.0, -1.0, 2.0]), "test")


def test_unknown_variant():
    with pytest.raises(ValueError):
        build_preconditioner("amg", _system(n=2, l=1))


def test_p2_beats_unpreconditioned():
    cs = _system(n=4, l=2)
    _, r2 = solve_condensed(cs, "p2")
    _, r0 = solve_condensed(cs, "none", maxit=3000)
    assert r2.converged
    assert r2.iterations < r0.iterations


def test_preconditioner_deterministic():
    cs = _system(n=4, l=2)
    P = build_preconditioner("p2", cs)
    v = np.random.default_rng(0).standard_normal(cs.n_u + cs.n_p)
    assert np.array_equal(P(v), P(v))
    x1, a = solve_condensed(cs, "p2")
    x2, b = solve_condensed(cs, "p2")
    assert a.iterations == b.iterations and np.array_equal(x1, x2)


@pytest.mark.parametrize("l", [1, 2])
def test_variant_agreement(l):
    cs = _system(n=4, l=l, lam=10.0, R=0.1, S=0.5)
    K = cs.matrix()
    # combined norm: blocks of the p2 preconditioner
    P = build_preconditioner("p2", cs)
    N = sp.block_diag(P.matrix_blocks())
    xd, _ = solve_condensed(cs, "direct")
    nrm = lambda z: np.sqrt(z @ (N @ z))
    for v in ("p2", "p1-schur"):
        x, rep = solve_condensed(cs, v, tol=1e-12)
        assert rep.converged
        assert nrm(x - xd) <= 1e-8 * nrm(xd)


def test_s_sweep_band():
    counts = [solve_condensed(_system(n=8, l=1, S=S), "p2")[1].iterations
              for S in (1e-16, 1e-8, 1.0)]
    assert max(counts) - min(counts) <= 4


def test_constant_mode_is_null_vector_for_zero_storage():
    s = build_spaces(unit_square_mesh(2), 2)
    bs = assemble_system(s, ScaledParams(S=0.0))
    one_p, one_ph = constant_pressure_mode(bs)
    z = np.concatenate([np.zeros(bs.sizes[0] + bs.sizes[1]), one_p, one_ph])
    assert np.abs(bs.full_matrix() @ z).max() <= 1e-12


def test_handle_pressure_mean():
    s = build_spaces(unit_square_mesh(2), 1)
    bs = assemble_system(s, ScaledParams(S=1.0), g=lambda x: np.ones(len(x)))
    g0 = bs.g.copy()
    shift, removed = handle_pressure_mean(bs)
    assert removed == 0.0 and np.array_equal(bs.g, g0)
    bs = assemble_system(s, ScaledParams(S=0.0), g=lambda x: np.full(len(x), 0.25))
    with pytest.warns(RuntimeWarning):
        shift, removed = handle_pressure_mean(bs)
    # eps = int g = 0.25 on the unit square, removed as the constant eps / |Omega|
    assert abs(removed - 0.25) <= 1e-14
    assert np.abs(bs.g).max() <= 1e-15
    p, ph = shift(np.full(s.P.ndof, 2.0), np.full(s.Phat.ndof, 0.0))
    assert abs(scatter_mass_one(bs) @ p) <= 1e-14


def test_zero_storage_solve_has_zero_mean():
    s = build_spaces(unit_square_mesh(4), 2)
    prm = ScaledParams(S=0.0)
    case = manufactured_2d(prm)
    from hdgbiot.biot import solve_biot
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        sol = solve_biot(s, prm, case.f, case.g, case.w)
        sol2 = solve_biot(s, prm, case.f, case.g, case.w, method="p2")
    bs = assemble_system(s, prm)
    assert abs(scatter_mass_one(bs) @ sol.p) <= 1e-12
    assert np.linalg.norm(sol.p - sol2.p) <= 1e-7 * np.linalg.norm(sol.p)


def test_history_csv(tmp_path):
    _, rep = solve_condensed(_system(n=2, l=1), "p2")
    path = tmp_path / "h.csv"
    rep.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "iteration,relative_residual"
    assert len(lines) == rep.iterations + 2
    assert rep.condition_estimate() >= 1.0
