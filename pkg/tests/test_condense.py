import numpy as np
import pytest

from hdgbiot.biot import manufactured_2d
from hdgbiot.condense import SingularLocalBlockError, condense, recover
from hdgbiot.forms import ScaledParams, assemble_system, n_ubar
from hdgbiot.mesh import Mesh, unit_square_mesh
from hdgbiot.spaces import build_spaces


def _dense_schur(bs):
    """Eliminate (w, p) from the dense 4x4 block matrix."""
    K = bs.full_matrix().toarray()
    nub, nw, npp, nph = bs.sizes
    keep = np.r_[np.arange(nub), nub + nw + npp + np.arange(nph)]
    elim = np.arange(nub, nub + nw + npp)
    Kkk, Kke = K[np.ix_(keep, keep)], K[np.ix_(keep, elim)]
    Kee = K[np.ix_(elim, elim)]
    b = bs.full_rhs()
    S = Kkk - Kke @ np.linalg.solve(Kee, Kke.T)
    r = b[keep] - Kke @ np.linalg.solve(Kee, b[elim])
    return S, r


def _one_cell():
    return Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]), np.array([[0, 1, 2]]))


@pytest.mark.parametrize("mesh_fn, l", [(_one_cell, 1), (_one_cell, 2),
                                        (lambda: unit_square_mesh(1), 1),
                                        (lambda: unit_square_mesh(2), 2)])
def test_condensed_matches_dense_schur(mesh_fn, l):
    s = build_spaces(mesh_fn(), l)
    prm = ScaledParams(lam=2.0, R=0.7, S=0.3)
    case = manufactured_2d(prm)
    bs = assemble_system(s, prm, case.f, case.g, case.w)
    bs.r_w = np.random.default_rng(0).standard_normal(s.W.ndof)
    cs = condense(bs)
    S, r = _dense_schur(bs)
    K = cs.matrix().toarray()
    assert np.abs(K - S).max() <= 1e-12 * max(np.abs(S).max(), 1.0)
    np.testing.assert_allclose(cs.rhs(), r, atol=1e-12 * max(np.abs(r).max(), 1.0))


def test_local_d_spd_with_zero_storage(mesh2):
    s = build_spaces(mesh2, 2)
    bs = assemble_system(s, ScaledParams(R=1.0, S=0.0))
    loc = bs.local
    Mi = np.linalg.inv(loc["M_w"])
    D = loc["B_w"] @ Mi @ np.transpose(loc["B_w"], (0, 2, 1))
    assert np.linalg.eigvalsh(D).min() > 0


def test_zero_recovery(mesh2):
    s = build_spaces(mesh2, 2)
    cs = condense(assemble_system(s, ScaledParams()))
    w, p = recover(cs, np.zeros(n_ubar(s)), np.zeros(s.Phat.ndof))
    assert not w.any() and not p.any()


@pytest.mark.parametrize("l", [1, 2, 3])
def test_condense_solve_recover_matches_dense(l):
    s = build_spaces(unit_square_mesh(1), l)
    prm = ScaledParams(lam=1.0, R=1.0, S=1.0)
    case = manufactured_2d(prm)
    bs = assemble_system(s, prm, case.f, case.g, case.w)
    x = np.linalg.solve(bs.full_matrix().toarray(), bs.full_rhs())
    ub, w, p, ph = bs.split(x)
    cs = condense(bs)
    y = np.linalg.solve(cs.matrix().toarray(), cs.rhs())
    ub2, ph2 = cs.split(y)
    w2, p2 = recover(cs, ub2, ph2)
    for a, b in [(ub, ub2), (w, w2), (p, p2), (ph, ph2)]:
        assert np.linalg.norm(a - b) <= 1e-10 * max(np.linalg.norm(a), 1e-300)


def test_recovered_w_normal_continuous(mesh2):
    s = build_spaces(mesh2, 2)
    prm = ScaledParams()
    case = manufactured_2d(prm)
    bs = assemble_system(s, prm, case.f, case.g, case.w)
    cs = condense(bs)
    y = np.linalg.solve(cs.matrix().toarray(), cs.rhs())
    ub, ph = cs.split(y)
    w, _ = recover(cs, ub, ph)
    # <[w . n], qhat> equals the prescribed boundary flux and vanishes inside
    jump = bs.block("Bhat_w") @ w - bs.r_hat
    assert np.abs(jump).max() <= 1e-10 * np.abs(bs.r_hat).max()


def test_c_block_psd(mesh2):
    cs = condense(assemble_system(build_spaces(mesh2, 2), ScaledParams(S=0.5)))
    C = cs.C.toarray()
    assert np.abs(C - C.T).max() <= 1e-13 * np.abs(C).max()
    assert np.linalg.eigvalsh(C).min() >= -1e-12 * np.abs(C).max()
    Ct = cs.schur_with_mass(cs.system.params.gamma).toarray()
    assert np.linalg.eigvalsh(Ct).min() > 0


def test_singular_local_block_reported(mesh2):
    bs = assemble_system(build_spaces(mesh2, 1), ScaledParams())
    bs.local["M_w"] = bs.local["M_w"].copy()
    bs.local["M_w"][3] = 0.0
    with pytest.raises(SingularLocalBlockError) as err:
        condense(bs)
    assert "3" in str(err.value)
