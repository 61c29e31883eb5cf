"""Experiment drivers: convergence, preconditioner robustness, cost accounting,
mixed vs hybrid-mixed Darcy, inf-sup constants and a time-stepping demo.

Every ``run_*`` function returns a list of row dicts; :func:`write_csv`
stores them with the column order fixed in ``SCHEMAS``.
"""

from __future__ import annotations

import csv
import json
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import __version__
from .biot import (PhysicalParams, TimeState, compute_errors, eoc, manufactured_2d,
                   solve_biot, time_step)
from .condense import condense, recover
from .forms import (ScaledParams, assemble_dg_elasticity, assemble_system, n_ubar,
                    norm_matrices, scatter_matrix, ubar_map)
from .mesh import refine_uniform, refinement_sequence, unit_square_mesh
from .solver import (constant_pressure_mode, handle_pressure_mean, scatter_mass_one,
                     solve_condensed)
from .spaces import (boundary_facet_dofs, build_spaces, conforming_rt_map,
                     interpolate_conforming_rt)

EXPERIMENTS = ("convergence", "robustness", "cost-elasticity", "cost-darcy", "darcy",
               "infsup", "timestep-demo")

ERROR_KEYS = ("grad_u", "u", "grad_p", "p", "flux", "pbar_proj")

SCHEMAS = {
    "convergence": ["l", "level", "cells", "h"]
    + [c for k in ERROR_KEYS for c in (k, f"eoc_{k}")]
    + ["max_div_u", "status", "wall_time"],
    "robustness": ["sweep", "value", "l", "lam", "R", "S", "preconditioner", "iterations",
                   "converged", "relative_residual", "condition_estimate", "wall_time"],
    "cost-elasticity": ["method", "l", "dof", "cdof", "nze"],
    "cost-darcy": ["method", "l", "rt_degree", "dof", "cdof", "nze"],
    "darcy": ["l", "rt_degree", "cells", "rel_diff_w", "rel_diff_p", "normal_jump",
              "hm_cdof", "phat_ndof", "err_w_m", "err_w_hm"],
    "infsup": ["pairing", "l", "cells", "beta"],
    "timestep-demo": ["step", "time", "norm_u", "norm_p", "norm_w", "change"],
}

DEFAULT_SWEEPS = {
    "Rinv": [1.0, 1e2, 1e4, 1e6, 1e8, 1e10, 1e12],
    "lam": [1.0, 1e1, 1e2, 1e3, 1e4, 1e5, 1e6],
    "S": [1e-16, 1e-12, 1e-8, 1e-4, 1.0],
}


@dataclass
class ExperimentConfig:
    experiment: str = "convergence"
    orders: list = field(default_factory=lambda: [1, 2, 3])
    n0: int = 2
    levels: int = 6
    mesh_n: int = 16
    lam: float = 1.0
    R: float = 1.0
    S: float = 1.0
    sweeps: dict = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_SWEEPS.items()})
    preconditioners: list = field(default_factory=lambda: ["p2"])
    method: str = "direct"
    tol: float = 1e-10
    maxit: int = 1000
    steps: int = 5
    outdir: str = "results"
    threads: int = 1
    verbose: bool = False

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}")
        if not self.orders:
            raise ValueError("orders must be nonempty")
        if any(not v for v in self.sweeps.values()):
            raise ValueError("sweep lists must be nonempty")

    @property
    def params(self):
        return ScaledParams(lam=self.lam, R=self.R, S=self.S)


def _map(fn, items, threads):
    """Ordered map, optionally over a thread pool."""
    if threads <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------------------
# convergence

def run_convergence(cfg: ExperimentConfig):
    meshes = refinement_sequence(cfg.n0, cfg.levels)
    rows = []
    for l in cfg.orders:
        block = []
        for level, mesh in enumerate(meshes):
            t0 = time.perf_counter()
            row = {"l": l, "level": level, "cells": mesh.num_cells,
                   "h": float(mesh.h_per_cell.max())}
            try:
                spaces = build_spaces(mesh, l)
                case = manufactured_2d(cfg.params)
                sol = solve_biot(spaces, cfg.params, case.f, case.g, case.w,
                                 method=cfg.method, tol=cfg.tol, maxit=cfg.maxit)
                row.update(compute_errors(case, sol))
                row["status"] = "ok" if sol.report.converged else "not-converged"
            except Exception as exc:                       # recorded, not raised
                row["status"] = f"failed: {exc}"
            row["wall_time"] = time.perf_counter() - t0
            block.append(row)
            if cfg.verbose:
                print(f"l={l} cells={mesh.num_cells} {row['status']} "
                      f"{row['wall_time']:.1f}s", flush=True)
        for key in ERROR_KEYS:
            vals = [r.get(key) for r in block]
            if any(v is None for v in vals):
                continue
            rates = eoc(vals)
            for r, rate in zip(block[1:], rates):
                r[f"eoc_{key}"] = float(rate)
        rows.extend(block)
    return rows


# ---------------------------------------------------------------------------
# robustness

def sweep_params(name, value, base: ScaledParams):
    if name == "Rinv":
        return ScaledParams(lam=base.lam, R=1.0 / value, S=base.S)
    if name == "lam":
        return ScaledParams(lam=value, R=base.R, S=base.S)
    if name == "S":
        return ScaledParams(lam=base.lam, R=base.R, S=value)
    raise ValueError(f"unknown sweep {name!r}")


def robustness_case(mesh, l, params, variants, tol=1e-10, maxit=1000, spaces=None):
    """Iteration counts of the requested preconditioners for one parameter set."""
    spaces = spaces or build_spaces(mesh, l)
    case = manufactured_2d(params)
    bs = assemble_system(spaces, params, case.f, case.g, case.w)
    handle_pressure_mean(bs)
    cs = condense(bs)
    out = {}
    for v in variants:
        t0 = time.perf_counter()
        _, rep = solve_condensed(cs, method=v, tol=tol, maxit=maxit)
        rep.wall_time = time.perf_counter() - t0
        out[v] = rep
    return out


def run_robustness(cfg: ExperimentConfig):
    mesh = unit_square_mesh(cfg.mesh_n)
    base = cfg.params
    rows = []
    for l in cfg.orders:
        spaces = build_spaces(mesh, l)
        items = [(name, v) for name, vals in cfg.sweeps.items() for v in vals]

        def one(item):
            name, value = item
            prm = sweep_params(name, value, base)
            return item, prm, robustness_case(mesh, l, prm, cfg.preconditioners, cfg.tol,
                                              cfg.maxit, spaces)

        for (name, value), prm, reps in _map(one, items, cfg.threads):
            for v, rep in reps.items():
                rows.append({"sweep": name, "value": value, "l": l, "lam": prm.lam,
                             "R": prm.R, "S": prm.S, "preconditioner": v,
                             "iterations": rep.iterations if rep.converged else cfg.maxit,
                             "converged": bool(rep.converged),
                             "relative_residual": rep.relative_residual,
                             "condition_estimate": rep.condition_estimate(),
                             "wall_time": rep.wall_time})
                if cfg.verbose:
                    print(f"l={l} {name}={value:g} {v}: {rep.iterations}", flush=True)
                    hist_dir = os.path.join(cfg.outdir, "histories")
                    os.makedirs(hist_dir, exist_ok=True)
                    rep.write_csv(os.path.join(hist_dir, f"l{l}_{name}_{value:g}_{v}.csv"))
    return rows


def iteration_ratio(rows, sweep, l, preconditioner="p2"):
    its = [r["iterations"] for r in rows
           if r["sweep"] == sweep and r["l"] == l and r["preconditioner"] == preconditioner]
    return max(its) / min(its), its


# ---------------------------------------------------------------------------
# cost accounting

def _pattern_nnz(cell_dofs):
    """Structural nonzeros of a matrix coupling all listed dofs of each cell."""
    n = int(cell_dofs.max()) + 1 if cell_dofs.size else 0
    ones = np.ones((cell_dofs.shape[0], cell_dofs.shape[1], cell_dofs.shape[1]))
    return scatter_matrix(ones, cell_dofs, cell_dofs, (n, n)).nnz


def elasticity_cost(mesh, l):
    """Rows for DG and HDG elasticity (``lam = 0``) on one mesh."""
    spaces = build_spaces(mesh, l)
    prm = ScaledParams(lam=0.0)
    dg = assemble_dg_elasticity(spaces, prm)
    dg.eliminate_zeros()
    ndg = spaces.U.ndof
    # HDG: interior BDM dofs are condensed; facet normal moments and uhat couple
    nk = l + 1
    um = ubar_map(spaces)
    nloc_u = spaces.bases["U"].ndof
    facet_cols = np.r_[np.arange(3 * nk), np.arange(nloc_u, um.shape[1])]
    coupling = um[:, facet_cols]
    bubbles = spaces.U.ndof - mesh.num_interior_facets * nk
    dof = n_ubar(spaces)
    cdof = dof - bubbles
    # renumber coupling dofs densely for the structural count
    live = np.unique(coupling[coupling >= 0])
    remap = -np.ones(dof, dtype=np.int64)
    remap[live] = np.arange(len(live))
    cd = np.where(coupling >= 0, remap[np.maximum(coupling, 0)], -1)
    return [{"method": "DG", "l": l, "dof": ndg, "cdof": ndg, "nze": int(dg.nnz)},
            {"method": "HDG", "l": l, "dof": dof, "cdof": cdof, "nze": _pattern_nnz(cd)}]


def run_cost_elasticity(cfg: ExperimentConfig):
    mesh = unit_square_mesh(cfg.mesh_n)
    rows = []
    for l in cfg.orders:
        rows.extend(elasticity_cost(mesh, l))
    return rows


def crossover_order(rows):
    """Smallest ``l`` with HDG nze below DG nze, or None."""
    by = {(r["method"], r["l"]): r["nze"] for r in rows}
    for l in sorted({r["l"] for r in rows}):
        if by.get(("HDG", l), np.inf) < by.get(("DG", l), -np.inf):
            return l
    return None


# ---------------------------------------------------------------------------
# mixed and hybrid-mixed Darcy

@dataclass
class DarcyResult:
    w_m: np.ndarray           # conforming solution in broken (cell-local) coefficients
    p_m: np.ndarray
    w_hm: np.ndarray
    p_hm: np.ndarray
    phat: np.ndarray
    normal_jump: float
    cost: list


def _darcy_case():
    prm = ScaledParams(lam=1.0, R=1.0, S=0.0)
    return prm, manufactured_2d(prm)


def _mixed_darcy(spaces, bs, case):
    """Conforming RT x P solve with prescribed boundary flux and zero-mean p."""
    mesh, l = spaces.mesh, spaces.order
    loc = bs.local
    dm = conforming_rt_map(mesh, l)
    sg = dm.cell_signs
    nw, npp = dm.ndof, spaces.P.ndof
    Mloc = loc["M_w"] * sg[:, :, None] * sg[:, None, :]
    Bloc = loc["B_w"] * sg[:, None, :]
    M = scatter_matrix(Mloc, dm.cell_dofs, dm.cell_dofs, (nw, nw))
    B = scatter_matrix(Bloc, spaces.P.cell_dofs, dm.cell_dofs, (npp, nw))
    nk = l
    bd = boundary_facet_dofs(mesh, nk)
    free = np.setdiff1d(np.arange(nw), bd)
    wb = interpolate_conforming_rt(mesh, l, case.w)[bd]
    mass_one = scatter_mass_one(bs)
    Mff, Bf = M[free][:, free], B[:, free]
    K = sp.bmat([[Mff, Bf.T, None],
                 [Bf, None, sp.csr_matrix(mass_one[:, None])],
                 [None, sp.csr_matrix(mass_one[None, :]), None]], format="csc")
    rhs = np.concatenate([-M[free][:, bd] @ wb, bs.g - B[:, bd] @ wb, [0.0]])
    x = spla.splu(K).solve(rhs)
    w = np.zeros(nw)
    w[free] = x[:len(free)]
    w[bd] = wb
    p = x[len(free):len(free) + npp]
    # system size and the coupling left after eliminating cell-interior
    # RT dofs and all but one pressure dof per cell
    ndof = len(free) + npp
    cdof = mesh.num_interior_facets * nk + mesh.num_cells
    nze = int(sp.bmat([[Mff, Bf.T], [Bf, None]]).tocsr().nnz)
    return dm.gather(w).ravel(), p, {"dof": ndof, "cdof": cdof, "nze": nze}


def _hybrid_darcy(spaces, bs):
    """Hybrid-mixed solve: eliminate W and P, solve for Phat."""
    handle_pressure_mean(bs)
    cs = condense(bs)
    C = cs.C
    _, one = constant_pressure_mode(bs)
    scale = abs(C).max()
    ecol = sp.csr_matrix(one[:, None])
    phat = spla.splu(sp.csc_matrix(C + scale * (ecol @ ecol.T))).solve(-cs.rhs_p)
    w, p = recover(cs, np.zeros(cs.n_u), phat)
    mass_one = scatter_mass_one(bs)
    mean = float(mass_one @ p) / float(spaces.mesh.areas.sum())
    one_p, one_ph = constant_pressure_mode(bs)
    p, phat = p - mean * one_p, phat - mean * one_ph
    # facet moments of the normal jump on interior facets
    jump = bs.block("Bhat_w") @ w - bs.r_hat
    cost = {"dof": spaces.W.ndof + spaces.P.ndof + spaces.Phat.ndof,
            "cdof": spaces.Phat.ndof, "nze": int(C.nnz)}
    return w, p, phat, jump, cost


def run_darcy_case(mesh, l):
    """Both Darcy discretizations of the manufactured case with RT_{l-1}."""
    spaces = build_spaces(mesh, l)
    prm, case = _darcy_case()
    bs = assemble_system(spaces, prm, None, case.g, case.w)
    w_m, p_m, cost_m = _mixed_darcy(spaces, bs, case)
    bs = assemble_system(spaces, prm, None, case.g, case.w)
    w_hm, p_hm, phat, jump, cost_hm = _hybrid_darcy(spaces, bs)
    scale = max(np.abs(bs.r_hat).max(), np.linalg.norm(w_hm, np.inf), 1e-300)
    cost = [dict(method="M", l=l, rt_degree=l - 1, **cost_m),
            dict(method="HM", l=l, rt_degree=l - 1, **cost_hm)]
    return DarcyResult(w_m, p_m, w_hm, p_hm, phat, float(np.abs(jump).max() / scale), cost)


def _rel(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def _w_error(spaces, w, case):
    from .biot import _cell_points
    from .quadrature import triangle_rule
    from .spaces import evaluate_field
    rule = triangle_rule(2 * spaces.order + 6)
    x, wq = _cell_points(spaces.mesh, rule)
    ev = evaluate_field(spaces, "W", w, rule.points)["values"]
    d = ev - case.w(x.reshape(-1, 2)).reshape(ev.shape)
    return float(np.sqrt(np.einsum("cqa,cqa,cq->", d, d, wq)))


def run_darcy(cfg: ExperimentConfig):
    mesh = unit_square_mesh(cfg.mesh_n)
    _, case = _darcy_case()
    rows = []
    for l in cfg.orders:
        res = run_darcy_case(mesh, l)
        spaces = build_spaces(mesh, l)
        rows.append({"l": l, "rt_degree": l - 1, "cells": mesh.num_cells,
                     "rel_diff_w": _rel(res.w_hm, res.w_m), "rel_diff_p": _rel(res.p_hm, res.p_m),
                     "normal_jump": res.normal_jump, "hm_cdof": res.cost[1]["cdof"],
                     "phat_ndof": spaces.Phat.ndof,
                     "err_w_m": _w_error(spaces, res.w_m, case),
                     "err_w_hm": _w_error(spaces, res.w_hm, case)})
    return rows


def run_cost_darcy(cfg: ExperimentConfig):
    mesh = unit_square_mesh(cfg.mesh_n)
    rows = []
    for l in cfg.orders:
        rows.extend(run_darcy_case(mesh, l).cost)
    return rows


# ---------------------------------------------------------------------------
# discrete inf-sup constants

def _complement(v):
    """Orthonormal basis of the complement of ``v``."""
    return sla.null_space(v[None, :])


def _min_gen_eig(S, N):
    vals = sla.eigh(S, N, eigvals_only=True)
    return float(np.sqrt(max(vals[0], 0.0)))


def infsup_stokes(mesh, l):
    """``inf_q sup_ubar (div u, q) / (||ubar||_HDG ||q||_0)`` over zero-mean ``q``."""
    spaces = build_spaces(mesh, l)
    prm = ScaledParams(lam=0.0, R=1.0, S=1.0)
    bs = assemble_system(spaces, prm)
    mats = norm_matrices(spaces, prm)
    B = bs.block("B_u").toarray()
    K = mats["hdg_u"].toarray()
    M = mats["l2_p"].toarray()
    Z = _complement(M @ np.ones(spaces.P.ndof))
    S = B @ np.linalg.solve(K, B.T)
    return _min_gen_eig(Z.T @ S @ Z, Z.T @ M @ Z)


def infsup_darcy(mesh, l):
    """``inf sup b((q, qhat), w) / (||w||_0 ||(q, qhat)||_HDG)`` without constants."""
    spaces = build_spaces(mesh, l)
    prm = ScaledParams(lam=1.0, R=1.0, S=1.0)
    bs = assemble_system(spaces, prm)
    mats = norm_matrices(spaces, prm)
    Bfull = sp.vstack([bs.block("B_w"), bs.block("Bhat_w")]).toarray()
    Mw = bs.block("M_w").toarray()
    N = mats["hdg_p"].toarray()
    one_p, one_ph = constant_pressure_mode(bs)
    Z = _complement(np.concatenate([one_p, one_ph]))
    S = Bfull @ np.linalg.solve(Mw, Bfull.T)
    return _min_gen_eig(Z.T @ S @ Z, Z.T @ N @ Z)


def run_infsup(cfg: ExperimentConfig):
    mesh = unit_square_mesh(cfg.n0)
    meshes = [mesh, refine_uniform(mesh)]
    rows = []
    for l in cfg.orders:
        for m in meshes:
            rows.append({"pairing": "stokes", "l": l, "cells": m.num_cells,
                         "beta": infsup_stokes(m, l)})
            rows.append({"pairing": "darcy", "l": l, "cells": m.num_cells,
                         "beta": infsup_darcy(m, l)})
    return rows


# ---------------------------------------------------------------------------
# time stepping demo

def run_timestep_demo(cfg: ExperimentConfig):
    """Implicit Euler from rest under constant loads of the manufactured case."""
    mesh = unit_square_mesh(cfg.mesh_n)
    l = cfg.orders[0]
    spaces = build_spaces(mesh, l)
    phys = PhysicalParams(mu=0.5, lam=cfg.lam, alpha=1.0, S0=cfg.S, K=cfg.R, tau=1.0)
    case = manufactured_2d(ScaledParams(lam=cfg.lam, R=cfg.R, S=cfg.S))
    state = TimeState.zeros(spaces)
    mats = norm_matrices(spaces, ScaledParams(lam=cfg.lam, R=cfg.R, S=max(cfg.S, 0.0)))
    rows = []
    for k in range(1, cfg.steps + 1):
        new, _ = time_step(spaces, state, phys, f_phys=case.f, g_phys=None, flux_phys=None,
                           method=cfg.method, tol=cfg.tol, maxit=cfg.maxit)
        diff = new.ubar - state.ubar
        rows.append({"step": k, "time": k * phys.tau,
                     "norm_u": float(np.sqrt(new.ubar @ (mats["hdg_u"] @ new.ubar))),
                     "norm_p": float(np.sqrt(new.p @ (mats["l2_p"] @ new.p))),
                     "norm_w": float(np.sqrt(new.w @ (mats["w_minus"] @ new.w))),
                     "change": float(np.sqrt(diff @ (mats["hdg_u"] @ diff)))})
        state = new
    return rows


# ---------------------------------------------------------------------------
# output

RUNNERS = {
    "convergence": run_convergence,
    "robustness": run_robustness,
    "cost-elasticity": run_cost_elasticity,
    "cost-darcy": run_cost_darcy,
    "darcy": run_darcy,
    "infsup": run_infsup,
    "timestep-demo": run_timestep_demo,
}


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_csv(rows, path, columns):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])


def run_experiment(cfg: ExperimentConfig):
    """Run one experiment, write ``<experiment>.csv`` and ``<experiment>.manifest.json``."""
    os.makedirs(cfg.outdir, exist_ok=True)
    t0 = time.perf_counter()
    rows = RUNNERS[cfg.experiment](cfg)
    elapsed = time.perf_counter() - t0
    path = os.path.join(cfg.outdir, f"{cfg.experiment}.csv")
    write_csv(rows, path, SCHEMAS[cfg.experiment])
    manifest = {
        "experiment": cfg.experiment,
        "config": asdict(cfg),
        "versions": {"hdgbiot": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__, "python": platform.python_version()},
        "wall_time": elapsed,
        "rows": len(rows),
        "csv": os.path.basename(path),
    }
    if cfg.experiment == "cost-elasticity":
        manifest["hdg_crossover_order"] = crossover_order(rows)
    with open(os.path.join(cfg.outdir, f"{cfg.experiment}.manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, default=str)
    return rows, path


# ---------------------------------------------------------------------------
# command line

def _floats(text):
    return [float(t) for t in text.split(",") if t.strip()]


def _ints(text):
    return [int(t) for t in text.split(",") if t.strip()]


def build_parser():
    import argparse
    parser = argparse.ArgumentParser(prog="python -m hdgbiot",
                                     description="HDG/hybrid-mixed Biot experiments.")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("--l", type=_ints, default=[1, 2, 3],
                       help="comma separated polynomial orders (default 1,2,3)")
        p.add_argument("--levels", type=int, default=6,
                       help="meshes in the refinement sequence (convergence)")
        p.add_argument("--n0", type=int, default=2, help="coarsest mesh subdivisions")
        p.add_argument("--mesh-n", type=int, default=16,
                       help="subdivisions of the fixed mesh (2 n^2 cells)")
        p.add_argument("--lam", type=float, default=1.0)
        p.add_argument("--R", type=float, default=1.0)
        p.add_argument("--S", type=float, default=1.0)
        p.add_argument("--rinv", type=_floats, default=DEFAULT_SWEEPS["Rinv"])
        p.add_argument("--lam-sweep", type=_floats, default=DEFAULT_SWEEPS["lam"])
        p.add_argument("--S-sweep", type=_floats, default=DEFAULT_SWEEPS["S"])
        p.add_argument("--sweeps", default="Rinv,lam,S",
                       help="which sweeps to run (robustness)")
        p.add_argument("--preconditioner", default="p2",
                       help="comma separated subset of p1,p2,p1-schur,none")
        p.add_argument("--method", default="direct",
                       help="solver for convergence/timestep: direct or a preconditioner")
        p.add_argument("--tol", type=float, default=1e-10)
        p.add_argument("--maxit", type=int, default=1000)
        p.add_argument("--steps", type=int, default=5)
        p.add_argument("--outdir", default="results")
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--verbose", action="store_true")
    return parser


def config_from_args(args) -> ExperimentConfig:
    from .solver import VARIANTS
    pre = [v.strip() for v in args.preconditioner.split(",") if v.strip()]
    bad = [v for v in pre if v not in VARIANTS]
    if bad:
        raise SystemExit(f"unknown preconditioner(s): {', '.join(bad)}")
    lists = {"Rinv": args.rinv, "lam": args.lam_sweep, "S": args.S_sweep}
    names = [s.strip() for s in args.sweeps.split(",") if s.strip()]
    if any(n not in lists for n in names):
        raise SystemExit(f"unknown sweep in {args.sweeps!r}")
    return ExperimentConfig(experiment=args.experiment, orders=args.l, n0=args.n0,
                            levels=args.levels, mesh_n=args.mesh_n, lam=args.lam, R=args.R,
                            S=args.S, sweeps={n: lists[n] for n in names},
                            preconditioners=pre, method=args.method, tol=args.tol,
                            maxit=args.maxit, steps=args.steps, outdir=args.outdir,
                            threads=args.threads, verbose=args.verbose)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
    except ValueError as exc:
        raise SystemExit(str(exc))
    from threadpoolctl import threadpool_limits
    # one BLAS thread per case; parallelism comes from the case pool
    with threadpool_limits(limits=1):
        rows, path = run_experiment(cfg)
    print(f"wrote {len(rows)} rows to {path}")
    return 0
