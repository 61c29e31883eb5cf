import csv
import json

import pytest

from hdgbiot.experiments import (EXPERIMENTS, SCHEMAS, ExperimentConfig, crossover_order,
                                 elasticity_cost, main, run_experiment)
from hdgbiot.mesh import unit_square_mesh
from hdgbiot.spaces import build_spaces


def _read(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(experiment="plots")
    with pytest.raises(ValueError):
        ExperimentConfig(sweeps={"S": []})
    assert ExperimentConfig().tol == 1e-10


SMALL = {
    "convergence": dict(orders=[1], levels=2),
    "robustness": dict(orders=[1], mesh_n=2, sweeps={"S": [1e-8, 1.0]},
                       preconditioners=["p2", "p1-schur"]),
    "cost-elasticity": dict(orders=[1, 2], mesh_n=2),
    "cost-darcy": dict(orders=[1, 2], mesh_n=2),
    "darcy": dict(orders=[1], mesh_n=2),
    "infsup": dict(orders=[1], n0=1),
    "timestep-demo": dict(orders=[1], mesh_n=2, steps=2),
}


@pytest.mark.parametrize("name", EXPERIMENTS)
def test_schema_and_determinism(name, tmp_path):
    outs = []
    for k in range(2):
        cfg = ExperimentConfig(experiment=name, outdir=str(tmp_path / str(k)), **SMALL[name])
        rows, path = run_experiment(cfg)
        table = _read(path)
        assert table[0] == SCHEMAS[name]
        assert len(table) == len(rows) + 1
        manifest = json.loads((tmp_path / str(k) / f"{name}.manifest.json").read_text())
        assert manifest["config"]["experiment"] == name and "numpy" in manifest["versions"]
        outs.append([r for r in table])
    # wall times differ between runs; every other column is reproducible
    drop = {i for i, c in enumerate(SCHEMAS[name]) if c == "wall_time"}
    strip = lambda t: [[v for i, v in enumerate(r) if i not in drop] for r in t]
    assert strip(outs[0]) == strip(outs[1])


def test_dg_dof_equals_cdof():
    rows = elasticity_cost(unit_square_mesh(4), 2)
    dg = [r for r in rows if r["method"] == "DG"][0]
    hdg = [r for r in rows if r["method"] == "HDG"][0]
    assert dg["dof"] == dg["cdof"]
    s = build_spaces(unit_square_mesh(4), 2)
    assert hdg["dof"] == s.U.ndof + s.Uhat.ndof
    assert hdg["cdof"] < hdg["dof"]


def test_crossover_reported():
    rows = [r for l in (1, 2, 3) for r in elasticity_cost(unit_square_mesh(4), l)]
    l_star = crossover_order(rows)
    assert l_star is not None
    by = {(r["method"], r["l"]): r["nze"] for r in rows}
    assert by[("HDG", l_star)] < by[("DG", l_star)]


def test_cli(tmp_path, capsys):
    out = tmp_path / "res"
    assert main(["cost-darcy", "--l", "1,2", "--mesh-n", "2", "--outdir", str(out)]) == 0
    assert _read(out / "cost-darcy.csv")[0] == SCHEMAS["cost-darcy"]
    assert main(["robustness", "--l", "1", "--mesh-n", "2", "--sweeps", "S", "--S-sweep",
                 "1e-4,1", "--preconditioner", "p2", "--threads", "2", "--verbose",
                 "--outdir", str(out)]) == 0
    assert len(_read(out / "robustness.csv")) == 3
    assert len(list((out / "histories").iterdir())) == 2
    with pytest.raises(SystemExit):
        main(["robustness", "--preconditioner", "amg", "--outdir", str(out)])
