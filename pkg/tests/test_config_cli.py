import hashlib
import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from cbnfem.cbn import STEPS
from cbnfem.cli import main
from cbnfem.config import build_problem, dump_config, load_config, parse_config
from cbnfem.errors import ConfigError, PlacementError
from cbnfem.metrics import read_reports
from cbnfem.runner import ComparisonError, compare_cases, run_case, sparsity_report
from cbnfem.mesh import build_hierarchy
from cbnfem.vtk import read_vtk, write_vtk

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def small_case(**over):
    data = {
        "name": "small",
        "mesh": {"dim": 2, "coarse": [2, 1], "fine": [6, 6], "size": [1.0, 1.0]},
        "material": {"matrix": {"E": 1e3, "nu": 0.3},
                     "regions": [{"shape": "ellipse", "E": 1.0, "nu": 0.3, "center": [0.5, 0.5],
                                  "semi_axes": [0.3, 0.2], "per_coarse": True}]},
        "bridge": {"kind": "corners"},
        "boundary": {"fix": [{"box": [0, None], "components": [0, 1]}],
                     "loads": [{"box": [2, 1], "component": 1, "value": -1.0}]},
        "method": "cbn",
    }
    for key, value in over.items():
        data[key] = value
    return data


def write_case(tmp_path, data, name="case.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return str(path)


# ---------------------------------------------------------------------------
# configuration


def test_shipped_configs_load():
    cfg = load_config(CONFIGS / "half_mbb.yaml")
    assert cfg.material.matrix.E == 1000.0 and isinstance(cfg.material.matrix.E, float)
    assert cfg.mesh.coarse == [4, 2]
    p = build_problem(cfg)
    assert sorted(set(p.material.young_modulus)) == [1.0, 1000.0]
    assert load_config(CONFIGS / "layered_3d.yaml").mesh.dim == 3


def test_dump_parse_roundtrip():
    cfg = parse_config(small_case())
    again = parse_config(yaml.safe_load(dump_config(cfg)))
    assert again.to_dict() == cfg.to_dict()
    assert again.instance_hash() == cfg.instance_hash()


def test_instance_hash_ignores_method_only():
    a = parse_config(small_case())
    b = parse_config(small_case(method="homog", bridge={"kind": "all"}))
    c = parse_config(small_case(mesh={"dim": 2, "coarse": [2, 1], "fine": [4, 4]}))
    assert a.instance_hash() == b.instance_hash() != c.instance_hash()


@pytest.mark.parametrize("patch, field", [
    ({"material": {"matrix": {"E": 1e3, "nu": 0.6}}}, "material.matrix.nu"),
    ({"material": {"matrix": {"E": -1.0, "nu": 0.3}}}, "material.matrix.E"),
    ({"mesh": {"dim": 2, "coarse": [2, 0], "fine": [6, 6]}}, "mesh.coarse"),
    ({"method": "magic"}, "method"),
    ({"bogus": 1}, "bogus"),
    ({"bridge": {"kind": "corners", "colour": 1}}, "colour"),
])
def test_validation_names_the_field(patch, field):
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        parse_config(small_case(**patch))


def test_region_poisson_error_names_index():
    data = small_case()
    data["material"]["regions"][0]["nu"] = 0.6
    with pytest.raises(ConfigError, match=r"material\.regions\[0\]\.nu"):
        parse_config(data)


# ---------------------------------------------------------------------------
# runner


def test_run_case_outputs_and_manifest(tmp_path):
    cfg = parse_config(small_case())
    m = run_case(cfg, tmp_path)
    assert set(m["timings"]["steps"]) == set(STEPS)
    assert all(v is not None for v in m["timings"]["steps"].values())
    for name, digest in m["outputs"].items():
        assert hashlib.sha256((tmp_path / name).read_bytes()).hexdigest() == digest
    on_disk = json.loads((tmp_path / "small_cbn_manifest.json").read_text())
    assert on_disk["instance_hash"] == cfg.instance_hash()
    rows = read_reports(tmp_path / "small_cbn.csv")
    assert float(rows[0]["r_u"]) == pytest.approx(m["effectivity"]["r_u"], rel=0)


def test_results_are_byte_stable(tmp_path):
    cfg = parse_config(small_case())
    a = run_case(cfg, tmp_path / "a")
    b = run_case(cfg, tmp_path / "b")
    assert a["outputs"] == b["outputs"]


def test_all_bridge_nodes_are_exact(tmp_path):
    m = run_case(parse_config(small_case(bridge={"kind": "all"})), tmp_path)
    assert m["effectivity"]["r_u"] <= 1e-10


def test_placement_error_before_solving(tmp_path):
    cfg = parse_config(small_case(bridge={"kind": "per_side", "k": 4}))   # spans of 2
    with pytest.raises(PlacementError):
        run_case(cfg, tmp_path)
    assert not any(tmp_path.iterdir())


def test_compare_rows_and_costs(tmp_path):
    base = small_case()
    cfgs = [parse_config(dict(base, method=m)) for m in ("cbn", "substructure", "homog")]
    rows = {r.method: r for r in compare_cases(cfgs, tmp_path, "cmp")}
    assert rows["cbn"].rhs_columns == 24
    assert rows["substructure"].rhs_columns == 2 * 24
    assert rows["homog"].rhs_columns == 3
    assert rows["substructure"].nnz > rows["cbn"].nnz
    assert rows["substructure"].r_u <= 1e-10
    assert len(read_reports(tmp_path / "cmp.csv")) == 3
    timing = read_reports(tmp_path / "cmp_timings.csv")
    assert [t["method"] for t in timing] == ["cbn", "substructure", "homog"]
    assert "seconds" not in (tmp_path / "cmp.csv").read_text()


def test_compare_single_row_and_mismatch():
    a = parse_config(small_case())
    assert len(compare_cases([a])) == 1
    b = parse_config(small_case(name="other", mesh={"dim": 2, "coarse": [2, 1], "fine": [4, 4]}))
    with pytest.raises(ComparisonError):
        compare_cases([a, b])


def test_sparsity_report_rows():
    rows = {r["method"]: r for r in sparsity_report(parse_config(small_case()))}
    assert list(rows) == ["fine", "cbn", "cbn-linear", "substructure", "homog"]
    assert rows["cbn"]["dofs"] == rows["cbn-linear"]["dofs"] == 2 * (6 + 2 * 7)     # corners plus two stations per edge
    assert rows["homog"]["dofs"] == 2 * 6
    skipped = sparsity_report(parse_config(small_case()), cap=10)
    assert "substructure" not in [r["method"] for r in skipped]


# ---------------------------------------------------------------------------
# VTK


def test_vtk_roundtrip_and_fields(tmp_path, rng):
    h = build_hierarchy(2, (2, 1), (3, 2), (1.0, 1.0))
    u = rng.normal(size=h.n_dofs)
    E = np.where(np.arange(h.n_elements) % 2, 1.0, 1e3)
    strain = rng.normal(size=(h.n_elements, 3))
    path = write_vtk(tmp_path / "f.vtk", h, u, E, strain)
    g = read_vtk(path)
    assert g.dimensions == (7, 3, 1)
    assert np.array_equal(g.point_data["displacement"][:, :2].ravel(), u)
    assert not g.point_data["displacement"][:, 2].any()
    assert np.array_equal(g.cell_data["young_modulus"], E)
    assert set(g.cell_data["young_modulus"]) == {1.0, 1e3}
    assert np.array_equal(g.cell_data["strain"], strain)
    again = write_vtk(tmp_path / "g.vtk", h, u, E, strain)
    assert path.read_bytes() == again.read_bytes()


def test_vtk_zero_field_and_size_check(tmp_path):
    h = build_hierarchy(3, (1, 1, 1), (2, 2, 2), (1.0, 1.0, 1.0))
    g = read_vtk(write_vtk(tmp_path / "z.vtk", h, np.zeros(h.n_dofs)))
    assert not g.point_data["displacement"].any() and g.cell_data == {}
    with pytest.raises(ValueError):
        write_vtk(tmp_path / "bad.vtk", h, np.zeros(5))


# ---------------------------------------------------------------------------
# command line


def test_cli_run_and_exit_codes(tmp_path, capsys):
    good = write_case(tmp_path, small_case())
    assert main(["run", "--config", good, "--out", str(tmp_path / "o")]) == 0
    assert "r_u=" in capsys.readouterr().out
    assert (tmp_path / "o" / "small_cbn.vtk").exists()

    data = small_case()
    data["material"]["regions"][0]["nu"] = 0.6
    bad = write_case(tmp_path, data, "bad.yaml")
    assert main(["run", "--config", bad, "--out", str(tmp_path / "o")]) == 2
    assert "material.regions[0].nu" in capsys.readouterr().err

    assert main(["run", "--config", str(tmp_path / "missing.yaml")]) == 2
    placement = write_case(tmp_path, small_case(bridge={"kind": "per_side", "k": 4}), "p.yaml")
    assert main(["run", "--config", placement, "--out", str(tmp_path / "o")]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["suite", "no_such_suite"])
    assert exc.value.code == 2


def test_cli_compare_properties_sparsity(tmp_path, capsys):
    good = write_case(tmp_path, small_case())
    out = str(tmp_path / "o")
    assert main(["compare", "--config", good, "--methods", "cbn,homog", "--out", out]) == 0
    text = capsys.readouterr().out
    assert text.splitlines()[0].startswith("instance,method")
    assert len(text.splitlines()) == 3
    assert main(["compare", "--config", good, "--methods", "cbn,nope", "--out", out]) == 2
    other = write_case(tmp_path, small_case(mesh={"dim": 2, "coarse": [1, 1], "fine": [6, 6]}),
                       "o.yaml")
    assert main(["compare", "--config", good, "--config", other, "--out", out]) == 2
    capsys.readouterr()
    assert main(["properties", "--config", good, "--trials", "10", "--out", out]) == 0
    assert "8/8 property checks passed" in capsys.readouterr().out
    assert main(["sparsity", "--config", good, "--out", out]) == 0
    assert "substructure" in capsys.readouterr().out
