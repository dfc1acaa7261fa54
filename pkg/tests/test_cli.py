import csv
import io
import json
import subprocess
import sys

import jsonschema
import pytest

from iegds import cli, harness
from iegds.netmodel import bundled_case_path

from conftest import toy_dict

TRACE_HEADER = "ell,rho,rho_lo,rho_hi,violation,violated,P,wall_time"
DEVIATION_HEADER = "pipe,h,phi,w,delta,flag"
SUMMARY_HEADER = (
    "case,seed,model,r,status,eps,eps_pct,mean_abs_J,rho_bar,n_iter,violation,"
    "mean_abs_deviation,undefined_deviations,error,wall_time"
)


def write(path, obj):
    path.write_text(json.dumps(obj))
    return path


@pytest.fixture
def toy_files(tmp_path):
    write(tmp_path / "toy.json", toy_dict(H=2))
    cfg = write(tmp_path / "solve.json", {"network": "toy.json", "model": "misoc", "out": str(tmp_path / "out")})
    return tmp_path, cfg


def test_validate_exit_codes(tmp_path, capsys):
    assert cli.main(["validate", str(bundled_case_path())]) == 0
    d = toy_dict()
    d["buses"][1]["theta_min"], d["buses"][1]["theta_max"] = 0.3, -0.3
    bad = write(tmp_path / "bad.json", d)
    assert cli.main(["validate", str(bad)]) == 2
    assert "bus 2" in capsys.readouterr().err
    assert cli.main(["validate", str(tmp_path / "nope.json")]) == 3


def test_solve_toy_writes_reports(toy_files):
    tmp, cfg = toy_files
    assert cli.main(["solve", "-c", str(cfg)]) == 0
    out = tmp / "out"
    doc = json.loads((out / "outcome.json").read_text())
    jsonschema.validate(doc, harness.load_schema("outcome"))
    assert doc["status"] == "exact_gne" and doc["eps"] == 0.0
    trace = (out / "trace.csv").read_text().splitlines()
    assert trace[0] == TRACE_HEADER and len(trace) == 2
    assert trace[1].startswith("1,0.0,0.0,,")
    dev = (out / "deviations.csv").read_text().splitlines()
    assert dev[0] == DEVIATION_HEADER
    assert [r.split(",")[:2] for r in dev[1:]] == [["1->2", "0"], ["1->2", "1"], ["2->1", "0"], ["2->1", "1"]]


def test_solve_config_errors(tmp_path, capsys):
    cfg = write(tmp_path / "c.json", {"model": "misoc"})
    assert cli.main(["solve", "-c", str(cfg)]) == 2
    assert "network" in capsys.readouterr().err
    cfg = write(tmp_path / "c.json", {"network": "toy.json", "model": "pwa"})
    assert cli.main(["solve", "-c", str(cfg)]) == 2
    assert "r:" in capsys.readouterr().err
    cfg = write(tmp_path / "c.json", {"network": "toy.json", "colour": 1})
    assert cli.main(["solve", "-c", str(cfg)]) == 2
    assert cli.main(["solve", "-c", str(tmp_path / "missing.json")]) == 3
    cfg = write(tmp_path / "c.json", {"network": "missing.json"})
    assert cli.main(["solve", "-c", str(cfg)]) == 3
    (tmp_path / "broken.json").write_text("{")
    assert cli.main(["solve", "-c", str(tmp_path / "broken.json")]) == 2


def test_solve_flags_override_config(toy_files):
    tmp, cfg = toy_files
    code = cli.main(["solve", "-c", str(cfg), "--model", "pwa", "--r", "3", "--max-outer", "2", "--out", str(tmp / "o2")])
    doc = json.loads((tmp / "o2" / "outcome.json").read_text())
    assert doc["model"] == "pwa" and doc["r"] == 3 and len(doc["trace"]) <= 2
    assert code == cli.STATUS_EXIT[doc["status"]]


def test_pwa_on_cyclic_gas_graph_warns(tmp_path, capsys):
    d = toy_dict()
    for k in (3,):
        d["buses"].append(dict(d["buses"][1], id=k))
        d["gas_nodes"].append(dict(d["gas_nodes"][1], id=k))
        d["prosumers"].append(dict(d["prosumers"][1], bus_id=k, gas_node_id=k, dg_kind="none", p_dg_max=0.0))
    d["lines"].append({"from": 2, "to": 3, "B": 40.0, "G": 10.0})
    d["pipes"] += [{"from": 2, "to": 3, "c_f": 1.0, "phi_max": 5.0}, {"from": 1, "to": 3, "c_f": 1.0, "phi_max": 5.0}]
    write(tmp_path / "ring.json", d)
    cfg = write(tmp_path / "c.json", {"network": "ring.json", "model": "pwa", "r": 2, "out": str(tmp_path / "o")})
    code = cli.main(["solve", "-c", str(cfg), "--max-outer", "1"])
    assert "not a spanning tree" in capsys.readouterr().err
    assert code in (0, 4)


def test_solver_failure_exit_code(toy_files, monkeypatch):
    from iegds import dispatch

    def boom(*a, **k):
        raise dispatch.DispatchError("stage-1 solve ended with status max_iter", [])

    monkeypatch.setattr(dispatch, "run_two_stage", boom)
    assert cli.main(["solve", "-c", str(toy_files[1])]) == 5


def batch_config(tmp, name, seeds=(0, 1, 2), models=("misoc", "pwa2", "pwa3")):
    return write(
        tmp / f"{name}.json",
        {"network": "bundled:case33_20", "horizon": 1, "seeds": list(seeds), "models": list(models), "out": str(tmp / name)},
    )


@pytest.fixture(scope="module")
def two_batches(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("batch")
    codes = [cli.main(["batch", "-c", str(batch_config(tmp, n))]) for n in ("a", "b")]
    return tmp, codes


def test_batch_rows_schema_and_determinism(two_batches):
    tmp, codes = two_batches
    text = (tmp / "a" / "summary.csv").read_text()
    rows = list(csv.DictReader(io.StringIO(text)))
    assert text.splitlines()[0] == SUMMARY_HEADER
    assert len(rows) == 9 and [r["model"] for r in rows[:3]] == ["misoc", "pwa2", "pwa3"]
    doc = json.loads((tmp / "a" / "summary.json").read_text())
    jsonschema.validate(doc, harness.load_schema("summary"))
    ok = sum(r["status"] in ("exact_gne", "eps_gne") for r in rows)
    assert codes[0] == (0 if ok else 4)
    assert doc["aggregate"]["success_rate"] == ok / 9
    assert harness.strip_timing(text) == harness.strip_timing((tmp / "b" / "summary.csv").read_text())
    for case in (tmp / "a" / "cases").iterdir():
        jsonschema.validate(json.loads((case / "outcome.json").read_text()), harness.load_schema("outcome"))


def test_batch_needs_seeds(tmp_path, capsys):
    cfg = write(tmp_path / "c.json", {"network": "bundled:case33_20"})
    assert cli.main(["batch", "-c", str(cfg)]) == 2
    assert "seeds" in capsys.readouterr().err


def test_default_models():
    cfg = harness.RunConfig.from_dict({"network": "bundled:case33_20", "seeds": [1]})
    assert cfg.models == ("misoc", "pwa20", "pwa45")


def test_compare(two_batches, tmp_path, capsys):
    tmp, _ = two_batches
    a = str(tmp / "a" / "summary.json")
    b = str(tmp_path / "copy.json")
    (tmp_path / "copy.json").write_text((tmp / "a" / "summary.json").read_text())
    assert cli.main(["compare", a, b, "--out", str(tmp_path / "cmp")]) == 0
    table = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    deltas = [v for r in table if r["summary"] == b for k, v in r.items() if k.endswith("_delta") and v]
    assert deltas and all(float(v) == 0.0 for v in deltas)
    plot = json.loads((tmp_path / "cmp" / "plot.json").read_text())
    jsonschema.validate(plot, harness.load_schema("plot"))
    assert cli.main(["compare", a, str(tmp_path / "missing.json")]) == 3
    other = json.loads((tmp / "a" / "summary.json").read_text())
    other["rows"] = other["rows"][:3]
    assert cli.main(["compare", a, str(write(tmp_path / "short.json", other))]) == 2


def test_module_entry_point(toy_files):
    tmp, cfg = toy_files
    proc = subprocess.run([sys.executable, "-m", "iegds", "validate", str(tmp / "toy.json")], capture_output=True, text=True)
    assert proc.returncode == 0 and "valid" in proc.stdout
