import csv
import io
import json

import pytest

from ccabench import fixtures as fx
from ccabench.cli import main
from ccabench.schemas import COST_MODEL, MARKERS, WORKLOAD, validate
from ccabench.errors import SchemaError


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_demo_ok(capsys):
    code, out, _ = run(capsys, "demo", "--model-bytes", "65536")
    assert code == 0
    assert sum(1 for l in out.splitlines() if l.startswith("[step ")) == 8


@pytest.mark.parametrize("mode", ["image", "token", "replay"])
def test_demo_tamper_exit_3(capsys, mode):
    code, out, _ = run(capsys, "demo", "--tamper", mode, "--model-bytes", "4096")
    assert code == 3
    assert "[step 5]" not in out and "rejected" in out


def test_demo_expiry(capsys):
    code, out, _ = run(capsys, "demo", "--max-inferences", "2", "--model-bytes", "4096")
    assert code == 0
    assert "query 3: Expired" in out and "reclaimed" in out


def test_demo_socket(capsys):
    code, out, _ = run(capsys, "demo", "--transport", "socket", "--model-bytes", "4096")
    assert code == 0 and "[step 8]" in out


def test_simulate_both_setting2(capsys):
    code, out, _ = run(capsys, "simulate", "--setting", "2", "--both", "--format", "json")
    assert code == 0
    doc = json.loads(out)
    total = [r for r in doc["overhead"]["rows"] if r["stage"] == "total"][0]
    assert 17 <= total["percent"] <= 22
    assert doc["results"]["nw"]["total"] == pytest.approx(289.3e6, rel=1e-4)


def test_simulate_trace_round_trip(capsys, tmp_path):
    trace = tmp_path / "sim.trace"
    code, out, _ = run(capsys, "simulate", "--setting", "4", "--emit-trace", str(trace))
    assert code == 0
    sim = json.loads(out)
    code, out, _ = run(capsys, "analyze", str(trace), "--format", "json")
    assert code == 0
    rep = json.loads(out)
    assert {s: v["mean"] for s, v in rep["stages"].items()} == sim["per_stage"]
    got = {(c["world"], c["el"]): c["mean"] for c in rep["per_context"]}
    want = {(c["world"], c["el"]): c["instructions"] for c in sim["per_context"]}
    assert got == want


def test_simulate_rejects_zero_timer(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--setting", "2", "--el2-hz", "0"])
    assert exc.value.code == 2


def test_simulate_schema_error_has_field_path(capsys, tmp_path):
    bad = tmp_path / "wl.json"
    bad.write_text(json.dumps({"model_init": -5}))
    code, _, err = run(capsys, "simulate", "--workload", str(bad))
    assert code == 2
    assert "$.model_init" in err
    bad.write_text(json.dumps({"modle_init": 5}))
    code, _, err = run(capsys, "simulate", "--workload", str(bad))
    assert code == 2 and "$.modle_init" in err


def test_simulate_with_files(capsys, tmp_path):
    wl = tmp_path / "wl.json"
    wl.write_text(json.dumps({"model_init": 10**6, "read_input": 10**6, "inference_compute": 10**8,
                              "write_output": 10**5, "io_pages_in": 4}))
    out = tmp_path / "out.csv"
    code, _, _ = run(capsys, "simulate", "--workload", str(wl), "--both", "--format", "csv",
                     "--cost", str(fx.bundled_path("cost_model")), "--out", str(out))
    assert code == 0
    rows = list(csv.reader(io.StringIO(out.read_text())))
    assert rows[1][0] == "wl"


def test_zero_baseline_stage_is_input_error(capsys, tmp_path):
    wl = tmp_path / "wl.json"
    wl.write_text(json.dumps({"inference_compute": 10**8}))
    code, _, err = run(capsys, "simulate", "--workload", str(wl), "--both")
    assert code == 2 and "baseline mean is zero" in err


def test_analyze_appendix_b_context_csv(capsys):
    code, out, _ = run(capsys, "analyze", str(fx.bundled_path("appendix_b")), "--view", "context")
    assert code == 0
    rows = {(r["world"], r["el"]): r["mean_m"] for r in csv.DictReader(io.StringIO(out))}
    assert rows == {("Realm", "EL0"): "240.14", ("Realm", "EL1"): "24.68",
                    ("Realm", "EL2"): "41.18", ("Normal", "EL2"): "16.84",
                    ("Root", "EL3"): "5.13", ("Normal", "EL0"): "0.04"}


def test_analyze_strict_and_lenient(capsys, tmp_path):
    trace = tmp_path / "bad.trace"
    lines = fx.bundled_path("setting1_realm").read_text().splitlines()
    lines.insert(3, "this is not a trace line")
    trace.write_text("\n".join(lines) + "\n")
    code, _, err = run(capsys, "analyze", str(trace))
    assert code == 2 and "line 4" in err
    code, out, err = run(capsys, "analyze", str(trace), "--lenient")
    assert code == 0 and "warning" in err


def test_analyze_25_runs_with_baseline(capsys, tmp_path):
    code, _, _ = run(capsys, "fixtures", "--out", str(tmp_path), "--runs", "25", "--both",
                     "--seed", "7")
    assert code == 0
    realm = sorted(str(p) for p in tmp_path.glob("*_realm_*.trace"))
    nw = sorted(str(p) for p in tmp_path.glob("*_nw_*.trace"))
    assert len(realm) == len(nw) == 25
    code, out, _ = run(capsys, "analyze", *realm, "--view", "stage")
    rows = list(csv.DictReader(io.StringIO(out)))
    assert all(r["runs"] == "25" and float(r["std"]) > 0 for r in rows)
    outdir = tmp_path / "reports"
    code, out, _ = run(capsys, "analyze", *realm, "--baseline", *nw, "--out-dir", str(outdir))
    assert code == 0
    row = list(csv.DictReader(io.StringIO(out)))[0]
    assert 17 <= int(row["total_ovh"]) <= 22
    assert sorted(p.name for p in outdir.iterdir()) == [
        "baseline.csv", "baseline_contexts.csv", "contexts.csv", "overhead.csv", "stages.csv"]


def test_fixtures_deterministic(capsys, tmp_path):
    run(capsys, "fixtures", "--out", str(tmp_path / "a"), "--runs", "2", "--seed", "5")
    run(capsys, "fixtures", "--out", str(tmp_path / "b"), "--runs", "2", "--seed", "5")
    for p in (tmp_path / "a").iterdir():
        assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()


def test_missing_file_exit_2(capsys, tmp_path):
    code, _, _ = run(capsys, "analyze", str(tmp_path / "nope.trace"))
    assert code == 2


def test_calibrate(capsys, tmp_path):
    out = tmp_path / "cost.json"
    code, text, _ = run(capsys, "calibrate", "--out", str(out))
    assert code == 0
    assert json.loads(out.read_text()) == json.loads(fx.bundled_path("cost_model").read_text())
    assert len(text.splitlines()) == 9


def test_schema_docs_match_code():
    from pathlib import Path
    docs = Path(__file__).resolve().parents[1] / "docs" / "schemas"
    for name, schema in [("workload", WORKLOAD), ("cost_model", COST_MODEL), ("markers", MARKERS)]:
        assert json.loads((docs / f"{name}.schema.json").read_text()) == schema


def test_markers_schema():
    validate({"toggle_pattern": "HLT 0x1", "stage_patterns": {"A": ["s", "begin"]}}, "markers")
    with pytest.raises(SchemaError):
        validate({"stage_patterns": {"A": ["s", "middle"]}}, "markers")
