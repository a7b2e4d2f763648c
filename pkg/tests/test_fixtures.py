from ccabench import fixtures as fx
from ccabench import reference as ref
from ccabench.sim import DeploymentKind
from ccabench.trace import analyze_file, analyze_stream


def test_bundled_files_are_current():
    for name, data in fx.bundled_documents().items():
        assert fx.bundled_path(name).read_bytes() == data, name


def test_appendix_b_fixture_exact():
    a = analyze_file(fx.bundled_path("appendix_b"))
    assert a.per_context == fx.appendix_b_counts()
    assert a.stats.discarded > 0  # the untraced gap is really there


def test_appendix_b_seed_changes_layout_not_counts():
    a, b = fx.appendix_b_trace(seed=1), fx.appendix_b_trace(seed=2)
    assert a != b
    for data in (a, b):
        assert analyze_stream(data.splitlines()).per_context == fx.appendix_b_counts()


def test_setting1_fixture_stage_counts():
    a = analyze_file(fx.bundled_path("setting1_realm"))
    assert a.per_stage == {"model_init": 1_600_000, "read_input": 600_000,
                           "inference_compute": 98_000_000, "write_output": 1_100_000}


def test_noisy_runs_deterministic_and_spread():
    a = fx.noisy_runs(2, DeploymentKind.REALM_VM, runs=25, seed=3)
    b = fx.noisy_runs(2, DeploymentKind.REALM_VM, runs=25, seed=3)
    assert a == b
    totals = [r.total for r in a]
    assert len(set(totals)) > 1
    mean = sum(totals) / len(totals)
    assert abs(mean / (ref.STAGE_TABLE[2]["total"][0] * 1e6) - 1) < 0.15


def test_write_fixture_set(tmp_path):
    paths = fx.write_fixture_set(tmp_path, setting=2, runs=3, seed=0, both=True)
    assert len(paths) == 6
    for p in paths:
        analyze_file(p)
