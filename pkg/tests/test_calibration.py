import pytest

from ccabench import calibration as cal
from ccabench import reference as ref
from ccabench.sim import DeploymentKind, TimerConfig, simulate_boot, simulate_service


@pytest.fixture(scope="module")
def fit():
    return cal.fit_cost_model()


def test_fit_converges_with_sane_costs(fit):
    c = fit.cost
    assert fit.iterations < 50
    # realm exits cost several times a plain hypervisor exit
    assert c.realm_exit_cost > 3 * c.c_hyp > 0
    assert c.c_rmm_entry + c.c_rmm_exit > c.c_mon
    assert c.c_io_realm > c.c_io_nw


def test_fit_reproduces_inference_attribution(fit):
    """Handler budgets for one setting-2 inference land near the published split."""
    wl = cal.workload_for(2, fit.cost)
    r = simulate_service(wl, DeploymentKind.REALM_VM, TimerConfig(), fit.cost)
    got = r.breakdown["inference_compute"]
    rmm, hyp, mon = got[(ref.RL, ref.EL2)], got[(ref.N, ref.EL2)], got[(ref.RT, ref.EL3)]
    # the RMM dominates, as in the published breakdown
    assert rmm > hyp > mon > 0
    assert rmm == pytest.approx(41.18e6, rel=0.15)
    assert hyp == pytest.approx(16.84e6, rel=0.15)
    # the Monitor absorbs most of the least-squares slack
    assert mon == pytest.approx(5.13e6, rel=0.6)


def test_setting2_nw_total_is_exact(fit):
    p = cal.predict(2, fit.cost)
    assert abs(p.nw_total - 289.3e6) < 1e4
    assert abs(p.realm_error) <= 15


def test_invert_stage_is_tight(fit):
    for target in (0, 1, 10_000, 123_456_789):
        g, pages = cal.invert_stage(target, 3, TimerConfig(), fit.cost)
        assert cal._nw_stage_cost(g, pages, TimerConfig(), fit.cost) <= target
        assert cal._nw_stage_cost(g + 1, pages, TimerConfig(), fit.cost) > target


def test_boot_fit_matches_setting2(fit):
    b = cal.predict_boot(2, fit.cost)
    assert b["realm_boot"] == pytest.approx(7630.1e6, rel=1e-4)
    assert b["nw_boot"] == pytest.approx(788.7e6, rel=1e-4)
    assert b["realm_teardown"] == pytest.approx(619.9e6, rel=1e-4)


def test_boot_pages_follow_vm_size():
    assert cal.boot_pages(2) == 400 * 256
    pages = [cal.boot_pages(k) for k in (2, 6, 4, 5)]
    assert pages == sorted(pages)


def test_predict_boot_monotone(fit):
    costs = [simulate_boot(p, DeploymentKind.REALM_VM, fit.cost) for p in range(0, 10**6, 10**5)]
    assert all(a < b for a, b in zip(costs, costs[1:]))
