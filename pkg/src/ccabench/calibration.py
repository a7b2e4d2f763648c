"""Fit a CostModel to the published setting-2 numbers and predict the rest.

Only setting 2 (stage level) and the per-context attribution of one
setting-2 inference are used for fitting. The other settings are held out:
their normal-world stage means are inverted to guest instruction counts and
the realm side is predicted from the fitted model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls

from . import reference as ref
from .sim import (CostModel, DeploymentKind, TimerConfig, WorkloadProfile, count_exits,
                  simulate_boot, simulate_service, simulate_teardown)

MILLION = 1_000_000
PAGES_PER_MB = 256

# Pages crossing the shared channel per inference. The published tables do
# not give these; they follow from the input formats (a 224x224 bmp is about
# 150 KiB, jpg and wav inputs are smaller, text prompts fit in one page).
ASSUMED_PAGES_IN = {1: 38, 2: 38, 3: 38, 4: 13, 5: 8, 6: 1, 7: 1, 8: 1}
ASSUMED_PAGES_OUT = {k: 1 for k in ASSUMED_PAGES_IN}

FIT_SETTING = 2


@dataclass
class CalibrationFit:
    cost: CostModel
    guest: dict[str, int]      # fitted setting-2 guest instructions per stage
    residual: float            # NNLS residual norm, in millions
    iterations: int


def _exits(guest_m: float, timers: TimerConfig, ips: int) -> int:
    return count_exits(int(round(guest_m * MILLION)), timers, ips)


def fit_cost_model(timers: TimerConfig = TimerConfig(), ips: int = 100_000_000,
                   max_iter: int = 50) -> CalibrationFit:
    """Non-negative least squares on setting 2.

    Unknowns (millions): c_hyp, c_rmm, c_mon, c_io_nw, c_io_realm - c_io_nw
    and the four guest stage sizes. Exit counts depend on the guest sizes, so
    the linear solve is repeated until the exit counts stop changing.
    """
    table = ref.STAGE_TABLE[FIT_SETTING]
    pin, pout = ASSUMED_PAGES_IN[FIT_SETTING], ASSUMED_PAGES_OUT[FIT_SETTING]
    pages = {"model_init": 0, "read_input": pin, "inference_compute": 0, "write_output": pout}
    guest = np.array([table[s][1] for s in ref.STAGES])
    prev = None
    inf = ref.STAGES.index("inference_compute")
    nw_ctx, rl_ctx = ref.PER_CONTEXT_NW, ref.PER_CONTEXT_REALM
    for it in range(1, max_iter + 1):
        exits = [_exits(g, timers, ips) for g in guest]
        rows, rhs = [], []
        for i, s in enumerate(ref.STAGES):
            g = np.eye(4)[i]
            e, p = exits[i], pages[s]
            rows.append([e, 0, 0, p, 0, *g])
            rhs.append(table[s][1])
            rows.append([e, e, e, p, p, *g])
            rhs.append(table[s][0])
        e, z, g = exits[inf], np.zeros(4), np.eye(4)[inf]
        rows += [[e, 0, 0, 0, 0, *z], [e, 0, 0, 0, 0, *z],
                 [0, e, 0, 0, 0, *z], [0, 0, e, 0, 0, *z],
                 [0, 0, 0, 0, 0, *g], [0, 0, 0, 0, 0, *g]]
        rhs += [nw_ctx[(ref.N, ref.EL2)], rl_ctx[(ref.N, ref.EL2)],
                rl_ctx[(ref.RL, ref.EL2)], rl_ctx[(ref.RT, ref.EL3)],
                nw_ctx[(ref.N, ref.EL0)] + nw_ctx[(ref.N, ref.EL1)],
                rl_ctx[(ref.RL, ref.EL0)] + rl_ctx[(ref.RL, ref.EL1)]]
        x, residual = nnls(np.array(rows, dtype=float), np.array(rhs, dtype=float))
        guest = x[5:]
        if exits == prev:
            break
        prev = exits
    c_hyp, c_rmm, c_mon, c_io, d_io = (int(round(v * MILLION)) for v in x[:5])
    boot, teardown = _fit_boot()
    cost = CostModel(
        ips=ips, c_hyp=c_hyp, c_rmm_entry=c_rmm // 2, c_rmm_exit=c_rmm - c_rmm // 2,
        c_mon=c_mon, c_io_nw=c_io, c_io_realm=c_io + d_io, **boot, **teardown,
    )
    fitted = {s: int(round(g * MILLION)) for s, g in zip(ref.STAGES, guest)}
    return CalibrationFit(cost, fitted, float(residual), it)


def _fit_boot() -> tuple[dict, dict]:
    """Boot and teardown bases from the setting-2 NW VM, per-page cost from the gap."""
    pages = boot_pages(FIT_SETTING)
    realm, nw, _ = ref.BOOT[FIT_SETTING]
    t_realm, t_nw, _ = ref.TEARDOWN[FIT_SETTING]
    base = int(round(nw * MILLION))
    t_base = int(round(t_nw * MILLION))
    boot = {
        "c_boot_base_nw": base,
        "c_boot_base_realm": base,
        "c_delegate": max(1, int(round((realm - nw) * MILLION / pages))),
    }
    teardown = {
        "c_teardown_base_nw": t_base,
        "c_teardown_base_realm": t_base,
        "c_undelegate": max(0, int(round((t_realm - t_nw) * MILLION / pages))),
    }
    return boot, teardown


def boot_pages(setting: int) -> int:
    return ref.SETTINGS[setting].vm_mb * PAGES_PER_MB


def _nw_stage_cost(guest: int, pages: int, timers: TimerConfig, cost: CostModel) -> int:
    return guest + count_exits(guest, timers, cost.ips) * cost.c_hyp + pages * cost.c_io_nw


def invert_stage(target: int, pages: int, timers: TimerConfig, cost: CostModel) -> tuple[int, int]:
    """Largest guest count whose NW stage cost does not exceed ``target``.

    Returns (guest, pages). Pages are reduced when the I/O alone would
    exceed the target.
    """
    if cost.c_io_nw:
        pages = min(pages, target // cost.c_io_nw)
    lo, hi = 0, max(0, target)
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if _nw_stage_cost(mid, pages, timers, cost) <= target:
            lo = mid
        else:
            hi = mid - 1
    return lo, pages


def nw_stage_targets(setting: int) -> dict[str, int]:
    """Published NW stage means, with the unstaged part of the total folded into inference.

    The published totals exceed the sum of the four stages (framework work
    outside the markers); that remainder is charged to inference_compute so
    the simulated NW total equals the published one.
    """
    table = ref.STAGE_TABLE[setting]
    out = {s: ref.to_instructions(table[s][1]) for s in ref.STAGES}
    rest = ref.to_instructions(table["total"][1]) - sum(out.values())
    out["inference_compute"] += max(0, rest)
    return out


def workload_for(setting: int, cost: CostModel, timers: TimerConfig = TimerConfig()) -> WorkloadProfile:
    """Workload whose simulated NW VM matches the published NW stage means and total."""
    io = {"read_input": ASSUMED_PAGES_IN[setting], "write_output": ASSUMED_PAGES_OUT[setting]}
    targets = nw_stage_targets(setting)
    kwargs = {}
    for s in ref.STAGES:
        guest, pages = invert_stage(targets[s], io.get(s, 0), timers, cost)
        kwargs[s] = guest
        if s == "read_input":
            kwargs["io_pages_in"] = pages
        elif s == "write_output":
            kwargs["io_pages_out"] = pages
    return WorkloadProfile(**kwargs, boot_pages=boot_pages(setting))


@dataclass(frozen=True)
class Prediction:
    setting: int
    realm_total: int
    nw_total: int
    published_realm: float
    published_nw: float

    @property
    def overhead(self) -> float:
        return (self.realm_total - self.nw_total) / self.nw_total * 100.0

    @property
    def realm_error(self) -> float:
        """Relative error of the predicted realm total, in percent."""
        published = self.published_realm * MILLION
        return (self.realm_total - published) / published * 100.0


def predict(setting: int, cost: CostModel, timers: TimerConfig = TimerConfig()) -> Prediction:
    wl = workload_for(setting, cost, timers)
    realm = simulate_service(wl, DeploymentKind.REALM_VM, timers, cost)
    nw = simulate_service(wl, DeploymentKind.NORMAL_WORLD_VM, timers, cost)
    r, n, _ = ref.STAGE_TABLE[setting]["total"]
    return Prediction(setting, realm.total, nw.total, r, n)


def predict_all(cost: CostModel, timers: TimerConfig = TimerConfig()) -> list[Prediction]:
    return [predict(k, cost, timers) for k in sorted(ref.SETTINGS)]


def predict_boot(setting: int, cost: CostModel) -> dict[str, int]:
    pages = boot_pages(setting)
    return {
        "realm_boot": simulate_boot(pages, DeploymentKind.REALM_VM, cost),
        "nw_boot": simulate_boot(pages, DeploymentKind.NORMAL_WORLD_VM, cost),
        "realm_teardown": simulate_teardown(pages, DeploymentKind.REALM_VM, cost),
        "nw_teardown": simulate_teardown(pages, DeploymentKind.NORMAL_WORLD_VM, cost),
    }
