"""Synthetic traces and documents bundled with the package.

The traces are built, not recorded: their per-context and per-stage counts
are fixed in advance and the generator lays out lines that add up to them
exactly, with realistic interleaving (guest bursts, exits through the RMM,
Monitor and hypervisor, untraced gaps).
"""

from __future__ import annotations

import io
import json
import random
from importlib import resources
from pathlib import Path

from . import reference as ref
from .calibration import ASSUMED_PAGES_IN, ASSUMED_PAGES_OUT, fit_cost_model, workload_for
from .sim import (CostModel, DeploymentKind, SimResult, TimerConfig, WorkloadProfile,
                  simulate_service, simulate_stage)
from .trace import DEFAULT_STAGES, Edge, MarkerConfig, format_line, render_synthetic
from .world import ExceptionLevel, SecurityState

NS, RL, RT = SecurityState.NORMAL, SecurityState.REALM, SecurityState.ROOT
EL0, EL1, EL2, EL3 = ExceptionLevel

MNEMONICS = {
    (RL, EL0): ["FMLA V0.4S, V1.4S, V2.4S", "LDR Q1, [X3], #16", "ADD X0, X0, #1"],
    (RL, EL1): ["MSR DAIFCLR, #2", "LDR X1, [X2]", "ERET"],
    (RL, EL2): ["MRS X0, ESR_EL2", "STP X0, X1, [SP, #-16]!", "SMC #0"],
    (RT, EL3): ["MSR SCR_EL3, X0", "ERET"],
    (NS, EL2): ["MRS X1, CNTHP_CTL_EL2", "HVC #0", "ERET"],
    (NS, EL0): ["BL write", "SVC #0"],
}

BUNDLED = {
    "appendix_b": "appendix_b.trace",
    "setting1_realm": "setting1_realm.trace",
    "markers": "markers.json",
    "cost_model": "cost_model.json",
}


def _split(total: int, parts: int, rng: random.Random) -> list[int]:
    """``parts`` positive integers summing to ``total``."""
    if parts <= 1:
        return [total]
    cuts = sorted(rng.sample(range(1, total), parts - 1))
    return [b - a for a, b in zip([0] + cuts, cuts + [total])]


def appendix_b_counts() -> dict:
    return {k: ref.to_instructions(v) for k, v in ref.PER_CONTEXT_REALM.items()}


def appendix_b_trace(seed: int = 0, exits: int = 600, markers: MarkerConfig | None = None) -> bytes:
    """One realm inference whose per-context attribution equals the published table.

    The normal-world app (NS EL0) runs before and after the four stages;
    an untraced gap sits inside inference_compute.
    """
    rng = random.Random(seed)
    markers = markers or MarkerConfig()
    counts = appendix_b_counts()
    cycle = [(RL, EL0), (RL, EL1), (RL, EL2), (RT, EL3), (NS, EL2), (RL, EL2)]
    per_cycle = {k: cycle.count(k) for k in dict.fromkeys(cycle)}
    slices = {k: _split(counts[k], exits * per_cycle[k], rng) for k in per_cycle}
    app = _split(counts[(NS, EL0)], 2, rng)

    bounds = [0, exits // 100, exits // 100 + exits // 50, exits - exits // 100, exits]
    gap_at = (bounds[2] + bounds[3]) // 2

    out = io.StringIO()
    out.write("# one realm inference, setting 2, constructed to the published per-context counts\n")
    cum = 1_000_000_000
    pick = lambda key: rng.choice(MNEMONICS[key])

    def line(key, weight):
        nonlocal cum
        cum += weight
        out.write(format_line(cum, key[0], key[1], pick(key)) + "\n")

    def marker(stage, edge, key=(RL, EL0)):
        out.write(format_line(cum, key[0], key[1], markers.pattern_for(stage, edge)) + "\n")

    out.write(format_line(cum, NS, EL0, "NOP") + "\n")  # baseline
    line((NS, EL0), app[0])
    idx = {k: 0 for k in per_cycle}
    for s, stage in enumerate(DEFAULT_STAGES):
        marker(stage, Edge.BEGIN)
        for c in range(bounds[s], bounds[s + 1]):
            if c == gap_at:
                out.write(format_line(cum, RL, EL0, markers.toggle_pattern) + "\n")
                cum += rng.randrange(10_000, 50_000)
                out.write(format_line(cum, RL, EL0, "LDR Q1, [X3], #16") + "\n")
                cum += rng.randrange(1, 100)
                out.write(format_line(cum, RL, EL0, markers.toggle_pattern) + "\n")
                cum += 1
                out.write(format_line(cum, RL, EL0, "ADD X0, X0, #1") + "\n")  # new baseline
            for key in cycle:
                line(key, slices[key][idx[key]])
                idx[key] += 1
        marker(stage, Edge.END)
    line((NS, EL0), app[1])
    return out.getvalue().encode()


def _stage_to_target(target: int, kind: DeploymentKind, timers: TimerConfig, cost: CostModel,
                     pages: int, stage: str) -> SimResult:
    """Simulated stage whose total is exactly ``target``; the remainder lands on guest EL0."""
    per_page = cost.c_io_realm if kind is DeploymentKind.REALM_VM else cost.c_io_nw
    if per_page:
        pages = min(pages, target // per_page)
    lo, hi = 0, target
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if simulate_stage(mid, kind, timers, cost, pages, stage).total <= target:
            lo = mid
        else:
            hi = mid - 1
    frag = simulate_stage(lo, kind, timers, cost, pages, stage)
    short = target - frag.total
    if short:
        key = (kind.guest_world, EL0)
        frag.per_context[key] = frag.per_context.get(key, 0) + short
        frag.breakdown[stage][key] = frag.breakdown[stage].get(key, 0) + short
        frag.per_stage[stage] += short
    return frag


def stage_fixture(setting: int = 1, kind: DeploymentKind = DeploymentKind.REALM_VM,
                  cost: CostModel | None = None, timers: TimerConfig = TimerConfig()) -> SimResult:
    """Published per-stage means of ``setting`` as a simulated result."""
    cost = cost or fit_cost_model(timers).cost
    col = 0 if kind is DeploymentKind.REALM_VM else 1
    io_pages = {"read_input": ASSUMED_PAGES_IN[setting], "write_output": ASSUMED_PAGES_OUT[setting]}
    result = SimResult()
    for stage in ref.STAGES:
        target = ref.to_instructions(ref.STAGE_TABLE[setting][stage][col])
        result.merge(_stage_to_target(target, kind, timers, cost, io_pages.get(stage, 0), stage))
    return result


def noisy_runs(setting: int, kind: DeploymentKind, runs: int = 25, seed: int = 0,
               cost: CostModel | None = None, timers: TimerConfig = TimerConfig()) -> list[SimResult]:
    """Repeated runs with guest work perturbed by the published relative spread."""
    cost = cost or fit_cost_model(timers).cost
    rng = random.Random(seed)
    base = workload_for(setting, cost, timers)
    mean = ref.STAGE_TABLE[setting]["total"][0 if kind is DeploymentKind.REALM_VM else 1]
    rel = ref.TOTAL_STD[setting][0 if kind is DeploymentKind.REALM_VM else 1] / mean
    out = []
    for _ in range(runs):
        scaled = {s: max(0, int(round(getattr(base, s) * (1 + rng.gauss(0, rel)))))
                  for s in ref.STAGES}
        wl = WorkloadProfile(**scaled, io_pages_in=base.io_pages_in,
                             io_pages_out=base.io_pages_out, boot_pages=base.boot_pages)
        out.append(simulate_service(wl, kind, timers, cost))
    return out


def run_traces(setting: int = 2, runs: int = 25, seed: int = 0, both: bool = True,
               cost: CostModel | None = None) -> dict[str, list[bytes]]:
    """Trace files for ``runs`` realm runs and, with ``both``, as many NW runs."""
    cost = cost or fit_cost_model().cost
    kinds = [DeploymentKind.REALM_VM] + ([DeploymentKind.NORMAL_WORLD_VM] if both else [])
    out = {}
    for n, kind in enumerate(kinds):
        results = noisy_runs(setting, kind, runs, seed * 2 + n, cost)
        out[kind.value] = [render_synthetic(r, ref.STAGES) for r in results]
    return out


def write_fixture_set(directory, setting: int = 2, runs: int = 25, seed: int = 0,
                      both: bool = True) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for kind, traces in run_traces(setting, runs, seed, both).items():
        for i, data in enumerate(traces, 1):
            path = directory / f"setting{setting}_{kind}_run{i:02d}.trace"
            path.write_bytes(data)
            written.append(path)
    return written


def bundled_documents() -> dict[str, bytes]:
    """Contents of every bundled data file, regenerated from scratch."""
    cost = fit_cost_model().cost
    return {
        BUNDLED["appendix_b"]: appendix_b_trace(),
        BUNDLED["setting1_realm"]: render_synthetic(stage_fixture(1, cost=cost), ref.STAGES),
        BUNDLED["markers"]: (json.dumps(MarkerConfig().to_json(), indent=2) + "\n").encode(),
        BUNDLED["cost_model"]: (json.dumps(cost.to_dict(), indent=2) + "\n").encode(),
    }


def bundled_path(name: str) -> Path:
    """Filesystem path of a bundled data file (``appendix_b``, ``markers`` ...)."""
    return Path(str(resources.files("ccabench") / "data" / BUNDLED.get(name, name)))


def regenerate(directory=None) -> list[Path]:
    directory = Path(directory) if directory else bundled_path("markers").parent
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, data in bundled_documents().items():
        p = directory / name
        p.write_bytes(data)
        paths.append(p)
    return paths
