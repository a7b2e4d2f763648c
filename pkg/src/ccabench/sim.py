"""Deterministic instruction-count simulator for realm vs normal-world VMs.

Guest work advances a virtual clock at ``ips`` instructions per second. Two
timers (guest kernel at EL1, hypervisor at EL2) tick on that clock and each
tick forces an exit. A normal-world VM exit is handled by the hypervisor
alone; a realm exit passes through the RMM (entry and exit paths), the
Monitor's world switch and the hypervisor. Handler instructions do not
advance the virtual clock.

All cost parameters are integer instruction counts, so every result is an
exact integer and ``total == sum(per_stage) == sum(per_context)`` holds
without rounding slack.
"""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field, fields

from .world import ExceptionLevel, SecurityState

STAGES = ("model_init", "read_input", "inference_compute", "write_output")

EL0, EL1, EL2, EL3 = ExceptionLevel
NORMAL, REALM, ROOT = SecurityState.NORMAL, SecurityState.REALM, SecurityState.ROOT


class DeploymentKind(enum.Enum):
    REALM_VM = "realm"
    NORMAL_WORLD_VM = "nw"

    @property
    def guest_world(self) -> SecurityState:
        return REALM if self is DeploymentKind.REALM_VM else NORMAL


@dataclass(frozen=True)
class TimerConfig:
    el1_hz: int = 100    # guest kernel tick
    el2_hz: int = 1000   # hypervisor tick

    def __post_init__(self):
        for name in ("el1_hz", "el2_hz"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1 Hz")


@dataclass(frozen=True)
class WorkloadProfile:
    model_init: int = 0
    read_input: int = 0
    inference_compute: int = 0
    write_output: int = 0
    io_pages_in: int = 0
    io_pages_out: int = 0
    boot_pages: int = 0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be non-negative")

    def stage_instructions(self) -> dict[str, int]:
        return {s: getattr(self, s) for s in STAGES}

    def stage_io_pages(self) -> dict[str, int]:
        return {"model_init": 0, "read_input": self.io_pages_in,
                "inference_compute": 0, "write_output": self.io_pages_out}


@dataclass(frozen=True)
class CostModel:
    ips: int = 100_000_000
    c_hyp: int = 0
    c_rmm_entry: int = 0
    c_rmm_exit: int = 0
    c_mon: int = 0
    c_io_nw: int = 0
    c_io_realm: int = 0
    c_delegate: int = 1
    c_undelegate: int = 1
    c_boot_base_nw: int = 0
    c_boot_base_realm: int = 0
    c_teardown_base_nw: int = 0
    c_teardown_base_realm: int = 0
    el0_percent: int = 90

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be non-negative")
        if self.ips < 1:
            raise ValueError("ips must be positive")
        if self.c_io_realm < self.c_io_nw:
            raise ValueError("c_io_realm must be >= c_io_nw")
        if self.c_delegate < 1:
            raise ValueError("c_delegate must be positive")
        if self.el0_percent > 100:
            raise ValueError("el0_percent must be within 0..100")

    @property
    def realm_exit_cost(self) -> int:
        return self.c_rmm_entry + self.c_rmm_exit + self.c_hyp + self.c_mon

    def to_dict(self) -> dict:
        return asdict(self)


Context = tuple[SecurityState, ExceptionLevel]


@dataclass
class SimResult:
    per_stage: dict[str, int] = field(default_factory=dict)
    per_context: dict[Context, int] = field(default_factory=dict)
    exits: int = 0
    # stage -> context -> count; optional, only used to lay out emitted traces
    breakdown: dict[str, dict[Context, int]] = field(default_factory=dict, compare=False)

    @property
    def total(self) -> int:
        return sum(self.per_stage.values())

    def merge(self, other: "SimResult") -> "SimResult":
        for k, v in other.per_stage.items():
            self.per_stage[k] = self.per_stage.get(k, 0) + v
        for k, v in other.per_context.items():
            self.per_context[k] = self.per_context.get(k, 0) + v
        for stage, ctx in other.breakdown.items():
            mine = self.breakdown.setdefault(stage, {})
            for k, v in ctx.items():
                mine[k] = mine.get(k, 0) + v
        self.exits += other.exits
        return self

    def stage_context_matrix(self, stages) -> dict[str, dict[Context, int]]:
        """A stage x context table whose margins are per_stage and per_context.

        Uses the recorded breakdown when it is consistent, otherwise fills the
        table with the northwest-corner rule.
        """
        if self.breakdown and _margins_match(self.breakdown, self.per_stage, self.per_context):
            return {s: dict(self.breakdown.get(s, {})) for s in stages}
        remaining = [[k, v] for k, v in sorted(self.per_context.items(), key=_ctx_key) if v]
        table: dict[str, dict[Context, int]] = {}
        i = 0
        for s in stages:
            need = self.per_stage.get(s, 0)
            row = table.setdefault(s, {})
            while need:
                key, avail = remaining[i]
                take = min(need, avail)
                row[key] = row.get(key, 0) + take
                need -= take
                remaining[i][1] -= take
                if remaining[i][1] == 0:
                    i += 1
        return table

    def to_json(self) -> dict:
        return {
            "per_stage": dict(self.per_stage),
            "per_context": [
                {"world": w.value, "el": e.name, "instructions": n}
                for (w, e), n in sorted(self.per_context.items(), key=_ctx_key)
            ],
            "total": self.total,
            "exits": self.exits,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "SimResult":
        ctx = {(SecurityState(c["world"]), ExceptionLevel[c["el"]]): c["instructions"]
               for c in doc["per_context"]}
        return cls(dict(doc["per_stage"]), ctx, doc.get("exits", 0))


def _margins_match(breakdown, per_stage, per_context) -> bool:
    rows = {s: sum(c.values()) for s, c in breakdown.items()}
    cols: dict = {}
    for c in breakdown.values():
        for k, v in c.items():
            cols[k] = cols.get(k, 0) + v
    nz = lambda d: {k: v for k, v in d.items() if v}
    return nz(rows) == nz(per_stage) and nz(cols) == nz(per_context)


def _ctx_key(item):
    (world, el), _ = item
    return (list(SecurityState).index(world), int(el))


def _add(ctx: dict, key: Context, n: int) -> None:
    if n:
        ctx[key] = ctx.get(key, 0) + n


def count_exits(guest_instructions: int, timers: TimerConfig, ips: int) -> int:
    if ips <= 0:
        raise ValueError("ips must be positive")
    # floor(seconds * hz) without float error
    return (guest_instructions * timers.el1_hz) // ips + (guest_instructions * timers.el2_hz) // ips


def simulate_io(pages: int, kind: DeploymentKind, cost: CostModel) -> int:
    per_page = cost.c_io_realm if kind is DeploymentKind.REALM_VM else cost.c_io_nw
    return pages * per_page


def simulate_stage(guest_instructions: int, kind: DeploymentKind, timers: TimerConfig,
                   cost: CostModel, io_pages: int = 0, stage: str = "stage") -> SimResult:
    world = kind.guest_world
    ctx: dict[Context, int] = {}
    el0 = guest_instructions * cost.el0_percent // 100
    _add(ctx, (world, EL0), el0)
    _add(ctx, (world, EL1), guest_instructions - el0)

    exits = count_exits(guest_instructions, timers, cost.ips)
    _add(ctx, (NORMAL, EL2), exits * cost.c_hyp)
    if kind is DeploymentKind.REALM_VM:
        _add(ctx, (REALM, EL2), exits * (cost.c_rmm_entry + cost.c_rmm_exit))
        _add(ctx, (ROOT, EL3), exits * cost.c_mon)

    # the normal-world I/O path is common; realms pay the extra through the RMM
    _add(ctx, (NORMAL, EL2), io_pages * cost.c_io_nw)
    if kind is DeploymentKind.REALM_VM:
        _add(ctx, (REALM, EL2), io_pages * (cost.c_io_realm - cost.c_io_nw))

    return SimResult({stage: sum(ctx.values())}, ctx, exits, {stage: dict(ctx)})


def simulate_service(workload: WorkloadProfile, kind: DeploymentKind, timers: TimerConfig,
                     cost: CostModel) -> SimResult:
    result = SimResult()
    io = workload.stage_io_pages()
    for stage, guest in workload.stage_instructions().items():
        result.merge(simulate_stage(guest, kind, timers, cost, io[stage], stage))
    return result


def simulate_boot(boot_pages: int, kind: DeploymentKind, cost: CostModel) -> int:
    if kind is DeploymentKind.REALM_VM:
        return cost.c_boot_base_realm + boot_pages * cost.c_delegate
    return cost.c_boot_base_nw


def simulate_teardown(pages: int, kind: DeploymentKind, cost: CostModel) -> int:
    if kind is DeploymentKind.REALM_VM:
        return cost.c_teardown_base_realm + pages * cost.c_undelegate
    return cost.c_teardown_base_nw


def emit_trace(result: SimResult, stages=STAGES, markers=None, start: int = 0) -> bytes:
    """Render a result as a marker-annotated trace (see ``ccabench.trace``)."""
    from .trace import render_synthetic

    return render_synthetic(result, stages, markers, start)
