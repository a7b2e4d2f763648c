"""Cross-run aggregation, overhead tables and CSV/JSON rendering.

Counts are kept in instructions internally and shown in millions. The
``statistics`` module sums with exact fractions, so mean and sample
standard deviation do not depend on the order of the runs.
"""

from __future__ import annotations

import csv
import io
import json
import statistics
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Sequence

from .errors import EmptyInput, OverheadUndefined, StageMismatch
from .world import ExceptionLevel, SecurityState

DEFAULT_STAGES = ("model_init", "read_input", "inference_compute", "write_output")
MILLION = 1_000_000


@dataclass(frozen=True)
class Summary:
    mean: float
    std: float
    minimum: float
    maximum: float


def _summary(values: Sequence[float]) -> Summary:
    std = statistics.stdev(values) if len(values) > 1 else 0.0
    return Summary(float(statistics.mean(values)), float(std), min(values), max(values))


@dataclass
class StageReport:
    stages: tuple[str, ...]
    per_stage: dict[str, Summary]
    total: Summary
    runs: int
    per_context: dict = field(default_factory=dict)  # (world, el) -> mean count
    label: str = ""

    @property
    def single_run(self) -> bool:
        return self.runs == 1


def aggregate(runs: Sequence[dict], contexts: Sequence[dict] | None = None,
              label: str = "") -> StageReport:
    """Per-stage sample mean and (n-1) standard deviation across runs."""
    if not runs:
        raise EmptyInput("no runs to aggregate")
    stages = tuple(runs[0])
    for i, run in enumerate(runs[1:], 2):
        if set(run) != set(stages):
            raise StageMismatch(f"run {i} has stages {sorted(run)}, expected {sorted(stages)}")
    per_stage = {s: _summary([r[s] for r in runs]) for s in stages}
    total = _summary([sum(r.values()) for r in runs])
    ctx_means = {}
    if contexts:
        keys = sorted({k for c in contexts for k in c}, key=_ctx_order)
        ctx_means = {k: float(statistics.mean([c.get(k, 0) for c in contexts])) for k in keys}
    return StageReport(stages, per_stage, total, len(runs), ctx_means, label)


def _ctx_order(key):
    world, el = key
    return (list(SecurityState).index(world), int(el))


@dataclass(frozen=True)
class OverheadRow:
    stage: str
    realm: float
    nw: float
    percent: float


@dataclass
class OverheadReport:
    rows: list[OverheadRow]
    label: str = ""

    def row(self, stage: str) -> OverheadRow:
        for r in self.rows:
            if r.stage == stage:
                return r
        raise KeyError(stage)

    @property
    def stages(self) -> tuple[str, ...]:
        return tuple(r.stage for r in self.rows if r.stage != "total")


def overhead_percent(realm: float, nw: float) -> float:
    if nw == 0:
        raise OverheadUndefined("baseline mean is zero")
    return (realm - nw) / nw * 100.0


def round_half_up(value: float, places: int = 0) -> Decimal:
    quant = Decimal(1).scaleb(-places)
    return Decimal(repr(value)).quantize(quant, rounding=ROUND_HALF_UP)


def overhead(realm: StageReport, nw: StageReport, label: str = "") -> OverheadReport:
    if set(realm.stages) != set(nw.stages):
        raise StageMismatch(f"realm stages {realm.stages} != baseline stages {nw.stages}")
    rows = []
    for s in realm.stages:
        r, n = realm.per_stage[s].mean, nw.per_stage[s].mean
        rows.append(OverheadRow(s, r, n, overhead_percent(r, n)))
    rows.append(OverheadRow("total", realm.total.mean, nw.total.mean,
                            overhead_percent(realm.total.mean, nw.total.mean)))
    return OverheadReport(rows, label or realm.label)


# -- rendering -------------------------------------------------------------

def _m(x: float, places: int = 1) -> str:
    return str(round_half_up(x / MILLION, places))


def _overhead_header(stages) -> list[str]:
    cols = ["setting"]
    for s in list(stages) + ["total"]:
        cols += [f"{s}_r_vm", f"{s}_nw_vm", f"{s}_ovh"]
    return cols


def _csv(rows: list[list]) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerows(rows)
    return buf.getvalue().encode()


def render_overhead_csv(reports: Sequence[OverheadReport]) -> bytes:
    """Table-3-style layout: one row per setting, {R VM, NW VM, Ovh} per stage."""
    stages = reports[0].stages if reports else DEFAULT_STAGES
    rows = [_overhead_header(stages)]
    for rep in reports:
        row = [rep.label]
        for s in list(stages) + ["total"]:
            r = rep.row(s)
            row += [_m(r.realm), _m(r.nw), str(round_half_up(r.percent))]
        rows.append(row)
    return _csv(rows)


def render_stage_csv(reports: Sequence[StageReport]) -> bytes:
    rows = [["setting", "stage", "mean_m", "std_m", "mean", "std", "runs", "single_run"]]
    for rep in reports:
        for s in list(rep.stages) + ["total"]:
            sm = rep.total if s == "total" else rep.per_stage[s]
            rows.append([rep.label, s, _m(sm.mean), _m(sm.std), _num(sm.mean), _num(sm.std),
                         rep.runs, int(rep.single_run)])
    return _csv(rows)


def render_context_csv(reports: Sequence[StageReport]) -> bytes:
    rows = [["setting", "world", "el", "mean_m", "mean"]]
    for rep in reports:
        for (world, el), v in rep.per_context.items():
            rows.append([rep.label, world.value, el.name, _m(v, 2), _num(v)])
    return _csv(rows)


def _num(x: float):
    return int(x) if float(x).is_integer() else repr(float(x))


def _summary_json(s: Summary) -> dict:
    return {"mean": s.mean, "std": s.std, "min": s.minimum, "max": s.maximum}


def stage_report_to_json(rep: StageReport) -> dict:
    return {
        "type": "stage_report",
        "label": rep.label,
        "runs": rep.runs,
        "single_run": rep.single_run,
        "stages": {s: _summary_json(rep.per_stage[s]) for s in rep.stages},
        "total": _summary_json(rep.total),
        "per_context": [{"world": w.value, "el": e.name, "mean": v}
                        for (w, e), v in rep.per_context.items()],
    }


def overhead_report_to_json(rep: OverheadReport) -> dict:
    return {
        "type": "overhead_report",
        "label": rep.label,
        "rows": [{"stage": r.stage, "realm": r.realm, "nw": r.nw, "percent": r.percent,
                  "percent_1dp": float(round_half_up(r.percent, 1))} for r in rep.rows],
    }


def render_report(report, fmt: str = "csv", view: str = "stage") -> bytes:
    """Render one report or a list of reports of the same type.

    ``view`` picks the CSV table for stage reports: ``stage`` or ``context``.
    """
    reports = report if isinstance(report, (list, tuple)) else [report]
    if fmt == "json":
        docs = [overhead_report_to_json(r) if isinstance(r, OverheadReport)
                else stage_report_to_json(r) for r in reports]
        body = docs if isinstance(report, (list, tuple)) else docs[0]
        return (json.dumps(body, indent=2, sort_keys=False) + "\n").encode()
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    if reports and isinstance(reports[0], StageReport):
        return render_context_csv(reports) if view == "context" else render_stage_csv(reports)
    return render_overhead_csv(reports)


def report_from_json(doc):
    if isinstance(doc, list):
        return [report_from_json(d) for d in doc]
    if doc["type"] == "overhead_report":
        return OverheadReport([OverheadRow(r["stage"], r["realm"], r["nw"], r["percent"])
                               for r in doc["rows"]], doc["label"])
    summ = lambda d: Summary(d["mean"], d["std"], d["min"], d["max"])
    return StageReport(
        tuple(doc["stages"]),
        {s: summ(v) for s, v in doc["stages"].items()},
        summ(doc["total"]),
        doc["runs"],
        {(SecurityState(c["world"]), ExceptionLevel[c["el"]]): c["mean"] for c in doc["per_context"]},
        doc["label"],
    )


def load_report(data: bytes):
    return report_from_json(json.loads(data))

