"""Parser and analyzer for marker-annotated instruction traces.

Line grammar (one traced instruction per line, ``#`` starts a comment)::

    <cumulative:decimal> <world:NS|S|RL|RT> <EL0..EL3> <pc:hex> <mnemonic ...>

``cumulative`` is the core's global instruction counter when the line was
printed. Traces may be sampled: an instruction line stands for every
instruction executed since the previous kept instruction line, so its
weight is the counter delta. The first instruction after tracing is
(re-)enabled only sets the baseline and weighs nothing.

Mnemonics are compared after upper-casing and collapsing whitespace. The
toggle mnemonic (``HLT 0x1337``) flips tracing on and off; stage markers
(``MOV X8, #0xCA01`` ...) open and close measurement stages.
"""

from __future__ import annotations

import enum
import io
import json
import logging
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

from .errors import OverlappingStages, ParseError, StageMismatch, UnbalancedMarkers
from .world import ExceptionLevel, SecurityState, valid_context

log = logging.getLogger(__name__)

WORLD_TOKENS = {
    "NS": SecurityState.NORMAL,
    "S": SecurityState.SECURE,
    "RL": SecurityState.REALM,
    "RT": SecurityState.ROOT,
}
TOKEN_OF_WORLD = {v: k for k, v in WORLD_TOKENS.items()}

DEFAULT_STAGES = ("model_init", "read_input", "inference_compute", "write_output")


def normalize_mnemonic(text: str) -> str:
    return " ".join(text.upper().split())


class Edge(enum.Enum):
    BEGIN = "begin"
    END = "end"


class EventKind(enum.Enum):
    INSTRUCTION = "instruction"
    TOGGLE = "toggle"
    STAGE = "stage"


@dataclass(frozen=True)
class MarkerConfig:
    toggle_pattern: str = "HLT 0x1337"
    stage_patterns: dict = field(default_factory=lambda: default_stage_patterns())
    initially_enabled: bool = True

    def __post_init__(self):
        toggle = normalize_mnemonic(self.toggle_pattern)
        seen = {}
        for pattern, (stage, edge) in self.stage_patterns.items():
            key = normalize_mnemonic(pattern)
            if key == toggle:
                raise ValueError(f"stage pattern {pattern!r} collides with the toggle pattern")
            if key in seen:
                raise ValueError(f"stage pattern {pattern!r} defined twice")
            seen[key] = (stage, Edge(edge))
        edges = {}
        for stage, edge in seen.values():
            edges.setdefault(stage, set()).add(edge)
        for stage, got in edges.items():
            if got != {Edge.BEGIN, Edge.END}:
                raise ValueError(f"stage {stage!r} needs exactly one begin and one end pattern")
        object.__setattr__(self, "_toggle", toggle)
        object.__setattr__(self, "_stages", seen)

    def classify(self, mnemonic: str):
        key = normalize_mnemonic(mnemonic)
        if key == self._toggle:
            return EventKind.TOGGLE, None
        hit = self._stages.get(key)
        if hit is not None:
            return EventKind.STAGE, hit
        return EventKind.INSTRUCTION, None

    @property
    def stages(self) -> tuple[str, ...]:
        order = []
        for stage, _ in self._stages.values():
            if stage not in order:
                order.append(stage)
        return tuple(order)

    def pattern_for(self, stage: str, edge: Edge) -> str:
        for pattern, (s, e) in self.stage_patterns.items():
            if s == stage and Edge(e) is edge:
                return pattern
        raise KeyError((stage, edge))

    @classmethod
    def from_json(cls, doc: dict) -> "MarkerConfig":
        stages = {p: (v[0], v[1]) for p, v in doc.get("stage_patterns", {}).items()}
        return cls(doc.get("toggle_pattern", "HLT 0x1337"),
                   stages or default_stage_patterns(),
                   bool(doc.get("initially_enabled", True)))

    def to_json(self) -> dict:
        return {
            "toggle_pattern": self.toggle_pattern,
            "stage_patterns": {p: [s, Edge(e).value] for p, (s, e) in self.stage_patterns.items()},
            "initially_enabled": self.initially_enabled,
        }


def default_stage_patterns() -> dict:
    out = {}
    for i, stage in enumerate(DEFAULT_STAGES):
        out[f"MOV X8, #0xCA{2 * i + 1:02X}"] = (stage, "begin")
        out[f"MOV X8, #0xCA{2 * i + 2:02X}"] = (stage, "end")
    return out


@dataclass(frozen=True)
class TraceEvent:
    cumulative: int
    world: SecurityState
    el: ExceptionLevel
    kind: EventKind
    stage: Optional[str] = None
    edge: Optional[Edge] = None
    pc: int = 0
    line_no: int = 0


@dataclass
class ParseStats:
    lines: int = 0
    events: int = 0
    discarded: int = 0
    errors: list = field(default_factory=list)


def _parse_line(raw: str, line_no: int, markers: MarkerConfig) -> Optional[TraceEvent]:
    text = raw.strip()
    if not text or text.startswith("#"):
        return None
    parts = text.split(None, 4)
    if len(parts) < 5:
        raise ParseError(line_no, f"expected 5 fields, got {len(parts)}")
    cum_s, world_s, el_s, pc_s, mnemonic = parts
    if not cum_s.isdigit():
        raise ParseError(line_no, f"bad cumulative counter {cum_s!r}")
    world = WORLD_TOKENS.get(world_s.upper())
    if world is None:
        raise ParseError(line_no, f"bad world {world_s!r}")
    try:
        el = ExceptionLevel[el_s.upper()]
    except KeyError:
        raise ParseError(line_no, f"bad exception level {el_s!r}") from None
    if not valid_context(world, el):
        raise ParseError(line_no, f"{world_s} cannot run at {el_s}")
    try:
        pc = int(pc_s, 16)
    except ValueError:
        raise ParseError(line_no, f"bad pc {pc_s!r}") from None
    kind, hit = markers.classify(mnemonic)
    stage, edge = hit if hit else (None, None)
    return TraceEvent(int(cum_s), world, el, kind, stage, edge, pc, line_no)


def iter_trace(lines: Iterable, markers: MarkerConfig | None = None, strict: bool = True,
               stats: ParseStats | None = None) -> Iterator[TraceEvent]:
    """Stream events from text or byte lines; memory use is independent of trace length.

    Toggle events are always yielded; instruction and stage events only
    while tracing is enabled.
    """
    markers = markers or MarkerConfig()
    stats = stats if stats is not None else ParseStats()
    enabled = markers.initially_enabled
    last_cum = -1
    last_instr = -1
    for line_no, raw in enumerate(lines, 1):
        stats.lines += 1
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8", errors="replace")
        try:
            ev = _parse_line(raw, line_no, markers)
            if ev is None:
                continue
            if ev.cumulative < last_cum:
                raise ParseError(line_no, f"counter went backwards ({ev.cumulative} < {last_cum})")
            if ev.kind is EventKind.INSTRUCTION and ev.cumulative <= last_instr:
                raise ParseError(line_no, f"counter not strictly increasing ({ev.cumulative})")
        except ParseError as exc:
            if strict:
                raise
            stats.errors.append(exc)
            log.warning("skipping %s", exc)
            continue
        last_cum = ev.cumulative
        if ev.kind is EventKind.INSTRUCTION:
            last_instr = ev.cumulative
        if ev.kind is EventKind.TOGGLE:
            enabled = not enabled
        elif not enabled:
            stats.discarded += 1
            continue
        stats.events += 1
        yield ev


def parse_trace(data, markers: MarkerConfig | None = None, strict: bool = True,
                stats: ParseStats | None = None) -> list[TraceEvent]:
    if isinstance(data, (bytes, bytearray)):
        data = io.BytesIO(data)
    elif isinstance(data, str):
        data = io.StringIO(data)
    return list(iter_trace(data, markers, strict, stats))


class Analyzer:
    """Single-pass stage segmentation and (world, EL) attribution."""

    def __init__(self, expected_stages: Iterable[str] | None = None):
        self.expected = tuple(expected_stages) if expected_stages is not None else None
        self.per_context: dict = {}
        self.per_stage: dict[str, int] = {}
        self._seen: set[str] = set()
        self._open: Optional[str] = None
        self._prev_any: Optional[int] = None
        self._prev_instr: Optional[int] = None

    def feed(self, ev: TraceEvent) -> None:
        if ev.kind is EventKind.TOGGLE:
            # counter keeps running while tracing is off; restart both baselines
            self._prev_any = None
            self._prev_instr = None
            return
        if self._prev_any is not None and self._open is not None:
            self.per_stage[self._open] += ev.cumulative - self._prev_any
        self._prev_any = ev.cumulative

        if ev.kind is EventKind.INSTRUCTION:
            if self._prev_instr is not None:
                delta = ev.cumulative - self._prev_instr
                if delta:
                    key = (ev.world, ev.el)
                    self.per_context[key] = self.per_context.get(key, 0) + delta
            self._prev_instr = ev.cumulative
            return

        stage = ev.stage
        if self.expected is not None and stage not in self.expected:
            raise StageMismatch(f"line {ev.line_no}: unexpected stage {stage!r}")
        if ev.edge is Edge.BEGIN:
            if self._open is not None:
                raise OverlappingStages(
                    f"line {ev.line_no}: {stage!r} begins inside {self._open!r}")
            self._open = stage
            self.per_stage.setdefault(stage, 0)
            self._seen.add(stage)
        else:
            if self._open != stage:
                raise UnbalancedMarkers(f"line {ev.line_no}: end of {stage!r} without begin")
            self._open = None

    def finish_stages(self) -> dict[str, int]:
        if self._open is not None:
            raise UnbalancedMarkers(f"stage {self._open!r} never ends")
        if self.expected is None:
            return dict(self.per_stage)
        missing = [s for s in self.expected if s not in self._seen]
        if missing:
            raise UnbalancedMarkers(f"no markers for {', '.join(missing)}")
        return {s: self.per_stage[s] for s in self.expected}


def segment(events: Iterable[TraceEvent], expected_stages: Iterable[str] | None = None) -> dict[str, int]:
    """Instruction count per stage: End counter minus Begin counter, less untraced gaps."""
    a = Analyzer(expected_stages)
    for ev in events:
        a.feed(ev)
    return a.finish_stages()


def attribute(events: Iterable[TraceEvent]) -> dict:
    a = Analyzer()
    for ev in events:
        if ev.kind is not EventKind.STAGE:
            a.feed(ev)
    return dict(a.per_context)


@dataclass
class TraceAnalysis:
    per_stage: dict[str, int]
    per_context: dict
    stats: ParseStats


def analyze_stream(lines: Iterable, markers: MarkerConfig | None = None,
                   expected_stages: Iterable[str] | None = None, strict: bool = True,
                   require_stages: bool = True) -> TraceAnalysis:
    """Parse and analyze in one pass over the lines."""
    markers = markers or MarkerConfig()
    stats = ParseStats()
    a = Analyzer(expected_stages if expected_stages is not None else markers.stages)
    for ev in iter_trace(lines, markers, strict, stats):
        a.feed(ev)
    stages = a.finish_stages() if require_stages else dict(a.per_stage)
    return TraceAnalysis(stages, dict(a.per_context), stats)


def analyze_file(path, markers=None, expected_stages=None, strict=True,
                 require_stages=True) -> TraceAnalysis:
    with open(path, "rb") as fh:
        return analyze_stream(fh, markers, expected_stages, strict, require_stages)


# -- writing ---------------------------------------------------------------

_PC_BASE = {
    SecurityState.NORMAL: 0xFFFF800008000000,
    SecurityState.SECURE: 0x0E000000,
    SecurityState.REALM: 0x00400000,
    SecurityState.ROOT: 0x04000000,
}


def format_line(cumulative: int, world: SecurityState, el: ExceptionLevel, mnemonic: str,
                pc: int | None = None) -> str:
    if pc is None:
        pc = _PC_BASE[world] + 0x1000 * int(el) + (cumulative % 0x400) * 4
    return f"{cumulative} {TOKEN_OF_WORLD[world]} {el.name} {pc:016x} {mnemonic}"


_FILLER = {
    ExceptionLevel.EL0: "ADD X0, X0, #1",
    ExceptionLevel.EL1: "LDR X1, [X2]",
    ExceptionLevel.EL2: "ERET",
    ExceptionLevel.EL3: "SMC #0",
}


def render_synthetic(result, stages=DEFAULT_STAGES, markers: MarkerConfig | None = None,
                     start: int = 0) -> bytes:
    """Emit a trace whose analysis reproduces ``result`` exactly.

    One baseline line, then per stage: a Begin marker, one sampled line per
    context with non-zero work, an End marker. Markers sit on the counter
    value of the preceding instruction so they add nothing.
    """
    markers = markers or MarkerConfig()
    table = result.stage_context_matrix(stages)
    cum = start
    out = io.StringIO()
    out.write("# synthetic trace: cumulative world el pc mnemonic\n")
    out.write(format_line(cum, SecurityState.NORMAL, ExceptionLevel.EL2, "NOP") + "\n")
    order = sorted({k for row in table.values() for k in row},
                   key=lambda k: (list(SecurityState).index(k[0]), int(k[1])))
    for stage in stages:
        row = table.get(stage, {})
        guest = next((k for k in order if row.get(k) and k[1] <= ExceptionLevel.EL1), None)
        mworld, mel = guest or (SecurityState.NORMAL, ExceptionLevel.EL0)
        out.write(format_line(cum, mworld, mel, markers.pattern_for(stage, Edge.BEGIN)) + "\n")
        for key in order:
            n = row.get(key, 0)
            if n:
                cum += n
                out.write(format_line(cum, key[0], key[1], _FILLER[key[1]]) + "\n")
        out.write(format_line(cum, mworld, mel, markers.pattern_for(stage, Edge.END)) + "\n")
    return out.getvalue().encode()


def load_markers(path) -> MarkerConfig:
    with open(path) as fh:
        return MarkerConfig.from_json(json.load(fh))
