"""Command-line entry point.

Exit codes: 0 success, 1 unexpected failure, 2 input error, 3 attestation
rejection. ``CCABENCH_LOG`` sets the log level (default WARNING).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import calibration, fixtures, schemas
from .errors import (AttestationRejected, CcaError, EmptyInput, OverheadUndefined,
                     OverlappingStages, ParseError, SchemaError, StageMismatch, UnbalancedMarkers)
from .protocol import DemoConfig, run_demo
from .report import aggregate, overhead, render_report
from .sim import DeploymentKind, TimerConfig, emit_trace, simulate_service
from .trace import MarkerConfig, analyze_file, load_markers

log = logging.getLogger("ccabench")

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_REJECTED = 0, 1, 2, 3
INPUT_ERRORS = (SchemaError, ParseError, UnbalancedMarkers, OverlappingStages, StageMismatch,
                EmptyInput, OverheadUndefined, FileNotFoundError, IsADirectoryError,
                PermissionError)


def write_atomic(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _emit(data: bytes, out) -> None:
    if out:
        write_atomic(out, data)
    else:
        sys.stdout.write(data.decode())
        sys.stdout.flush()


def _hz(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if v < 1:
        raise argparse.ArgumentTypeError("timer frequency must be >= 1 Hz")
    return v


def _nonneg(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def _setting(text: str) -> int:
    v = _nonneg(text)
    if v not in calibration.ref.SETTINGS:
        raise argparse.ArgumentTypeError("setting must be 1..8")
    return v


# -- demo --------------------------------------------------------------------

def cmd_demo(args) -> int:
    cfg = DemoConfig(transport=args.transport, tamper=args.tamper,
                     max_inferences=args.max_inferences, valid_until=args.valid_until,
                     queries=args.queries, model_bytes=args.model_bytes,
                     shared_dir=args.shared_dir, update=not args.no_update, seed=args.seed)
    result = run_demo(cfg, on_step=lambda line, _: print(line, flush=True))
    print(f"outcome: {result.outcome}")
    if result.outcome == "rejected":
        return EXIT_REJECTED
    return EXIT_OK


# -- simulate ----------------------------------------------------------------

def _cost(args):
    if args.cost:
        return schemas.load_cost_model(args.cost)
    return schemas.load_cost_model(fixtures.bundled_path("cost_model"))


def cmd_simulate(args) -> int:
    timers = TimerConfig(args.el1_hz, args.el2_hz)
    cost = _cost(args)
    if args.workload:
        workload = schemas.load_workload(args.workload)
    elif args.setting:
        workload = calibration.workload_for(args.setting, cost, timers)
    else:
        raise SchemaError("--workload", "a workload file or --setting is required")
    label = args.label or (f"setting{args.setting}" if args.setting else Path(args.workload).stem)

    kinds = [DeploymentKind.REALM_VM, DeploymentKind.NORMAL_WORLD_VM] if args.both \
        else [DeploymentKind(args.kind)]
    results = {k: simulate_service(workload, k, timers, cost) for k in kinds}

    if args.emit_trace:
        first = results[kinds[0]]
        write_atomic(args.emit_trace, emit_trace(first))
        if args.both:
            nw_path = Path(args.emit_trace)
            nw_path = nw_path.with_name(nw_path.stem + "_nw" + nw_path.suffix)
            write_atomic(nw_path, emit_trace(results[DeploymentKind.NORMAL_WORLD_VM]))

    if args.both:
        reps = {k: aggregate([r.per_stage], [r.per_context], label) for k, r in results.items()}
        rep = overhead(reps[DeploymentKind.REALM_VM], reps[DeploymentKind.NORMAL_WORLD_VM], label)
        if args.format == "json":
            doc = {
                "type": "simulation",
                "label": label,
                "timers": {"el1_hz": timers.el1_hz, "el2_hz": timers.el2_hz},
                "results": {k.value: r.to_json() for k, r in results.items()},
                "overhead": json.loads(render_report(rep, "json")),
            }
            _emit((json.dumps(doc, indent=2) + "\n").encode(), args.out)
        else:
            _emit(render_report(rep, "csv"), args.out)
        return EXIT_OK

    result = results[kinds[0]]
    if args.format == "json":
        doc = {"type": "sim_result", "label": label, "kind": kinds[0].value, **result.to_json()}
        _emit((json.dumps(doc, indent=2) + "\n").encode(), args.out)
    else:
        _emit(render_report(aggregate([result.per_stage], [result.per_context], label), "csv",
                            args.view), args.out)
    return EXIT_OK


# -- analyze -----------------------------------------------------------------

def _analyze_many(paths, markers, strict, jobs):
    def one(p):
        a = analyze_file(p, markers, strict=strict)
        for err in a.stats.errors:
            print(f"warning: {p}: {err}", file=sys.stderr)
        return a
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        return list(pool.map(one, paths))


def cmd_analyze(args) -> int:
    if args.markers:
        schemas.load(args.markers, "markers")
        markers = load_markers(args.markers)
    else:
        markers = MarkerConfig()
    strict = not args.lenient
    runs = _analyze_many(args.traces, markers, strict, args.jobs)
    label = args.label or "realm"
    realm = aggregate([a.per_stage for a in runs], [a.per_context for a in runs], label)
    reports = {"stage": realm}
    if args.baseline:
        base = _analyze_many(args.baseline, markers, strict, args.jobs)
        nw = aggregate([a.per_stage for a in base], [a.per_context for a in base], "nw")
        reports["baseline"] = nw
        reports["overhead"] = overhead(realm, nw, label)

    if args.out_dir:
        out = Path(args.out_dir)
        ext = args.format
        write_atomic(out / f"stages.{ext}", render_report(realm, ext, "stage"))
        if ext == "csv":
            write_atomic(out / "contexts.csv", render_report(realm, "csv", "context"))
        if args.baseline:
            write_atomic(out / f"baseline.{ext}", render_report(reports["baseline"], ext, "stage"))
            if ext == "csv":
                write_atomic(out / "baseline_contexts.csv",
                             render_report(reports["baseline"], "csv", "context"))
            write_atomic(out / f"overhead.{ext}", render_report(reports["overhead"], ext))

    view = args.view or ("overhead" if args.baseline else "stage")
    if view == "overhead":
        if not args.baseline:
            raise SchemaError("--view", "overhead view needs --baseline")
        data = render_report(reports["overhead"], args.format)
    else:
        data = render_report(realm, args.format, view)
    _emit(data, args.out)
    return EXIT_OK


# -- fixtures / calibrate ----------------------------------------------------

def cmd_fixtures(args) -> int:
    if args.bundled:
        for p in fixtures.regenerate(args.out):
            print(p)
        return EXIT_OK
    for p in fixtures.write_fixture_set(args.out, args.setting, args.runs, args.seed, args.both):
        print(p)
    return EXIT_OK


def cmd_calibrate(args) -> int:
    timers = TimerConfig(args.el1_hz, args.el2_hz)
    fit = calibration.fit_cost_model(timers)
    if args.out:
        write_atomic(args.out, (json.dumps(fit.cost.to_dict(), indent=2) + "\n").encode())
    rows = ["setting,realm_pred_m,realm_pub_m,realm_err_pct,nw_pred_m,nw_pub_m,ovh_pred,ovh_pub"]
    for p in calibration.predict_all(fit.cost, timers):
        pub = calibration.ref.STAGE_TABLE[p.setting]["total"][2]
        rows.append(f"{p.setting},{p.realm_total / 1e6:.1f},{p.published_realm},"
                    f"{p.realm_error:.1f},{p.nw_total / 1e6:.1f},{p.published_nw},"
                    f"{p.overhead:.1f},{pub}")
    sys.stdout.write("\n".join(rows) + "\n")
    return EXIT_OK


# -- entry point -------------------------------------------------------------

def _timer_flags(p):
    p.add_argument("--el1-hz", type=_hz, default=100, help="guest kernel timer (default 100)")
    p.add_argument("--el2-hz", type=_hz, default=1000, help="hypervisor timer (default 1000)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ccabench", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("demo", help="run the eight-step deployment protocol")
    p.add_argument("--transport", choices=["inproc", "socket"], default="inproc")
    p.add_argument("--tamper", choices=["image", "token", "replay"])
    p.add_argument("--max-inferences", type=_nonneg)
    p.add_argument("--valid-until", type=_nonneg, help="last allowed query index")
    p.add_argument("--queries", type=_nonneg, default=3)
    p.add_argument("--model-bytes", type=_nonneg, default=1 << 20)
    p.add_argument("--shared-dir", type=Path, help="use a host directory as the shared channel")
    p.add_argument("--no-update", action="store_true", help="skip the model update step")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_demo)

    p = sub.add_parser("simulate", help="simulate a workload on realm and/or NW VMs")
    p.add_argument("--workload", help="workload JSON")
    p.add_argument("--setting", type=_setting, help="use a published setting (1-8) as workload")
    p.add_argument("--cost", help="cost model JSON (default: bundled calibrated model)")
    p.add_argument("--kind", choices=[k.value for k in DeploymentKind], default="realm")
    p.add_argument("--both", action="store_true", help="run both kinds and report overhead")
    p.add_argument("--emit-trace", metavar="PATH")
    p.add_argument("--format", choices=["csv", "json"], default="json")
    p.add_argument("--view", choices=["stage", "context"], default="stage")
    p.add_argument("--label")
    p.add_argument("--out")
    _timer_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="analyze marker-annotated traces")
    p.add_argument("traces", nargs="+")
    p.add_argument("--markers", help="marker config JSON")
    p.add_argument("--baseline", nargs="+", metavar="TRACE", help="NW VM traces")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    p.add_argument("--view", choices=["stage", "context", "overhead"])
    p.add_argument("--lenient", action="store_true", help="skip malformed lines with a warning")
    p.add_argument("--jobs", type=_nonneg, default=4)
    p.add_argument("--label")
    p.add_argument("--out")
    p.add_argument("--out-dir", help="write every report into this directory")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("fixtures", help="generate synthetic trace fixtures")
    p.add_argument("--out", required=True)
    p.add_argument("--setting", type=_setting, default=2)
    p.add_argument("--runs", type=_nonneg, default=25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--both", action="store_true", help="also generate NW VM runs")
    p.add_argument("--bundled", action="store_true", help="regenerate the bundled data files")
    p.set_defaults(func=cmd_fixtures)

    p = sub.add_parser("calibrate", help="fit the cost model and print held-out predictions")
    p.add_argument("--out", help="write the fitted cost model JSON here")
    _timer_flags(p)
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("CCABENCH_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except AttestationRejected as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_REJECTED
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (CcaError, ValueError) as exc:
        if isinstance(exc, ValueError) and not isinstance(exc, CcaError):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INPUT
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except Exception as exc:  # noqa: BLE001
        log.exception("unexpected failure")
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
