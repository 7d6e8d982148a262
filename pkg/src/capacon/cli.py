"""Command-line entry point.

Subcommands: analyze, eval, simulate, report. Exit codes: 0 success,
1 configuration error, 2 input error, 3 invariant violation while
processing. Set CAPACON_LOG to control log verbosity.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

from .config import AnalyticsParams, load_config, load_script
from .errors import (
    CapaconError,
    ConfigError,
    ExcessiveMalformedInput,
    InvalidScript,
    MalformedRecord,
    NonMonotonicTimestamp,
    OrphanEvent,
    OutOfOrderFrame,
    UnknownTimezone,
)

log = logging.getLogger("capacon")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INPUT = 2
EXIT_INVARIANT = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="capacon",
        description="Detection-stream analytics for station productivity",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_an = sub.add_parser("analyze", help="run the full pipeline over a stream")
    p_an.add_argument("--config", required=True, help="YAML run configuration")
    p_an.add_argument("--input", required=True, nargs="+", help="detection stream file(s)")
    p_an.add_argument("--out", required=True, help="output directory")
    p_an.add_argument("--jobs", type=int, default=1, help="parallel station workers")
    p_an.add_argument("--strict", action="store_true",
                      help="abort on the first malformed or out-of-order record")
    p_an.add_argument("--debounce", type=int, default=None,
                      help="override presence debounce window (odd, >=1)")
    p_an.add_argument("--min-cycle-seconds", type=float, default=None,
                      help="override the cycle-time filter")
    p_an.add_argument("--emit-timeline", action="store_true",
                      help="also write per-frame state timeline.ndjson")
    p_an.add_argument("--emit-events", action="store_true",
                      help="also write track_events.ndjson")

    p_ev = sub.add_parser("eval", help="score predictions against ground truth")
    p_ev.add_argument("--preds", required=True, help="prediction stream file")
    p_ev.add_argument("--gts", required=True, help="ground-truth stream file")
    p_ev.add_argument("--out", required=True, help="output directory")
    p_ev.add_argument("--tag", default="model", help="model tag for eval.csv")

    p_sim = sub.add_parser("simulate", help="generate a synthetic stream + oracle")
    src = p_sim.add_mutually_exclusive_group(required=True)
    src.add_argument("--script", help="scenario script YAML")
    src.add_argument("--paper-fixture", action="store_true",
                     help="use the bundled 26-week station-C fixture")
    p_sim.add_argument("--out", required=True, help="output directory")
    p_sim.add_argument("--seed", type=int, default=None, help="noise seed override")
    p_sim.add_argument("--miss-prob", type=float, default=None,
                       help="detector miss probability override")
    p_sim.add_argument("--jitter-px", type=float, default=None,
                       help="box center jitter override (pixels)")
    p_sim.add_argument("--weeks", type=int, default=26,
                       help="fixture length in weeks (fixture only)")

    p_rep = sub.add_parser("report", help="re-render reports from a cached timeline")
    p_rep.add_argument("--from", dest="cache_dir", required=True,
                       help="directory holding timeline_cache.json")
    p_rep.add_argument("--out", required=True, help="output directory")
    p_rep.add_argument("--min-cycle-seconds", type=float, default=None)
    return parser


def _cmd_analyze(args) -> int:
    from .pipeline import analyze_run

    config = load_config(args.config)
    overrides = {}
    if args.debounce is not None:
        overrides["debounce_window"] = args.debounce
    if args.min_cycle_seconds is not None:
        overrides["min_cycle_seconds"] = args.min_cycle_seconds
    if overrides:
        analytics = dataclasses.replace(config.analytics, **overrides)
        analytics.validate()
        config = dataclasses.replace(config, analytics=analytics)
    for path in args.input:
        if not Path(path).is_file():
            log.error("input not found: %s", path)
            return EXIT_INPUT
    manifest = analyze_run(
        config, args.input, args.out,
        jobs=args.jobs, strict=args.strict,
        emit_timeline=args.emit_timeline, emit_events=args.emit_events,
    )
    log.info(
        "analyzed %d lines (%d used, %d malformed, %d out of scope)",
        manifest.lines_total, manifest.used_records,
        manifest.malformed_lines, manifest.out_of_scope_records,
    )
    return EXIT_OK


def _cmd_eval(args) -> int:
    from .evalkit import load_detection_file, map_suite, write_eval_report

    for path in (args.preds, args.gts):
        if not Path(path).is_file():
            log.error("input not found: %s", path)
            return EXIT_INPUT
    preds = load_detection_file(args.preds)
    gts = load_detection_file(args.gts)
    summary = map_suite(preds, gts)
    write_eval_report(summary, args.out, model_tag=args.tag)
    return EXIT_OK


def _cmd_simulate(args) -> int:
    import dataclasses as dc

    from .simgen import NoiseModel, paper_fixture, write_scenario

    if args.paper_fixture:
        script = paper_fixture(weeks=args.weeks)
    else:
        if not Path(args.script).is_file():
            log.error("script not found: %s", args.script)
            return EXIT_INPUT
        script = load_script(args.script)
    noise_overrides = {}
    if args.seed is not None:
        noise_overrides["seed"] = args.seed
    if args.miss_prob is not None:
        noise_overrides["miss_prob"] = args.miss_prob
    if args.jitter_px is not None:
        noise_overrides["jitter_px"] = args.jitter_px
    if noise_overrides:
        script = dc.replace(script, noise=dc.replace(script.noise, **noise_overrides))
        script.validate()
    stream_path, oracle_path = write_scenario(script, args.out)
    log.info("wrote %s and %s", stream_path, oracle_path)
    return EXIT_OK


def _cmd_report(args) -> int:
    from .pipeline import rerender_report

    cache = Path(args.cache_dir) / "timeline_cache.json"
    if not cache.is_file():
        log.error("no timeline cache at %s", cache)
        return EXIT_INPUT
    rerender_report(args.cache_dir, args.out, min_cycle_seconds=args.min_cycle_seconds)
    return EXIT_OK


_HANDLERS = {
    "analyze": _cmd_analyze,
    "eval": _cmd_eval,
    "simulate": _cmd_simulate,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("CAPACON_LOG", "WARNING").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except (ConfigError, InvalidScript, UnknownTimezone, ValueError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        log.error("input error: %s", exc)
        return EXIT_INPUT
    except OSError as exc:
        log.error("i/o error: %s", exc)
        return EXIT_INPUT
    except (
        MalformedRecord,
        ExcessiveMalformedInput,
        NonMonotonicTimestamp,
        OutOfOrderFrame,
        OrphanEvent,
    ) as exc:
        log.error("invariant violation: %s", exc)
        return EXIT_INVARIANT
    except CapaconError as exc:
        log.error("%s", exc)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
