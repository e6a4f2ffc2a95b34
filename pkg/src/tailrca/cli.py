"""``tailrca`` command line: simulate, diagnose, evaluate.

Exit codes: 0 success (including "no spike detected"), 2 input error,
3 insufficient data.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from contextlib import nullcontext

from . import trace_io
from .config import ConfigError, engine_from_dict, eval_config_from_dict, load_yaml, scenario_from_dict
from .engine import RcaEngine
from .errors import GapTooLarge, InsufficientBaseline, RcaError
from .evaluation import evaluate
from .rca import Diagnosis
from .simulator import generate
from .telemetry import HOST_METRICS, TARGET, MetricId, align, grid_step_ns, seconds

EXIT_OK, EXIT_INPUT, EXIT_DATA = 0, 2, 3

log = logging.getLogger("tailrca")


def render_diagnosis(d: Diagnosis) -> str:
    lines = [
        f"spike     score {d.spike.score:6.2f} sigma   onset {seconds(d.onset_ts):9.3f} s   "
        f"detected {seconds(d.detection_ts):9.3f} s   time-to-RCA {d.time_to_rca_s:5.2f} s"
        + ("   [low confidence]" if d.low_confidence else ""),
        "",
        f"{'rank':<6}{'cause':<7}{'confidence':>10}",
    ]
    for i, (c, conf) in enumerate(d.ranking, 1):
        lines.append(f"{i:<6}{str(c):<7}{conf:>10.3f}")
    lines += ["", f"{'metric':<18}{'cause':<6}{'score':>8}{'norm':>7}{'corr':>7}{'lag ms':>8}{'conf':>7}"]
    for e in sorted(d.evidence, key=lambda e: -e.confidence):
        lines.append(
            f"{str(e.metric):<18}{str(e.category):<6}{e.spike_score:>8.2f}{e.spike_score_norm:>7.3f}"
            f"{e.correlation:>7.3f}{e.best_lag_ms:>8.0f}{e.confidence:>7.3f}"
        )
    return "\n".join(lines) + "\n"


def write_timeline(streams, path, grid_hz=100):
    """Dump every stream on the common grid as CSV, one column per metric."""
    step = grid_step_ns(grid_hz)
    start = max(int(s.ts[0]) for s in streams.values())
    start = -(-start // step) * step
    end = (int(streams[TARGET].ts[-1]) // step + 1) * step
    frame = align(streams, (start, end), grid_hz)
    cols = [TARGET, *[m for m in HOST_METRICS if m in frame.hosts]]
    series = frame.series()
    ts = frame.target.timestamps()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ts_ns", *[str(m) for m in cols]])
        for i in range(len(ts)):
            w.writerow([int(ts[i]), *[repr(float(series[m].values[i])) for m in cols]])


def cmd_simulate(args) -> int:
    cfg = load_yaml(args.config)
    scenario = scenario_from_dict(cfg, seed=args.seed)
    series = generate(scenario)
    with (open(args.out, "w", encoding="utf-8", newline="\n") if args.out else nullcontext(sys.stdout)) as fh:
        n = trace_io.write_trace(series, fh)
    log.info("wrote %d records", n)
    return EXIT_OK


def cmd_diagnose(args) -> int:
    cfg = load_yaml(args.config)
    detection, rca = engine_from_dict(cfg.get("engine"))
    data = trace_io.read_trace(args.trace)
    if TARGET not in data:
        raise InsufficientBaseline(f"{args.trace}: no {TARGET} samples")
    engine = RcaEngine(detection, rca, disabled=args.ablate or ())
    result = engine.run(trace_io.replay(data.streams, speed=args.speed))
    if args.timeline:
        write_timeline(data.streams, args.timeline)
    if args.out:
        trace_io.write_diagnoses(result.diagnoses, args.out)
    if not result.diagnoses:
        print("no spike detected")
        return EXIT_OK
    for d in result.diagnoses:
        if args.format == "records":
            print(trace_io.dumps_record(trace_io.diagnosis_record(d)))
        else:
            print(render_diagnosis(d))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = load_yaml(args.config)
    overrides = {"trials": args.trials, "seed_base": args.seed, "workers": args.workers}
    if args.ablate is not None:
        overrides["ablate"] = tuple(args.ablate)
    config = eval_config_from_dict(cfg, **overrides)
    report = evaluate(config)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(report.to_json() + "\n")
    sys.stdout.write(report.to_json() + "\n" if args.format == "records" else report.render())
    return EXIT_OK


def _metric_list(text: str) -> list[MetricId]:
    try:
        return [MetricId(m.strip()) for m in text.split(",") if m.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="YAML configuration file")
    shared.add_argument("--seed", type=int, help="RNG seed (simulate) or seed base (evaluate)")
    shared.add_argument("--out", help="output path")
    shared.add_argument("--format", choices=("table", "records"), default="table")
    shared.add_argument("--workers", type=int, help="parallel trial workers")
    shared.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="tailrca", description="GPU tail-latency root cause analysis")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[shared], help="generate a labelled synthetic trace")
    s.set_defaults(func=cmd_simulate)

    d = sub.add_parser("diagnose", parents=[shared], help="detect and diagnose spikes in a trace")
    d.add_argument("trace")
    d.add_argument("--timeline", help="write the aligned 100 Hz timeline as CSV")
    d.add_argument("--speed", type=float, help="replay at this multiple of real time (default: as fast as possible)")
    d.add_argument("--ablate", type=_metric_list, help="comma-separated metrics to ignore")
    d.set_defaults(func=cmd_diagnose)

    e = sub.add_parser("evaluate", parents=[shared], help="batch accuracy / Time-to-RCA evaluation")
    e.add_argument("--trials", type=int, help="trials per category (default 17)")
    e.add_argument("--ablate", type=_metric_list, help="comma-separated metrics to disable")
    e.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (InsufficientBaseline, GapTooLarge) as exc:
        print(f"error: insufficient data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (RcaError, ConfigError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
