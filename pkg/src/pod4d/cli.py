"""Command line: simulate | run | eval | bench | render."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import yaml

from .bench import format_bench, run_bench
from .boxes import read_jsonl
from .config import PIPELINES, ConfigError, load_config
from .evaluation import TASKS, evaluate_run, format_report, write_report
from .pipeline import run_dataset, simulate_dataset
from .preprocess import compensate_velocity, extract_ground
from .render import TopDownView, render_topdown
from .sim import read_frame

log = logging.getLogger("pod4d")


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _emit_error("usage", message)
        sys.exit(2)


def _emit_error(kind: str, message: str, **extra) -> None:
    rec = {"error": kind, "message": message}
    rec.update(extra)
    sys.stderr.write(json.dumps(rec, sort_keys=True) + "\n")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML run configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pod4d", description=__doc__)
    parser.add_argument("--print-config", action="store_true", help="print the effective configuration and exit")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    _common(p)
    p.add_argument("--scenes", type=int, help="override dataset.scenes")

    p = sub.add_parser("run", help="run the pipeline over a dataset")
    _common(p)
    p.add_argument("dataset", type=Path)
    p.add_argument("--pipeline", choices=PIPELINES)
    p.add_argument("--horizon", type=float, help="prediction horizon in seconds")
    p.add_argument("--workers", type=int, help="worker processes (env POD4D_WORKERS as fallback)")

    p = sub.add_parser("eval", help="evaluate detections against annotations")
    _common(p)
    p.add_argument("detections", type=Path)
    p.add_argument("ground_truth", type=Path)
    p.add_argument("--task", choices=TASKS, default="standard")
    p.add_argument("--horizon", type=float)

    p = sub.add_parser("bench", help="scaling benchmark of both encoder paths")
    _common(p)
    p.add_argument("--counts", type=int, nargs="+")
    p.add_argument("--repeats", type=int)

    p = sub.add_parser("render", help="top-down image of a frame with boxes")
    _common(p)
    p.add_argument("frame", type=Path, help="frame path without extension")
    p.add_argument("--pred", type=Path, nargs="*", default=[], help="detection JSON-lines files")
    p.add_argument("--gt", type=Path, nargs="*", default=[], help="annotation JSON-lines files")
    p.add_argument("--time-tag", choices=("current", "future", "all"), default="all")
    p.add_argument("--pixels-per-meter", type=float, default=8.0)
    return parser


def _config(args):
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "pipeline", None):
        overrides["pipeline"] = args.pipeline
    if getattr(args, "horizon", None) is not None:
        overrides["horizon"] = args.horizon
    if getattr(args, "scenes", None) is not None:
        overrides["dataset"] = {"scenes": args.scenes}
    return load_config(args.config, overrides)


def _workers(args, cfg) -> int:
    if args.workers is not None:
        return args.workers
    env = os.environ.get("POD4D_WORKERS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise CliError(f"POD4D_WORKERS must be an integer, got {env!r}") from exc
    return cfg.workers


def _require_out(args) -> Path:
    if args.out is None:
        raise CliError("--out is required")
    try:
        args.out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {args.out}: {exc}") from exc
    if not os.access(args.out, os.W_OK):
        raise CliError(f"output directory {args.out} is not writable")
    return args.out


def cmd_simulate(args) -> int:
    cfg = _config(args)
    out = _require_out(args)
    manifest = simulate_dataset(cfg, out)
    print(f"wrote {len(manifest['frame_ids'])} frames to {out}")
    return 0


def cmd_run(args) -> int:
    cfg = _config(args)
    out = _require_out(args)
    if not args.dataset.is_dir():
        raise CliError(f"dataset {args.dataset} does not exist")
    manifest = run_dataset(cfg, args.dataset, out, _workers(args, cfg))
    print((out / "timings.txt").read_text(), end="")
    if manifest["failures"]:
        _emit_error("frame_failures", f"{len(manifest['failures'])} frame(s) failed",
                    failures=manifest["failures"])
        return 3
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    for p in (args.detections, args.ground_truth):
        if not p.is_dir():
            raise CliError(f"{p} is not a directory")
    report = evaluate_run(args.detections, args.ground_truth, args.task, cfg.eval, args.horizon)
    out = args.out or args.detections
    out.mkdir(parents=True, exist_ok=True)
    write_report(out / f"metrics_{args.task}", report)
    print(format_report(report), end="")
    if report["missing_detections"] or report["missing_ground_truth"]:
        _emit_error("frame_mismatch", "detection and annotation frame ids differ",
                    missing_detections=report["missing_detections"],
                    missing_ground_truth=report["missing_ground_truth"])
    return 0


def cmd_bench(args) -> int:
    cfg = _config(args)
    out = _require_out(args)
    b = cfg.bench
    report = run_bench(args.counts or b["counts"], args.repeats or int(b["repeats"]),
                       int(b["channels"]), int(b["seed"]))
    (out / "bench.json").write_text(json.dumps(report, sort_keys=True, indent=1) + "\n")
    text = format_bench(report)
    (out / "bench.txt").write_text(text)
    print(text, end="")
    return 0


def cmd_render(args) -> int:
    cfg = _config(args)
    if args.out is None:
        raise CliError("--out is required (image path)")
    if not args.frame.with_suffix(".bin").exists():
        raise CliError(f"frame {args.frame} not found")
    frame = read_frame(args.frame)
    comp = compensate_velocity(frame, extract_ground(frame, cfg.ground), method=cfg.compensation_method)

    def load(paths):
        boxes = [b for p in paths for b in read_jsonl(p)]
        if args.time_tag != "all":
            boxes = [b for b in boxes if b.time_tag == args.time_tag]
        # keep only the configured horizon for future ground truth
        return [b for b in boxes if b.time_tag == "current" or b.delta_t is None
                or abs(b.delta_t - cfg.horizon) < 1e-6]

    view = TopDownView(pixels_per_meter=args.pixels_per_meter)
    render_topdown(args.out, comp.xyz, comp.v_abs, load(args.pred), load(args.gt), view)
    print(f"wrote {args.out}")
    return 0


COMMANDS = {"simulate": cmd_simulate, "run": cmd_run, "eval": cmd_eval, "bench": cmd_bench, "render": cmd_render}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.print_config:
            cfg = _config(args) if args.command else load_config()
            print(yaml.safe_dump(cfg.to_dict(), sort_keys=True), end="")
            return 0
        if args.command is None:
            raise CliError("a subcommand is required: " + " | ".join(COMMANDS))
        return COMMANDS[args.command](args)
    except CliError as exc:
        _emit_error("cli", str(exc), command=args.command)
        return 2
    except ConfigError as exc:
        _emit_error("config", str(exc), command=args.command)
        return 2
    except Exception as exc:  # every failure leaves a machine-readable record
        _emit_error(type(exc).__name__, str(exc), command=args.command)
        return 1


if __name__ == "__main__":
    sys.exit(main())
