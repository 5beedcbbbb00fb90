"""Command-line entry point.

Exit codes: 0 success, 2 validation error, 3 runtime abort.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from ..eval.report import evaluate
from ..eval.tasks import load_tasks
from ..trainer.checkpoint import load_checkpoint, read_header
from .runner import MANIFEST, comparison_rows, report_series, run_experiment, to_csv
from .spec import SpecError, load_experiment, load_matrix

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_ABORT = 3

log = logging.getLogger("archlab")

COMPARISON_COLUMNS = ("run", "arch", "objective", "mark", "tokens_seen", "final_val_loss",
                      "median_then_mean", "single_prompt_mean")


def _out_root(args, spec_out: str | None = None) -> Path:
    return Path(args.out or spec_out or "runs")


def cmd_run(args) -> int:
    spec = load_experiment(args.spec).with_overrides(args.seed_override, args.precision)
    manifest = run_experiment(spec, _out_root(args, spec.output))
    print(json.dumps({"run": manifest.name, "status": manifest.status, "hash": manifest.content_hash()}))
    return EXIT_OK


def cmd_matrix(args) -> int:
    specs = [s.with_overrides(args.seed_override, args.precision) for s in load_matrix(args.spec)]
    root = _out_root(args)
    manifests = []
    for spec in specs:
        log.info("running %s", spec.name)
        manifests.append(run_experiment(spec, root))
    table = to_csv(comparison_rows(specs, manifests), COMPARISON_COLUMNS)
    (root / "comparison.csv").write_text(table, encoding="utf-8")
    sys.stdout.write(table)
    return EXIT_OK


def cmd_report(args) -> int:
    paths = []
    for m in args.manifests:
        p = Path(m)
        paths.append(p / MANIFEST if p.is_dir() else p)
    if not paths:
        raise SpecError("report: no manifests given")
    losses, evals = report_series(paths)
    out = _out_root(args)
    out.mkdir(parents=True, exist_ok=True)
    (out / "loss_curves.csv").write_text(losses, encoding="utf-8")
    (out / "eval_bars.csv").write_text(evals, encoding="utf-8")
    print(json.dumps({"loss_curves": str(out / "loss_curves.csv"), "eval_bars": str(out / "eval_bars.csv")}))
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    if args.precision is not None and args.precision != ckpt.config.precision:
        raise SpecError("eval: --precision must match the checkpoint's precision")
    tasks = load_tasks(args.tasks)
    report = evaluate(ckpt, tasks, args.policy, args.scoring)
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_inspect(args) -> int:
    header = read_header(args.checkpoint)
    if not args.tensors:
        header = {k: v for k, v in header.items() if k != "tensors"}
        header["n_tensors"] = len(read_header(args.checkpoint)["tensors"])
    sys.stdout.write(json.dumps(header, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output root (run/matrix/report) or report file (eval)")
    common.add_argument("--seed-override", type=int, default=None, help="replace every stage seed")
    common.add_argument("--threads", type=int, default=1, help="BLAS threads (default 1)")
    common.add_argument("--precision", choices=("high", "low"), default=None, help="float64 or float32")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="archlab", description="Desk-scale architecture/objective lab.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="execute an experiment spec")
    p.add_argument("--spec", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("matrix", parents=[common], help="run every architecture/objective pair of a matrix spec")
    p.add_argument("--spec", required=True)
    p.set_defaults(func=cmd_matrix)

    p = sub.add_parser("report", parents=[common], help="emit plot-ready CSV series from run manifests")
    p.add_argument("manifests", nargs="*", help="manifest files or run directories")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint on a task file")
    p.add_argument("checkpoint")
    p.add_argument("--tasks", required=True)
    p.add_argument("--policy", choices=("median_then_mean", "single_prompt_mean"), default="median_then_mean")
    p.add_argument("--scoring", choices=("sum_logprob", "mean_logprob"), default="sum_logprob")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", parents=[common], help="print checkpoint metadata")
    p.add_argument("checkpoint")
    p.add_argument("--tensors", action="store_true", help="include the tensor index")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except SpecError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - any failure mid-run is an abort
        log.debug("abort", exc_info=True)
        print(f"aborted: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
