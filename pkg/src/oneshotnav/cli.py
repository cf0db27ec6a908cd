"""``oneshotnav`` command line.

Every subcommand reads the same JSON experiment config (see docs/config.md),
writes its artifacts under the output directory and prints a short
comma-separated summary on stdout. Failures exit with status 1 and one line
on stderr.
"""

import argparse
import csv
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .experiment import (
    ExperimentConfig, ExperimentError, Workspace, ablation_table, plot_trace_file, run_ablation,
    score_trace,
)
from .mcn.config import ABLATIONS
from .mcn.io import ModelFormatError
from .pipeline import PairStoreError
from .sim import CourseError, DriveError, RunFormatError

log = logging.getLogger("oneshotnav")

EXPECTED_ERRORS = (ExperimentError, CourseError, RunFormatError, PairStoreError, ModelFormatError, DriveError,
                   ValueError, KeyError, OSError)


def _summary(rows):
    w = csv.writer(sys.stdout, lineterminator="\n")
    for r in rows:
        w.writerow(r)


def _courses(ws, args, default="all"):
    return [ws.check_course(c) for c in args.course] if args.course else ws.config.course_ids(default)


def cmd_gen_course(ws, args):
    _summary([("course", "path", "turns")] + [(c, p, n) for c, p, n in ws.gen_courses(_courses(ws, args))])


def cmd_record(ws, args):
    rows = ws.record(_courses(ws, args))
    _summary([("course", "run", "path", "frames", "sections")] + rows)


def cmd_build_dataset(ws, args):
    path, pairs = ws.build_dataset()
    pos = sum(p.label for p in pairs)
    _summary([("path", "pairs", "positives", "negatives"), (path, len(pairs), pos, len(pairs) - pos)])


def cmd_train(ws, args):
    dataset = ws.load_dataset(args.pairs)
    path, model, history = ws.train(args.ablation, dataset, args.model_out)
    best = history.epochs[history.best_epoch]
    _summary([("path", "ablation", "epochs", "best_epoch", "val_loss", "val_accuracy"),
              (path, args.ablation, len(history.epochs), history.best_epoch, f"{best.val_loss:.6f}",
               f"{best.val_accuracy:.6f}")])


def cmd_oneshot_sim(ws, args):
    model = ws.load_model(args.model)
    rows = [("course", "score", "failed", "passed", "trace", "report")]
    for cid in _courses(ws, args, "test"):
        _, report, trace_path, report_path = ws.oneshot(model, cid)
        rows.append((cid, f"{report.score:.6f}", report.failed_count, int(report.passed), trace_path, report_path))
    _summary(rows)


def cmd_drive(ws, args):
    model = ws.load_model(args.model)
    rows = [("course", "status", "triggers", "sections", "frames", "run", "trace")]
    failed = False
    for cid in _courses(ws, args, "test"):
        result, sections, run_path, trace_path = ws.drive(model, cid)
        rows.append((cid, result.status, len(result.triggers), sections, len(result), run_path, trace_path))
        failed |= result.status != "completed"
    _summary(rows)
    return 3 if failed else 0


def cmd_score(ws, args):
    out = Path(args.report) if args.report else ws.path("reports", Path(args.trace).stem + ".csv")
    report = score_trace(args.trace, args.run, out)
    _summary([("trace", "score", "failed", "passed", "report"),
              (args.trace, f"{report.score:.6f}", report.failed_count, int(report.passed), out)])


def cmd_plot(ws, args):
    out = Path(args.output) if args.output else ws.path("plots", Path(args.trace).stem + ".svg")
    plot_trace_file(args.trace, args.run, out)
    _summary([("trace", "plot"), (args.trace, out)])


def cmd_ablate(ws, args):
    path, rows = run_ablation(ws, args.ablation or ABLATIONS)
    sys.stdout.write(ablation_table(rows))
    log.info("ablation table written to %s", path)


def build_parser():
    parser = argparse.ArgumentParser(prog="oneshotnav", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="experiment config (JSON)")
    common.add_argument("--seed", type=int, help="override the config's root seed")
    common.add_argument("--out", help="output directory (overrides the config's 'out')")
    common.add_argument("--quiet", action="store_true", help="only warnings on stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, func, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        p.set_defaults(func=func)
        return p

    for name, func, text in (("gen-course", cmd_gen_course, "generate the configured course specs"),
                             ("record", cmd_record, "record scripted runs of each course")):
        add(name, func, text).add_argument("--course", action="append", help="course id (repeatable; default all)")
    add("build-dataset", cmd_build_dataset, "mirror the training runs and write the pair store")
    p = add("train", cmd_train, "train a model on the pair store")
    p.add_argument("--pairs", help="pair store (default <out>/dataset/pairs.osp)")
    p.add_argument("--ablation", choices=ABLATIONS, default="none")
    p.add_argument("--model-out", help="model path (default <out>/models/<ablation>.osm)")
    for name, func, text in (("oneshot-sim", cmd_oneshot_sim, "score a query run against a single teach run"),
                             ("drive", cmd_drive, "navigate each test course closed-loop from its teach run")):
        p = add(name, func, text)
        p.add_argument("--model", help="model file (default <out>/models/none.osm)")
        p.add_argument("--course", action="append", help="course id (repeatable; default the test courses)")
    for name, func, text, flag in (("score", cmd_score, "score a stored prediction trace", "--report"),
                                   ("plot", cmd_plot, "plot a stored prediction trace as SVG", "--output")):
        p = add(name, func, text)
        p.add_argument("--trace", required=True, help="prediction sidecar (frame,p,cursor)")
        p.add_argument("--run", required=True, help="run file whose steering defines the sections")
        p.add_argument(flag, help="output path")
    p = add("ablate", cmd_ablate, "train and one-shot test each ablated model")
    p.add_argument("--ablation", action="append", choices=ABLATIONS, help="subset to run (repeatable; default all)")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s",
                        stream=sys.stderr, force=True)
    try:
        config = ExperimentConfig.load(args.config)
        if args.seed is not None:
            config = replace(config, seed=args.seed)
        status = args.func(Workspace(config, args.out), args)
    except EXPECTED_ERRORS as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"oneshotnav {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return status or 0


if __name__ == "__main__":
    sys.exit(main())
