"""File-based workflow behind the command line: courses, runs, pairs, models, traces and reports.

Everything random is seeded from one root seed through named derivations,
so any artifact can be rebuilt from the config file alone.
"""

import csv
import hashlib
import io
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mcn import MCN, McnConfig, PairDataset, load_model, predict_pairs, save_model, train
from .mcn.config import ABLATIONS
from .metrics import PredictionTrace, combined_score, plot_trace, read_sidecar, report_table, write_sidecar
from .navigator import build_memory_queue, navigate, oneshot_sim
from .pipeline import generate_pairs, load_pairs, mirror_run, save_pairs, split_sections, split_train_val
from .sim import dump_course_spec, generate_course, load_course_spec, load_run, save_run, scripted_drive
from .sim.course import mirrored_id

log = logging.getLogger(__name__)

TEACH, QUERY = 0, 1
RECALL_PAIRS = 512


class ExperimentError(ValueError):
    """A config or artifact problem, reported as a one-line diagnostic."""


def derive_seed(root, *names):
    """A 32-bit seed for the named stream, stable across platforms and runs."""
    digest = hashlib.sha256(json.dumps([int(root), *map(str, names)]).encode()).digest()
    return int.from_bytes(digest[:4], "little")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    train_courses: tuple = ("L", "R", "LR", "RL", "RR", "LL")
    test_courses: tuple = ("LR", "RL")
    runs_per_course: int = 3
    mirror: bool = True
    near_negatives: bool = False
    negative_ratio: int = 2
    speed: float = 0.4
    model: dict = field(default_factory=dict)
    out: str = "out"

    KEYS = ("seed", "courses", "runs_per_course", "mirror", "near_negatives", "negative_ratio", "speed", "model", "out")

    def __post_init__(self):
        for name in ("train_courses", "test_courses"):
            turns = getattr(self, name)
            if isinstance(turns, str) or not all(isinstance(t, str) and t and set(t) <= {"L", "R"} for t in turns):
                raise ExperimentError(f"courses.{name.split('_')[0]}: expected a list of non-empty L/R turn strings")
            object.__setattr__(self, name, tuple(turns))
        if not self.train_courses:
            raise ExperimentError("courses.train: at least one training course is required")
        if self.runs_per_course < 2:
            raise ExperimentError("runs_per_course: pairing needs at least 2 runs per course")
        if not self.speed > 0:
            raise ExperimentError("speed: must be positive")
        try:
            self.model_config()
        except (TypeError, ValueError) as exc:
            raise ExperimentError(f"model: {exc}") from None

    @classmethod
    def from_dict(cls, doc):
        if not isinstance(doc, dict):
            raise ExperimentError("config: expected a JSON object")
        unknown = sorted(set(doc) - set(cls.KEYS))
        if unknown:
            raise ExperimentError(f"config: unknown keys {unknown}")
        kw = {k: doc[k] for k in cls.KEYS if k in doc and k != "courses"}
        courses = doc.get("courses", {})
        if not isinstance(courses, dict) or set(courses) - {"train", "test"}:
            raise ExperimentError("courses: expected an object with 'train' and 'test' turn lists")
        if "train" in courses:
            kw["train_courses"] = courses["train"]
        if "test" in courses:
            kw["test_courses"] = courses["test"]
        if not isinstance(kw.get("model", {}), dict):
            raise ExperimentError("model: expected an object of model settings")
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ExperimentError(f"config: {exc}") from None

    @classmethod
    def load(cls, path):
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ExperimentError(f"cannot read config {path}: {exc.strerror}") from None
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ExperimentError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
        return cls.from_dict(doc)

    # ------------------------------------------------------------ naming

    def course_ids(self, which="all"):
        train = [f"train-{k:02d}" for k in range(len(self.train_courses))]
        test = [f"test-{k:02d}" for k in range(len(self.test_courses))]
        return {"train": train, "test": test, "all": train + test}[which]

    def turns_of(self, course_id):
        kind, k = course_id.split("-")
        return (self.train_courses if kind == "train" else self.test_courses)[int(k)]

    def run_count(self, course_id):
        # test courses get a teach run and a query run
        return self.runs_per_course if course_id.startswith("train") else 2

    def model_config(self, ablation=None):
        doc = dict(self.model)
        doc.setdefault("seed", derive_seed(self.seed, "training"))
        if ablation is not None:
            doc["ablation"] = ablation
        return McnConfig.from_dict(doc)


class Workspace:
    """Artifact paths under one output directory."""

    def __init__(self, config, out=None):
        self.config = config
        self.root = Path(out if out is not None else config.out)

    def path(self, *parts):
        p = self.root.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def course_path(self, cid):
        return self.path("courses", f"{cid}.json")

    def run_path(self, cid, k):
        return self.path("runs", f"{cid}-{k}.osr")

    def pairs_path(self):
        return self.path("dataset", "pairs.osp")

    def model_path(self, ablation="none"):
        return self.path("models", f"{ablation}.osm")

    def check_course(self, cid):
        if cid not in self.config.course_ids():
            raise ExperimentError(f"unknown course {cid!r}; the config defines {self.config.course_ids()}")
        return cid

    # ------------------------------------------------------------ loading

    def load_course(self, cid):
        path = self.course_path(cid)
        if not path.exists():
            raise ExperimentError(f"{path} does not exist; run gen-course first")
        return load_course_spec(path.read_text(encoding="utf-8"))

    def load_run(self, cid, k):
        path = self.run_path(cid, k)
        if not path.exists():
            raise ExperimentError(f"{path} does not exist; run record first")
        return load_run(path)

    # ------------------------------------------------------------ steps

    def gen_courses(self, ids=None):
        out = []
        for cid in ids or self.config.course_ids():
            spec = generate_course(derive_seed(self.config.seed, "course", cid), self.config.turns_of(self.check_course(cid)), cid)
            path = self.course_path(cid)
            path.write_text(dump_course_spec(spec) + "\n", encoding="utf-8")
            out.append((cid, path, len(spec.waypoints) - 2))
        return out

    def record(self, ids=None):
        out = []
        for cid in ids or self.config.course_ids():
            spec = self.load_course(self.check_course(cid))
            for k in range(self.config.run_count(cid)):
                run = scripted_drive(spec, derive_seed(self.config.seed, "run", cid, k), run_id=k, speed=self.config.speed)
                path = self.run_path(cid, k)
                save_run(run, path)
                out.append((cid, k, path, len(run), len(split_sections(run))))
        return out

    def build_dataset(self):
        pairs, files = [], {}
        seed = derive_seed(self.config.seed, "sampling")
        for cid in self.config.course_ids("train"):
            runs = [self.load_run(cid, k) for k in range(self.config.runs_per_course)]
            groups = [(cid, runs)]
            if self.config.mirror:
                mirrored = [mirror_run(r) for r in runs]
                groups.append((mirrored_id(cid), mirrored))
            for gid, group in groups:
                for r in group:
                    path = self.run_path(gid, r.run_id)
                    if gid != cid:
                        save_run(r, path)
                    files[r.key] = str(path.resolve())
                pairs += generate_pairs(group, seed=derive_seed(seed, gid), near_negatives=self.config.near_negatives,
                                        negative_ratio=self.config.negative_ratio)
        path = self.pairs_path()
        save_pairs(path, pairs, files)
        return path, pairs

    def load_dataset(self, path=None):
        path = Path(path) if path is not None else self.pairs_path()
        if not path.exists():
            raise ExperimentError(f"{path} does not exist; run build-dataset first")
        pairs, files = load_pairs(path)
        for key, f in files.items():
            if not Path(f).exists():
                raise ExperimentError(f"{path}: run file {f} for {key} is missing")
        return PairDataset(pairs, {k: load_run(f) for k, f in files.items()})

    def train(self, ablation="none", dataset=None, model_out=None, progress=None):
        dataset = self.load_dataset() if dataset is None else dataset
        cfg = self.config.model_config(ablation)
        model = MCN(cfg, cfg.seed)
        history = train(model, dataset, progress=progress)
        path = Path(model_out) if model_out is not None else self.model_path(ablation)
        path.parent.mkdir(parents=True, exist_ok=True)
        save_model(model, path)
        with open(path.with_suffix(".history.csv"), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "train_accuracy", "val_loss", "val_accuracy", "batches"])
            for e in history.epochs:
                w.writerow([e.epoch, f"{e.train_loss:.6f}", f"{e.train_accuracy:.6f}", f"{e.val_loss:.6f}",
                            f"{e.val_accuracy:.6f}", e.batches])
        return path, model, history

    def load_model(self, path=None, ablation="none"):
        path = Path(path) if path is not None else self.model_path(ablation)
        if not path.exists():
            raise ExperimentError(f"{path} does not exist; run train first")
        return load_model(path)

    def oneshot(self, model, cid, tag="oneshot"):
        teach, query = self.load_run(cid, TEACH), self.load_run(cid, QUERY)
        trace = oneshot_sim(teach, query, model)
        report = combined_score(trace)
        stem = f"{cid}-{tag}"
        trace_path = self.path("traces", f"{stem}.csv")
        write_sidecar(trace_path, trace.predictions, [trace.layout.section_of(i) for i in range(len(query))])
        report_path = self.path("reports", f"{stem}.csv")
        report_path.write_text(report_table(report), encoding="utf-8")
        return trace, report, trace_path, report_path

    def drive(self, model, cid):
        spec = self.load_course(cid)
        queue = build_memory_queue(self.load_run(cid, TEACH))
        result = navigate(spec, queue, model, speed=self.config.speed)
        run_path = self.path("runs", f"{cid}-drive.osr")
        save_run(result.to_run(), run_path)
        trace_path = result.write_sidecar(self.path("traces", f"{cid}-drive.csv"))
        return result, len(queue), run_path, trace_path


def load_trace(trace_path, run_path):
    """A stored sidecar plus the run whose steering defines the sections."""
    for p in (trace_path, run_path):
        if not Path(p).exists():
            raise ExperimentError(f"{p} does not exist")
    preds, _ = read_sidecar(trace_path)
    run = load_run(run_path)
    if len(run) != len(preds):
        raise ExperimentError(f"{trace_path} has {len(preds)} frames but {run_path} has {len(run)}")
    return PredictionTrace(preds, split_sections(run))


def score_trace(trace_path, run_path, report_path):
    trace = load_trace(trace_path, run_path)
    report = combined_score(trace)
    Path(report_path).parent.mkdir(parents=True, exist_ok=True)
    Path(report_path).write_text(report_table(report), encoding="utf-8")
    return report


def plot_trace_file(trace_path, run_path, plot_path):
    trace = load_trace(trace_path, run_path)
    Path(plot_path).parent.mkdir(parents=True, exist_ok=True)
    report = combined_score(trace)
    return plot_trace(trace, plot_path, f"score {report.score:.3f} ({report.failed_count} failed)")


def positive_recall(model, dataset, seed=0, limit=RECALL_PAIRS):
    """Share of held-out positive pairs predicted as matches."""
    _, val = split_train_val(dataset.pairs, 0.15, seed)
    pos = [p for p in val if p.label == 1]
    if len(pos) > limit:
        pick = np.sort(np.random.default_rng([seed, 2]).choice(len(pos), limit, replace=False))
        pos = [pos[i] for i in pick]
    if not pos:
        return float("nan")
    return float(np.mean(predict_pairs(model, dataset, pos) > 0.5))


ABLATION_HEADER = ["model", "course", "score", "failed", "end_recall", "pair_recall"]


def end_recall(trace):
    frames = np.concatenate([np.arange(s.end_frames.start, s.end_frames.stop) for s in trace.layout])
    return float(np.mean(trace.high[frames]))


def ablation_table(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ABLATION_HEADER)
    for r in rows:
        w.writerow([r["model"], r["course"], f"{r['score']:.6f}", r["failed"], f"{r['end_recall']:.6f}",
                    f"{r['pair_recall']:.6f}"])
    return buf.getvalue()


def run_ablation(ws, ablations=ABLATIONS, progress=None):
    dataset = ws.load_dataset()
    rows = []
    for name in ablations:
        _, model, _ = ws.train(name, dataset, progress=progress)
        recall = positive_recall(model, dataset, model.config.seed)
        scores = []
        for cid in ws.config.course_ids("test"):
            trace, report, _, _ = ws.oneshot(model, cid, f"oneshot-{name}")
            scores.append(report.score)
            rows.append(dict(model=name, course=cid, score=report.score, failed=report.failed_count,
                             end_recall=end_recall(trace), pair_recall=recall))
        rows.append(dict(model=name, course="mean", score=float(np.mean(scores)) if scores else float("nan"),
                         failed=sum(r["failed"] for r in rows if r["model"] == name and r["course"] != "mean"),
                         end_recall=float(np.mean([r["end_recall"] for r in rows if r["model"] == name])) if scores else float("nan"),
                         pair_recall=recall))
    path = ws.path("reports", "ablation.csv")
    path.write_text(ablation_table(rows), encoding="utf-8")
    return path, rows


def cpu_count():
    return os.cpu_count() or 1
