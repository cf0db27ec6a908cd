"""Offline scoring of a per-frame prediction trace against a section layout.

Per section the score combines a weighted specificity over the section body
(early false positives cost more) with the sensitivity over the section end,
then halves the combined value for every section whose body holds a long
false-positive run or whose end never triggers.
"""

import csv
import io
import logging
import math
from dataclasses import dataclass

import numpy as np

from .pipeline.sections import TEST_BUFFER

log = logging.getLogger(__name__)

THRESHOLD = 0.5
TRIGGER_FRAMES = 5
BODY_RUN_LIMIT = 5
BOUNDARY_RUN_LIMIT = 10


@dataclass(frozen=True)
class PredictionTrace:
    """Per-frame match probabilities for a query run; NaN marks warm-up frames."""

    predictions: np.ndarray
    layout: object

    def __post_init__(self):
        p = np.asarray(self.predictions, np.float64)
        object.__setattr__(self, "predictions", p)
        if p.ndim != 1:
            raise ValueError("predictions must be one value per frame")
        if len(p) != self.layout.n_frames:
            raise ValueError(f"trace has {len(p)} frames but the layout covers {self.layout.n_frames}")
        missing = np.isnan(p)
        if missing.any():
            first = int(np.argmin(missing)) if not missing.all() else len(p)
            if missing[first:].any():
                raise ValueError("frames without predictions may only form a warm-up prefix")
        if np.any((p[~missing] < 0) | (p[~missing] > 1)):
            raise ValueError("predictions must lie in [0, 1]")

    @property
    def high(self):
        return self.predictions > THRESHOLD

    @property
    def low(self):
        return self.predictions < THRESHOLD


def _runs(mask, lo, hi):
    """Maximal runs of True in mask[lo:hi+1] as inclusive (start, end) pairs."""
    out = []
    i = lo
    while i <= hi:
        if mask[i]:
            j = i
            while j + 1 <= hi and mask[j + 1]:
                j += 1
            out.append((i, j))
            i = j + 1
        else:
            i += 1
    return out


def section_body_accuracy(trace, layout, j):
    sec = layout[j]
    n = sec.body_last
    p = trace.predictions
    num = den = 0.0
    for i in sec.body:
        if math.isnan(p[i]):
            continue
        w = n - i
        den += w
        if p[i] < THRESHOLD:
            num += w
    if den == 0:
        log.warning("section %d: empty or single-frame body, body accuracy taken as 1", j)
        return 1.0
    return num / den


def section_end_accuracy(trace, layout, j):
    frames = layout[j].end_frames
    if len(frames) == 0:
        return 0.0
    return float(np.sum(trace.high[frames.start : frames.stop])) / len(frames)


def failure_boolean(trace, layout, j):
    """A long false-positive run in the body.

    Runs wholly inside the test buffer are early triggers and never fail.
    Runs that reach into the test buffer from before it are allowed up to 10
    body frames; any other run is allowed up to 5.
    """
    sec = layout[j]
    if len(sec.body) == 0:
        return False
    buf = sec.test_buffer.start
    for a, b in _runs(trace.high, sec.start, sec.body_last):
        if a >= buf:
            continue
        limit = BOUNDARY_RUN_LIMIT if b >= buf else BODY_RUN_LIMIT
        if b - a + 1 > limit:
            return True
    return False


def trigger_frame(trace, layout, j):
    """First frame completing 5 consecutive high predictions in buffer or end, else None."""
    sec = layout[j]
    lo = max(sec.start, sec.body_last - TEST_BUFFER + 1)
    count = 0
    high = trace.high
    for i in range(lo, sec.last + 1):
        count = count + 1 if high[i] else 0
        if count >= TRIGGER_FRAMES:
            return i
    return None


def trigger_success_boolean(trace, layout, j):
    return trigger_frame(trace, layout, j) is not None


@dataclass(frozen=True)
class SectionScore:
    direction: str
    body: float
    end: float
    failure: bool
    trigger: bool

    @property
    def quality(self):
        return math.sqrt(self.body * self.end)

    @property
    def failed(self):
        return self.failure or not self.trigger


@dataclass(frozen=True)
class ScoreReport:
    sections: tuple

    @property
    def base(self):
        qs = [s.quality for s in self.sections]
        return math.prod(qs) ** (1.0 / len(qs))

    @property
    def failed_count(self):
        return sum(s.failed for s in self.sections)

    @property
    def score(self):
        return self.base * 0.5 ** self.failed_count

    @property
    def passed(self):
        return self.score > THRESHOLD


def combined_score(trace, layout=None):
    layout = trace.layout if layout is None else layout
    if len(layout) == 0:
        raise ValueError("combined_score needs at least one section")
    return ScoreReport(tuple(
        SectionScore(
            sec.direction,
            section_body_accuracy(trace, layout, j),
            section_end_accuracy(trace, layout, j),
            failure_boolean(trace, layout, j),
            trigger_success_boolean(trace, layout, j),
        )
        for j, sec in enumerate(layout)
    ))


# ---------------------------------------------------------------- reports

TABLE_HEADER = ["section", "direction", "body_accuracy", "end_accuracy", "failure", "trigger", "quality"]


def report_table(report):
    """Delimited text: one row per section plus a summary row."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_HEADER)
    for j, s in enumerate(report.sections):
        w.writerow([j, s.direction, f"{s.body:.6f}", f"{s.end:.6f}", int(s.failure), int(s.trigger), f"{s.quality:.6f}"])
    w.writerow(["summary", f"failed={report.failed_count}", f"base={report.base:.6f}", f"score={report.score:.6f}",
                f"pass={int(report.passed)}", "", ""])
    return buf.getvalue()


SIDECAR_HEADER = ["frame", "p", "cursor"]


def write_sidecar(path, predictions, cursor, status=None, triggers=()):
    """Per-frame probabilities as delimited text; warm-up frames leave ``p`` empty."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SIDECAR_HEADER)
        for i, (p, c) in enumerate(zip(predictions, cursor)):
            w.writerow([i, "" if math.isnan(p) else f"{p:.6f}", int(c)])
        if status is not None:
            w.writerow(["# status", status, ";".join(map(str, triggers))])
    return path


def read_sidecar(path):
    """Predictions and cursor columns of a sidecar; comment rows are skipped."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows or rows[0] != SIDECAR_HEADER:
        raise ValueError(f"{path}: expected a header row {','.join(SIDECAR_HEADER)}")
    body = rows[1:]
    if not body:
        raise ValueError(f"{path}: trace has no frames")
    preds, cursor = np.empty(len(body)), np.empty(len(body), np.int64)
    for k, r in enumerate(body):
        try:
            if len(r) != 3 or int(r[0]) != k:
                raise ValueError
            preds[k] = math.nan if r[1] == "" else float(r[1])
            cursor[k] = int(r[2])
        except ValueError:
            raise ValueError(f"{path}: malformed row {k + 2}: {','.join(r)}") from None
    return preds, cursor


def plot_trace(trace, plot_path, title=None):
    """SVG of the probability curve with test-buffer and section-end bands and trigger lines."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    layout = trace.layout
    p = trace.predictions
    if len(p) == 0:
        raise ValueError("cannot plot an empty trace")
    with plt.rc_context({"svg.hashsalt": "oneshotnav", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(10, 3))
        for j, sec in enumerate(layout):
            buf = sec.test_buffer
            if len(buf):
                ax.axvspan(buf.start, buf.stop - 1, color="#f2d9a6", alpha=0.6, lw=0, gid=f"test-buffer-{j}")
            ends = sec.end_frames
            ax.axvspan(ends.start, ends.stop - 1, color="#9fc5e8", alpha=0.7, lw=0, gid=f"section-end-{j}")
            t = trigger_frame(trace, layout, j)
            if t is not None:
                ax.axvline(t, color="#2a7a2a", lw=1.2, gid=f"trigger-{j}")
        ax.plot(np.arange(len(p)), p, color="#222222", lw=1.0)
        ax.axhline(THRESHOLD, color="#aa3333", lw=0.6, ls="--")
        ax.set_ylim(-0.02, 1.02)
        ax.set_xlim(0, max(len(p) - 1, 1))
        ax.set_xlabel("frame")
        ax.set_ylabel("match probability")
        if title:
            ax.set_title(title)
        fig.tight_layout()
        fig.savefig(plot_path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return plot_path


def render_report(report, trace, table_path, plot_path):
    """Write the table and an SVG of the trace with section-end and buffer bands."""
    with open(table_path, "w", encoding="utf-8") as fh:
        fh.write(report_table(report))
    plot_trace(trace, plot_path, f"score {report.score:.3f} ({report.failed_count} failed)")
