"""Episodic training pairs, splits, batching and the pair index file."""

import logging
import struct
import zlib
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .sections import END_FRAMES, TRAIN_BUFFER, WINDOW, split_sections

log = logging.getLogger(__name__)

MIN_PAIR_FRAMES = END_FRAMES + WINDOW
MIN_NEGATIVE_FRAMES = END_FRAMES + TRAIN_BUFFER + WINDOW
NEAR_NEGATIVE_FRAMES = 15

POSITIVE, NEGATIVE, NEAR_NEGATIVE = "positive", "negative", "near-negative"
_KINDS = (POSITIVE, NEGATIVE, NEAR_NEGATIVE)


@dataclass(frozen=True, order=True)
class TrainingPair:
    """A reference window and a test window, each 10 frames, by run key and start."""

    course_id: str
    section: int
    ref_run: str
    ref_start: int
    test_run: str
    test_start: int
    label: int
    kind: str = POSITIVE

    @property
    def group(self):
        return (self.course_id, self.section)

    def ref_frames(self):
        return range(self.ref_start, self.ref_start + WINDOW)

    def test_frames(self):
        return range(self.test_start, self.test_start + WINDOW)


def _rng(seed, *keys):
    words = [int(seed) & 0xFFFFFFFF]
    for k in keys:
        words.append(zlib.crc32(str(k).encode()) if isinstance(k, str) else int(k))
    return np.random.default_rng(words)


def generate_pairs(runs, layouts=None, seed=0, near_negatives=False, negative_ratio=2):
    """All positives plus a seeded sample of negatives for one course.

    Reference windows are the six 10-frame windows inside a section end.
    Positives pair every reference window with every test window of the same
    section end over all ordered run pairs (identical windows included).
    Negatives take test windows that finish before the 10-frame training
    buffer. With ``near_negatives`` the negatives finishing within 15 frames
    of the section end are tagged and emitted twice.
    """
    if not runs:
        raise ValueError("generate_pairs needs at least one run")
    course = runs[0].course_id
    if any(r.course_id != course for r in runs):
        raise ValueError("all runs passed to generate_pairs must share one course id")
    layouts = list(layouts) if layouts is not None else [split_sections(r) for r in runs]
    dirs = layouts[0].directions
    for r, lay in zip(runs, layouts):
        if lay.directions != dirs:
            raise ValueError(
                f"run {r.key} has sections {lay.directions}, expected {dirs}; runs must align by section index"
            )
    pairs = []
    for j in range(len(dirs)):
        secs = [lay[j] for lay in layouts]
        short = min(s.length for s in secs)
        if short < MIN_PAIR_FRAMES:
            log.warning("course %s section %d: %d frames < %d, skipped", course, j, short, MIN_PAIR_FRAMES)
            continue
        if short < MIN_NEGATIVE_FRAMES:
            log.warning("course %s section %d: %d frames leave no room for negatives before the training buffer, skipped",
                        course, j, short)
            continue
        refs = [(r.key, st) for r, s in zip(runs, secs) for st in range(s.end_start, s.last - WINDOW + 2)]
        for ref_key, ref_st in refs:
            for test_key, test_st in refs:
                pairs.append(TrainingPair(course, j, ref_key, ref_st, test_key, test_st, 1, POSITIVE))
        n_pos = len(refs) ** 2
        tests = [(r.key, st, s) for r, s in zip(runs, secs)
                 for st in range(s.start, s.end_start - TRAIN_BUFFER - WINDOW + 1)]
        n_neg = negative_ratio * n_pos
        space = len(refs) * len(tests)
        rng = _rng(seed, course, j)
        if n_neg <= space:
            picks = rng.choice(space, size=n_neg, replace=False)
        else:
            log.warning("course %s section %d: only %d distinct negatives for %d requested; sampling with replacement",
                        course, j, space, n_neg)
            picks = rng.integers(0, space, size=n_neg)
        for p in picks:
            ref_key, ref_st = refs[p // len(tests)]
            test_key, test_st, sec = tests[p % len(tests)]
            kind = NEGATIVE
            if near_negatives and test_st + WINDOW - 1 >= sec.end_start - NEAR_NEGATIVE_FRAMES:
                kind = NEAR_NEGATIVE
            pair = TrainingPair(course, j, ref_key, ref_st, test_key, test_st, 0, kind)
            pairs.append(pair)
            if kind == NEAR_NEGATIVE:
                pairs.append(pair)
    return pairs


def split_train_val(pairs, fraction=0.15, seed=0):
    """Seeded random partition; both parts keep the input order."""
    if not 0 < fraction < 1:
        raise ValueError(f"validation fraction must lie in (0, 1), got {fraction}")
    n = len(pairs)
    n_val = int(round(fraction * n))
    chosen = np.zeros(n, bool)
    chosen[np.random.default_rng(seed).permutation(n)[:n_val]] = True
    train = [p for p, c in zip(pairs, chosen) if not c]
    val = [p for p, c in zip(pairs, chosen) if c]
    return train, val


def make_batches(pairs, batch_size=8, seed=0, epoch=0, max_batches_per_group=None):
    """One epoch of batches, each drawn from a single (course, section) group.

    Within a group positives and negatives are shuffled separately and then
    interleaved in proportion, so every batch mixes labels when the group
    has both. ``max_batches_per_group`` keeps only the first batches of each
    shuffled group (a seeded per-epoch subsample).
    """
    rng = np.random.default_rng([int(seed) & 0xFFFFFFFF, int(epoch)])
    groups = defaultdict(list)
    for p in pairs:
        groups[p.group].append(p)
    batches = []
    for key in sorted(groups):
        members = groups[key]
        pos = [p for p in members if p.label == 1]
        neg = [p for p in members if p.label == 0]
        keyed = []
        for part in (pos, neg):
            order = rng.permutation(len(part))
            keyed += [((k + rng.random()) / len(part), part[i]) for k, i in enumerate(order)]
        keyed.sort(key=lambda t: t[0])
        ordered = [p for _, p in keyed]
        chunks = [ordered[i : i + batch_size] for i in range(0, len(ordered), batch_size)]
        if max_batches_per_group is not None:
            chunks = chunks[:max_batches_per_group]
        batches.extend(chunks)
    order = rng.permutation(len(batches))
    return [batches[i] for i in order]


# ---------------------------------------------------------------- pair index file

MAGIC = b"OSP1"
VERSION = 1
_RECORD = np.dtype([("ref_run", "<u4"), ("ref_start", "<u4"), ("test_run", "<u4"), ("test_start", "<u4"),
                    ("section", "<u2"), ("label", "u1"), ("kind", "u1")])


class PairStoreError(ValueError):
    """A pair index file that is truncated or malformed."""


def _pack_str(s):
    b = s.encode("utf-8")
    return struct.pack("<H", len(b)) + b


def save_pairs(path, pairs, run_files):
    """Write the pair index; ``run_files`` maps run key -> run file path."""
    keys = sorted({p.ref_run for p in pairs} | {p.test_run for p in pairs})
    missing = [k for k in keys if k not in run_files]
    if missing:
        raise KeyError(f"no run file given for runs {missing}")
    index = {k: i for i, k in enumerate(keys)}
    courses = sorted({p.course_id for p in pairs})
    cindex = {c: i for i, c in enumerate(courses)}
    rec = np.zeros(len(pairs), _RECORD)
    for i, p in enumerate(pairs):
        rec[i] = (index[p.ref_run], p.ref_start, index[p.test_run], p.test_start, p.section, p.label, _KINDS.index(p.kind))
    course_of = np.array([cindex[p.course_id] for p in pairs], "<u4")
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<HI", VERSION, len(keys)))
        for k in keys:
            fh.write(_pack_str(k) + _pack_str(str(run_files[k])))
        fh.write(struct.pack("<I", len(courses)))
        for c in courses:
            fh.write(_pack_str(c))
        fh.write(struct.pack("<I", len(pairs)))
        fh.write(rec.tobytes())
        fh.write(course_of.tobytes())


def load_pairs(path):
    """Return (pairs, run_files) from a pair index file."""
    with open(path, "rb") as fh:
        data = fh.read()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise PairStoreError(f"{path}: truncated at byte {pos}")
        out = data[pos : pos + n]
        pos += n
        return out

    def take_str():
        (n,) = struct.unpack("<H", take(2))
        return take(n).decode("utf-8")

    if take(4) != MAGIC:
        raise PairStoreError(f"{path}: bad magic")
    version, n_runs = struct.unpack("<HI", take(6))
    if version != VERSION:
        raise PairStoreError(f"{path}: unsupported version {version}")
    keys, run_files = [], {}
    for _ in range(n_runs):
        k = take_str()
        keys.append(k)
        run_files[k] = take_str()
    (n_courses,) = struct.unpack("<I", take(4))
    courses = [take_str() for _ in range(n_courses)]
    (n,) = struct.unpack("<I", take(4))
    rec = np.frombuffer(take(n * _RECORD.itemsize), _RECORD)
    course_of = np.frombuffer(take(4 * n), "<u4")
    if pos != len(data):
        raise PairStoreError(f"{path}: {len(data) - pos} trailing bytes")
    pairs = [
        TrainingPair(courses[c], int(r["section"]), keys[r["ref_run"]], int(r["ref_start"]),
                     keys[r["test_run"]], int(r["test_start"]), int(r["label"]), _KINDS[r["kind"]])
        for r, c in zip(rec, course_of)
    ]
    return pairs, run_files


@dataclass(frozen=True)
class DatasetSplit:
    """Training courses, disjoint one-shot test courses, and the training pairs."""

    base_courses: tuple
    novel_courses: tuple
    pairs: tuple = ()
    validation_fraction: float = 0.15

    def __post_init__(self):
        overlap = set(self.base_courses) & set(self.novel_courses)
        if overlap:
            raise ValueError(f"courses {sorted(overlap)} are both base and novel")
        stray = {p.course_id for p in self.pairs} - set(self.base_courses)
        if stray:
            raise ValueError(f"pairs reference non-base courses {sorted(stray)}")
