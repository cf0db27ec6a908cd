"""Steering normalization and turn/straight section splitting."""

from bisect import bisect_right
from dataclasses import dataclass

import numpy as np

TURN_THRESHOLD = 25.0
PEAK_THRESHOLD = 90.0
END_FRAMES = 15
WINDOW = 10
TEST_BUFFER = 15
TRAIN_BUFFER = 10

STRAIGHT, LEFT, RIGHT = "straight", "left", "right"


def normalize_steering(raw, calibration):
    """Affinely map raw readings onto [-100, 100] (full left to full right), clamped."""
    lo, hi = (float(v) for v in calibration)
    if not hi > lo:
        raise ValueError(f"degenerate calibration range ({lo}, {hi})")
    out = 200.0 * (np.asarray(raw, np.float64) - lo) / (hi - lo) - 100.0
    out = np.clip(out, -100.0, 100.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class Section:
    direction: str
    start: int
    last: int

    @property
    def length(self):
        return self.last - self.start + 1

    @property
    def end_start(self):
        return max(self.start, self.last - END_FRAMES + 1)

    @property
    def end_frames(self):
        return range(self.end_start, self.last + 1)

    @property
    def body_last(self):
        """Last frame of the body (n_j); below ``start`` when there is no body."""
        return self.last - END_FRAMES

    @property
    def body(self):
        return range(self.start, self.body_last + 1)

    @property
    def test_buffer(self):
        return range(max(self.start, self.body_last - TEST_BUFFER + 1), self.body_last + 1)

    @property
    def training_buffer(self):
        return range(max(self.start, self.body_last - TRAIN_BUFFER + 1), self.body_last + 1)

    @property
    def has_full_end(self):
        return self.length >= END_FRAMES


@dataclass(frozen=True)
class SectionLayout:
    sections: tuple
    n_frames: int

    def __len__(self):
        return len(self.sections)

    def __getitem__(self, j):
        return self.sections[j]

    def __iter__(self):
        return iter(self.sections)

    @property
    def directions(self):
        return [s.direction for s in self.sections]

    def section_of(self, frame):
        if not 0 <= frame < self.n_frames:
            raise IndexError(f"frame {frame} outside run of {self.n_frames} frames")
        starts = [s.start for s in self.sections]
        return bisect_right(starts, frame) - 1

    def short_sections(self):
        """Indices of sections too short to carry a full 15-frame end."""
        return [j for j, s in enumerate(self.sections) if not s.has_full_end]


def split_sections(run_or_steering):
    """Label every frame straight/left/right and group runs of equal labels.

    A maximal block of frames with |steering| > 25 becomes a turn when its peak
    magnitude reaches 90; the sign of the peak gives the direction. Everything
    else is straight.
    """
    steering = getattr(run_or_steering, "steering", run_or_steering)
    s = np.asarray(steering, np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ValueError("split_sections needs a non-empty 1-D steering trace")
    labels = [STRAIGHT] * len(s)
    over = np.abs(s) > TURN_THRESHOLD
    i = 0
    while i < len(s):
        if not over[i]:
            i += 1
            continue
        j = i
        while j + 1 < len(s) and over[j + 1]:
            j += 1
        block = s[i : j + 1]
        peak = block[int(np.argmax(np.abs(block)))]
        if abs(peak) >= PEAK_THRESHOLD:
            labels[i : j + 1] = [RIGHT if peak > 0 else LEFT] * (j - i + 1)
        i = j + 1
    sections = []
    start = 0
    for k in range(1, len(s) + 1):
        if k == len(s) or labels[k] != labels[start]:
            sections.append(Section(labels[start], start, k - 1))
            start = k
    return SectionLayout(tuple(sections), len(s))
