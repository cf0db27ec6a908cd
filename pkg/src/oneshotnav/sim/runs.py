"""Recorded runs and their on-disk container.

A run file is little-endian: the magic ``OSR1``, a header, then one record per
frame holding the raw float32 image, the steering value and the throttle. The
per-frame records are laid out so the file can be memory mapped as a
structured array.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .vehicle import FPS, STEER_LIMIT

MAGIC = b"OSR1"
VERSION = 1
_HEAD = struct.Struct("<4sHH")  # magic, version, course-id byte length
_DIMS = struct.Struct("<IIIIIB")  # run id, frames, width, height, channels, mirrored


class RunFormatError(ValueError):
    """A run file that is truncated or not an OSR1 container."""


@dataclass(frozen=True)
class Frame:
    image: np.ndarray
    steering: float
    throttle: float
    index: int

    @property
    def timestamp(self):
        return self.index / FPS


class RecordedRun:
    """Frames of one drive; images are (T, C, H, W) float32."""

    def __init__(self, images, steering, throttle, course_id, run_id, mirrored=False):
        images = np.asarray(images)
        steering = np.asarray(steering, np.float32)
        throttle = np.asarray(throttle, np.float32)
        if images.ndim != 4:
            raise ValueError(f"images must be (T, C, H, W), got shape {images.shape}")
        if not (len(images) == len(steering) == len(throttle)):
            raise ValueError("images, steering and throttle must have one entry per frame")
        if steering.size and np.max(np.abs(steering)) > STEER_LIMIT:
            raise ValueError("steering outside [-100, 100]")
        self.images = images
        self.steering = steering
        self.throttle = throttle
        self.course_id = str(course_id)
        self.run_id = int(run_id)
        self.mirrored = bool(mirrored)

    def __len__(self):
        return len(self.steering)

    @property
    def key(self):
        return f"{self.course_id}/{self.run_id}"

    def frame(self, i):
        if not 0 <= i < len(self):
            raise IndexError(f"frame {i} outside run of {len(self)} frames")
        return Frame(self.images[i], float(self.steering[i]), float(self.throttle[i]), i)

    def frames(self):
        return [self.frame(i) for i in range(len(self))]

    @classmethod
    def from_frames(cls, frames, course_id, run_id, mirrored=False):
        for k, fr in enumerate(frames):
            if fr.index != k:
                raise ValueError(f"frame indices must be contiguous from 0; position {k} has index {fr.index}")
        images = np.stack([f.image for f in frames]).astype(np.float32)
        return cls(images, [f.steering for f in frames], [f.throttle for f in frames], course_id, run_id, mirrored)


def _frame_dtype(c, h, w):
    return np.dtype([("image", "<f4", (c, h, w)), ("steering", "<f4"), ("throttle", "<f4")])


def save_run(run, path):
    t, c, h, w = run.images.shape
    cid = run.course_id.encode("utf-8")
    header = _HEAD.pack(MAGIC, VERSION, len(cid)) + cid + _DIMS.pack(run.run_id, t, w, h, c, int(run.mirrored))
    records = np.empty(t, dtype=_frame_dtype(c, h, w))
    records["image"] = run.images
    records["steering"] = run.steering
    records["throttle"] = run.throttle
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(records.tobytes())


def load_run(path, mmap=True):
    """Read a run file; with ``mmap`` the images stay on disk until touched."""
    with open(path, "rb") as fh:
        head = fh.read(_HEAD.size)
        if len(head) < _HEAD.size:
            raise RunFormatError(f"{path}: truncated header")
        magic, version, nid = _HEAD.unpack(head)
        if magic != MAGIC:
            raise RunFormatError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise RunFormatError(f"{path}: unsupported version {version}")
        cid = fh.read(nid)
        dims = fh.read(_DIMS.size)
        if len(cid) < nid or len(dims) < _DIMS.size:
            raise RunFormatError(f"{path}: truncated header")
        run_id, t, w, h, c, mirrored = _DIMS.unpack(dims)
        offset = _HEAD.size + nid + _DIMS.size
        fh.seek(0, 2)
        size = fh.tell()
    dtype = _frame_dtype(c, h, w)
    if size != offset + t * dtype.itemsize:
        raise RunFormatError(f"{path}: expected {t} frames, file size {size} does not match")
    if mmap and t:
        records = np.memmap(path, dtype=dtype, mode="r", offset=offset, shape=(t,))
    else:
        with open(path, "rb") as fh:
            fh.seek(offset)
            records = np.frombuffer(fh.read(), dtype=dtype, count=t)
    return RecordedRun(
        records["image"], np.array(records["steering"]), np.array(records["throttle"]),
        cid.decode("utf-8"), run_id, bool(mirrored),
    )
