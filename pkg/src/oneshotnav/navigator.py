"""Teach once, then repeat: a memory queue of section ends drives the task switching.

A teach run is split into sections; each section contributes its direction
and its last 10 frames to the queue. While driving, the current camera
window is matched against the current entry's frames and five consecutive
confident matches advance the queue.
"""

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .metrics import THRESHOLD, TRIGGER_FRAMES, PredictionTrace, write_sidecar
from .pipeline.sections import LEFT, RIGHT, STRAIGHT, WINDOW, split_sections
from .sim.drive import CRUISE_SPEED, _collides, route_polyline
from .sim.render import range_scan, render_stereo
from .sim.runs import RecordedRun
from .sim.vehicle import DT, WHEELBASE_M, VehiclePose, step_vehicle, steering_for_angle, wrap_angle

COMPLETED, COLLISION, TIMEOUT = "completed", "collision", "timeout"

CORRIDOR_HALF_WIDTH = 1.0
OPENING_M = 1.6
CENTERING_LOOKAHEAD_M = 1.0
STRAIGHT_LIMIT = 24.0
TURN_STEERING = 97.0
TURN_EXIT_DEG = 15.0


@dataclass(frozen=True)
class QueueEntry:
    direction: str
    frames: tuple

    @property
    def images(self):
        return np.stack([f.image for f in self.frames])


class MemoryQueue:
    """Ordered (direction, reference frames) tasks and a cursor into them."""

    def __init__(self, entries):
        self.entries = tuple(entries)
        if not self.entries:
            raise ValueError("a memory queue needs at least one entry")
        self.cursor = 0

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, j):
        return self.entries[j]

    @property
    def directions(self):
        return [e.direction for e in self.entries]

    @property
    def current(self):
        return self.entries[self.cursor] if self.cursor < len(self.entries) else None

    @property
    def done(self):
        return self.cursor >= len(self.entries)

    def advance(self):
        if self.done:
            raise IndexError("memory queue already exhausted")
        self.cursor += 1

    def fresh(self):
        """Same entries, cursor back at the first task."""
        return MemoryQueue(self.entries)


def build_memory_queue(teach_run, layout=None):
    """One entry per section of the teach run, holding its last 10 frames."""
    layout = split_sections(teach_run) if layout is None else layout
    entries = []
    for j, sec in enumerate(layout):
        if sec.length < WINDOW:
            raise ValueError(f"section {j} ({sec.direction}) has {sec.length} frames; a queue entry needs {WINDOW}")
        entries.append(QueueEntry(sec.direction, tuple(teach_run.frame(i) for i in range(sec.last - WINDOW + 1, sec.last + 1))))
    return MemoryQueue(entries)


def detect_trigger(predictions):
    """True when the last five predictions all lie strictly above 0.5."""
    recent = list(predictions)[-TRIGGER_FRAMES:]
    return len(recent) == TRIGGER_FRAMES and all(p > THRESHOLD for p in recent)


# ---------------------------------------------------------------- task primitives

def _axis_heading(heading):
    return round(heading / (math.pi / 2)) * (math.pi / 2)


def centering_command(spec, pose, axis=None, limit=STRAIGHT_LIMIT):
    """Steer toward the corridor centre line along the nearest grid axis.

    Side distances come from the range scan at +/-90 degrees; a side that
    opens up (junction) is ignored and the other wall is held at the nominal
    half width.
    """
    axis = _axis_heading(pose.heading) if axis is None else axis
    err = wrap_angle(pose.heading - axis)
    left, right = range_scan(spec, pose, [-90.0, 90.0]) * math.cos(err)
    if left < OPENING_M and right < OPENING_M:
        offset = (left - right) / 2.0
    elif left < OPENING_M:
        offset = left - CORRIDOR_HALF_WIDTH
    elif right < OPENING_M:
        offset = CORRIDOR_HALF_WIDTH - right
    else:
        offset = 0.0
    # offset > 0: the car sits right of the centre line
    alpha = math.atan2(-offset, CENTERING_LOOKAHEAD_M) - err
    ld = math.hypot(offset, CENTERING_LOOKAHEAD_M)
    delta = math.atan(2.0 * WHEELBASE_M * math.sin(alpha) / ld)
    return max(-limit, min(limit, steering_for_angle(delta)))


class TaskPolicy:
    """Scripted controller for one queue direction.

    Straight keeps to the corridor centre. A turn first keeps centring until
    the wall ahead is one turning radius plus a half corridor away, then
    holds a fixed hard steer until the heading is within 15 degrees of the
    new axis, and finally re-centres in the new corridor.
    """

    def __init__(self, direction):
        if direction not in (STRAIGHT, LEFT, RIGHT):
            raise ValueError(f"unknown task direction {direction!r}")
        self.direction = direction
        self.phase = "cruise" if direction == STRAIGHT else "approach"
        self.axis = None
        self.target = None

    @property
    def primitive_done(self):
        return self.phase in ("cruise", "recenter")

    def command(self, spec, pose):
        if self.axis is None:
            self.axis = _axis_heading(pose.heading)
        if self.phase == "approach":
            radius = WHEELBASE_M / math.tan(math.radians(30.0 * TURN_STEERING / 100.0))
            ahead = float(range_scan(spec, pose, [0.0])[0]) * math.cos(wrap_angle(pose.heading - self.axis))
            if ahead <= radius + CORRIDOR_HALF_WIDTH:
                self.phase = "arc"
                turn = -math.pi / 2 if self.direction == LEFT else math.pi / 2
                self.target = _axis_heading(self.axis + turn)
            else:
                return centering_command(spec, pose, self.axis)
        if self.phase == "arc":
            if abs(wrap_angle(pose.heading - self.target)) > math.radians(TURN_EXIT_DEG):
                return -TURN_STEERING if self.direction == LEFT else TURN_STEERING
            self.phase = "recenter"
            self.axis = self.target
        return centering_command(spec, pose, self.axis)


def task_policy(direction, pose, spec, state=None):
    """Steering for ``direction`` at ``pose``; pass the returned policy back in to keep turn state."""
    state = TaskPolicy(direction) if state is None or state.direction != direction else state
    return state.command(spec, pose), state


# ---------------------------------------------------------------- closed loop

@dataclass
class AutonomousRun:
    images: np.ndarray
    steering: np.ndarray
    predictions: np.ndarray
    cursor: np.ndarray
    triggers: list
    status: str
    course_id: str
    poses: list = field(default_factory=list)

    def __len__(self):
        return len(self.steering)

    def to_run(self, run_id=0):
        throttle = np.full(len(self), 100.0 * CRUISE_SPEED / 2.0, np.float32)
        return RecordedRun(self.images, self.steering, throttle, self.course_id, run_id)

    def write_sidecar(self, path):
        return write_sidecar(path, self.predictions, self.cursor, self.status, self.triggers)


def _check_shapes(queue, model):
    shape = tuple(model.config.image_shape)
    for j, e in enumerate(queue.entries):
        if len(e.frames) != WINDOW:
            raise ValueError(f"queue entry {j} holds {len(e.frames)} frames, expected {WINDOW}")
        if tuple(e.frames[0].image.shape) != shape:
            raise ValueError(f"queue entry {j} images have shape {e.frames[0].image.shape}, the model expects {shape}")


def start_pose(spec, speed=CRUISE_SPEED):
    (x0, y0), (x1, y1) = spec.waypoints[0], spec.waypoints[1]
    return VehiclePose(float(x0), float(y0), math.atan2(y1 - y0, x1 - x0), speed)


def navigate(spec, queue, model, speed=CRUISE_SPEED, max_frames=None, render=render_stereo):
    """Drive ``spec`` from its first waypoint, switching tasks on triggers.

    ``model`` needs ``extract_features`` and ``match_features``; reference
    features are computed once per entry and camera features once per frame.
    """
    _check_shapes(queue, model)
    queue = queue.fresh()
    ref_feats = [model.extract_features(e.images) for e in queue.entries]
    if max_frames is None:
        _, s = route_polyline(spec.waypoints)
        max_frames = int(3 * s[-1] / (speed * DT)) + 100

    pose = start_pose(spec, speed)
    policy = TaskPolicy(queue.current.direction)
    window = deque(maxlen=WINDOW)
    history = []
    images, steering, preds, cursors, poses, triggers = [], [], [], [], [], []
    status = TIMEOUT
    for k in range(max_frames):
        if _collides(spec, pose):
            status = COLLISION
            break
        img = render(spec, pose)
        window.append(model.extract_features(img[None])[0])
        p = math.nan
        if len(window) == WINDOW:
            p = float(model.match_features(ref_feats[queue.cursor], np.stack(window)))
            history.append(p)
        cmd = policy.command(spec, pose)
        images.append(img)
        steering.append(cmd)
        preds.append(p)
        cursors.append(queue.cursor)
        poses.append(pose)
        if policy.primitive_done and detect_trigger(history):
            triggers.append(k)
            queue.advance()
            history.clear()
            if queue.done:
                status = COMPLETED
                break
            policy = TaskPolicy(queue.current.direction)
        pose = step_vehicle(pose, cmd, speed)
    return AutonomousRun(
        np.asarray(images, np.float32).reshape((len(images),) + tuple(model.config.image_shape)),
        np.asarray(steering, np.float32), np.asarray(preds, np.float64), np.asarray(cursors, np.int64),
        triggers, status, spec.course_id, poses,
    )


# ---------------------------------------------------------------- offline one-shot test

def oneshot_sim(teach_run, query_run, model, queue=None):
    """Score a recorded query drive against a single teach drive.

    Each query frame from index 9 on is matched, through its trailing
    10-frame window, against the queue entry of the section the frame
    belongs to in the query's own split.
    """
    queue = build_memory_queue(teach_run) if queue is None else queue
    layout = split_sections(query_run)
    if layout.directions != queue.directions:
        raise ValueError(f"query sections {layout.directions} do not match the teach sections {queue.directions}")
    _check_shapes(queue, model)
    ref_feats = [model.extract_features(e.images) for e in queue.entries]
    feats = np.concatenate([model.extract_features(query_run.images[i:i + 64]) for i in range(0, len(query_run), 64)])
    preds = np.full(len(query_run), np.nan)
    for lo in range(WINDOW - 1, len(query_run), 64):
        ends = np.arange(lo, min(lo + 64, len(query_run)))
        tests = feats[ends[:, None] + np.arange(-WINDOW + 1, 1)[None, :]]
        refs = np.stack([ref_feats[layout.section_of(int(i))] for i in ends])
        preds[ends] = model.match_features(refs, tests)
    return PredictionTrace(preds, layout)
