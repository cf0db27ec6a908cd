"""Scripted pure-pursuit driver that records teach/query runs."""

import math

import numpy as np

from .render import render_stereo
from .runs import RecordedRun
from .vehicle import DT, WHEELBASE_M, VehiclePose, step_vehicle, steering_for_angle, wrap_angle

CRUISE_SPEED = 0.6
MAX_SPEED = 2.0
FILLET_RADIUS = 0.9
LOOKAHEAD_M = 0.45
STEER_NOISE_SD = 3.0
LATERAL_NOISE_SD = 0.03
BODY_RADIUS_M = 0.12


class DriveError(RuntimeError):
    """The scripted drive hit a wall or failed to reach the final waypoint."""

    def __init__(self, message, pose, frame):
        super().__init__(f"{message} at frame {frame}, pose x={pose.x:.3f} y={pose.y:.3f} heading={pose.heading:.3f}")
        self.pose = pose
        self.frame = frame


def route_polyline(waypoints, radius=FILLET_RADIUS, spacing=0.01):
    """Densely sampled route with circular fillets at interior waypoints.

    Returns (points (N, 2), cumulative arc length (N,)).
    """
    wps = [np.asarray(w, np.float64) for w in waypoints]
    pieces = [wps[0][None]]
    cursor = wps[0]
    for i in range(1, len(wps) - 1):
        a, b, c = wps[i - 1], wps[i], wps[i + 1]
        u1 = (b - a) / np.linalg.norm(b - a)
        u2 = (c - b) / np.linalg.norm(c - b)
        cross = u1[0] * u2[1] - u1[1] * u2[0]
        turn = math.atan2(cross, float(u1 @ u2))
        if abs(turn) < 1e-9:
            continue
        tangent = radius * math.tan(abs(turn) / 2)
        p_in = b - u1 * tangent
        p_out = b + u2 * tangent
        pieces.append(_line(cursor, p_in, spacing))
        normal = np.array([-u1[1], u1[0]]) * math.copysign(1.0, cross)
        center = p_in + normal * radius
        a0 = math.atan2(p_in[1] - center[1], p_in[0] - center[0])
        n = max(2, int(math.ceil(radius * abs(turn) / spacing)))
        angles = a0 + np.linspace(0, turn, n + 1)[1:]
        pieces.append(center + radius * np.stack([np.cos(angles), np.sin(angles)], axis=1))
        cursor = p_out
    pieces.append(_line(cursor, wps[-1], spacing))
    pts = np.concatenate(pieces)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    keep = np.concatenate([[True], seg > 1e-12])
    pts = pts[keep]
    s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1))])
    return pts, s


def _line(a, b, spacing):
    n = max(1, int(math.ceil(np.linalg.norm(b - a) / spacing)))
    t = np.linspace(0, 1, n + 1)[1:, None]
    return a + t * (b - a)


def _offset_route(pts, s, rng, sign):
    tangent = np.gradient(pts, axis=0)
    tangent /= np.linalg.norm(tangent, axis=1, keepdims=True)
    right = np.stack([-tangent[:, 1], tangent[:, 0]], axis=1)
    const, amp = rng.standard_normal(2) * LATERAL_NOISE_SD
    wavelength = rng.uniform(2.0, 4.0)
    phase = rng.uniform(0, 2 * math.pi)
    offset = sign * (const + amp * np.sin(2 * math.pi * s / wavelength + phase))
    return pts + right * offset[:, None]


def _collides(spec, pose):
    c, sn = math.cos(pose.heading), math.sin(pose.heading)
    for along in (0.0, WHEELBASE_M):
        cx, cy = pose.x + along * c, pose.y + along * sn
        for k in range(8):
            a = k * math.pi / 4
            if spec.is_wall_at(cx + BODY_RADIUS_M * math.cos(a), cy + BODY_RADIUS_M * math.sin(a)):
                return True
    return False


class PurePursuit:
    """Track progress along a sampled route and steer toward a lookahead point.

    Progress is the arc length of the projection onto the route polyline, and
    the lookahead point is interpolated along arc length, so the command is a
    continuous function of the pose. Past the final waypoint the route is
    extended straight so the lookahead never collapses onto the goal.
    """

    def __init__(self, pts, s, lookahead=LOOKAHEAD_M):
        tail = pts[-1] - pts[-2]
        tail = tail / np.linalg.norm(tail)
        self.pts = np.vstack([pts, pts[-1] + 2 * lookahead * tail])
        self.s = np.append(s, s[-1] + 2 * lookahead)
        self.goal = s[-1]
        self.lookahead = lookahead
        self.progress = 0.0

    @property
    def remaining(self):
        return self.goal - self.progress

    def _project(self, x, y):
        lo = max(0, int(np.searchsorted(self.s, self.progress)) - 1)
        hi = min(len(self.s) - 1, int(np.searchsorted(self.s, self.progress + 0.5)) + 1)
        a = self.pts[lo:hi]
        d = self.pts[lo + 1 : hi + 1] - a
        seg2 = np.einsum("ij,ij->i", d, d)
        t = np.clip(((x - a[:, 0]) * d[:, 0] + (y - a[:, 1]) * d[:, 1]) / seg2, 0.0, 1.0)
        px = a[:, 0] + t * d[:, 0]
        py = a[:, 1] + t * d[:, 1]
        k = int(np.argmin((px - x) ** 2 + (py - y) ** 2))
        return self.s[lo + k] + t[k] * (self.s[lo + k + 1] - self.s[lo + k])

    def command(self, pose):
        self.progress = max(self.progress, self._project(pose.x, pose.y))
        target = self.progress + self.lookahead
        tx = float(np.interp(target, self.s, self.pts[:, 0]))
        ty = float(np.interp(target, self.s, self.pts[:, 1]))
        ld = math.hypot(tx - pose.x, ty - pose.y)
        if ld < 1e-6:
            return 0.0
        alpha = wrap_angle(math.atan2(ty - pose.y, tx - pose.x) - pose.heading)
        delta = math.atan(2.0 * WHEELBASE_M * math.sin(alpha) / ld)
        return steering_for_angle(delta)


def scripted_drive(spec, noise_seed, run_id=None, speed=CRUISE_SPEED, render=True, max_frames=None):
    """Drive the course with seeded human-like wobble and record every frame.

    Mirrored specs flip the sign of every noise draw, so a drive of the
    mirrored course is the reflection of the same-seed drive of the original.
    """
    rng = np.random.default_rng(noise_seed)
    sign = -1.0 if spec.mirrored else 1.0
    pts, s = route_polyline(spec.waypoints)
    pts = _offset_route(pts, s, rng, sign)
    pilot = PurePursuit(pts, s)
    heading = math.atan2(pts[1, 1] - pts[0, 1], pts[1, 0] - pts[0, 0])
    pose = VehiclePose(pts[0, 0], pts[0, 1], heading, speed)
    budget = max_frames or int(3 * s[-1] / (speed * DT)) + 100
    images, steering, throttle = [], [], []
    noise = 0.0
    rho = 0.7
    for k in range(budget):
        if _collides(spec, pose):
            raise DriveError("collision with wall", pose, k)
        if pilot.remaining < 0.05:
            break
        cmd = pilot.command(pose)
        noise = rho * noise + math.sqrt(1 - rho * rho) * STEER_NOISE_SD * rng.standard_normal()
        noise = max(-3 * STEER_NOISE_SD, min(3 * STEER_NOISE_SD, noise))
        cmd = max(-100.0, min(100.0, cmd + sign * noise))
        if render:
            images.append(render_stereo(spec, pose))
        steering.append(cmd)
        throttle.append(100.0 * speed / MAX_SPEED)
        pose = step_vehicle(pose, cmd, speed)
    else:
        raise DriveError("waypoint timeout", pose, budget)
    if not render:
        images = np.zeros((len(steering), 0, 0, 0), np.float32)
    return RecordedRun(np.asarray(images, np.float32), steering, throttle, spec.course_id,
                       noise_seed if run_id is None else run_id, spec.mirrored)
