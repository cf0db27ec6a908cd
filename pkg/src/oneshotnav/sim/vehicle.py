"""Kinematic bicycle model."""

import math
from dataclasses import dataclass

FPS = 15
DT = 1.0 / FPS
WHEELBASE_M = 0.5
MAX_WHEEL_DEG = 30.0
STEER_LIMIT = 100.0


def wrap_angle(a):
    """Map an angle to (-pi, pi]."""
    a = math.fmod(a, 2 * math.pi)
    if a <= -math.pi:
        a += 2 * math.pi
    elif a > math.pi:
        a -= 2 * math.pi
    return a


@dataclass(frozen=True)
class VehiclePose:
    x: float
    y: float
    heading: float
    speed: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "heading", wrap_angle(self.heading))


def wheel_angle(steering):
    """Linear map from normalized steering to front wheel angle (radians)."""
    s = max(-STEER_LIMIT, min(STEER_LIMIT, float(steering)))
    return math.radians(MAX_WHEEL_DEG) * s / STEER_LIMIT


def steering_for_angle(delta):
    return max(-STEER_LIMIT, min(STEER_LIMIT, STEER_LIMIT * delta / math.radians(MAX_WHEEL_DEG)))


def turn_radius(steering):
    d = wheel_angle(steering)
    return math.inf if d == 0 else WHEELBASE_M / math.tan(abs(d))


def step_vehicle(pose, steering, speed, dt=DT):
    """Advance the rear-axle pose by one step holding steering and speed.

    The step integrates the constant-curvature motion exactly, so repeated
    steps with the same steering trace a true circle.
    """
    delta = wheel_angle(steering)
    dist = speed * dt
    th = pose.heading
    if delta == 0.0:
        return VehiclePose(pose.x + dist * math.cos(th), pose.y + dist * math.sin(th), th, speed)
    kappa = math.tan(delta) / WHEELBASE_M
    sweep = dist * kappa
    # chord of the arc, written to stay accurate for tiny sweeps
    half = 0.5 * sweep
    chord = dist * (math.sin(half) / half) if half != 0.0 else dist
    mid = th + half
    return VehiclePose(pose.x + chord * math.cos(mid), pose.y + chord * math.sin(mid), th + sweep, speed)
