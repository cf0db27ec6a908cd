"""Column raycaster producing stacked stereo RGB images."""

import math

import numpy as np

IMAGE_HEIGHT = 47
IMAGE_WIDTH = 84
CHANNELS = 6
WALL_HEIGHT_M = 1.0
CAMERA_HEIGHT_M = 0.35
N_TEXTURES = 10


class PoseError(ValueError):
    """A pose (or camera position) that lies inside a wall."""


def _palette(seed):
    rng = np.random.default_rng([int(seed), 7919])
    colors = rng.uniform(0.15, 0.95, size=(N_TEXTURES, 3))
    freqs = rng.integers(1, 4, size=N_TEXTURES).astype(np.float64)
    return colors, freqs


def _cell_hash(rows, cols, seed):
    # cheap integer hash -> [0, 1)
    h = (rows.astype(np.uint64) * np.uint64(73856093)) ^ (cols.astype(np.uint64) * np.uint64(19349663))
    h ^= np.uint64(int(seed) & 0xFFFFFFFF) * np.uint64(83492791)
    h = (h ^ (h >> np.uint64(13))) * np.uint64(0x5BD1E995)
    h ^= h >> np.uint64(15)
    return (h & np.uint64(0xFFFF)).astype(np.float64) / 65536.0


def cast_rays(spec, origin, directions, max_steps=None):
    """Grid DDA from ``origin`` along each direction (rows of ``directions``).

    Returns (t, side, cell_row, cell_col, hit_u): ``t`` is the ray parameter at
    the first wall hit (distance in units of the direction vector), ``side`` is
    0 for faces crossed along x and 1 along y, ``hit_u`` is the hit position
    along the face in [0, 1).
    """
    cell = spec.cell_m
    px, py = origin[0] / cell, origin[1] / cell
    dx = directions[:, 0]
    dy = directions[:, 1]
    n = len(dx)
    map_x = np.full(n, int(math.floor(px)), dtype=np.int64)
    map_y = np.full(n, int(math.floor(py)), dtype=np.int64)
    # axis-aligned rays make 0 * inf in the branch np.where throws away
    with np.errstate(divide="ignore", invalid="ignore"):
        delta_x = np.where(dx == 0, np.inf, np.abs(1.0 / dx))
        delta_y = np.where(dy == 0, np.inf, np.abs(1.0 / dy))
        side_x = np.where(dx < 0, (px - map_x) * delta_x, (map_x + 1.0 - px) * delta_x)
        side_y = np.where(dy < 0, (py - map_y) * delta_y, (map_y + 1.0 - py) * delta_y)
    step_x = np.where(dx < 0, -1, 1)
    step_y = np.where(dy < 0, -1, 1)
    walls = spec.wall_mask()
    rows, cols = walls.shape
    hit = np.zeros(n, bool)
    side = np.zeros(n, np.int64)
    limit = max_steps or (rows + cols + 2)
    for _ in range(limit):
        active = ~hit
        if not active.any():
            break
        go_x = active & (side_x < side_y)
        go_y = active & ~go_x
        map_x = np.where(go_x, map_x + step_x, map_x)
        side_x = np.where(go_x, side_x + delta_x, side_x)
        map_y = np.where(go_y, map_y + step_y, map_y)
        side_y = np.where(go_y, side_y + delta_y, side_y)
        side = np.where(go_x, 0, np.where(go_y, 1, side))
        outside = (map_x < 0) | (map_y < 0) | (map_x >= cols) | (map_y >= rows)
        inside_wall = np.zeros(n, bool)
        ok = ~outside
        inside_wall[ok] = walls[map_y[ok], map_x[ok]]
        hit |= active & (outside | inside_wall)
    with np.errstate(invalid="ignore"):
        t = np.where(side == 0, side_x - delta_x, side_y - delta_y)
    along = np.where(side == 0, py + t * dy, px + t * dx)
    hit_u = along - np.floor(along)
    return t * cell, side, map_y, map_x, hit_u


def _render_eye(spec, eye, fwd, right, colors, freqs):
    W, H = IMAGE_WIDTH, IMAGE_HEIGHT
    half = math.tan(math.radians(spec.camera.fov_deg) / 2.0)
    u = ((np.arange(W) + 0.5) - W / 2.0) / (W / 2.0) * half
    dirs = fwd[None, :] + u[:, None] * right[None, :]
    t, side, crow, ccol, hit_u = cast_rays(spec, eye, dirs)
    t = np.maximum(t, 1e-3)
    focal = (W / 2.0) / half
    top = H / 2.0 - focal * (WALL_HEIGHT_M - CAMERA_HEIGHT_M) / t
    bot = H / 2.0 + focal * CAMERA_HEIGHT_M / t

    if spec.mirrored:
        # texture in the coordinates of the unmirrored world so reflections match
        ccol = spec.cols - 1 - ccol
        hit_u = np.where(side == 1, 1.0 - hit_u, hit_u)
    in_grid = (crow >= 0) & (crow < spec.rows) & (ccol >= 0) & (ccol < spec.cols)
    tex = np.zeros(W, np.int64)
    grid_tex = spec.texture_ids()
    if spec.mirrored:
        grid_tex = grid_tex[:, ::-1]
    tex[in_grid] = grid_tex[crow[in_grid], ccol[in_grid]]
    jitter = _cell_hash(np.where(in_grid, crow, 0), np.where(in_grid, ccol, 0), spec.palette)
    phase = jitter * 2.0 * math.pi
    bright = 0.7 + 0.3 * jitter
    shade = np.where(side == 0, 0.8, 1.0)

    rowc = np.arange(H)[:, None] + 0.5
    is_wall = (rowc >= top[None, :]) & (rowc < bot[None, :])
    v = np.clip((rowc - top[None, :]) / (bot - top)[None, :], 0.0, 1.0)
    f = (freqs[tex] * spec.texture_freq)[None, :]
    kind = (tex % 3)[None, :]
    su = np.cos(2 * math.pi * f * hit_u[None, :] + phase[None, :])
    sv = np.cos(2 * math.pi * f * v + phase[None, :])
    pattern = np.where(kind == 0, su, np.where(kind == 1, sv, np.tanh(3 * su * sv)))
    gain = (0.55 + 0.45 * (0.5 + 0.5 * pattern)) * (bright * shade)[None, :]
    wall_rgb = colors[tex].T[:, None, :] * gain[None, :, :]

    horizon = H / 2.0
    floor_level = np.clip((rowc - horizon) / (H - horizon), 0.0, 1.0)
    floor = np.array([0.30, 0.28, 0.25])[:, None, None] * (0.6 + 0.4 * floor_level)[None]
    ceiling = np.array([0.78, 0.80, 0.82])[:, None, None] * np.ones((1, H, 1))
    background = np.where((rowc < horizon)[None], ceiling, floor)
    img = np.where(is_wall[None], wall_rgb, np.broadcast_to(background, (3, H, W)))
    return np.clip(img, 0.0, 1.0)


def eye_positions(spec, pose):
    fwd = np.array([math.cos(pose.heading), math.sin(pose.heading)])
    right = np.array([-math.sin(pose.heading), math.cos(pose.heading)])
    center = np.array([pose.x, pose.y])
    b = spec.camera.baseline_m / 2.0
    return center - b * right, center + b * right, fwd, right


def render_stereo(spec, pose):
    """Render a 6×47×84 float32 image; channels 0-2 left eye, 3-5 right eye."""
    if spec.is_wall_at(pose.x, pose.y):
        raise PoseError(f"pose ({pose.x:.3f}, {pose.y:.3f}) lies inside a wall cell")
    left, right_eye, fwd, right = eye_positions(spec, pose)
    for name, eye in (("left", left), ("right", right_eye)):
        if spec.is_wall_at(eye[0], eye[1]):
            raise PoseError(f"{name} camera at ({eye[0]:.3f}, {eye[1]:.3f}) lies inside a wall cell")
    colors, freqs = _palette(spec.palette)
    out = np.empty((CHANNELS, IMAGE_HEIGHT, IMAGE_WIDTH), np.float32)
    out[0:3] = _render_eye(spec, left, fwd, right, colors, freqs)
    out[3:6] = _render_eye(spec, right_eye, fwd, right, colors, freqs)
    return out


def range_scan(spec, pose, angles_deg):
    """Distance to the nearest wall along each bearing (degrees, + is right)."""
    a = pose.heading + np.radians(np.asarray(angles_deg, np.float64))
    dirs = np.stack([np.cos(a), np.sin(a)], axis=1)
    t, *_ = cast_rays(spec, (pose.x, pose.y), dirs)
    return t
