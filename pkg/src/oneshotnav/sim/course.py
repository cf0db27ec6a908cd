"""Course specifications: a grid of textured wall cells plus a waypoint route.

Coordinates are meters with x growing along grid columns and y growing along
grid rows (so +y points "down" the map). Headings are measured from +x toward
+y, which makes a positive heading change a right turn.
"""

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

WALL = "#"
FREE = "."


class CourseError(ValueError):
    """A course document or spec that violates the course invariants."""


@dataclass(frozen=True)
class Camera:
    fov_deg: float = 90.0
    baseline_m: float = 0.12


@dataclass(frozen=True)
class CourseSpec:
    grid: tuple
    waypoints: tuple
    seed: int = 0
    camera: Camera = field(default_factory=Camera)
    course_id: str = "course"
    cell_m: float = 1.0
    texture_freq: float = 2.0
    palette_seed: int = None
    mirrored: bool = False

    @property
    def rows(self):
        return len(self.grid)

    @property
    def cols(self):
        return len(self.grid[0])

    @property
    def width_m(self):
        return self.cols * self.cell_m

    @property
    def height_m(self):
        return self.rows * self.cell_m

    @property
    def palette(self):
        return self.seed if self.palette_seed is None else self.palette_seed

    def cell(self, row, col):
        if row < 0 or col < 0 or row >= self.rows or col >= self.cols:
            return WALL
        return self.grid[row][col]

    def is_wall_cell(self, row, col):
        return self.cell(row, col) != FREE

    def is_wall_at(self, x, y):
        return self.is_wall_cell(int(math.floor(y / self.cell_m)), int(math.floor(x / self.cell_m)))

    def wall_mask(self):
        return np.array([[ch != FREE for ch in row] for row in self.grid], dtype=bool)

    def texture_ids(self):
        """Per-cell texture id; plain walls use id 0."""
        return np.array([[int(ch) if ch.isdigit() else 0 for ch in row] for row in self.grid], dtype=np.int64)

    def segment_clear(self, a, b, step=0.05):
        ax, ay = a
        bx, by = b
        n = max(1, int(math.ceil(math.hypot(bx - ax, by - ay) / step)))
        for k in range(n + 1):
            t = k / n
            if self.is_wall_at(ax + t * (bx - ax), ay + t * (by - ay)):
                return False
        return True


def validate(spec):
    """Check every CourseSpec invariant, raising CourseError with the offending field."""
    if not spec.grid:
        raise CourseError("grid: empty")
    width = len(spec.grid[0])
    for r, row in enumerate(spec.grid):
        if len(row) != width:
            raise CourseError(f"grid row {r}: length {len(row)} differs from row 0 length {width}")
        for c, ch in enumerate(row):
            if ch not in (WALL, FREE) and not ch.isdigit():
                raise CourseError(f"grid row {r} column {c}: unknown cell character {ch!r}")
    if spec.camera.baseline_m <= 0:
        raise CourseError("camera.baseline_m: must be positive")
    if not 0 < spec.camera.fov_deg < 180:
        raise CourseError("camera.fov_deg: must lie in (0, 180)")
    if spec.cell_m <= 0:
        raise CourseError("cell_m: must be positive")
    if len(spec.waypoints) < 2:
        raise CourseError("waypoints: need at least 2")
    for i, (x, y) in enumerate(spec.waypoints):
        if spec.is_wall_at(x, y):
            raise CourseError(f"waypoint {i} at ({x}, {y}) lies inside a wall cell")
    for i in range(len(spec.waypoints) - 1):
        if not spec.segment_clear(spec.waypoints[i], spec.waypoints[i + 1]):
            raise CourseError(f"waypoint {i + 1} is not reachable from waypoint {i} along a free straight segment")
    return spec


def load_course_spec(text):
    """Parse a JSON course document into a validated CourseSpec."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CourseError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise CourseError("document: expected a JSON object")
    for key in ("grid", "waypoints"):
        if key not in doc:
            raise CourseError(f"{key}: missing required field")
    grid = doc["grid"]
    if not isinstance(grid, list) or not all(isinstance(r, str) for r in grid):
        raise CourseError("grid: expected an array of strings")
    wps = []
    for i, wp in enumerate(doc["waypoints"]):
        if not (isinstance(wp, (list, tuple)) and len(wp) == 2 and all(isinstance(v, (int, float)) for v in wp)):
            raise CourseError(f"waypoints[{i}]: expected [x, y] in meters")
        wps.append((float(wp[0]), float(wp[1])))
    cam = doc.get("camera", {})
    try:
        camera = Camera(fov_deg=float(cam.get("fov_deg", 90.0)), baseline_m=float(cam.get("baseline_m", 0.12)))
        spec = CourseSpec(
            grid=tuple(grid),
            waypoints=tuple(wps),
            seed=int(doc.get("seed", 0)),
            camera=camera,
            course_id=str(doc.get("course_id", "course")),
            cell_m=float(doc.get("cell_m", 1.0)),
            texture_freq=float(doc.get("texture_freq", 2.0)),
            palette_seed=None if doc.get("palette_seed") is None else int(doc["palette_seed"]),
            mirrored=bool(doc.get("mirrored", False)),
        )
    except (TypeError, ValueError) as exc:
        raise CourseError(f"field value: {exc}") from None
    return validate(spec)


def dump_course_spec(spec):
    doc = {
        "course_id": spec.course_id,
        "seed": spec.seed,
        "palette_seed": spec.palette_seed,
        "cell_m": spec.cell_m,
        "texture_freq": spec.texture_freq,
        "mirrored": spec.mirrored,
        "camera": {"fov_deg": spec.camera.fov_deg, "baseline_m": spec.camera.baseline_m},
        "grid": list(spec.grid),
        "waypoints": [list(wp) for wp in spec.waypoints],
    }
    return json.dumps(doc, indent=1)


def mirror_course(spec):
    """Reflect the world left-right; the result is treated as a separate course."""
    w = spec.width_m
    return replace(
        spec,
        grid=tuple(row[::-1] for row in spec.grid),
        waypoints=tuple((w - x, y) for x, y in spec.waypoints),
        course_id=mirrored_id(spec.course_id),
        mirrored=not spec.mirrored,
    )


MIRROR_SUFFIX = "~m"


def mirrored_id(course_id):
    if course_id.endswith(MIRROR_SUFFIX):
        return course_id[: -len(MIRROR_SUFFIX)]
    return course_id + MIRROR_SUFFIX


# ---------------------------------------------------------------- generation

_HEADINGS = ((1, 0), (0, 1), (-1, 0), (0, -1))  # E, S, W, N in (dx, dy)


def generate_course(seed, turns, course_id=None, segment_cells=(5, 7), final_cells=4, margin=3):
    """Build a random Manhattan corridor course with the given turn sequence.

    ``turns`` is a string over {'L', 'R'}. Corridors are two cells wide with
    the route on the shared cell edge; every wall cell facing a corridor gets
    a random texture digit so that places along a corridor look different.
    """
    rng = np.random.default_rng(seed)
    lo, hi = segment_cells
    for _ in range(200):
        lengths = [int(rng.integers(lo, hi + 1)) for _ in range(len(turns))] + [final_cells]
        heading = int(rng.integers(0, 4))
        pts = [(0, 0)]
        h = heading
        for k, n in enumerate(lengths):
            dx, dy = _HEADINGS[h]
            x, y = pts[-1]
            pts.append((x + dx * n, y + dy * n))
            if k < len(turns):
                h = (h + (1 if turns[k] == "R" else -1)) % 4
        carve = _carve(pts, heading, h)
        if carve is not None:
            break
    else:
        raise CourseError(f"could not lay out a non-overlapping course for turns {turns!r}")
    free, (ox, oy) = carve
    rows, cols = free.shape
    rows += 2 * margin
    cols += 2 * margin
    grid = np.full((rows, cols), WALL, dtype="<U1")
    fr, fc = np.nonzero(free)
    grid[fr + margin, fc + margin] = FREE
    # texture digits on walls that border free space
    free_big = grid == FREE
    near = np.zeros_like(free_big)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            near |= np.roll(np.roll(free_big, dr, axis=0), dc, axis=1)
    faces = near & ~free_big
    digits = rng.integers(0, 10, size=grid.shape)
    grid[faces] = digits[faces].astype(str)
    shift_x, shift_y = ox + margin, oy + margin
    waypoints = tuple((float(x + shift_x), float(y + shift_y)) for x, y in pts)
    spec = CourseSpec(
        grid=tuple("".join(row) for row in grid),
        waypoints=waypoints,
        seed=int(seed),
        course_id=course_id or f"c{seed}-{turns or 'S'}",
        palette_seed=int(seed),
    )
    return validate(spec)


def _carve(pts, first_heading, last_heading, lead=2, tail=2):
    """Mark 2-wide corridor cells around the route; None if segments collide."""
    cells = {}
    ext = list(pts)
    dx0, dy0 = _HEADINGS[first_heading]
    dx1, dy1 = _HEADINGS[last_heading]
    ext[0] = (pts[0][0] - dx0 * lead, pts[0][1] - dy0 * lead)
    ext[-1] = (pts[-1][0] + dx1 * tail, pts[-1][1] + dy1 * tail)
    for seg, (a, b) in enumerate(zip(ext[:-1], ext[1:])):
        ax, ay = a
        bx, by = b
        x0, x1 = sorted((ax, bx))
        y0, y1 = sorted((ay, by))
        # a route on grid lines at integer coords: the corridor spans the cells on both sides
        for cx in range(x0 - 1, x1 + 1):
            for cy in range(y0 - 1, y1 + 1):
                owner = cells.get((cx, cy))
                if owner is not None and abs(owner - seg) > 1:
                    return None
                cells[(cx, cy)] = seg if owner is None else min(owner, seg)
    xs = [c[0] for c in cells]
    ys = [c[1] for c in cells]
    ox, oy = -min(xs), -min(ys)
    free = np.zeros((max(ys) + oy + 1, max(xs) + ox + 1), bool)
    for cx, cy in cells:
        free[cy + oy, cx + ox] = True
    # non-adjacent segments must also keep a wall between them
    for (cx, cy), seg in cells.items():
        for ddx in (-1, 0, 1):
            for ddy in (-1, 0, 1):
                other = cells.get((cx + ddx, cy + ddy))
                if other is not None and abs(other - seg) > 1:
                    return None
    return free, (ox, oy)
