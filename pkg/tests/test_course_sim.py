import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oneshotnav.sim import (
    CourseError,
    CourseSpec,
    DriveError,
    IMAGE_WIDTH,
    PoseError,
    RecordedRun,
    RunFormatError,
    VehiclePose,
    cast_rays,
    dump_course_spec,
    generate_course,
    load_course_spec,
    load_run,
    mirror_course,
    render_stereo,
    save_run,
    scripted_drive,
    step_vehicle,
    turn_radius,
    wrap_angle,
)
from oneshotnav.sim.vehicle import DT

CORRIDOR = {
    "grid": [
        "##########",
        "#12345678#",
        "#........#",
        "#........#",
        "#87654321#",
        "##########",
    ],
    "waypoints": [[1.5, 3.0], [8.5, 3.0]],
    "seed": 4,
    "camera": {"fov_deg": 90, "baseline_m": 0.12},
}


def corridor_spec(**changes):
    doc = dict(CORRIDOR, **changes)
    return load_course_spec(json.dumps(doc))


def test_minimal_corridor_loads():
    spec = corridor_spec()
    assert spec.rows == 6 and spec.cols == 10
    assert spec.camera.baseline_m == 0.12


def test_waypoint_in_wall_names_index():
    with pytest.raises(CourseError, match="waypoint 1"):
        corridor_spec(waypoints=[[1.5, 3.0], [0.5, 0.5]])


def test_unreachable_waypoint_rejected():
    doc = dict(CORRIDOR)
    doc["grid"] = list(CORRIDOR["grid"])
    doc["grid"][2] = "#....#...#"
    doc["grid"][3] = "#....#...#"
    with pytest.raises(CourseError, match="not reachable from waypoint 0"):
        load_course_spec(json.dumps(doc))


def test_malformed_document_reports_line():
    with pytest.raises(CourseError, match="line 2"):
        load_course_spec('{\n "grid": [,]\n}')


def test_ragged_grid_names_row():
    doc = dict(CORRIDOR, grid=CORRIDOR["grid"][:2] + ["#.."] + CORRIDOR["grid"][3:])
    with pytest.raises(CourseError, match="grid row 2"):
        load_course_spec(json.dumps(doc))


def test_nonpositive_baseline_rejected():
    with pytest.raises(CourseError, match="baseline"):
        corridor_spec(camera={"fov_deg": 90, "baseline_m": 0.0})


@pytest.mark.parametrize("seed,turns", [(0, ""), (1, "L"), (2, "RL"), (5, "LLR")])
def test_spec_round_trip(seed, turns):
    spec = generate_course(seed, turns)
    again = load_course_spec(dump_course_spec(spec))
    assert again == spec
    assert dump_course_spec(again) == dump_course_spec(spec)


def test_mirror_course_is_involution():
    spec = generate_course(9, "LR")
    assert mirror_course(mirror_course(spec)) == spec
    assert mirror_course(spec).course_id != spec.course_id


# ---------------------------------------------------------------- rendering


def test_render_is_deterministic_and_bounded():
    spec = corridor_spec()
    pose = VehiclePose(2.0, 3.1, 0.05)
    a = render_stereo(spec, pose)
    b = render_stereo(spec, pose)
    assert a.shape == (6, 47, 84) and a.dtype == np.float32
    assert a.tobytes() == b.tobytes()
    assert a.min() >= 0.0 and a.max() <= 1.0


def test_pose_inside_wall_rejected():
    with pytest.raises(PoseError):
        render_stereo(corridor_spec(), VehiclePose(0.5, 0.5, 0.0))


def _projected_columns(eye, fwd, right, corners, fov_deg=90.0):
    # geometry oracle: column centers inside the silhouette of a convex block
    half = math.tan(math.radians(fov_deg) / 2)
    us = []
    for p in corners:
        d = np.asarray(p) - eye
        us.append((d @ right) / (d @ fwd))
    lo, hi = min(us), max(us)
    centers = ((np.arange(IMAGE_WIDTH) + 0.5) - IMAGE_WIDTH / 2) / (IMAGE_WIDTH / 2) * half
    return int(np.sum((centers > lo) & (centers < hi)))


def test_parallax_wall_on_left_is_wider_in_left_eye():
    # open room with one wall cell just left of and ahead of the vehicle
    grid = ["#" * 12] + ["#" + "." * 10 + "#" for _ in range(10)] + ["#" * 12]
    row = list(grid[4])
    row[5] = "3"
    grid[4] = "".join(row)
    spec = load_course_spec(json.dumps({"grid": grid, "waypoints": [[2.5, 6.0], [9.5, 6.0]]}))
    pose = VehiclePose(4.6, 5.35, 0.0)
    fwd = np.array([1.0, 0.0])
    right = np.array([0.0, 1.0])
    center = np.array([pose.x, pose.y])
    counts = {}
    for name, eye in (("left", center - 0.06 * right), ("right", center + 0.06 * right)):
        half = math.tan(math.radians(45))
        u = ((np.arange(IMAGE_WIDTH) + 0.5) - IMAGE_WIDTH / 2) / (IMAGE_WIDTH / 2) * half
        dirs = fwd[None] + u[:, None] * right[None]
        _, _, crow, ccol, _ = cast_rays(spec, eye, dirs)
        seen = int(np.sum((crow == 4) & (ccol == 5)))
        # all corners are in front of the eyes, so the silhouette is their span
        oracle = _projected_columns(eye, fwd, right, [(5.0, 4.0), (6.0, 4.0), (5.0, 5.0), (6.0, 5.0)])
        assert seen == oracle
        counts[name] = seen
    assert counts["left"] > counts["right"]


def test_mirrored_world_renders_flipped_swapped_image():
    spec = generate_course(11, "RL")
    pose = VehiclePose(*_start_pose(spec, 1.3, 0.07, 0.2))
    m = mirror_course(spec)
    mpose = VehiclePose(spec.width_m - pose.x, pose.y, math.pi - pose.heading)
    img = render_stereo(spec, pose)
    mimg = render_stereo(m, mpose)
    expect = np.concatenate([img[3:6, :, ::-1], img[0:3, :, ::-1]])
    close = np.abs(mimg - expect) < 1e-4
    assert close.mean() > 0.995


def _start_pose(spec, along, lateral, dheading):
    (x0, y0), (x1, y1) = spec.waypoints[:2]
    h = math.atan2(y1 - y0, x1 - x0)
    return (x0 + along * math.cos(h) - lateral * math.sin(h),
            y0 + along * math.sin(h) + lateral * math.cos(h), h + dheading)


# ---------------------------------------------------------------- vehicle


def test_zero_steering_translates():
    p = step_vehicle(VehiclePose(1.0, 2.0, 0.3, 0.6), 0.0, 0.6, DT)
    assert p.x == pytest.approx(1.0 + 0.6 * DT * math.cos(0.3), abs=1e-12)
    assert p.y == pytest.approx(2.0 + 0.6 * DT * math.sin(0.3), abs=1e-12)
    assert p.heading == pytest.approx(0.3)


@pytest.mark.parametrize("steer", [40.0, -70.0, 100.0])
def test_constant_steering_follows_closed_form_circle(steer):
    x0, y0, h0, v, n = 1.0, -0.5, 0.4, 0.6, 90
    pose = VehiclePose(x0, y0, h0, v)
    for _ in range(n):
        pose = step_vehicle(pose, steer, v, DT)
    r = turn_radius(steer)
    side = math.copysign(1.0, steer)
    # right turn (+) curves toward the right normal (-sin h, cos h)
    cx = x0 - side * r * math.sin(h0)
    cy = y0 + side * r * math.cos(h0)
    sweep = side * n * v * DT / r
    a0 = math.atan2(y0 - cy, x0 - cx)
    assert pose.x == pytest.approx(cx + r * math.cos(a0 + sweep), abs=1e-9)
    assert pose.y == pytest.approx(cy + r * math.sin(a0 + sweep), abs=1e-9)
    assert pose.heading == pytest.approx(wrap_angle(h0 + sweep), abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.floats(-100, 100), st.floats(-math.pi, math.pi), st.integers(1, 40))
def test_opposite_steering_mirrors_trajectory(steer, heading, n):
    # reflect about the heading line through the start point
    a = b = VehiclePose(0.0, 0.0, heading, 0.6)
    for _ in range(n):
        a = step_vehicle(a, steer, 0.6, DT)
        b = step_vehicle(b, -steer, 0.6, DT)
    f = np.array([math.cos(heading), math.sin(heading)])
    r = np.array([-f[1], f[0]])
    pa, pb = np.array([a.x, a.y]), np.array([b.x, b.y])
    assert pa @ f == pytest.approx(pb @ f, abs=1e-9)
    assert pa @ r == pytest.approx(-(pb @ r), abs=1e-9)
    assert wrap_angle(a.heading - heading) == pytest.approx(-wrap_angle(b.heading - heading), abs=1e-9)


@settings(max_examples=100)
@given(st.floats(-50, 50))
def test_heading_wrapped(h):
    w = VehiclePose(0, 0, h).heading
    assert -math.pi < w <= math.pi
    assert math.cos(w) == pytest.approx(math.cos(h), abs=1e-9)


# ---------------------------------------------------------------- scripted drive


def test_straight_course_never_crosses_turn_threshold():
    run = scripted_drive(generate_course(2, ""), noise_seed=5)
    assert len(run) > 50
    assert np.all(np.abs(run.steering) < 25)


def test_turn_peaks_and_straights():
    run = scripted_drive(generate_course(3, "R"), noise_seed=1, render=False)
    assert run.steering.max() >= 90
    assert np.abs(run.steering[:100]).max() < 25


def test_seeded_runs_differ_but_repeat():
    spec = generate_course(7, "L")
    a = scripted_drive(spec, 1)
    b = scripted_drive(spec, 2)
    a2 = scripted_drive(spec, 1)
    assert a.images.tobytes() == a2.images.tobytes()
    assert np.array_equal(a.steering, a2.steering)
    assert not np.array_equal(a.steering[: min(len(a), len(b))], b.steering[: min(len(a), len(b))])


def test_collision_reports_pose():
    # one-cell-wide corridor with a sharp corner: the turn radius cannot fit
    grid = ["#######", "#.....#", "#####.#", "#####.#", "#####.#", "#######"]
    spec = CourseSpec(grid=tuple(grid), waypoints=((1.5, 1.5), (5.5, 1.5), (5.5, 4.5)))
    with pytest.raises(DriveError, match="collision.*pose x="):
        scripted_drive(spec, 0, render=False)


def test_mirrored_drive_reflects_original():
    spec = generate_course(4, "L")
    a = scripted_drive(spec, 3, render=False)
    b = scripted_drive(mirror_course(spec), 3, render=False)
    assert len(a) == len(b)
    assert np.allclose(a.steering, -b.steering, atol=1e-3)


# ---------------------------------------------------------------- run files


def test_run_file_round_trip(tmp_path):
    spec = generate_course(1, "L")
    run = scripted_drive(spec, 2, max_frames=None)
    path = tmp_path / "r.osr"
    save_run(run, path)
    back = load_run(path)
    assert back.course_id == run.course_id and back.run_id == run.run_id
    assert back.mirrored == run.mirrored
    assert np.array_equal(np.asarray(back.images), run.images)
    assert np.array_equal(back.steering, run.steering)
    assert np.array_equal(back.throttle, run.throttle)
    assert path.read_bytes()[:4] == b"OSR1"
    fr = back.frame(30)
    assert fr.index == 30 and fr.timestamp == pytest.approx(2.0)


def test_truncated_run_file_rejected(tmp_path):
    run = RecordedRun(np.zeros((3, 6, 4, 5), np.float32), [0, 1, 2], [0, 0, 0], "c", 1)
    path = tmp_path / "r.osr"
    save_run(run, path)
    data = path.read_bytes()
    path.write_bytes(data[:-7])
    with pytest.raises(RunFormatError, match="does not match"):
        load_run(path)
    path.write_bytes(b"XXXX" + data[4:])
    with pytest.raises(RunFormatError, match="magic"):
        load_run(path)


def test_frames_must_be_contiguous():
    run = RecordedRun(np.zeros((3, 6, 4, 5), np.float32), [0, 1, 2], [0, 0, 0], "c", 1)
    frames = run.frames()
    with pytest.raises(ValueError, match="contiguous"):
        RecordedRun.from_frames([frames[0], frames[2]], "c", 1)
    assert RecordedRun.from_frames(frames, "c", 1).images.shape == (3, 6, 4, 5)
