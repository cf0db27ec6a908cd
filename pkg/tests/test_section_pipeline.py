import logging
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oneshotnav.pipeline import (
    DatasetSplit,
    LEFT,
    NEAR_NEGATIVE,
    NEGATIVE,
    POSITIVE,
    RIGHT,
    STRAIGHT,
    PairStoreError,
    load_pairs,
    make_batches,
    mirror_run,
    normalize_steering,
    save_pairs,
    split_sections,
    split_train_val,
    generate_pairs,
)
from oneshotnav.sim import RecordedRun, generate_course, mirror_course, scripted_drive


def fake_run(steering, course="c", run_id=0, seed=0):
    steering = np.asarray(steering, np.float32)
    rng = np.random.default_rng(seed)
    images = rng.random((len(steering), 6, 3, 4), dtype=np.float32)
    return RecordedRun(images, steering, np.full(len(steering), 30.0), course, run_id)


def turn_trace(before=60, turn=40, after=60, peak=95.0):
    s = np.zeros(before + turn + after)
    s[before : before + turn] = np.concatenate([np.linspace(30, peak, turn // 2), np.linspace(peak, 30, turn - turn // 2)])
    return s


# ---------------------------------------------------------------- normalization


def test_normalize_steering_anchor_points():
    assert normalize_steering(5.0, (0.0, 10.0)) == 0.0
    assert normalize_steering(10.0, (0.0, 10.0)) == 100.0
    assert normalize_steering(2.5, (0.0, 10.0)) == -50.0
    assert normalize_steering(20.0, (0.0, 10.0)) == 100.0
    np.testing.assert_allclose(normalize_steering([0.0, 10.0], (0.0, 10.0)), [-100.0, 100.0])


def test_normalize_steering_rejects_degenerate_calibration():
    with pytest.raises(ValueError, match="degenerate"):
        normalize_steering(1.0, (3.0, 3.0))


# ---------------------------------------------------------------- splitting


def test_zero_trace_is_one_straight_section():
    lay = split_sections(np.zeros(50))
    assert lay.directions == [STRAIGHT]
    assert (lay[0].start, lay[0].last) == (0, 49)


def test_hand_built_right_turn():
    lay = split_sections(turn_trace())
    assert lay.directions == [STRAIGHT, RIGHT, STRAIGHT]
    assert [(s.start, s.last) for s in lay] == [(0, 59), (60, 99), (100, 159)]


def test_block_peaking_below_90_stays_straight():
    lay = split_sections(turn_trace(peak=80.0))
    assert lay.directions == [STRAIGHT]


def test_threshold_is_strict_and_peak_inclusive():
    s = np.zeros(30)
    s[10:15] = [25, 60, 90, 60, 25]
    lay = split_sections(s)
    # 25 itself is not a turn frame; the block is frames 11-13
    assert [(x.direction, x.start, x.last) for x in lay] == [(STRAIGHT, 0, 10), (RIGHT, 11, 13), (STRAIGHT, 14, 29)]


def test_consecutive_same_turns_separated_by_straight():
    s = np.concatenate([turn_trace(20, 30, 20, -95), turn_trace(0, 30, 20, -95)])
    assert split_sections(s).directions == [STRAIGHT, LEFT, STRAIGHT, LEFT, STRAIGHT]


def test_empty_trace_rejected():
    with pytest.raises(ValueError):
        split_sections(np.zeros(0))


def test_section_regions():
    sec = split_sections(turn_trace())[0]  # frames 0-59
    assert list(sec.end_frames) == list(range(45, 60))
    assert sec.body_last == 44
    assert list(sec.body) == list(range(0, 45))
    assert list(sec.test_buffer) == list(range(30, 45))
    assert list(sec.training_buffer) == list(range(35, 45))


@settings(max_examples=200)
@given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=200))
def test_sections_partition_the_run_and_respect_rules(trace):
    lay = split_sections(trace)
    assert lay[0].start == 0 and lay[-1].last == len(trace) - 1
    for a, b in zip(lay.sections[:-1], lay.sections[1:]):
        assert b.start == a.last + 1
        assert a.direction != b.direction
    s = np.asarray(trace)
    for sec in lay:
        seg = s[sec.start : sec.last + 1]
        if sec.direction != STRAIGHT:
            assert np.all(np.abs(seg) > 25)
            peak = seg[np.argmax(np.abs(seg))]
            assert abs(peak) >= 90
            assert (peak > 0) == (sec.direction == RIGHT)
    # idempotent: splitting depends only on the trace
    assert split_sections(trace) == lay
    for f in (0, len(trace) - 1):
        sec = lay[lay.section_of(f)]
        assert sec.start <= f <= sec.last


# ---------------------------------------------------------------- pairs


def three_runs(trace=None):
    trace = turn_trace() if trace is None else trace
    return [fake_run(trace, run_id=k, seed=k) for k in range(3)]


def test_pair_counts_three_runs_one_section():
    runs = three_runs(np.zeros(80))
    pairs = generate_pairs(runs, seed=1)
    kinds = Counter(p.kind for p in pairs)
    assert kinds[POSITIVE] == 6 * 6 * 3 * 3 == 324
    assert kinds[NEGATIVE] == 648
    assert all(p.label == 1 for p in pairs if p.kind == POSITIVE)


def test_single_run_gives_36_positives_from_itself():
    run = fake_run(np.zeros(80))
    pos = [p for p in generate_pairs([run]) if p.label == 1]
    assert len(pos) == 36
    assert all(p.ref_run == p.test_run == run.key for p in pos)


def test_pair_windows_respect_section_regions():
    runs = three_runs()
    layout = split_sections(runs[0])
    pairs = generate_pairs(runs, seed=3)
    assert {p.section for p in pairs} == {0, 1, 2}
    for p in pairs:
        sec = layout[p.section]
        assert set(p.ref_frames()) <= set(sec.end_frames)
        if p.label == 1:
            assert set(p.test_frames()) <= set(sec.end_frames)
        else:
            assert p.test_start >= sec.start
            assert max(p.test_frames()) < min(sec.training_buffer)
    # ratio exactly 2:1 per course
    c = Counter(p.label for p in pairs)
    assert c[0] == 2 * c[1]


def test_no_negative_overlaps_positive_window_of_same_reference():
    pairs = generate_pairs(three_runs(), seed=5)
    by_ref = {}
    for p in pairs:
        by_ref.setdefault((p.section, p.ref_run, p.ref_start), []).append(p)
    for group in by_ref.values():
        pos_frames = {(p.test_run, f) for p in group if p.label == 1 for f in p.test_frames()}
        for p in group:
            if p.label == 0:
                frames = {(p.test_run, f) for f in p.test_frames()}
                assert not frames & pos_frames
                gap = min(q.test_start for q in group if q.label == 1 and q.test_run == p.test_run) - max(p.test_frames())
                assert gap > 10


def test_short_sections_skipped_with_warning(caplog):
    trace = turn_trace(before=20, turn=40, after=60)
    with caplog.at_level(logging.WARNING):
        pairs = generate_pairs(three_runs(trace))
    assert 0 not in {p.section for p in pairs}
    assert "section 0" in caplog.text


def test_misaligned_runs_rejected():
    runs = [fake_run(turn_trace(), run_id=0), fake_run(np.zeros(160), run_id=1)]
    with pytest.raises(ValueError, match="align"):
        generate_pairs(runs)


def test_near_negatives_tagged_and_doubled():
    runs = three_runs()
    base = generate_pairs(runs, seed=2)
    near = generate_pairs(runs, seed=2, near_negatives=True)
    n_near = sum(p.kind == NEAR_NEGATIVE for p in near)
    assert n_near > 0 and n_near % 2 == 0
    assert len(near) == len(base) + n_near // 2
    layout = split_sections(runs[0])
    for p in near:
        if p.kind == NEAR_NEGATIVE:
            sec = layout[p.section]
            last = max(p.test_frames())
            assert sec.end_start - 15 <= last < sec.end_start


def test_pair_generation_is_seeded():
    runs = three_runs()
    assert generate_pairs(runs, seed=4) == generate_pairs(runs, seed=4)
    assert generate_pairs(runs, seed=4) != generate_pairs(runs, seed=5)


# ---------------------------------------------------------------- splits and batches


def test_split_train_val_sizes_and_partition():
    pairs = generate_pairs(three_runs(np.zeros(80)), seed=0)[:1000]
    assert len(pairs) == 972
    pairs = pairs + pairs[:28]
    train, val = split_train_val(pairs, 0.15, seed=9)
    assert (len(train), len(val)) == (850, 150)
    assert Counter(train) + Counter(val) == Counter(pairs)
    again = split_train_val(pairs, 0.15, seed=9)
    assert again == (train, val)
    with pytest.raises(ValueError):
        split_train_val(pairs, 1.0)


def test_batches_single_group_full_coverage_and_determinism():
    pairs = generate_pairs(three_runs(), seed=0) + generate_pairs(
        [fake_run(np.zeros(80), course="d", run_id=k) for k in range(2)], seed=0)
    batches = make_batches(pairs, 8, seed=3, epoch=1)
    for b in batches:
        assert len({p.group for p in b}) == 1
        assert 1 <= len(b) <= 8
    assert Counter(p for b in batches for p in b) == Counter(pairs)
    assert make_batches(pairs, 8, seed=3, epoch=1) == batches
    assert make_batches(pairs, 8, seed=3, epoch=2) != batches
    mixed = sum(len({p.label for p in b}) == 2 for b in batches)
    assert mixed >= 0.9 * len(batches)


def test_small_group_emitted_as_short_batch():
    pairs = generate_pairs([fake_run(np.zeros(80))])[:5]
    assert [len(b) for b in make_batches(pairs, 8, seed=0)] == [5]


def test_batch_cap_per_group():
    pairs = generate_pairs(three_runs(), seed=0)
    batches = make_batches(pairs, 8, seed=0, max_batches_per_group=4)
    assert len(batches) == 12
    assert all(c == 4 for c in Counter(b[0].group for b in batches).values())


def test_dataset_split_rejects_overlap():
    with pytest.raises(ValueError, match="both base and novel"):
        DatasetSplit(("a", "b"), ("b",))


# ---------------------------------------------------------------- pair store


def test_pair_store_round_trip_and_bytes(tmp_path):
    runs = three_runs()
    pairs = generate_pairs(runs, seed=1, near_negatives=True)
    files = {r.key: f"runs/{r.run_id}.osr" for r in runs}
    a, b = tmp_path / "a.osp", tmp_path / "b.osp"
    save_pairs(a, pairs, files)
    save_pairs(b, generate_pairs(three_runs(), seed=1, near_negatives=True), files)
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes()[:4] == b"OSP1"
    back, back_files = load_pairs(a)
    assert back == pairs and back_files == files
    a.write_bytes(a.read_bytes()[:-3])
    with pytest.raises(PairStoreError, match="truncated"):
        load_pairs(a)


# ---------------------------------------------------------------- mirroring


def test_mirror_is_bit_exact_involution():
    run = fake_run(turn_trace(peak=-97), seed=3)
    m = mirror_run(run)
    assert m.mirrored and m.course_id != run.course_id
    np.testing.assert_array_equal(m.steering, -run.steering)
    np.testing.assert_array_equal(m.images[:, 0:3], run.images[:, 3:6, :, ::-1])
    back = mirror_run(m)
    assert back.images.tobytes() == run.images.tobytes()
    assert back.steering.tobytes() == run.steering.tobytes()
    assert back.course_id == run.course_id and back.mirrored == run.mirrored


def test_mirrored_left_turn_splits_as_right():
    run = fake_run(turn_trace(peak=-97))
    assert split_sections(run).directions == [STRAIGHT, LEFT, STRAIGHT]
    assert split_sections(mirror_run(run)).directions == [STRAIGHT, RIGHT, STRAIGHT]


# ---------------------------------------------------------------- against the simulator


def test_scripted_left_turn_splits_into_three_sections():
    run = scripted_drive(generate_course(1, "L"), noise_seed=1, render=False)
    assert split_sections(run).directions == [STRAIGHT, LEFT, STRAIGHT]


def test_scripted_runs_share_section_structure():
    spec = generate_course(6, "RL")
    runs = [scripted_drive(spec, s, render=False) for s in (1, 2, 3)]
    layouts = [split_sections(r) for r in runs]
    assert all(lay.directions == [STRAIGHT, RIGHT, STRAIGHT, LEFT, STRAIGHT] for lay in layouts)
    assert len({r.steering.tobytes() for r in runs}) == 3


@pytest.mark.parametrize("seed,turns", [(12, "LR"), (13, "RR")])
def test_mirror_property_against_simulator(seed, turns):
    spec = generate_course(seed, turns)
    a = mirror_run(scripted_drive(spec, 2))
    b = scripted_drive(mirror_course(spec), 2)
    la, lb = split_sections(a), split_sections(b)
    assert [(s.direction, s.start, s.last) for s in la] == [(s.direction, s.start, s.last) for s in lb]
    assert la.directions == [{LEFT: RIGHT, RIGHT: LEFT}.get(d, d) for d in split_sections(mirror_run(a)).directions]
    assert a.course_id == b.course_id
    close = np.abs(a.images - b.images) < 1e-3
    assert close.mean() > 0.995
