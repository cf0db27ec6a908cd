import math
import re

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oneshotnav.metrics import (
    PredictionTrace,
    ScoreReport,
    SectionScore,
    combined_score,
    failure_boolean,
    render_report,
    report_table,
    section_body_accuracy,
    section_end_accuracy,
    trigger_success_boolean,
)
from oneshotnav.pipeline import Section, SectionLayout


def layout_of(lengths, directions=None):
    sections, start = [], 0
    directions = directions or ["straight" if k % 2 == 0 else "left" for k in range(len(lengths))]
    for n, d in zip(lengths, directions):
        sections.append(Section(d, start, start + n - 1))
        start += n
    return SectionLayout(tuple(sections), start)


# ---------------------------------------------------------------- independent oracle
# Written straight from the metric's prose, sharing no code with the module.


def oracle_section(p, start, last):
    end_lo = last - 14
    n = last - 15
    body = [i for i in range(start, n + 1)]
    num = den = 0
    for i in body:
        if p[i] != p[i]:
            continue
        den += n - i
        num += (n - i) * (1 if p[i] < 0.5 else 0)
    body_acc = 1.0 if den == 0 else num / den
    ends = list(range(max(start, end_lo), last + 1))
    end_acc = sum(1 for i in ends if p[i] > 0.5) / len(ends)
    buf_lo = max(start, n - 14)
    fail = False
    i = start
    while i <= n:
        if p[i] > 0.5:
            k = i
            while k + 1 <= n and p[k + 1] > 0.5:
                k += 1
            length = k - i + 1
            if i >= buf_lo:
                pass
            elif k >= buf_lo:
                fail = fail or length > 10
            else:
                fail = fail or length > 5
            i = k + 1
        else:
            i += 1
    best = cur = 0
    for i in range(buf_lo, last + 1):
        cur = cur + 1 if p[i] > 0.5 else 0
        best = max(best, cur)
    trig = best >= 5
    return body_acc, end_acc, fail, trig


def oracle_score(p, lengths):
    qs, failed, start = [], 0, 0
    for n in lengths:
        b, e, f, t = oracle_section(p, start, start + n - 1)
        qs.append(math.sqrt(b * e))
        failed += 1 if (f or not t) else 0
        start += n
    prod = 1.0
    for q in qs:
        prod *= q
    base = prod ** (1 / len(qs))
    return base * 0.5 ** failed


# ---------------------------------------------------------------- hand cases


def test_body_accuracy_weighted_example():
    lay = layout_of([20])  # body is frames 0..4
    p = np.zeros(20)
    p[2] = 1.0
    assert section_body_accuracy(PredictionTrace(p, lay), lay, 0) == pytest.approx(0.8)


def test_body_accuracy_extremes():
    lay = layout_of([40])
    assert section_body_accuracy(PredictionTrace(np.zeros(40), lay), lay, 0) == 1.0
    assert section_body_accuracy(PredictionTrace(np.ones(40), lay), lay, 0) == 0.0


def test_empty_body_defaults_to_one(caplog):
    lay = layout_of([12])
    assert section_body_accuracy(PredictionTrace(np.ones(12), lay), lay, 0) == 1.0
    assert "body accuracy taken as 1" in caplog.text


def test_end_accuracy_counts():
    lay = layout_of([30])
    p = np.zeros(30)
    p[15:] = 0.9
    tr = PredictionTrace(p, lay)
    assert section_end_accuracy(tr, lay, 0) == 1.0
    p[[15, 20, 29]] = 0.2
    assert section_end_accuracy(PredictionTrace(p, lay), lay, 0) == pytest.approx(0.8)
    assert section_end_accuracy(PredictionTrace(np.zeros(30), lay), lay, 0) == 0.0


def test_exact_half_counts_as_neither():
    lay = layout_of([40])
    p = np.full(40, 0.5)
    tr = PredictionTrace(p, lay)
    assert section_body_accuracy(tr, lay, 0) == 0.0
    assert section_end_accuracy(tr, lay, 0) == 0.0


def _body_run(length, start, sec_len=100):
    lay = layout_of([sec_len])
    p = np.zeros(sec_len)
    p[start : start + length] = 0.9
    return failure_boolean(PredictionTrace(p, lay), lay, 0)


def test_failure_rules():
    # body 0..84, test buffer 70..84
    assert not _body_run(3, 30)
    assert _body_run(7, 30)
    assert not _body_run(5, 30)
    assert _body_run(6, 30)
    # 8-frame run ending exactly at the last body frame
    assert not _body_run(8, 77)
    # wholly inside the buffer, any length
    assert not _body_run(15, 70)
    # reaches into the buffer from before: 10-frame limit on its body part
    assert not _body_run(10, 65)
    assert _body_run(11, 65)
    # early triggers that continue into the section end
    assert not _body_run(25, 72)
    assert _body_run(30, 60)


def test_trigger_rules():
    lay = layout_of([100])
    p = np.zeros(100)
    p[90:95] = 0.9
    assert trigger_success_boolean(PredictionTrace(p, lay), lay, 0)
    p = np.zeros(100)
    p[71:76] = 0.9
    assert trigger_success_boolean(PredictionTrace(p, lay), lay, 0)
    p = np.zeros(100)
    p[::2] = 0.9
    assert not trigger_success_boolean(PredictionTrace(p, lay), lay, 0)
    p = np.zeros(100)
    p[50:60] = 0.9
    assert not trigger_success_boolean(PredictionTrace(p, lay), lay, 0)


def test_combined_perfect_and_halving_example():
    lay = layout_of([60, 40, 60])
    p = np.zeros(160)
    for sec in lay:
        p[sec.end_frames.start : sec.last + 1] = 0.95
    rep = combined_score(PredictionTrace(p, lay))
    assert rep.score == 1.0 and rep.passed

    rep = ScoreReport((SectionScore("straight", 1.0, 1.0, False, True), SectionScore("left", 0.81, 1.0, True, True)))
    assert rep.base == pytest.approx(0.9487, abs=5e-5)
    assert rep.score == pytest.approx(0.4743, abs=5e-5)
    assert not rep.passed


def test_high_raw_accuracy_can_still_fail():
    lengths = [120, 60, 140, 60, 120]
    lay = layout_of(lengths)
    p = np.full(lay.n_frames, 0.05)
    for sec in lay:
        p[sec.end_frames.start : sec.last + 1] = 0.95
    start = lay[2].start
    p[start + 40 : start + 48] = 0.8  # one 8-frame false positive in a straight body
    tr = PredictionTrace(p, lay)
    body = np.concatenate([np.arange(s.start, s.body_last + 1) for s in lay])
    raw = np.mean(p[body] < 0.5)
    assert raw >= 0.97
    rep = combined_score(tr)
    assert rep.sections[2].failure and rep.failed_count == 1
    assert rep.score < 0.5 and not rep.passed
    assert rep.score == pytest.approx(oracle_score(p, lengths), abs=1e-12)


def test_warm_up_frames_excluded_from_body():
    lay = layout_of([40])
    p = np.zeros(40)
    p[:9] = np.nan
    p[9] = 0.9
    tr = PredictionTrace(p, lay)
    # body 0..24, predicted frames 9..24, weights 15..0
    assert section_body_accuracy(tr, lay, 0) == pytest.approx(1 - 15 / sum(range(16)))


def test_trace_validation():
    lay = layout_of([30])
    with pytest.raises(ValueError, match="covers"):
        PredictionTrace(np.zeros(29), lay)
    p = np.zeros(30)
    p[10] = np.nan
    with pytest.raises(ValueError, match="warm-up"):
        PredictionTrace(p, lay)
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        PredictionTrace(np.full(30, 1.5), lay)


# ---------------------------------------------------------------- golden suite against the oracle


def random_case(rng):
    n_sec = int(rng.integers(1, 6))
    lengths = [int(rng.integers(8, 120)) for _ in range(n_sec)]
    total = sum(lengths)
    p = np.clip(rng.normal(0.2, 0.2, total), 0, 1)
    for _ in range(int(rng.integers(0, 8))):
        a = int(rng.integers(0, total))
        p[a : a + int(rng.integers(1, 20))] = rng.uniform(0.5, 1.0)
    if rng.random() < 0.3:
        p[rng.integers(0, total, size=3)] = 0.5
    warm = int(rng.integers(0, 10))
    p[:warm] = np.nan
    return lengths, p


def test_golden_suite_matches_oracle():
    rng = np.random.default_rng(2024)
    for _ in range(250):
        lengths, p = random_case(rng)
        lay = layout_of(lengths)
        tr = PredictionTrace(p, lay)
        rep = combined_score(tr)
        start = 0
        for j, n in enumerate(lengths):
            b, e, f, t = oracle_section(p, start, start + n - 1)
            s = rep.sections[j]
            assert s.body == pytest.approx(b, abs=1e-12)
            assert s.end == pytest.approx(e, abs=1e-12)
            assert (s.failure, s.trigger) == (f, t)
            start += n
        assert rep.score == pytest.approx(oracle_score(p, lengths), abs=1e-12)
        assert 0 <= rep.score <= rep.base <= 1


# ---------------------------------------------------------------- properties


traces = st.lists(st.integers(15, 90), min_size=1, max_size=4).flatmap(
    lambda lengths: st.tuples(
        st.just(lengths),
        st.lists(st.floats(0, 1), min_size=sum(lengths), max_size=sum(lengths)),
    )
)


@settings(max_examples=150, deadline=None)
@given(traces, st.data())
def test_monotone_in_raising_predictions(case, data):
    lengths, p = case
    p = np.asarray(p)
    lay = layout_of(lengths)
    j = data.draw(st.integers(0, len(lengths) - 1))
    sec = lay[j]
    i = data.draw(st.integers(sec.start, sec.last))
    raised = p.copy()
    raised[i] = 0.9
    before, after = PredictionTrace(p, lay), PredictionTrace(raised, lay)
    if i <= sec.body_last:
        assert section_body_accuracy(after, lay, j) <= section_body_accuracy(before, lay, j)
    if i >= sec.end_frames.start:
        assert section_end_accuracy(after, lay, j) >= section_end_accuracy(before, lay, j)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(31, 90), min_size=1, max_size=5))
def test_perfect_and_all_high_traces(lengths):
    # bodies longer than the test buffer, so an all-high body has a failing run
    lay = layout_of(lengths)
    p = np.zeros(lay.n_frames)
    for sec in lay:
        p[sec.end_frames.start : sec.last + 1] = 1.0
    assert combined_score(PredictionTrace(p, lay)).score == 1.0
    high = combined_score(PredictionTrace(np.ones(lay.n_frames), lay))
    assert high.score <= 0.5 ** len(lengths) + 1e-15


@settings(max_examples=100, deadline=None)
@given(traces, st.floats(0.2, 5.0))
def test_invariant_to_threshold_preserving_rescaling(case, gamma):
    lengths, p = case
    p = np.asarray(p)
    lay = layout_of(lengths)
    d = p - 0.5
    q = 0.5 + np.sign(d) * 0.5 * (np.abs(d) / 0.5) ** gamma
    a = combined_score(PredictionTrace(p, lay))
    b = combined_score(PredictionTrace(q, lay))
    assert a == b


# ---------------------------------------------------------------- report output


def test_report_files_are_deterministic(tmp_path):
    lengths, p = random_case(np.random.default_rng(3))
    lay = layout_of(lengths)
    tr = PredictionTrace(p, lay)
    rep = combined_score(tr)
    outs = []
    for k in range(2):
        t, g = tmp_path / f"t{k}.csv", tmp_path / f"p{k}.svg"
        render_report(rep, tr, t, g)
        outs.append((t.read_bytes(), g.read_bytes()))
    assert outs[0] == outs[1]
    table = outs[0][0].decode()
    assert len(table.strip().splitlines()) == 1 + len(lengths) + 1
    svg = outs[0][1].decode()
    assert len(re.findall(r'id="section-end-\d+"', svg)) == len(lengths)


def test_report_table_rows():
    rep = ScoreReport((SectionScore("straight", 1.0, 1.0, False, True),))
    rows = report_table(rep).strip().splitlines()
    assert rows[0].startswith("section,") and rows[-1].startswith("summary")


def test_unwritable_report_path(tmp_path):
    lay = layout_of([30])
    tr = PredictionTrace(np.zeros(30), lay)
    with pytest.raises(OSError):
        render_report(combined_score(tr), tr, tmp_path / "missing" / "t.csv", tmp_path / "p.svg")
