import logging

import numpy as np
from hypothesis import given, settings, strategies as st

from tactigraph.segmentation import (
    UNLABELED,
    Segment,
    active_runs,
    auto_segment,
    extract_samples,
    label_recordings,
    segment_trace,
)
from tactigraph.synth import GestureScript, Recording, synthesize_dataset, synthesize_gesture


def reference_segments(active, gap_min, len_min):
    """Frame-by-frame scan: erase short bursts, then open on activity and close
    after gap_min idle frames."""
    active = list(active)
    t = 0
    while t < len(active):
        if active[t]:
            u = t
            while u < len(active) and active[u]:
                u += 1
            if u - t < len_min:
                active[t:u] = [False] * (u - t)
            t = u
        else:
            t += 1
    segs, start, last, idle = [], None, None, 0
    for t, a in enumerate(active):
        if a:
            if start is None:
                start = t
            last, idle = t, 0
        elif start is not None:
            idle += 1
            if idle >= gap_min:
                segs.append((start, last))
                start = None
    if start is not None:
        segs.append((start, last))
    return segs


def recording_from_trace(trace, n_taxels=3):
    p = np.zeros((len(trace), n_taxels), dtype=np.float32)
    p[:, 1] = trace
    return Recording(p, np.zeros((len(trace), 1), dtype=np.float32), 50.0)


def test_empty_and_zero():
    assert auto_segment(recording_from_trace(np.zeros(0))) == []
    assert auto_segment(recording_from_trace(np.zeros(50))) == []


def test_hand_traced_merge():
    active = np.zeros(60, bool)
    active[10:21] = True
    active[25:36] = True
    assert segment_trace(active, 10, 1) == [Segment(10, 35)]


def test_short_run_is_noise():
    active = np.zeros(20, bool)
    active[5:7] = True
    assert segment_trace(active, 20, 3) == []


def test_spike_near_gesture_does_not_stretch_it():
    active = np.zeros(80, bool)
    active[30:50] = True
    active[[12, 62]] = True
    assert segment_trace(active, 20, 3) == [Segment(30, 49)]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.booleans(), max_size=120), st.integers(1, 30), st.integers(1, 6))
def test_matches_reference_scan(active, gap_min, len_min):
    got = [(s.start_frame, s.end_frame) for s in segment_trace(np.array(active, bool), gap_min, len_min)]
    assert got == reference_segments(active, gap_min, len_min)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=80), st.floats(0.0, 0.0499))
def test_invariant_to_subthreshold_values(trace, fill):
    trace = np.array(trace, dtype=np.float32)
    swapped = np.where(trace > 0.05, trace, np.float32(fill))
    assert auto_segment(recording_from_trace(trace)) == auto_segment(recording_from_trace(swapped))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.booleans(), max_size=120))
def test_merging_is_idempotent(active):
    segs = segment_trace(np.array(active, bool), 20, 3)
    filled = np.zeros(len(active), bool)
    for s in segs:
        filled[s.start_frame : s.end_frame + 1] = True
    assert segment_trace(filled, 20, 3) == segs


def test_active_runs():
    assert active_runs(np.array([0, 1, 1, 0, 1], bool)) == [(1, 2), (4, 4)]


def test_double_pat_never_splits(skin):
    # widest synthesized gap, weakest and widest pulses: the idle stretch stays under gap_min
    rng = np.random.default_rng(0)
    for gap in (0.1, 0.2, 0.3):
        for width in (0.15, 0.25):
            for amplitude in (0.3, 1.0):
                params = {"amplitude": amplitude, "sigma": 0.02, "width": width, "gap": gap}
                rec = synthesize_gesture(skin, np.zeros(6), GestureScript("double_pat", int(rng.integers(2112)), params, 0.4), rng)
                assert len(auto_segment(rec)) == 1


def test_window_padding_and_alignment():
    trace = np.zeros(100, np.float32)
    trace[20:31] = 0.5
    rec = recording_from_trace(trace)
    rec.ground_truth = [Segment(20, 30, 2)]
    (s,) = extract_samples(rec, auto_segment(rec), 100)
    assert s.pressures.shape == (100, 3) and s.label == 2
    assert not s.pressures[:69].any()
    np.testing.assert_array_equal(s.pressures[69:], rec.pressures[:31])
    assert s.source == (0, Segment(20, 30, 2))

    trace = np.zeros(100, np.float32)
    trace[90:] = 0.5
    rec = recording_from_trace(trace)
    rec.ground_truth = [Segment(90, 99, 1)]
    (s,) = extract_samples(rec, auto_segment(rec), 100)
    np.testing.assert_array_equal(s.pressures, rec.pressures)


def test_ambiguous_overlap_is_skipped(caplog):
    trace = np.zeros(40, np.float32)
    trace[10:20] = 0.5
    rec = recording_from_trace(trace)
    rec.ground_truth = [Segment(10, 14, 0), Segment(15, 19, 3)]
    with caplog.at_level(logging.WARNING):
        assert extract_samples(rec, auto_segment(rec), 30) == []
    assert "skipped" in caplog.text
    rec.ground_truth = []
    assert extract_samples(rec, [Segment(10, 19, UNLABELED)], 30) == []


def test_labels_follow_synthesis_ground_truth(skin):
    recs, _ = synthesize_dataset(skin, (13, 13, 12, 12), rng_seed=3)
    samples = label_recordings(recs)
    assert len(samples) >= 50
    for s in samples:
        rec = recs[s.source[0]]
        assert s.label == rec.ground_truth[0].label
        assert s.pressures.shape == (100, 2112)
