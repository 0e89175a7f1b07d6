"""Threshold-based segmentation of recordings into labeled gesture windows."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

THETA_LABEL = 0.05
GAP_MIN = 0.4
LEN_MIN = 0.06
WINDOW = 100
UNLABELED = -1


@dataclass(frozen=True)
class Segment:
    start_frame: int
    end_frame: int  # inclusive
    label: int = UNLABELED

    def __len__(self):
        return self.end_frame - self.start_frame + 1


@dataclass
class GestureSample:
    """A fixed-length window of W frames ending at a segment's last frame."""

    pressures: np.ndarray  # (W, N) float32
    q: np.ndarray  # (W, J)
    label: int
    source: tuple[int, Segment]

    @property
    def window(self) -> int:
        return len(self.pressures)


def active_runs(active: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of True as inclusive (start, end) pairs."""
    a = np.concatenate(([False], np.asarray(active, dtype=bool), [False]))
    edges = np.flatnonzero(a[1:] != a[:-1])
    return [(int(s), int(e) - 1) for s, e in zip(edges[::2], edges[1::2])]


def segment_trace(active, gap_min_frames: int, len_min_frames: int) -> list[Segment]:
    """Drop runs shorter than len_min_frames, then merge survivors separated by
    fewer than gap_min_frames idle frames.

    Dropping first keeps an isolated noise spike from being merged into a
    nearby gesture and stretching its boundary.
    """
    merged: list[list[int]] = []
    for s, e in active_runs(active):
        if e - s + 1 < len_min_frames:
            continue
        if merged and s - merged[-1][1] - 1 < gap_min_frames:
            merged[-1][1] = e
        else:
            merged.append([s, e])
    return [Segment(s, e) for s, e in merged]


def to_frames(seconds: float, f_s: float) -> int:
    return int(round(seconds * f_s))


def auto_segment(recording, theta_label=THETA_LABEL, gap_min=GAP_MIN, len_min=LEN_MIN) -> list[Segment]:
    """Segments of a recording whose max-over-taxels pressure exceeds theta_label."""
    if not 0.0 < theta_label < 1.0:
        raise ValueError(f"theta_label must lie in (0, 1), got {theta_label}")
    if recording.n_frames == 0:
        return []
    trace = recording.pressures.max(axis=1)
    return segment_trace(trace > theta_label, to_frames(gap_min, recording.f_s), to_frames(len_min, recording.f_s))


def _majority_label(seg: Segment, ground_truth) -> int | None:
    overlaps: dict[int, int] = {}
    for g in ground_truth:
        ov = min(seg.end_frame, g.end_frame) - max(seg.start_frame, g.start_frame) + 1
        if ov > 0:
            overlaps[g.label] = overlaps.get(g.label, 0) + ov
    if not overlaps:
        return None
    best = max(overlaps.values())
    winners = [c for c, v in overlaps.items() if v == best]
    return winners[0] if len(winners) == 1 else None


def window_at(recording, end_frame: int, W: int = WINDOW):
    """The W frames ending at end_frame, zero-padded on the left at the recording's pose."""
    start = end_frame - W + 1
    if start >= 0:
        return recording.pressures[start : end_frame + 1], recording.q[start : end_frame + 1]
    pad = -start
    n, j = recording.pressures.shape[1], recording.q.shape[1]
    pressures = np.concatenate([np.zeros((pad, n), dtype=recording.pressures.dtype), recording.pressures[: end_frame + 1]])
    q = np.concatenate([np.repeat(recording.q[:1], pad, axis=0).reshape(pad, j), recording.q[: end_frame + 1]])
    return pressures, q


def extract_samples(recording, segments, W: int = WINDOW, recording_id: int = 0) -> list[GestureSample]:
    """One right-aligned window per segment, labeled by majority ground-truth overlap."""
    if W < 1:
        raise ValueError("window length must be >= 1")
    out = []
    for seg in segments:
        label = _majority_label(seg, recording.ground_truth)
        if label is None:
            log.warning("recording %d: segment %d-%d has no unambiguous ground truth, skipped", recording_id, seg.start_frame, seg.end_frame)
            continue
        pressures, q = window_at(recording, seg.end_frame, W)
        out.append(GestureSample(pressures, q, label, (recording_id, Segment(seg.start_frame, seg.end_frame, label))))
    return out


def label_recordings(recordings, W: int = WINDOW, theta_label=THETA_LABEL, gap_min=GAP_MIN, len_min=LEN_MIN) -> list[GestureSample]:
    """Auto-segment every recording and cut one labeled window per segment."""
    out = []
    for i, rec in enumerate(recordings):
        out += extract_samples(rec, auto_segment(rec, theta_label, gap_min, len_min), W, recording_id=i)
    return out
