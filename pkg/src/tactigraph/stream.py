"""Online recognition over a frame stream.

Frames are encoded independently and the temporal aggregation is a max/mean
over frames, so the predictor keeps a FIFO of per-frame embeddings and only
runs the graph network on the newest frame each tick. An activity gate
decides when a gesture has finished: the max pressure must rise above the
threshold and then stay below it for gap_min frames. The event reports the
class scored on the window ending at the last active frame, which is how
training windows are cut.
"""

from __future__ import annotations

import queue
import threading
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import GESTURES
from .egnn import Batch, EgnnModel, encode_graph
from .graph import _Frame, build_graph
from .nn import softmax
from .segmentation import GAP_MIN, LEN_MIN, WINDOW, to_frames
from .skin import SkinConfig, taxel_world_poses


@dataclass(frozen=True)
class GestureEvent:
    frame: int  # index of the frame on which the gate closed
    start_frame: int
    end_frame: int  # last active frame
    class_id: int
    confidence: float

    @property
    def gesture(self) -> str:
        return GESTURES[self.class_id]


class StreamPredictor:
    def __init__(
        self,
        model: EgnnModel,
        skin: SkinConfig,
        theta_act: float | None = None,
        k: int | None = None,
        stride: int | None = None,
        window: int = WINDOW,
        f_s: float = 50.0,
        gap_min: float = GAP_MIN,
        len_min: float = LEN_MIN,
    ):
        self.model, self.skin = model, skin
        self.theta_act = model.theta_act if theta_act is None else theta_act
        self.k = model.k if k is None else k
        self.stride = model.stride if stride is None else stride
        if self.stride < 1 or window < 1:
            raise ValueError("stride and window must be >= 1")
        self.window = window
        self.gap_frames = to_frames(gap_min, f_s)
        self.len_frames = to_frames(len_min, f_s)
        self._zero = np.zeros(model.hidden)
        self.fifo: deque[np.ndarray] = deque([self._zero] * window, maxlen=window)
        self._pose_key: bytes | None = None
        self._poses = None
        self.frame_index = -1
        self.last_logits = None
        # gate state
        self._start = None
        self._last_active = None
        self._n_active = 0
        self._held = None  # logits at the last active frame

    # stage 1: ingest + graph build

    def prepare(self, pressure, q):
        """Encoded graph of one frame, or None when nothing is active."""
        pressure = np.asarray(pressure)
        if not np.any(pressure > self.theta_act):
            return None
        key = np.asarray(q, dtype=np.float64).tobytes()
        if key != self._pose_key:
            self._poses = taxel_world_poses(self.skin, q)
            self._pose_key = key
        g = build_graph(self.skin, _Frame(pressure, q), self.theta_act, self.k, self._poses)
        return encode_graph(g, self.model.length_scale)

    # stage 2: model evaluation + gate

    def embed(self, encoded) -> np.ndarray:
        if encoded is None or encoded.n_nodes == 0:
            return self._zero
        return self.model.encode_frames(Batch([[encoded]]))[0][0]

    def current_logits(self) -> np.ndarray:
        frames = list(self.fifo)[::-1][:: self.stride]
        T = np.stack(frames)
        z = np.concatenate([T.max(axis=0), T.mean(axis=0)])
        return self.model.readout.forward(z[None, :])[0][0]

    def step(self, encoded, active: bool | None = None):
        """Advance one frame; returns a GestureEvent when the gate closes."""
        self.frame_index += 1
        self.fifo.append(self.embed(encoded))
        self.last_logits = self.current_logits()
        if active is None:
            active = encoded is not None and encoded.n_nodes > 0
        t = self.frame_index
        if active:
            if self._start is None:
                self._start, self._n_active = t, 0
            self._last_active = t
            self._n_active += 1
            self._held = self.last_logits
            return None
        if self._start is not None and t - self._last_active >= self.gap_frames:
            start, end, n_active, held = self._start, self._last_active, self._n_active, self._held
            self._start = self._last_active = self._held = None
            if n_active < self.len_frames:
                return None
            probs = softmax(held)
            c = int(np.argmax(probs))
            return GestureEvent(t, start, end, c, float(probs[c]))
        return None

    def push(self, pressure, q):
        return self.step(self.prepare(pressure, q))

    def run(self, frames):
        """Events for an iterable of (pressure, q) frames, single-threaded."""
        return [e for e in (self.push(p, q) for p, q in frames) if e is not None]


_DONE = object()


def run_pipeline(predictor: StreamPredictor, frames, depth: int = 4, on_event=None):
    """Two-stage producer/consumer: graph building in a background thread,
    model evaluation and gating in the caller's thread. Events come out in
    frame order."""
    q: queue.Queue = queue.Queue(maxsize=depth)
    failure: list[BaseException] = []

    def produce():
        try:
            for pressure, joints in frames:
                q.put(predictor.prepare(pressure, joints))
        except BaseException as exc:  # re-raised in the consumer
            failure.append(exc)
        finally:
            q.put(_DONE)

    worker = threading.Thread(target=produce, name="graph-builder", daemon=True)
    worker.start()
    events = []
    while True:
        item = q.get()
        if item is _DONE:
            break
        ev = predictor.step(item)
        if ev is not None:
            events.append(ev)
            if on_event is not None:
                on_event(ev)
    worker.join()
    if failure:
        raise failure[0]
    return events
