"""Runtime benchmark of one recognition step and the k x pooling ablation grid."""

from __future__ import annotations

import csv
import io
import logging
import os
import platform
import time
from dataclasses import dataclass, field

import numpy as np

from .egnn import EgnnModel, encode_samples
from .skin import SkinConfig, taxel_world_poses
from .stream import StreamPredictor
from .training import TrainConfig, accuracy, fit

log = logging.getLogger(__name__)

STAGES = ("graph_build", "forward", "total")
ABLATION_KS = (4, 8, 16, 32)
ABLATION_POOLINGS = ("max", "mean")


def machine_descriptor() -> str:
    return f"{platform.machine()} {platform.processor() or 'cpu'} x{os.cpu_count()} python {platform.python_version()} numpy {np.__version__}"


@dataclass
class BenchReport:
    active_fraction: float
    iterations: int
    stride: int
    k: int
    timings_ms: dict[str, np.ndarray] = field(repr=False)
    machine: str = ""

    def summary(self, stage: str) -> dict[str, float]:
        t = self.timings_ms[stage]
        return {"mean": float(t.mean()), "p50": float(np.percentile(t, 50)), "p99": float(np.percentile(t, 99))}

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["stage", "active_fraction", "iterations", "stride", "k", "mean_ms", "p50_ms", "p99_ms", "machine"])
        for s in STAGES:
            m = self.summary(s)
            w.writerow([s, self.active_fraction, self.iterations, self.stride, self.k, f"{m['mean']:.4f}", f"{m['p50']:.4f}", f"{m['p99']:.4f}", self.machine])
        return out.getvalue()


def load_frames(skin: SkinConfig, active_fraction: float, n_frames: int = 50, seed: int = 0, q=None):
    """Synthetic frames with a contiguous blob of active taxels.

    Each frame activates the round(fraction * N) taxels nearest (in world
    coordinates) to a random anchor, with pressures drawn from U(0.1, 1).
    """
    if not 0.0 <= active_fraction <= 1.0:
        raise ValueError("active_fraction must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    q = np.zeros(skin.chain.n_joints, dtype=np.float32) if q is None else np.asarray(q, dtype=np.float32)
    x = taxel_world_poses(skin, q).positions
    n_act = int(round(active_fraction * skin.n_taxels))
    frames = []
    for _ in range(n_frames):
        p = np.zeros(skin.n_taxels, dtype=np.float32)
        if n_act:
            anchor = rng.integers(skin.n_taxels)
            d2 = ((x - x[anchor]) ** 2).sum(axis=1)
            idx = np.argsort(d2, kind="stable")[:n_act]
            p[idx] = rng.uniform(0.1, 1.0, size=n_act)
        frames.append((p, q))
    return frames


def bench(model: EgnnModel, skin: SkinConfig, active_fraction: float = 0.05, iterations: int = 1000, stride: int = 5, k: int = 8, seed: int = 0, warmup: int = 20) -> BenchReport:
    """Time frame ingest + graph build and model evaluation per step."""
    frames = load_frames(skin, active_fraction, seed=seed)
    pred = StreamPredictor(model, skin, k=k, stride=stride)
    build = np.zeros(iterations)
    fwd = np.zeros(iterations)
    for i in range(warmup + iterations):
        p, q = frames[i % len(frames)]
        t0 = time.perf_counter()
        enc = pred.prepare(p, q)
        t1 = time.perf_counter()
        pred.step(enc)
        t2 = time.perf_counter()
        if i >= warmup:
            build[i - warmup] = (t1 - t0) * 1e3
            fwd[i - warmup] = (t2 - t1) * 1e3
    timings = {"graph_build": build, "forward": fwd, "total": build + fwd}
    return BenchReport(active_fraction, iterations, stride, k, timings, machine_descriptor())


# --- ablation -----------------------------------------------------------------

ABLATION_FIELDS = ["k", "pooling", "val_acc", "test_acc", "status"]


def ablation(skin, train_samples, test_samples, cfg: TrainConfig, ks=ABLATION_KS, poolings=ABLATION_POOLINGS, stride: int = 5, hidden: int = 32, n_layers: int = 3, theta_act: float = 0.05):
    """One model per (k, pooling) cell with a shared seed and budget; rows of accuracies."""
    y_train = np.array([s.label for s in train_samples])
    y_test = np.array([s.label for s in test_samples])
    rows = []
    for k in ks:
        tr = encode_samples(skin, train_samples, theta_act, k, stride)
        te = encode_samples(skin, test_samples, theta_act, k, stride)
        for pooling in poolings:
            row = {"k": k, "pooling": pooling, "val_acc": "", "test_acc": "", "status": "ok"}
            try:
                model = EgnnModel(hidden, n_layers, pooling, seed=cfg.seed)
                model, hist = fit(model, tr, y_train, cfg)
                if hist.halted:
                    row["status"] = f"halted: {hist.halted}"
                val = hist.rows[-1]["val_acc"] if hist.rows else None
                row["val_acc"] = "" if val is None else f"{val:.6f}"
                row["test_acc"] = f"{accuracy(model, te, y_test):.6f}"
            except Exception as exc:  # one failing cell must not stop the grid
                log.error("ablation cell k=%d pooling=%s failed: %s", k, pooling, exc)
                row["status"] = f"error: {exc}"
            log.info("ablation %s", row)
            rows.append(row)
    return rows


def rows_to_csv(rows, fields) -> str:
    out = io.StringIO()
    w = csv.DictWriter(out, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return out.getvalue()
