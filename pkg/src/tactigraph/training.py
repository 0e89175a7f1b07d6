"""Mini-batch training loop shared by the graph model and the MLP baseline."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .nn import Adam

log = logging.getLogger(__name__)

DIVERGENCE_LOSS = 1e3
SCHEDULES = ("constant", "cosine")


@dataclass
class TrainConfig:
    lr: float = 3e-3
    batch_size: int = 16
    epochs: int = 40
    seed: int = 0
    l2: float = 1e-5
    val_fraction: float = 0.15
    schedule: str = "constant"  # or "cosine": lr decays to zero over the run

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 0 or self.l2 < 0:
            raise ValueError(f"invalid training configuration {asdict(self)}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}")


@dataclass
class History:
    rows: list[dict] = field(default_factory=list)
    halted: str | None = None
    seconds: float = 0.0

    def to_csv(self) -> str:
        lines = ["epoch,train_acc,val_acc,loss"]
        for r in self.rows:
            val = "" if r["val_acc"] is None else f"{r['val_acc']:.6f}"
            lines.append(f"{r['epoch']},{r['train_acc']:.6f},{val},{r['loss']:.8f}")
        return "\n".join(lines) + "\n"


def split_indices(n: int, val_fraction: float, seed: int):
    perm = np.random.default_rng(seed).permutation(n)
    n_val = int(round(n * val_fraction))
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def accuracy(model, data, labels, batch_size=64) -> float:
    if len(data) == 0:
        return float("nan")
    preds = predict_classes(model, data, batch_size)
    return float((preds == np.asarray(labels)).mean())


def predict_classes(model, data, batch_size=64) -> np.ndarray:
    out = []
    for s in range(0, len(data), batch_size):
        out.append(model.batch_logits(data[s : s + batch_size]).argmax(axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=int)


def fit(model, data, labels, cfg: TrainConfig):
    """Adam on mean cross-entropy with an L2 weight penalty.

    `model` provides params(), batch_loss(items, labels, l2) -> (loss, grads,
    logits) and batch_logits(items). Shuffling is drawn from cfg.seed, so a
    rerun reproduces parameters bit for bit.
    """
    labels = np.asarray(labels)
    if len(np.unique(labels)) < 2:
        raise ValueError("training needs at least two classes")
    train_idx, val_idx = split_indices(len(data), cfg.val_fraction, cfg.seed)
    if len(np.unique(labels[train_idx])) < 2:
        raise ValueError("training split holds fewer than two classes")
    rng = np.random.default_rng(cfg.seed + 1)
    opt = Adam(model.params(), lr=cfg.lr)
    history = History()
    steps_per_epoch = -(-len(train_idx) // cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs
    t0 = time.perf_counter()
    for epoch in range(1, cfg.epochs + 1):
        order = train_idx[rng.permutation(len(train_idx))]
        losses, correct = [], 0
        for s in range(0, len(order), cfg.batch_size):
            idx = order[s : s + cfg.batch_size]
            try:
                loss, grads, logits = model.batch_loss([data[i] for i in idx], labels[idx], cfg.l2)
            except FloatingPointError as exc:
                history.halted = f"epoch {epoch}: {exc}"
                log.error("training aborted: %s", history.halted)
                history.seconds = time.perf_counter() - t0
                return model, history
            if loss > DIVERGENCE_LOSS:
                history.halted = f"epoch {epoch}: loss {loss:.3g} exceeds {DIVERGENCE_LOSS:g}"
                log.error("training diverged: %s", history.halted)
                history.seconds = time.perf_counter() - t0
                return model, history
            if cfg.schedule == "cosine":
                opt.lr = 0.5 * cfg.lr * (1.0 + np.cos(np.pi * opt.t / total_steps))
            opt.step(grads)
            losses.append(loss * len(idx))
            correct += int((logits.argmax(axis=1) == labels[idx]).sum())
        val_acc = accuracy(model, [data[i] for i in val_idx], labels[val_idx]) if len(val_idx) else None
        row = {"epoch": epoch, "train_acc": correct / len(train_idx), "val_acc": val_acc, "loss": sum(losses) / len(train_idx)}
        history.rows.append(row)
        log.info("epoch %d loss %.4f train %.3f val %s", epoch, row["loss"], row["train_acc"], val_acc)
    history.seconds = time.perf_counter() - t0
    return model, history
