"""SE(3)-invariant gesture classifier built from equivariant graph convolutions.

Each EGCL layer updates node features v and coordinates x over the directed
edges (j -> i) of a graph:

    m_ij = phi_e(v_i, v_j, |x_i - x_j|^2, e_ij)
    x_i' = x_i + (1 / |N(i)|) * sum_j (x_i - x_j) * phi_x(m_ij)
    v_i' = phi_h(v_i, sum_j m_ij)

Edge attributes e_ij are rotation and translation invariant scalars, so the
logits are invariant and the coordinates equivariant under rigid motions.
Frames are encoded independently with shared weights, pooled over nodes
(max or mean of ReLU(v)), then aggregated over time by concatenating the
elementwise max and mean of the frame embeddings. A readout MLP yields four
logits.

Forward and backward passes are written out by hand; the batch is one big
disjoint graph and scatter-sums use sparse incidence matrices.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .graph import TactileGraph, build_window
from .nn import MLP, cross_entropy, l2_penalty, softmax
from .training import TrainConfig, fit

LENGTH_SCALE = 0.01  # meters per network length unit
NODE_DIM = 2  # pressure, cell area
EDGE_DIM = 5  # distance, static flag, n_i.n_j, n_i.u_ij, n_j.u_ji
N_CLASSES = 4
POOLINGS = ("max", "mean")


# --- inputs -------------------------------------------------------------------


@dataclass(frozen=True)
class EncodedGraph:
    """Network-ready arrays for one frame, in network length units."""

    v0: np.ndarray  # (n, NODE_DIM)
    x: np.ndarray  # (n, 3)
    dst: np.ndarray  # (E,) receiving node of each directed edge
    src: np.ndarray  # (E,)
    eattr: np.ndarray  # (E, EDGE_DIM)

    @property
    def n_nodes(self):
        return len(self.v0)


def encode_graph(g: TactileGraph, length_scale: float = LENGTH_SCALE) -> EncodedGraph:
    if g.n_nodes == 0:
        return EncodedGraph(np.zeros((0, NODE_DIM)), np.zeros((0, 3)), np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros((0, EDGE_DIM)))
    local = g.local_edges()
    a, b = local[:, 0], local[:, 1]
    v0 = np.stack([g.node_scalars[:, 0], g.node_scalars[:, 1] / length_scale**2], axis=1)
    d = g.distance / length_scale
    st = g.is_static.astype(float)
    fwd = np.stack([d, st, g.normal_dot, g.cos_a, g.cos_b], axis=1)
    bwd = np.stack([d, st, g.normal_dot, g.cos_b, g.cos_a], axis=1)
    return EncodedGraph(
        v0=v0,
        x=g.positions / length_scale,
        dst=np.concatenate([a, b]),
        src=np.concatenate([b, a]),
        eattr=np.concatenate([fwd, bwd]),
    )


def encode_window(window, length_scale: float = LENGTH_SCALE) -> list[EncodedGraph]:
    graphs = window.graphs if hasattr(window, "graphs") else window
    return [encode_graph(g, length_scale) for g in graphs]


class Batch:
    """Windows of equal length merged into one disjoint graph."""

    def __init__(self, windows, dtype=np.float64):
        self.n_windows = len(windows)
        self.window = len(windows[0]) if windows else 0
        if any(len(w) != self.window for w in windows):
            raise ValueError("all windows in a batch must have the same length")
        frames = [g for w in windows for g in w]
        self.n_frames = len(frames)
        counts = np.array([g.n_nodes for g in frames], dtype=np.int64)
        offsets = np.concatenate(([0], np.cumsum(counts)))
        self.counts = counts
        self.starts = offsets[:-1]
        self.n_nodes = int(offsets[-1])
        self.node_frame = np.repeat(np.arange(self.n_frames), counts)
        if self.n_nodes:
            self.v0 = np.concatenate([g.v0 for g in frames])
            self.x = np.concatenate([g.x for g in frames])
            self.dst = np.concatenate([g.dst + o for g, o in zip(frames, offsets)])
            self.src = np.concatenate([g.src + o for g, o in zip(frames, offsets)])
            self.eattr = np.concatenate([g.eattr for g in frames])
        else:
            self.v0 = np.zeros((0, NODE_DIM))
            self.x = np.zeros((0, 3))
            self.dst = self.src = np.zeros(0, np.int64)
            self.eattr = np.zeros((0, EDGE_DIM))
        self.v0, self.x, self.eattr = (a.astype(dtype, copy=False) for a in (self.v0, self.x, self.eattr))
        n, E = self.n_nodes, len(self.dst)
        ones = np.ones(E, dtype)
        self.S_dst = sparse.csr_matrix((ones, (self.dst, np.arange(E))), shape=(n, E))
        self.S_src = sparse.csr_matrix((ones, (self.src, np.arange(E))), shape=(n, E))
        deg = np.bincount(self.dst, minlength=n).astype(float)
        self.inv_deg = np.divide(1.0, deg, out=np.zeros(n), where=deg > 0).astype(dtype)
        self.nonempty = np.flatnonzero(counts > 0)
        self.S_frame = sparse.csr_matrix((np.ones(n, dtype), (self.node_frame, np.arange(n))), shape=(self.n_frames, n))

    @property
    def n_edges(self):
        return len(self.dst)


# --- layers -------------------------------------------------------------------


class EgclLayer:
    def __init__(self, in_dim, hidden, rng, zero_coord_gate=True):
        self.in_dim = in_dim
        self.phi_e = MLP([2 * in_dim + 1 + EDGE_DIM, hidden, hidden], rng, final_activation=True)
        self.phi_x = MLP([hidden, hidden, 1], rng, zero_last=zero_coord_gate)
        # bias-free so an all-zero isolated node stays exactly zero
        self.phi_h = MLP([in_dim + hidden, hidden, hidden], rng, bias=False)

    def params(self):
        return self.phi_e.params() + self.phi_x.params() + self.phi_h.params()

    def param_names(self, prefix):
        return self.phi_e.param_names(f"{prefix}.phi_e") + self.phi_x.param_names(f"{prefix}.phi_x") + self.phi_h.param_names(f"{prefix}.phi_h")

    def weights(self):
        return self.phi_e.weights + self.phi_x.weights + self.phi_h.weights


def egcl_forward(layer: EgclLayer, v, x, g):
    """One EGCL update over the directed edges of g (anything with dst, src, eattr,
    S_dst, inv_deg). Returns (v', x', cache)."""
    din = layer.in_dim
    W0, b0 = layer.phi_e.weights[0], layer.phi_e.biases[0]
    Wa, Wb, wd, We = W0[:din], W0[din : 2 * din], W0[2 * din : 2 * din + 1], W0[2 * din + 1 :]
    diff = x[g.dst] - x[g.src]
    d2 = (diff * diff).sum(axis=1, keepdims=True)
    pre = (v @ Wa)[g.dst] + (v @ Wb)[g.src] + d2 * wd + g.eattr @ We + b0
    m, ce = layer.phi_e.forward_from(pre)
    gate, cx = layer.phi_x.forward(m)
    x_new = x + g.inv_deg[:, None] * (g.S_dst @ (diff * gate))
    mi = g.S_dst @ m
    u = np.concatenate([v, mi], axis=1)
    v_new, ch = layer.phi_h.forward(u)
    return v_new, x_new, (v, diff, d2, gate, ce, cx, ch)


def egcl_backward(layer: EgclLayer, cache, g, dv_new, dx_new):
    """Returns (dv, dx, grads aligned with layer.params())."""
    v, diff, d2, gate, ce, cx, ch = cache
    din = layer.in_dim
    W0 = layer.phi_e.weights[0]
    Wa, Wb, wd = W0[:din], W0[din : 2 * din], W0[2 * din : 2 * din + 1]

    du, g_h = layer.phi_h.backward(ch, dv_new)
    dv = du[:, :din].copy()
    dmi = du[:, din:]

    d_prod = (g.inv_deg[:, None] * dx_new)[g.dst]  # grad of diff * gate per edge
    d_diff = d_prod * gate
    d_gate = (d_prod * diff).sum(axis=1, keepdims=True)
    dm_x, g_x = layer.phi_x.backward(cx, d_gate)

    dm = dmi[g.dst] + dm_x
    dpre, g_e = layer.phi_e.backward(ce, dm)
    dA = g.S_dst @ dpre
    dB = g.S_src @ dpre
    dW0 = np.concatenate([v.T @ dA, v.T @ dB, (d2 * dpre).sum(axis=0, keepdims=True), g.eattr.T @ dpre], axis=0)
    g_e[0] = dW0
    g_e[1] = dpre.sum(axis=0)
    dv += dA @ Wa.T + dB @ Wb.T
    dd2 = dpre @ wd.T
    d_diff += 2.0 * diff * dd2
    dx = dx_new + g.S_dst @ d_diff - g.S_src @ d_diff
    return dv, dx, g_e + g_x + g_h


# --- model --------------------------------------------------------------------


class EgnnModel:
    def __init__(self, hidden=32, n_layers=3, pooling="max", seed=0, zero_coord_gate=True, length_scale=LENGTH_SCALE, n_classes=N_CLASSES):
        if pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}")
        rng = np.random.default_rng(seed)
        self.hidden, self.n_layers, self.pooling = hidden, n_layers, pooling
        self.length_scale, self.n_classes = length_scale, n_classes
        self.layers = [EgclLayer(NODE_DIM if i == 0 else hidden, hidden, rng, zero_coord_gate) for i in range(n_layers)]
        self.readout = MLP([2 * hidden, hidden, n_classes], rng)
        # inference settings stored with checkpoints
        self.k, self.theta_act, self.stride, self.skin_hash = 8, 0.05, 1, ""
        # arithmetic precision of training steps; parameters and optimizer state stay f64
        self.train_dtype = np.float32

    def params(self):
        out = []
        for layer in self.layers:
            out += layer.params()
        return out + self.readout.params()

    def param_names(self):
        out = []
        for i, layer in enumerate(self.layers):
            out += layer.param_names(f"layer{i}")
        return out + self.readout.param_names("readout")

    def weights(self):
        out = []
        for layer in self.layers:
            out += layer.weights()
        return out + self.readout.weights

    def copy(self) -> EgnnModel:
        other = EgnnModel.__new__(EgnnModel)
        other.__dict__.update(self.__dict__)
        other.layers = [EgclLayer.__new__(EgclLayer) for _ in self.layers]
        for new, old in zip(other.layers, self.layers):
            new.in_dim = old.in_dim
            new.phi_e, new.phi_x, new.phi_h = (_copy_mlp(m) for m in (old.phi_e, old.phi_x, old.phi_h))
        other.readout = _copy_mlp(self.readout)
        return other

    # encoding

    def encode_frames(self, batch: Batch):
        """Per-frame embeddings (n_frames, hidden) plus the caches for backprop."""
        v, x = batch.v0, batch.x
        caches = []
        for layer in self.layers:
            v, x, c = egcl_forward(layer, v, x, batch)
            caches.append(c)
        emb = np.maximum(v, 0.0)
        pooled = np.zeros((batch.n_frames, self.hidden), v.dtype)
        arg = None
        ne = batch.nonempty
        if len(ne):
            if self.pooling == "max":
                starts = batch.starts[ne]
                pooled[ne] = np.maximum.reduceat(emb, starts, axis=0)
                hit = emb == pooled[batch.node_frame]
                idx = np.where(hit, np.arange(batch.n_nodes)[:, None], batch.n_nodes)
                arg = np.minimum.reduceat(idx, starts, axis=0)
            else:
                pooled = (batch.S_frame @ emb) / np.maximum(batch.counts, 1)[:, None]
        return pooled, (caches, v, x, arg)

    def coordinates(self, batch: Batch):
        """Node coordinates after the last layer (network length units)."""
        return self.encode_frames(batch)[1][2]

    def aggregate(self, frame_emb, n_windows, window):
        T = frame_emb.reshape(n_windows, window, self.hidden)
        return np.concatenate([T.max(axis=1), T.mean(axis=1)], axis=1), T.argmax(axis=1)

    def logits(self, batch: Batch):
        pooled, _ = self.encode_frames(batch)
        z, _ = self.aggregate(pooled, batch.n_windows, batch.window)
        return self.readout.forward(z)[0]

    def loss_and_gradients(self, batch: Batch, labels, l2: float = 0.0):
        """Mean cross-entropy plus l2 * sum(W^2); gradients aligned with params()."""
        pooled, (caches, vL, _, arg) = self.encode_frames(batch)
        B, W, h = batch.n_windows, batch.window, self.hidden
        z, targ = self.aggregate(pooled, B, W)
        logits, rc = self.readout.forward(z)
        loss, dlogits = cross_entropy(logits, labels)
        pen, pen_grads = l2_penalty(self.weights(), l2)
        loss += pen
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite loss {loss}; max |logit| {np.abs(logits).max():.3g}")

        dz, g_read = self.readout.backward(rc, dlogits)
        dT = np.zeros((B, W, h), dz.dtype)
        bi, ci = np.meshgrid(np.arange(B), np.arange(h), indexing="ij")
        dT[bi, targ, ci] += dz[:, :h]
        dT += dz[:, None, h:] / W
        dpooled = dT.reshape(B * W, h)

        demb = np.zeros((batch.n_nodes, h), vL.dtype)
        ne = batch.nonempty
        if len(ne):
            if self.pooling == "max":
                demb[arg, np.arange(h)[None, :]] = dpooled[ne]
            else:
                demb = (dpooled / np.maximum(batch.counts, 1)[:, None])[batch.node_frame]
        dv = demb * (vL > 0)
        dx = np.zeros((batch.n_nodes, 3), vL.dtype)
        layer_grads = []
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            dv, dx, gl = egcl_backward(layer, cache, batch, dv, dx)
            layer_grads.append(gl)
        grads = [g for gl in reversed(layer_grads) for g in gl] + g_read
        # add l2 gradients to the weight matrices
        wid = {id(W): gW for W, gW in zip(self.weights(), pen_grads)}
        grads = [g + wid[id(p)] if id(p) in wid else g for p, g in zip(self.params(), grads)]
        return loss, grads, logits


    # interface for training.fit

    def batch_loss(self, items, labels, l2=0.0):
        if self.train_dtype == np.float64:
            return self.loss_and_gradients(Batch(items), labels, l2)
        shadow = self.cast(self.train_dtype)
        loss, grads, logits = shadow.loss_and_gradients(Batch(items, self.train_dtype), labels, l2)
        return loss, [g.astype(np.float64) for g in grads], logits.astype(np.float64)

    def cast(self, dtype) -> EgnnModel:
        """Copy with every parameter converted to dtype."""
        other = self.copy()
        for m in [x for layer in other.layers for x in (layer.phi_e, layer.phi_x, layer.phi_h)] + [other.readout]:
            m.weights = [W.astype(dtype) for W in m.weights]
            m.biases = [None if b is None else b.astype(dtype) for b in m.biases]
        return other

    def batch_logits(self, items):
        return self.logits(Batch(items))


def _copy_mlp(m: MLP) -> MLP:
    out = MLP.__new__(MLP)
    out.dims = list(m.dims)
    out.final_activation = m.final_activation
    out.weights = [W.copy() for W in m.weights]
    out.biases = [None if b is None else b.copy() for b in m.biases]
    return out


def model_forward(model: EgnnModel, window):
    """Logits and class probabilities for one window (GraphWindow, list of
    TactileGraph, or list of EncodedGraph)."""
    graphs = window.graphs if hasattr(window, "graphs") else list(window)
    if not graphs:
        raise ValueError("window must contain at least one frame")
    enc = [g if isinstance(g, EncodedGraph) else encode_graph(g, model.length_scale) for g in graphs]
    logits = model.logits(Batch([enc]))[0]
    return logits, softmax(logits)


def encode_samples(skin, samples, theta_act=0.05, k=8, stride=1, length_scale=LENGTH_SCALE):
    """Encoded graph windows for a list of GestureSample."""
    return [encode_window(build_window(skin, s.pressures, s.q, theta_act, k, stride), length_scale) for s in samples]


def train(windows, labels, cfg: TrainConfig, hidden=32, n_layers=3, pooling="max", init: EgnnModel | None = None):
    """Fit a freshly initialized (seed cfg.seed) or given model; returns (model, history)."""
    model = init.copy() if init is not None else EgnnModel(hidden, n_layers, pooling, seed=cfg.seed)
    return fit(model, windows, labels, cfg)


# --- checkpoints --------------------------------------------------------------

CKPT_MAGIC = b"EGN1"
CKPT_VERSION = 1
_CKPT_HEAD = struct.Struct("<4sIIIIIIBdIdI64s")


def save_checkpoint(model: EgnnModel, path) -> None:
    params = model.params()
    head = _CKPT_HEAD.pack(
        CKPT_MAGIC,
        CKPT_VERSION,
        model.hidden,
        model.n_layers,
        NODE_DIM,
        EDGE_DIM,
        model.n_classes,
        POOLINGS.index(model.pooling),
        model.length_scale,
        model.k,
        model.theta_act,
        model.stride,
        model.skin_hash.encode("ascii").ljust(64, b"\0"),
    )
    table = [struct.pack("<I", len(params))]
    for p in params:
        table.append(struct.pack("<I", p.ndim) + struct.pack(f"<{p.ndim}I", *p.shape))
    data = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in params)
    with open(path, "wb") as fh:
        fh.write(head + b"".join(table) + data)


def load_checkpoint(path) -> EgnnModel:
    buf = open(path, "rb").read()
    magic, ver, hidden, n_layers, node_dim, edge_dim, n_classes, pool, ls, k, theta, stride, skin_hash = _CKPT_HEAD.unpack_from(buf)
    if magic != CKPT_MAGIC:
        raise ValueError(f"not a model checkpoint (magic {magic!r})")
    if ver != CKPT_VERSION or node_dim != NODE_DIM or edge_dim != EDGE_DIM:
        raise ValueError(f"incompatible checkpoint version {ver} (node {node_dim}, edge {edge_dim})")
    model = EgnnModel(hidden, n_layers, POOLINGS[pool], length_scale=ls, n_classes=n_classes)
    model.k, model.theta_act, model.stride = k, theta, stride
    model.skin_hash = skin_hash.rstrip(b"\0").decode("ascii")
    off = _CKPT_HEAD.size
    (n_params,) = struct.unpack_from("<I", buf, off)
    off += 4
    shapes = []
    for _ in range(n_params):
        (nd,) = struct.unpack_from("<I", buf, off)
        off += 4
        shapes.append(struct.unpack_from(f"<{nd}I", buf, off))
        off += 4 * nd
    params = model.params()
    if len(params) != n_params:
        raise ValueError("checkpoint parameter table does not match the model layout")
    for p, shape in zip(params, shapes):
        if tuple(shape) != p.shape:
            raise ValueError(f"checkpoint tensor shape {shape} != expected {p.shape}")
        n = int(np.prod(shape))
        p[...] = np.frombuffer(buf, dtype="<f8", count=n, offset=off).reshape(shape)
        off += 8 * n
    if off != len(buf):
        raise ValueError("trailing bytes in checkpoint")
    return model
