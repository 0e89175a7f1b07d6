"""Per-frame tactile graphs.

Static edges are the skins' intra-patch meshes and never change. Dynamic edges
come from a k-nearest-neighbor search over the activated taxels (those above
threshold plus their one-hop mesh neighbors) using current world positions, so
patches brought together by the robot pose become connected.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .skin import SkinConfig, TaxelPoses, taxel_world_poses

THETA_ACT = 0.05
K_NEIGHBORS = 8
# squared distances closer than this (m^2) count as ties, so roundoff from a
# rigid transform cannot reorder symmetric neighbours
TIE_EPS = 1e-14

_STATIC_CACHE: dict[str, tuple[np.ndarray, np.ndarray]] = {}


@dataclass(frozen=True)
class TactileGraph:
    node_ids: np.ndarray  # (n,) sorted taxel ids
    node_scalars: np.ndarray  # (n, 2): pressure, cell_area
    positions: np.ndarray  # (n, 3) meters, world frame
    normals: np.ndarray  # (n, 3)
    edges: np.ndarray  # (m, 2) taxel ids, rows sorted, each row (min, max)
    distance: np.ndarray  # (m,) kinematic distance
    is_static: np.ndarray  # (m,) bool
    geodesic: np.ndarray  # (m,) rest length for static edges, nan otherwise
    normal_dot: np.ndarray  # (m,) n_a . n_b
    cos_a: np.ndarray  # (m,) n_a . (x_b - x_a) / |x_b - x_a|
    cos_b: np.ndarray  # (m,) n_b . (x_a - x_b) / |x_a - x_b|

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def local_edges(self) -> np.ndarray:
        """Edges as row indices into the node arrays."""
        return np.searchsorted(self.node_ids, self.edges)

    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(a), int(b)) for a, b in self.edges}

    @classmethod
    def empty(cls) -> TactileGraph:
        z3 = np.zeros((0, 3))
        z = np.zeros(0)
        return cls(np.zeros(0, dtype=np.int64), np.zeros((0, 2)), z3, z3, np.zeros((0, 2), dtype=np.int64), z, z.astype(bool), z, z, z, z)


@dataclass
class GraphWindow:
    """Graphs of consecutive frames in time order, all over the same skin."""

    graphs: list[TactileGraph]

    def __len__(self):
        return len(self.graphs)

    def strided(self, stride: int) -> GraphWindow:
        """Every stride-th graph, aligned so the newest graph is kept."""
        if stride <= 1:
            return self
        return GraphWindow(self.graphs[::-1][::stride][::-1])


def static_edges(skin: SkinConfig) -> tuple[np.ndarray, np.ndarray]:
    """All intra-patch adjacency pairs (sorted, each (min, max)) and their rest lengths."""
    key = skin.config_hash
    if key not in _STATIC_CACHE:
        pairs, rest = [], []
        for p in skin.patches:
            for a, b, r in p.adjacency:
                pairs.append((min(a, b), max(a, b)))
                rest.append(r)
        pairs = np.array(pairs, dtype=np.int64).reshape(-1, 2)
        rest = np.array(rest, dtype=float)
        order = np.lexsort((pairs[:, 1], pairs[:, 0]))
        _STATIC_CACHE[key] = (pairs[order], rest[order])
    return _STATIC_CACHE[key]


def activated_nodes(skin: SkinConfig, pressure, theta_act: float = THETA_ACT) -> np.ndarray:
    """Taxels above threshold plus their one-hop mesh neighbors, sorted."""
    if not 0.0 < theta_act < 1.0:
        raise ValueError(f"theta_act must lie in (0, 1), got {theta_act}")
    hot = np.flatnonzero(np.asarray(pressure) > theta_act)
    if len(hot) == 0:
        return hot
    halo = skin.adjacency_matrix[hot].indices
    return np.union1d(hot, halo)


def _pair_keys(pairs: np.ndarray, n: int) -> np.ndarray:
    return pairs[:, 0] * n + pairs[:, 1]


def squared_distances(x: np.ndarray) -> np.ndarray:
    """Pairwise squared distances, summed x, y, z in that order."""
    d2 = (x[:, None, 0] - x[None, :, 0]) ** 2
    d2 += (x[:, None, 1] - x[None, :, 1]) ** 2
    d2 += (x[:, None, 2] - x[None, :, 2]) ** 2
    return d2


def knn_indices(x: np.ndarray, k: int) -> np.ndarray:
    """For each row, the k nearest other rows; ties go to the lower row index.

    Squared distances are snapped to multiples of TIE_EPS before ranking.
    """
    n = len(x)
    kk = min(k, n - 1)
    if kk <= 0:
        return np.zeros((n, 0), dtype=np.int64)
    d2 = np.round(squared_distances(x) / TIE_EPS)
    np.fill_diagonal(d2, np.inf)
    if n <= 32:
        return np.argsort(d2, axis=1, kind="stable")[:, :kk]
    part = np.argpartition(d2, kk - 1, axis=1)[:, :kk]
    rows = np.arange(n)[:, None]
    kth = d2[rows, part].max(axis=1)
    ambiguous = np.flatnonzero((d2 <= kth[:, None]).sum(axis=1) > kk)
    for r in ambiguous:
        part[r] = np.argsort(d2[r], kind="stable")[:kk]
    return part


def dynamic_knn_edges(positions, active, k: int = K_NEIGHBORS) -> np.ndarray:
    """Deduplicated undirected KNN pairs among the active taxels, as sorted (min, max) id rows.

    positions is indexed by taxel id (a TaxelPoses or an (N, 3) array).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    x_all = positions.positions if isinstance(positions, TaxelPoses) else np.asarray(positions)
    ids = np.unique(np.asarray(active, dtype=np.int64))
    if len(ids) < 2:
        return np.zeros((0, 2), dtype=np.int64)
    nbr = knn_indices(x_all[ids], k)
    a = np.repeat(ids, nbr.shape[1])
    b = ids[nbr.reshape(-1)]
    pairs = np.stack([np.minimum(a, b), np.maximum(a, b)], axis=1)
    n = int(ids[-1]) + 1
    keys = np.unique(_pair_keys(pairs, n))
    return np.stack([keys // n, keys % n], axis=1)


def build_graph(skin: SkinConfig, frame, theta_act: float = THETA_ACT, k: int = K_NEIGHBORS, poses: TaxelPoses | None = None) -> TactileGraph:
    """Graph over the activated taxels of one frame.

    `frame` needs `pressure` and `q`; pass `poses` to reuse world poses across
    frames recorded at the same joint state.
    """
    pressure = np.asarray(frame.pressure)
    nodes = activated_nodes(skin, pressure, theta_act)
    if len(nodes) == 0:
        return TactileGraph.empty()
    if poses is None:
        poses = taxel_world_poses(skin, frame.q)
    n_tax = skin.n_taxels
    s_pairs, s_rest = static_edges(skin)
    member = np.zeros(n_tax, dtype=bool)
    member[nodes] = True
    keep = member[s_pairs[:, 0]] & member[s_pairs[:, 1]]
    st_pairs, st_rest = s_pairs[keep], s_rest[keep]

    dyn = dynamic_knn_edges(poses.positions, nodes, k)
    dyn_keys = _pair_keys(dyn, n_tax)
    st_keys = _pair_keys(st_pairs, n_tax)
    dyn = dyn[~np.isin(dyn_keys, st_keys)]

    pairs = np.concatenate([st_pairs, dyn])
    is_static = np.concatenate([np.ones(len(st_pairs), bool), np.zeros(len(dyn), bool)])
    geodesic = np.concatenate([st_rest, np.full(len(dyn), np.nan)])
    order = np.lexsort((pairs[:, 1], pairs[:, 0]))
    pairs, is_static, geodesic = pairs[order], is_static[order], geodesic[order]

    x, nrm = poses.positions, poses.normals
    xa, xb = x[pairs[:, 0]], x[pairs[:, 1]]
    na, nb = nrm[pairs[:, 0]], nrm[pairs[:, 1]]
    diff = xb - xa
    dist = np.sqrt(diff[:, 0] ** 2 + diff[:, 1] ** 2 + diff[:, 2] ** 2)
    u = diff / np.where(dist > 0, dist, 1.0)[:, None]
    scalars = np.stack([pressure[nodes].astype(float), skin.cell_areas[nodes]], axis=1)
    return TactileGraph(
        node_ids=nodes,
        node_scalars=scalars,
        positions=x[nodes],
        normals=nrm[nodes],
        edges=pairs,
        distance=dist,
        is_static=is_static,
        geodesic=geodesic,
        normal_dot=(na * nb).sum(axis=1),
        cos_a=(na * u).sum(axis=1),
        cos_b=-(nb * u).sum(axis=1),
    )


def build_window(skin: SkinConfig, pressures, q, theta_act: float = THETA_ACT, k: int = K_NEIGHBORS, stride: int = 1) -> GraphWindow:
    """Graphs for a (W, N) pressure window; poses are computed once per distinct joint state."""
    pressures = np.asarray(pressures)
    q = np.asarray(q)
    W = len(pressures)
    keep = range(W - 1, -1, -stride)
    cache: dict[bytes, TaxelPoses] = {}
    graphs = []
    for t in sorted(keep):
        key = np.asarray(q[t], dtype=np.float64).tobytes()
        if np.any(pressures[t] > theta_act):
            if key not in cache:
                cache[key] = taxel_world_poses(skin, q[t])
            graphs.append(build_graph(skin, _Frame(pressures[t], q[t]), theta_act, k, cache[key]))
        else:
            graphs.append(TactileGraph.empty())
    return GraphWindow(graphs)


@dataclass(frozen=True)
class _Frame:
    pressure: np.ndarray
    q: np.ndarray


def dump_graph(graph: TactileGraph) -> str:
    """Text dump: node table, then one `i j dist static_flag` line per edge."""
    lines = [f"# nodes {graph.n_nodes}", "# id pressure cell_area x y z nx ny nz"]
    for i in range(graph.n_nodes):
        vals = [*graph.node_scalars[i], *graph.positions[i], *graph.normals[i]]
        lines.append(f"{graph.node_ids[i]} " + " ".join(f"{v:.9g}" for v in vals))
    lines += [f"# edges {graph.n_edges}", "# i j dist static_flag"]
    for (a, b), d, s in zip(graph.edges, graph.distance, graph.is_static):
        lines.append(f"{a} {b} {d:.9g} {int(s)}")
    return "\n".join(lines) + "\n"
