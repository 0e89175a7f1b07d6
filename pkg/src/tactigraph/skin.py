"""Modular skin geometry on a revolute kinematic chain.

A skin is a set of rigid patches, each mounted on one link of the chain.
Taxel poses are stored in patch coordinates; world poses follow from forward
kinematics. Two distances are offered: the kinematic distance (straight line
between world positions, changes with the pose) and the geometric distance
(shortest path over a patch's adjacency mesh, fixed by construction).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from . import transforms as tf

SCHEMA_VERSION = 1
DEFAULT_CONFIG_PATH = Path(__file__).parent / "data" / "ur5_like_2112.json"
UNIT_TOL = 1e-9


class SkinConfigError(ValueError):
    """Raised when a skin configuration violates its invariants."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations[:10]) + ("" if len(self.violations) <= 10 else f" (+{len(self.violations) - 10} more)"))


class JointCountError(ValueError):
    pass


class UnknownTaxelError(KeyError):
    pass


class _Disconnected:
    """Result of a geometric distance query across patches."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "disconnected"

    def __reduce__(self):
        return (_Disconnected, ())


DISCONNECTED = _Disconnected()


@dataclass
class Taxel:
    taxel_id: int
    patch_id: int
    local_position: np.ndarray
    local_normal: np.ndarray
    cell_area: float


@dataclass
class Patch:
    patch_id: int
    link_index: int
    mount_transform: np.ndarray
    taxel_ids: list[int]
    adjacency: list[tuple[int, int, float]]
    # Band patches wrap fully around their local z axis (needed for grabs).
    circumferential: bool = False


@dataclass
class Joint:
    axis: np.ndarray
    origin: np.ndarray


@dataclass
class KinematicChain:
    joints: list[Joint]
    base_transform: np.ndarray = field(default_factory=tf.identity)
    joint_limits: list[tuple[float, float]] | None = None

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    def with_base(self, base_transform: np.ndarray) -> KinematicChain:
        return KinematicChain(self.joints, np.asarray(base_transform, dtype=float), self.joint_limits)


@dataclass(frozen=True)
class TaxelPose:
    position: np.ndarray
    normal: np.ndarray


@dataclass(frozen=True)
class TaxelPoses:
    """World poses of every taxel, stored as (N, 3) arrays."""

    positions: np.ndarray
    normals: np.ndarray

    def __len__(self):
        return len(self.positions)

    def __getitem__(self, i) -> TaxelPose:
        return TaxelPose(self.positions[i], self.normals[i])

    def transformed(self, T: np.ndarray) -> TaxelPoses:
        return TaxelPoses(tf.apply(T, self.positions), self.normals @ T[:3, :3].T)


class SkinConfig:
    """A skin: chain, patches and taxels, plus cached array views."""

    def __init__(self, chain: KinematicChain, patches: list[Patch], taxels: list[Taxel], name: str = "skin"):
        self.name = name
        self.chain = chain
        self.patches = list(patches)
        self.taxels = list(taxels)

    @property
    def n_taxels(self) -> int:
        return len(self.taxels)

    @cached_property
    def local_positions(self) -> np.ndarray:
        return np.array([t.local_position for t in self.taxels], dtype=float).reshape(-1, 3)

    @cached_property
    def local_normals(self) -> np.ndarray:
        return np.array([t.local_normal for t in self.taxels], dtype=float).reshape(-1, 3)

    @cached_property
    def cell_areas(self) -> np.ndarray:
        return np.array([t.cell_area for t in self.taxels], dtype=float)

    @cached_property
    def patch_index(self) -> dict[int, int]:
        return {p.patch_id: i for i, p in enumerate(self.patches)}

    @cached_property
    def taxel_patch(self) -> np.ndarray:
        """Patch id of every taxel, indexed by taxel id."""
        return np.array([t.patch_id for t in self.taxels], dtype=np.int64)

    @cached_property
    def adjacency_matrix(self) -> sparse.csr_matrix:
        """Symmetric taxel-by-taxel matrix of rest lengths over all patch meshes."""
        rows, cols, vals = [], [], []
        for p in self.patches:
            for a, b, rest in p.adjacency:
                rows += [a, b]
                cols += [b, a]
                vals += [rest, rest]
        n = self.n_taxels
        return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))

    @cached_property
    def config_hash(self) -> str:
        return hashlib.sha256(canonical_json(self).encode()).hexdigest()

    def taxel(self, taxel_id: int) -> Taxel:
        if not 0 <= taxel_id < self.n_taxels:
            raise UnknownTaxelError(taxel_id)
        return self.taxels[taxel_id]

    def patch_of(self, taxel_id: int) -> Patch:
        return self.patches[self.patch_index[self.taxel(taxel_id).patch_id]]

    def with_base(self, base_transform: np.ndarray) -> SkinConfig:
        return SkinConfig(self.chain.with_base(base_transform), self.patches, self.taxels, self.name)

    def _dijkstra(self, source: int):
        cache = self.__dict__.setdefault("_sp_cache", {})
        if source not in cache:
            dist, pred = csgraph.dijkstra(self.adjacency_matrix, directed=False, indices=source, return_predecessors=True)
            cache[source] = (dist, pred)
        return cache[source]

    def geodesic_path(self, a: int, b: int) -> list[int]:
        """Taxel ids on the shortest mesh path from a to b (inclusive)."""
        self.taxel(a)
        self.taxel(b)
        if self.taxel_patch[a] != self.taxel_patch[b]:
            raise ValueError(f"taxels {a} and {b} lie on different patches")
        _, pred = self._dijkstra(a)
        path = [b]
        while path[-1] != a:
            nxt = pred[path[-1]]
            if nxt < 0:
                raise ValueError(f"no mesh path between taxels {a} and {b}")
            path.append(int(nxt))
        return path[::-1]


def check_joint_state(chain: KinematicChain, q) -> np.ndarray:
    q = np.asarray(q, dtype=float).reshape(-1)
    if q.shape[0] != chain.n_joints:
        raise JointCountError(f"expected {chain.n_joints} joint angles, got {q.shape[0]}")
    return q


def forward_kinematics(chain: KinematicChain, q) -> list[np.ndarray]:
    """World transform of every link: base, then per joint origin followed by rotation about the axis."""
    q = check_joint_state(chain, q)
    T = np.asarray(chain.base_transform, dtype=float)
    out = []
    for joint, angle in zip(chain.joints, q):
        T = T @ joint.origin @ tf.rotation(joint.axis, angle)
        out.append(T)
    return out


def taxel_world_poses(skin: SkinConfig, q) -> TaxelPoses:
    links = forward_kinematics(skin.chain, q)
    positions = np.empty((skin.n_taxels, 3))
    normals = np.empty((skin.n_taxels, 3))
    for p in skin.patches:
        T = links[p.link_index] @ p.mount_transform
        idx = np.asarray(p.taxel_ids, dtype=np.int64)
        positions[idx] = tf.apply(T, skin.local_positions[idx])
        normals[idx] = skin.local_normals[idx] @ T[:3, :3].T
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return TaxelPoses(positions, normals)


def geometric_distance(skin: SkinConfig, a: int, b: int):
    """Mesh geodesic between two taxels, or DISCONNECTED across patches."""
    skin.taxel(a)
    skin.taxel(b)
    if a == b:
        return 0.0
    if skin.taxel_patch[a] != skin.taxel_patch[b]:
        return DISCONNECTED
    # run from the lower id so d(a, b) and d(b, a) sum the same edges in the same order
    src, dst = min(a, b), max(a, b)
    dist, _ = skin._dijkstra(src)
    d = float(dist[dst])
    return DISCONNECTED if math.isinf(d) else d


def kinematic_distance(pose_a: TaxelPose, pose_b: TaxelPose) -> float:
    return float(np.linalg.norm(np.asarray(pose_a.position) - np.asarray(pose_b.position)))


# --- configuration file -----------------------------------------------------


def _mat(T) -> list:
    return [[float(v) for v in row] for row in np.asarray(T)]


def to_dict(skin: SkinConfig) -> dict:
    chain = skin.chain
    return {
        "schema_version": SCHEMA_VERSION,
        "name": skin.name,
        "chain": {
            "base_transform": _mat(chain.base_transform),
            "joints": [{"axis": [float(v) for v in j.axis], "origin": _mat(j.origin)} for j in chain.joints],
            "joint_limits": None if chain.joint_limits is None else [[float(lo), float(hi)] for lo, hi in chain.joint_limits],
        },
        "patches": [
            {
                "patch_id": p.patch_id,
                "link_index": p.link_index,
                "mount_transform": _mat(p.mount_transform),
                "circumferential": p.circumferential,
                "taxel_ids": [int(t) for t in p.taxel_ids],
                "adjacency": [[int(a), int(b), float(r)] for a, b, r in p.adjacency],
            }
            for p in skin.patches
        ],
        "taxels": [
            {
                "taxel_id": t.taxel_id,
                "patch_id": t.patch_id,
                "local_position": [float(v) for v in t.local_position],
                "local_normal": [float(v) for v in t.local_normal],
                "cell_area": float(t.cell_area),
            }
            for t in skin.taxels
        ],
    }


def canonical_json(skin: SkinConfig) -> str:
    return json.dumps(to_dict(skin), sort_keys=True, separators=(",", ":"))


def from_dict(d: dict) -> SkinConfig:
    if d.get("schema_version") != SCHEMA_VERSION:
        raise SkinConfigError([f"unsupported schema_version {d.get('schema_version')!r} (expected {SCHEMA_VERSION})"])
    try:
        c = d["chain"]
        limits = c.get("joint_limits")
        chain = KinematicChain(
            joints=[Joint(np.array(j["axis"], dtype=float), np.array(j["origin"], dtype=float)) for j in c["joints"]],
            base_transform=np.array(c.get("base_transform", np.eye(4)), dtype=float),
            joint_limits=None if limits is None else [tuple(x) for x in limits],
        )
        patches = [
            Patch(
                patch_id=int(p["patch_id"]),
                link_index=int(p["link_index"]),
                mount_transform=np.array(p["mount_transform"], dtype=float),
                taxel_ids=[int(t) for t in p["taxel_ids"]],
                adjacency=[(int(a), int(b), float(r)) for a, b, r in p["adjacency"]],
                circumferential=bool(p.get("circumferential", False)),
            )
            for p in d["patches"]
        ]
        taxels = [
            Taxel(
                taxel_id=int(t["taxel_id"]),
                patch_id=int(t["patch_id"]),
                local_position=np.array(t["local_position"], dtype=float),
                local_normal=np.array(t["local_normal"], dtype=float),
                cell_area=float(t["cell_area"]),
            )
            for t in d["taxels"]
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise SkinConfigError([f"malformed config: {exc!r}"]) from exc
    return SkinConfig(chain, patches, taxels, name=d.get("name", "skin"))


def save_skin(skin: SkinConfig, path) -> None:
    Path(path).write_text(json.dumps(to_dict(skin), indent=1) + "\n")


def load_skin(path=None, validate: bool = True) -> SkinConfig:
    path = DEFAULT_CONFIG_PATH if path is None else Path(path)
    skin = from_dict(json.loads(Path(path).read_text()))
    if validate:
        problems = validate_skin(skin)
        if problems:
            raise SkinConfigError(problems)
    return skin


def validate_skin(skin: SkinConfig) -> list[str]:
    """Every invariant violation in the configuration, one message each."""
    problems = []
    chain = skin.chain
    if not tf.is_rigid(chain.base_transform):
        problems.append("chain: base_transform is not a rigid transform")
    for i, j in enumerate(chain.joints):
        if abs(np.linalg.norm(j.axis) - 1.0) > UNIT_TOL:
            problems.append(f"joint {i}: axis norm {np.linalg.norm(j.axis):.12g} is not 1")
        if not tf.is_rigid(j.origin):
            problems.append(f"joint {i}: origin is not a rigid transform")
    if chain.joint_limits is not None:
        if len(chain.joint_limits) != chain.n_joints:
            problems.append(f"chain: {len(chain.joint_limits)} joint limits for {chain.n_joints} joints")
        for i, (lo, hi) in enumerate(chain.joint_limits):
            if not lo <= hi:
                problems.append(f"joint {i}: lower limit {lo} exceeds upper limit {hi}")

    n = skin.n_taxels
    ids = [t.taxel_id for t in skin.taxels]
    seen = set()
    for pos, tid in enumerate(ids):
        if tid in seen:
            problems.append(f"taxel {tid}: duplicate taxel_id")
        seen.add(tid)
        if tid != pos:
            problems.append(f"taxel {tid}: ids must be dense 0..N-1 in order (found at position {pos})")
    patch_ids = [p.patch_id for p in skin.patches]
    if len(set(patch_ids)) != len(patch_ids):
        problems.append("patches: duplicate patch_id")
    for t in skin.taxels:
        nn = np.linalg.norm(t.local_normal)
        if abs(nn - 1.0) > UNIT_TOL:
            problems.append(f"taxel {t.taxel_id}: local_normal norm {nn:.12g} is not 1")
        if not t.cell_area > 0:
            problems.append(f"taxel {t.taxel_id}: cell_area {t.cell_area} must be > 0")
        if t.patch_id not in patch_ids:
            problems.append(f"taxel {t.taxel_id}: unknown patch_id {t.patch_id}")

    owner = {}
    for p in skin.patches:
        if not 0 <= p.link_index < chain.n_joints:
            problems.append(f"patch {p.patch_id}: link_index {p.link_index} outside chain of {chain.n_joints} links")
        if not tf.is_rigid(p.mount_transform):
            problems.append(f"patch {p.patch_id}: mount_transform is not a rigid transform")
        members = set(p.taxel_ids)
        for tid in p.taxel_ids:
            if tid in owner:
                problems.append(f"taxel {tid}: listed by patches {owner[tid]} and {p.patch_id}")
            owner[tid] = p.patch_id
            if 0 <= tid < n and skin.taxels[tid].patch_id != p.patch_id:
                problems.append(f"taxel {tid}: patch_id {skin.taxels[tid].patch_id} disagrees with patch {p.patch_id}")
        bad_edge = False
        for a, b, rest in p.adjacency:
            if a not in members or b not in members:
                problems.append(f"patch {p.patch_id}: adjacency ({a}, {b}) references a taxel outside the patch")
                bad_edge = True
                continue
            if a == b:
                problems.append(f"patch {p.patch_id}: adjacency ({a}, {b}) is a self loop")
                continue
            actual = np.linalg.norm(skin.taxels[a].local_position - skin.taxels[b].local_position)
            if abs(actual - rest) > UNIT_TOL:
                problems.append(f"patch {p.patch_id}: adjacency ({a}, {b}) rest length {rest:.12g} != {actual:.12g}")
        if members and not bad_edge:
            local = {tid: k for k, tid in enumerate(p.taxel_ids)}
            rows = [local[a] for a, b, _ in p.adjacency] if p.adjacency else []
            cols = [local[b] for a, b, _ in p.adjacency] if p.adjacency else []
            g = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(local), len(local)))
            n_comp, _ = csgraph.connected_components(g, directed=False)
            if n_comp != 1:
                problems.append(f"patch {p.patch_id}: adjacency mesh has {n_comp} connected components")
    for t in skin.taxels:
        if t.taxel_id not in owner:
            problems.append(f"taxel {t.taxel_id}: not listed by any patch")
    return problems


# --- default configuration --------------------------------------------------


def _band_patch(patch_id, link_index, mount, first_id, radius, z0, z1, n_around, n_along):
    """A closed cylindrical band around the patch-local z axis."""
    taxels = []
    angles = 2.0 * np.pi * np.arange(n_around) / n_around
    zs = np.linspace(z0, z1, n_along)
    arc = 2.0 * np.pi * radius / n_around
    pitch = (z1 - z0) / (n_along - 1)

    def tid(i, k):
        return first_id + i * n_around + (k % n_around)

    for i, z in enumerate(zs):
        for k, a in enumerate(angles):
            c, s = math.cos(a), math.sin(a)
            taxels.append(Taxel(tid(i, k), patch_id, np.array([radius * c, radius * s, z]), np.array([c, s, 0.0]), arc * pitch))
    pos = {t.taxel_id: t.local_position for t in taxels}
    adjacency = []
    for i in range(n_along):
        for k in range(n_around):
            a = tid(i, k)
            for b in (tid(i, k + 1), tid(i + 1, k) if i + 1 < n_along else None):
                if b is not None:
                    adjacency.append((min(a, b), max(a, b), float(np.linalg.norm(pos[a] - pos[b]))))
    patch = Patch(patch_id, link_index, mount, [t.taxel_id for t in taxels], adjacency, circumferential=True)
    return patch, taxels


# (link, radius, z0, z1, n_around, n_along); distal links carry denser bands.
UR5_LIKE_BANDS = [
    (0, 0.065, 0.0, 0.08, 24, 6),
    (1, 0.060, 0.02, 0.20, 24, 12),
    (1, 0.060, 0.22, 0.40, 24, 12),
    (2, 0.050, 0.02, 0.19, 24, 12),
    (2, 0.050, 0.21, 0.38, 24, 12),
    (3, 0.045, 0.015, 0.085, 28, 8),
    (4, 0.045, 0.01, 0.09, 32, 10),
    (5, 0.040, 0.01, 0.08, 34, 8),
]
# Lateral elbow offset: folding the elbow to pi leaves a 4.5 mm gap between the
# inner faces of the upper-arm and forearm bands.
ELBOW_OFFSET = 0.1145
ELBOW_FOLD_ANGLE = math.pi


def ur5_like() -> SkinConfig:
    """Six revolute joints, eight band patches, 2112 taxels."""
    y, z = (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)
    joints = [
        Joint(np.array(z), tf.translation(0, 0, 0.089)),
        Joint(np.array(y), tf.translation(0, 0, 0.1)),
        Joint(np.array(y), tf.translation(0, -ELBOW_OFFSET, 0.425)),
        Joint(np.array(y), tf.translation(0, 0, 0.392)),
        Joint(np.array(z), tf.translation(0, 0, 0.1)),
        Joint(np.array(y), tf.translation(0, 0, 0.1)),
    ]
    limits = [(-math.pi, math.pi), (-1.5, 1.5), (-2.5, 2.5), (-math.pi, math.pi), (-math.pi, math.pi), (-math.pi, math.pi)]
    chain = KinematicChain(joints, tf.identity(), limits)
    patches, taxels = [], []
    for pid, (link, r, z0, z1, na, nz) in enumerate(UR5_LIKE_BANDS):
        p, ts = _band_patch(pid, link, tf.identity(), len(taxels), r, z0, z1, na, nz)
        patches.append(p)
        taxels.extend(ts)
    return SkinConfig(chain, patches, taxels, name="ur5_like_2112")


def default_skin() -> SkinConfig:
    return load_skin(DEFAULT_CONFIG_PATH, validate=False)
