"""Synthetic tactile gesture recordings.

Pressure at taxel i and time t is a Gaussian footprint around a contact
center c(t) on the skin surface, gated by whether the taxel's normal faces the
contact source (a point just above the surface at c), and scaled by a
class-specific temporal envelope:

    p_i(t) = A * exp(-|c(t) - x_i|^2 / (2 sigma^2)) * env(t) * [n_i . (s(t) - x_i) > 0]
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import GESTURES, CLASS_INDEX
from .segmentation import GAP_MIN, LEN_MIN, THETA_LABEL, Segment, segment_trace, to_frames
from .skin import SkinConfig, UnknownTaxelError, check_joint_state, geometric_distance, taxel_world_poses

log = logging.getLogger(__name__)

F_S = 50.0
NOISE_STD = 0.01
SOURCE_HEIGHT = 0.002  # contact source sits this far above the surface, meters
PLATEAU_RAMP = 0.1
RECORDING_SECONDS = 3.0
START_RANGE = (0.3, 0.6)
MAX_STROKE_SECONDS = 1.5

PARAM_RANGES = {
    "amplitude": (0.3, 1.0),
    "poke": {"sigma": (0.005, 0.012), "width": (0.2, 0.4)},
    "double_pat": {"sigma": (0.015, 0.030), "width": (0.15, 0.25), "gap": (0.1, 0.3)},
    "grab": {"sigma": (0.015, 0.025), "plateau": (0.5, 1.5), "n_centers": (3, 6)},
    "stroke": {"sigma": (0.006, 0.012), "speed": (0.05, 0.2), "path": (0.05, 0.15)},
}


class InfeasibleGesture(ValueError):
    pass


@dataclass(frozen=True)
class PressureFrame:
    t: float
    pressure: np.ndarray
    q: np.ndarray


@dataclass
class GestureScript:
    gesture: str
    anchor: int
    params: dict
    start_time: float = START_RANGE[0]

    @property
    def label(self) -> int:
        return CLASS_INDEX[self.gesture]


@dataclass
class Recording:
    pressures: np.ndarray  # (T, N) float32, frame-major
    q: np.ndarray  # (T, J) float32
    f_s: float = F_S
    ground_truth: list[Segment] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def n_frames(self) -> int:
        return self.pressures.shape[0]

    @property
    def n_taxels(self) -> int:
        return self.pressures.shape[1]

    def frame(self, k: int) -> PressureFrame:
        return PressureFrame(k / self.f_s, self.pressures[k], self.q[k])

    def __iter__(self):
        return (self.frame(k) for k in range(self.n_frames))


# --- envelopes ----------------------------------------------------------------


def raised_cosine(t, start: float, width: float):
    """One pulse rising from 0 at `start` to 1 at start+width/2 and back to 0."""
    t = np.asarray(t, dtype=float)
    phase = (t - start) / width
    inside = (phase >= 0.0) & (phase <= 1.0)
    return np.where(inside, 0.5 * (1.0 - np.cos(2.0 * np.pi * phase)), 0.0)


def plateau(t, start: float, hold: float, ramp: float = PLATEAU_RAMP):
    """Half-cosine ramp up, flat hold, half-cosine ramp down."""
    t = np.asarray(t, dtype=float)
    up = np.clip((t - start) / ramp, 0.0, 1.0)
    down = np.clip((start + ramp + hold + ramp - t) / ramp, 0.0, 1.0)
    return 0.5 * (1.0 - np.cos(np.pi * np.minimum(up, down)))


def envelope(script: GestureScript, t):
    p, t0 = script.params, script.start_time
    if script.gesture == "poke":
        return raised_cosine(t, t0, p["width"])
    if script.gesture == "double_pat":
        w = p["width"]
        return raised_cosine(t, t0, w) + raised_cosine(t, t0 + w + p["gap"], w)
    if script.gesture == "grab":
        return plateau(t, t0, p["plateau"])
    if script.gesture == "stroke":
        return plateau(t, t0, stroke_hold(p))
    raise ValueError(f"unknown gesture {script.gesture!r}")


def stroke_hold(params) -> float:
    return params["path_length"] / params["speed"]


def gesture_duration(script: GestureScript) -> float:
    p = script.params
    return {
        "poke": lambda: p["width"],
        "double_pat": lambda: 2 * p["width"] + p["gap"],
        "grab": lambda: p["plateau"] + 2 * PLATEAU_RAMP,
        "stroke": lambda: stroke_hold(p) + 2 * PLATEAU_RAMP,
    }[script.gesture]()


# --- contact geometry ---------------------------------------------------------


def grab_centers(skin: SkinConfig, anchor: int, n_centers: int) -> list[int]:
    """n_centers taxels evenly spaced around the band ring through the anchor."""
    patch = skin.patch_of(anchor)
    if not patch.circumferential:
        raise InfeasibleGesture(f"grab needs a circumferential band; patch {patch.patch_id} is not one")
    ids = np.asarray(patch.taxel_ids)
    local = skin.local_positions[ids]
    z = skin.local_positions[anchor, 2]
    ring = ids[np.abs(local[:, 2] - z) < 1e-9]
    if len(ring) < n_centers:
        raise InfeasibleGesture(f"ring through taxel {anchor} has {len(ring)} taxels, need {n_centers}")
    angles = np.arctan2(skin.local_positions[ring, 1], skin.local_positions[ring, 0])
    ring = ring[np.argsort(angles, kind="stable")]
    start = int(np.flatnonzero(ring == anchor)[0])
    return [int(ring[(start + round(j * len(ring) / n_centers)) % len(ring)]) for j in range(n_centers)]


def _polyline_at(points: np.ndarray, s: np.ndarray, values: np.ndarray | None = None) -> np.ndarray:
    """Points at arc lengths s along a polyline, or per-vertex values
    interpolated at the same places."""
    values = points if values is None else values
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    cum = np.concatenate(([0.0], np.cumsum(seg)))
    out = np.empty((len(s), values.shape[1]))
    for d in range(values.shape[1]):
        out[:, d] = np.interp(s, cum, values[:, d])
    return out


def _contact_tracks(skin, poses, script: GestureScript, t):
    """Per contact: (centers (T, 3), source points (T, 3))."""
    p = script.params
    if script.gesture == "grab":
        anchors = grab_centers(skin, script.anchor, int(p["n_centers"]))
    else:
        anchors = [script.anchor]
    tracks = []
    if script.gesture == "stroke":
        path = skin.geodesic_path(script.anchor, p["end_taxel"])
        pts, nrm = poses.positions[path], poses.normals[path]
        if len(path) == 1:
            pts, nrm = np.repeat(pts, 2, axis=0), np.repeat(nrm, 2, axis=0)
        travel = np.clip(t - script.start_time - PLATEAU_RAMP, 0.0, stroke_hold(p)) * p["speed"]
        # speed is defined along the mesh path; map to the world polyline proportionally
        world_len = np.linalg.norm(np.diff(pts, axis=0), axis=1).sum()
        frac = travel / max(p["path_length"], 1e-12)
        c = _polyline_at(pts, frac * world_len)
        n = _polyline_at(pts, frac * world_len, nrm)
        n /= np.linalg.norm(n, axis=1, keepdims=True)
        tracks.append((c, c + SOURCE_HEIGHT * n))
    else:
        for a in anchors:
            c = np.repeat(poses.positions[a][None], len(t), axis=0)
            s = c + SOURCE_HEIGHT * poses.normals[a]
            tracks.append((c, s))
    return tracks


def pressure_field(skin, poses, script: GestureScript, t) -> np.ndarray:
    """Noiseless pressures (T, N) before clamping."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    p = script.params
    A, sigma = p["amplitude"], p["sigma"]
    env = envelope(script, t)
    x, n = poses.positions, poses.normals
    field_ = np.zeros((len(t), len(x)))
    for c, s in _contact_tracks(skin, poses, script, t):
        if script.gesture != "stroke":
            # stationary contact: one spatial profile scaled by the envelope
            c, s = c[:1], s[:1]
        d2 = ((c[:, None, :] - x[None]) ** 2).sum(axis=2)
        facing = np.einsum("nk,tnk->tn", n, s[:, None, :] - x[None]) > 0.0
        with np.errstate(under="ignore"):
            field_ += np.exp(-d2 / (2.0 * sigma * sigma)) * facing
    return A * env[:, None] * field_


def validate_script(skin: SkinConfig, script: GestureScript) -> None:
    if script.gesture not in CLASS_INDEX:
        raise ValueError(f"unknown gesture {script.gesture!r}")
    try:
        skin.taxel(script.anchor)
    except UnknownTaxelError:
        raise UnknownTaxelError(f"unknown contact anchor taxel {script.anchor}") from None
    p = script.params
    if not 0.0 <= p["amplitude"] <= 1.0:
        raise ValueError("amplitude must lie in [0, 1]")
    if not p["sigma"] > 0.0:
        raise ValueError("sigma must be positive")
    needed = {"poke": ["width"], "double_pat": ["width", "gap"], "grab": ["plateau", "n_centers"], "stroke": ["end_taxel", "speed"]}
    for key in needed[script.gesture]:
        if key not in p:
            raise ValueError(f"{script.gesture} script needs parameter {key!r}")
    if script.gesture == "grab" and not 3 <= int(p["n_centers"]) <= 6:
        raise ValueError("grab uses 3 to 6 contact centers")
    if script.gesture == "stroke":
        try:
            skin.taxel(p["end_taxel"])
        except UnknownTaxelError:
            raise UnknownTaxelError(f"unknown stroke end taxel {p['end_taxel']}") from None
        if skin.taxel_patch[p["end_taxel"]] != skin.taxel_patch[script.anchor]:
            raise InfeasibleGesture(f"stroke from taxel {script.anchor} to {p['end_taxel']} leaves the patch")
        if not p["speed"] > 0:
            raise ValueError("stroke speed must be positive")


def synthesize_gesture(
    skin: SkinConfig,
    q,
    script: GestureScript,
    rng_seed,
    duration: float = RECORDING_SECONDS,
    f_s: float = F_S,
    noise_std: float = NOISE_STD,
    theta_label: float = THETA_LABEL,
) -> Recording:
    """One recording at a fixed robot pose with a single scripted gesture."""
    validate_script(skin, script)
    q = check_joint_state(skin.chain, q)
    if script.gesture == "stroke":
        script.params.setdefault("path_length", geometric_distance(skin, script.anchor, script.params["end_taxel"]))
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    n_frames = int(round(duration * f_s))
    t = np.arange(n_frames) / f_s
    poses = taxel_world_poses(skin, q)
    clean = np.clip(pressure_field(skin, poses, script, t), 0.0, 1.0)
    noisy = clean + rng.normal(0.0, noise_std, size=clean.shape) if noise_std > 0 else clean
    pressures = np.clip(noisy, 0.0, 1.0).astype(np.float32)
    gt = ground_truth_segments(clean, script.label, f_s, theta_label)
    qs = np.repeat(q.astype(np.float32)[None], n_frames, axis=0)
    meta = {"gesture": script.gesture, "anchor": int(script.anchor), "start_time": float(script.start_time), "params": dict(script.params)}
    return Recording(pressures, qs, f_s, gt, meta)


def ground_truth_segments(clean: np.ndarray, label: int, f_s: float, theta_label: float = THETA_LABEL) -> list[Segment]:
    """Labeling rule applied to the noiseless max-pressure trace."""
    if clean.size == 0:
        return []
    segs = segment_trace(clean.max(axis=1) > theta_label, to_frames(GAP_MIN, f_s), to_frames(LEN_MIN, f_s))
    return [Segment(s.start_frame, s.end_frame, label) for s in segs]


# --- datasets -----------------------------------------------------------------


class UniformPoseSampler:
    """Joint angles drawn uniformly within the chain's joint limits, rounded to float32."""

    def __init__(self, chain):
        limits = chain.joint_limits or [(-np.pi, np.pi)] * chain.n_joints
        self.lo = np.array([lo for lo, _ in limits], dtype=float)
        self.hi = np.array([hi for _, hi in limits], dtype=float)

    def __call__(self, rng, index):
        return rng.uniform(self.lo, self.hi).astype(np.float32).astype(float)


class PosePool:
    """Cycle through a fixed list of poses (robot held stationary across several gestures)."""

    def __init__(self, poses):
        self.poses = [np.asarray(p, dtype=np.float32).astype(float) for p in poses]

    def __call__(self, rng, index):
        return self.poses[index % len(self.poses)]


def make_pose_pool(chain, n: int, seed: int) -> list[np.ndarray]:
    sampler = UniformPoseSampler(chain)
    rng = np.random.default_rng(seed)
    return [sampler(rng, i) for i in range(n)]


def _u(rng, lo_hi):
    return float(rng.uniform(*lo_hi))


def random_script(skin: SkinConfig, gesture: str, rng: np.random.Generator, ranges=PARAM_RANGES, max_tries: int = 50) -> GestureScript:
    """A gesture with parameters and anchor drawn from the documented ranges."""
    r = ranges[gesture]
    params = {"amplitude": _u(rng, ranges["amplitude"]), "sigma": _u(rng, r["sigma"])}
    start = _u(rng, START_RANGE)
    n = skin.n_taxels
    if gesture == "poke":
        params["width"] = _u(rng, r["width"])
        return GestureScript(gesture, int(rng.integers(n)), params, start)
    if gesture == "double_pat":
        params["width"] = _u(rng, r["width"])
        params["gap"] = _u(rng, r["gap"])
        return GestureScript(gesture, int(rng.integers(n)), params, start)
    if gesture == "grab":
        band = np.concatenate([p.taxel_ids for p in skin.patches if p.circumferential] or [np.empty(0, dtype=int)])
        if len(band) == 0:
            raise InfeasibleGesture("grab needs a circumferential patch band and the skin has none")
        params["plateau"] = _u(rng, r["plateau"])
        params["n_centers"] = int(rng.integers(r["n_centers"][0], r["n_centers"][1] + 1))
        anchor = int(band[rng.integers(len(band))])
        grab_centers(skin, anchor, params["n_centers"])
        return GestureScript(gesture, anchor, params, start)
    if gesture == "stroke":
        lo, hi = r["path"]
        for _ in range(max_tries):
            anchor = int(rng.integers(n))
            dist, _ = skin._dijkstra(anchor)
            ok = np.flatnonzero((dist >= lo) & (dist <= hi))
            if len(ok):
                end = int(ok[rng.integers(len(ok))])
                length = float(dist[end])
                s_lo, s_hi = r["speed"]
                params["speed"] = float(rng.uniform(max(s_lo, length / MAX_STROKE_SECONDS), s_hi))
                params["end_taxel"] = end
                params["path_length"] = length
                return GestureScript(gesture, anchor, params, start)
        raise InfeasibleGesture(f"no stroke path of {lo}-{hi} m found on this skin after {max_tries} anchors")
    raise ValueError(f"unknown gesture {gesture!r}")


def recording_classes(counts) -> list[str]:
    if len(counts) != len(GESTURES):
        raise ValueError(f"need one count per gesture class {GESTURES}")
    if any(c < 0 for c in counts):
        raise ValueError("counts must be non-negative")
    return [g for g, c in zip(GESTURES, counts) for _ in range(c)]


def synthesize_one(skin, gesture, pose_sampler, dataset_seed: int, index: int, **kwargs) -> Recording:
    rng = np.random.default_rng(dataset_seed + index)
    q = pose_sampler(rng, index)
    script = random_script(skin, gesture, rng)
    rec = synthesize_gesture(skin, q, script, rng, **kwargs)
    rec.meta["index"] = index
    return rec


def _worker(args):
    skin, gesture, sampler, seed, index, kwargs = args
    try:
        return index, synthesize_one(skin, gesture, sampler, seed, index, **kwargs), None
    except ValueError as exc:
        return index, None, f"{gesture}: {exc}"


def synthesize_dataset(skin, counts, pose_sampler=None, rng_seed: int = 0, workers: int | None = None, **kwargs):
    """Recordings for each class in order; returns (recordings, errors).

    Recording i draws from its own generator seeded with rng_seed + i, so
    serial and parallel runs agree bit for bit. Infeasible recordings are
    reported as (index, reason) and skipped.
    """
    classes = recording_classes(counts)
    sampler = pose_sampler or UniformPoseSampler(skin.chain)
    jobs = [(skin, g, sampler, rng_seed, i, kwargs) for i, g in enumerate(classes)]
    if workers is None:
        workers = int(os.environ.get("TAXEL_THREADS", "1"))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_worker, jobs, chunksize=8))
    else:
        results = [_worker(j) for j in jobs]
    recordings, errors = [], []
    for index, rec, err in results:
        if err is not None:
            log.warning("recording %d skipped: %s", index, err)
            errors.append((index, err))
        else:
            recordings.append(rec)
    return recordings, errors


# --- fold ambiguity -----------------------------------------------------------


def crease_taxels(skin: SkinConfig, q_fold, link_a: int, link_b: int, max_gap: float = 0.01) -> np.ndarray:
    """Taxels on link_a lying within max_gap of some link_b taxel at the folded pose."""
    x = taxel_world_poses(skin, q_fold).positions
    link = np.array([skin.patches[p].link_index for p in skin.taxel_patch])
    a, b = np.flatnonzero(link == link_a), np.flatnonzero(link == link_b)
    d2 = ((x[a][:, None, :] - x[b][None, :, :]) ** 2).sum(axis=2)
    return a[d2.min(axis=1) < max_gap**2]


def fold_pair(skin: SkinConfig, q_fold, q_open, crease, rng, sigma=(0.008, 0.012), W: int = 100):
    """A poke pressed into a folded joint, and the same pressures at an open pose.

    At q_fold the contact lands on both facing surfaces. Replayed at q_open the
    two footprints sit far apart, which reads as several separate contacts.
    Returns (folded, opened) GestureSamples labeled poke and grab; their
    pressure windows are identical.
    """
    from .segmentation import GestureSample, auto_segment, window_at

    r = PARAM_RANGES["poke"]
    params = {"amplitude": _u(rng, PARAM_RANGES["amplitude"]), "sigma": _u(rng, sigma), "width": _u(rng, r["width"])}
    script = GestureScript("poke", int(crease[rng.integers(len(crease))]), params, _u(rng, START_RANGE))
    rec = synthesize_gesture(skin, q_fold, script, rng)
    segs = auto_segment(rec)
    if not segs:
        raise InfeasibleGesture("fold poke left no segment")
    pressures, _ = window_at(rec, segs[-1].end_frame, W)
    seg = Segment(segs[-1].start_frame, segs[-1].end_frame)
    qf = np.repeat(np.asarray(q_fold, dtype=np.float32)[None], W, axis=0)
    qo = np.repeat(np.asarray(q_open, dtype=np.float32)[None], W, axis=0)
    folded = GestureSample(pressures, qf, CLASS_INDEX["poke"], (0, seg))
    opened = GestureSample(pressures.copy(), qo, CLASS_INDEX["grab"], (0, seg))
    return folded, opened
