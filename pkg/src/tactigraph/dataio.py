"""Binary dataset files and the streaming frame wire format.

Recording file (little-endian)::

    b"TGR1" | u32 n_taxels | u32 n_frames | f32 f_s
    f32[n_frames, n_taxels]   pressures, frame-major
    f32[n_frames, n_joints]   joint state per frame
    u32 n_segments | (u32 start, u32 end, i32 class)[n_segments]

The joint count is not in the header; it is recorded in the dataset manifest.

Frame message: b"TGF1" | u32 n_taxels | f32[n_taxels] | f32[n_joints]
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .segmentation import Segment
from .synth import Recording

REC_MAGIC = b"TGR1"
FRAME_MAGIC = b"TGF1"
MANIFEST = "manifest.json"
_HEADER = struct.Struct("<4sIIf")
_SEG = np.dtype([("start", "<u4"), ("end", "<u4"), ("label", "<i4")])


class FormatError(ValueError):
    pass


def encode_recording(rec: Recording) -> bytes:
    T, N = rec.pressures.shape
    seg = np.array([(s.start_frame, s.end_frame, s.label) for s in rec.ground_truth], dtype=_SEG)
    return b"".join(
        [
            _HEADER.pack(REC_MAGIC, N, T, rec.f_s),
            np.ascontiguousarray(rec.pressures, dtype="<f4").tobytes(),
            np.ascontiguousarray(rec.q, dtype="<f4").tobytes(),
            struct.pack("<I", len(seg)),
            seg.tobytes(),
        ]
    )


def decode_recording(buf: bytes, n_joints: int, meta: dict | None = None) -> Recording:
    if len(buf) < _HEADER.size:
        raise FormatError("truncated recording header")
    magic, N, T, f_s = _HEADER.unpack_from(buf)
    if magic != REC_MAGIC:
        raise FormatError(f"bad recording magic {magic!r}")
    off = _HEADER.size
    pressures = np.frombuffer(buf, dtype="<f4", count=T * N, offset=off).reshape(T, N).astype(np.float32)
    off += 4 * T * N
    q = np.frombuffer(buf, dtype="<f4", count=T * n_joints, offset=off).reshape(T, n_joints).astype(np.float32)
    off += 4 * T * n_joints
    (n_seg,) = struct.unpack_from("<I", buf, off)
    off += 4
    seg = np.frombuffer(buf, dtype=_SEG, count=n_seg, offset=off)
    if off + seg.nbytes != len(buf):
        raise FormatError("trailing bytes after segment table")
    gt = [Segment(int(s["start"]), int(s["end"]), int(s["label"])) for s in seg]
    return Recording(pressures, q, float(f_s), gt, dict(meta or {}))


def write_dataset(path, recordings, skin, seed: int, counts, errors=()) -> Path:
    """Directory with manifest.json plus one .bin file per recording."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, rec in enumerate(recordings):
        name = f"rec_{i:05d}.bin"
        (path / name).write_bytes(encode_recording(rec))
        entries.append({"file": name, **_jsonable(rec.meta)})
    f_s = recordings[0].f_s if recordings else 50.0
    manifest = {
        "format": "TGR1",
        "skin_config_hash": skin.config_hash,
        "n_taxels": skin.n_taxels,
        "n_joints": skin.chain.n_joints,
        "seed": seed,
        "counts": list(counts),
        "f_s": f_s,
        "errors": [[int(i), str(r)] for i, r in errors],
        "recordings": entries,
    }
    (path / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def read_manifest(path) -> dict:
    return json.loads((Path(path) / MANIFEST).read_text())


def read_dataset(path, skin=None) -> list[Recording]:
    path = Path(path)
    manifest = read_manifest(path)
    if skin is not None and manifest["skin_config_hash"] != skin.config_hash:
        raise FormatError(f"dataset {path} was synthesized for a different skin configuration")
    out = []
    for entry in manifest["recordings"]:
        meta = {k: v for k, v in entry.items() if k != "file"}
        out.append(decode_recording((path / entry["file"]).read_bytes(), manifest["n_joints"], meta))
    return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def encode_frame(pressure, q) -> bytes:
    pressure = np.ascontiguousarray(pressure, dtype="<f4")
    return FRAME_MAGIC + struct.pack("<I", len(pressure)) + pressure.tobytes() + np.ascontiguousarray(q, dtype="<f4").tobytes()


def frame_size(n_taxels: int, n_joints: int) -> int:
    return 8 + 4 * (n_taxels + n_joints)


def decode_frame(buf: bytes, n_joints: int):
    if buf[:4] != FRAME_MAGIC:
        raise FormatError(f"bad frame magic {bytes(buf[:4])!r}")
    (n,) = struct.unpack_from("<I", buf, 4)
    if len(buf) != frame_size(n, n_joints):
        raise FormatError(f"frame of {len(buf)} bytes, expected {frame_size(n, n_joints)}")
    pressure = np.frombuffer(buf, dtype="<f4", count=n, offset=8).astype(np.float32)
    q = np.frombuffer(buf, dtype="<f4", count=n_joints, offset=8 + 4 * n).astype(np.float32)
    return pressure, q


def read_frames(stream, n_joints: int):
    """Yield (pressure, q) pairs from a binary stream of frame messages."""
    while True:
        head = _read_exact(stream, 8)
        if head is None:
            return
        if head[:4] != FRAME_MAGIC:
            raise FormatError(f"bad frame magic {head[:4]!r}")
        (n,) = struct.unpack_from("<I", head, 4)
        body = _read_exact(stream, 4 * (n + n_joints))
        if body is None:
            raise FormatError("stream ended inside a frame")
        yield decode_frame(head + body, n_joints)


def _read_exact(stream, n: int):
    chunks, got = [], 0
    while got < n:
        b = stream.read(n - got) if hasattr(stream, "read") else stream.recv(n - got)
        if not b:
            if got == 0:
                return None
            raise FormatError("stream ended inside a frame")
        chunks.append(b)
        got += len(b)
    return b"".join(chunks)
