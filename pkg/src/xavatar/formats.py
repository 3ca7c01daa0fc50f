"""File codecs: tri-plane (.tpz), decoder weights (.xdw), PFM depth, PNG
images and the JSON documents (body model, pose, boxes, motion).

All writers go through :func:`atomic_write` (temp file + rename).
"""
from __future__ import annotations

import io
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from .body_model import BodyModel, Capsule, PoseParams
from .triplane import BoundingBoxSet, DecoderWeights, TriPlaneSet, pack_feature_map, split_feature_map

TPZ_MAGIC = b"XATP"
XDW_MAGIC = b"XADW"
FORMAT_VERSION = 1
_PART_TAGS = ((b"b", "body"), (b"f", "face"), (b"h", "hand"))
_PACKED_TAG = b"p"


class FormatError(ValueError):
    """Malformed or unsupported file contents."""


def atomic_write(path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _read(path) -> bytes:
    return Path(path).read_bytes()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("unexpected end of file")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))

    def floats(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * count), dtype="<f4").copy()

    def done(self):
        if self.pos != len(self.data):
            raise FormatError("trailing bytes")


def _check_header(r: _Reader, magic: bytes):
    if r.take(4) != magic:
        raise FormatError(f"bad magic, expected {magic!r}")
    (version,) = r.unpack("<H")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version}")


# --------------------------------------------------------------------------
# tri-planes


def encode_triplanes(planes: TriPlaneSet, packed: bool = False) -> bytes:
    out = io.BytesIO()
    out.write(TPZ_MAGIC + struct.pack("<H", FORMAT_VERSION))
    if packed:
        fmap = pack_feature_map(planes)
        out.write(_PACKED_TAG + struct.pack("<III", fmap.shape[0], fmap.shape[1], fmap.shape[2]))
        out.write(np.ascontiguousarray(fmap, dtype="<f4").tobytes())
        return out.getvalue()
    for tag, name in _PART_TAGS:
        arr = getattr(planes, name)
        out.write(tag + struct.pack("<II", arr.shape[-1], arr.shape[1]))
        out.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return out.getvalue()


def decode_triplanes(data: bytes) -> TriPlaneSet:
    r = _Reader(data)
    _check_header(r, TPZ_MAGIC)
    tag = r.take(1)
    if tag == _PACKED_TAG:
        h, w, c = r.unpack("<III")
        fmap = r.floats(h * w * c).reshape(h, w, c)
        r.done()
        return split_feature_map(fmap)
    parts = {}
    for expected, name in _PART_TAGS:
        if tag != expected:
            raise FormatError(f"expected part tag {expected!r}, got {tag!r}")
        w, c = r.unpack("<II")
        parts[name] = r.floats(3 * c * w * w).reshape(3, c, w, w)
        if name != "hand":
            tag = r.take(1)
    r.done()
    return TriPlaneSet(**parts)


def save_triplanes(path, planes: TriPlaneSet, packed: bool = False) -> Path:
    return atomic_write(path, encode_triplanes(planes, packed))


def load_triplanes(path) -> TriPlaneSet:
    return decode_triplanes(_read(path))


# --------------------------------------------------------------------------
# decoder weights: header, f64 alpha, layer manifest (name, shape), f32 payload


def encode_decoder(dec: DecoderWeights) -> bytes:
    out = io.BytesIO()
    out.write(XDW_MAGIC + struct.pack("<H", FORMAT_VERSION))
    out.write(struct.pack("<dI", dec.alpha, len(dec.TENSORS)))
    for name in dec.TENSORS:
        arr = getattr(dec, name)
        raw = name.encode("ascii")
        out.write(struct.pack("<B", len(raw)) + raw + struct.pack("<B", arr.ndim))
        out.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    for name in dec.TENSORS:
        out.write(np.ascontiguousarray(getattr(dec, name), dtype="<f4").tobytes())
    return out.getvalue()


def decode_decoder(data: bytes) -> DecoderWeights:
    r = _Reader(data)
    _check_header(r, XDW_MAGIC)
    alpha, n = r.unpack("<dI")
    manifest = []
    for _ in range(n):
        (length,) = r.unpack("<B")
        name = r.take(length).decode("ascii")
        (ndim,) = r.unpack("<B")
        manifest.append((name, r.unpack(f"<{ndim}I")))
    if [m[0] for m in manifest] != list(DecoderWeights.TENSORS):
        raise FormatError("decoder layer manifest does not match")
    tensors = {name: r.floats(int(np.prod(shape))).reshape(shape) for name, shape in manifest}
    r.done()
    return DecoderWeights(**tensors, alpha=alpha)


def save_decoder(path, dec: DecoderWeights) -> Path:
    return atomic_write(path, encode_decoder(dec))


def load_decoder(path) -> DecoderWeights:
    return decode_decoder(_read(path))


# --------------------------------------------------------------------------
# images


def encode_pfm(depth: np.ndarray) -> bytes:
    """Single-channel little-endian PFM; rows stored bottom-to-top."""
    d = np.asarray(depth, dtype="<f4")
    if d.ndim != 2:
        raise ValueError("PFM depth must be 2-D")
    h, w = d.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    return header + np.ascontiguousarray(d[::-1]).tobytes()


def decode_pfm(data: bytes) -> np.ndarray:
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"Pf":
        raise FormatError("not a single-channel PFM")
    w, h = (int(x) for x in parts[1].split())
    scale = float(parts[2])
    dtype = "<f4" if scale < 0 else ">f4"
    body = parts[3]
    if len(body) != 4 * w * h:
        raise FormatError("PFM payload size mismatch")
    return np.frombuffer(body, dtype=dtype).reshape(h, w)[::-1].astype(np.float32)


def save_pfm(path, depth) -> Path:
    return atomic_write(path, encode_pfm(depth))


def load_pfm(path) -> np.ndarray:
    return decode_pfm(_read(path))


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def encode_png(img: np.ndarray) -> bytes:
    """8-bit PNG from a float image in [0, 1] (H x W or H x W x 3) or uint8."""
    a = np.asarray(img)
    if a.dtype != np.uint8:
        a = to_uint8(a)
    buf = io.BytesIO()
    Image.fromarray(a).save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data: bytes) -> np.ndarray:
    return np.array(Image.open(io.BytesIO(data)))


def save_png(path, img) -> Path:
    return atomic_write(path, encode_png(img))


def load_png(path) -> np.ndarray:
    return decode_png(_read(path))


# --------------------------------------------------------------------------
# JSON documents; Python's float repr round-trips binary64 exactly


def dumps_json(obj) -> bytes:
    return (json.dumps(obj, indent=1, sort_keys=True) + "\n").encode("utf-8")


def save_json(path, obj) -> Path:
    return atomic_write(path, dumps_json(obj))


def load_json(path):
    try:
        return json.loads(_read(path))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def body_model_to_dict(model: BodyModel) -> dict:
    w = model.skinning_weights
    vi, ji = np.nonzero(w)
    return {
        "format": "xavatar-body-model",
        "version": FORMAT_VERSION,
        "meta": model.meta,
        "vertices": model.vertices_canonical.tolist(),
        "weights": [[int(v), int(j), float(w[v, j])] for v, j in zip(vi, ji)],
        "joints": [{"name": n, "parent": int(p), "offset": o.tolist(), "canonical_rotation": r.tolist()}
                   for n, p, o, r in zip(model.joint_names, model.parents, model.rest_offsets,
                                         model.canonical_rotations)],
        "shape_dirs": model.shape_dirs.tolist(),
        "expr_dirs": model.expr_dirs.tolist(),
        "capsules": [{"a": c.endpoint_a.tolist(), "b": c.endpoint_b.tolist(), "radius": c.radius,
                      "joint": c.joint, "part": c.part} for c in model.capsules],
        "part_labels": [str(x) for x in model.part_labels],
    }


def body_model_from_dict(d: dict) -> BodyModel:
    if d.get("format") != "xavatar-body-model":
        raise FormatError("not a body model document")
    n = len(d["vertices"])
    joints = d["joints"]
    w = np.zeros((n, len(joints)))
    for v, j, val in d["weights"]:
        w[int(v), int(j)] = val
    return BodyModel(
        vertices_canonical=np.array(d["vertices"], dtype=np.float64).reshape(n, 3),
        skinning_weights=w,
        parents=[j["parent"] for j in joints],
        rest_offsets=[j["offset"] for j in joints],
        shape_dirs=np.array(d["shape_dirs"], dtype=np.float64).reshape(n, 3, -1),
        expr_dirs=np.array(d["expr_dirs"], dtype=np.float64).reshape(n, 3, -1),
        capsules=[Capsule(c["a"], c["b"], c["radius"], c["joint"], c["part"]) for c in d["capsules"]],
        part_labels=d["part_labels"],
        canonical_rotations=[j["canonical_rotation"] for j in joints],
        joint_names=tuple(j["name"] for j in joints),
        meta=d.get("meta", {}),
    )


def save_body_model(path, model: BodyModel) -> Path:
    return save_json(path, body_model_to_dict(model))


def load_body_model(path) -> BodyModel:
    return body_model_from_dict(load_json(path))


def save_pose(path, pose: PoseParams, extra: dict | None = None) -> Path:
    return save_json(path, {**(extra or {}), "pose": pose.to_dict()})


def load_pose(path) -> tuple[PoseParams, dict]:
    """Pose document: ``{"pose": {...}, ...extra}``; returns (pose, extras)."""
    doc = load_json(path)
    if "pose" not in doc:
        raise FormatError(f"{path}: missing 'pose'")
    extra = {k: v for k, v in doc.items() if k != "pose"}
    return PoseParams.from_dict(doc["pose"]), extra


def save_boxes(path, boxes: BoundingBoxSet) -> Path:
    return save_json(path, boxes.to_dict())


def load_boxes(path) -> BoundingBoxSet:
    return BoundingBoxSet.from_dict(load_json(path))
