"""Multi-part tri-plane feature fields and the color/SDF decoder heads.

Plane convention (shared by the file format): plane X carries (y, z), plane Y
carries (x, z), plane Z carries (x, y). The first listed coordinate indexes
columns, the second rows. Sampling is bilinear, align-corners, border-clamped.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# coordinate pairs (column, row) for planes X, Y, Z
PLANE_AXES = ((1, 2), (0, 2), (0, 1))

SOURCE_BODY, SOURCE_FACE, SOURCE_RIGHT_HAND, SOURCE_LEFT_HAND = 0, 1, 2, 3
SOURCE_NAMES = ("body", "face", "right_hand", "left_hand")

WINDOW_M = 2.0
WINDOW_N = 6


def _frozen(a, dtype=np.float32):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TriPlaneSet:
    """Body, face and (shared) hand tri-planes, each ``(3, C, W, W)``."""

    body: np.ndarray
    face: np.ndarray
    hand: np.ndarray

    def __post_init__(self):
        for name in ("body", "face", "hand"):
            arr = _frozen(getattr(self, name))
            if arr.ndim != 4 or arr.shape[0] != 3 or arr.shape[2] != arr.shape[3]:
                raise ValueError(f"{name} planes must be (3, C, W, W), got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} planes contain non-finite values")
            object.__setattr__(self, name, arr)
        wb = self.body.shape[-1]
        if wb % 2:
            raise ValueError("body resolution must be even")
        for name in ("face", "hand"):
            arr = getattr(self, name)
            if arr.shape[-1] != wb // 2:
                raise ValueError(f"{name} resolution must be half the body resolution")
            if arr.shape[1] != self.channels:
                raise ValueError("all parts must share the channel count")

    @property
    def channels(self) -> int:
        return self.body.shape[1]

    @property
    def resolutions(self) -> dict:
        return {k: getattr(self, k).shape[-1] for k in ("body", "face", "hand")}

    @classmethod
    def zeros(cls, body_res=64, channels=32):
        h = body_res // 2
        return cls(
            np.zeros((3, channels, body_res, body_res)),
            np.zeros((3, channels, h, h)),
            np.zeros((3, channels, h, h)),
        )

    def scaled(self, a: float, other: "TriPlaneSet | None" = None, b: float = 0.0):
        """``a * self + b * other`` (used for linearity checks)."""
        parts = {}
        for k in ("body", "face", "hand"):
            v = a * getattr(self, k).astype(np.float64)
            if other is not None:
                v = v + b * getattr(other, k).astype(np.float64)
            parts[k] = v
        return TriPlaneSet(**parts)


@dataclass(frozen=True)
class Box:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=np.float64).reshape(3)
        hi = np.asarray(self.max, dtype=np.float64).reshape(3)
        if not np.all(lo < hi):
            raise ValueError(f"degenerate box {lo} .. {hi}")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def center(self):
        return 0.5 * (self.min + self.max)

    def contains(self, points: np.ndarray) -> np.ndarray:
        p = np.asarray(points)
        return np.all((p >= self.min) & (p <= self.max), axis=-1)

    def intersection(self, other: "Box") -> "Box | None":
        lo = np.maximum(self.min, other.min)
        hi = np.minimum(self.max, other.max)
        return Box(lo, hi) if np.all(lo < hi) else None

    def to_dict(self):
        return {"min": self.min.tolist(), "max": self.max.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["min"], d["max"])


@dataclass(frozen=True)
class BoundingBoxSet:
    """Canonical-space part boxes and the transition (blend) boxes."""

    body: Box
    face: Box
    right_hand: Box
    left_hand: Box
    face_blend: Box
    right_hand_blend: Box
    left_hand_blend: Box

    def __post_init__(self):
        for part in ("face", "right_hand", "left_hand"):
            if getattr(self, part).intersection(getattr(self, part + "_blend")) is None:
                raise ValueError(f"{part} blend box does not overlap its part box")

    def part_box(self, part: str) -> Box:
        return getattr(self, {"hand": "right_hand"}.get(part, part))

    def to_dict(self):
        return {k: getattr(self, k).to_dict() for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: Box.from_dict(d[k]) for k in cls.__dataclass_fields__})


@dataclass(frozen=True, eq=False)
class DecoderWeights:
    """Two-layer color head (C->H->3, sigmoid) and SDF head (C+1->H->1)."""

    color_w1: np.ndarray
    color_b1: np.ndarray
    color_w2: np.ndarray
    color_b2: np.ndarray
    sdf_w1: np.ndarray
    sdf_b1: np.ndarray
    sdf_w2: np.ndarray
    sdf_b2: np.ndarray
    alpha: float = 0.1

    TENSORS = ("color_w1", "color_b1", "color_w2", "color_b2", "sdf_w1", "sdf_b1", "sdf_w2", "sdf_b2")

    def __post_init__(self):
        for name in self.TENSORS:
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        object.__setattr__(self, "alpha", float(self.alpha))
        c, h = self.color_w1.shape
        expected = {
            "color_b1": (h,),
            "color_w2": (h, 3),
            "color_b2": (3,),
            "sdf_w1": (c + 1, self.sdf_w1.shape[1]),
            "sdf_b1": (self.sdf_w1.shape[1],),
            "sdf_w2": (self.sdf_w1.shape[1], 1),
            "sdf_b2": (1,),
        }
        for name, shp in expected.items():
            if getattr(self, name).shape != shp:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shp}")

    @property
    def channels(self) -> int:
        return self.color_w1.shape[0]

    @classmethod
    def zeros(cls, channels=32, hidden=64, alpha=0.1):
        return cls(
            np.zeros((channels, hidden)), np.zeros(hidden), np.zeros((hidden, 3)), np.zeros(3),
            np.zeros((channels + 1, hidden)), np.zeros(hidden), np.zeros((hidden, 1)), np.zeros(1),
            alpha,
        )

    @classmethod
    def seeded(cls, seed, channels=32, hidden=64, alpha=0.1, sdf_scale=1e-2):
        """He-style random init; the SDF output layer is scaled down so the
        predicted geometry stays close to the base SDF."""
        rng = np.random.default_rng(seed)

        def dense(n_in, n_out, gain=1.0):
            return rng.normal(0.0, gain * np.sqrt(2.0 / n_in), (n_in, n_out))

        return cls(
            dense(channels, hidden), np.zeros(hidden), dense(hidden, 3), np.zeros(3),
            dense(channels + 1, hidden), np.zeros(hidden), dense(hidden, 1, sdf_scale), np.zeros(1),
            alpha,
        )

    def with_zero_sdf_head(self) -> "DecoderWeights":
        kw = {k: getattr(self, k) for k in self.TENSORS}
        for k in ("sdf_w1", "sdf_b1", "sdf_w2", "sdf_b2"):
            kw[k] = np.zeros_like(kw[k])
        return DecoderWeights(**kw, alpha=self.alpha)


# --------------------------------------------------------------------------
# sampling


def normalize_to_bbox(points, box: Box) -> np.ndarray:
    """Map the box to [-1, 1]^3 (center to the origin); no clamping."""
    p = np.asarray(points, dtype=np.float64)
    return (2.0 * p - (box.min + box.max)) / (box.max - box.min)


def sample_plane(plane: np.ndarray, uv) -> np.ndarray:
    """Bilinear lookup on a ``(C, W, W)`` grid at ``uv`` in [-1, 1].

    ``uv[..., 0]`` picks the column and ``uv[..., 1]`` the row; -1 and +1 land
    on the outermost texel centers and anything beyond is clamped.
    Returns ``(..., C)``.
    """
    uv = np.asarray(uv, dtype=np.float64)
    _, h, w = plane.shape
    x = np.clip((uv[..., 0] + 1.0) * 0.5 * (w - 1), 0.0, w - 1)
    y = np.clip((uv[..., 1] + 1.0) * 0.5 * (h - 1), 0.0, h - 1)
    x0 = np.minimum(np.floor(x).astype(np.int64), w - 2)
    y0 = np.minimum(np.floor(y).astype(np.int64), h - 2)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    grid = np.moveaxis(plane, 0, -1)  # (H, W, C)
    f00 = grid[y0, x0]
    f01 = grid[y0, x0 + 1]
    f10 = grid[y0 + 1, x0]
    f11 = grid[y0 + 1, x0 + 1]
    top = f00 * (1.0 - fx) + f01 * fx
    bottom = f10 * (1.0 - fx) + f11 * fx
    return top * (1.0 - fy) + bottom * fy


def query_normalized(normalized, planes: np.ndarray) -> np.ndarray:
    """Sum of the three plane samples at already-normalized coordinates."""
    p = np.asarray(normalized, dtype=np.float64)
    out = 0.0
    for t, (a, b) in enumerate(PLANE_AXES):
        out = out + sample_plane(planes[t], p[..., [a, b]])
    return out


def _part_planes(part, planes: TriPlaneSet):
    if part == "body":
        return planes.body
    if part == "face":
        return planes.face
    if part in ("hand", "right_hand", "left_hand"):
        return planes.hand
    raise ValueError(f"unknown part {part!r}")


def query_part(points, part: str, planes: TriPlaneSet, boxes: BoundingBoxSet) -> np.ndarray:
    """Feature of canonical points from ``part``'s own tri-plane.

    ``"hand"`` means the right hand, whose box indexes the shared hand planes
    directly.
    """
    if part == "left_hand":
        return query_left_hand(points, planes, boxes)
    grid = _part_planes(part, planes)
    return query_normalized(normalize_to_bbox(points, boxes.part_box(part)), grid)


def flip_x(normalized) -> np.ndarray:
    return np.asarray(normalized, dtype=np.float64) * np.array([-1.0, 1.0, 1.0])


def query_left_hand(points, planes: TriPlaneSet, boxes: BoundingBoxSet) -> np.ndarray:
    """Left-hand points reuse the hand planes with the normalized x negated."""
    return query_normalized(flip_x(normalize_to_bbox(points, boxes.left_hand)), planes.hand)


def route_sources(points, boxes: BoundingBoxSet) -> np.ndarray:
    """Which tri-plane each body point reads: face > right hand > left hand > body."""
    p = np.asarray(points, dtype=np.float64)
    src = np.full(p.shape[:-1], SOURCE_BODY, dtype=np.int8)
    # assign lowest precedence first so higher ones overwrite
    src[boxes.left_hand.contains(p)] = SOURCE_LEFT_HAND
    src[boxes.right_hand.contains(p)] = SOURCE_RIGHT_HAND
    src[boxes.face.contains(p)] = SOURCE_FACE
    return src


_SOURCE_PART = {SOURCE_BODY: "body", SOURCE_FACE: "face",
                SOURCE_RIGHT_HAND: "right_hand", SOURCE_LEFT_HAND: "left_hand"}


def route_body_query(points, planes: TriPlaneSet, boxes: BoundingBoxSet):
    """Body-pass feature lookup. Returns ``(features, source_codes)``."""
    p = np.asarray(points, dtype=np.float64)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    src = route_sources(p, boxes)
    feat = np.zeros((len(p), planes.channels))
    for code, part in _SOURCE_PART.items():
        m = src == code
        if m.any():
            feat[m] = query_part(p[m], part, planes, boxes)
    if single:
        return feat[0], SOURCE_NAMES[src[0]]
    return feat, src


def blend_window_weight(normalized, m: float = WINDOW_M, n: int = WINDOW_N):
    """Center-peaked window exp(-m (x^n + y^n + z^n)) on part-normalized coords."""
    p = np.asarray(normalized, dtype=np.float64)
    return np.exp(-m * np.sum(p**n, axis=-1))


# --------------------------------------------------------------------------
# decoding


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def decode(features, base_sdf, decoder: DecoderWeights):
    """Color and SDF from a feature; the SDF head predicts a delta on ``base_sdf``."""
    f = np.asarray(features, dtype=np.float64)
    d_c = np.asarray(base_sdf, dtype=np.float64)
    if f.shape[-1] != decoder.channels:
        raise ValueError(f"feature length {f.shape[-1]} != decoder channels {decoder.channels}")
    w = {k: getattr(decoder, k).astype(np.float64) for k in decoder.TENSORS}
    hidden = softplus(f @ w["color_w1"] + w["color_b1"])
    color = sigmoid(hidden @ w["color_w2"] + w["color_b2"])
    x = np.concatenate([f, d_c[..., None]], axis=-1)
    hidden = softplus(x @ w["sdf_w1"] + w["sdf_b1"])
    delta = (hidden @ w["sdf_w2"] + w["sdf_b2"])[..., 0]
    return color, d_c + delta


def sdf_to_density(sdf, alpha: float):
    """sigma = sigmoid(-d / alpha) / alpha."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    return sigmoid(-np.asarray(sdf, dtype=np.float64) / alpha) / alpha


def blend(part_value, body_value, weight):
    """Two-term normalized composition ``w * part + (1 - w) * body``."""
    w = np.asarray(weight, dtype=np.float64)
    pv = np.asarray(part_value, dtype=np.float64)
    if pv.ndim > w.ndim:
        w = w[..., None]
    return w * pv + (1.0 - w) * np.asarray(body_value, dtype=np.float64)


def overlap_part(points, boxes: BoundingBoxSet) -> np.ndarray:
    """Source code of the transition region each point is in (body = none)."""
    p = np.asarray(points, dtype=np.float64)
    src = route_sources(p, boxes)
    out = np.full(src.shape, SOURCE_BODY, dtype=np.int8)
    for code, part in ((SOURCE_FACE, "face"), (SOURCE_RIGHT_HAND, "right_hand"),
                       (SOURCE_LEFT_HAND, "left_hand")):
        blend_box = getattr(boxes, part + "_blend")
        out[(src == code) & blend_box.contains(p)] = code
    return out


def compose_overlap(points, base_sdf, planes: TriPlaneSet, boxes: BoundingBoxSet,
                    decoder: DecoderWeights):
    """Blend body and part decodes for points inside a part/transition overlap.

    Returns ``(color, sdf)``. Raises ``ValueError`` if any point is outside
    every overlap region.
    """
    p = np.asarray(points, dtype=np.float64)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    d_c = np.atleast_1d(np.asarray(base_sdf, dtype=np.float64))
    which = overlap_part(p, boxes)
    if np.any(which == SOURCE_BODY):
        raise ValueError("point is not inside any part/transition overlap")
    color = np.empty((len(p), 3))
    sdf = np.empty(len(p))
    for code, part in _SOURCE_PART.items():
        m = which == code
        if code == SOURCE_BODY or not m.any():
            continue
        c_body, d_body = decode(query_part(p[m], "body", planes, boxes), d_c[m], decoder)
        c_part, d_part = decode(query_part(p[m], part, planes, boxes), d_c[m], decoder)
        w = blend_window_weight(normalize_to_bbox(p[m], boxes.part_box(part)))
        color[m] = blend(c_part, c_body, w)
        sdf[m] = blend(d_part, d_body, w)
    if single:
        return color[0], float(sdf[0])
    return color, sdf


def body_field(points, base_sdf, planes: TriPlaneSet, boxes: BoundingBoxSet,
               decoder: DecoderWeights):
    """Full body-pass evaluation: routing, decoding and transition blending.

    Returns ``(color, sdf, sources, blended_mask)``.
    """
    p = np.asarray(points, dtype=np.float64)
    d_c = np.asarray(base_sdf, dtype=np.float64)
    feat, src = route_body_query(p, planes, boxes)
    color, sdf = decode(feat, d_c, decoder)
    blended = overlap_part(p, boxes) != SOURCE_BODY
    if blended.any():
        c_body, d_body = decode(query_part(p[blended], "body", planes, boxes), d_c[blended], decoder)
        for code, part in _SOURCE_PART.items():
            m = blended & (src == code)
            if code == SOURCE_BODY or not m.any():
                continue
            w = blend_window_weight(normalize_to_bbox(p[m], boxes.part_box(part)))
            sub = m[blended]
            color[m] = blend(color[m], c_body[sub], w)
            sdf[m] = blend(sdf[m], d_body[sub], w)
    return color, sdf, src, blended


# --------------------------------------------------------------------------
# compact feature map


def pack_feature_map(planes: TriPlaneSet) -> np.ndarray:
    """Pack the three tri-planes into one ``(W_b, W_b, 9C/2)`` map.

    Body plane-channels fill the first 3C channels; face and hand
    plane-channels are tiled four to a channel as 2x2 quadrants
    (top-left, top-right, bottom-left, bottom-right).
    """
    c = planes.channels
    if (3 * c) % 4:
        raise ValueError("channel count must be a multiple of 4 to pack")
    wb = planes.body.shape[-1]
    h = wb // 2
    out = np.empty((9 * c // 2, wb, wb), dtype=np.float32)
    out[: 3 * c] = planes.body.reshape(3 * c, wb, wb)
    for k, part in enumerate((planes.face, planes.hand)):
        base = 3 * c + k * (3 * c // 4)
        tiles = part.reshape(3 * c // 4, 2, 2, h, h)
        out[base : base + 3 * c // 4] = tiles.transpose(0, 1, 3, 2, 4).reshape(-1, wb, wb)
    return np.moveaxis(out, 0, -1)


def split_feature_map(fmap: np.ndarray) -> TriPlaneSet:
    """Inverse of :func:`pack_feature_map`."""
    fmap = np.asarray(fmap, dtype=np.float32)
    wb, wb2, total = fmap.shape
    if wb != wb2 or total % 9 or (2 * total) % 9:
        raise ValueError(f"bad packed feature map shape {fmap.shape}")
    c = 2 * total // 9
    h = wb // 2
    chans = np.moveaxis(fmap, -1, 0)
    body = chans[: 3 * c].reshape(3, c, wb, wb)
    parts = []
    for k in range(2):
        base = 3 * c + k * (3 * c // 4)
        tiles = chans[base : base + 3 * c // 4].reshape(-1, 2, h, 2, h).transpose(0, 1, 3, 2, 4)
        parts.append(tiles.reshape(3, c, h, h))
    return TriPlaneSet(body, parts[0], parts[1])


def seeded_triplanes(seed, body_res=64, channels=32, smooth=4, scale=1.0) -> TriPlaneSet:
    """Smooth random planes: coarse noise upsampled bilinearly."""
    rng = np.random.default_rng(seed)

    def make(res):
        coarse = rng.normal(0.0, scale, (3, channels, smooth, smooth))
        lin = np.linspace(-1.0, 1.0, res)
        uu, vv = np.meshgrid(lin, lin)
        uv = np.stack([uu, vv], axis=-1)
        out = np.empty((3, channels, res, res))
        for t in range(3):
            out[t] = np.moveaxis(sample_plane(coarse[t], uv), -1, 0)
        return out

    return TriPlaneSet(make(body_res), make(body_res // 2), make(body_res // 2))
