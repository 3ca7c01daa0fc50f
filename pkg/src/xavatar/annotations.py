"""Annotation records (outputs of external keypoint / parameter estimators),
motion sequences, part crops and horizontal-flip augmentation."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .body_model import PoseParams, mirror_pose, rodrigues

COCO17 = (
    "nose", "left_eye", "right_eye", "left_ear", "right_ear",
    "left_shoulder", "right_shoulder", "left_elbow", "right_elbow",
    "left_wrist", "right_wrist", "left_hip", "right_hip",
    "left_knee", "right_knee", "left_ankle", "right_ankle",
)
KEYPOINT_NAMES = COCO17 + ("head_top", "neck", "pelvis", "left_hand", "right_hand")
TARGET_SIZE = {"body": (512, 256), "face": (256, 256), "hand": (256, 256)}
CROP_SCALE = 1.6

# crop center joint and the keypoints that define the part extent
_CROP_SPEC = {
    "body": ("pelvis", None),
    "face": ("nose", ("nose", "left_eye", "right_eye", "left_ear", "right_ear", "head_top")),
    "hand": ("right_hand", ("right_wrist", "right_hand")),
    "right_hand": ("right_hand", ("right_wrist", "right_hand")),
    "left_hand": ("left_hand", ("left_wrist", "left_hand")),
}

REFLECT_X = np.diag([-1.0, 1.0, 1.0])


def _swap_label(name: str) -> str:
    if name.startswith("left_"):
        return "right_" + name[5:]
    if name.startswith("right_"):
        return "left_" + name[6:]
    return name


FLIP_PERMUTATION = np.array([KEYPOINT_NAMES.index(_swap_label(n)) for n in KEYPOINT_NAMES])


@dataclass(frozen=True, eq=False)
class AnnotationRecord:
    image_id: str
    image_size: tuple
    pose: PoseParams
    keypoints: np.ndarray
    keypoint_visible: np.ndarray
    cameras: dict = field(default_factory=dict)
    face_visible: int = 1
    hands_visible: int = 1

    def __post_init__(self):
        h, w = (int(x) for x in self.image_size)
        kp = np.asarray(self.keypoints, dtype=np.float64).reshape(-1, 2)
        vis = np.asarray(self.keypoint_visible, dtype=bool).reshape(-1)
        if len(kp) != len(vis):
            raise ValueError("keypoints and visibility lengths differ")
        if self.face_visible not in (0, 1) or self.hands_visible not in (0, 1):
            raise ValueError("visibility bits must be 0 or 1")
        inside = (kp[:, 0] >= 0) & (kp[:, 0] <= w - 1) & (kp[:, 1] >= 0) & (kp[:, 1] <= h - 1)
        if np.any(vis & ~inside):
            raise ValueError("visible keypoint outside the image bounds")
        cams = {}
        for part, ext in self.cameras.items():
            rot = np.asarray(ext["rotation"], dtype=np.float64)
            rot = rodrigues(rot) if rot.shape == (3,) else rot.reshape(3, 3)
            cams[part] = {"rotation": rot, "translation": np.asarray(ext["translation"], dtype=np.float64).reshape(3)}
        object.__setattr__(self, "image_size", (h, w))
        object.__setattr__(self, "keypoints", kp)
        object.__setattr__(self, "keypoint_visible", vis)
        object.__setattr__(self, "cameras", cams)

    def keypoint(self, name: str):
        i = KEYPOINT_NAMES.index(name)
        return self.keypoints[i], bool(self.keypoint_visible[i])

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "image_size": list(self.image_size),
            "pose": self.pose.to_dict(),
            "keypoints": self.keypoints.tolist(),
            "keypoint_visible": [bool(v) for v in self.keypoint_visible],
            "cameras": {k: {"rotation": v["rotation"].tolist(), "translation": v["translation"].tolist()}
                        for k, v in sorted(self.cameras.items())},
            "face_visible": self.face_visible,
            "hands_visible": self.hands_visible,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AnnotationRecord":
        return cls(d["image_id"], tuple(d["image_size"]), PoseParams.from_dict(d["pose"]),
                   d["keypoints"], d["keypoint_visible"], d.get("cameras", {}),
                   int(d.get("face_visible", 1)), int(d.get("hands_visible", 1)))

    def __eq__(self, other):
        if not isinstance(other, AnnotationRecord):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    __hash__ = None


@dataclass(frozen=True)
class MotionSequence:
    timestamps: tuple
    poses: tuple

    def __post_init__(self):
        t = tuple(float(x) for x in self.timestamps)
        if len(t) != len(self.poses):
            raise ValueError("timestamps and poses lengths differ")
        if any(b <= a for a, b in zip(t, t[1:])):
            raise ValueError("timestamps must be strictly increasing")
        object.__setattr__(self, "timestamps", t)
        object.__setattr__(self, "poses", tuple(self.poses))

    def __len__(self):
        return len(self.poses)

    def __iter__(self):
        return iter(zip(self.timestamps, self.poses))

    @classmethod
    def from_frames(cls, frames) -> "MotionSequence":
        frames = list(frames)
        return cls(tuple(t for t, _ in frames), tuple(p for _, p in frames))

    def to_dict(self) -> dict:
        return {"frames": [{"t": t, "pose": p.to_dict()} for t, p in self]}

    @classmethod
    def from_dict(cls, d: dict) -> "MotionSequence":
        frames = d["frames"]
        return cls(tuple(f["t"] for f in frames), tuple(PoseParams.from_dict(f["pose"]) for f in frames))


def crop_and_align(keypoints, part: str, source_size, visible=None, scale: float = CROP_SCALE) -> dict:
    """Crop rectangle centered on the part's center joint.

    The rectangle spans ``scale`` times the part extent around the center
    (square for face/hand, 2:1 portrait for the body) and is resized to the
    part's target size. Returns ``{"rect": (x0, y0, x1, y1), "center",
    "target_size": (H, W), "zoom"}`` with zoom = target height / rect height.
    """
    if part not in _CROP_SPEC:
        raise ValueError(f"unknown part {part!r}")
    kp = np.asarray(keypoints, dtype=np.float64).reshape(-1, 2)
    vis = np.ones(len(kp), dtype=bool) if visible is None else np.asarray(visible, dtype=bool)
    center_name, extent_names = _CROP_SPEC[part]
    ci = KEYPOINT_NAMES.index(center_name)
    if not vis[ci]:
        raise ValueError(f"center keypoint {center_name!r} is not visible")
    center = kp[ci]
    if extent_names is None:
        idx = np.nonzero(vis)[0]
    else:
        idx = [KEYPOINT_NAMES.index(n) for n in extent_names if vis[KEYPOINT_NAMES.index(n)]]
    off = np.abs(kp[idx] - center)
    if part == "body":
        half_h = max(off[:, 1].max(), 2.0 * off[:, 0].max())
        half_w = 0.5 * half_h
    else:
        half_h = half_w = off.max()
    if not half_h > 0:
        if part == "hand" or part.endswith("_hand"):
            raise ValueError("hand extent keypoints coincide")
        raise ValueError("part extent is degenerate")
    half_h *= scale
    half_w *= scale
    target = TARGET_SIZE["hand" if part.endswith("hand") else part]
    rect = (center[0] - half_w, center[1] - half_h, center[0] + half_w, center[1] + half_h)
    return {"rect": rect, "center": tuple(center), "target_size": target,
            "zoom": target[0] / (2.0 * half_h), "source_size": tuple(source_size)}


def flip_augment(record: AnnotationRecord, image_width: int | None = None) -> AnnotationRecord:
    """Horizontal flip: mirrored keypoints with left/right labels swapped,
    mirrored pose, and camera extrinsics conjugated by the x-reflection."""
    w = record.image_size[1] if image_width is None else int(image_width)
    kp = record.keypoints.copy()
    kp[:, 0] = (w - 1) - kp[:, 0]
    kp = kp[FLIP_PERMUTATION]
    vis = record.keypoint_visible[FLIP_PERMUTATION]
    cams = {part: {"rotation": REFLECT_X @ c["rotation"] @ REFLECT_X, "translation": REFLECT_X @ c["translation"]}
            for part, c in record.cameras.items()}
    return replace(record, keypoints=kp, keypoint_visible=vis, pose=mirror_pose(record.pose), cameras=cams)
