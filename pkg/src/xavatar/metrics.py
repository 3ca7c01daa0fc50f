"""Evaluation metrics: depth MSE against pseudo labels, PCK and per-attribute MSE."""
from __future__ import annotations

import numpy as np

from .body_model import PoseParams

ATTRIBUTES = ("expression", "shape", "jaw", "body", "hand")


def pad_to_square(depth: np.ndarray, fill: float = 0.0) -> np.ndarray:
    """Center a depth map in a square canvas filled with background depth."""
    d = np.asarray(depth, dtype=np.float64)
    h, w = d.shape
    s = max(h, w)
    out = np.full((s, s), fill)
    r0, c0 = (s - h) // 2, (s - w) // 2
    out[r0 : r0 + h, c0 : c0 + w] = d
    return out


def resize_bilinear(img: np.ndarray, size: int) -> np.ndarray:
    """Half-pixel-center bilinear resize of a square map to ``size``^2, edge-clamped."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    if (h, w) == (size, size):
        return img.copy()

    def coords(n_in):
        x = (np.arange(size) + 0.5) * n_in / size - 0.5
        x = np.clip(x, 0.0, n_in - 1.0)
        i0 = np.floor(x).astype(int)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, x - i0

    r0, r1, fr = coords(h)
    c0, c1, fc = coords(w)
    top = img[r0][:, c0] * (1 - fc) + img[r0][:, c1] * fc
    bot = img[r1][:, c0] * (1 - fc) + img[r1][:, c1] * fc
    return top * (1 - fr)[:, None] + bot * fr[:, None]


def depth_mse(rendered, reference, resolution: int = 128) -> float:
    """MSE over mutually valid (> 0) pixels after square padding and resizing."""
    a = resize_bilinear(pad_to_square(rendered), resolution)
    b = resize_bilinear(pad_to_square(reference), resolution)
    valid = (a > 0) & (b > 0)
    if not valid.any():
        raise ValueError("no mutually valid depth pixels")
    return float(np.mean((a[valid] - b[valid]) ** 2))


def pck(predicted, reference, head_length: float, threshold_ratio: float = 0.1) -> float:
    """Percentage of keypoints within ``threshold_ratio * head_length``."""
    p = np.asarray(predicted, dtype=np.float64).reshape(-1, 2)
    r = np.asarray(reference, dtype=np.float64).reshape(-1, 2)
    if len(p) == 0 or p.shape != r.shape:
        raise ValueError("keypoint arrays must be non-empty and matching")
    if not head_length > 0:
        raise ValueError("head length must be positive")
    hits = np.linalg.norm(p - r, axis=1) <= threshold_ratio * head_length
    return 100.0 * int(hits.sum()) / len(p)


def attribute_vector(pose: PoseParams, attribute: str) -> np.ndarray:
    if attribute == "expression":
        return pose.expression
    if attribute == "shape":
        return pose.shape
    if attribute == "jaw":
        return pose.jaw
    if attribute == "body":
        return pose.body_pose.ravel()
    if attribute == "hand":
        return np.concatenate([pose.left_hand_pose.ravel(), pose.right_hand_pose.ravel()])
    raise ValueError(f"unknown attribute {attribute!r}")


def attribute_mse(estimated: PoseParams, target: PoseParams, attribute: str) -> float:
    a = attribute_vector(estimated, attribute)
    b = attribute_vector(target, attribute)
    if a.shape != b.shape:
        raise ValueError(f"{attribute} dimensions differ")
    if a.size == 0:
        return 0.0
    return float(np.mean((a - b) ** 2))
