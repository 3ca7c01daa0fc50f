"""Observation-to-canonical mapping by inverse linear blend skinning.

Each query point takes the blended skinning transform of its single nearest
posed vertex, inverted, and is carried back to canonical space in
homogeneous coordinates.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numba import njit

from .body_model import (
    BodyModel,
    JointTransforms,
    PoseParams,
    blend_transforms,
    blendshape_offsets,
    forward_kinematics,
    pose_vertices,
    rigid,
)

ORTHO_TOLERANCE = 1e-3
MAX_CONDITION = 1e8


class DegenerateSkinningError(ValueError):
    """Blended skinning matrix is numerically singular."""


def nearest_brute_force(points: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """O(N) scan per query; ties go to the lowest index."""
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    out = np.empty(len(q), dtype=np.int64)
    for s in range(0, len(q), 1024):
        d2 = ((points[None, :, :] - q[s : s + 1024, None, :]) ** 2).sum(-1)
        out[s : s + 1024] = np.argmin(d2, axis=1)
    return out


@njit(cache=True)
def _shell_search(qs, group_starts, group_order, cells, pts, origin, cell_size):
    """Nearest point for queries grouped by cell.

    Per cell, ``bound`` is the smallest farthest-distance from the cell box to
    any point; only points whose nearest distance to the box is within it can
    win for a query inside the box. Candidates are kept in ascending index
    order so a strict ``<`` scan reproduces the lowest-index tie rule.
    """
    n = len(pts)
    out = np.empty(len(qs), dtype=np.int64)
    cand = np.empty(n, dtype=np.int64)
    slack = 1e-9 * cell_size
    for g in range(len(cells)):
        lo0 = origin[0] + cells[g, 0] * cell_size - slack
        lo1 = origin[1] + cells[g, 1] * cell_size - slack
        lo2 = origin[2] + cells[g, 2] * cell_size - slack
        hi0 = lo0 + cell_size + 2 * slack
        hi1 = lo1 + cell_size + 2 * slack
        hi2 = lo2 + cell_size + 2 * slack
        bound = np.inf
        for j in range(n):
            a = max(abs(pts[j, 0] - lo0), abs(pts[j, 0] - hi0))
            b = max(abs(pts[j, 1] - lo1), abs(pts[j, 1] - hi1))
            c = max(abs(pts[j, 2] - lo2), abs(pts[j, 2] - hi2))
            far2 = a * a + b * b + c * c
            if far2 < bound:
                bound = far2
        bound *= 1.0 + 1e-9
        m = 0
        for j in range(n):
            a = max(lo0 - pts[j, 0], pts[j, 0] - hi0, 0.0)
            b = max(lo1 - pts[j, 1], pts[j, 1] - hi1, 0.0)
            c = max(lo2 - pts[j, 2], pts[j, 2] - hi2, 0.0)
            if a * a + b * b + c * c <= bound:
                cand[m] = j
                m += 1
        for s in range(group_starts[g], group_starts[g + 1]):
            i = group_order[s]
            qx, qy, qz = qs[i, 0], qs[i, 1], qs[i, 2]
            best = np.inf
            best_j = -1
            for t in range(m):
                j = cand[t]
                dx = pts[j, 0] - qx
                dy = pts[j, 1] - qy
                dz = pts[j, 2] - qz
                d2 = dx * dx + dy * dy + dz * dz
                if d2 < best:
                    best = d2
                    best_j = j
            out[i] = best_j
    return out


class UniformGrid:
    """Exact nearest-neighbor index over a fixed point set.

    Points are bucketed into cubic cells over their bounding block. Queries
    are grouped by the (unbounded) cell they fall in; each occupied query
    cell gets a conservative candidate shell and its queries scan only that
    shell. Results equal :func:`nearest_brute_force` bit for bit, including
    the lowest-index tie rule.
    """

    def __init__(self, points: np.ndarray, cell_size: float | None = None):
        self.points = np.ascontiguousarray(points, dtype=np.float64)
        if len(self.points) == 0:
            raise ValueError("cannot index an empty point set")
        if cell_size is None:
            cell_size = 2.0 * median_spacing(self.points)
        if not cell_size > 0:
            cell_size = 1.0
        self.cell_size = float(cell_size)
        self.origin = self.points.min(axis=0)
        self.cells = np.floor((self.points - self.origin) / self.cell_size).astype(np.int64)
        self.dims = self.cells.max(axis=0) + 1
        keys = self._key(self.cells)
        # sparse cell table: sorted occupied keys with offsets into ``order``
        self.order = np.argsort(keys, kind="stable")
        sorted_keys = keys[self.order]
        first = np.concatenate([[0], np.nonzero(np.diff(sorted_keys))[0] + 1])
        self.keys = sorted_keys[first]
        self.starts = np.concatenate([first, [len(keys)]]).astype(np.int64)

    def _key(self, cells):
        return (cells[:, 0] * self.dims[1] + cells[:, 1]) * self.dims[2] + cells[:, 2]

    def cell_members(self, cell) -> np.ndarray:
        """Indices of the points stored in one cell, ascending."""
        cell = np.asarray(cell, dtype=np.int64)
        if np.any(cell < 0) or np.any(cell >= self.dims):
            return np.zeros(0, dtype=np.int64)
        key = self._key(cell[None])[0]
        k = np.searchsorted(self.keys, key)
        if k == len(self.keys) or self.keys[k] != key:
            return np.zeros(0, dtype=np.int64)
        return np.sort(self.order[self.starts[k] : self.starts[k + 1]])

    def enumerate(self) -> np.ndarray:
        """Every stored index, in cell order."""
        return self.order.copy()

    def nearest(self, queries) -> np.ndarray:
        q = np.ascontiguousarray(np.atleast_2d(np.asarray(queries, dtype=np.float64)))
        if len(q) == 0:
            return np.empty(0, dtype=np.int64)
        if not np.all(np.isfinite(q)):
            raise ValueError("queries must be finite")
        qcell = np.floor((q - self.origin) / self.cell_size).astype(np.int64)
        # lexicographic grouping avoids packing unbounded cells into one key
        order = np.lexsort((qcell[:, 2], qcell[:, 1], qcell[:, 0]))
        changed = np.any(np.diff(qcell[order], axis=0) != 0, axis=1)
        first = np.concatenate([[0], np.nonzero(changed)[0] + 1])
        starts = np.concatenate([first, [len(q)]]).astype(np.int64)
        cells = np.ascontiguousarray(qcell[order[first]])
        return _shell_search(q, starts, order, cells, self.points, self.origin, self.cell_size)


def median_spacing(points: np.ndarray) -> float:
    """Median distance from each point to its nearest other point."""
    p = np.asarray(points, dtype=np.float64)
    if len(p) < 2:
        return 0.0
    nn = np.empty(len(p))
    for s in range(0, len(p), 512):
        d2 = ((p[None, :, :] - p[s : s + 512, None, :]) ** 2).sum(-1)
        d2[np.arange(d2.shape[0]), np.arange(s, s + d2.shape[0])] = np.inf
        nn[s : s + 512] = d2.min(axis=1)
    return float(np.median(np.sqrt(nn)))


@dataclass(frozen=True)
class InverseTransform:
    rotation: np.ndarray
    translation: np.ndarray
    source_vertex: int

    @property
    def matrix(self) -> np.ndarray:
        return rigid(self.rotation, self.translation)

    def apply(self, points) -> np.ndarray:
        return np.asarray(points) @ self.rotation.T + self.translation


def gram_schmidt(a: np.ndarray) -> np.ndarray:
    """Orthonormalize the columns of ``(..., 3, 3)`` matrices, in order."""
    c0 = a[..., :, 0]
    c1 = a[..., :, 1]
    e0 = c0 / np.linalg.norm(c0, axis=-1, keepdims=True)
    c1 = c1 - np.sum(c1 * e0, axis=-1, keepdims=True) * e0
    e1 = c1 / np.linalg.norm(c1, axis=-1, keepdims=True)
    e2 = np.cross(e0, e1)
    return np.stack([e0, e1, e2], axis=-1)


def invert_blended(mats: np.ndarray):
    """Invert blended 4x4 skinning matrices.

    Nearly rigid matrices (orthonormalization residual below
    ``ORTHO_TOLERANCE``) use the rigid inverse of their orthonormalized
    rotation; the rest fall back to a general LU inverse. Returns
    ``(inverses, degenerate_mask)``.
    """
    mats = np.asarray(mats, dtype=np.float64)
    rot = mats[..., :3, :3]
    with np.errstate(invalid="ignore", divide="ignore"):
        q = gram_schmidt(rot)
    residual = np.abs(q - rot).max(axis=(-1, -2))
    # NaN residuals (zero columns) fail the test and take the general path
    rigid_ok = residual < ORTHO_TOLERANCE
    qt = np.swapaxes(q, -1, -2)
    with np.errstate(invalid="ignore"):
        out = rigid(qt, -np.einsum("...ij,...j->...i", qt, mats[..., :3, 3]))
    degenerate = np.zeros(mats.shape[:-2], dtype=bool)
    general = ~rigid_ok
    if general.any():
        sub = mats[general]
        cond = np.linalg.cond(sub)
        bad = ~np.isfinite(cond) | (cond > MAX_CONDITION)
        inv = np.full_like(sub, np.nan)
        if (~bad).any():
            inv[~bad] = np.linalg.inv(sub[~bad])
        out[general] = inv
        degenerate[general] = bad
    return out, degenerate


class DeformationContext:
    """Everything needed to map observation points of one posed frame."""

    def __init__(self, model: BodyModel, pose: PoseParams, cell_size: float | None = None):
        self.model = model
        self.pose = pose
        self.joint_transforms: JointTransforms = forward_kinematics(model, pose)
        self.offsets = blendshape_offsets(model, pose)
        self.posed_vertices = pose_vertices(model, pose, self.joint_transforms)
        self.spatial_index = UniformGrid(self.posed_vertices, cell_size)

    @cached_property
    def blended_matrices(self) -> np.ndarray:
        """Per-vertex ``sum_j w_j S_j @ Translate(offset)``."""
        shift = np.broadcast_to(np.eye(4), (self.model.n_vertices, 4, 4)).copy()
        shift[:, :3, 3] = self.offsets
        blended = blend_transforms(self.model.skinning_weights, self.joint_transforms.skinning)
        return blended @ shift

    @cached_property
    def _inverses(self):
        return invert_blended(self.blended_matrices)

    def nearest_vertex(self, points) -> np.ndarray | int:
        p = np.asarray(points, dtype=np.float64)
        idx = self.spatial_index.nearest(p)
        return int(idx[0]) if p.ndim == 1 else idx

    def inverse_transform(self, vertex: int) -> InverseTransform:
        inv, bad = self._inverses
        if bad[vertex]:
            raise DegenerateSkinningError(f"skinning matrix of vertex {vertex} is singular")
        m = inv[vertex]
        return InverseTransform(m[:3, :3].copy(), m[:3, 3].copy(), int(vertex))

    def to_canonical(self, points, return_index: bool = False):
        p = np.asarray(points, dtype=np.float64)
        single = p.ndim == 1
        p = np.atleast_2d(p)
        idx = self.spatial_index.nearest(p)
        inv, bad = self._inverses
        if bad[idx].any():
            raise DegenerateSkinningError("query hit a vertex with a singular skinning matrix")
        t = inv[idx]
        xc = np.einsum("nij,nj->ni", t[:, :3, :3], p) + t[:, :3, 3]
        if single:
            xc, idx = xc[0], int(idx[0])
        return (xc, idx) if return_index else xc


def nearest_vertex(context: DeformationContext, point):
    return context.nearest_vertex(point)


def inverse_skinning_transform(context: DeformationContext, vertex: int) -> InverseTransform:
    return context.inverse_transform(vertex)


def to_canonical(context: DeformationContext, point):
    return context.to_canonical(point)
