"""Articulated "SMPL-X-lite" body: kinematic chain, blendshapes, skinning and
an analytic capsule-union SDF living in the canonical (X-pose) space.

Coordinates are meters, y up, +x towards the body's left side, +z forward.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Sequence

import numpy as np

PART_TAGS = ("body", "face", "left_hand", "right_hand")

BODY_JOINTS = (
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "neck",
    "left_shoulder",
    "right_shoulder",
    "head",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
)
FINGERS = ("thumb", "index", "middle", "ring", "pinky")
HAND_JOINTS = tuple(f"{f}{k}" for f in FINGERS for k in (1, 2))
JOINT_NAMES = (
    BODY_JOINTS
    + ("jaw",)
    + tuple("left_" + n for n in HAND_JOINTS)
    + tuple("right_" + n for n in HAND_JOINTS)
)
# body_pose excludes the root, which is driven by global_orient
N_BODY_POSE = len(BODY_JOINTS) - 1
N_HAND_POSE = len(HAND_JOINTS)

ROOT_PARENT = -1


def _swap_name(name: str) -> str:
    if name.startswith("left_"):
        return "right_" + name[5:]
    if name.startswith("right_"):
        return "left_" + name[6:]
    return name


def _body_pose_mirror_perm() -> np.ndarray:
    names = BODY_JOINTS[1:]
    return np.array([names.index(_swap_name(n)) for n in names])


BODY_POSE_MIRROR = _body_pose_mirror_perm()


# --------------------------------------------------------------------------
# rotations


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix of a 3-vector (or a stack of them)."""
    v = np.asarray(v, dtype=np.float64)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def rodrigues(axis_angle) -> np.ndarray:
    """Rotation matrix of an axis-angle vector (works on ``(..., 3)`` stacks).

    The angle is the vector norm; a zero vector gives the identity.
    """
    r = np.asarray(axis_angle, dtype=np.float64)
    theta = np.linalg.norm(r, axis=-1)
    safe = np.where(theta > 0.0, theta, 1.0)
    k = skew(r / safe[..., None])
    s = np.sin(theta)[..., None, None]
    c = np.cos(theta)[..., None, None]
    rot = np.eye(3) + s * k + (1.0 - c) * (k @ k)
    return np.where((theta > 0.0)[..., None, None], rot, np.eye(3))


def rigid(rotation: np.ndarray, translation: np.ndarray) -> np.ndarray:
    """Pack rotation/translation stacks into homogeneous 4x4 matrices."""
    rotation = np.asarray(rotation, dtype=np.float64)
    out = np.zeros(rotation.shape[:-2] + (4, 4))
    out[..., :3, :3] = rotation
    out[..., :3, 3] = translation
    out[..., 3, 3] = 1.0
    return out


def rigid_inverse(mat: np.ndarray) -> np.ndarray:
    rot = np.swapaxes(mat[..., :3, :3], -1, -2)
    return rigid(rot, -np.einsum("...ij,...j->...i", rot, mat[..., :3, 3]))


# --------------------------------------------------------------------------
# data types


@dataclass(frozen=True)
class PoseParams:
    """Full SMPL-X style control vector. Rotations are axis-angle radians."""

    shape: np.ndarray
    expression: np.ndarray
    jaw: np.ndarray
    body_pose: np.ndarray
    left_hand_pose: np.ndarray
    right_hand_pose: np.ndarray
    global_orient: np.ndarray
    global_transl: np.ndarray

    def __post_init__(self):
        shapes = {
            "shape": (-1,),
            "expression": (-1,),
            "jaw": (3,),
            "body_pose": (-1, 3),
            "left_hand_pose": (-1, 3),
            "right_hand_pose": (-1, 3),
            "global_orient": (3,),
            "global_transl": (3,),
        }
        for name, shp in shapes.items():
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr = arr.reshape(shp)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite values in {name}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def zeros(cls, n_shape=10, n_expr=10, n_body=N_BODY_POSE, n_hand=N_HAND_POSE):
        return cls(
            shape=np.zeros(n_shape),
            expression=np.zeros(n_expr),
            jaw=np.zeros(3),
            body_pose=np.zeros((n_body, 3)),
            left_hand_pose=np.zeros((n_hand, 3)),
            right_hand_pose=np.zeros((n_hand, 3)),
            global_orient=np.zeros(3),
            global_transl=np.zeros(3),
        )

    def replace(self, **kw) -> "PoseParams":
        return replace(self, **kw)

    def without_global(self) -> "PoseParams":
        return replace(self, global_orient=np.zeros(3), global_transl=np.zeros(3))

    def to_dict(self) -> dict:
        return {
            "shape": self.shape.tolist(),
            "expression": self.expression.tolist(),
            "jaw": self.jaw.tolist(),
            "body_pose": self.body_pose.tolist(),
            "left_hand_pose": self.left_hand_pose.tolist(),
            "right_hand_pose": self.right_hand_pose.tolist(),
            "global_orient": self.global_orient.tolist(),
            "global_transl": self.global_transl.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PoseParams":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__})

    def __eq__(self, other):
        if not isinstance(other, PoseParams):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in self.__dataclass_fields__
        )

    __hash__ = None


@dataclass(frozen=True)
class Capsule:
    endpoint_a: np.ndarray
    endpoint_b: np.ndarray
    radius: float
    joint: int = 0
    part: str = "body"

    def __post_init__(self):
        a = np.asarray(self.endpoint_a, dtype=np.float64).reshape(3)
        b = np.asarray(self.endpoint_b, dtype=np.float64).reshape(3)
        if not self.radius > 0:
            raise ValueError("capsule radius must be positive")
        if np.array_equal(a, b):
            raise ValueError("capsule endpoints must differ")
        object.__setattr__(self, "endpoint_a", a)
        object.__setattr__(self, "endpoint_b", b)
        object.__setattr__(self, "radius", float(self.radius))


@dataclass(frozen=True)
class JointTransforms:
    """Per-joint rigid transforms produced by :func:`forward_kinematics`.

    ``world_*`` is the absolute transform of each joint frame. ``skinning``
    holds ``world_j @ inv(world_j at the canonical pose)``, i.e. the map that
    carries canonical-space points onto the posed body.
    """

    local_rotations: np.ndarray
    local_translations: np.ndarray
    world_rotations: np.ndarray
    world_translations: np.ndarray
    skinning: np.ndarray

    @property
    def joint_positions(self) -> np.ndarray:
        return self.world_translations

    @property
    def world(self) -> np.ndarray:
        return rigid(self.world_rotations, self.world_translations)


@dataclass(frozen=True, eq=False)
class BodyModel:
    vertices_canonical: np.ndarray
    skinning_weights: np.ndarray
    parents: np.ndarray
    rest_offsets: np.ndarray
    shape_dirs: np.ndarray
    expr_dirs: np.ndarray
    capsules: tuple
    part_labels: np.ndarray
    canonical_rotations: np.ndarray
    joint_names: tuple = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        f = lambda a: np.array(a, dtype=np.float64)  # noqa: E731
        object.__setattr__(self, "vertices_canonical", f(self.vertices_canonical).reshape(-1, 3))
        n = len(self.vertices_canonical)
        w = f(self.skinning_weights)
        parents = np.array(self.parents, dtype=np.int64).reshape(-1)
        n_joints = len(parents)
        object.__setattr__(self, "skinning_weights", w.reshape(n, n_joints))
        object.__setattr__(self, "parents", parents)
        object.__setattr__(self, "rest_offsets", f(self.rest_offsets).reshape(n_joints, 3))
        object.__setattr__(self, "shape_dirs", f(self.shape_dirs).reshape(n, 3, -1))
        object.__setattr__(self, "expr_dirs", f(self.expr_dirs).reshape(n, 3, -1))
        object.__setattr__(self, "canonical_rotations", f(self.canonical_rotations).reshape(n_joints, 3))
        object.__setattr__(self, "capsules", tuple(self.capsules))
        labels = np.array(self.part_labels, dtype=object).reshape(n)
        object.__setattr__(self, "part_labels", labels)
        if not self.joint_names:
            object.__setattr__(self, "joint_names", tuple(f"joint{j}" for j in range(n_joints)))
        else:
            object.__setattr__(self, "joint_names", tuple(self.joint_names))
        for arr in (self.vertices_canonical, self.skinning_weights, self.rest_offsets,
                    self.shape_dirs, self.expr_dirs, self.canonical_rotations):
            arr.setflags(write=False)
        self.validate()

    def validate(self):
        w = self.skinning_weights
        if np.any(w < 0) or np.any(np.abs(w.sum(axis=1) - 1.0) > 1e-6):
            raise ValueError("skinning weights must be non-negative and sum to 1")
        if self.parents[0] != ROOT_PARENT:
            raise ValueError("joint 0 must be the root")
        for j, p in enumerate(self.parents[1:], start=1):
            # parents listed before children rules out cycles
            if not 0 <= p < j:
                raise ValueError(f"joint {j} has invalid parent {p}")
        bad = set(self.part_labels) - set(PART_TAGS)
        if bad:
            raise ValueError(f"unknown part labels {sorted(bad)}")
        if not self.capsules:
            raise ValueError("at least one capsule is required")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices_canonical)

    @property
    def n_joints(self) -> int:
        return len(self.parents)

    @property
    def n_shape(self) -> int:
        return self.shape_dirs.shape[2]

    @property
    def n_expr(self) -> int:
        return self.expr_dirs.shape[2]

    @property
    def has_jaw(self) -> bool:
        return "jaw" in self.joint_names

    @cached_property
    def pose_layout(self) -> tuple[int, int]:
        """(body-pose joints, joints per hand) implied by the joint count."""
        rest = self.n_joints - 1 - int(self.has_jaw)
        if self.has_jaw:
            n_body = self.joint_names.index("jaw") - 1
            n_hand = (rest - n_body) // 2
        else:
            n_body, n_hand = rest, 0
        return n_body, n_hand

    def joint_rotations(self, pose: PoseParams) -> np.ndarray:
        """Stack the pose's axis-angles in joint order."""
        n_body, n_hand = self.pose_layout
        if len(pose.body_pose) != n_body:
            raise ValueError(f"body_pose has {len(pose.body_pose)} joints, model expects {n_body}")
        if len(pose.left_hand_pose) != n_hand or len(pose.right_hand_pose) != n_hand:
            raise ValueError(f"hand poses must have {n_hand} joints each")
        rows = [pose.global_orient[None], pose.body_pose]
        if self.has_jaw:
            rows.append(pose.jaw[None])
        rows += [pose.left_hand_pose, pose.right_hand_pose]
        return np.concatenate(rows, axis=0)

    def canonical_pose(self) -> PoseParams:
        """The X-pose with neutral shape and expression."""
        n_body, n_hand = self.pose_layout
        rot = self.canonical_rotations
        i = 1 + n_body
        jaw = rot[i] if self.has_jaw else np.zeros(3)
        i += int(self.has_jaw)
        return PoseParams(
            shape=np.zeros(self.n_shape),
            expression=np.zeros(self.n_expr),
            jaw=jaw,
            body_pose=rot[1 : 1 + n_body],
            left_hand_pose=rot[i : i + n_hand],
            right_hand_pose=rot[i + n_hand : i + 2 * n_hand],
            global_orient=rot[0],
            global_transl=np.zeros(3),
        )

    @cached_property
    def canonical_world_inverse(self) -> np.ndarray:
        rot = rodrigues(self.canonical_rotations)
        world_r, world_t = _chain(self.parents, rot, self.rest_offsets)
        return rigid_inverse(rigid(world_r, world_t))

    @cached_property
    def capsule_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        a = np.stack([c.endpoint_a for c in self.capsules])
        b = np.stack([c.endpoint_b for c in self.capsules])
        r = np.array([c.radius for c in self.capsules])
        return a, b, r

    def part_mask(self, part: str) -> np.ndarray:
        return self.part_labels == part


def _chain(parents, local_r, local_t):
    n = len(parents)
    world_r = np.empty((n, 3, 3))
    world_t = np.empty((n, 3))
    for j in range(n):
        p = parents[j]
        if p == ROOT_PARENT:
            world_r[j] = local_r[j]
            world_t[j] = local_t[j]
        else:
            world_r[j] = world_r[p] @ local_r[j]
            world_t[j] = world_r[p] @ local_t[j] + world_t[p]
    return world_r, world_t


# --------------------------------------------------------------------------
# operations


def forward_kinematics(model: BodyModel, pose: PoseParams) -> JointTransforms:
    """Compose local joint transforms down the tree.

    The root takes ``global_orient`` and ``rest_offset + global_transl``; every
    other joint rotates by its own pose entry about its rest offset from the
    parent.
    """
    local_r = rodrigues(model.joint_rotations(pose))
    local_t = model.rest_offsets.copy()
    local_t[0] = local_t[0] + pose.global_transl
    world_r, world_t = _chain(model.parents, local_r, local_t)
    skin = rigid(world_r, world_t) @ model.canonical_world_inverse
    return JointTransforms(local_r, local_t, world_r, world_t, skin)


def blendshape_offsets(model: BodyModel, pose: PoseParams) -> np.ndarray:
    if len(pose.shape) != model.n_shape:
        raise ValueError(f"shape has {len(pose.shape)} coefficients, model expects {model.n_shape}")
    if len(pose.expression) != model.n_expr:
        raise ValueError(
            f"expression has {len(pose.expression)} coefficients, model expects {model.n_expr}"
        )
    return model.shape_dirs @ pose.shape + model.expr_dirs @ pose.expression


def blend_transforms(weights: np.ndarray, transforms: np.ndarray) -> np.ndarray:
    """Per-vertex weighted sum of 4x4 joint transforms, ``(N, J) x (J, 4, 4)``."""
    return np.einsum("nj,jab->nab", weights, transforms)


def pose_vertices(model: BodyModel, pose: PoseParams, transforms: JointTransforms | None = None):
    """Linear blend skinning of the (shape/expression-offset) canonical mesh."""
    if transforms is None:
        transforms = forward_kinematics(model, pose)
    v = model.vertices_canonical + blendshape_offsets(model, pose)
    blended = blend_transforms(model.skinning_weights, transforms.skinning)
    return np.einsum("nij,nj->ni", blended[:, :3, :3], v) + blended[:, :3, 3]


def segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from points ``(..., 3)`` to segments ``(K, 3)``; returns ``(..., K)``."""
    p = np.asarray(points, dtype=np.float64)[..., None, :]
    ab = b - a
    t = np.einsum("...ki,ki->...k", p - a, ab) / np.einsum("ki,ki->k", ab, ab)
    t = np.clip(t, 0.0, 1.0)
    closest = a + t[..., None] * ab
    return np.linalg.norm(p - closest, axis=-1)


def canonical_sdf(model: BodyModel, point) -> np.ndarray | float:
    """Signed distance to the union of the model's capsules (negative inside)."""
    a, b, r = model.capsule_arrays
    pts = np.asarray(point, dtype=np.float64)
    d = (segment_distance(pts, a, b) - r).min(axis=-1)
    return float(d) if pts.ndim == 1 else d


def mirror_axis_angle(r: np.ndarray) -> np.ndarray:
    """Conjugate axis-angle rotations by the x-reflection: (x, y, z) -> (x, -y, -z)."""
    return np.asarray(r) * np.array([1.0, -1.0, -1.0])


def mirror_pose(pose: PoseParams, body_perm: Sequence[int] | None = None) -> PoseParams:
    """Reflect a pose through the x = 0 plane.

    Left/right joints swap and every rotation is conjugated by the reflection.
    ``body_perm`` overrides the left/right pairing of ``body_pose`` rows; the
    default is the built-in skeleton (or identity for models without limbs).
    """
    n_body = len(pose.body_pose)
    if body_perm is None:
        if n_body == N_BODY_POSE:
            body_perm = BODY_POSE_MIRROR
        elif n_body == 0:
            body_perm = np.arange(0)
        else:
            raise ValueError("no default left/right pairing for this body_pose length")
    body_perm = np.asarray(body_perm, dtype=np.int64)
    return PoseParams(
        shape=pose.shape,
        expression=pose.expression,
        jaw=mirror_axis_angle(pose.jaw),
        body_pose=mirror_axis_angle(pose.body_pose[body_perm]),
        left_hand_pose=mirror_axis_angle(pose.right_hand_pose),
        right_hand_pose=mirror_axis_angle(pose.left_hand_pose),
        global_orient=mirror_axis_angle(pose.global_orient),
        global_transl=pose.global_transl * np.array([-1.0, 1.0, 1.0]),
    )
