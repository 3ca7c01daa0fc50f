"""Deterministic desk-scale scene: SMPL-X-lite body, planes, decoder, boxes,
poses and a short motion sequence."""
from __future__ import annotations

import numpy as np

from .body_model import (
    BODY_JOINTS,
    FINGERS,
    JOINT_NAMES,
    N_BODY_POSE,
    N_HAND_POSE,
    ROOT_PARENT,
    BodyModel,
    Capsule,
    PoseParams,
    _chain,
    rodrigues,
    segment_distance,
)
from .triplane import BoundingBoxSet, Box, DecoderWeights, TriPlaneSet, seeded_triplanes

SKINNING_TEMPERATURE = 0.05
ARM_ABDUCTION_DEG = 30.0
LEG_ABDUCTION_DEG = 15.0
N_SHAPE = 10
N_EXPR = 10
BOX_MARGIN = 0.10

# joint: (parent, rest offset in the zero-rotation I-pose)
_BODY_REST = {
    "pelvis": (None, (0.0, 0.0, 0.0)),
    "left_hip": ("pelvis", (0.09, -0.08, 0.0)),
    "spine1": ("pelvis", (0.0, 0.12, 0.0)),
    "left_knee": ("left_hip", (0.0, -0.40, 0.0)),
    "spine2": ("spine1", (0.0, 0.25, 0.0)),
    "left_ankle": ("left_knee", (0.0, -0.40, 0.0)),
    "neck": ("spine2", (0.0, 0.15, 0.0)),
    "left_shoulder": ("spine2", (0.17, 0.10, 0.0)),
    "head": ("neck", (0.0, 0.10, 0.0)),
    "left_elbow": ("left_shoulder", (0.0, -0.28, 0.0)),
    "left_wrist": ("left_elbow", (0.0, -0.25, 0.0)),
    "jaw": ("head", (0.0, -0.02, 0.03)),
}
_KNUCKLES = {
    "thumb": ((0.0, -0.03, 0.035), (0.0, -0.035, 0.012)),
    "index": ((0.0, -0.09, 0.025), (0.0, -0.04, 0.0)),
    "middle": ((0.0, -0.095, 0.008), (0.0, -0.045, 0.0)),
    "ring": ((0.0, -0.09, -0.01), (0.0, -0.04, 0.0)),
    "pinky": ((0.0, -0.08, -0.027), (0.0, -0.032, 0.0)),
}
_TIP = np.array([0.0, -0.03, 0.0])


def _mirror_vec(v):
    return np.asarray(v, dtype=np.float64) * np.array([-1.0, 1.0, 1.0])


def _side_swap(name):
    if name.startswith("left_"):
        return "right_" + name[5:]
    if name.startswith("right_"):
        return "left_" + name[6:]
    return name


def skeleton():
    """Parents, rest offsets and canonical axis-angles in ``JOINT_NAMES`` order."""
    rest = dict(_BODY_REST)
    for name, (parent, off) in list(rest.items()):
        if name.startswith("left_"):
            rest[_side_swap(name)] = (_side_swap(parent), tuple(_mirror_vec(off)))
    for side in ("left", "right"):
        sgn = 1.0 if side == "left" else -1.0
        for finger, (k1, k2) in _KNUCKLES.items():
            rest[f"{side}_{finger}1"] = (f"{side}_wrist", (sgn * k1[0], k1[1], k1[2]))
            rest[f"{side}_{finger}2"] = (f"{side}_{finger}1", (sgn * k2[0], k2[1], k2[2]))
    parents = np.array(
        [ROOT_PARENT if rest[n][0] is None else JOINT_NAMES.index(rest[n][0]) for n in JOINT_NAMES]
    )
    offsets = np.array([rest[n][1] for n in JOINT_NAMES], dtype=np.float64)
    canon = np.zeros((len(JOINT_NAMES), 3))
    arm = np.deg2rad(ARM_ABDUCTION_DEG)
    leg = np.deg2rad(LEG_ABDUCTION_DEG)
    # rotation about +z swings a downward limb towards +x (the left side)
    canon[JOINT_NAMES.index("left_shoulder")] = (0.0, 0.0, arm)
    canon[JOINT_NAMES.index("right_shoulder")] = (0.0, 0.0, -arm)
    canon[JOINT_NAMES.index("left_hip")] = (0.0, 0.0, leg)
    canon[JOINT_NAMES.index("right_hip")] = (0.0, 0.0, -leg)
    return parents, offsets, canon


def _capsule_specs(joints):
    """(a, b, radius, joint name, part) for the left half plus the midline."""
    j = lambda n: joints[JOINT_NAMES.index(n)]  # noqa: E731
    specs = [
        (j("left_hip"), j("right_hip"), 0.10, "pelvis", "body"),
        (j("spine1"), j("spine2"), 0.13, "spine1", "body"),
        (j("left_shoulder"), j("right_shoulder"), 0.07, "spine2", "body"),
        (j("neck"), j("head"), 0.05, "neck", "body"),
        (j("head") + (0, 0.03, 0), j("head") + (0, 0.10, 0), 0.09, "head", "face"),
        (j("jaw"), j("jaw") + (0, -0.02, 0.04), 0.04, "jaw", "face"),
        (j("left_hip"), j("left_knee"), 0.07, "left_hip", "body"),
        (j("left_knee"), j("left_ankle"), 0.05, "left_knee", "body"),
        (j("left_ankle"), j("left_ankle") + (0, -0.05, 0.12), 0.045, "left_ankle", "body"),
        (j("left_shoulder"), j("left_elbow"), 0.045, "left_shoulder", "body"),
        (j("left_elbow"), j("left_wrist"), 0.04, "left_elbow", "body"),
        (j("left_wrist"), 0.5 * (j("left_index1") + j("left_ring1")), 0.03, "left_wrist", "left_hand"),
    ]
    for finger in FINGERS:
        k1, k2 = j(f"left_{finger}1"), j(f"left_{finger}2")
        tip = k2 + (k2 - k1) / np.linalg.norm(k2 - k1) * np.linalg.norm(_TIP)
        r = 0.011 if finger == "thumb" else 0.009
        specs.append((k1, k2, r, f"left_{finger}1", "left_hand"))
        specs.append((k2, tip, r * 0.9, f"left_{finger}2", "left_hand"))
    return specs


def _sample_capsule(rng, a, b, r, n):
    """Roughly uniform points on a capsule surface."""
    axis = b - a
    length = np.linalg.norm(axis)
    e = axis / length
    helper = np.array([1.0, 0.0, 0.0]) if abs(e[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(e, helper)
    u /= np.linalg.norm(u)
    w = np.cross(e, u)
    side_area = 2 * np.pi * r * length
    cap_area = 4 * np.pi * r * r
    pts = []
    for _ in range(n):
        if rng.random() < side_area / (side_area + cap_area):
            t = rng.random() * length
            phi = rng.random() * 2 * np.pi
            pts.append(a + t * e + r * (np.cos(phi) * u + np.sin(phi) * w))
        else:
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            center = a if np.dot(d, e) < 0 else b
            pts.append(center + r * d)
    return np.array(pts)


def make_body_model(seed: int = 0, n_vertices: int = 1200) -> BodyModel:
    """Bilaterally symmetric SMPL-X-lite model.

    Vertices are sampled on the left half and mirrored, so the model, its
    weights and its blendshapes are exactly symmetric under x -> -x.
    """
    rng = np.random.default_rng(seed)
    parents, offsets, canon = skeleton()
    world_r, world_t = _chain(parents, rodrigues(canon), offsets)
    specs = _capsule_specs(world_t)
    areas = np.array([2 * np.pi * r * np.linalg.norm(b - a) + 4 * np.pi * r * r for a, b, r, *_ in specs])
    half = n_vertices // 2
    counts = np.maximum(8, np.round(areas / areas.sum() * half)).astype(int)

    half_pts, half_parts = [], []
    for (a, b, r, _, part), n in zip(specs, counts):
        pts = _sample_capsule(rng, a, b, r, n)
        midline = abs(a[0] + b[0]) < 1e-12
        if midline:
            pts[:, 0] = np.abs(pts[:, 0])
        pts = pts[pts[:, 0] > 1e-4]
        half_pts.append(pts)
        half_parts += [part] * len(pts)
    left = np.concatenate(half_pts)

    # full capsule list in canonical space (mirror the left-side ones)
    capsules = []
    for a, b, r, jname, part in specs:
        capsules.append(Capsule(a, b, r, JOINT_NAMES.index(jname), part))
        if jname.startswith("left_"):
            capsules.append(
                Capsule(_mirror_vec(a), _mirror_vec(b), r, JOINT_NAMES.index(_side_swap(jname)),
                        _side_swap(part))
            )

    ca = np.stack([c.endpoint_a for c in capsules])
    cb = np.stack([c.endpoint_b for c in capsules])
    cr = np.array([c.radius for c in capsules])
    cj = np.array([c.joint for c in capsules])
    n_joints = len(JOINT_NAMES)

    # softmax over the two nearest bones, by distance to the capsule surface
    dist = segment_distance(left, ca, cb) - cr
    nearest2 = np.argsort(dist, axis=1, kind="stable")[:, :2]
    d2 = np.take_along_axis(dist, nearest2, axis=1)
    logits = -(d2 - d2[:, :1]) / SKINNING_TEMPERATURE
    soft = np.exp(logits)
    soft /= soft.sum(axis=1, keepdims=True)
    w_left = np.zeros((len(left), n_joints))
    for k in range(2):
        np.add.at(w_left, (np.arange(len(left)), cj[nearest2[:, k]]), soft[:, k])

    joint_mirror = np.array([JOINT_NAMES.index(_side_swap(n)) for n in JOINT_NAMES])
    w_right = w_left[:, joint_mirror]
    # exact row normalization after the sparse accumulation
    w_left /= w_left.sum(axis=1, keepdims=True)
    w_right /= w_right.sum(axis=1, keepdims=True)

    # smooth, reflection-equivariant shape basis: block-diagonal linear fields
    shape_l = np.zeros((len(left), 3, N_SHAPE))
    for b in range(N_SHAPE):
        a_mat = rng.normal(0.0, 0.03, (3, 3))
        a_mat[0, 1:] = 0.0
        a_mat[1:, 0] = 0.0
        freq = rng.normal(0.0, 3.0, 3)
        freq[0] = 0.0
        bump = 0.01 * np.sin(left @ freq + rng.random() * 2 * np.pi)
        shape_l[:, :, b] = left @ a_mat.T + bump[:, None] * np.array([0.0, 1.0, 0.0])
    expr_l = np.zeros((len(left), 3, N_EXPR))
    face = np.array([p == "face" for p in half_parts])
    head_center = world_t[JOINT_NAMES.index("head")]
    for b in range(N_EXPR):
        k = rng.normal(0.0, 8.0, 3)
        phase = rng.random() * 2 * np.pi
        direction = rng.normal(0.0, 1.0, 3)
        direction /= np.linalg.norm(direction)
        amp = 0.004 * np.sin((left - head_center) @ k + phase)
        expr_l[:, :, b] = np.where(face[:, None], amp[:, None] * direction, 0.0)

    mirror3 = np.array([-1.0, 1.0, 1.0])
    vertices = np.concatenate([left, left * mirror3])
    weights = np.concatenate([w_left, w_right])
    shape_dirs = np.concatenate([shape_l, shape_l * mirror3[None, :, None]])
    expr_dirs = np.concatenate([expr_l, expr_l * mirror3[None, :, None]])
    labels = half_parts + [_side_swap(p) for p in half_parts]
    return BodyModel(
        vertices_canonical=vertices,
        skinning_weights=weights,
        parents=parents,
        rest_offsets=offsets,
        shape_dirs=shape_dirs,
        expr_dirs=expr_dirs,
        capsules=capsules,
        part_labels=labels,
        canonical_rotations=canon,
        joint_names=JOINT_NAMES,
        meta={
            "generator": "smplx-lite",
            "seed": int(seed),
            "skinning_temperature_m": SKINNING_TEMPERATURE,
            "arm_abduction_deg": ARM_ABDUCTION_DEG,
            "leg_abduction_deg": LEG_ABDUCTION_DEG,
        },
    )


def mirror_index(model: BodyModel) -> np.ndarray:
    """Vertex permutation pairing each vertex with its reflection."""
    n = model.n_vertices
    half = n // 2
    return np.concatenate([np.arange(half, n), np.arange(half)])


def single_capsule_model(a=(0.0, -0.3, 0.0), b=(0.0, 0.3, 0.0), radius=0.25,
                         n_vertices=600, seed=0) -> BodyModel:
    """One-joint model whose surface is a single capsule."""
    rng = np.random.default_rng(seed)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    pts = _sample_capsule(rng, a, b, radius, n_vertices)
    return BodyModel(
        vertices_canonical=pts,
        skinning_weights=np.ones((len(pts), 1)),
        parents=[ROOT_PARENT],
        rest_offsets=np.zeros((1, 3)),
        shape_dirs=np.zeros((len(pts), 3, 1)),
        expr_dirs=np.zeros((len(pts), 3, 1)),
        capsules=[Capsule(a, b, radius, 0, "body")],
        part_labels=["body"] * len(pts),
        canonical_rotations=np.zeros((1, 3)),
        joint_names=("root",),
        meta={"generator": "single-capsule", "seed": int(seed)},
    )


def _extent_box(points, margin=BOX_MARGIN) -> Box:
    lo, hi = points.min(axis=0), points.max(axis=0)
    pad = margin * (hi - lo)
    return Box(lo - pad, hi + pad)


def default_boxes(model: BodyModel) -> BoundingBoxSet:
    """Part boxes from labelled vertex extents plus a 10% margin.

    Each transition box covers the end of the part box facing the body
    (the neck for the face, the wrist for the hands).
    """
    v = model.vertices_canonical
    body = _extent_box(v, 0.05)
    face = _extent_box(v[model.part_mask("face")])
    rh = _extent_box(v[model.part_mask("right_hand")])
    lh = _extent_box(v[model.part_mask("left_hand")])

    def top_slab(box: Box, frac=0.3):
        h = box.max[1] - box.min[1]
        pad = 0.05 * (box.max - box.min)
        lo = box.min - pad
        hi = box.max + pad
        lo[1] = box.max[1] - frac * h
        hi[1] = box.max[1] + frac * h
        return Box(lo, hi)

    def bottom_slab(box: Box, frac=0.3):
        h = box.max[1] - box.min[1]
        pad = 0.05 * (box.max - box.min)
        lo = box.min - pad
        hi = box.max + pad
        lo[1] = box.min[1] - frac * h
        hi[1] = box.min[1] + frac * h
        return Box(lo, hi)

    return BoundingBoxSet(
        body=body,
        face=face,
        right_hand=rh,
        left_hand=lh,
        face_blend=bottom_slab(face),
        right_hand_blend=top_slab(rh),
        left_hand_blend=top_slab(lh),
    )


def far_boxes(body: Box) -> BoundingBoxSet:
    """Part boxes placed far away so every point routes to the body planes."""
    far = Box((100.0, 100.0, 100.0), (101.0, 101.0, 101.0))
    return BoundingBoxSet(body, far, far, far, far, far, far)


def default_triplanes(seed: int = 0, body_res=64, channels=32) -> TriPlaneSet:
    return seeded_triplanes(seed, body_res=body_res, channels=channels)


def default_decoder(seed: int = 0, channels=32, alpha=0.01) -> DecoderWeights:
    return DecoderWeights.seeded(seed, channels=channels, alpha=alpha)


def front_pose(model: BodyModel, distance: float = 10.0) -> PoseParams:
    """Canonical X-pose seen from the front.

    The global orientation is a half turn about x (camera y points down) and
    the translation puts the body's vertical center on the optical axis.
    """
    pose = model.canonical_pose()
    v = model.vertices_canonical
    y_mid = 0.5 * (v[:, 1].min() + v[:, 1].max())
    return pose.replace(global_orient=np.array([np.pi, 0.0, 0.0]),
                        global_transl=np.array([0.0, y_mid, distance]))


def motion_frames(model: BodyModel, n_frames: int = 10, fps: float = 10.0, distance=10.0):
    """Short clip: right arm raises, jaw opens, right fingers curl."""
    base = front_pose(model, distance)
    frames = []
    n_body, _ = model.pose_layout
    i_rs = BODY_JOINTS.index("right_shoulder") - 1
    i_re = BODY_JOINTS.index("right_elbow") - 1
    for k in range(n_frames):
        s = np.sin(np.pi * k / max(n_frames - 1, 1))
        body = base.body_pose.copy()
        body[i_rs] = body[i_rs] + np.array([0.0, 0.0, -0.9 * s])
        body[i_re] = np.array([0.0, 0.0, -0.6 * s])
        rhand = base.right_hand_pose.copy()
        rhand[2:, 0] = 0.8 * s
        pose = base.replace(body_pose=body, jaw=np.array([0.25 * s, 0.0, 0.0]),
                            right_hand_pose=rhand)
        frames.append((k / fps, pose))
    return frames


assert len(BODY_JOINTS) - 1 == N_BODY_POSE and N_HAND_POSE == 2 * len(FINGERS)
