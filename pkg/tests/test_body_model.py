import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from conftest import random_pose
from xavatar.body_model import (
    JOINT_NAMES,
    N_BODY_POSE,
    BodyModel,
    Capsule,
    PoseParams,
    blendshape_offsets,
    canonical_sdf,
    forward_kinematics,
    mirror_pose,
    pose_vertices,
    rigid_inverse,
    rodrigues,
    segment_distance,
)
from xavatar.fixtures import make_body_model, mirror_index, single_capsule_model

finite = st.floats(-3.0, 3.0, allow_nan=False)


def test_fixture_invariants(model):
    w = model.skinning_weights
    assert w.shape == (model.n_vertices, len(JOINT_NAMES))
    assert np.all(w >= 0)
    assert np.abs(w.sum(1) - 1).max() < 1e-6
    # at most two bones per vertex
    assert (w > 0).sum(1).max() <= 2
    assert model.parents[0] == -1
    assert all(0 <= p < j for j, p in enumerate(model.parents[1:], 1))
    assert set(model.part_labels) == {"body", "face", "left_hand", "right_hand"}
    assert model.pose_layout == (N_BODY_POSE, 10)
    assert 1000 <= model.n_vertices <= 2000


def test_fixture_deterministic():
    a, b = make_body_model(3), make_body_model(3)
    assert np.array_equal(a.vertices_canonical, b.vertices_canonical)
    assert np.array_equal(a.skinning_weights, b.skinning_weights)
    assert not np.array_equal(a.vertices_canonical, make_body_model(4).vertices_canonical)


def test_fixture_mirror_symmetric(model):
    idx = mirror_index(model)
    v = model.vertices_canonical
    assert np.array_equal(v[idx], v * [-1, 1, 1])


def test_invalid_weights_rejected(model):
    w = model.skinning_weights.copy()
    w[0, 0] += 0.1
    with pytest.raises(ValueError):
        BodyModel(model.vertices_canonical, w, model.parents, model.rest_offsets, model.shape_dirs,
                  model.expr_dirs, model.capsules, model.part_labels, model.canonical_rotations)


def test_cyclic_parents_rejected():
    with pytest.raises(ValueError):
        BodyModel(np.zeros((1, 3)), [[0.5, 0.5]], [-1, 1], np.zeros((2, 3)), np.zeros((1, 3, 1)),
                  np.zeros((1, 3, 1)), [Capsule((0, 0, 0), (0, 1, 0), 0.1)], ["body"], np.zeros((2, 3)))


def test_bad_capsule_rejected():
    with pytest.raises(ValueError):
        Capsule((0, 0, 0), (0, 0, 0), 0.1)
    with pytest.raises(ValueError):
        Capsule((0, 0, 0), (0, 1, 0), 0.0)


def test_pose_params_nonfinite_rejected():
    with pytest.raises(ValueError):
        PoseParams.zeros().replace(jaw=np.array([np.nan, 0, 0]))


def test_pose_dict_roundtrip(model, rng):
    p = random_pose(model, rng)
    assert PoseParams.from_dict(p.to_dict()) == p


@given(arrays(np.float64, 3, elements=finite))
def test_rodrigues_matches_series_oracle(r):
    assert np.abs(rodrigues(r) - oracles.axis_angle_matrix(r)).max() < 1e-9


@given(arrays(np.float64, 3, elements=finite))
def test_rodrigues_orthonormal(r):
    m = rodrigues(r)
    assert np.abs(m.T @ m - np.eye(3)).max() < 1e-12
    assert abs(np.linalg.det(m) - 1) < 1e-12


def test_rodrigues_examples():
    assert np.array_equal(rodrigues(np.zeros(3)), np.eye(3))
    m = rodrigues(np.array([0, 0, np.pi / 2]))
    assert np.allclose(m @ [1, 0, 0], [0, 1, 0], atol=1e-15)
    # tiny angles stay accurate
    r = np.array([1e-9, 0, 0])
    assert np.abs(rodrigues(r) - oracles.axis_angle_matrix(r)).max() < 1e-15


def test_identity_deformation(model):
    v = pose_vertices(model, model.canonical_pose())
    assert np.abs(v - model.vertices_canonical).max() < 1e-9


def test_canonical_skinning_is_identity(model):
    jt = forward_kinematics(model, model.canonical_pose())
    assert np.abs(jt.skinning - np.eye(4)).max() < 1e-12


def test_fk_matches_explicit_chain(model, rng):
    pose = random_pose(model, rng)
    jt = forward_kinematics(model, pose)
    rots = model.joint_rotations(pose)
    for j in (JOINT_NAMES.index("left_wrist"), JOINT_NAMES.index("right_pinky2")):
        chain = []
        k = j
        while k != -1:
            chain.append(k)
            k = model.parents[k]
        m = np.eye(4)
        for k in reversed(chain):
            local = np.eye(4)
            local[:3, :3] = oracles.axis_angle_matrix(rots[k])
            local[:3, 3] = model.rest_offsets[k] + (pose.global_transl if k == 0 else 0)
            m = m @ local
        assert np.abs(jt.world[j] - m).max() < 1e-9


def test_rigid_inverse_matches_gauss(rng):
    m = np.eye(4)
    m[:3, :3] = rodrigues(rng.normal(size=3))
    m[:3, 3] = rng.normal(size=3)
    assert np.abs(rigid_inverse(m) - oracles.gauss_inverse(m)).max() < 1e-12


def test_global_transform_is_rigid_motion(model, rng):
    pose = random_pose(model, rng)
    local = pose_vertices(model, pose.without_global())
    g = pose_vertices(model, pose)
    r = rodrigues(pose.global_orient)
    # root rest offset is the origin in the fixture skeleton
    assert np.abs(g - (local @ r.T + pose.global_transl)).max() < 1e-9


def test_blendshapes_linear(model, rng):
    a = random_pose(model, rng)
    off = blendshape_offsets(model, a)
    expected = np.einsum("nkb,b->nk", model.shape_dirs, a.shape) + np.einsum("nkb,b->nk", model.expr_dirs, a.expression)
    assert np.abs(off - expected).max() < 1e-12


def test_expression_moves_face_only(model):
    p = model.canonical_pose().replace(expression=np.ones(model.n_expr))
    off = blendshape_offsets(model, p)
    assert np.all(off[~model.part_mask("face")] == 0)
    assert np.abs(off[model.part_mask("face")]).max() > 0


def test_pose_length_mismatch(model):
    with pytest.raises(ValueError):
        model.joint_rotations(PoseParams.zeros(n_body=3))
    with pytest.raises(ValueError):
        blendshape_offsets(model, PoseParams.zeros(n_shape=4))


def test_lbs_matches_per_vertex_loop(model, rng):
    pose = random_pose(model, rng)
    jt = forward_kinematics(model, pose)
    v = pose_vertices(model, pose, jt)
    off = blendshape_offsets(model, pose)
    for i in rng.choice(model.n_vertices, 20, replace=False):
        m = sum(model.skinning_weights[i, j] * jt.skinning[j] for j in range(model.n_joints))
        x = m @ np.append(model.vertices_canonical[i] + off[i], 1.0)
        assert np.abs(x[:3] - v[i]).max() < 1e-12


def test_mirror_pose_involution(model, rng):
    p = random_pose(model, rng)
    assert mirror_pose(mirror_pose(p)) == p


def test_mirror_pose_mirrors_vertices(model, rng):
    p = random_pose(model, rng).replace(expression=np.zeros(model.n_expr))
    v = pose_vertices(model, p)
    vm = pose_vertices(model, mirror_pose(p))
    idx = mirror_index(model)
    assert np.abs(vm[idx] - v * [-1, 1, 1]).max() < 1e-9


@given(arrays(np.float64, (5, 3), elements=finite))
def test_segment_distance_bruteforce(points):
    a = np.array([[0.0, -0.3, 0.1]])
    b = np.array([[0.2, 0.3, -0.1]])
    ts = np.linspace(0, 1, 20001)
    seg = a + ts[:, None] * (b - a)
    brute = np.sqrt(((points[:, None] - seg[None]) ** 2).sum(-1)).min(1)
    got = segment_distance(points, a, b)[:, 0]
    assert np.all(got <= brute + 1e-12)
    assert np.all(brute - got < 5e-5)


def test_canonical_sdf_capsule():
    m = single_capsule_model()
    assert canonical_sdf(m, [0, 0, 0]) == pytest.approx(-0.25)
    assert canonical_sdf(m, [1.0, 0, 0]) == pytest.approx(0.75)
    assert canonical_sdf(m, [0, 0.3 + 0.25, 0]) == pytest.approx(0.0, abs=1e-15)
    assert canonical_sdf(m, [0, 1.3, 0]) == pytest.approx(0.75)


def test_canonical_sdf_union_is_min(model, rng):
    p = rng.normal(0, 0.5, (50, 3))
    a, b, r = model.capsule_arrays
    expected = [min(np.linalg.norm(x - (ai + np.clip(np.dot(x - ai, bi - ai) / np.dot(bi - ai, bi - ai), 0, 1) * (bi - ai))) - ri
                    for ai, bi, ri in zip(a, b, r)) for x in p]
    assert np.abs(canonical_sdf(model, p) - expected).max() < 1e-12


def test_vertices_lie_on_surface(model):
    d = canonical_sdf(model, model.vertices_canonical)
    # sampled on capsule surfaces; overlapping capsules can swallow some
    assert np.all(d < 1e-9)
    assert np.mean(np.abs(d) < 1e-9) > 0.5
