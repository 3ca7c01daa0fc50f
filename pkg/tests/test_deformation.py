import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from conftest import random_pose
from xavatar.body_model import BodyModel, pose_vertices
from xavatar.deformation import (
    DegenerateSkinningError,
    DeformationContext,
    UniformGrid,
    gram_schmidt,
    invert_blended,
    median_spacing,
    nearest_brute_force,
    to_canonical,
)


def one_hot_model(model):
    w = np.zeros_like(model.skinning_weights)
    w[np.arange(model.n_vertices), model.skinning_weights.argmax(1)] = 1.0
    return BodyModel(model.vertices_canonical, w, model.parents, model.rest_offsets, model.shape_dirs,
                     model.expr_dirs, model.capsules, model.part_labels, model.canonical_rotations,
                     model.joint_names)


def test_grid_matches_scalar_oracle(rng):
    pts = rng.normal(size=(300, 3))
    q = rng.normal(0, 1.5, (200, 3))
    got = UniformGrid(pts).nearest(q)
    assert [oracles.brute_nearest(pts, x) for x in q] == got.tolist()


@given(st.integers(0, 2**31), st.floats(0.01, 2.0))
def test_grid_matches_bruteforce(seed, cell):
    r = np.random.default_rng(seed)
    pts = r.normal(size=(int(r.integers(1, 400)), 3))
    q = np.concatenate([r.normal(0, 2, (300, 3)), pts[: 20] + 1e-12])
    assert np.array_equal(UniformGrid(pts, cell).nearest(q), nearest_brute_force(pts, q))


def test_grid_tie_breaks_to_lowest_index():
    pts = np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0], [1.0, 0, 0]])
    g = UniformGrid(pts, 0.3)
    assert g.nearest(np.zeros((1, 3)))[0] == 0
    assert g.nearest(np.array([[1.0, 0, 0]]))[0] == 0


def test_grid_far_queries(rng):
    pts = rng.random((500, 3))
    q = rng.normal(0, 1, (100, 3)) * 1e3
    assert np.array_equal(UniformGrid(pts).nearest(q), nearest_brute_force(pts, q))


def test_grid_enumerate_and_cells(rng):
    pts = rng.random((100, 3))
    g = UniformGrid(pts, 0.25)
    assert sorted(g.enumerate().tolist()) == list(range(100))
    total = sum(len(g.cell_members(c)) for c in np.ndindex(*g.dims))
    assert total == 100
    assert len(g.cell_members((-1, 0, 0))) == 0


def test_grid_rejects_bad_input(rng):
    with pytest.raises(ValueError):
        UniformGrid(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        UniformGrid(rng.random((5, 3))).nearest(np.array([[np.nan, 0, 0]]))


def test_median_spacing():
    pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [3.0, 0, 0]])
    assert median_spacing(pts) == 1.0


def test_canonical_identity(model, rng):
    ctx = DeformationContext(model, model.canonical_pose())
    p = rng.normal(0, 0.6, (2000, 3))
    assert np.abs(ctx.to_canonical(p) - p).max() < 1e-6


def test_one_hot_vertices_roundtrip(model, rng):
    m = one_hot_model(model)
    for _ in range(3):
        pose = random_pose(m, rng)
        ctx = DeformationContext(m, pose)
        xc, idx = ctx.to_canonical(ctx.posed_vertices, return_index=True)
        assert np.array_equal(idx, np.arange(m.n_vertices))
        assert np.abs(xc - m.vertices_canonical).max() < 1e-6


def test_blended_vertex_roundtrip(model, rng):
    pose = random_pose(model, rng)
    ctx = DeformationContext(model, pose)
    xc = ctx.to_canonical(ctx.posed_vertices)
    # blended (non-rigid) matrices are orthonormalized or LU-inverted
    assert np.median(np.abs(xc - model.vertices_canonical).max(1)) < 1e-3


def test_inverse_transform_orthonormal(model, rng):
    m = one_hot_model(model)
    ctx = DeformationContext(m, random_pose(m, rng))
    for v in rng.choice(m.n_vertices, 30, replace=False):
        t = ctx.inverse_transform(int(v))
        assert np.abs(t.rotation @ t.rotation.T - np.eye(3)).max() < 1e-9
        x = ctx.posed_vertices[v]
        assert np.allclose(t.apply(x), m.vertices_canonical[v], atol=1e-9)
        assert np.allclose(t.matrix @ np.append(x, 1), np.append(m.vertices_canonical[v], 1), atol=1e-9)


def test_inverse_matches_gauss_oracle(model, rng):
    ctx = DeformationContext(model, random_pose(model, rng))
    inv, bad = invert_blended(ctx.blended_matrices)
    assert not bad.any()
    general = np.nonzero(np.abs(gram_schmidt(ctx.blended_matrices[:, :3, :3]) - ctx.blended_matrices[:, :3, :3]).max((1, 2)) >= 1e-3)[0]
    for v in general[:10]:
        assert np.allclose(inv[v], oracles.gauss_inverse(ctx.blended_matrices[v]), atol=1e-9)


def test_degenerate_matrix_detected():
    m = np.zeros((1, 4, 4))
    m[0, 3, 3] = 1.0
    _, bad = invert_blended(m)
    assert bad[0]


def test_degenerate_vertex_raises(model):
    # two opposite half-turns blended 50/50 collapse the rotation part
    from xavatar.body_model import PoseParams

    single = BodyModel(np.array([[0.0, 0.0, 0.0], [1.0, 0, 0]]), [[0.5, 0.5], [1.0, 0.0]], [-1, 0],
                       np.zeros((2, 3)), np.zeros((2, 3, 1)), np.zeros((2, 3, 1)), model.capsules[:1],
                       ["body", "body"], np.zeros((2, 3)))
    pose = PoseParams(np.zeros(1), np.zeros(1), np.zeros(3), np.array([[np.pi, 0, 0]]), np.zeros((0, 3)),
                      np.zeros((0, 3)), np.zeros(3), np.zeros(3))
    ctx = DeformationContext(single, pose)
    with pytest.raises(DegenerateSkinningError):
        ctx.inverse_transform(0)
    with pytest.raises(DegenerateSkinningError):
        ctx.to_canonical(np.array([0.0, 0.01, 0.0]))
    assert ctx.to_canonical(np.array([1.0, 0, 0])) == pytest.approx([1.0, 0, 0])


def test_nearest_vertex_single_and_batch(model, rng):
    ctx = DeformationContext(model, random_pose(model, rng))
    i = ctx.nearest_vertex(ctx.posed_vertices[5])
    assert isinstance(i, int)
    assert np.array_equal(ctx.posed_vertices[i], ctx.posed_vertices[5])
    q = rng.normal(0, 1, (50, 3))
    assert np.array_equal(ctx.nearest_vertex(q), nearest_brute_force(ctx.posed_vertices, q))


def test_module_wrapper(model):
    ctx = DeformationContext(model, model.canonical_pose())
    assert np.allclose(to_canonical(ctx, np.array([0.1, 0.2, 0.3])), [0.1, 0.2, 0.3], atol=1e-9)


def test_gram_schmidt_orthonormal(rng):
    a = rng.normal(size=(20, 3, 3))
    q = gram_schmidt(a)
    assert np.abs(np.einsum("nij,nik->njk", q, q) - np.eye(3)).max() < 1e-12
    assert np.all(np.linalg.det(q) > 0)


def test_posed_vertices_context(model, rng):
    pose = random_pose(model, rng)
    ctx = DeformationContext(model, pose)
    assert np.array_equal(ctx.posed_vertices, pose_vertices(model, pose))
