import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from xavatar.triplane import (
    SOURCE_BODY,
    SOURCE_FACE,
    SOURCE_LEFT_HAND,
    SOURCE_RIGHT_HAND,
    BoundingBoxSet,
    Box,
    DecoderWeights,
    TriPlaneSet,
    blend_window_weight,
    body_field,
    compose_overlap,
    decode,
    flip_x,
    normalize_to_bbox,
    overlap_part,
    pack_feature_map,
    query_left_hand,
    query_normalized,
    query_part,
    route_body_query,
    route_sources,
    sample_plane,
    sdf_to_density,
    split_feature_map,
)

coord = st.floats(-1.5, 1.5, allow_nan=False)


def test_triplane_resolutions(planes):
    assert planes.resolutions == {"body": 64, "face": 32, "hand": 32}
    assert planes.channels == 32


def test_triplane_shape_validation():
    with pytest.raises(ValueError):
        TriPlaneSet(np.zeros((3, 4, 8, 8)), np.zeros((3, 4, 8, 8)), np.zeros((3, 4, 4, 4)))
    with pytest.raises(ValueError):
        TriPlaneSet(np.zeros((3, 4, 8, 8)), np.zeros((3, 2, 4, 4)), np.zeros((3, 4, 4, 4)))


def test_normalize_examples():
    box = Box((0, 0, 0), (2, 4, 6))
    assert np.array_equal(normalize_to_bbox([1, 2, 3], box), [0, 0, 0])
    assert np.array_equal(normalize_to_bbox([2, 4, 6], box), [1, 1, 1])
    assert np.array_equal(normalize_to_bbox([0, 0, 0], box), [-1, -1, -1])
    # unclamped outside the box
    assert np.array_equal(normalize_to_bbox([4, 0, 3], box), [3, -1, 0])


def test_box_rejects_degenerate():
    with pytest.raises(ValueError):
        Box((0, 0, 0), (1, 0, 1))


def test_sample_plane_texel_centers(rng):
    plane = rng.normal(size=(2, 5, 5))
    # uv = -1 is texel 0, uv = +1 is texel W-1
    assert np.allclose(sample_plane(plane, [-1, -1]), plane[:, 0, 0], atol=1e-12)
    assert np.allclose(sample_plane(plane, [1, 1]), plane[:, 4, 4], atol=1e-12)
    assert np.allclose(sample_plane(plane, [1, -1]), plane[:, 0, 4], atol=1e-12)
    # midway between two horizontal neighbours
    u = -1 + 2 * 1.5 / 4
    assert np.allclose(sample_plane(plane, [u, -1]), 0.5 * (plane[:, 0, 1] + plane[:, 0, 2]), atol=1e-7)


@given(arrays(np.float64, 2, elements=st.floats(-5, 5, allow_nan=False)))
def test_border_clamping(uv):
    plane = np.arange(2 * 6 * 6, dtype=np.float64).reshape(2, 6, 6)
    assert np.allclose(sample_plane(plane, uv), sample_plane(plane, np.clip(uv, -1, 1)), atol=1e-12)


@given(arrays(np.float64, 3, elements=coord), st.integers(0, 2**31))
def test_query_matches_corner_oracle(p, seed):
    planes = np.random.default_rng(seed).normal(size=(3, 4, 8, 8))
    assert np.abs(query_normalized(p, planes) - oracles.triplane_feature(planes, p)).max() < 1e-6


def test_zero_planes_zero_feature(model, boxes):
    z = TriPlaneSet.zeros()
    f = query_part(model.vertices_canonical, "body", z, boxes)
    assert np.all(f == 0)


def test_query_part_uses_part_box(planes, boxes):
    c = boxes.face.center
    f = query_part(c, "face", planes, boxes)
    assert np.allclose(f, query_normalized(np.zeros(3), planes.face))


def test_unknown_part(planes, boxes):
    with pytest.raises(ValueError):
        query_part(np.zeros(3), "tail", planes, boxes)


def test_flip_involution():
    p = np.array([0.3, 0.2, -0.1])
    assert np.array_equal(flip_x(p), [-0.3, 0.2, -0.1])
    assert np.array_equal(flip_x(flip_x(p)), p)


def test_left_hand_sampled_at_flipped_coordinate(planes, boxes):
    n = np.array([0.3, 0.2, -0.1])
    box = boxes.left_hand
    x = 0.5 * ((box.max - box.min) * n + box.max + box.min)
    got = query_left_hand(x, planes, boxes)
    assert np.allclose(got, query_normalized([-0.3, 0.2, -0.1], planes.hand), atol=1e-12)


def test_routing_precedence(planes):
    big = Box((-1, -1, -1), (1, 1, 1))
    small = Box((-0.1, -0.1, -0.1), (0.1, 0.1, 0.1))
    # all part boxes overlap at the origin; face wins, then right, then left hand
    bs = BoundingBoxSet(Box((-2, -2, -2), (2, 2, 2)), small, big, big, small, big, big)
    assert route_sources(np.zeros(3), bs) == SOURCE_FACE
    assert route_sources(np.array([0.5, 0, 0]), bs) == SOURCE_RIGHT_HAND
    bs2 = BoundingBoxSet(bs.body, small, small, big, small, small, big)
    assert route_sources(np.array([0.5, 0, 0]), bs2) == SOURCE_LEFT_HAND
    assert route_sources(np.array([1.5, 0, 0]), bs2) == SOURCE_BODY


def test_route_body_query_single(planes, boxes):
    feat, name = route_body_query(boxes.face.center, planes, boxes)
    assert name == "face"
    assert np.allclose(feat, query_part(boxes.face.center, "face", planes, boxes))
    _, name = route_body_query(boxes.body.center, planes, boxes)
    assert name == "body"


def test_window_values():
    assert blend_window_weight(np.zeros(3)) == 1.0
    assert abs(blend_window_weight(np.array([1.0, 0, 0])) - math.exp(-2)) < 1e-12


@given(arrays(np.float64, 3, elements=coord))
def test_window_matches_oracle(p):
    w = blend_window_weight(p)
    assert 0 <= w <= 1
    assert abs(w - oracles.window(p)) < 1e-15


def test_decode_zero_sdf_head_returns_base(rng):
    dec = DecoderWeights.seeded(0, channels=8).with_zero_sdf_head()
    f = rng.normal(size=(10, 8))
    d_c = rng.normal(size=10)
    color, sdf = decode(f, d_c, dec)
    assert np.array_equal(sdf, d_c)
    assert np.all((color > 0) & (color < 1))


def test_decode_matches_scalar_mlp(rng):
    dec = DecoderWeights.seeded(1, channels=4, hidden=5)
    f = rng.normal(size=4)
    d_c = 0.07
    color, sdf = decode(f, d_c, dec)
    w = {k: getattr(dec, k).astype(np.float64) for k in dec.TENSORS}
    h = [oracles.softplus(sum(f[i] * w["color_w1"][i, j] for i in range(4)) + w["color_b1"][j]) for j in range(5)]
    z = [sum(h[j] * w["color_w2"][j, k] for j in range(5)) + w["color_b2"][k] for k in range(3)]
    assert np.allclose(color, [1 / (1 + math.exp(-v)) for v in z], atol=1e-12)
    x = list(f) + [d_c]
    h = [oracles.softplus(sum(x[i] * w["sdf_w1"][i, j] for i in range(5)) + w["sdf_b1"][j]) for j in range(5)]
    assert abs(sdf - (d_c + sum(h[j] * w["sdf_w2"][j, 0] for j in range(5)) + w["sdf_b2"][0])) < 1e-12


def test_decoder_channel_mismatch():
    with pytest.raises(ValueError):
        decode(np.zeros(5), 0.0, DecoderWeights.zeros(channels=4))


def test_sdf_to_density():
    alpha = 0.1
    assert sdf_to_density(0.0, alpha) == pytest.approx(5.0)
    assert sdf_to_density(-10.0, alpha) == pytest.approx(10.0)
    assert sdf_to_density(10.0, alpha) < 1e-40
    assert np.isfinite(sdf_to_density(-1e6, 1e-3))
    with pytest.raises(ValueError):
        sdf_to_density(0.0, 0.0)


@given(st.floats(-5, 5, allow_nan=False), st.floats(-5, 5, allow_nan=False))
def test_density_monotone(a, b):
    lo, hi = min(a, b), max(a, b)
    assert sdf_to_density(lo, 0.05) >= sdf_to_density(hi, 0.05)


def test_compose_overlap_convex(planes, boxes, rng):
    box = boxes.face.intersection(boxes.face_blend)
    p = box.min + rng.random((1000, 3)) * (box.max - box.min)
    from xavatar.body_model import canonical_sdf  # noqa: F401

    d_c = rng.normal(0, 0.05, len(p))
    dec = DecoderWeights.seeded(0)
    color, sdf = compose_overlap(p, d_c, planes, boxes, dec)
    cb, db = decode(query_part(p, "body", planes, boxes), d_c, dec)
    cp, dp = decode(query_part(p, "face", planes, boxes), d_c, dec)
    lo, hi = np.minimum(db, dp), np.maximum(db, dp)
    assert np.all((sdf >= lo - 1e-12) & (sdf <= hi + 1e-12))
    assert np.all(color >= np.minimum(cb, cp) - 1e-12) and np.all(color <= np.maximum(cb, cp) + 1e-12)


def test_compose_overlap_outside_raises(planes, boxes):
    with pytest.raises(ValueError):
        compose_overlap(boxes.body.center, 0.0, planes, boxes, DecoderWeights.zeros())


def test_body_field_consistent_with_compose(planes, boxes, rng):
    dec = DecoderWeights.seeded(0)
    p = boxes.body.min + rng.random((4000, 3)) * (boxes.body.max - boxes.body.min)
    box = boxes.right_hand.intersection(boxes.right_hand_blend)
    p = np.concatenate([p, box.min + rng.random((200, 3)) * (box.max - box.min)])
    d_c = rng.normal(0, 0.05, len(p))
    color, sdf, src, blended = body_field(p, d_c, planes, boxes, dec)
    assert blended.sum() >= 200
    c2, s2 = compose_overlap(p[blended], d_c[blended], planes, boxes, dec)
    assert np.allclose(sdf[blended], s2, atol=1e-12)
    assert np.allclose(color[blended], c2, atol=1e-12)
    plain = ~blended
    f, _ = route_body_query(p[plain], planes, boxes)
    c3, s3 = decode(f, d_c[plain], dec)
    assert np.allclose(sdf[plain], s3, atol=1e-12)
    assert np.array_equal(overlap_part(p, boxes) != SOURCE_BODY, blended)


def test_boxes_require_overlap():
    a = Box((0, 0, 0), (1, 1, 1))
    b = Box((5, 5, 5), (6, 6, 6))
    with pytest.raises(ValueError):
        BoundingBoxSet(a, a, a, a, b, a, a)


def test_pack_split_roundtrip(planes):
    fmap = pack_feature_map(planes)
    assert fmap.shape == (64, 64, 9 * 32 // 2)
    back = split_feature_map(fmap)
    for k in ("body", "face", "hand"):
        assert np.array_equal(getattr(back, k), getattr(planes, k))


@given(st.integers(0, 2**31))
def test_split_pack_roundtrip_random_map(seed):
    fmap = np.random.default_rng(seed).normal(size=(8, 8, 18)).astype(np.float32)
    assert np.array_equal(pack_feature_map(split_feature_map(fmap)), fmap)


def test_pack_quadrant_layout():
    c, wb = 4, 8
    face = np.arange(3 * c * 16, dtype=np.float32).reshape(3, c, 4, 4)
    ps = TriPlaneSet(np.zeros((3, c, wb, wb)), face, np.zeros((3, c, 4, 4)))
    fmap = pack_feature_map(ps)
    ch = fmap[..., 3 * c]
    flat = face.reshape(-1, 4, 4)
    # four consecutive plane-channels tile one packed channel: TL, TR, BL, BR
    assert np.array_equal(ch[:4, :4], flat[0])
    assert np.array_equal(ch[:4, 4:], flat[1])
    assert np.array_equal(ch[4:, :4], flat[2])
    assert np.array_equal(ch[4:, 4:], flat[3])
