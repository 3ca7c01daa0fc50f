"""Pinhole rays, stratified/hierarchical depth sampling, emission-absorption
compositing and the multi-part (body / face / hand) render passes."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .body_model import BodyModel, PoseParams, canonical_sdf, rodrigues
from .deformation import DeformationContext
from .triplane import (
    SOURCE_NAMES,
    BoundingBoxSet,
    DecoderWeights,
    TriPlaneSet,
    body_field,
    decode,
    query_part,
    sdf_to_density,
)

PARTS = ("body", "face", "hand")
# focal lengths (pixels) at the final crop resolution (height, width)
FOCAL = {"body": 2560.0, "face": 6400.0, "hand": 8000.0}
FINAL_SIZE = {"body": (512, 256), "face": (256, 256), "hand": (256, 256)}
RAW_SIZE = {"body": (224, 112), "face": (28, 28), "hand": (28, 28)}
DEPTH_EPS = 1e-6


@dataclass(frozen=True)
class Camera:
    """Pinhole camera; ``x_cam = rotation @ x_world + translation``."""

    focal: float
    principal: np.ndarray
    rotation: np.ndarray
    translation: np.ndarray
    height: int
    width: int
    part: str = "body"

    def __post_init__(self):
        if not self.focal > 0:
            raise ValueError("focal length must be positive")
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        if np.abs(r.T @ r - np.eye(3)).max() > 1e-6:
            raise ValueError("camera rotation is not orthogonal")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "principal", np.asarray(self.principal, dtype=np.float64).reshape(2))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))
        object.__setattr__(self, "focal", float(self.focal))

    @property
    def intrinsics(self) -> np.ndarray:
        return np.array([[self.focal, 0.0, self.principal[0]],
                         [0.0, self.focal, self.principal[1]],
                         [0.0, 0.0, 1.0]])

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def project(self, points) -> np.ndarray:
        """World points to continuous pixel coordinates (pixel centers at +0.5)."""
        cam = np.asarray(points) @ self.rotation.T + self.translation
        uvw = cam @ self.intrinsics.T
        return uvw[..., :2] / uvw[..., 2:3]

    def to_dict(self):
        return {"part": self.part, "focal": self.focal, "principal": self.principal.tolist(),
                "rotation": self.rotation.tolist(), "translation": self.translation.tolist(),
                "height": self.height, "width": self.width}


def assemble_camera(part: str, image_size, extrinsic) -> Camera:
    """Part camera with the fixed per-part focal length.

    Focal lengths are defined at the final crop resolution (512x256 body,
    256^2 face/hand) and scaled with the raster height for other sizes.
    ``extrinsic`` is ``{"rotation": 3x3 or axis-angle, "translation": 3}``.
    """
    if part not in FOCAL:
        raise ValueError(f"unknown part {part!r}")
    h, w = int(image_size[0]), int(image_size[1])
    rot = np.asarray(extrinsic["rotation"], dtype=np.float64)
    if rot.shape == (3,):
        rot = rodrigues(rot)
    focal = FOCAL[part] * h / FINAL_SIZE[part][0]
    return Camera(focal, (w / 2.0, h / 2.0), rot, extrinsic["translation"], h, w, part)


def recenter_translation(rotation, translation, point) -> np.ndarray:
    """Translation that puts ``point`` on the optical axis at its current depth."""
    cam = np.asarray(rotation) @ np.asarray(point) + np.asarray(translation)
    return np.asarray(translation) - np.array([cam[0], cam[1], 0.0])


@dataclass(frozen=True)
class RayBatch:
    origins: np.ndarray
    directions: np.ndarray
    near: np.ndarray
    far: np.ndarray
    pixel_coords: np.ndarray

    def __len__(self):
        return len(self.origins)


def generate_rays(camera: Camera, pixels=None, near=0.0, far=1.0) -> RayBatch:
    """Back-project pixel centers. ``pixels`` is ``(R, 2)`` as (column, row);
    defaults to every pixel in row-major order."""
    if pixels is None:
        rows, cols = np.mgrid[0 : camera.height, 0 : camera.width]
        pixels = np.stack([cols.ravel(), rows.ravel()], axis=1)
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    uv1 = np.concatenate([pixels + 0.5, np.ones((len(pixels), 1))], axis=1)
    cam_dirs = uv1 @ np.linalg.inv(camera.intrinsics).T
    dirs = cam_dirs @ camera.rotation  # R^T applied to row vectors
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origins = np.broadcast_to(camera.center, dirs.shape).copy()
    n = len(pixels)
    near = np.broadcast_to(np.asarray(near, dtype=np.float64), (n,)).copy()
    far = np.broadcast_to(np.asarray(far, dtype=np.float64), (n,)).copy()
    return RayBatch(origins, dirs, near, far, pixels)


def sphere_bounds(origins, directions, center, radius):
    """Entry/exit depths of unit rays through a sphere; ``hit`` marks real hits."""
    oc = origins - center
    b = np.sum(oc * directions, axis=1)
    c = np.sum(oc * oc, axis=1) - radius * radius
    disc = b * b - c
    hit = disc > 0
    root = np.sqrt(np.where(hit, disc, 0.0))
    near = np.maximum(-b - root, 0.0)
    far = -b + root
    hit &= far > near
    return near, far, hit


def stratified_samples(near, far, count: int, jitter: bool = False, rng=None) -> np.ndarray:
    """One depth per equal bin of [near, far]: bin midpoints, or uniform
    within each bin when ``jitter`` is on. Broadcasts over rays."""
    if count < 2:
        raise ValueError("need at least 2 samples per ray")
    near = np.asarray(near, dtype=np.float64)
    far = np.asarray(far, dtype=np.float64)
    width = (far - near)[..., None] / count
    offset = np.full(near.shape + (count,), 0.5)
    if jitter:
        if rng is None or isinstance(rng, (int, np.integer)):
            rng = np.random.default_rng(rng)
        offset = rng.random(near.shape + (count,))
    return near[..., None] + (np.arange(count) + offset) * width


def sample_pdf(edges, weights, count: int, rng=None) -> np.ndarray:
    """Inverse-CDF draws from piecewise-constant densities over bins.

    ``edges`` is ``(R, S+1)``, ``weights`` ``(R, S)``. Rays whose weights are
    all zero get stratified midpoints instead.
    """
    edges = np.atleast_2d(np.asarray(edges, dtype=np.float64))
    weights = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    if np.any(weights < 0):
        raise ValueError("weights must be non-negative")
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    total = weights.sum(axis=1, keepdims=True)
    empty = total[:, 0] <= 0
    pdf = weights / np.where(total > 0, total, 1.0)
    cdf = np.concatenate([np.zeros((len(pdf), 1)), np.cumsum(pdf, axis=1)], axis=1)
    cdf[:, -1] = 1.0
    u = rng.random((len(pdf), count))
    idx = (u[:, :, None] >= cdf[:, None, 1:]).sum(axis=-1)
    idx = np.minimum(idx, pdf.shape[1] - 1)
    c0 = np.take_along_axis(cdf, idx, axis=1)
    p = np.take_along_axis(pdf, idx, axis=1)
    lo = np.take_along_axis(edges, idx, axis=1)
    hi = np.take_along_axis(edges, idx + 1, axis=1)
    frac = np.clip((u - c0) / np.where(p > 0, p, 1.0), 0.0, 1.0)
    out = lo + frac * (hi - lo)
    if empty.any():
        out[empty] = stratified_samples(edges[empty, 0], edges[empty, -1], count)
    return out


def bin_edges(depths, near=None, far=None) -> np.ndarray:
    """Bin boundaries around sorted samples: midpoints, closed by near/far."""
    d = np.atleast_2d(np.asarray(depths, dtype=np.float64))
    mid = 0.5 * (d[:, 1:] + d[:, :-1])
    first = d[:, :1] - (mid[:, :1] - d[:, :1]) if near is None else np.reshape(near, (-1, 1)) * np.ones((len(d), 1))
    last = d[:, -1:] + (d[:, -1:] - mid[:, -1:]) if far is None else np.reshape(far, (-1, 1)) * np.ones((len(d), 1))
    return np.concatenate([first, mid, last], axis=1)


def hierarchical_samples(coarse_depths, coarse_weights, count: int, rng=None,
                         near=None, far=None, merge: bool = True) -> np.ndarray:
    """Importance samples from the coarse weights, merged with the coarse depths."""
    d = np.atleast_2d(np.asarray(coarse_depths, dtype=np.float64))
    fine = sample_pdf(bin_edges(d, near, far), coarse_weights, count, rng)
    if not merge:
        return fine
    return np.sort(np.concatenate([d, fine], axis=1), axis=1)


def composite(depths, densities, colors, far):
    """Batched emission-absorption quadrature.

    Returns ``(rgb, depth, opacity, weights, transmittance)``; the last
    interval runs from the final sample to ``far``.
    """
    t = np.atleast_2d(np.asarray(depths, dtype=np.float64))
    sigma = np.atleast_2d(np.asarray(densities, dtype=np.float64))
    c = np.asarray(colors, dtype=np.float64).reshape(t.shape + (3,))
    far = np.broadcast_to(np.asarray(far, dtype=np.float64), (len(t),))
    delta = np.concatenate([np.diff(t, axis=1), (far - t[:, -1])[:, None]], axis=1)
    if np.any(delta < 0):
        raise ValueError("sample depths must be sorted and end before far")
    alpha = 1.0 - np.exp(-sigma * delta)
    trans = np.cumprod(np.concatenate([np.ones((len(t), 1)), 1.0 - alpha[:, :-1]], axis=1), axis=1)
    w = trans * alpha
    opacity = w.sum(axis=1)
    rgb = np.einsum("rs,rsc->rc", w, c)
    depth = (w * t).sum(axis=1) / np.maximum(opacity, DEPTH_EPS)
    return rgb, depth, opacity, w, trans


def integrate_ray(depths, densities, colors, far=None) -> dict:
    """Composite one ray. ``far`` defaults to the last depth (zero-length tail)."""
    t = np.asarray(depths, dtype=np.float64)
    if far is None:
        far = t[-1]
    rgb, depth, opacity, w, trans = composite(t[None], np.asarray(densities)[None],
                                              np.asarray(colors)[None], far)
    return {"rgb": rgb[0], "depth": float(depth[0]), "opacity": float(opacity[0]),
            "weights": w[0], "transmittance": trans[0]}


# --------------------------------------------------------------------------
# scene evaluation


@dataclass(frozen=True)
class Scene:
    model: BodyModel
    planes: TriPlaneSet
    boxes: BoundingBoxSet
    decoder: DecoderWeights


@dataclass(frozen=True)
class SamplingConfig:
    coarse: int = 40
    fine: int = 20
    seed: int = 0
    jitter: bool = True
    sphere_padding: float = 0.10
    chunk: int = 4096
    workers: int = 1


@dataclass
class RenderOutput:
    part: str
    rgb: np.ndarray
    depth: np.ndarray
    opacity: np.ndarray
    camera: Camera
    route_counts: dict = field(default_factory=dict)
    sample_buffers: dict | None = None

    @property
    def rgb_raw(self) -> np.ndarray:
        return self.rgb

    @property
    def rgb_on_white(self) -> np.ndarray:
        return self.rgb + (1.0 - self.opacity)[..., None]


def _field(part, scene: Scene, ctx: DeformationContext, x_obs):
    """Density and color at observation points for one render pass."""
    x_c = ctx.to_canonical(x_obs)
    d_c = canonical_sdf(scene.model, x_c)
    counts = {}
    if part == "body":
        color, sdf, src, blended = body_field(x_c, d_c, scene.planes, scene.boxes, scene.decoder)
        binc = np.bincount(src, minlength=len(SOURCE_NAMES))
        counts = {name: int(n) for name, n in zip(SOURCE_NAMES, binc)}
        counts["blended"] = int(blended.sum())
    else:
        feat = query_part(x_c, part, scene.planes, scene.boxes)
        color, sdf = decode(feat, d_c, scene.decoder)
        counts = {part: len(x_c)}
    sigma = sdf_to_density(sdf, scene.decoder.alpha)
    return sigma, color, sdf, d_c, x_c, counts


def _merge_counts(total, new):
    for k, v in new.items():
        total[k] = total.get(k, 0) + v


def render_part(part: str, scene: Scene, pose: PoseParams, camera: Camera,
                sampling: SamplingConfig = SamplingConfig(), keep_samples: bool = False,
                context: DeformationContext | None = None) -> RenderOutput:
    """Render one part image.

    Every ray gets a coarse stratified pass and a hierarchical fine pass over
    the padded bounding sphere of the posed body. Face and hand passes read
    their own tri-planes; the body pass routes through the part boxes and
    blends in the transition regions.
    """
    if part not in PARTS:
        raise ValueError(f"unknown part {part!r}")
    ctx = context if context is not None else DeformationContext(scene.model, pose)
    h, w = camera.height, camera.width
    rays = generate_rays(camera)
    v = ctx.posed_vertices
    center = 0.5 * (v.min(axis=0) + v.max(axis=0))
    radius = np.linalg.norm(v - center, axis=1).max() * (1.0 + sampling.sphere_padding)
    near, far, hit = sphere_bounds(rays.origins, rays.directions, center, radius)

    rng = np.random.default_rng([sampling.seed, PARTS.index(part)])
    n = len(rays)
    u_coarse = rng.random((n, sampling.coarse)) if sampling.jitter else None
    fine_seeds = rng.integers(0, 2**63 - 1, size=(n + sampling.chunk - 1) // sampling.chunk)

    rgb = np.zeros((n, 3))
    depth = np.zeros(n)
    opacity = np.zeros(n)
    counts: dict = {}
    buffers = {"sdf": [], "base_sdf": [], "canonical_point": []} if keep_samples else None

    def run(ci):
        sl = slice(ci * sampling.chunk, min(n, (ci + 1) * sampling.chunk))
        idx = np.nonzero(hit[sl])[0] + sl.start
        if len(idx) == 0:
            return ci, idx, None
        o, d = rays.origins[idx], rays.directions[idx]
        nr, fr = near[idx], far[idx]
        width = (fr - nr)[:, None] / sampling.coarse
        off = u_coarse[idx] if u_coarse is not None else 0.5
        t_c = nr[:, None] + (np.arange(sampling.coarse) + off) * width
        s_c, c_c, sdf_c, dc_c, xc_c, cnt = _field(part, scene, ctx, (o[:, None] + d[:, None] * t_c[..., None]).reshape(-1, 3))
        shape = t_c.shape
        s_c, c_c = s_c.reshape(shape), c_c.reshape(shape + (3,))
        per_sample = [sdf_c, dc_c, xc_c]
        if sampling.fine > 0:
            _, _, _, wts, _ = composite(t_c, s_c, c_c, fr)
            edges = nr[:, None] + np.arange(sampling.coarse + 1) * width
            t_f = sample_pdf(edges, wts, sampling.fine, np.random.default_rng(fine_seeds[ci]))
            s_f, c_f, sdf_f, dc_f, xc_f, cnt_f = _field(part, scene, ctx, (o[:, None] + d[:, None] * t_f[..., None]).reshape(-1, 3))
            _merge_counts(cnt, cnt_f)
            t_all = np.concatenate([t_c, t_f], axis=1)
            order = np.argsort(t_all, axis=1, kind="stable")
            t_all = np.take_along_axis(t_all, order, axis=1)
            s_all = np.take_along_axis(np.concatenate([s_c, s_f.reshape(t_f.shape)], axis=1), order, axis=1)
            c_all = np.take_along_axis(np.concatenate([c_c, c_f.reshape(t_f.shape + (3,))], axis=1), order[..., None], axis=1)
            per_sample = [np.concatenate(p) for p in zip(per_sample, [sdf_f, dc_f, xc_f])]
        else:
            t_all, s_all, c_all = t_c, s_c, c_c
        out = composite(t_all, s_all, c_all, fr)[:3]
        return ci, idx, (out, cnt, per_sample)

    n_chunks = (n + sampling.chunk - 1) // sampling.chunk
    if sampling.workers > 1:
        with ThreadPoolExecutor(sampling.workers) as pool:
            results = list(pool.map(run, range(n_chunks)))
    else:
        results = [run(ci) for ci in range(n_chunks)]
    for _, idx, res in results:
        if res is None:
            continue
        (c, dep, op), cnt, per_sample = res
        rgb[idx], depth[idx], opacity[idx] = c, dep, op
        _merge_counts(counts, cnt)
        if buffers is not None:
            for key, val in zip(("sdf", "base_sdf", "canonical_point"), per_sample):
                buffers[key].append(val)
    if buffers is not None:
        buffers = {k: (np.concatenate(v) if v else np.zeros((0, 3) if k == "canonical_point" else 0))
                   for k, v in buffers.items()}
    return RenderOutput(
        part=part,
        rgb=np.clip(rgb, 0.0, 1.0).reshape(h, w, 3),
        depth=depth.reshape(h, w),
        opacity=np.clip(opacity, 0.0, 1.0).reshape(h, w),
        camera=camera,
        route_counts=counts,
        sample_buffers=buffers,
    )


def part_cameras(pose: PoseParams, ctx: DeformationContext, sizes: dict | None = None) -> dict:
    """Body/face/hand cameras from the pose's global orientation/translation.

    The face and hand cameras are re-centered on the head joint and the
    right-hand vertices respectively.
    """
    sizes = {**RAW_SIZE, **(sizes or {})}
    rot = rodrigues(pose.global_orient)
    t = pose.global_transl
    model = ctx.model
    names = model.joint_names
    cams = {"body": assemble_camera("body", sizes["body"], {"rotation": rot, "translation": t})}
    if "head" in names:
        head = ctx.joint_transforms.world_translations[names.index("head")]
        face_mask = model.part_mask("face")
        target = ctx.posed_vertices[face_mask].mean(axis=0) if face_mask.any() else head
        cams["face"] = assemble_camera("face", sizes["face"],
                                       {"rotation": rot, "translation": recenter_translation(rot, t, target)})
    hand_mask = model.part_mask("right_hand")
    if hand_mask.any():
        target = ctx.posed_vertices[hand_mask].mean(axis=0)
        cams["hand"] = assemble_camera("hand", sizes["hand"],
                                       {"rotation": rot, "translation": recenter_translation(rot, t, target)})
    return cams


def render_avatar(scene: Scene, pose: PoseParams, mode: str = "inference",
                  cameras: dict | None = None, visibility=(1, 1),
                  sampling: SamplingConfig = SamplingConfig(), sizes: dict | None = None,
                  keep_samples: bool = False) -> dict:
    """Render the enabled parts.

    ``inference`` renders only the body. ``training`` adds the face and
    hand passes when their visibility flag (M_f, M_h) is set. If ``cameras``
    is omitted they are derived from the pose's global orientation and
    translation, and the body is deformed without them.
    """
    if mode not in ("training", "inference"):
        raise ValueError(f"unknown mode {mode!r}")
    if cameras is None:
        deform_pose = pose.without_global()
        ctx = DeformationContext(scene.model, deform_pose)
        cameras = part_cameras(pose, ctx, sizes)
    else:
        deform_pose = pose
        ctx = DeformationContext(scene.model, deform_pose)
    enabled = ["body"]
    if mode == "training":
        if visibility[0]:
            enabled.append("face")
        if visibility[1]:
            enabled.append("hand")
    outputs = {}
    for part in enabled:
        if part not in cameras:
            raise ValueError(f"part {part!r} requested without a camera")
        outputs[part] = render_part(part, scene, deform_pose, cameras[part], sampling,
                                    keep_samples=keep_samples, context=ctx)
    return outputs
