"""``xavatar`` command line: render, animate, metrics, losses, make-fixtures, inspect.

Exit codes: 0 ok, 2 input error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import formats as fmt
from .annotations import MotionSequence
from .body_model import PoseParams, canonical_sdf
from .config import ConfigError, SceneConfig
from .deformation import DeformationContext
from .fixtures import (
    default_boxes,
    default_decoder,
    default_triplanes,
    front_pose,
    make_body_model,
    motion_frames,
)
from .losses import (
    VisibilityMask,
    aggregate_losses,
    eikonal_loss,
    minimal_surface_loss,
    nonsaturating_gan_terms,
    prior_loss,
)
from .metrics import ATTRIBUTES, attribute_mse, depth_mse, pck
from .renderer import Scene, render_avatar
from .triplane import body_field

log = logging.getLogger("xavatar")

EXIT_OK, EXIT_INPUT, EXIT_RUNTIME = 0, 2, 3


class InputError(Exception):
    pass


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


# --------------------------------------------------------------------------
# scene assembly


def load_config(args) -> SceneConfig:
    cfg = SceneConfig.load(args.config) if getattr(args, "config", None) else SceneConfig()
    over = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "mode", None) is not None:
        over["mode"] = args.mode
    if getattr(args, "out", None) is not None:
        over["out"] = args.out
    cfg = cfg.replace(**over) if over else cfg
    cfg.check_files()
    return cfg


def load_scene(cfg: SceneConfig) -> Scene:
    """Scene from the configured files; missing entries use the seeded fixtures."""
    model = fmt.load_body_model(cfg.body_model) if cfg.body_model else make_body_model(cfg.seed)
    planes = fmt.load_triplanes(cfg.triplanes) if cfg.triplanes else default_triplanes(cfg.seed)
    decoder = fmt.load_decoder(cfg.decoder) if cfg.decoder else default_decoder(cfg.seed)
    boxes = fmt.load_boxes(cfg.boxes) if cfg.boxes else default_boxes(model)
    return Scene(model, planes, decoder=decoder, boxes=boxes)


def config_hash(cfg: SceneConfig) -> str:
    """Hash of the config with every referenced file replaced by its content digest."""
    d = cfg.to_dict()
    d.pop("out")
    for key in ("body_model", "triplanes", "decoder", "boxes"):
        if d[key] is not None:
            d[key] = _sha(Path(d[key]).read_bytes())
    return _sha(json.dumps(d, sort_keys=True, separators=(",", ":")).encode())


def load_pose_doc(path, model) -> tuple[PoseParams, dict]:
    if path is None:
        return front_pose(model), {}
    return fmt.load_pose(path)


def _visibility(extra: dict) -> tuple[int, int]:
    vis = extra.get("visibility", {})
    return int(vis.get("face", 1)), int(vis.get("hands", 1))


def _cameras(extra: dict, cfg: SceneConfig):
    """Explicit per-part cameras from the pose document, if given."""
    if "cameras" not in extra:
        return None
    from .renderer import assemble_camera

    return {part: assemble_camera(part, cfg.sizes[part], ext) for part, ext in extra["cameras"].items()}


# --------------------------------------------------------------------------
# outputs


def write_render_outputs(outputs: dict, out_dir: Path, prefix: str = "") -> dict:
    files = {}
    for part, r in outputs.items():
        blobs = {
            f"{prefix}{part}.png": fmt.encode_png(r.rgb_on_white),
            f"{prefix}{part}_depth.pfm": fmt.encode_pfm(r.depth),
            f"{prefix}{part}_opacity.png": fmt.encode_png(r.opacity),
        }
        for name, data in blobs.items():
            fmt.atomic_write(out_dir / name, data)
            files[name] = _sha(data)
    return files


def render_summary(outputs: dict) -> dict:
    return {part: {"height": r.camera.height, "width": r.camera.width, "focal": r.camera.focal,
                   "route_counts": dict(sorted(r.route_counts.items())),
                   "mean_opacity": float(r.opacity.mean())}
            for part, r in outputs.items()}


def write_manifest(out_dir: Path, manifest: dict) -> str:
    data = fmt.dumps_json(manifest)
    fmt.atomic_write(out_dir / "manifest.json", data)
    return _sha(data)


def write_report(out_dir: Path, name: str, report: dict, rows: list[dict]):
    fmt.save_json(out_dir / f"{name}.json", report)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]) if rows else ["metric", "value"], lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    fmt.atomic_write(out_dir / f"{name}.csv", buf.getvalue().encode())


# --------------------------------------------------------------------------
# subcommands


def cmd_render(args) -> int:
    try:
        cfg = load_config(args)
        scene = load_scene(cfg)
        pose, extra = load_pose_doc(args.pose, scene.model)
        cams = _cameras(extra, cfg)
        chash = config_hash(cfg)
    except (ConfigError, fmt.FormatError, OSError, KeyError, ValueError) as exc:
        raise InputError(str(exc)) from exc
    out_dir = Path(cfg.out)
    outputs = render_avatar(scene, pose, cfg.mode, cams, _visibility(extra), cfg.sampling, cfg.sizes)
    files = write_render_outputs(outputs, out_dir)
    manifest = {
        "tool": "xavatar", "version": __version__, "command": "render",
        "seed": cfg.seed, "mode": cfg.mode, "config_hash": chash,
        "parts": render_summary(outputs), "files": files,
    }
    digest = write_manifest(out_dir, manifest)
    print(json.dumps({"manifest": str(out_dir / "manifest.json"), "manifest_sha256": digest}))
    return EXIT_OK


def apply_override(pose: PoseParams, attribute: str, source: PoseParams) -> PoseParams:
    """Replace exactly one attribute group of ``pose`` by the one in ``source``."""
    groups = {"expression": ("expression",), "shape": ("shape",), "jaw": ("jaw",),
              "body": ("body_pose",), "hand": ("left_hand_pose", "right_hand_pose")}
    if attribute not in groups:
        raise ValueError(f"unknown attribute {attribute!r}")
    return pose.replace(**{k: getattr(source, k) for k in groups[attribute]})


def cmd_animate(args) -> int:
    try:
        cfg = load_config(args)
        scene = load_scene(cfg)
        if args.pose is None:
            seq = MotionSequence.from_frames(motion_frames(scene.model))
        else:
            seq = MotionSequence.from_dict(fmt.load_json(args.pose))
        if len(seq) == 0:
            raise ValueError("motion sequence is empty")
        overrides = []
        for spec in args.override_attribute or []:
            attr, _, path = spec.partition("=")
            if attr not in ATTRIBUTES or not path:
                raise ValueError(f"bad --override-attribute {spec!r}")
            overrides.append((attr, fmt.load_pose(path)[0]))
        chash = config_hash(cfg)
    except (ConfigError, fmt.FormatError, OSError, KeyError, ValueError) as exc:
        raise InputError(str(exc)) from exc
    out_dir = Path(cfg.out)
    frames, files = [], {}
    width = max(4, len(str(len(seq) - 1)))
    for k, (t, pose) in enumerate(seq):
        for attr, src in overrides:
            pose = apply_override(pose, attr, src)
        outputs = render_avatar(scene, pose, cfg.mode, None, (1, 1), cfg.sampling, cfg.sizes)
        files.update(write_render_outputs(outputs, out_dir, prefix=f"frame{k:0{width}d}_"))
        frames.append({"index": k, "t": t, "pose": pose.to_dict(), "parts": render_summary(outputs)})
    manifest = {
        "tool": "xavatar", "version": __version__, "command": "animate",
        "seed": cfg.seed, "mode": cfg.mode, "config_hash": chash,
        "overrides": [a for a, _ in overrides], "frames": frames, "files": files,
    }
    digest = write_manifest(out_dir, manifest)
    print(json.dumps({"manifest": str(out_dir / "manifest.json"), "frames": len(seq), "manifest_sha256": digest}))
    return EXIT_OK


def _load_keypoints(path):
    doc = fmt.load_json(path)
    return np.asarray(doc["keypoints"], dtype=np.float64), doc.get("head_length")


def cmd_metrics(args) -> int:
    from . import plotting

    pairs = {"depth": (args.depth_rendered, args.depth_reference),
             "pck": (args.kp_pred, args.kp_ref),
             "attribute": (args.pose_est, args.pose_target)}
    for name, (a, b) in pairs.items():
        if len(a or []) != len(b or []):
            raise InputError(f"mismatched {name} pair counts: {len(a or [])} vs {len(b or [])}")
    if not any(a for a, _ in pairs.values()):
        raise InputError("no metric inputs given")
    out_dir = Path(args.out or "metrics_out")
    rows, figures = [], []
    try:
        for i, (pa, pb) in enumerate(zip(args.depth_rendered or [], args.depth_reference or [])):
            a, b = fmt.load_pfm(pa), fmt.load_pfm(pb)
            for res in (128, 256):
                rows.append({"metric": f"depth_mse_{res}", "pair": i, "value": depth_mse(a, b, res)})
            figures.append((a, b, i))
        for i, (pa, pb) in enumerate(zip(args.kp_pred or [], args.kp_ref or [])):
            kp_a, _ = _load_keypoints(pa)
            kp_b, head = _load_keypoints(pb)
            head = args.head_length if args.head_length is not None else head
            if head is None:
                raise ValueError("head length missing (reference file or --head-length)")
            rows.append({"metric": "pck", "pair": i, "value": pck(kp_a, kp_b, head, args.threshold)})
        for i, (pa, pb) in enumerate(zip(args.pose_est or [], args.pose_target or [])):
            a, b = fmt.load_pose(pa)[0], fmt.load_pose(pb)[0]
            for attr in ATTRIBUTES:
                rows.append({"metric": f"attribute_mse_{attr}", "pair": i, "value": attribute_mse(a, b, attr)})
    except (fmt.FormatError, OSError, KeyError, ValueError) as exc:
        raise InputError(str(exc)) from exc
    summary = {}
    for r in rows:
        summary.setdefault(r["metric"], []).append(r["value"])
    summary = {k: float(np.mean(v)) for k, v in summary.items()}
    report = {"tool": "xavatar", "version": __version__,
              "config": {"threshold_ratio": args.threshold, "head_length": args.head_length,
                         "depth_resolutions": [128, 256]},
              "metrics": [{"metric": k, "value": v, "config": {"pairs": sum(r["metric"] == k for r in rows)}}
                          for k, v in summary.items()],
              "per_pair": rows}
    write_report(out_dir, "metrics", report, rows)
    plotting.metric_bars(summary, out_dir / "metrics.png")
    for a, b, i in figures:
        plotting.depth_comparison(a, b, out_dir / f"depth_pair{i}.png", title=f"depth pair {i}")
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_losses(args) -> int:
    from . import plotting

    try:
        cfg = load_config(args)
        scene = load_scene(cfg)
        pose, extra = load_pose_doc(args.pose, scene.model)
    except (ConfigError, fmt.FormatError, OSError, KeyError, ValueError) as exc:
        raise InputError(str(exc)) from exc
    out_dir = Path(cfg.out)
    outputs = render_avatar(scene, pose, "inference", None, (0, 0), cfg.sampling, cfg.sizes, keep_samples=True)
    buf = outputs["body"].sample_buffers

    def field(x):
        return body_field(x, canonical_sdf(scene.model, x), scene.planes, scene.boxes, scene.decoder)[1]

    rng = np.random.default_rng(cfg.seed)
    pts = buf["canonical_point"]
    eik_pts = pts[rng.choice(len(pts), size=min(len(pts), args.eikonal_points), replace=False)] if len(pts) else pts
    reg = {
        "minsurf": minimal_surface_loss(buf["sdf"], "mean"),
        "eikonal": eikonal_loss(field, eik_pts, reduction="mean") if len(eik_pts) else 0.0,
        "prior": prior_loss(buf["sdf"], buf["base_sdf"], cfg.kappa),
    }
    # no discriminator here: scores of 0 stand for an undecided critic
    gan = {p: nonsaturating_gan_terms([0.0], [0.0]) for p in ("body", "face", "hand")}
    mask = VisibilityMask(*_visibility(extra))
    agg = aggregate_losses(gan, reg, cfg.loss_weights, mask)
    terms = {"body_gan": gan["body"]["generator_loss"], "face_gan": gan["face"]["generator_loss"],
             "hand_gan": gan["hand"]["generator_loss"], **reg}
    coef = {"body_gan": 1.0, "face_gan": agg["coefficients"]["face"], "hand_gan": agg["coefficients"]["hand"],
            **{k: agg["coefficients"][k] for k in reg}}
    rows = [{"term": k, "value": v, "coefficient": coef[k], "weighted": v * coef[k]} for k, v in terms.items()]
    rows.append({"term": "L_G", "value": agg["L_G"], "coefficient": 1.0, "weighted": agg["L_G"]})
    report = {"tool": "xavatar", "version": __version__, "config_hash": config_hash(cfg),
              "samples": int(len(buf["sdf"])), "eikonal_points": int(len(eik_pts)),
              "terms": terms, "coefficients": coef, "L_G": agg["L_G"], "L_D": agg["L_D"],
              "gan_scores": "zero (no discriminator)"}
    write_report(out_dir, "losses", report, rows)
    plotting.loss_terms(terms, coef, out_dir / "losses.png")
    plotting.sdf_histograms({"sdf": buf["sdf"], "base_sdf": buf["base_sdf"],
                             "sdf - base_sdf": buf["sdf"] - buf["base_sdf"]}, out_dir / "sdf_hist.png")
    print(json.dumps({"L_G": agg["L_G"], **reg}, sort_keys=True))
    return EXIT_OK


def cmd_make_fixtures(args) -> int:
    out_dir = Path(args.out or "fixtures")
    seed = 0 if args.seed is None else args.seed
    model = make_body_model(seed)
    written = {
        "body_model.json": fmt.dumps_json(fmt.body_model_to_dict(model)),
        "triplanes.tpz": fmt.encode_triplanes(default_triplanes(seed)),
        "decoder.xdw": fmt.encode_decoder(default_decoder(seed)),
        "boxes.json": fmt.dumps_json(default_boxes(model).to_dict()),
        "pose.json": fmt.dumps_json({"pose": front_pose(model).to_dict(), "visibility": {"face": 1, "hands": 1}}),
        "motion.json": fmt.dumps_json(MotionSequence.from_frames(motion_frames(model)).to_dict()),
        "config.json": fmt.dumps_json(SceneConfig(body_model="body_model.json", triplanes="triplanes.tpz",
                                                  decoder="decoder.xdw", boxes="boxes.json",
                                                  seed=seed).to_dict() | {"out": "out"}),
    }
    try:
        for name, data in written.items():
            fmt.atomic_write(out_dir / name, data)
    except OSError as exc:
        raise InputError(f"cannot write fixtures: {exc}") from exc
    print(json.dumps({name: _sha(data) for name, data in written.items()}, indent=1))
    return EXIT_OK


def inspect_file(path: Path) -> dict:
    data = path.read_bytes()
    info = {"path": str(path), "bytes": len(data), "sha256": _sha(data)}

    def stats(a):
        a = np.asarray(a, dtype=np.float64)
        return {"shape": list(a.shape), "min": float(a.min()), "max": float(a.max()), "mean": float(a.mean())}

    if data[:4] == fmt.TPZ_MAGIC:
        planes = fmt.decode_triplanes(data)
        info.update(kind="triplanes", packed=data[6:7] == b"p", channels=planes.channels,
                    parts={p: stats(getattr(planes, p)) for p in ("body", "face", "hand")})
    elif data[:4] == fmt.XDW_MAGIC:
        dec = fmt.decode_decoder(data)
        info.update(kind="decoder", alpha=dec.alpha, layers={n: stats(getattr(dec, n)) for n in dec.TENSORS})
    elif data[:3] == b"Pf\n":
        info.update(kind="pfm", **stats(fmt.decode_pfm(data)))
    elif data[:8] == b"\x89PNG\r\n\x1a\n":
        info.update(kind="png", **stats(fmt.decode_png(data)))
    else:
        doc = json.loads(data)
        if doc.get("format") == "xavatar-body-model":
            m = fmt.body_model_from_dict(doc)
            info.update(kind="body_model", vertices=m.n_vertices, joints=m.n_joints,
                        capsules=len(m.capsules), n_shape=m.n_shape, n_expr=m.n_expr)
        else:
            info.update(kind="json", keys=sorted(doc) if isinstance(doc, dict) else None)
    return info


def cmd_inspect(args) -> int:
    try:
        infos = [inspect_file(Path(p)) for p in args.files]
    except (fmt.FormatError, OSError, ValueError, KeyError) as exc:
        raise InputError(str(exc)) from exc
    print(json.dumps(infos if len(infos) > 1 else infos[0], indent=1))
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xavatar", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def scene_flags(sp):
        sp.add_argument("--config", help="flat JSON scene config")
        sp.add_argument("--pose", help="pose (render/losses) or motion (animate) JSON")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")

    sp = sub.add_parser("render", help="render one pose")
    scene_flags(sp)
    sp.add_argument("--mode", choices=("training", "inference"))
    sp.set_defaults(func=cmd_render)

    sp = sub.add_parser("animate", help="render every frame of a motion sequence")
    scene_flags(sp)
    sp.add_argument("--mode", choices=("training", "inference"))
    sp.add_argument("--override-attribute", action="append", metavar="ATTR=FILE",
                    help="replace one attribute group (expression|shape|jaw|body|hand) in every frame")
    sp.set_defaults(func=cmd_animate)

    sp = sub.add_parser("metrics", help="depth MSE, PCK and attribute MSE over artifact pairs")
    sp.add_argument("--depth-rendered", nargs="+")
    sp.add_argument("--depth-reference", nargs="+")
    sp.add_argument("--kp-pred", nargs="+")
    sp.add_argument("--kp-ref", nargs="+")
    sp.add_argument("--pose-est", nargs="+")
    sp.add_argument("--pose-target", nargs="+")
    sp.add_argument("--head-length", type=float)
    sp.add_argument("--threshold", type=float, default=0.1)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_metrics)

    sp = sub.add_parser("losses", help="evaluate the regularizers on the scene field")
    scene_flags(sp)
    sp.add_argument("--eikonal-points", type=int, default=2048)
    sp.set_defaults(func=cmd_losses)

    sp = sub.add_parser("make-fixtures", help="write the seeded desk-scale scene")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_make_fixtures)

    sp = sub.add_parser("inspect", help="dump headers and statistics of artifact files")
    sp.add_argument("files", nargs="+")
    sp.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        log.error("input error: %s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        log.exception("runtime error")
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
