import json

import numpy as np
import pytest

from xavatar import formats as fmt
from xavatar.annotations import MotionSequence
from xavatar.body_model import PoseParams
from xavatar.cli import apply_override, main
from xavatar.fixtures import front_pose, make_body_model, motion_frames

SMALL = {"body_size": [24, 12], "face_size": [8, 8], "hand_size": [8, 8],
         "coarse_count": 8, "fine_count": 4}


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(SMALL))
    return path


def names(d):
    return sorted(p.name for p in d.iterdir())


def test_make_fixtures_deterministic(tmp_path, capsys):
    assert main(["make-fixtures", "--out", str(tmp_path / "a"), "--seed", "3"]) == 0
    assert main(["make-fixtures", "--out", str(tmp_path / "b"), "--seed", "3"]) == 0
    assert names(tmp_path / "a") == ["body_model.json", "boxes.json", "config.json", "decoder.xdw",
                                     "motion.json", "pose.json", "triplanes.tpz"]
    for f in names(tmp_path / "a"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f
    planes = fmt.load_triplanes(tmp_path / "a" / "triplanes.tpz")
    assert planes.body.shape == (3, 32, 64, 64) and planes.face.shape == (3, 32, 32, 32)
    fmt.load_body_model(tmp_path / "a" / "body_model.json").validate()


def test_render_inference_outputs(tmp_path, small_config, capsys):
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert main(["render", "--config", str(small_config), "--out", str(out1)]) == 0
    assert main(["render", "--config", str(small_config), "--out", str(out2)]) == 0
    assert names(out1) == ["body.png", "body_depth.pfm", "body_opacity.png", "manifest.json"]
    for f in names(out1):
        assert (out1 / f).read_bytes() == (out2 / f).read_bytes(), f
    man = json.loads((out1 / "manifest.json").read_text())
    assert man["mode"] == "inference" and list(man["parts"]) == ["body"]
    assert man["parts"]["body"]["route_counts"]["face"] > 0
    assert fmt.load_pfm(out1 / "body_depth.pfm").shape == (24, 12)


def test_render_training_hands_hidden(tmp_path, small_config, capsys):
    model = make_body_model(0)
    fmt.save_pose(tmp_path / "pose.json", front_pose(model), {"visibility": {"face": 1, "hands": 0}})
    out = tmp_path / "t"
    assert main(["render", "--config", str(small_config), "--mode", "training",
                 "--pose", str(tmp_path / "pose.json"), "--out", str(out)]) == 0
    assert names(out) == ["body.png", "body_depth.pfm", "body_opacity.png",
                          "face.png", "face_depth.pfm", "face_opacity.png", "manifest.json"]


def test_render_input_errors(tmp_path, small_config, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"colour": 1}')
    assert main(["render", "--config", str(bad), "--out", str(tmp_path / "x")]) == 2
    assert main(["render", "--config", str(small_config), "--pose", str(tmp_path / "nope.json"),
                 "--out", str(tmp_path / "x")]) == 2
    missing = tmp_path / "missing.json"
    missing.write_text(json.dumps({**SMALL, "triplanes": "absent.tpz"}))
    assert main(["render", "--config", str(missing)]) == 2
    assert main(["render", "--mode", "sideways"]) == 2
    assert not (tmp_path / "x").exists()


def test_animate_single_frame_matches_render(tmp_path, small_config, capsys):
    model = make_body_model(0)
    pose = front_pose(model)
    fmt.save_json(tmp_path / "seq.json", MotionSequence((0.0,), (pose,)).to_dict())
    fmt.save_pose(tmp_path / "pose.json", pose)
    assert main(["animate", "--config", str(small_config), "--pose", str(tmp_path / "seq.json"),
                 "--out", str(tmp_path / "a")]) == 0
    assert main(["render", "--config", str(small_config), "--pose", str(tmp_path / "pose.json"),
                 "--out", str(tmp_path / "r")]) == 0
    assert (tmp_path / "a" / "frame0000_body_depth.pfm").read_bytes() == \
        (tmp_path / "r" / "body_depth.pfm").read_bytes()


def test_animate_override_jaw(tmp_path, small_config, capsys):
    model = make_body_model(0)
    seq = MotionSequence.from_frames(motion_frames(model, 10))
    fmt.save_json(tmp_path / "seq.json", seq.to_dict())
    src = PoseParams.zeros().replace(jaw=np.array([0.3, 0.0, 0.0]), expression=np.ones(10))
    fmt.save_pose(tmp_path / "jaw.json", src)
    assert main(["animate", "--config", str(small_config), "--pose", str(tmp_path / "seq.json"),
                 "--override-attribute", f"jaw={tmp_path / 'jaw.json'}", "--out", str(tmp_path / "a")]) == 0
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert len(man["frames"]) == 10 and man["overrides"] == ["jaw"]
    for frame, (_, orig) in zip(man["frames"], seq):
        got = PoseParams.from_dict(frame["pose"])
        assert np.array_equal(got.jaw, src.jaw)
        assert got.replace(jaw=orig.jaw) == orig
    assert len([n for n in names(tmp_path / "a") if n.endswith(".pfm")]) == 10
    assert main(["animate", "--config", str(small_config), "--pose", str(tmp_path / "seq.json"),
                 "--override-attribute", "tail=x.json"]) == 2


def test_apply_override_only_touches_group(model, rng):
    from conftest import random_pose

    a, b = random_pose(model, rng), random_pose(model, rng)
    out = apply_override(a, "hand", b)
    assert np.array_equal(out.left_hand_pose, b.left_hand_pose)
    assert out.replace(left_hand_pose=a.left_hand_pose, right_hand_pose=a.right_hand_pose) == a


def test_metrics_identical_pairs(tmp_path, capsys):
    rng = np.random.default_rng(0)
    depth = rng.uniform(1, 3, (20, 10)).astype(np.float32)
    fmt.save_pfm(tmp_path / "d.pfm", depth)
    kp = rng.uniform(0, 100, (22, 2))
    fmt.save_json(tmp_path / "kp.json", {"keypoints": kp.tolist(), "head_length": 20.0})
    fmt.save_pose(tmp_path / "p.json", PoseParams.zeros())
    out = tmp_path / "m"
    assert main(["metrics", "--depth-rendered", str(tmp_path / "d.pfm"), "--depth-reference", str(tmp_path / "d.pfm"),
                 "--kp-pred", str(tmp_path / "kp.json"), "--kp-ref", str(tmp_path / "kp.json"),
                 "--pose-est", str(tmp_path / "p.json"), "--pose-target", str(tmp_path / "p.json"),
                 "--out", str(out)]) == 0
    assert names(out) == ["depth_pair0.png", "metrics.csv", "metrics.json", "metrics.png"]
    rep = json.loads((out / "metrics.json").read_text())
    vals = {m["metric"]: m["value"] for m in rep["metrics"]}
    assert vals["depth_mse_128"] == 0 and vals["pck"] == 100.0
    assert all(v == 0 for k, v in vals.items() if k.startswith("attribute"))
    assert rep["version"] and rep["config"]["threshold_ratio"] == 0.1
    assert (out / "metrics.csv").read_text().splitlines()[0] == "metric,pair,value"


def test_metrics_mismatched_counts(tmp_path, capsys):
    fmt.save_pfm(tmp_path / "d.pfm", np.ones((2, 2)))
    assert main(["metrics", "--depth-rendered", str(tmp_path / "d.pfm"), str(tmp_path / "d.pfm"),
                 "--depth-reference", str(tmp_path / "d.pfm"), "--out", str(tmp_path / "m")]) == 2
    assert main(["metrics"]) == 2


def test_losses_report(tmp_path, small_config, capsys):
    out = tmp_path / "l"
    assert main(["losses", "--config", str(small_config), "--eikonal-points", "64", "--out", str(out)]) == 0
    assert names(out) == ["losses.csv", "losses.json", "losses.png", "sdf_hist.png"]
    rep = json.loads((out / "losses.json").read_text())
    assert rep["samples"] > 0 and np.isfinite(rep["L_G"])
    assert set(rep["terms"]) >= {"minsurf", "eikonal", "prior"}


def test_inspect(tmp_path, capsys):
    main(["make-fixtures", "--out", str(tmp_path)])
    capsys.readouterr()
    assert main(["inspect", str(tmp_path / "triplanes.tpz"), str(tmp_path / "decoder.xdw"),
                 str(tmp_path / "body_model.json")]) == 0
    infos = json.loads(capsys.readouterr().out)
    assert [i["kind"] for i in infos] == ["triplanes", "decoder", "body_model"]
    assert infos[2]["vertices"] == 1340
    (tmp_path / "junk.tpz").write_bytes(b"XATP\x09\x00")
    assert main(["inspect", str(tmp_path / "junk.tpz")]) == 2
