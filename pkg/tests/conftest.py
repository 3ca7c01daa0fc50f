import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from xavatar.fixtures import default_boxes, default_decoder, default_triplanes, make_body_model  # noqa: E402
from xavatar.renderer import Scene  # noqa: E402

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def model():
    return make_body_model(0)


@pytest.fixture(scope="session")
def boxes(model):
    return default_boxes(model)


@pytest.fixture(scope="session")
def planes():
    return default_triplanes(0)


@pytest.fixture(scope="session")
def scene(model, boxes, planes):
    return Scene(model, planes, boxes, default_decoder(0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_pose(model, rng, scale=0.4, shape_scale=0.5):
    from xavatar.body_model import PoseParams

    n_body, n_hand = model.pose_layout
    base = model.canonical_pose()
    return PoseParams(
        shape=rng.normal(0, shape_scale, model.n_shape),
        expression=rng.normal(0, shape_scale, model.n_expr),
        jaw=base.jaw + rng.normal(0, scale, 3),
        body_pose=base.body_pose + rng.normal(0, scale, (n_body, 3)),
        left_hand_pose=base.left_hand_pose + rng.normal(0, scale, (n_hand, 3)),
        right_hand_pose=base.right_hand_pose + rng.normal(0, scale, (n_hand, 3)),
        global_orient=rng.normal(0, scale, 3),
        global_transl=rng.normal(0, 0.2, 3),
    )


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS, key=lambda s: int(s.split()[2].rstrip(":"))):
        terminalreporter.write_line(line)
