"""Compositional articulated-avatar volume renderer: part tri-planes, inverse
skinning, SDF volume rendering, regularizers and evaluation metrics."""

__version__ = "0.1.0"

from .body_model import BodyModel, PoseParams, forward_kinematics, pose_vertices, canonical_sdf  # noqa: E402
from .deformation import DeformationContext, UniformGrid  # noqa: E402
from .renderer import Camera, Scene, SamplingConfig, assemble_camera, render_avatar, render_part  # noqa: E402
from .triplane import BoundingBoxSet, Box, DecoderWeights, TriPlaneSet  # noqa: E402

__all__ = [
    "BodyModel", "PoseParams", "forward_kinematics", "pose_vertices", "canonical_sdf",
    "DeformationContext", "UniformGrid",
    "Camera", "Scene", "SamplingConfig", "assemble_camera", "render_avatar", "render_part",
    "BoundingBoxSet", "Box", "DecoderWeights", "TriPlaneSet",
]
