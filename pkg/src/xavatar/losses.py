"""Training objective terms: SDF regularizers, non-saturating adversarial
scalars, visibility-masked aggregation and discriminator conditions."""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from .body_model import PoseParams

MINSURF_SCALE = 100.0
EIKONAL_STEP = 1e-3


@dataclass(frozen=True)
class LossWeights:
    lambda_f: float = 0.25
    lambda_h: float = 0.75
    lambda_minsurf: float = 5e-3
    lambda_eik: float = 1e-3
    lambda_prior: float = 1.0
    kappa: float = 0.01
    r1_gamma: float = 10.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"{k} must be a non-negative number")
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")


@dataclass(frozen=True)
class VisibilityMask:
    face_visible: int = 1
    hands_visible: int = 1

    def __post_init__(self):
        if self.face_visible not in (0, 1) or self.hands_visible not in (0, 1):
            raise ValueError("visibility flags must be 0 or 1")


@dataclass(frozen=True)
class DiscriminatorCondition:
    part: str
    condition_vector: np.ndarray


def _reduce(values: np.ndarray, reduction: str):
    if reduction == "sum":
        return math.fsum(values.ravel())
    if reduction == "mean":
        return math.fsum(values.ravel()) / max(values.size, 1)
    if reduction == "none":
        return values
    raise ValueError(f"unknown reduction {reduction!r}")


def minimal_surface_loss(sdf, reduction: str = "sum"):
    """Sum of exp(-100 |d|): penalizes zero crossings away from the surface."""
    d = np.asarray(sdf, dtype=np.float64)
    if not np.all(np.isfinite(d)):
        raise ValueError("sdf samples must be finite")
    return _reduce(np.exp(-MINSURF_SCALE * np.abs(d)), reduction)


def finite_difference_gradient(field, points, h: float = EIKONAL_STEP) -> np.ndarray:
    """Central differences of a vectorized scalar field, O(h^2) accurate."""
    if not h > 0:
        raise ValueError("step must be positive")
    p = np.atleast_2d(np.asarray(points, dtype=np.float64))
    grad = np.empty_like(p)
    for axis in range(3):
        e = np.zeros(3)
        e[axis] = h
        grad[:, axis] = (np.asarray(field(p + e)) - np.asarray(field(p - e))) / (2.0 * h)
    return grad


def eikonal_loss(field, points, h: float = EIKONAL_STEP, reduction: str = "sum"):
    """Squared deviation of the finite-difference gradient norm from 1."""
    g = finite_difference_gradient(field, points, h)
    return _reduce((np.linalg.norm(g, axis=1) - 1.0) ** 2, reduction)


def prior_weight(base_sdf, kappa: float = 0.01) -> np.ndarray:
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    d_c = np.asarray(base_sdf, dtype=np.float64)
    return np.exp(-(d_c * d_c) / kappa)


def prior_loss(sdf, base_sdf, kappa: float = 0.01, reduction: str = "mean"):
    """Surface-weighted |d - d_c|; the weight is 1 exactly on the base surface."""
    d = np.asarray(sdf, dtype=np.float64)
    d_c = np.asarray(base_sdf, dtype=np.float64)
    if d.shape != d_c.shape:
        raise ValueError("sdf and base_sdf lengths differ")
    return _reduce(prior_weight(d_c, kappa) * np.abs(d - d_c), reduction)


def softplus(x) -> np.ndarray:
    return np.logaddexp(0.0, np.asarray(x, dtype=np.float64))


def nonsaturating_gan_terms(scores_real, scores_fake) -> dict:
    real = np.asarray(scores_real, dtype=np.float64)
    fake = np.asarray(scores_fake, dtype=np.float64)
    if not (np.all(np.isfinite(real)) and np.all(np.isfinite(fake))):
        raise ValueError("scores must be finite")
    gen = float(np.mean(softplus(-fake)))
    disc = float(np.mean(softplus(-real)) + np.mean(softplus(fake)))
    return {"generator_loss": gen, "discriminator_loss": disc}


def loss_coefficients(weights: LossWeights, mask: VisibilityMask) -> dict:
    return {
        "body": 1.0,
        "face": weights.lambda_f * mask.face_visible,
        "hand": weights.lambda_h * mask.hands_visible,
        "minsurf": weights.lambda_minsurf,
        "eikonal": weights.lambda_eik,
        "prior": weights.lambda_prior,
    }


def aggregate_losses(gan_terms: dict, regularizers: dict, weights: LossWeights = LossWeights(),
                     mask: VisibilityMask = VisibilityMask(), r1: dict | None = None) -> dict:
    """Visibility-masked weighted sums.

    ``gan_terms`` maps part -> {"generator_loss", "discriminator_loss"};
    ``regularizers`` holds "minsurf", "eikonal", "prior". ``r1`` optionally
    maps part -> an already-computed (gamma-scaled) R1 penalty added to that
    part's discriminator term. A masked-off part is skipped even if present.
    """
    coef = loss_coefficients(weights, mask)
    r1 = r1 or {}
    gen_terms, disc_terms = [], []
    for part in ("body", "face", "hand"):
        if coef[part] == 0.0 and part != "body":
            continue
        if part not in gan_terms:
            raise ValueError(f"missing adversarial term for visible part {part!r}")
        t = gan_terms[part]
        gen_terms.append(coef[part] * t["generator_loss"])
        disc_terms.append(coef[part] * (t["discriminator_loss"] + r1.get(part, 0.0)))
    for key in ("minsurf", "eikonal", "prior"):
        if key not in regularizers:
            raise ValueError(f"missing regularizer {key!r}")
        gen_terms.append(coef[key] * regularizers[key])
    return {"L_G": math.fsum(gen_terms), "L_D": math.fsum(disc_terms), "coefficients": coef}


def build_condition(part: str, pose: PoseParams, hands: str = "both") -> DiscriminatorCondition:
    """Conditioning vector: face -> [expression, shape]; hand -> hand axis-angles; body -> empty."""
    if part == "body":
        vec = np.zeros(0)
    elif part == "face":
        vec = np.concatenate([pose.expression, pose.shape])
    elif part == "hand":
        chosen = {"both": (pose.left_hand_pose, pose.right_hand_pose),
                  "left": (pose.left_hand_pose,), "right": (pose.right_hand_pose,)}
        if hands not in chosen:
            raise ValueError(f"unknown hand selection {hands!r}")
        vec = np.concatenate([h.ravel() for h in chosen[hands]])
    else:
        raise ValueError(f"unknown part {part!r}")
    return DiscriminatorCondition(part, vec.astype(np.float64))
