"""Flat JSON scene configuration with strict keys.

Defaults follow the reported training setup: 40 coarse + 20 fine samples per
ray, raw rasters 224x112 (body) and 28x28 (face, hand), and loss weights
lambda_f=0.25, lambda_h=0.75, minsurf 5e-3, eikonal 1e-3, prior 1.0.
``kappa`` (prior temperature) is not reported and defaults to 0.01 m^2.
A null model/plane/decoder/box path means "use the seeded fixture".
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .losses import LossWeights
from .renderer import SamplingConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SceneConfig:
    body_model: str | None = None
    triplanes: str | None = None
    decoder: str | None = None
    boxes: str | None = None
    coarse_count: int = 40
    fine_count: int = 20
    seed: int = 0
    jitter: bool = True
    sphere_padding: float = 0.10
    chunk: int = 4096
    workers: int = 1
    mode: str = "inference"
    body_size: tuple = (224, 112)
    face_size: tuple = (28, 28)
    hand_size: tuple = (28, 28)
    camera_distance: float = 10.0
    lambda_f: float = 0.25
    lambda_h: float = 0.75
    lambda_minsurf: float = 5e-3
    lambda_eik: float = 1e-3
    lambda_prior: float = 1.0
    kappa: float = 0.01
    r1_gamma: float = 10.0
    crop_scale: float = 1.6
    out: str = "out"

    def __post_init__(self):
        for key in ("body_size", "face_size", "hand_size"):
            size = tuple(int(x) for x in getattr(self, key))
            if len(size) != 2 or min(size) < 1:
                raise ConfigError(f"{key} must be two positive integers")
            object.__setattr__(self, key, size)
        if self.coarse_count < 2:
            raise ConfigError("coarse_count must be >= 2")
        if self.fine_count < 0:
            raise ConfigError("fine_count must be >= 0")
        if self.mode not in ("training", "inference"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.workers < 1 or self.chunk < 1:
            raise ConfigError("workers and chunk must be positive")
        try:
            self.loss_weights
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_dict(cls, d: dict, base_dir: Path | None = None) -> "SceneConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        cfg = cls(**d)
        if base_dir is not None:
            paths = {}
            for key in ("body_model", "triplanes", "decoder", "boxes"):
                p = getattr(cfg, key)
                if p is not None and not Path(p).is_absolute():
                    paths[key] = str(Path(base_dir) / p)
            cfg = cfg.replace(**paths)
        return cfg

    @classmethod
    def load(cls, path) -> "SceneConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(doc, path.parent)

    def check_files(self):
        for key in ("body_model", "triplanes", "decoder", "boxes"):
            p = getattr(self, key)
            if p is not None and not Path(p).is_file():
                raise ConfigError(f"{key} file not found: {p}")

    def replace(self, **kw) -> "SceneConfig":
        return SceneConfig(**{**asdict(self), **kw})

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("body_size", "face_size", "hand_size"):
            d[key] = list(d[key])
        return d

    def hash(self) -> str:
        """SHA-256 of the canonical JSON, excluding the output directory."""
        d = self.to_dict()
        d.pop("out")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()

    @property
    def sampling(self) -> SamplingConfig:
        return SamplingConfig(coarse=self.coarse_count, fine=self.fine_count, seed=self.seed,
                              jitter=self.jitter, sphere_padding=self.sphere_padding,
                              chunk=self.chunk, workers=self.workers)

    @property
    def sizes(self) -> dict:
        return {"body": self.body_size, "face": self.face_size, "hand": self.hand_size}

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_f, self.lambda_h, self.lambda_minsurf, self.lambda_eik,
                           self.lambda_prior, self.kappa, self.r1_gamma)
