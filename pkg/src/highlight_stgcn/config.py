"""Training configuration and its provenance digest."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field

from .graph import default_half_window

DEFAULT_MODALITIES = ("pose3d", "face2d")


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 2
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4
    lr_decay: float = 0.999          # per epoch, multiplicative
    reg_lambda: dict = field(default_factory=lambda: {"pose3d": 1e-5, "face2d": 1e-5})
    seed: int = 0
    f: float = 5.0                   # processing frame rate
    segment_seconds: float = 30.0
    P: int = 20
    latent_dim: int = 8
    hidden: tuple = (16, 16)
    w_h: int | None = None           # None -> floor(30 f / 2)
    modalities: tuple = DEFAULT_MODALITIES
    val_fraction: float = 0.2
    # probe switches; the objective as written uses 1.0 / 1.0 / True / True
    recon_weight: float = 1.0
    score_weight: float = 1.0
    reg_enabled: bool = True
    adam_weight_decay_enabled: bool = True

    def __post_init__(self):
        self.hidden = tuple(self.hidden)
        self.modalities = tuple(self.modalities)
        if self.epochs < 1 or self.batch_size < 1 or self.P < 1 or self.latent_dim < 1:
            raise ValueError("epochs, batch_size, P and latent_dim must be positive")
        if self.lr <= 0 or self.f <= 0 or self.segment_seconds <= 0:
            raise ValueError("lr, f and segment_seconds must be positive")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must lie in (0, 1]")
        if not self.modalities:
            raise ValueError("at least one modality must be enabled")

    @property
    def T(self) -> int:
        """Frames per segment at the processing rate."""
        return math.ceil(self.segment_seconds * self.f)

    @property
    def half_window(self) -> int:
        return default_half_window(self.f) if self.w_h is None else self.w_h

    def lr_at_epoch(self, epoch: int) -> float:
        return self.lr * self.lr_decay ** epoch

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        d["modalities"] = list(self.modalities)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]
