"""Configuration record for the latent upsampling network."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace

ATTENTION_MODES = ("full", "swin", "sparse")


@dataclass(frozen=True)
class GvrConfig:
    latent_channels: int = 768
    width: int = 64
    heads: int = 4
    depth: int = 4
    mlp_ratio: int = 4
    attention: str = "full"
    window: tuple[int, int] = (4, 3)
    top_k: int = 1
    gating: str = "window"
    temporal_unit: int = 5
    temporal_shift: int | None = None  # None -> unit // 2; 0 disables shifting
    spatial_shift: bool = True
    upsample: int = 2
    cond_kernel_t: int = 3
    text_dim: int = 8
    latent_skip: bool = True
    head: str = "velocity"  # "velocity" or "residual" (over a decoded bilinear prior)
    prior_std: float = 0.02
    aug_interval: tuple[float, float] = (0.3, 0.6)
    aug_infer: float = 0.45
    null_text_prob: float = 0.1
    sampler: str = "uniform"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "window", tuple(int(v) for v in self.window))
        object.__setattr__(self, "aug_interval", tuple(float(v) for v in self.aug_interval))
        if self.depth < 2 or self.depth % 2:
            raise ValueError(f"depth must be even and >= 2 (layer pairs share a shift), got {self.depth}")
        if self.width % self.heads or self.width % 2:
            raise ValueError(f"width {self.width} must be even and divisible by heads {self.heads}")
        if self.attention not in ATTENTION_MODES:
            raise ValueError(f"attention must be one of {ATTENTION_MODES}, got {self.attention!r}")
        if self.cond_kernel_t < 1 or self.cond_kernel_t % 2 == 0:
            raise ValueError("cond_kernel_t must be a positive odd number")
        if self.temporal_unit < 1 or self.upsample < 1:
            raise ValueError("temporal_unit and upsample must be >= 1")
        if self.sampler not in ("uniform", "detail-aware"):
            raise ValueError(f"unknown sampler {self.sampler!r}")
        if self.head not in ("velocity", "residual"):
            raise ValueError(f"head must be 'velocity' or 'residual', got {self.head!r}")
        if self.head == "residual" and not self.prior_std > 0:
            raise ValueError("prior_std must be positive")
        lo, hi = self.aug_interval
        if not 0 <= lo <= hi <= 1:
            raise ValueError("aug_interval must satisfy 0 <= lo <= hi <= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["window"] = list(self.window)
        d["aug_interval"] = list(self.aug_interval)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GvrConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def digest(self) -> bytes:
        return hashlib.sha256(self.to_json().encode()).digest()

    def with_(self, **changes) -> "GvrConfig":
        return replace(self, **changes)
