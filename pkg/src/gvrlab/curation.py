"""Clip screening by brightness, spatial detail and an optional external scorer."""

from __future__ import annotations

import shlex
import subprocess
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.signal import correlate2d

from .media import Clip, emit_report, read_clip

LUMA = np.array([0.299, 0.587, 0.114])
LAPLACIAN = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])


@dataclass(frozen=True)
class CurationConfig:
    """Filter thresholds; brightness is on [0, 1], detail on the 0-255 luma scale."""

    frames: int = 10
    brightness_min: float = 0.08
    brightness_max: float = 0.92
    laplacian_min: float = 30.0
    musiq_min: float = 40.0
    musiq_command: str | None = None  # called as ``<command> <clip path>``, prints a float
    workers: int = 1

    def __post_init__(self):
        if not 0 <= self.brightness_min <= self.brightness_max <= 1:
            raise ValueError("need 0 <= brightness_min <= brightness_max <= 1")
        if self.frames < 1 or self.workers < 1:
            raise ValueError("frames and workers must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "CurationConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown curation keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class CurationVerdict:
    clip_id: str
    brightness: float
    laplacian_variance: float
    musiq: float | None
    accepted: bool
    reason: str  # "" when accepted

    def row(self) -> dict:
        return {
            "clip_id": self.clip_id,
            "brightness": self.brightness,
            "laplacian_variance": self.laplacian_variance,
            "musiq": "" if self.musiq is None else self.musiq,
            "accepted": self.accepted,
            "reason": self.reason,
        }


def sample_indices(num_frames: int, count: int = 10) -> np.ndarray:
    """``count`` evenly spaced frame indices, or every frame for short clips."""
    if num_frames <= count:
        return np.arange(num_frames)
    return np.round(np.linspace(0, num_frames - 1, count)).astype(int)


def luma(frames: np.ndarray) -> np.ndarray:
    return np.asarray(frames, np.float64) @ LUMA


def laplacian_variance(gray255: np.ndarray) -> float:
    """Variance of the 3x3 Laplacian over the valid interior of one luma frame."""
    resp = correlate2d(np.asarray(gray255, np.float64), LAPLACIAN, mode="valid")
    return float(resp.var()) if resp.size else 0.0


def musiq_score(command: str | None, path) -> float | None:
    """Run the external scorer on ``path``; ``None`` when none is configured."""
    if not command or path is None:
        return None
    out = subprocess.run(shlex.split(command) + [str(path)], capture_output=True, text=True, check=True)
    return float(out.stdout.strip().split()[-1])


def curate(clip: Clip, config: CurationConfig | None = None, clip_id: str = "", path=None) -> CurationVerdict:
    config = config or CurationConfig()
    frames = clip.frames[sample_indices(clip.num_frames, config.frames)]
    y = luma(frames)
    brightness = float(y.mean())
    lap = float(np.mean([laplacian_variance(f * 255.0) for f in y]))
    musiq = musiq_score(config.musiq_command, path)
    reason = ""
    if not config.brightness_min <= brightness <= config.brightness_max:
        reason = "brightness"
    elif lap < config.laplacian_min:
        reason = "laplacian"
    elif musiq is not None and musiq < config.musiq_min:
        reason = "musiq"
    return CurationVerdict(clip_id, brightness, lap, musiq, not reason, reason)


def curate_path(path, config: CurationConfig | None = None) -> CurationVerdict:
    """Verdict for a clip on disk; read failures give a rejected verdict."""
    path = Path(path)
    try:
        clip = read_clip(path)
    except Exception as exc:  # unreadable input is a verdict, not a crash
        return CurationVerdict(path.name, float("nan"), float("nan"), None, False, f"error: {exc}")
    try:
        return curate(clip, config, path.name, path)
    except (subprocess.SubprocessError, OSError, ValueError) as exc:
        return CurationVerdict(path.name, float("nan"), float("nan"), None, False, f"error: {exc}")


def curate_batch(paths: Sequence, config: CurationConfig | None = None, workers: int | None = None) -> list[CurationVerdict]:
    """Verdicts sorted by clip id, whatever the worker count."""
    config = config or CurationConfig()
    workers = config.workers if workers is None else workers
    job = lambda p: curate_path(p, config)  # noqa: E731
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            out = list(pool.map(job, paths))
    else:
        out = [job(p) for p in paths]
    return sorted(out, key=lambda v: v.clip_id)


def write_verdicts(verdicts: Sequence[CurationVerdict], path) -> Path:
    keys = ["clip_id", "brightness", "laplacian_variance", "musiq", "accepted", "reason"]
    rows = [v.row() for v in verdicts]
    return emit_report({k: [r[k] for r in rows] for k in keys}, path)
