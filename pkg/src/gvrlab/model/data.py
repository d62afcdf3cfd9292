"""Synthetic clips and (HR, LR) latent training pairs."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from PIL import Image

from ..codec import encode
from ..degrade import FlowDegradeParams, degrade_clip
from ..flow_matching import ContractiveToyVelocity, sdedit_degrade
from ..media import Clip
from ..tensor import Rng


@dataclass
class TrainSample:
    """One training pair in latent space plus its text slot."""

    hr: np.ndarray  # Tl x Cl x H x W
    lr: np.ndarray  # Tl x Cl x H/up x W/up
    text: np.ndarray
    index: int = 0


def synthetic_clip(rng: Rng, frames: int = 17, size: int = 64) -> Clip:
    """A drifting soft checkerboard over a colour gradient.

    The checker is a product of two cosines (period 10-16 px, random
    orientation and phase) so its detail survives a x2 bicubic reduction
    yet is visibly softened by bilinear re-enlargement.
    """
    g = rng.generator
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    base = g.uniform(0.3, 0.7, 3)
    slope = g.uniform(-0.15, 0.15, (2, 3)) / size
    period = g.uniform(10.0, 16.0)
    angle = g.uniform(0, math.pi)
    phase = g.uniform(0, 2 * math.pi, 2)
    vel = g.uniform(-1.5, 1.5, 2)
    amp = g.uniform(0.12, 0.25) * g.choice([-1.0, 1.0], 3) * g.uniform(0.6, 1.0, 3)
    ca, sa = math.cos(angle), math.sin(angle)
    out = np.empty((frames, size, size, 3))
    for f in range(frames):
        x = xx - vel[0] * f
        y = yy - vel[1] * f
        u = (x * ca + y * sa) * 2 * math.pi / period + phase[0]
        v = (-x * sa + y * ca) * 2 * math.pi / period + phase[1]
        checker = np.cos(u) * np.cos(v)
        grad = base + xx[..., None] * slope[0] + yy[..., None] * slope[1]
        out[f] = grad + checker[..., None] * amp
    return Clip(np.clip(out, 0.0, 1.0).astype(np.float32))


def downsample_frames(frames: np.ndarray, factor: int = 2) -> np.ndarray:
    """Per-channel bicubic reduction of T x H x W x 3 frames."""
    t, h, w, c = frames.shape
    out = np.empty((t, h // factor, w // factor, c), np.float32)
    for i in range(t):
        for ch in range(c):
            img = Image.fromarray(np.ascontiguousarray(frames[i, ..., ch], dtype=np.float32), mode="F")
            out[i, ..., ch] = np.asarray(img.resize((w // factor, h // factor), Image.BICUBIC))
    return np.clip(out, 0.0, 1.0)


def upsample_frames(frames: np.ndarray, factor: int = 2) -> np.ndarray:
    """Pixel-space bilinear enlargement (the baseline an upsampler must beat)."""
    from ..tensor import bilinear_resize

    t, h, w, _ = frames.shape
    x = np.asarray(frames, np.float32).transpose(0, 3, 1, 2)
    return np.asarray(bilinear_resize(x, h * factor, w * factor)).transpose(0, 2, 3, 1)


def psnr(a, b, peak: float = 1.0) -> float:
    mse = float(np.mean((np.asarray(a, np.float64) - np.asarray(b, np.float64)) ** 2))
    return float("inf") if mse == 0 else 10 * math.log10(peak * peak / mse)


def make_pair(index: int, seed: int, frames: int = 17, size: int = 64, factor: int = 2,
              degradation: str = "bicubic", text_dim: int = 8,
              flow_params: FlowDegradeParams | None = None, sdedit_alpha: float = 0.3) -> TrainSample:
    """Deterministic sample ``index`` of a synthetic dataset.

    ``degradation``: "bicubic" (one-step reduction), "flow" (reduction then
    flow-driven artifacts at LR) or "flow+sdedit" (additionally pulled toward
    a toy generative prior in latent space).
    """
    rng = Rng(seed).child("sample", index)
    clip = synthetic_clip(rng.child("clip"), frames, size)
    lr_frames = downsample_frames(clip.frames, factor)
    if degradation in ("flow", "flow+sdedit"):
        lr_frames = degrade_clip(Clip(lr_frames), flow_params, rng.child("flow")).frames
    elif degradation != "bicubic":
        raise ValueError(f"unknown degradation {degradation!r}")
    lr = encode(lr_frames)
    if degradation == "flow+sdedit":
        prior = ContractiveToyVelocity(mean=float(lr.mean()), std=float(lr.std()))
        lr = sdedit_degrade(prior, lr, sdedit_alpha, 10, rng.child("sdedit")).astype(np.float32)
    text = rng.child("text").generator.standard_normal(text_dim).astype(np.float32)
    return TrainSample(encode(clip.frames), lr, text, index)


def make_dataset(count: int, seed: int = 0, workers: int = 1, **kwargs) -> list[TrainSample]:
    """``count`` pairs; identical for any ``workers`` since each is keyed by index."""
    job = lambda i: make_pair(i, seed, **kwargs)  # noqa: E731
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(job, range(count)))
    return [job(i) for i in range(count)]
