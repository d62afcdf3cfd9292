"""Lossless space-time patchify standing in for a video autoencoder.

Frame 0 forms latent frame 0 on its own; every following group of
``ft`` frames forms one latent frame. Each ``fs x fs`` pixel patch of the
group folds into channels, laid out as ``((g * fs + dy) * fs + dx) * 3 + c``.
Latent frame 0 only fills the ``g = 0`` slice and is zero elsewhere, so all
latent frames share ``Cl = 3 * fs**2 * ft`` channels.

Serialized latents use a flat little-endian container::

    b"GVRL" | u32 version | 4 x u32 extents | float32 payload (row-major)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .media import Clip
from .tensor import bilinear_resize

LATENT_MAGIC = b"GVRL"
LATENT_VERSION = 1
_HEADER = struct.Struct("<4sI4I")


class CodecError(ValueError):
    pass


@dataclass(frozen=True)
class CodecSpec:
    spatial: int = 8
    temporal: int = 4

    @property
    def channels(self) -> int:
        return 3 * self.spatial**2 * self.temporal

    def latent_length(self, num_frames: int) -> int:
        if num_frames < 1 or (num_frames - 1) % self.temporal:
            raise CodecError(
                f"frame count {num_frames} invalid: (T - 1) must be divisible by {self.temporal}"
            )
        return 1 + (num_frames - 1) // self.temporal

    def latent_shape(self, num_frames: int, height: int, width: int) -> tuple[int, int, int, int]:
        if height % self.spatial or width % self.spatial:
            raise CodecError(
                f"frame size {height}x{width} invalid: height and width must be divisible by {self.spatial}"
            )
        return (self.latent_length(num_frames), self.channels, height // self.spatial, width // self.spatial)


DEFAULT_CODEC = CodecSpec()


def _fold(group: np.ndarray, fs: int) -> np.ndarray:
    g, h, w, c = group.shape
    x = group.reshape(g, h // fs, fs, w // fs, fs, c)
    x = x.transpose(0, 2, 4, 5, 1, 3)  # g, dy, dx, c, Hl, Wl
    return x.reshape(g * fs * fs * c, h // fs, w // fs)


def _unfold(block: np.ndarray, g: int, fs: int) -> np.ndarray:
    _, hl, wl = block.shape
    x = block.reshape(g, fs, fs, 3, hl, wl).transpose(0, 4, 1, 5, 2, 3)
    return x.reshape(g, hl * fs, wl * fs, 3)


def encode(clip, spec: CodecSpec = DEFAULT_CODEC) -> np.ndarray:
    """Clip (or T x H x W x 3 array) to a Tl x Cl x Hl x Wl latent."""
    frames = clip.frames if isinstance(clip, Clip) else np.asarray(clip)
    t, h, w, _ = frames.shape
    tl, cl, hl, wl = spec.latent_shape(t, h, w)
    out = np.zeros((tl, cl, hl, wl), dtype=frames.dtype)
    first = _fold(frames[:1], spec.spatial)
    out[0, : first.shape[0]] = first
    if tl > 1:
        groups = frames[1:].reshape(tl - 1, spec.temporal, h, w, 3)
        for j, group in enumerate(groups, start=1):
            out[j] = _fold(group, spec.spatial)
    return out


def decode(latent: np.ndarray, spec: CodecSpec = DEFAULT_CODEC, frame_rate: float = 24.0) -> Clip:
    return Clip(decode_frames(latent, spec), frame_rate)


def decode_frames(latent: np.ndarray, spec: CodecSpec = DEFAULT_CODEC) -> np.ndarray:
    latent = np.asarray(latent)
    tl, cl, hl, wl = latent.shape
    if cl != spec.channels:
        raise CodecError(f"latent has {cl} channels, codec expects {spec.channels}")
    per_frame = 3 * spec.spatial**2
    frames = [_unfold(latent[0, :per_frame], 1, spec.spatial)]
    for j in range(1, tl):
        frames.append(_unfold(latent[j], spec.temporal, spec.spatial))
    return np.concatenate(frames, axis=0)


def upsample_condition(lr: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinearly resize every channel plane of every latent frame."""
    lr = np.asarray(lr)
    if height < lr.shape[-2] or width < lr.shape[-1]:
        raise CodecError(
            f"upsample_condition cannot shrink {lr.shape[-2]}x{lr.shape[-1]} to {height}x{width}"
        )
    return bilinear_resize(lr, height, width)


def upsample_decoded(lr: np.ndarray, factor: int = 2, spec: CodecSpec = DEFAULT_CODEC) -> np.ndarray:
    """Decode, bilinearly enlarge the pixels by ``factor`` and re-encode.

    Unlike :func:`upsample_condition` this respects where each channel's
    pixel sits inside its patch, so it equals the pixel-space baseline.
    """
    frames = decode_frames(lr, spec)
    t, h, w, _ = frames.shape
    x = np.ascontiguousarray(frames.transpose(0, 3, 1, 2))
    big = np.asarray(bilinear_resize(x, h * factor, w * factor)).transpose(0, 2, 3, 1)
    return encode(np.ascontiguousarray(big, dtype=np.asarray(lr).dtype), spec)


def pack_array(array: np.ndarray) -> bytes:
    arr = np.asarray(array, dtype="<f4")
    if arr.ndim > 4:
        raise CodecError("latent container holds at most 4 extents")
    extents = (1,) * (4 - arr.ndim) + arr.shape
    return _HEADER.pack(LATENT_MAGIC, LATENT_VERSION, *extents) + arr.tobytes(order="C")


def unpack_array(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one container at ``offset``; returns the array and the next offset."""
    if len(buf) - offset < _HEADER.size:
        raise CodecError("truncated latent header")
    magic, version, *extents = _HEADER.unpack_from(buf, offset)
    if magic != LATENT_MAGIC:
        raise CodecError(f"bad latent magic {magic!r}")
    if version != LATENT_VERSION:
        raise CodecError(f"unsupported latent container version {version}")
    count = int(np.prod(extents))
    start = offset + _HEADER.size
    end = start + 4 * count
    if end > len(buf):
        raise CodecError("truncated latent payload")
    arr = np.frombuffer(buf, dtype="<f4", count=count, offset=start).reshape(extents)
    return arr.astype(np.float32), end


def save_latent(latent: np.ndarray, path) -> Path:
    path = Path(path)
    path.write_bytes(pack_array(latent))
    return path


def load_latent(path) -> np.ndarray:
    arr, _ = unpack_array(Path(path).read_bytes())
    return arr
