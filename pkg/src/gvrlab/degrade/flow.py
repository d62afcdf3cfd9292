"""Dense optical flow by coarse-to-fine patch inverse search, plus motion masks.

Flow convention: for a pixel ``p`` of the current frame, ``flow[p]`` is the
displacement ``(dx, dy)`` such that ``curr(p) ~= prev(p + flow[p])``, i.e. it
points from frame t back to where the content sat in frame t-1.

The estimator follows the usual inverse-search recipe: an image pyramid,
overlapping 8x8 patches on a 4-pixel stride, Gauss-Newton translation
updates with the Hessian computed once from the (fixed) current-frame
patch, and densification by residual-weighted averaging of the patch
displacements covering each pixel. There is no variational refinement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..tensor import bilinear_resize

LUMA = np.array([0.299, 0.587, 0.114])


def to_gray(frame) -> np.ndarray:
    """H x W (x 3) frame in [0, 1] to a float64 luma image on a 0..255 scale."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim == 3:
        frame = frame @ LUMA
    elif frame.ndim != 2:
        raise ValueError(f"expected an H x W or H x W x 3 frame, got shape {frame.shape}")
    return frame * 255.0


def pyramid_levels(height: int, width: int) -> int:
    return max(1, math.ceil(math.log2(min(height, width) / 16)))


def _downsample(img: np.ndarray) -> np.ndarray:
    return ndimage.gaussian_filter(img, 1.0, mode="nearest")[::2, ::2]


def _patch_origins(n: int, patch: int, stride: int) -> np.ndarray:
    starts = list(range(0, n - patch + 1, stride))
    if starts[-1] != n - patch:
        starts.append(n - patch)
    return np.array(starts)


def _sample(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    return ndimage.map_coordinates(img, [ys.ravel(), xs.ravel()], order=1, mode="nearest").reshape(ys.shape)


def _search_level(prev, curr, flow, patch, stride, iterations):
    h, w = curr.shape
    oy, ox = np.meshgrid(_patch_origins(h, patch, stride), _patch_origins(w, patch, stride), indexing="ij")
    oy, ox = oy.ravel(), ox.ravel()
    dy, dx = np.meshgrid(np.arange(patch), np.arange(patch), indexing="ij")
    py = oy[:, None, None] + dy  # P, patch, patch
    px = ox[:, None, None] + dx

    gy, gx = np.gradient(curr)
    tmpl = curr[py, px]
    tx, ty = gx[py, px], gy[py, px]
    hxx = (tx * tx).sum((1, 2)) + 1e-3
    hxy = (tx * ty).sum((1, 2))
    hyy = (ty * ty).sum((1, 2)) + 1e-3
    det = hxx * hyy - hxy * hxy

    u = flow[..., 0][py, px].mean((1, 2))
    v = flow[..., 1][py, px].mean((1, 2))
    limit = float(max(h, w))
    for _ in range(iterations):
        err = _sample(prev, py + v[:, None, None], px + u[:, None, None]) - tmpl
        bx = (tx * err).sum((1, 2))
        by = (ty * err).sum((1, 2))
        du = (hyy * bx - hxy * by) / det
        dv = (hxx * by - hxy * bx) / det
        u, v = u - du, v - dv
        # keep |displacement| <= max(H, W)
        shrink = np.minimum(1.0, limit / np.maximum(np.hypot(u, v), 1e-12))
        u, v = u * shrink, v * shrink

    # densify: residual-weighted mean of every patch covering a pixel
    resid = np.abs(_sample(prev, py + v[:, None, None], px + u[:, None, None]) - tmpl)
    wgt = 1.0 / np.maximum(1.0, resid)
    num_u = np.zeros((h, w))
    num_v = np.zeros((h, w))
    den = np.zeros((h, w))
    np.add.at(num_u, (py, px), wgt * u[:, None, None])
    np.add.at(num_v, (py, px), wgt * v[:, None, None])
    np.add.at(den, (py, px), wgt)
    return np.stack([num_u / den, num_v / den], axis=-1)


def estimate_flow(prev, curr, patch: int = 8, stride: int = 4, iterations: int = 16) -> np.ndarray:
    """H x W x 2 displacement field with ``curr(p) ~= prev(p + flow[p])``."""
    a, b = to_gray(prev), to_gray(curr)
    if a.shape != b.shape:
        raise ValueError(f"frame shapes differ: {a.shape} vs {b.shape}")
    h, w = a.shape
    if h < 32 or w < 32:
        raise ValueError(f"flow estimation needs frames of at least 32x32, got {h}x{w}")
    levels = pyramid_levels(h, w)
    pa, pb = [a], [b]
    for _ in range(levels - 1):
        pa.append(_downsample(pa[-1]))
        pb.append(_downsample(pb[-1]))
    flow = np.zeros(pb[-1].shape + (2,))
    for lvl in range(levels - 1, -1, -1):
        ca, cb = pa[lvl], pb[lvl]
        if flow.shape[:2] != cb.shape:
            sy, sx = cb.shape[0] / flow.shape[0], cb.shape[1] / flow.shape[1]
            flow = bilinear_resize(flow.transpose(2, 0, 1), *cb.shape).transpose(1, 2, 0)
            flow = flow * np.array([sx, sy])
        flow = _search_level(ca, cb, flow, patch, stride, iterations)
    return flow.astype(np.float32)


def estimate_clip_flow(frames, **kwargs) -> np.ndarray:
    """(T-1) x H x W x 2 flow between consecutive frames."""
    frames = np.asarray(frames)
    return np.stack([estimate_flow(frames[i - 1], frames[i], **kwargs) for i in range(1, len(frames))])


@dataclass
class MotionMask:
    mask: np.ndarray
    tau: float

    @property
    def area(self) -> int:
        return int(self.mask.sum())


def motion_mask(flow, tau: float = 1.5) -> MotionMask:
    """Pixels moving faster than ``tau`` px, closed with a 3x3 structuring element."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    flow = np.asarray(flow)
    raw = np.linalg.norm(flow, axis=-1) > tau
    size = (1,) * (raw.ndim - 2) + (3, 3)
    closed = ndimage.grey_closing(raw.astype(np.uint8), size=size, mode="nearest")
    return MotionMask(closed.astype(bool), float(tau))
