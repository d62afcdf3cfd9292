"""Synthetic color-bleeding and motion-blur artifacts driven by optical flow."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy import ndimage

from ..media import Clip
from ..tensor import Rng
from .flow import estimate_flow, motion_mask


@dataclass(frozen=True)
class FlowDegradeParams:
    tau_px: float = 1.5
    block_px: int = 16
    density: float = 0.3
    samples_k: int = 16
    strength_min: float = 0.3
    strength_max: float = 0.7
    overlap_px: int = 8
    at_lr: bool = True

    def __post_init__(self):
        if self.tau_px <= 0:
            raise ValueError("tau_px must be positive")
        if self.block_px < 1 or self.samples_k < 1:
            raise ValueError("block_px and samples_k must be >= 1")
        if not 0 < self.density <= 1:
            raise ValueError("density must lie in (0, 1]")
        if not 0 <= self.strength_min <= self.strength_max <= 1:
            raise ValueError("need 0 <= strength_min <= strength_max <= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "FlowDegradeParams":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    def to_dict(self) -> dict:
        return asdict(self)


# --- ellipses ------------------------------------------------------------------


@dataclass(frozen=True)
class EllipseSpec:
    center: tuple[float, float]  # (x, y) px
    a: float
    b: float
    theta: float
    strength: float

    def __post_init__(self):
        if not self.a >= self.b > 0:
            raise ValueError(f"ellipse needs a >= b > 0, got a={self.a}, b={self.b}")
        if not 0 <= self.strength <= 1:
            raise ValueError(f"strength {self.strength} outside [0, 1]")

    def distance(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        """Normalized elliptical distance: 0 at the center, 1 on the boundary."""
        dx, dy = xs - self.center[0], ys - self.center[1]
        c, s = math.cos(self.theta), math.sin(self.theta)
        along = dx * c + dy * s
        across = -dx * s + dy * c
        return np.sqrt((along / self.a) ** 2 + (across / self.b) ** 2)

    def weight(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        return np.maximum(0.0, 1.0 - self.distance(xs, ys))


def _axis_from_speed(speed, lo=4.0, hi=32.0):
    return np.clip(2.0 * speed, lo, hi)


def sample_ellipses(mask, flow, rng: Rng, density: float = 0.3,
                    strength: tuple[float, float] = (0.3, 0.7)) -> list[EllipseSpec]:
    """Ellipses centred on moving pixels, elongated along the local flow."""
    if not 0 < density <= 1:
        raise ValueError("density must lie in (0, 1]")
    mask = np.asarray(getattr(mask, "mask", mask), dtype=bool)
    flow = np.asarray(flow, dtype=np.float64)
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        return []
    speed = np.linalg.norm(flow[ys, xs], axis=-1)
    a_all = _axis_from_speed(speed)
    mean_area = float(np.mean(np.pi * a_all * a_all / 2))
    count = math.ceil(density * ys.size / mean_area)
    g = rng.generator
    picks = g.integers(0, ys.size, count)
    levels = g.uniform(strength[0], strength[1], count)
    out = []
    for i, s in zip(picks, levels):
        fx, fy = flow[ys[i], xs[i]]
        a = float(a_all[i])
        out.append(EllipseSpec((float(xs[i]), float(ys[i])), a, a / 2, math.atan2(fy, fx), float(s)))
    return out


def _bilinear_rgb(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    return np.stack(
        [ndimage.map_coordinates(img[..., c], [ys, xs], order=1, mode="nearest") for c in range(img.shape[-1])],
        axis=-1,
    )


def ellipse_color(prev, flow, ellipse: EllipseSpec, rng: Rng, samples_k: int = 16) -> np.ndarray:
    """Mean of ``samples_k`` jittered samples of ``prev`` at the flow-mapped centre."""
    cx, cy = ellipse.center
    fx, fy = np.asarray(flow)[int(round(cy)), int(round(cx))]
    jitter = rng.generator.normal(0.0, ellipse.a / 4, size=(samples_k, 2))
    xs = cx + fx + jitter[:, 0]
    ys = cy + fy + jitter[:, 1]
    return _bilinear_rgb(np.asarray(prev, dtype=np.float64), ys, xs).mean(axis=0)


def blend_colors(curr, prev, flow, ellipses, rng: Rng, samples_k: int = 16) -> np.ndarray:
    """Blend flow-sampled previous-frame colors into ``curr`` inside each ellipse."""
    curr = np.asarray(curr)
    if np.shape(prev) != curr.shape:
        raise ValueError("prev and curr must share a shape")
    out = curr.copy()
    h, w = curr.shape[:2]
    for e in ellipses:
        color = ellipse_color(prev, flow, e, rng, samples_k)
        r = int(math.ceil(e.a)) + 1
        x0, x1 = max(0, int(e.center[0]) - r), min(w, int(e.center[0]) + r + 1)
        y0, y1 = max(0, int(e.center[1]) - r), min(h, int(e.center[1]) + r + 1)
        if x0 >= x1 or y0 >= y1:
            continue
        yy, xx = np.mgrid[y0:y1, x0:x1]
        ws = e.weight(xx, yy) * e.strength
        inside = ws > 0
        if not inside.any():
            continue
        region = out[y0:y1, x0:x1]
        wv = ws[inside][:, None]
        mixed = (1.0 - wv) * region[inside] + wv * color
        region[inside] = mixed.astype(out.dtype)
    return out


# --- motion blur -------------------------------------------------------------------


@dataclass(frozen=True)
class BlurKernelSpec:
    length: int
    theta: float
    weights: np.ndarray

    @classmethod
    def from_motion(cls, magnitude: float, theta: float, lo: int = 3, hi: int = 31) -> "BlurKernelSpec":
        n = int(np.clip(round(2 * magnitude), lo, hi))
        if n % 2 == 0:
            n += 1 if n < hi else -1
        return cls(n, float(theta), np.full(n, 1.0 / n))

    def kernel2d(self) -> np.ndarray:
        """Taps spread along the line with bilinear weights; sums to 1."""
        half = (self.length - 1) / 2
        size = 2 * int(math.ceil(half)) + 1
        c = size // 2
        k = np.zeros((size, size))
        offs = np.arange(self.length) - half
        cos, sin = math.cos(self.theta), math.sin(self.theta)
        for o, wt in zip(offs, self.weights):
            x, y = c + o * cos, c + o * sin
            # snap values within float noise of a grid line
            x, y = round(x, 9), round(y, 9)
            x0, y0 = int(math.floor(x)), int(math.floor(y))
            fx, fy = x - x0, y - y0
            for yi, wy in ((y0, 1 - fy), (y0 + 1, fy)):
                for xi, wx in ((x0, 1 - fx), (x0 + 1, fx)):
                    if wy * wx > 0:
                        k[yi, xi] += wt * wy * wx
        return k / k.sum()


def _fade_weights(n: int, block: int, overlap: int) -> list[np.ndarray]:
    """Per-block 1D weights forming a partition of unity with linear cross-fades."""
    out = []
    for s in range(0, n, block):
        ind = np.zeros(n)
        ind[s:s + block] = 1.0
        out.append(ndimage.uniform_filter1d(ind, max(1, overlap), mode="nearest") if overlap > 1 else ind)
    return out


def motion_blur(frame, flow, block: int = 16, tau: float = 1.5, overlap: int = 8) -> np.ndarray:
    """Blur each moving block along its mean motion; static blocks stay bit-exact."""
    frame = np.asarray(frame)
    flow = np.asarray(flow, dtype=np.float64)
    h, w = frame.shape[:2]
    fy_w = _fade_weights(h, block, overlap)
    fx_w = _fade_weights(w, block, overlap)
    acc = np.zeros(frame.shape, dtype=np.float64)
    touched = False
    for bi, r0 in enumerate(range(0, h, block)):
        for bj, c0 in enumerate(range(0, w, block)):
            f = flow[r0:r0 + block, c0:c0 + block].reshape(-1, 2)
            m = float(np.linalg.norm(f, axis=-1).mean())
            if m <= tau:
                continue
            mean_vec = f.mean(axis=0)
            spec = BlurKernelSpec.from_motion(m, math.atan2(mean_vec[1], mean_vec[0]))
            kern = spec.kernel2d()
            wy, wx = fy_w[bi], fx_w[bj]
            ys, xs = np.nonzero(wy)[0], np.nonzero(wx)[0]
            margin = kern.shape[0] // 2 + 1
            ya, yb = max(0, ys[0] - margin), min(h, ys[-1] + 1 + margin)
            xa, xb = max(0, xs[0] - margin), min(w, xs[-1] + 1 + margin)
            crop = frame[ya:yb, xa:xb].astype(np.float64)
            if crop.ndim == 3:
                blurred = np.stack([ndimage.correlate(crop[..., c], kern, mode="nearest")
                                    for c in range(crop.shape[-1])], axis=-1)
            else:
                blurred = ndimage.correlate(crop, kern, mode="nearest")
            sl = (slice(ys[0], ys[-1] + 1), slice(xs[0], xs[-1] + 1))
            inner = (slice(ys[0] - ya, ys[-1] + 1 - ya), slice(xs[0] - xa, xs[-1] + 1 - xa))
            wmap = np.outer(wy[sl[0]], wx[sl[1]])
            if frame.ndim == 3:
                wmap = wmap[..., None]
            acc[sl] += wmap * (blurred[inner] - crop[inner])
            touched = True
    if not touched:
        return frame.copy()
    out = frame.copy()
    moved = acc != 0
    out[moved] = (frame.astype(np.float64) + acc)[moved].astype(frame.dtype)
    return out


# --- clip pipeline -------------------------------------------------------------------


def degrade_frame(prev, curr, params: FlowDegradeParams, rng: Rng) -> np.ndarray:
    flow = estimate_flow(prev, curr)
    mask = motion_mask(flow, params.tau_px)
    ellipses = sample_ellipses(mask, flow, rng, params.density, (params.strength_min, params.strength_max))
    blended = blend_colors(curr, prev, flow, ellipses, rng, params.samples_k)
    out = motion_blur(blended, flow, params.block_px, params.tau_px, params.overlap_px)
    return np.clip(out, 0.0, 1.0).astype(np.asarray(curr).dtype)


def degrade_clip(clip, params: FlowDegradeParams | None = None, rng: Rng | None = None,
                 workers: int = 1) -> Clip:
    """Frame 0 passes through; every later frame is degraded from its predecessor."""
    params = params or FlowDegradeParams()
    rng = rng or Rng(0)
    frames = clip.frames if isinstance(clip, Clip) else np.asarray(clip)
    rate = clip.frame_rate if isinstance(clip, Clip) else 24.0
    if len(frames) < 2:
        raise ValueError("flow degradation needs >= 2 frames")

    def job(t):
        return degrade_frame(frames[t - 1], frames[t], params, rng.child("flow_degrade", t))

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            rest = list(pool.map(job, range(1, len(frames))))
    else:
        rest = [job(t) for t in range(1, len(frames))]
    return Clip(np.stack([frames[0]] + rest), rate)
