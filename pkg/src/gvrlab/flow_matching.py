"""Rectified-flow math, timestep samplers and model-guided degradation.

Conventions: ``t = 0`` is clean data and ``t = 1`` pure noise, with the
straight path ``z_t = (1 - t) z0 + t eps``. A velocity field predicts
``eps - z0`` and sampling integrates ``dz = v dt`` backwards from
``t = 1`` with explicit Euler steps on a uniform grid.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .media import emit_curve, emit_report, read_report
from .tensor import Rng, Tensor, dct2d_stack, mse, randn

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """Non-finite values appeared; ``step`` names where."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


def discrete_timestep(t: float) -> int:
    """Map a continuous level in [0, 1] onto the 0..1000 timestep grid."""
    return int(np.floor(1000.0 * float(t) + 0.5))


@dataclass
class FlowState:
    z_t: np.ndarray
    t: float

    @property
    def timestep(self) -> int:
        return discrete_timestep(self.t)


class VelocityField(Protocol):
    def __call__(self, z_t: np.ndarray, t: float, condition=None) -> np.ndarray: ...


class OracleLinearVelocity:
    """Returns the exact straight-path velocity ``eps - z0`` for a known pair."""

    def __init__(self, z0, eps):
        self.target = np.asarray(eps) - np.asarray(z0)

    def __call__(self, z_t, t, condition=None):
        return np.broadcast_to(self.target, np.shape(z_t))


class ContractiveToyVelocity:
    """Exact rectified-flow velocity for an isotropic Gaussian data prior.

    With data ``z0 ~ N(mean, std**2)`` the conditional expectation
    ``E[eps - z0 | z_t]`` is affine in ``z_t``; integrating it pulls any
    starting point toward the prior, which makes it a stand-in for a
    large generator in degradation experiments.
    """

    def __init__(self, mean=0.0, std=0.5):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = float(std)

    def __call__(self, z_t, t, condition=None):
        s2 = self.std**2
        t = float(t)
        var = (1 - t) ** 2 * s2 + t**2
        cov = t - (1 - t) * s2
        z = np.asarray(z_t, dtype=np.float64)
        v = -self.mean + cov / var * (z - (1 - t) * self.mean)
        return v.astype(np.asarray(z_t).dtype)


class ZeroVelocity:
    def __call__(self, z_t, t, condition=None):
        return np.zeros_like(z_t)


def _check_level(t: float, name: str = "t") -> float:
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {t}")
    return t


def add_noise(z0, t: float, eps) -> FlowState:
    t = _check_level(t)
    z0 = np.asarray(z0)
    eps = np.asarray(eps)
    z_t = (1 - t) * z0 + t * eps
    if t == 0.0:
        z_t = np.broadcast_to(z0, z_t.shape).copy()
    elif t == 1.0:
        z_t = np.broadcast_to(eps, z_t.shape).copy()
    return FlowState(np.asarray(z_t, dtype=np.result_type(z0, eps)), t)


def cfm_loss(model: VelocityField, z0, eps, t: float, condition=None):
    """Mean squared error between ``model(z_t, t)`` and ``eps - z0``.

    Returns a float, or a scalar Tensor when the model produces Tensors
    (so the loss can be differentiated).
    """
    state = add_noise(z0, t, eps)
    target = np.asarray(eps) - np.asarray(z0)
    v = model(state.z_t, t, condition)
    loss = mse(v, target)
    if isinstance(v, Tensor):
        return loss
    return float(loss.data)


def predict_clean(z_t, t: float, v) -> np.ndarray:
    t = _check_level(t)
    return np.asarray(z_t) - t * np.asarray(v)


@dataclass
class InferenceTrace:
    """Clean-signal predictions recorded at each Euler step."""

    times: list[float] = field(default_factory=list)
    predictions: list[np.ndarray] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.times)


def ode_sample(
    model: VelocityField,
    z_start,
    steps: int = 50,
    condition=None,
    rng: Rng | None = None,
    t_start: float = 1.0,
    trace: InferenceTrace | None = None,
) -> np.ndarray:
    """Euler-integrate ``dz = v dt`` from ``t_start`` down to 0.

    ``condition`` is passed unchanged to every evaluation. ``rng`` is
    accepted for interface symmetry; the integrator itself is deterministic.
    If ``trace`` is given, ``predict_clean`` at every step is appended to it.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    t_start = _check_level(t_start, "t_start")
    z = np.array(z_start, copy=True)
    dt = t_start / steps
    for i in range(steps):
        t = t_start * (1.0 - i / steps)
        v = np.asarray(model(z, t, condition))
        if trace is not None:
            trace.times.append(t)
            trace.predictions.append(predict_clean(z, t, v))
        z = z - dt * v
        if not np.all(np.isfinite(z)):
            raise NumericalError(f"non-finite latent after Euler step {i}", step=i)
    return z


def sdedit_degrade(
    model: VelocityField,
    c0,
    alpha: float,
    steps: int = 20,
    rng: Rng | None = None,
    eps=None,
) -> np.ndarray:
    """Noise ``c0`` to level ``alpha`` and integrate back to ``t = 0``.

    Larger ``alpha`` hands more of the result to the velocity field's own
    prior and keeps less of the structure of ``c0``.
    """
    alpha = _check_level(alpha, "alpha")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    c0 = np.asarray(c0)
    if alpha == 0.0:
        return c0.copy()
    if eps is None:
        if rng is None:
            raise ValueError("sdedit_degrade needs an rng or explicit eps")
        eps = randn(rng, c0.shape)
    c_alpha = add_noise(c0, alpha, eps).z_t
    return ode_sample(model, c_alpha, steps, t_start=alpha)


@dataclass
class TimestepDistribution:
    """Piecewise-uniform density over [0, 1]; ``edges`` ascend."""

    edges: np.ndarray
    probabilities: np.ndarray

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.float64)
        self.probabilities = np.asarray(self.probabilities, dtype=np.float64)
        if self.edges.ndim != 1 or self.edges.size != self.probabilities.size + 1:
            raise ValueError("need len(edges) == len(probabilities) + 1")
        if np.any(np.diff(self.edges) <= 0):
            raise ValueError("bin edges must strictly increase")
        if self.edges[0] < 0 or self.edges[-1] > 1:
            raise ValueError("bin edges must lie in [0, 1]")
        if np.any(self.probabilities < 0) or abs(self.probabilities.sum() - 1.0) > 1e-6:
            raise ValueError(
                f"timestep distribution is not normalized (sum={self.probabilities.sum():.8f})"
            )

    @classmethod
    def uniform(cls, bins: int = 1) -> "TimestepDistribution":
        return cls(np.linspace(0, 1, bins + 1), np.full(bins, 1.0 / bins))

    @classmethod
    def truncated(cls, t_min: float) -> "TimestepDistribution":
        """Uniform on ``[t_min, 1]``."""
        if t_min <= 0:
            return cls.uniform()
        if t_min >= 1:
            raise ValueError("t_min must be below 1")
        return cls(np.array([0.0, t_min, 1.0]), np.array([0.0, 1.0]))

    def quantile(self, u):
        """Inverse CDF; maps stratified uniforms onto timesteps."""
        u = np.asarray(u, dtype=np.float64)
        cdf = np.concatenate([[0.0], np.cumsum(self.probabilities)])
        cdf /= cdf[-1]
        full = np.diff(cdf) > 0
        keep = np.concatenate([full, [False]]) | np.concatenate([[False], full])  # ends of non-empty bins
        out = np.interp(u, cdf[keep], self.edges[keep])
        return float(out) if out.ndim == 0 else out

    def sample(self, rng: Rng, size=None):
        g = rng.generator
        idx = g.choice(self.probabilities.size, size=size, p=self.probabilities)
        lo, hi = self.edges[idx], self.edges[np.asarray(idx) + 1]
        u = g.uniform(size=size)
        out = lo + u * (hi - lo)
        return float(out) if size is None else out

    def density(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        idx = np.clip(np.searchsorted(self.edges, t, side="right") - 1, 0, self.probabilities.size - 1)
        return self.probabilities[idx] / np.diff(self.edges)[idx]

    def to_csv(self, path) -> Path:
        return emit_report(
            {
                "bin_lo": self.edges[:-1].tolist(),
                "bin_hi": self.edges[1:].tolist(),
                "probability": self.probabilities.tolist(),
            },
            path,
        )

    @classmethod
    def from_csv(cls, path) -> "TimestepDistribution":
        cols = read_report(path)
        lo = [float(v) for v in cols["bin_lo"]]
        hi = [float(v) for v in cols["bin_hi"]]
        if any(abs(a - b) > 1e-12 for a, b in zip(hi[:-1], lo[1:])):
            raise ValueError("timestep bins must be contiguous")
        return cls(np.array(lo + hi[-1:]), np.array([float(v) for v in cols["probability"]]))


def sample_timestep_uniform(rng: Rng) -> float:
    return float(rng.uniform())


def sample_timestep(dist: TimestepDistribution, rng: Rng) -> float:
    return dist.sample(rng)


def high_frequency_mask(height: int, width: int, hf_cut: float) -> np.ndarray:
    u = np.arange(height)[:, None] / height
    v = np.arange(width)[None, :] / width
    return (u + v) / 2 >= hf_cut


def high_frequency_coefficients(latent: np.ndarray, hf_cut: float = 0.5) -> np.ndarray:
    """DCT coefficients above ``hf_cut`` normalized frequency, per plane, concatenated."""
    latent = np.asarray(latent)
    mask = high_frequency_mask(latent.shape[-2], latent.shape[-1], hf_cut)
    coeffs = dct2d_stack(latent)
    return coeffs[..., mask].reshape(-1)


def detail_variation(
    traces: Sequence[InferenceTrace], hf_cut: float = 0.5, norm: str = "l1"
) -> tuple[np.ndarray, np.ndarray]:
    """Per-step high-frequency change averaged over traces, plus the step times."""
    if not 0.0 < hf_cut < 1.0:
        raise ValueError("hf_cut must lie in (0, 1)")
    if norm not in ("l1", "l2"):
        raise ValueError(f"unknown norm {norm!r}")
    if not traces:
        raise ValueError("need at least one trace")
    times = np.asarray(traces[0].times, dtype=np.float64)
    if times.size < 2:
        raise ValueError("traces need at least 2 steps")
    total = np.zeros(times.size - 1)
    for tr in traces:
        if len(tr) != times.size or not np.allclose(tr.times, times):
            raise ValueError("all traces must share one step grid")
        hf = [high_frequency_coefficients(p, hf_cut) for p in tr.predictions]
        for i in range(times.size - 1):
            d = hf[i + 1] - hf[i]
            total[i] += np.abs(d).sum() if norm == "l1" else np.sqrt((d * d).sum())
    return total / len(traces), times


def build_detail_aware_sampler(
    traces: Sequence[InferenceTrace],
    hf_cut: float = 0.5,
    norm: str = "l1",
    curve_path=None,
) -> TimestepDistribution:
    """Turn measured high-frequency change per denoising step into a sampler.

    The change between steps ``i`` and ``i + 1`` is credited to the
    interval ``[t_{i+1}, t_i]``; the lowest interval is stretched down to
    ``t = 0`` so the support covers the whole unit interval.
    """
    delta, times = detail_variation(traces, hf_cut, norm)
    total = delta.sum()
    # changes at rounding level (e.g. an exact velocity field) count as none
    scale = np.mean([np.abs(high_frequency_coefficients(tr.predictions[0], hf_cut)).sum() for tr in traces])
    if not np.isfinite(total) or total <= 1e-9 * scale or total <= 0:
        raise ValueError("degenerate trace: no high-frequency change between steps")
    weights = delta / total
    edges_desc = times.copy()
    edges_desc[-1] = 0.0
    edges = edges_desc[::-1]
    probs = weights[::-1]
    dist = TimestepDistribution(edges, probs / probs.sum())
    if curve_path is not None:
        centers = 0.5 * (dist.edges[:-1] + dist.edges[1:])
        emit_curve(
            1000 * centers,
            dist.probabilities,
            curve_path,
            title="High-frequency variation over timesteps",
            x_label="timestep",
            y_label="normalized detail change",
        )
    return dist


@dataclass(frozen=True)
class NoiseAugmentation:
    level: float
    low: float
    high: float

    @property
    def timestep(self) -> int:
        return discrete_timestep(self.level)


def apply_noise_augmentation(c, interval, rng: Rng) -> tuple[np.ndarray, float]:
    """Blend ``c`` toward Gaussian noise at a level drawn from ``interval``."""
    lo, hi = (float(v) for v in interval)
    if not 0.0 <= lo <= hi <= 1.0:
        raise ValueError(f"noise interval must satisfy 0 <= lo <= hi <= 1, got [{lo}, {hi}]")
    a = float(rng.uniform(lo, hi)) if hi > lo else lo
    c = np.asarray(c)
    if a == 0.0:
        return c.copy(), 0.0
    eps = randn(rng, c.shape)
    return ((1 - a) * c + a * eps).astype(c.dtype), a
