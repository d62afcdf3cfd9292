"""Training, inference, trace collection and temporal extension loops."""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..flow_matching import (
    InferenceTrace,
    NumericalError,
    TimestepDistribution,
    apply_noise_augmentation,
    cfm_loss,
    ode_sample,
    sample_timestep,
    sample_timestep_uniform,
)
from ..media import emit_report
from ..tensor import GradTape, Rng, randn
from .data import TrainSample
from .network import Condition, GvrModel
from .optim import AdamW


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 500
    batch_size: int = 4
    lr: float = 5e-4
    weight_decay: float = 0.0
    seed: int = 0
    grad_clip: float | None = 1.0
    stratified: bool = True  # one timestep per equal-probability stratum of the batch


@dataclass
class TrainResult:
    steps: list[int] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    timesteps: list[int] = field(default_factory=list)
    aug_levels: list[float] = field(default_factory=list)

    def rows(self) -> dict[str, list]:
        return {"step": self.steps, "loss": self.losses, "timestep_drawn": self.timesteps,
                "aug_level": self.aug_levels}

    def window_mean(self, start: int, stop: int) -> float:
        return float(np.mean(self.losses[start:stop]))


def draw_text_slot(text, rng: Rng, null_prob: float = 0.1) -> np.ndarray:
    """Return ``text`` or, with probability ``null_prob``, the null (all-zero) slot."""
    text = np.asarray(text, np.float32)
    return np.zeros_like(text) if rng.uniform() < null_prob else text


def _clip_grads(grads, max_norm):
    if max_norm is None:
        return grads
    total = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads)))
    if total <= max_norm or total == 0:
        return grads
    return [g * (max_norm / total) for g in grads]


def sample_loss(model: GvrModel, sample: TrainSample, rng: Rng, sampler: TimestepDistribution | None = None,
                t: float | None = None):
    """CFM loss for one pair with a drawn timestep, noise, augmentation and text slot."""
    cfg = model.config
    if t is None:
        t = sample_timestep(sampler, rng) if sampler is not None else sample_timestep_uniform(rng)
    eps = randn(rng.child("eps"), sample.hr.shape)
    c_aug, a = apply_noise_augmentation(sample.lr, cfg.aug_interval, rng.child("aug"))
    text = draw_text_slot(sample.text, rng.child("text"), cfg.null_text_prob)
    loss = cfm_loss(model, sample.hr, eps, t, Condition(c_aug, a, text))
    return loss, t, a


def train(
    model: GvrModel,
    dataset: Sequence[TrainSample],
    config: TrainConfig | None = None,
    sampler: TimestepDistribution | None = None,
    optimizer=None,
    start_step: int = 0,
    log_path=None,
) -> TrainResult:
    """One optimizer step per batch; raises ``NumericalError`` on a non-finite loss."""
    config = config or TrainConfig()
    if config.steps < 1:
        raise ValueError("steps must be >= 1")
    if not dataset:
        raise ValueError("empty dataset")
    params = model.parameters
    opt = optimizer or AdamW(params, lr=config.lr, weight_decay=config.weight_decay)
    root = Rng(config.seed)
    result = TrainResult()
    for step in range(start_step, start_step + config.steps):
        srng = root.child("step", step)
        picks = srng.integers(0, len(dataset), config.batch_size)
        times = [None] * len(picks)
        if config.stratified:
            u = (np.arange(len(picks)) + srng.child("strata").uniform(size=len(picks))) / len(picks)
            times = sampler.quantile(u) if sampler is not None else u
        grads = [np.zeros(p.shape, np.float64) for p in params]
        total = 0.0
        first = None
        for j, idx in enumerate(picks):
            with GradTape() as tape:
                loss, t, a = sample_loss(model, dataset[int(idx)], srng.child("sample", j), sampler, times[j])
            lv = float(loss.data)
            if not np.isfinite(lv):
                raise NumericalError(f"non-finite loss at training step {step}", step=step)
            for g, pg in zip(grads, tape.gradient(loss, params)):
                g += pg
            total += lv
            if first is None:
                first = (t, a)
        grads = _clip_grads([g / len(picks) for g in grads], config.grad_clip)
        opt.step(grads)
        result.steps.append(step)
        result.losses.append(total / len(picks))
        result.timesteps.append(int(np.floor(1000 * first[0] + 0.5)))
        result.aug_levels.append(first[1])
    result.optimizer = opt
    if log_path is not None:
        emit_report(result.rows(), log_path)
    return result


def condition_for(model: GvrModel, lr_latent, rng: Rng, aug_level: float | None = None, text=None) -> Condition:
    level = model.config.aug_infer if aug_level is None else aug_level
    c_aug, a = apply_noise_augmentation(lr_latent, (level, level), rng.child("aug"))
    return Condition(c_aug, a, text)


def infer(
    model: GvrModel,
    lr_latent,
    steps: int = 50,
    aug_level: float | None = None,
    rng: Rng | None = None,
    text=None,
    trace: InferenceTrace | None = None,
    monitor=None,
) -> np.ndarray:
    """Upsample an LR latent: fixed noisy condition, Euler ODE from pure noise.

    ``monitor(step_index, condition)`` is called before every velocity
    evaluation if given (used to check the condition never changes).
    """
    rng = rng or Rng(0)
    lr_latent = np.asarray(lr_latent, np.float32)
    cond = condition_for(model, lr_latent, rng, aug_level, text)
    tl, cl, h, w = lr_latent.shape
    up = model.config.upsample
    z = randn(rng.child("init"), (tl, cl, h * up, w * up))
    counter = iter(range(steps))

    def field_(z_t, t, c):
        if monitor is not None:
            monitor(next(counter), c)
        return np.asarray(model(z_t, t, c))

    return ode_sample(field_, z, steps, cond, trace=trace).astype(np.float32)


def condition_digest(cond: Condition) -> str:
    return hashlib.sha256(np.ascontiguousarray(cond.latent).tobytes()).hexdigest()


def collect_trace(
    model: GvrModel,
    lr_latents: Sequence[np.ndarray],
    steps: int = 20,
    aug_level: float | None = None,
    seed: int = 0,
    workers: int = 1,
) -> list[InferenceTrace]:
    """Clean-signal predictions at every step of ``infer`` for each clip."""

    def job(i):
        tr = InferenceTrace()
        infer(model, lr_latents[i], steps, aug_level, Rng(seed).child("trace", i), trace=tr)
        return tr

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(job, range(len(lr_latents))))
    return [job(i) for i in range(len(lr_latents))]


def extend_temporal(
    model: GvrModel,
    dataset: Sequence[TrainSample],
    steps: int,
    unit: int = 5,
    attention: str | None = None,
    config: TrainConfig | None = None,
) -> tuple[GvrModel, TrainResult]:
    """Reuse every parameter on long clips sliced into temporal units, then fine-tune."""
    if dataset:
        tl = dataset[0].hr.shape[0]
        if tl < unit:
            raise ValueError(f"latent length {tl} is shorter than the temporal unit {unit}")
    changes = {"temporal_unit": unit}
    if attention is not None:
        changes["attention"] = attention
    extended = model.with_config(model.config.with_(**changes))
    base = config or TrainConfig()
    result = train(extended, dataset, TrainConfig(**{**base.__dict__, "steps": steps}))
    return extended, result
