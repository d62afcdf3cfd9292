"""A small diffusion-transformer velocity field conditioned on an LR latent.

Data path for one clip (``N = Tl * H * W`` tokens)::

    c_aug --conv3d--silu--bilinear x up--conv3d--> Tl x D x H x W --+
                                                                     concat -> in_proj -> blocks -> out_proj -> v
    z_t (Tl x Cl x H x W) -------------------------------------------+

Every block is pre-norm attention + GELU MLP with adaptive shift/scale/gate
computed from one conditioning vector: sinusoidal embeddings of the
discrete timestep and of the augmentation level, summed, passed through a
small MLP and added to a projection of the text slot. The modulation and
output projections start at zero, so a fresh model predicts ``v = 0``.

A learned sub-position embedding, indexed by ``(y % up, x % up)``, is added
to the tokens: bilinear enlargement alone cannot tell the ``up**2`` HR tokens
covering one LR token apart.

Two output heads:

``velocity``
    The network output is the velocity. An optional per-channel, time-gated
    skip ``g(e) * z_t`` is added, since the target contains the injected
    noise and a narrow token width cannot carry it through the bottleneck.
``residual``
    The output is preconditioned around a prior ``B``, the condition decoded,
    enlarged bilinearly in pixel space and re-encoded. Modelling
    ``z0 = B + d`` with ``d ~ N(0, s^2)`` gives the optimal linear velocity
    ``-B + k(t) (z_t - (1-t) B)``; the network adds ``c(t) F`` on top, with
    ``c(t)`` the residual standard deviation of that estimate, so ``F``
    targets have unit scale at every ``t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..codec import DEFAULT_CODEC, upsample_decoded
from ..attention import AttentionSpec, TemporalUnitPlan, grouped_attention, plan_groups
from ..flow_matching import discrete_timestep
from ..tensor import Rng, Tensor, bilinear_resize, conv3d, value
from ..tensor import autodiff as ad
from .config import GvrConfig


@dataclass
class Condition:
    """Everything the velocity field sees besides ``z_t`` and ``t``."""

    latent: np.ndarray  # noise-augmented LR latent, Tl x Cl x h x w
    level: float = 0.0
    text: np.ndarray | None = None


def residual_coefficients(t: float, s: float) -> tuple[float, float]:
    """``k(t)`` and ``c(t)`` of the residual head for prior spread ``s``."""
    s2 = s * s
    var_y = (1 - t) ** 2 * s2 + t * t
    cov = t - (1 - t) * s2
    return cov / var_y, math.sqrt(max(1 + s2 - cov * cov / var_y, 0.0))


def sinusoidal(step: int, dim: int) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    ang = float(step) * freqs
    return np.concatenate([np.cos(ang), np.sin(ang)]).astype(np.float32)


class GvrModel:
    """Velocity field ``v(z_t, t, Condition)``; parameters live in ``self.params``."""

    def __init__(self, config: GvrConfig | None = None, dtype=np.float32):
        self.config = config or GvrConfig()
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        self._init_params(Rng(self.config.seed).child("init"))

    # --- parameters ----------------------------------------------------------

    def _add(self, name, shape, rng: Rng, fan_in=None, zero=False):
        if zero:
            arr = np.zeros(shape)
        else:
            fan_in = fan_in or shape[0]
            arr = rng.generator.standard_normal(shape) / math.sqrt(fan_in)
        self.params[name] = Tensor(arr.astype(self.dtype), requires_grad=True, name=name)

    def _init_params(self, rng: Rng):
        c = self.config
        d, cl, kt = c.width, c.latent_channels, c.cond_kernel_t
        hidden = d * c.mlp_ratio
        self._add("cond_in.w", (d, cl, kt, 3, 3), rng, fan_in=cl * kt * 9)
        self._add("cond_in.b", (d,), rng, zero=True)
        self._add("cond_out.w", (d, d, kt, 3, 3), rng, fan_in=d * kt * 9)
        self._add("cond_out.b", (d,), rng, zero=True)
        prior_in = cl if c.head == "residual" else 0
        self._add("in_proj.w", (cl + prior_in + d, d), rng)
        self._add("in_proj.b", (d,), rng, zero=True)
        self._add("phase", (c.upsample**2, d), rng, fan_in=d)
        self._add("embed.w1", (d, d), rng)
        self._add("embed.b1", (d,), rng, zero=True)
        self._add("embed.w2", (d, d), rng)
        self._add("embed.b2", (d,), rng, zero=True)
        self._add("embed.text", (c.text_dim, d), rng)
        for i in range(c.depth):
            p = f"block{i}."
            self._add(p + "ada.w", (d, 6 * d), rng, zero=True)
            self._add(p + "ada.b", (6 * d,), rng, zero=True)
            for name in ("q", "k", "v", "o"):
                self._add(p + f"attn.{name}.w", (d, d), rng)
                self._add(p + f"attn.{name}.b", (d,), rng, zero=True)
            self._add(p + "mlp.w1", (d, hidden), rng)
            self._add(p + "mlp.b1", (hidden,), rng, zero=True)
            self._add(p + "mlp.w2", (hidden, d), rng)
            self._add(p + "mlp.b2", (d,), rng, zero=True)
        self._add("final.ada.w", (d, 2 * d), rng, zero=True)
        self._add("final.ada.b", (2 * d,), rng, zero=True)
        self._add("out_proj.w", (d, cl), rng, zero=True)
        self._add("out_proj.b", (cl,), rng, zero=True)
        if c.head == "residual":
            self._add("refine.w", (cl, cl), rng, zero=True)
        if c.latent_skip and c.head == "velocity":
            self._add("skip.w", (d, cl), rng, zero=True)
            self._add("skip.b", (cl,), rng, zero=True)

    @property
    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: np.array(p.data) for k, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise ValueError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, p in self.params.items():
            arr = np.asarray(state[k])
            if arr.shape != p.shape:
                raise ValueError(f"parameter {k}: shape {arr.shape} != {p.shape}")
            self.params[k] = Tensor(arr.astype(self.dtype), requires_grad=True, name=k)

    def with_config(self, config: GvrConfig) -> "GvrModel":
        """Copy of the parameters under a different (shape-compatible) configuration."""
        other = GvrModel.__new__(GvrModel)
        other.config = config
        other.dtype = self.dtype
        other.params = {
            k: Tensor(p.data.copy(), requires_grad=True, name=k) for k, p in self.params.items()
        }
        probe = GvrModel(config, self.dtype)
        if {k: p.shape for k, p in probe.params.items()} != {k: p.shape for k, p in self.params.items()}:
            raise ValueError("new configuration changes the parameter layout")
        return other

    # --- forward --------------------------------------------------------------

    def attention_spec(self) -> AttentionSpec:
        c = self.config
        return AttentionSpec(mode=c.attention, heads=c.heads, window=c.window, top_k=c.top_k, gating=c.gating)

    def temporal_plan(self) -> TemporalUnitPlan:
        c = self.config
        return TemporalUnitPlan(c.temporal_unit, c.temporal_shift)

    def embedding(self, t: float, level: float, text) -> Tensor:
        c, P = self.config, self.params
        base = sinusoidal(discrete_timestep(t), c.width) + sinusoidal(discrete_timestep(level), c.width)
        h = ad.silu(ad.linear(base.astype(self.dtype), P["embed.w1"], P["embed.b1"]))
        e = ad.linear(h, P["embed.w2"], P["embed.b2"])
        text = np.zeros(c.text_dim, self.dtype) if text is None else np.asarray(text, self.dtype)
        if text.shape != (c.text_dim,):
            raise ValueError(f"text slot must have shape ({c.text_dim},), got {text.shape}")
        return ad.add(e, ad.linear(text, P["embed.text"]))

    def _modulate(self, x, shift, scale):
        return ad.add(ad.mul(ad.layer_norm(x), ad.add(scale, 1.0)), shift)

    def velocity(self, z_t, t: float, cond: Condition) -> Tensor:
        c, P = self.config, self.params
        z = np.asarray(value(z_t), dtype=self.dtype)
        if z.ndim != 4 or z.shape[1] != c.latent_channels:
            raise ValueError(f"z_t must be Tl x {c.latent_channels} x H x W, got {z.shape}")
        tl, cl, hh, ww = z.shape
        lr = np.asarray(cond.latent, dtype=self.dtype)
        if lr.ndim != 4 or lr.shape[:2] != (tl, cl) or lr.shape[2] * c.upsample != hh or lr.shape[3] * c.upsample != ww:
            raise ValueError(
                f"condition shape {lr.shape} does not match z_t {z.shape} at upsample x{c.upsample}"
            )
        d, n = c.width, tl * hh * ww

        cond_feat = ad.silu(conv3d(lr, P["cond_in.w"], P["cond_in.b"]))
        cond_feat = bilinear_resize(cond_feat, hh, ww)
        cond_feat = conv3d(cond_feat, P["cond_out.w"], P["cond_out.b"])
        cond_tok = ad.reshape(ad.transpose(cond_feat, (0, 2, 3, 1)), (n, d))
        z_tok = z.transpose(0, 2, 3, 1).reshape(n, cl)
        prior = None
        if c.head == "residual":
            # the network sees the unit-scale deviation of z_t from the prior path
            prior = self.prior(lr, cond.level)
            tf = float(t)
            spread = math.sqrt((1 - tf) ** 2 * c.prior_std**2 + tf * tf)
            dev = (z - (1 - tf) * prior) / spread
            z_tok = dev.transpose(0, 2, 3, 1).reshape(n, cl).astype(self.dtype)
        parts = [Tensor(z_tok), cond_tok]
        if prior is not None:
            parts.insert(1, Tensor(prior.transpose(0, 2, 3, 1).reshape(n, cl)))
        x = ad.linear(ad.concat(parts, axis=1), P["in_proj.w"], P["in_proj.b"])
        x = ad.add(x, ad.take(P["phase"], self._phase_index(tl, hh, ww), axis=0))

        s = ad.silu(self.embedding(t, cond.level, cond.text))
        spec, plan = self.attention_spec(), self.temporal_plan()
        for i in range(c.depth):
            p = f"block{i}."
            mod = ad.reshape(ad.linear(s, P[p + "ada.w"], P[p + "ada.b"]), (6, d))
            sh1, sc1, g1, sh2, sc2, g2 = (ad.take(mod, j, axis=0) for j in range(6))
            h = self._modulate(x, sh1, sc1)
            q = ad.linear(h, P[p + "attn.q.w"], P[p + "attn.q.b"])
            k = ad.linear(h, P[p + "attn.k.w"], P[p + "attn.k.b"])
            v = ad.linear(h, P[p + "attn.v.w"], P[p + "attn.v.b"])
            groups = plan_groups(spec, (tl, hh, ww), q.data, k.data, plan, i, c.spatial_shift)
            att = ad.linear(grouped_attention(q, k, v, groups, c.heads), P[p + "attn.o.w"], P[p + "attn.o.b"])
            x = ad.add(x, ad.mul(g1, att))
            h = self._modulate(x, sh2, sc2)
            ff = ad.linear(ad.gelu(ad.linear(h, P[p + "mlp.w1"], P[p + "mlp.b1"])), P[p + "mlp.w2"], P[p + "mlp.b2"])
            x = ad.add(x, ad.mul(g2, ff))

        mod = ad.reshape(ad.linear(s, P["final.ada.w"], P["final.ada.b"]), (2, d))
        h = self._modulate(x, ad.take(mod, 0, axis=0), ad.take(mod, 1, axis=0))
        out = ad.linear(h, P["out_proj.w"], P["out_proj.b"])
        if prior is not None:
            out = ad.add(out, ad.matmul(parts[1], P["refine.w"]))
        out = ad.transpose(ad.reshape(out, (tl, hh, ww, cl)), (0, 3, 1, 2))
        if c.head == "residual":
            return self._precondition(out, z, float(t), prior)
        if c.latent_skip:
            gate = ad.reshape(ad.linear(s, P["skip.w"], P["skip.b"]), (1, cl, 1, 1))
            out = ad.add(out, ad.mul(gate, z))
        return out

    def _phase_index(self, tl, hh, ww) -> np.ndarray:
        up = self.config.upsample
        yy, xx = np.mgrid[0:hh, 0:ww]
        idx = (yy % up) * up + (xx % up)
        return np.broadcast_to(idx, (tl, hh, ww)).reshape(-1)

    def prior(self, lr, level: float = 0.0) -> np.ndarray:
        """Decoded-bilinear enlargement of the condition, undoing the augmentation scale."""
        if self.config.latent_channels != DEFAULT_CODEC.channels:
            raise ValueError("the residual head needs latents of the default codec")
        lr = np.asarray(lr, np.float32) / max(1.0 - float(level), 1e-3)
        return upsample_decoded(lr, self.config.upsample).astype(self.dtype)

    def _precondition(self, out, z, t, b) -> Tensor:
        k, scale = residual_coefficients(t, self.config.prior_std)
        base = k * (z - (1 - t) * b) - b
        return ad.add(ad.mul(out, scale), base.astype(self.dtype))

    def __call__(self, z_t, t: float, cond: Condition) -> Tensor:
        return self.velocity(z_t, t, cond)
