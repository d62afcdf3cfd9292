"""Full, shifted-window and sparse local attention over latent token grids.

Token grids are arrays of shape ``(T, H, W, D)`` where ``T`` counts latent
frames, ``(H, W)`` is the spatial token grid and ``D = heads * head_dim``.

Every mode reduces to one primitive: a list of *groups*, each pairing a
set of query tokens with the key/value tokens they may see, followed by
a per-head softmax over that key set. Groups never share query tokens.

* full: one group per temporal unit.
* swin: one group per spatial window per frame (optionally cyclically
  shifted by half a window, without wrap masks).
* sparse local: one group per window; keys are the window itself plus the
  ``top_k`` windows anywhere in the unit whose mean key best matches the
  window's mean query (per-head dot products, averaged over heads).

The literal operators below (``full_attention``, ``swin_attention``,
``sparse_local_attention``, ``interleaved_temporal_wrap``) roll and slice
arrays. :func:`plan_groups` produces the same groups by index arithmetic
for the differentiable path used inside the model.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .media import emit_report
from .tensor import Tensor, record, value

Group = tuple[np.ndarray, np.ndarray]


# --- layouts ------------------------------------------------------------------


@dataclass(frozen=True)
class WindowPartition:
    """Non-overlapping windows of one frame; edge windows may be smaller."""

    height: int
    width: int
    window_h: int
    window_w: int
    windows: tuple[np.ndarray, ...] = field(repr=False)

    @classmethod
    def build(cls, height: int, width: int, window_h: int, window_w: int) -> "WindowPartition":
        if min(height, width, window_h, window_w) < 1:
            raise ValueError("grid and window extents must be >= 1")
        wh, ww = min(window_h, height), min(window_w, width)
        wins = []
        for r0 in range(0, height, wh):
            for c0 in range(0, width, ww):
                rows = np.arange(r0, min(r0 + wh, height))
                cols = np.arange(c0, min(c0 + ww, width))
                wins.append((rows[:, None] * width + cols[None, :]).reshape(-1))
        return cls(height, width, wh, ww, tuple(wins))

    def __len__(self) -> int:
        return len(self.windows)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([w.size for w in self.windows])


@dataclass(frozen=True)
class TemporalUnitPlan:
    """Slices latent frames into units of ``unit`` frames.

    Even layers group consecutive frames; odd layers first roll the
    sequence back by ``shift`` frames (default ``unit // 2``) so each unit
    straddles two neighbours of the previous layer.
    """

    unit: int
    shift: int | None = None

    def __post_init__(self):
        if self.unit <= 0:
            raise ValueError("temporal unit length must be positive")

    @property
    def offset(self) -> int:
        return self.unit // 2 if self.shift is None else self.shift

    def layer_offset(self, layer_index: int) -> int:
        return self.offset if layer_index % 2 == 1 else 0

    def units(self, num_frames: int, layer_index: int) -> list[np.ndarray]:
        """Original frame indices of each unit, in processing order."""
        if num_frames <= self.unit:
            return [np.arange(num_frames)]
        s = self.layer_offset(layer_index) % num_frames
        order = (np.arange(num_frames) + s) % num_frames
        return [order[i:i + self.unit] for i in range(0, num_frames, self.unit)]


# --- core engine ------------------------------------------------------------------


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    n, d = x.shape
    if d % heads:
        raise ValueError(f"model width {d} is not divisible by {heads} heads")
    return x.reshape(n, heads, d // heads)


def _buckets(groups: Sequence[Group]):
    by_shape: dict[tuple[int, int], list[int]] = {}
    for gi, (qi, ki) in enumerate(groups):
        by_shape.setdefault((qi.size, ki.size), []).append(gi)
    for (nq, nk), members in by_shape.items():
        qidx = np.stack([groups[g][0] for g in members])
        kidx = np.stack([groups[g][1] for g in members])
        yield members, qidx, kidx


def _check_groups(groups: Sequence[Group], n: int) -> None:
    seen = np.zeros(n, dtype=np.int64)
    for qi, _ in groups:
        np.add.at(seen, qi, 1)
    if np.any(seen != 1):
        raise ValueError("attention groups must cover every query token exactly once")


def grouped_attention_arrays(q, k, v, groups: Sequence[Group], heads: int, return_weights=False):
    """Forward pass on flat ``(N, D)`` arrays. Optionally returns per-group weights."""
    q, k, v = np.asarray(q), np.asarray(k), np.asarray(v)
    n, d = q.shape
    _check_groups(groups, n)
    qh, kh, vh = _split_heads(q, heads), _split_heads(k, heads), _split_heads(v, heads)
    scale = 1.0 / math.sqrt(d // heads)
    out = np.zeros((n, heads, d // heads), dtype=np.result_type(q, k, v))
    weights: list = [None] * len(groups)
    for members, qidx, kidx in _buckets(groups):
        Q = qh[qidx].transpose(0, 2, 1, 3)  # G, h, nq, dh
        K = kh[kidx].transpose(0, 2, 1, 3)
        V = vh[kidx].transpose(0, 2, 1, 3)
        s = (Q @ K.transpose(0, 1, 3, 2)) * scale
        s = s - s.max(axis=-1, keepdims=True)
        p = np.exp(s)
        p /= p.sum(axis=-1, keepdims=True)
        o = (p @ V).transpose(0, 2, 1, 3)  # G, nq, h, dh
        out[qidx.reshape(-1)] = o.reshape(-1, heads, d // heads)
        if return_weights:
            for j, g in enumerate(members):
                weights[g] = p[j]
    out = out.reshape(n, d)
    return (out, weights) if return_weights else out


def grouped_attention(q, k, v, groups: Sequence[Group], heads: int):
    """Differentiable grouped attention on flat ``(N, D)`` operands."""
    qv, kv, vv = value(q), value(k), value(v)
    n, d = qv.shape
    _check_groups(groups, n)
    dh = d // heads
    qh, kh, vh = _split_heads(qv, heads), _split_heads(kv, heads), _split_heads(vv, heads)
    scale = 1.0 / math.sqrt(dh)
    out = np.zeros((n, heads, dh), dtype=qv.dtype)
    saved = []
    for members, qidx, kidx in _buckets(groups):
        Q = qh[qidx].transpose(0, 2, 1, 3)
        K = kh[kidx].transpose(0, 2, 1, 3)
        V = vh[kidx].transpose(0, 2, 1, 3)
        s = (Q @ K.transpose(0, 1, 3, 2)) * scale
        s = s - s.max(axis=-1, keepdims=True)
        p = np.exp(s)
        p /= p.sum(axis=-1, keepdims=True)
        out[qidx.reshape(-1)] = (p @ V).transpose(0, 2, 1, 3).reshape(-1, heads, dh)
        saved.append((qidx, kidx, Q, K, V, p))
    out = out.reshape(n, d)
    if not any(isinstance(t, Tensor) for t in (q, k, v)):
        return out

    def vjp(g):
        g = g.reshape(n, heads, dh)
        gq = np.zeros_like(qh)
        gk = np.zeros_like(kh)
        gv = np.zeros_like(vh)
        for qidx, kidx, Q, K, V, p in saved:
            dO = g[qidx].transpose(0, 2, 1, 3)  # G, h, nq, dh
            dV = p.transpose(0, 1, 3, 2) @ dO
            dP = dO @ V.transpose(0, 1, 3, 2)
            dS = p * (dP - (dP * p).sum(axis=-1, keepdims=True)) * scale
            dQ = dS @ K
            dK = dS.transpose(0, 1, 3, 2) @ Q
            gq[qidx.reshape(-1)] += dQ.transpose(0, 2, 1, 3).reshape(-1, heads, dh)
            np.add.at(gk, kidx.reshape(-1), dK.transpose(0, 2, 1, 3).reshape(-1, heads, dh))
            np.add.at(gv, kidx.reshape(-1), dV.transpose(0, 2, 1, 3).reshape(-1, heads, dh))
        return gq.reshape(n, d), gk.reshape(n, d), gv.reshape(n, d)

    return record(out, (q, k, v), vjp)


# --- window selection -----------------------------------------------------------------


def window_relevance(q: np.ndarray, k: np.ndarray, windows: Sequence[np.ndarray], heads: int) -> np.ndarray:
    """Head-averaged dot products of window-mean queries and window-mean keys."""
    qm = np.stack([q[w].mean(axis=0) for w in windows])
    km = np.stack([k[w].mean(axis=0) for w in windows])
    qm = qm.reshape(len(windows), heads, -1)
    km = km.reshape(len(windows), heads, -1)
    return np.einsum("ahd,bhd->ab", qm, km) / heads


def select_windows(scores: np.ndarray, top_k: int) -> list[np.ndarray]:
    """For each row, the ``top_k`` highest-scoring other windows (ties -> lower index)."""
    if top_k < 0:
        raise ValueError("top_k must be >= 0")
    nw = scores.shape[0]
    picks = []
    for a in range(nw):
        if top_k >= nw - 1:
            picks.append(np.array([b for b in range(nw) if b != a], dtype=np.int64))
            continue
        order = np.argsort(-scores[a], kind="stable")
        order = order[order != a][:top_k]
        picks.append(np.sort(order))
    return picks


def sparse_groups(
    q: np.ndarray,
    k: np.ndarray,
    windows: Sequence[np.ndarray],
    heads: int,
    top_k: int,
    gating: str = "window",
) -> list[Group]:
    """Groups for sparse local attention over ``windows`` (flat token indices)."""
    if gating == "window":
        picks = select_windows(window_relevance(q, k, windows, heads), top_k)
        return [
            (w, np.concatenate([w] + [windows[b] for b in sel]))
            for w, sel in zip(windows, picks)
        ]
    if gating == "query":
        # per-token selection against window-mean keys
        km = np.stack([k[w].mean(axis=0) for w in windows]).reshape(len(windows), heads, -1)
        groups = []
        for a, w in enumerate(windows):
            qt = q[w].reshape(w.size, heads, -1)
            scores = np.einsum("nhd,bhd->nb", qt, km) / heads
            for row, tok in zip(scores, w):
                order = np.argsort(-row, kind="stable")
                order = order[order != a]
                sel = np.sort(order if top_k >= len(windows) - 1 else order[:top_k])
                groups.append((np.array([tok]), np.concatenate([w] + [windows[b] for b in sel])))
        return groups
    raise ValueError(f"unknown gating {gating!r}")


# --- literal operators on (T, H, W, D) grids ------------------------------------------


def _flat(x) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 4:
        raise ValueError(f"token grid must be (T, H, W, D), got {x.shape}")
    return x.reshape(-1, x.shape[-1])


def _check_operands(q, k, v):
    q, k, v = np.asarray(q), np.asarray(k), np.asarray(v)
    if not (q.shape == k.shape == v.shape):
        raise ValueError(f"q/k/v shapes differ: {q.shape}, {k.shape}, {v.shape}")
    return q, k, v


def full_attention(q, k, v, heads: int, return_weights: bool = False):
    """Softmax attention over all tokens of the grid jointly."""
    q, k, v = _check_operands(q, k, v)
    n = q.shape[0] * q.shape[1] * q.shape[2]
    idx = np.arange(n)
    res = grouped_attention_arrays(_flat(q), _flat(k), _flat(v), [(idx, idx)], heads, return_weights)
    if return_weights:
        return res[0].reshape(q.shape), res[1]
    return res.reshape(q.shape)


def _frame_window_groups(t: int, part: WindowPartition) -> list[Group]:
    per = part.height * part.width
    return [(f * per + w, f * per + w) for f in range(t) for w in part.windows]


def swin_attention(q, k, v, heads: int, window: tuple[int, int], shifted: bool = False,
                   return_weights: bool = False):
    """Attention inside each spatial window of each frame.

    With ``shifted`` the grid is cyclically rolled by half a window before
    partitioning and rolled back afterwards. Windows larger than the frame
    are clamped to the frame.
    """
    q, k, v = _check_operands(q, k, v)
    t, h, w, _ = q.shape
    part = WindowPartition.build(h, w, *window)
    sh, sw = (part.window_h // 2, part.window_w // 2) if shifted else (0, 0)
    roll = lambda x: np.roll(x, (-sh, -sw), axis=(1, 2))  # noqa: E731
    qs, ks, vs = roll(q), roll(k), roll(v)
    res = grouped_attention_arrays(
        _flat(qs), _flat(ks), _flat(vs), _frame_window_groups(t, part), heads, return_weights
    )
    out, weights = res if return_weights else (res, None)
    out = np.roll(out.reshape(q.shape), (sh, sw), axis=(1, 2))
    return (out, weights) if return_weights else out


def sparse_local_attention(q, k, v, heads: int, window: tuple[int, int], top_k: int,
                           gating: str = "window", return_weights: bool = False):
    """Each window attends to itself plus its ``top_k`` most relevant windows.

    Candidates are every window of every frame in the grid, including
    later frames. The softmax is taken jointly over the union of tokens.
    """
    q, k, v = _check_operands(q, k, v)
    t, h, w, _ = q.shape
    part = WindowPartition.build(h, w, *window)
    per = h * w
    windows = [f * per + win for f in range(t) for win in part.windows]
    if top_k < 0:
        raise ValueError("top_k must be >= 0")
    qf, kf, vf = _flat(q), _flat(k), _flat(v)
    groups = sparse_groups(qf, kf, windows, heads, top_k, gating)
    res = grouped_attention_arrays(qf, kf, vf, groups, heads, return_weights)
    if return_weights:
        return res[0].reshape(q.shape), res[1]
    return res.reshape(q.shape)


def interleaved_temporal_wrap(
    attn_op: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray],
    q,
    k,
    v,
    plan: TemporalUnitPlan,
    layer_index: int,
) -> np.ndarray:
    """Run ``attn_op`` independently on temporal units of the grid.

    Odd layers roll the frame axis back by the plan's offset before slicing
    and roll the result forward again afterwards.
    """
    q, k, v = _check_operands(q, k, v)
    t = q.shape[0]
    if t <= plan.unit:
        return attn_op(q, k, v)
    s = plan.layer_offset(layer_index)
    qs, ks, vs = (np.roll(x, -s, axis=0) for x in (q, k, v))
    outs = [attn_op(qs[i:i + plan.unit], ks[i:i + plan.unit], vs[i:i + plan.unit]) for i in range(0, t, plan.unit)]
    return np.roll(np.concatenate(outs, axis=0), s, axis=0)


# --- differentiable planning --------------------------------------------------------------


@dataclass(frozen=True)
class AttentionSpec:
    mode: str = "full"  # full | swin | sparse
    heads: int = 4
    window: tuple[int, int] = (4, 3)
    top_k: int = 1
    gating: str = "window"

    def __post_init__(self):
        if self.mode not in ("full", "swin", "sparse"):
            raise ValueError(f"unknown attention mode {self.mode!r}")


def plan_groups(
    spec: AttentionSpec,
    grid: tuple[int, int, int],
    q: np.ndarray | None = None,
    k: np.ndarray | None = None,
    plan: TemporalUnitPlan | None = None,
    layer_index: int = 0,
    spatial_shift: bool = True,
) -> list[Group]:
    """Groups over flat token indices of a ``(T, H, W)`` grid for one layer.

    Matches the literal operators wrapped by ``interleaved_temporal_wrap``;
    swin windows shift spatially on odd layers.
    """
    t, h, w = grid
    per = h * w
    units = plan.units(t, layer_index) if plan is not None else [np.arange(t)]
    part = WindowPartition.build(h, w, *spec.window)
    groups: list[Group] = []
    for frames in units:
        if spec.mode == "full":
            idx = (frames[:, None] * per + np.arange(per)[None, :]).reshape(-1)
            groups.append((idx, idx))
        elif spec.mode == "swin":
            shifted = spatial_shift and layer_index % 2 == 1
            sh, sw = (part.window_h // 2, part.window_w // 2) if shifted else (0, 0)
            for f in frames:
                for win in part.windows:
                    r, c = win // w, win % w
                    orig = ((r + sh) % h) * w + (c + sw) % w
                    idx = f * per + orig
                    groups.append((idx, idx))
        else:
            if q is None or k is None:
                raise ValueError("sparse planning needs query and key values")
            windows = [f * per + win for f in frames for win in part.windows]
            groups.extend(sparse_groups(q, k, windows, spec.heads, spec.top_k, spec.gating))
    return groups


# --- FLOP accounting ------------------------------------------------------------------


@dataclass
class FlopReport:
    mode: str
    attention: int
    selection: int
    projection: int
    full_attention: int

    @property
    def total(self) -> int:
        return self.attention + self.selection

    @property
    def ratio(self) -> float:
        return self.total / self.full_attention


def count_flops(
    grid: tuple[int, int, int],
    dim: int,
    heads: int,
    mode: str,
    window: tuple[int, int] = (12, 9),
    top_k: int = 1,
    unit: int | None = None,
) -> FlopReport:
    """Analytic multiply-add counts (2 FLOPs per MAC) for one attention layer.

    ``attention`` covers the QK^T and AV products, ``selection`` the window
    relevance scores of sparse mode, ``projection`` the Q/K/V/output linear
    maps (identical across modes, so excluded from the ratio). For sparse
    mode the selected windows are assumed to be the largest candidates,
    which bounds the data-dependent true count from above.
    """
    t, h, w = grid
    if dim % heads:
        raise ValueError("dim must be divisible by heads")
    per = h * w
    frames_per_unit = [t] if unit is None or unit >= t else [
        min(unit, t - i) for i in range(0, t, unit)
    ]
    part = WindowPartition.build(h, w, *window)
    sizes = part.sizes

    def full_count() -> int:
        return sum(4 * (f * per) ** 2 * dim for f in frames_per_unit)

    full = full_count()
    selection = 0
    if mode == "full":
        attn = full
    elif mode == "swin":
        attn = t * int(sum(4 * int(s) ** 2 * dim for s in sizes))
    elif mode == "sparse":
        attn = 0
        for f in frames_per_unit:
            all_sizes = np.tile(sizes, f)
            nw = all_sizes.size
            for a, n_w in enumerate(all_sizes):
                others = np.sort(np.delete(all_sizes, a))[::-1][: min(top_k, nw - 1)]
                attn += 4 * int(n_w) * (int(n_w) + int(others.sum())) * dim
            if 0 < top_k < nw - 1:
                # ranking is skipped when nothing or everything is selected
                selection += 2 * nw * nw * dim
    else:
        raise ValueError(f"unknown attention mode {mode!r}")
    projection = 4 * 2 * t * per * dim * dim
    return FlopReport(mode, int(attn), int(selection), int(projection), int(full))


# --- benchmark ------------------------------------------------------------------------


BENCH_COLUMNS = ("mode", "Tl", "Hg", "Wg", "D", "heads", "window_h", "window_w", "top_k",
                 "analytic_flops", "wall_ms")


def bench_attention(
    modes: Iterable[str],
    sizes: Iterable[tuple[int, int, int]],
    repetitions: int = 3,
    dim: int = 64,
    heads: int = 4,
    window: tuple[int, int] = (4, 3),
    top_k: int = 1,
    seed: int = 0,
    path=None,
    timer: Callable[[], float] = time.perf_counter,
) -> dict[str, list]:
    """Median wall-clock and analytic FLOPs per (mode, size)."""
    rows: dict[str, list] = {c: [] for c in BENCH_COLUMNS}
    rng = np.random.default_rng(seed)
    modes = list(modes)
    for size in sizes:
        t, h, w = size
        q, k, v = (rng.standard_normal((t, h, w, dim)).astype(np.float32) for _ in range(3))
        for mode in modes:
            op = {
                "full": lambda: full_attention(q, k, v, heads),
                "swin": lambda: swin_attention(q, k, v, heads, window),
                "sparse": lambda: sparse_local_attention(q, k, v, heads, window, top_k),
            }[mode]
            times = []
            for _ in range(max(1, repetitions)):
                start = timer()
                op()
                times.append((timer() - start) * 1000.0)
            report = count_flops(size, dim, heads, mode, window, top_k)
            pw = WindowPartition.build(h, w, *window)
            for col, val in zip(
                BENCH_COLUMNS,
                (mode, t, h, w, dim, heads, pw.window_h, pw.window_w, top_k, report.total,
                 float(np.median(times))),
            ):
                rows[col].append(val)
    if path is not None:
        emit_report(rows, path)
    return rows
