"""Executable versions of the closed-form sanity examples, one check each.

``run()`` executes every registered check and reports ``(name, ok, detail)``
triples; the CLI ``selftest`` command prints them and exits nonzero on any
failure.
"""

from __future__ import annotations

import math
import tempfile
import traceback
from pathlib import Path
from typing import Callable

import numpy as np

CHECKS: list[tuple[str, Callable[[], None]]] = []


def check(name: str):
    def register(fn):
        CHECKS.append((name, fn))
        return fn

    return register


def _raises(exc_type, fn, match: str = "") -> None:
    try:
        fn()
    except exc_type as exc:
        assert match in str(exc), f"message {str(exc)!r} lacks {match!r}"
        return
    raise AssertionError(f"expected {exc_type.__name__}")


# --- tensor core -------------------------------------------------------------------


@check("rng: same seed and stream give identical draws")
def _():
    from .tensor import Rng, randn

    assert np.array_equal(randn(Rng(3).child("x", 2), (4, 5)), randn(Rng(3).child("x", 2), (4, 5)))


@check("dct: constant frame has only the DC coefficient")
def _():
    from .tensor import dct2d

    c = dct2d(np.full((6, 4), 0.7))
    assert abs(c[0, 0] - 0.7 * math.sqrt(24)) < 1e-9
    c[0, 0] = 0
    assert np.max(np.abs(c)) < 1e-9


@check("dct: round trip on a random 8x8 frame")
def _():
    from .tensor import dct2d, idct2d

    x = np.random.default_rng(0).random((8, 8))
    assert np.max(np.abs(idct2d(dct2d(x)) - x)) < 1e-5


@check("resize: constant in, same constant out")
def _():
    from .tensor import bilinear_resize

    out = np.asarray(bilinear_resize(np.full((1, 2, 3, 5), 0.25), 7, 4))
    assert np.allclose(out, 0.25)


@check("resize: identity size is bit-identical")
def _():
    from .tensor import bilinear_resize

    x = np.random.default_rng(1).random((2, 5, 6))
    assert np.array_equal(np.asarray(bilinear_resize(x, 5, 6)), x)


@check("conv: delta kernel is the identity")
def _():
    from .tensor import conv2d

    x = np.random.default_rng(2).random((1, 6, 7))
    k = np.zeros((1, 1, 3, 3))
    k[0, 0, 1, 1] = 1
    assert np.allclose(np.asarray(conv2d(x, k)), x)


@check("conv: 3x3 box on a constant image stays constant in the interior")
def _():
    from .tensor import conv2d

    x = np.full((1, 6, 6), 2.0)
    out = np.asarray(conv2d(x, np.full((1, 1, 3, 3), 1 / 9), padding=0))
    assert np.allclose(out, 2.0)


@check("autodiff: d sum(x) / dx is all ones")
def _():
    from .tensor import GradTape, Tensor, sum_

    x = Tensor(np.random.default_rng(3).random((2, 3)), requires_grad=True)
    with GradTape() as tape:
        loss = sum_(x)
    assert np.array_equal(tape.gradient(loss, [x])[0], np.ones((2, 3)))


@check("autodiff: d sum(x^2) / dx at [1, 2, 3] is [2, 4, 6]")
def _():
    from .tensor import GradTape, Tensor, square, sum_

    x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    with GradTape() as tape:
        loss = sum_(square(x))
    assert np.allclose(tape.gradient(loss, [x])[0], [2, 4, 6])


# --- media ---------------------------------------------------------------------------


@check("media: clip write/read error within one quantization step")
def _():
    from .media import Clip, read_clip, write_clip

    clip = Clip(np.random.default_rng(4).random((3, 6, 8, 3)).astype(np.float32))
    with tempfile.TemporaryDirectory() as tmp:
        back = read_clip(write_clip(clip, Path(tmp) / "c"))
    assert np.max(np.abs(back.frames - clip.frames)) <= 1 / 255 + 1e-7


@check("media: 17 numbered frames read as T = 17")
def _():
    from .media import Clip, read_clip, write_clip

    with tempfile.TemporaryDirectory() as tmp:
        write_clip(Clip(np.zeros((17, 4, 4, 3), np.float32)), Path(tmp) / "c")
        assert read_clip(Path(tmp) / "c").num_frames == 17


@check("media: y4m C444 read, C420 refused")
def _():
    from .media import Clip, MediaError, read_clip, write_clip

    with tempfile.TemporaryDirectory() as tmp:
        path = write_clip(Clip(np.full((2, 4, 4, 3), 0.5, np.float32)), Path(tmp) / "c.y4m")
        assert b"C444" in path.read_bytes()[:80]
        assert read_clip(path).num_frames == 2
        bad = Path(tmp) / "bad.y4m"
        bad.write_bytes(b"YUV4MPEG2 W4 H4 F24:1 C420\nFRAME\n" + bytes(24))
        _raises(MediaError, lambda: read_clip(bad), "C420")


@check("report: two rows and two columns make a three-line CSV")
def _():
    from .media import emit_report

    with tempfile.TemporaryDirectory() as tmp:
        text = emit_report({"a": [1, 2], "b": ["x", "y"]}, Path(tmp) / "r.csv").read_text()
    assert text.splitlines() == ["a,b", "1,x", "2,y"]


@check("curve: monotone ys give monotone (inverted) SVG y-coordinates")
def _():
    import re

    from .media import emit_curve

    with tempfile.TemporaryDirectory() as tmp:
        svg = emit_curve([0, 1, 2, 3], [0.0, 1.0, 2.0, 4.0], Path(tmp) / "c.svg").read_text()
    pts = re.search(r'points="([^"]+)"', svg).group(1).split()
    ys = [float(p.split(",")[1]) for p in pts]
    assert all(b < a for a, b in zip(ys, ys[1:]))


@check("report and curve: same input gives the same bytes")
def _():
    from .media import emit_curve, emit_report

    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        a = emit_report({"x": [0.1, 0.2]}, tmp / "a.csv").read_bytes()
        b = emit_report({"x": [0.1, 0.2]}, tmp / "b.csv").read_bytes()
        c = emit_curve([0, 1], [1, 2], tmp / "a.svg").read_bytes()
        d = emit_curve([0, 1], [1, 2], tmp / "b.svg").read_bytes()
    assert a == b and c == d


# --- flow degradation ----------------------------------------------------------------


def _texture(h=48, w=48, seed=0):
    from scipy.ndimage import gaussian_filter

    return gaussian_filter(np.random.default_rng(seed).random((h, w)), 1.5)


@check("flow: identical frames give zero flow")
def _():
    from .degrade import estimate_flow

    img = _texture()
    assert np.max(np.abs(estimate_flow(img, img))) < 0.1


@check("mask: zero flow gives an empty mask")
def _():
    from .degrade import motion_mask

    assert motion_mask(np.zeros((8, 9, 2))).area == 0


@check("mask: uniform flow of 2 tau gives a full mask")
def _():
    from .degrade import motion_mask

    flow = np.zeros((8, 9, 2))
    flow[..., 0] = 3.0
    assert motion_mask(flow, 1.5).mask.all()


@check("ellipses: empty mask gives none")
def _():
    from .degrade import sample_ellipses
    from .tensor import Rng

    assert sample_ellipses(np.zeros((8, 8), bool), np.zeros((8, 8, 2)), Rng(0)) == []


@check("ellipses: every centre lies on a mask pixel")
def _():
    from .degrade import sample_ellipses
    from .tensor import Rng

    mask = np.zeros((20, 20), bool)
    mask[5:12, 8:15] = True
    flow = np.zeros((20, 20, 2))
    flow[mask] = (3.0, 1.0)
    for e in sample_ellipses(mask, flow, Rng(1)):
        x, y = e.center
        assert mask[int(round(y)), int(round(x))]


@check("blend: no ellipses leaves the frame bitwise unchanged")
def _():
    from .degrade import blend_colors
    from .tensor import Rng

    f = np.random.default_rng(5).random((8, 8, 3)).astype(np.float32)
    assert np.array_equal(blend_colors(f, f[::-1].copy(), np.zeros((8, 8, 2)), [], Rng(0)), f)


@check("blend: constant prev and curr stay constant")
def _():
    from .degrade import EllipseSpec, blend_colors
    from .tensor import Rng

    f = np.full((10, 10, 3), 0.3, np.float32)
    e = [EllipseSpec((5.0, 5.0), 3.0, 1.5, 0.3, 0.5)]
    out = blend_colors(f, f.copy(), np.ones((10, 10, 2)), e, Rng(0))
    assert np.allclose(out, 0.3, atol=1e-6)


@check("blur: zero flow leaves the frame bitwise unchanged")
def _():
    from .degrade import motion_blur

    f = np.random.default_rng(6).random((32, 32, 3)).astype(np.float32)
    assert np.array_equal(motion_blur(f, np.zeros((32, 32, 2))), f)


@check("blur: constant image stays constant under any flow")
def _():
    from .degrade import motion_blur

    f = np.full((32, 32, 3), 0.6, np.float32)
    flow = np.random.default_rng(7).normal(0, 4, (32, 32, 2))
    assert np.allclose(motion_blur(f, flow), 0.6, atol=1e-6)


@check("degrade: static clip passes through")
def _():
    from .degrade import degrade_clip
    from .media import Clip

    frame = np.repeat(_texture(32, 32)[..., None], 3, -1).astype(np.float32)
    clip = Clip(np.stack([frame] * 3))
    assert np.max(np.abs(degrade_clip(clip).frames - clip.frames)) <= 1e-6


@check("degrade: one-frame clip is refused")
def _():
    from .degrade import degrade_clip
    from .media import Clip

    _raises(ValueError, lambda: degrade_clip(Clip(np.zeros((1, 16, 16, 3), np.float32))), "2 frames")


# --- codec -----------------------------------------------------------------------------


@check("codec: round trip is bitwise")
def _():
    from .codec import decode_frames, encode

    x = np.random.default_rng(8).random((9, 16, 24, 3)).astype(np.float32)
    assert np.array_equal(decode_frames(encode(x)), x)


@check("codec: 16 frames are refused")
def _():
    from .codec import encode

    _raises(ValueError, lambda: encode(np.zeros((16, 8, 8, 3), np.float32)))


@check("codec: identity-size condition upsample is unchanged")
def _():
    from .codec import upsample_condition

    lat = np.random.default_rng(9).random((2, 5, 3, 4))
    assert np.array_equal(np.asarray(upsample_condition(lat, 3, 4)), lat)


@check("codec: constant latent upsamples to a constant")
def _():
    from .codec import upsample_condition

    assert np.allclose(np.asarray(upsample_condition(np.full((1, 2, 3, 3), 0.4), 6, 6)), 0.4)


# --- rectified flow ----------------------------------------------------------------------


@check("path: t = 0 gives z0, t = 1 gives eps, midpoint arithmetic")
def _():
    from .flow_matching import add_noise

    z0, eps = np.arange(4.0), -np.arange(4.0)
    assert np.array_equal(add_noise(z0, 0.0, eps).z_t, z0)
    assert np.array_equal(add_noise(z0, 1.0, eps).z_t, eps)
    assert float(add_noise(2.0, 0.5, 0.0).z_t) == 1.0


@check("loss: exact velocity gives zero, random model gives a non-negative loss")
def _():
    from .flow_matching import OracleLinearVelocity, cfm_loss

    g = np.random.default_rng(10)
    z0, eps = g.normal(size=(3, 4)), g.normal(size=(3, 4))
    assert cfm_loss(OracleLinearVelocity(z0, eps), z0, eps, 0.3) == 0.0
    assert cfm_loss(lambda z, t, c=None: g.normal(size=z.shape), z0, eps, 0.6) >= 0.0


@check("clean prediction: exact velocity recovers z0; t = 0 returns z_t")
def _():
    from .flow_matching import add_noise, predict_clean

    g = np.random.default_rng(11)
    z0, eps = g.normal(size=5), g.normal(size=5)
    for t in (0.1, 0.5, 0.9):
        assert np.allclose(predict_clean(add_noise(z0, t, eps).z_t, t, eps - z0), z0)
    zt = g.normal(size=5)
    assert np.array_equal(predict_clean(zt, 0.0, g.normal(size=5)), zt)


@check("sampling: exact velocity integrates exactly; zero velocity keeps z_T")
def _():
    from .flow_matching import OracleLinearVelocity, ZeroVelocity, ode_sample

    g = np.random.default_rng(12)
    z0, eps = g.normal(size=(2, 3)), g.normal(size=(2, 3))
    for steps in (1, 5, 50):
        assert np.max(np.abs(ode_sample(OracleLinearVelocity(z0, eps), eps, steps) - z0)) <= 1e-5
    assert np.array_equal(ode_sample(ZeroVelocity(), eps, 7), eps)


@check("sdedit: alpha 0 is the identity; the exact field inverts its own noise")
def _():
    from .flow_matching import OracleLinearVelocity, sdedit_degrade
    from .tensor import Rng

    g = np.random.default_rng(13)
    c0, eps = g.normal(size=(2, 3)), g.normal(size=(2, 3))
    assert np.array_equal(sdedit_degrade(OracleLinearVelocity(c0, eps), c0, 0.0, 5, Rng(0)), c0)
    out = sdedit_degrade(OracleLinearVelocity(c0, eps), c0, 0.6, 10, eps=eps)
    assert np.allclose(out, c0, atol=1e-9)


@check("timesteps: point-mass bin keeps all draws inside")
def _():
    from .flow_matching import TimestepDistribution
    from .tensor import Rng

    dist = TimestepDistribution([0.0, 0.4, 0.42, 1.0], [0.0, 1.0, 0.0])
    draws = dist.sample(Rng(0), size=500)
    assert np.all((draws >= 0.4) & (draws < 0.42))


@check("detail-aware sampler: sums to one; constant trace is degenerate")
def _():
    from .flow_matching import InferenceTrace, build_detail_aware_sampler

    g = np.random.default_rng(14)
    times = list(np.linspace(1, 0, 6)[:-1])
    tr = InferenceTrace(times, [g.normal(size=(1, 2, 8, 8)) for _ in times])
    assert abs(build_detail_aware_sampler([tr]).probabilities.sum() - 1) <= 1e-6
    flat = InferenceTrace(times, [np.ones((1, 2, 8, 8))] * len(times))
    _raises(ValueError, lambda: build_detail_aware_sampler([flat]), "degenerate")


@check("augmentation: interval [0, 0] leaves the condition untouched")
def _():
    from .flow_matching import apply_noise_augmentation
    from .tensor import Rng

    c = np.random.default_rng(15).normal(size=(2, 3))
    out, a = apply_noise_augmentation(c, (0.0, 0.0), Rng(0))
    assert a == 0.0 and np.array_equal(out, c)


# --- attention -----------------------------------------------------------------------------


def _qkv(shape, seed=16):
    g = np.random.default_rng(seed)
    return tuple(g.normal(size=shape) for _ in range(3))


@check("attention: one token returns its value")
def _():
    from .attention import full_attention

    q, k, v = _qkv((1, 1, 1, 8))
    assert np.allclose(full_attention(q, k, v, 2), v)


@check("attention: identical keys average the values")
def _():
    from .attention import full_attention

    q, _, v = _qkv((1, 2, 3, 8))
    k = np.ones_like(q)
    out = full_attention(q, k, v, 2)
    assert np.allclose(out, v.reshape(-1, 8).mean(0).reshape(1, 1, 1, 8) * np.ones_like(v))


@check("swin: a whole-frame window equals full attention per frame")
def _():
    from .attention import full_attention, swin_attention

    q, k, v = _qkv((2, 4, 3, 8))
    ref = np.stack([full_attention(q[i : i + 1], k[i : i + 1], v[i : i + 1], 2)[0] for i in range(2)])
    assert np.allclose(swin_attention(q, k, v, 2, (4, 3), shifted=True), ref, atol=1e-5)


@check("swin: shifting with constant keys restores positions")
def _():
    from .attention import swin_attention

    q, _, v = _qkv((1, 4, 4, 4))
    k = np.zeros_like(q)
    # with uniform weights inside each window, shifted and unshifted outputs average the same sets
    out = swin_attention(q, k, v, 1, (4, 4), shifted=True)
    assert np.allclose(out, v.mean(axis=(1, 2), keepdims=True) * np.ones_like(v))


@check("sparse: saturated top_k equals full; top_k 0 equals unshifted windows")
def _():
    from .attention import full_attention, sparse_local_attention, swin_attention

    q, k, v = _qkv((1, 4, 6, 8))
    assert np.allclose(sparse_local_attention(q, k, v, 2, (2, 3), 3), full_attention(q, k, v, 2), atol=1e-5)
    assert np.allclose(sparse_local_attention(q, k, v, 2, (2, 3), 0), swin_attention(q, k, v, 2, (2, 3)), atol=1e-5)


@check("temporal units: one unit makes the wrap a no-op; shift round trip is bitwise")
def _():
    from .attention import TemporalUnitPlan, full_attention, interleaved_temporal_wrap

    q, k, v = _qkv((5, 2, 2, 4))
    plan = TemporalUnitPlan(5)
    op = lambda q_, k_, v_: full_attention(q_, k_, v_, 1)  # noqa: E731
    assert np.array_equal(interleaved_temporal_wrap(op, q, k, v, plan, 0), op(q, k, v))
    q, k, v = _qkv((20, 1, 1, 4))

    def identity(q_, k_, v_):
        return v_

    assert np.array_equal(interleaved_temporal_wrap(identity, q, k, v, TemporalUnitPlan(5), 1), v)


@check("flops: saturated sparse counts equal full; doubling tokens quadruples full")
def _():
    from .attention import count_flops

    full = count_flops((1, 4, 6), 16, 2, "full")
    sparse = count_flops((1, 4, 6), 16, 2, "sparse", window=(4, 6), top_k=0)
    assert sparse.attention == full.attention
    assert count_flops((2, 4, 6), 16, 2, "full", unit=2).attention == 4 * full.attention


@check("bench: one row per mode and size, analytic column from count_flops")
def _():
    from .attention import bench_attention, count_flops

    sizes = [(1, 4, 4), (1, 4, 6), (1, 6, 6)]
    rows = bench_attention(["full", "swin", "sparse"], sizes, repetitions=1, dim=8, heads=2, window=(2, 2))
    assert len(rows["mode"]) == 9
    for i, mode in enumerate(rows["mode"]):
        size = (rows["Tl"][i], rows["Hg"][i], rows["Wg"][i])
        assert rows["analytic_flops"][i] == count_flops(size, 8, 2, mode, (2, 2), 1).total


# --- model ------------------------------------------------------------------------------------


def _tiny(**kw):
    from .model import GvrConfig

    return GvrConfig(latent_channels=12, width=16, heads=2, depth=2, text_dim=4, **kw)


@check("model: output shape equals z_t shape for five configs")
def _():
    from .model import Condition, GvrModel

    configs = [_tiny(), _tiny(attention="swin", window=(2, 2)), _tiny(attention="sparse", window=(2, 2)),
               _tiny(cond_kernel_t=1), _tiny(upsample=3)]
    for cfg in configs:
        up = cfg.upsample
        z = np.zeros((2, 12, 2 * up, 2 * up))
        assert GvrModel(cfg)(z, 0.5, Condition(np.zeros((2, 12, 2, 2)))).shape == z.shape


@check("model: fresh network predicts zero velocity and the baseline loss")
def _():
    from .flow_matching import cfm_loss
    from .model import Condition, GvrModel

    g = np.random.default_rng(17)
    z0, eps = g.normal(size=(1, 12, 4, 4)), g.normal(size=(1, 12, 4, 4))
    model = GvrModel(_tiny())
    loss = float(cfm_loss(model, z0, eps, 0.4, Condition(np.zeros((1, 12, 2, 2)))).data)
    assert abs(loss - np.mean((eps - z0) ** 2)) <= 1e-6 * max(1.0, loss)


@check("training: same seed gives the same loss trace")
def _():
    from .model import GvrModel, TrainConfig, TrainSample, train

    g = np.random.default_rng(18)
    data = [TrainSample(g.normal(size=(1, 12, 4, 4)).astype(np.float32),
                        g.normal(size=(1, 12, 2, 2)).astype(np.float32), np.zeros(4, np.float32))]
    a = train(GvrModel(_tiny()), data, TrainConfig(steps=3, batch_size=2))
    b = train(GvrModel(_tiny()), data, TrainConfig(steps=3, batch_size=2))
    assert a.losses == b.losses


@check("inference: shape, determinism, trace length, worker invariance")
def _():
    from .model import GvrModel, collect_trace, infer
    from .tensor import Rng

    model = GvrModel(_tiny())
    lr = np.random.default_rng(19).normal(size=(2, 12, 2, 2)).astype(np.float32)
    out = infer(model, lr, steps=4, rng=Rng(1))
    assert out.shape == (2, 12, 4, 4)
    assert np.array_equal(out, infer(model, lr, steps=4, rng=Rng(1)))
    one = collect_trace(model, [lr, lr], steps=4, workers=1)
    two = collect_trace(model, [lr, lr], steps=4, workers=2)
    assert [len(t) for t in one] == [4, 4]
    assert all(np.array_equal(a, b) for x, y in zip(one, two) for a, b in zip(x.predictions, y.predictions))


@check("trace: exact velocity field gives a degenerate trace")
def _():
    from .flow_matching import InferenceTrace, OracleLinearVelocity, build_detail_aware_sampler, ode_sample

    g = np.random.default_rng(20)
    z0, eps = g.normal(size=(1, 2, 8, 8)), g.normal(size=(1, 2, 8, 8))
    tr = InferenceTrace()
    ode_sample(OracleLinearVelocity(z0, eps), eps, 6, trace=tr)
    _raises(ValueError, lambda: build_detail_aware_sampler([tr]), "degenerate")


@check("temporal extension: parameter count unchanged")
def _():
    from .model import GvrModel, TrainSample, extend_temporal, TrainConfig

    model = GvrModel(_tiny(temporal_unit=2))
    g = np.random.default_rng(21)
    data = [TrainSample(g.normal(size=(4, 12, 4, 4)).astype(np.float32),
                        g.normal(size=(4, 12, 2, 2)).astype(np.float32), np.zeros(4, np.float32))]
    ext, _ = extend_temporal(model, data, steps=1, unit=4, config=TrainConfig(batch_size=1))
    assert ext.parameter_count() == model.parameter_count()


# --- curation -------------------------------------------------------------------------------


@check("curation: black clip rejected for brightness; flat gray for detail")
def _():
    from .curation import curate
    from .media import Clip

    black = curate(Clip(np.zeros((10, 8, 8, 3), np.float32)))
    gray = curate(Clip(np.full((10, 8, 8, 3), 0.5, np.float32)))
    assert not black.accepted and black.reason == "brightness"
    assert gray.laplacian_variance == 0 and not gray.accepted and gray.reason == "laplacian"


def run(selected: str | None = None) -> list[tuple[str, bool, str]]:
    results = []
    for name, fn in CHECKS:
        if selected and selected not in name:
            continue
        try:
            fn()
            results.append((name, True, ""))
        except Exception as exc:  # report, don't stop
            detail = "".join(traceback.format_exception_only(type(exc), exc)).strip()
            results.append((name, False, detail))
    return results
