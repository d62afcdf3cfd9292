import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from gvrlab.degrade import (
    BlurKernelSpec,
    EllipseSpec,
    FlowDegradeParams,
    blend_colors,
    degrade_clip,
    ellipse_color,
    estimate_flow,
    motion_blur,
    motion_mask,
    pyramid_levels,
    sample_ellipses,
)
from gvrlab.media import Clip
from gvrlab.tensor import Rng


def texture(h, w, seed=0, pad=20):
    base = ndimage.gaussian_filter(np.random.default_rng(seed).random((h + 2 * pad, w + 2 * pad)), 1.5)
    return (base - base.min()) / (base.max() - base.min())


def shifted_pair(h, w, dx, dy, seed=0, pad=20):
    """prev and curr with curr(p) = prev(p + (dx, dy))."""
    base = texture(h, w, seed, pad)
    yy, xx = np.mgrid[0:h, 0:w]
    prev = base[pad:pad + h, pad:pad + w]
    curr = ndimage.map_coordinates(base, [yy + pad + dy, xx + pad + dx], order=3)
    return prev, curr


def laplacian_var(img):
    lap = ndimage.convolve(img, np.array([[0, 1, 0], [1, -4, 1], [0, 1, 0]], float))
    return lap[1:-1, 1:-1].var()


# --- flow -------------------------------------------------------------------


def test_pyramid_levels():
    assert pyramid_levels(32, 32) == 1
    assert pyramid_levels(64, 80) == 2
    assert pyramid_levels(512, 896) == 5


def test_flow_identical_frames_zero():
    prev = texture(64, 64)
    assert np.abs(estimate_flow(prev, prev)).max() < 0.1


@pytest.mark.parametrize("d", [(3, 0), (-2, 5)])
def test_flow_translation_oracle(d):
    prev, curr = shifted_pair(64, 80, *d)
    flow = estimate_flow(prev, curr)[8:-8, 8:-8]
    assert abs(np.median(flow[..., 0]) - d[0]) <= 0.5
    assert abs(np.median(flow[..., 1]) - d[1]) <= 0.5


def test_flow_rgb_input_accepted():
    prev, curr = shifted_pair(48, 48, 1, 0)
    rgb = lambda x: np.repeat(x[..., None], 3, -1)  # noqa: E731
    flow = estimate_flow(rgb(prev), rgb(curr))
    assert flow.shape == (48, 48, 2)
    assert abs(np.median(flow[8:-8, 8:-8, 0]) - 1) <= 0.5


def test_flow_rejects_small_frames():
    with pytest.raises(ValueError, match="32x32"):
        estimate_flow(np.zeros((31, 64)), np.zeros((31, 64)))


def test_flow_bounded():
    a, b = texture(40, 40, 1)[:40, :40], texture(40, 40, 2)[:40, :40]
    flow = estimate_flow(a, b)
    assert np.isfinite(flow).all() and np.linalg.norm(flow, axis=-1).max() <= 40 + 1e-4


# --- mask --------------------------------------------------------------------


def test_mask_zero_flow_empty():
    assert motion_mask(np.zeros((20, 20, 2)), 1.5).area == 0


def test_mask_uniform_fast_full():
    flow = np.full((20, 20, 2), 3.0 / math.sqrt(2))
    assert motion_mask(flow, 1.5).mask.all()


def test_mask_half_plane():
    flow = np.zeros((24, 24, 2))
    flow[:, 12:, 0] = 3.0
    m = motion_mask(flow, 1.5).mask
    expect = np.zeros((24, 24), bool)
    expect[:, 12:] = True
    diff = np.argwhere(m != expect)
    assert all(abs(c - 12) <= 1 for _, c in diff)


def test_mask_rejects_bad_tau():
    with pytest.raises(ValueError):
        motion_mask(np.zeros((4, 4, 2)), 0.0)


# --- ellipses -------------------------------------------------------------------


def test_ellipses_empty_mask():
    assert sample_ellipses(np.zeros((8, 8), bool), np.zeros((8, 8, 2)), Rng(0)) == []


def test_ellipses_on_mask_and_oriented():
    mask = np.zeros((40, 40), bool)
    mask[5:20, 10:30] = True
    flow = np.zeros((40, 40, 2))
    flow[..., 0] = 4.0
    es = sample_ellipses(mask, flow, Rng(1), density=0.5)
    assert es
    for e in es:
        assert mask[int(e.center[1]), int(e.center[0])]
        assert abs(e.theta) <= 1e-6
        assert e.a == 8.0 and e.b == 4.0
        assert 0.3 <= e.strength <= 0.7


def test_ellipse_count_formula():
    mask = np.ones((30, 30), bool)
    flow = np.zeros((30, 30, 2))
    flow[..., 1] = 1.0  # a = 4, b = 2
    es = sample_ellipses(mask, flow, Rng(2), density=0.5)
    assert len(es) == math.ceil(0.5 * 900 / (math.pi * 8))


def test_ellipse_axis_clamp():
    mask = np.ones((4, 4), bool)
    flow = np.full((4, 4, 2), 100.0)
    assert all(e.a == 32 for e in sample_ellipses(mask, flow, Rng(3)))


def test_ellipse_validation():
    with pytest.raises(ValueError):
        EllipseSpec((0, 0), 2, 3, 0, 0.5)
    with pytest.raises(ValueError):
        EllipseSpec((0, 0), 3, 2, 0, 1.5)


# --- blending ------------------------------------------------------------------


def test_blend_no_ellipses_bitwise():
    curr = np.random.default_rng(4).random((16, 16, 3)).astype(np.float32)
    out = blend_colors(curr, curr[::-1].copy(), np.zeros((16, 16, 2)), [], Rng(0))
    assert out.tobytes() == curr.tobytes()


def test_blend_constant_frames():
    c = np.full((20, 20, 3), 0.25)
    e = EllipseSpec((10, 10), 6, 3, 0.4, 0.9)
    out = blend_colors(c, c.copy(), np.zeros((20, 20, 2)), [e], Rng(0))
    np.testing.assert_allclose(out, 0.25, atol=1e-12)


def test_blend_red_into_blue_profile():
    h = w = 33
    red = np.zeros((h, w, 3))
    red[..., 0] = 1
    blue = np.zeros((h, w, 3))
    blue[..., 2] = 1
    e = EllipseSpec((16.0, 16.0), 8.0, 4.0, 0.0, 1.0)
    out = blend_colors(blue, red, np.zeros((h, w, 2)), [e], Rng(5))
    np.testing.assert_allclose(out[16, 16], [1, 0, 0], atol=1e-12)
    for dx in range(0, 12):
        wgt = max(0.0, 1 - dx / 8)
        np.testing.assert_allclose(out[16, 16 + dx], [wgt, 0, 1 - wgt], atol=1e-12)
    # vertical semi-axis is 4
    np.testing.assert_allclose(out[16 + 2, 16], [0.5, 0, 0.5], atol=1e-12)
    np.testing.assert_array_equal(out[0], blue[0])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_blend_convexity_and_locality(seed):
    g = np.random.default_rng(seed)
    curr = g.random((24, 24, 3))
    prev = g.random((24, 24, 3))
    flow = g.normal(0, 2, (24, 24, 2))
    e = EllipseSpec((float(g.integers(0, 24)), float(g.integers(0, 24))), 6.0, 3.0, float(g.uniform(-3, 3)), 0.6)
    out = blend_colors(curr, prev, flow, [e], Rng(seed, 1))
    color = ellipse_color(prev, flow, e, Rng(seed, 1))
    lo = np.minimum(curr, color) - 1e-12
    hi = np.maximum(curr, color) + 1e-12
    assert np.all((out >= lo) & (out <= hi))
    yy, xx = np.mgrid[0:24, 0:24]
    outside = e.weight(xx, yy) == 0
    assert out[outside].tobytes() == curr[outside].tobytes()


# --- blur ----------------------------------------------------------------------


def test_kernel_normalized_and_odd():
    for m in (0.5, 2.0, 5.0, 7.3, 40):
        spec = BlurKernelSpec.from_motion(m, 0.7)
        assert spec.length % 2 == 1 and 3 <= spec.length <= 31
        assert abs(spec.weights.sum() - 1) <= 1e-6
        assert abs(spec.kernel2d().sum() - 1) <= 1e-12
    assert BlurKernelSpec.from_motion(5.0, 0).length == 11


def test_blur_zero_flow_bitwise():
    f = np.random.default_rng(6).random((40, 40, 3)).astype(np.float32)
    assert motion_blur(f, np.zeros((40, 40, 2))).tobytes() == f.tobytes()


def test_blur_constant_image():
    f = np.full((40, 48, 3), 0.6)
    flow = np.random.default_rng(7).normal(0, 6, (40, 48, 2))
    np.testing.assert_allclose(motion_blur(f, flow), 0.6, atol=1e-12)


def test_blur_vertical_edge_matches_1d_box():
    img = np.zeros((48, 48))
    img[:, 24:] = 1.0
    flow = np.zeros((48, 48, 2))
    flow[..., 0] = 5.0
    out = motion_blur(img, flow)
    padded = np.pad(img, ((0, 0), (5, 5)), mode="edge")
    ref = np.stack([np.convolve(row, np.full(11, 1 / 11), mode="valid") for row in padded])
    assert np.abs(out - ref).max() <= 1e-5


def test_blur_preserves_block_means():
    yy, xx = np.mgrid[0:64, 0:64]
    img = 0.5 + 0.3 * np.sin(2 * np.pi * xx / 16) * np.cos(2 * np.pi * yy / 16)
    flow = np.zeros((64, 64, 2))
    flow[..., 0], flow[..., 1] = 3.0, 2.0
    out = motion_blur(img, flow)
    for r in range(16, 48, 16):
        for c in range(16, 48, 16):
            blk = (slice(r, r + 16), slice(c, c + 16))
            assert abs(out[blk].mean() - img[blk].mean()) <= 1e-3


def test_blur_static_blocks_untouched():
    img = np.random.default_rng(8).random((64, 64))
    flow = np.zeros((64, 64, 2))
    flow[:16, :16, 0] = 6.0
    out = motion_blur(img, flow, block=16, overlap=8)
    # fade support reaches 4 px past the block; kernel reach is irrelevant
    assert out[:, 20:].tobytes() == img[:, 20:].tobytes()
    assert out[20:].tobytes() == img[20:].tobytes()
    assert not np.array_equal(out[:16, :16], img[:16, :16])


# --- clip pipeline --------------------------------------------------------------


def test_params_round_trip_and_validation():
    p = FlowDegradeParams(tau_px=2.0, density=0.1)
    assert FlowDegradeParams.from_dict(p.to_dict()) == p
    with pytest.raises(ValueError):
        FlowDegradeParams(density=0)


def test_degrade_static_clip_identity():
    frame = np.repeat(texture(48, 48)[..., None], 3, -1)[:48, :48].astype(np.float32)
    clip = Clip(np.stack([frame] * 3))
    out = degrade_clip(clip, rng=Rng(0))
    np.testing.assert_allclose(out.frames, clip.frames, atol=1e-6)


def test_degrade_needs_two_frames():
    with pytest.raises(ValueError, match="2 frames"):
        degrade_clip(Clip(np.zeros((1, 32, 32, 3), np.float32)))


def moving_square_clip(t=3, size=96, step=4):
    g = np.random.default_rng(10)
    bg = np.repeat(ndimage.gaussian_filter(g.random((size, size)), 1.0)[..., None], 3, -1) * 0.4
    sq = g.random((20, 20, 3)) * 0.5 + 0.5
    frames = []
    for i in range(t):
        f = bg.copy()
        x0 = 24 + step * i
        f[38:58, x0:x0 + 20] = sq
        frames.append(f)
    return Clip(np.stack(frames).astype(np.float32))


def test_degrade_moving_square():
    clip = moving_square_clip()
    out = degrade_clip(clip, FlowDegradeParams(density=0.5), Rng(3))
    assert out.frames[0].tobytes() == clip.frames[0].tobytes()
    f_in, f_out = clip.frames[2], out.frames[2]
    sq = (slice(40, 56), slice(34, 50))
    gray = lambda x: x.mean(-1)  # noqa: E731
    assert laplacian_var(gray(f_out[sq])) <= 0.7 * laplacian_var(gray(f_in[sq]))
    far = (slice(0, 16), slice(0, 96))
    assert f_out[far].tobytes() == f_in[far].tobytes()
    assert f_out[80:].tobytes() == f_in[80:].tobytes()


def test_degrade_deterministic_across_workers():
    clip = moving_square_clip(t=4)
    a = degrade_clip(clip, rng=Rng(11), workers=1)
    b = degrade_clip(clip, rng=Rng(11), workers=3)
    assert a.frames.tobytes() == b.frames.tobytes()
