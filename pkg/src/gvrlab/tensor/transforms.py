"""Frequency transforms, resampling and convolutions.

Resize and convolution accept either plain arrays (returning arrays) or
:class:`~gvrlab.tensor.autodiff.Tensor` operands (returning taped Tensors).
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .autodiff import Tensor, record, value


@lru_cache(maxsize=64)
def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix ``C`` with ``C @ x`` the transform of ``x``."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    c = np.cos(np.pi * (2 * i + 1) * k / (2 * n)) * np.sqrt(2.0 / n)
    c[0, :] = np.sqrt(1.0 / n)
    c.setflags(write=False)
    return c


def _check_frame(frame) -> np.ndarray:
    arr = np.asarray(frame)
    if arr.ndim != 2:
        raise ValueError(f"expected an H x W frame, got shape {arr.shape}")
    if min(arr.shape) < 1:
        raise ValueError("frame extents must be >= 1")
    return arr


def dct2d(frame) -> np.ndarray:
    arr = _check_frame(frame)
    ch, cw = dct_matrix(arr.shape[0]), dct_matrix(arr.shape[1])
    out = ch @ arr.astype(np.float64) @ cw.T
    return out.astype(np.result_type(arr.dtype, np.float32))


def idct2d(coeffs) -> np.ndarray:
    arr = _check_frame(coeffs)
    ch, cw = dct_matrix(arr.shape[0]), dct_matrix(arr.shape[1])
    out = ch.T @ arr.astype(np.float64) @ cw
    return out.astype(np.result_type(arr.dtype, np.float32))


def dct2d_stack(x: np.ndarray) -> np.ndarray:
    """2D DCT over the trailing two axes of an arbitrary stack of planes."""
    x = np.asarray(x, dtype=np.float64)
    ch, cw = dct_matrix(x.shape[-2]), dct_matrix(x.shape[-1])
    return ch @ x @ cw.T


@lru_cache(maxsize=64)
def resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Align-corners-false linear interpolation weights, shape (n_out, n_in)."""
    if n_in < 1 or n_out < 1:
        raise ValueError("resize extents must be >= 1")
    m = np.zeros((n_out, n_in))
    if n_in == n_out:
        np.fill_diagonal(m, 1.0)
        return m
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, None)
    i0 = np.minimum(np.floor(src).astype(int), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    w1 = src - i0
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - w1)
    np.add.at(m, (rows, i1), w1)
    m.setflags(write=False)
    return m


def bilinear_resize(x, new_h: int, new_w: int):
    """Bilinear resize of the last two axes (typically T x C x H x W)."""
    xv = value(x)
    if xv.ndim < 2:
        raise ValueError("bilinear_resize needs at least two axes")
    if new_h < 1 or new_w < 1:
        raise ValueError("target extents must be >= 1")
    h, w = xv.shape[-2:]
    if (h, w) == (new_h, new_w):
        return x
    rh = resize_matrix(h, new_h).astype(xv.dtype)
    rw = resize_matrix(w, new_w).astype(xv.dtype)
    out = rh @ xv @ rw.T
    if not isinstance(x, Tensor):
        return out
    return record(out, (x,), lambda g: (rh.T @ g @ rw,))


def _triple(v) -> tuple[int, int, int]:
    if np.ndim(v) == 0:
        return (int(v),) * 3
    return tuple(int(a) for a in v)


def _conv3d_arrays(xv, wv, stride, pad):
    """Forward pass. x: (T, C, H, W), w: (O, C, kt, kh, kw). Returns out and im2col."""
    o, c, kt, kh, kw = wv.shape
    st, sh, sw = stride
    pt, ph, pw = pad
    xc = np.transpose(xv, (1, 0, 2, 3))
    xp = np.pad(xc, ((0, 0), (pt, pt), (ph, ph), (pw, pw)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kt, kh, kw), axis=(1, 2, 3))
    win = win[:, ::st, ::sh, ::sw]
    ot, oh, ow = win.shape[1:4]
    cols = np.ascontiguousarray(np.transpose(win, (1, 2, 3, 0, 4, 5, 6))).reshape(ot * oh * ow, -1)
    out = cols @ wv.reshape(o, -1).T
    out = out.reshape(ot, oh, ow, o).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(out), cols, (ot, oh, ow), xp.shape


def conv3d(x, kernel, bias=None, stride=1, padding="same"):
    """3D cross-correlation over (T, H, W) for a T x C x H x W input.

    ``kernel`` has shape (C_out, C_in, kt, kh, kw); ``padding="same"``
    zero-pads by half the (odd) kernel extent.
    """
    xv, wv = value(x), value(kernel)
    if xv.ndim != 4 or wv.ndim != 5:
        raise ValueError("conv3d expects x (T, C, H, W) and kernel (O, C, kt, kh, kw)")
    if xv.shape[1] != wv.shape[1]:
        raise ValueError(f"channel mismatch: input has {xv.shape[1]}, kernel expects {wv.shape[1]}")
    ksize = wv.shape[2:]
    if padding == "same":
        if any(k % 2 == 0 for k in ksize):
            raise ValueError("same padding needs odd kernel extents")
        pad = tuple(k // 2 for k in ksize)
    else:
        pad = _triple(padding)
    stride = _triple(stride)
    out, cols, (ot, oh, ow), padded = _conv3d_arrays(xv, wv, stride, pad)
    if bias is not None:
        out = out + value(bias).reshape(1, -1, 1, 1)
    if not any(isinstance(p, Tensor) for p in (x, kernel, bias)):
        return out

    o, c, kt, kh, kw = wv.shape
    st, sh, sw = stride
    pt, ph, pw = pad

    def vjp(g):
        gflat = np.transpose(g, (0, 2, 3, 1)).reshape(-1, o)
        gw = (gflat.T @ cols).reshape(wv.shape)
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        gx = None
        if isinstance(x, Tensor) and x.requires_grad:
            dcols = (gflat @ wv.reshape(o, -1)).reshape(ot, oh, ow, c, kt, kh, kw)
            gxp = np.zeros(padded, dtype=xv.dtype)
            for a in range(kt):
                for b in range(kh):
                    for d in range(kw):
                        gxp[:, a:a + st * ot:st, b:b + sh * oh:sh, d:d + sw * ow:sw] += np.transpose(
                            dcols[:, :, :, :, a, b, d], (3, 0, 1, 2)
                        )
            gxp = gxp[:, pt:padded[1] - pt, ph:padded[2] - ph, pw:padded[3] - pw]
            gx = np.transpose(gxp, (1, 0, 2, 3))
        return gx, gw, gb

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return record(out, parents, vjp)


def conv2d(x, kernel, bias=None, stride=1, padding="same"):
    """2D cross-correlation of a C x H x W input with an (O, C, kh, kw) kernel."""
    xv, wv = value(x), value(kernel)
    if xv.ndim != 3 or wv.ndim != 4:
        raise ValueError("conv2d expects x (C, H, W) and kernel (O, C, kh, kw)")
    if padding != "same":
        padding = (0,) + tuple(int(p) for p in np.broadcast_to(padding, 2))
    stride = (1,) + tuple(int(s) for s in np.broadcast_to(stride, 2))
    if isinstance(x, Tensor) or isinstance(kernel, Tensor) or isinstance(bias, Tensor):
        from .autodiff import reshape

        x5 = reshape(x, (1,) + xv.shape)
        k5 = reshape(kernel, wv.shape[:2] + (1,) + wv.shape[2:])
        y = conv3d(x5, k5, bias, stride, padding)
        return reshape(y, y.shape[1:])
    y = conv3d(xv[None], wv[:, :, None], bias, stride, padding)
    return y[0]
