"""Clip I/O (numbered PNG/PPM frames, 4:4:4 y4m) and CSV/SVG reports.

Pixels live in memory as float32 in [0, 1]. Eight-bit files are written
with round-half-up quantization, ``floor(x * 255 + 0.5)``.

The y4m container stores RGB directly in the three 4:4:4 planes: the
"Y" plane carries red, "U" green and "V" blue. Only ``C444`` streams are
read; any other chroma tag (including the default 4:2:0) is refused.
"""

from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image

FRAME_SUFFIXES = (".png", ".ppm")


class MediaError(ValueError):
    pass


@dataclass
class Clip:
    """A T x H x W x 3 frame sequence with values in [0, 1]."""

    frames: np.ndarray
    frame_rate: float = 24.0

    def __post_init__(self):
        f = np.asarray(self.frames, dtype=np.float32)
        if f.ndim != 4 or f.shape[-1] != 3:
            raise MediaError(f"clip frames must be T x H x W x 3, got {f.shape}")
        if f.shape[0] < 1:
            raise MediaError("clip needs at least one frame")
        if f.shape[1] % 2 or f.shape[2] % 2:
            raise MediaError(f"frame height/width must be even, got {f.shape[1]}x{f.shape[2]}")
        self.frames = f

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]


def quantize(x: np.ndarray) -> np.ndarray:
    return np.floor(np.clip(x, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def dequantize(x: np.ndarray) -> np.ndarray:
    return x.astype(np.float32) / 255.0


def _frame_number(path: Path) -> int:
    m = re.search(r"(\d+)$", path.stem)
    if m is None:
        raise MediaError(f"frame file {path.name} has no trailing frame number")
    return int(m.group(1))


def _read_image(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode not in ("RGB", "L", "RGBA", "P"):
            raise MediaError(f"{path.name}: unsupported pixel mode {im.mode} (8-bit RGB only)")
        return np.asarray(im.convert("RGB"))


def read_clip(path, frame_rate: float = 24.0) -> Clip:
    """Read a directory of numbered frames or a ``.y4m`` file."""
    path = Path(path)
    if path.is_dir():
        files = sorted(
            (p for p in path.iterdir() if p.suffix.lower() in FRAME_SUFFIXES), key=_frame_number
        )
        if not files:
            raise MediaError(f"no PNG/PPM frames in {path}")
        frames = []
        for f in files:
            img = _read_image(f)
            if frames and img.shape != frames[0].shape:
                raise MediaError(
                    f"frame {f.name} is {img.shape[1]}x{img.shape[0]}, "
                    f"expected {frames[0].shape[1]}x{frames[0].shape[0]}"
                )
            frames.append(img)
        return Clip(dequantize(np.stack(frames)), frame_rate)
    if path.suffix.lower() == ".y4m":
        return _read_y4m(path)
    raise MediaError(f"unsupported clip container: {path}")


def write_clip(clip: Clip, path, fmt: str = "png") -> Path:
    """Write ``clip`` as ``path/0001.<fmt>...`` or as a y4m stream."""
    path = Path(path)
    data = quantize(clip.frames)
    if path.suffix.lower() == ".y4m":
        _write_y4m(data, clip.frame_rate, path)
        return path
    if fmt not in ("png", "ppm"):
        raise MediaError(f"unsupported frame format {fmt!r}")
    path.mkdir(parents=True, exist_ok=True)
    for stale in path.iterdir():
        if stale.suffix.lower() in FRAME_SUFFIXES:
            stale.unlink()
    for i, frame in enumerate(data, start=1):
        target = path / f"{i:04d}.{fmt}"
        if fmt == "ppm":
            h, w, _ = frame.shape
            target.write_bytes(f"P6\n{w} {h}\n255\n".encode() + frame.tobytes())
        else:
            # fixed compression level keeps output bytes reproducible
            Image.fromarray(frame, "RGB").save(target, format="PNG", compress_level=6)
    return path


def _rate_fraction(rate: float) -> tuple[int, int]:
    from fractions import Fraction

    fr = Fraction(rate).limit_denominator(1001)
    return fr.numerator, fr.denominator


def _write_y4m(data: np.ndarray, rate: float, path: Path) -> None:
    t, h, w, _ = data.shape
    num, den = _rate_fraction(rate)
    buf = io.BytesIO()
    buf.write(f"YUV4MPEG2 W{w} H{h} F{num}:{den} Ip A1:1 C444 XCOLORRANGE=FULL\n".encode())
    for frame in data:
        buf.write(b"FRAME\n")
        buf.write(np.ascontiguousarray(np.transpose(frame, (2, 0, 1))).tobytes())
    path.write_bytes(buf.getvalue())


def _read_y4m(path: Path) -> Clip:
    raw = path.read_bytes()
    nl = raw.find(b"\n")
    if nl < 0 or not raw.startswith(b"YUV4MPEG2"):
        raise MediaError(f"{path.name}: not a YUV4MPEG2 stream")
    fields = raw[:nl].decode("ascii").split()[1:]
    params = {f[0]: f[1:] for f in fields}
    try:
        w, h = int(params["W"]), int(params["H"])
    except KeyError as exc:
        raise MediaError(f"{path.name}: header lacks {exc.args[0]} field") from None
    chroma = params.get("C", "420jpeg")
    if chroma != "444":
        raise MediaError(f"{path.name}: unsupported y4m format C{chroma}; only C444 8-bit is supported")
    rate = 24.0
    if "F" in params:
        num, den = params["F"].split(":")
        rate = int(num) / int(den)
    frame_bytes = 3 * w * h
    frames = []
    pos = nl + 1
    index = 0
    while pos < len(raw):
        end = raw.find(b"\n", pos)
        if end < 0 or not raw[pos:end].startswith(b"FRAME"):
            raise MediaError(f"{path.name}: frame {index + 1} has a malformed FRAME header")
        pos = end + 1
        chunk = raw[pos:pos + frame_bytes]
        if len(chunk) != frame_bytes:
            raise MediaError(f"{path.name}: frame {index + 1} is truncated")
        frames.append(np.frombuffer(chunk, np.uint8).reshape(3, h, w).transpose(1, 2, 0))
        pos += frame_bytes
        index += 1
    if not frames:
        raise MediaError(f"{path.name}: stream has no frames")
    return Clip(dequantize(np.stack(frames)), rate)


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "" if v is None else str(v)


def emit_report(rows: Mapping[str, Sequence], path) -> Path:
    """Write named, equal-length columns as an RFC-4180 CSV file."""
    if not rows:
        raise MediaError("cannot write an empty table")
    names = list(rows)
    lengths = {len(rows[n]) for n in names}
    if len(lengths) != 1:
        raise MediaError(f"columns have unequal lengths: { {n: len(rows[n]) for n in names} }")
    (n_rows,) = lengths
    if n_rows == 0:
        raise MediaError("cannot write an empty table")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(names)
    for i in range(n_rows):
        writer.writerow([_cell(rows[n][i]) for n in names])
    path = Path(path)
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def read_report(path) -> dict[str, list[str]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        cols: dict[str, list[str]] = {h: [] for h in header}
        for row in reader:
            for h, v in zip(header, row):
                cols[h].append(v)
    return cols


def emit_curve(xs, ys, path, title: str = "", width: int = 640, height: int = 360,
               x_label: str = "", y_label: str = "") -> Path:
    """Render ``ys`` against ``xs`` as an SVG 1.1 polyline."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1 or xs.size == 0:
        raise MediaError("emit_curve needs two equal-length, non-empty 1D sequences")
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise MediaError("curve values must be finite")
    margin = 48
    pw, ph = width - 2 * margin, height - 2 * margin

    def span(v):
        lo, hi = float(v.min()), float(v.max())
        return (lo, hi) if hi > lo else (lo - 0.5, hi + 0.5)

    x0, x1 = span(xs)
    y0, y1 = span(ys)
    px = margin + (xs - x0) / (x1 - x0) * pw
    py = margin + (1.0 - (ys - y0) / (y1 - y0)) * ph
    points = " ".join(f"{a:.3f},{b:.3f}" for a, b in zip(px, py))
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{margin}" y1="{margin + ph}" x2="{margin + pw}" y2="{margin + ph}" stroke="black"/>',
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{margin + ph}" stroke="black"/>',
        f'<polyline fill="none" stroke="#1f77b4" stroke-width="2" points="{points}"/>',
        f'<text x="{margin}" y="{margin + ph + 20}" font-size="11">{_fmt(x0)}</text>',
        f'<text x="{margin + pw}" y="{margin + ph + 20}" font-size="11" text-anchor="end">{_fmt(x1)}</text>',
        f'<text x="{margin - 6}" y="{margin + ph}" font-size="11" text-anchor="end">{_fmt(y0)}</text>',
        f'<text x="{margin - 6}" y="{margin + 4}" font-size="11" text-anchor="end">{_fmt(y1)}</text>',
    ]
    if title:
        parts.append(f'<text x="{width / 2:.1f}" y="24" font-size="14" text-anchor="middle">{_esc(title)}</text>')
    if x_label:
        parts.append(
            f'<text x="{width / 2:.1f}" y="{height - 8}" font-size="12" text-anchor="middle">{_esc(x_label)}</text>'
        )
    if y_label:
        parts.append(
            f'<text x="14" y="{height / 2:.1f}" font-size="12" text-anchor="middle" '
            f'transform="rotate(-90 14 {height / 2:.1f})">{_esc(y_label)}</text>'
        )
    parts.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(parts) + "\n", encoding="utf-8")
    return path


def _fmt(v: float) -> str:
    return f"{v:.4g}" if math.isfinite(v) else "nan"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
