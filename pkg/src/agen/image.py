"""Raster storage, bilinear sampling, gradient images, and PGM/PPM I/O.

A Canvas stores planar float64 pixels shaped (channels, height, width) with
values in [0, 1]. Sampling clamps coordinates to the border, so it is total
for finite coordinates. Gradient images are central differences of a
Gaussian-blurred copy, computed once and frozen.
"""

from __future__ import annotations

import re

import numpy as np
from scipy.ndimage import gaussian_filter

__all__ = [
    "Canvas",
    "bilinear_sample",
    "sample_planes",
    "gradient_images",
    "downsample_antialias",
    "resize",
    "to_grayscale",
    "load_pnm",
    "save_pnm",
]

_BLUR_TRUNCATE = 3.0


class Canvas:
    """Immutable raster: planar (channels, height, width) float64 in [0,1]."""

    def __init__(self, pixels: np.ndarray):
        arr = np.array(pixels, dtype=np.float64, copy=True)
        if arr.ndim == 2:
            arr = arr[None, :, :]
        if arr.ndim != 3:
            raise ValueError(f"expected 2-D or 3-D pixel array, got shape {arr.shape}")
        c, h, w = arr.shape
        if h < 1 or w < 1 or c < 1:
            raise ValueError(f"empty canvas shape {arr.shape}")
        arr.setflags(write=False)
        self.pixels = arr
        self.channels = c
        self.height = h
        self.width = w
        # populated once by gradient_images, then frozen
        self.grad_x: np.ndarray | None = None
        self.grad_y: np.ndarray | None = None
        self.grad_sigma: float | None = None
        self._blur_memo: dict[float, np.ndarray] = {}

    def blurred(self, sigma: float) -> np.ndarray:
        """Gaussian-blurred copy of the pixel planes (memoized per sigma)."""
        if sigma <= 0.0:
            return self.pixels
        key = float(sigma)
        got = self._blur_memo.get(key)
        if got is None:
            got = _blur(self.pixels, key)
            got.setflags(write=False)
            if len(self._blur_memo) < 16:
                self._blur_memo[key] = got
        return got


def _blur(planes: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0.0:
        return np.array(planes, copy=True)
    return gaussian_filter(
        planes, sigma=(0.0, sigma, sigma), mode="nearest", truncate=_BLUR_TRUNCATE
    )


def sample_planes(planes: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Bilinear sample of (C, H, W) planes at float coords; returns (C, N).

    Coordinates outside [0, W-1] x [0, H-1] are clamped to the border first.
    """
    _, h, w = planes.shape
    xs = np.clip(xs, 0.0, float(w - 1))
    ys = np.clip(ys, 0.0, float(h - 1))
    x0 = np.minimum(xs.astype(np.intp), max(w - 2, 0))
    y0 = np.minimum(ys.astype(np.intp), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0
    p00 = planes[:, y0, x0]
    p01 = planes[:, y0, x1]
    p10 = planes[:, y1, x0]
    p11 = planes[:, y1, x1]
    top = p00 + fx * (p01 - p00)
    bot = p10 + fx * (p11 - p10)
    return top + fy * (bot - top)


def bilinear_sample(canvas: Canvas, x: float, y: float, channel: int = 0) -> float:
    """Scalar bilinear sample with clamp-to-edge borders."""
    if channel >= canvas.channels:
        raise IndexError(f"channel {channel} out of range")
    out = sample_planes(
        canvas.pixels[channel : channel + 1], np.asarray([x], float), np.asarray([y], float)
    )
    return float(out[0, 0])


def _central_diff(planes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(f[i+1]-f[i-1])/2 along x and y with border replication."""
    padded_x = np.pad(planes, ((0, 0), (0, 0), (1, 1)), mode="edge")
    padded_y = np.pad(planes, ((0, 0), (1, 1), (0, 0)), mode="edge")
    gx = (padded_x[:, :, 2:] - padded_x[:, :, :-2]) / 2.0
    gy = (padded_y[:, 2:, :] - padded_y[:, :-2, :]) / 2.0
    return gx, gy


def gradient_images(canvas: Canvas, sigma_blur: float = 1.0) -> Canvas:
    """Populate canvas.grad_x / grad_y once; immutable afterwards.

    Gradients are central differences of a Gaussian-blurred copy
    (sigma_blur = 0 gives raw central differences). Recomputing with a
    different sigma_blur is an error; the same sigma_blur is a no-op.
    """
    if canvas.grad_sigma is not None:
        if float(sigma_blur) != canvas.grad_sigma:
            raise ValueError(
                f"gradients already computed with sigma_blur={canvas.grad_sigma}"
            )
        return canvas
    gx, gy = _central_diff(_blur(canvas.pixels, float(sigma_blur)))
    gx.setflags(write=False)
    gy.setflags(write=False)
    canvas.grad_x = gx
    canvas.grad_y = gy
    canvas.grad_sigma = float(sigma_blur)
    return canvas


def resize(canvas: Canvas, out_width: int, out_height: int) -> Canvas:
    """Bilinear resize with Gaussian anti-aliasing on minification.

    Output pixel (i, j) samples the source at the center-aligned position
    ((i + 0.5) * w/out_w - 0.5, (j + 0.5) * h/out_h - 0.5).
    """
    if out_width < 1 or out_height < 1:
        raise ValueError("output size must be positive")
    fx = canvas.width / out_width
    fy = canvas.height / out_height
    factor = max(fx, fy)
    src = canvas.blurred(0.5 * factor) if factor > 1.0 else canvas.pixels
    xs = (np.arange(out_width) + 0.5) * fx - 0.5
    ys = (np.arange(out_height) + 0.5) * fy - 0.5
    gx, gy = np.meshgrid(xs, ys)
    vals = sample_planes(src, gx.ravel(), gy.ravel())
    return Canvas(vals.reshape(canvas.channels, out_height, out_width))


def downsample_antialias(canvas: Canvas, factor: float) -> Canvas:
    """Blur with sigma = 0.5*factor, then resample bilinearly at 1/factor.

    factor = 1 returns a pixel-identical copy.
    """
    if not np.isfinite(factor) or factor < 1.0:
        raise ValueError("factor must be finite and >= 1")
    if factor == 1.0:
        return Canvas(canvas.pixels)
    out_w = max(1, int(round(canvas.width / factor)))
    out_h = max(1, int(round(canvas.height / factor)))
    return resize(canvas, out_w, out_h)


def to_grayscale(canvas: Canvas) -> Canvas:
    """Average channels into a single-channel canvas."""
    if canvas.channels == 1:
        return Canvas(canvas.pixels)
    return Canvas(canvas.pixels.mean(axis=0, keepdims=True))


# ---------------------------------------------------------------------------
# Netpbm I/O (8-bit binary PGM "P5" and PPM "P6")

def _parse_pnm_header(blob: bytes) -> tuple[bytes, int, int, int, int]:
    # magic, then whitespace-separated width/height/maxval; '#' comments allowed
    if blob[:2] not in (b"P5", b"P6"):
        raise ValueError("not a binary PGM/PPM file")
    magic = blob[:2]
    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        m = re.match(rb"(?:\s+|#[^\n]*\n)+", blob[pos:])
        if m is None:
            raise ValueError("malformed PNM header")
        pos += m.end()
        m = re.match(rb"\d+", blob[pos:])
        if m is None:
            raise ValueError("malformed PNM header")
        fields.append(int(m.group()))
        pos += m.end()
    # exactly one whitespace byte separates maxval from raster data
    if pos >= len(blob) or blob[pos : pos + 1] not in (b" ", b"\t", b"\n", b"\r"):
        raise ValueError("malformed PNM header")
    pos += 1
    width, height, maxval = fields
    if not (0 < maxval <= 255):
        raise ValueError(f"unsupported maxval {maxval} (8-bit only)")
    return magic, width, height, maxval, pos


def load_pnm(path) -> Canvas:
    """Load an 8-bit binary PGM (grayscale) or PPM (RGB) into [0,1] reals."""
    with open(path, "rb") as fh:
        blob = fh.read()
    magic, width, height, maxval, pos = _parse_pnm_header(blob)
    channels = 1 if magic == b"P5" else 3
    count = width * height * channels
    raster = np.frombuffer(blob, dtype=np.uint8, count=count, offset=pos)
    if raster.size != count:
        raise ValueError("truncated PNM raster")
    data = raster.astype(np.float64) / maxval
    if channels == 1:
        planes = data.reshape(1, height, width)
    else:
        planes = data.reshape(height, width, 3).transpose(2, 0, 1)
    return Canvas(planes)


def save_pnm(path, canvas: Canvas) -> None:
    """Save as 8-bit P5 (1 channel) or P6 (3 channels), rounding half-up."""
    if canvas.channels == 1:
        magic, raster = b"P5", canvas.pixels[0]
    elif canvas.channels == 3:
        magic, raster = b"P6", canvas.pixels.transpose(1, 2, 0)
    else:
        raise ValueError(f"cannot save {canvas.channels}-channel canvas")
    q = np.floor(np.clip(raster, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    header = b"%s\n%d %d\n255\n" % (magic, canvas.width, canvas.height)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(q.tobytes())
