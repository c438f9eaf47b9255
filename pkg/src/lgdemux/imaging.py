"""Intensity-image representation and the pixel-level transforms used everywhere.

Images hold one value per pixel in [-1, 1] quantized to 256 levels
(-1 + 2k/255 for k = 0..255), the convention all datasets use.  Zero optical
intensity maps to -1, the per-image peak to +1.  Dataset-standardized images
(mean 0 / variance 1 across a dataset) keep float values and are marked via
`norm_meta`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

QUANT_LEVELS = 256
QUANT_STEP = 2.0 / (QUANT_LEVELS - 1)

NORM_NONE = "none"
NORM_DATASET = "dataset-mean-var"

# Image value that zero optical intensity maps to; used to fill pixels that
# rotation/translation pulls in from outside the frame.
ZERO_INTENSITY_VALUE = -1.0


def quantize(values: np.ndarray) -> np.ndarray:
    """Clamp to [-1, 1] and snap to the 256-level grid -1 + 2k/255.

    Ties round half away from zero (the scaled value is non-negative, so this
    is floor(t + 0.5)).
    """
    x = np.clip(np.asarray(values, dtype=np.float64), -1.0, 1.0)
    k = np.floor((QUANT_LEVELS - 1) * (x + 1.0) / 2.0 + 0.5)
    return (-1.0 + 2.0 * k / (QUANT_LEVELS - 1)).astype(np.float32)


def is_quantized(values: np.ndarray, tol: float = 1e-4) -> bool:
    """True when every value sits on the 256-level grid (float32 storage slack)."""
    x = np.asarray(values, dtype=np.float64)
    if x.size == 0 or np.min(x) < -1.0 - tol or np.max(x) > 1.0 + tol:
        return False
    k = (QUANT_LEVELS - 1) * (x + 1.0) / 2.0
    return bool(np.max(np.abs(k - np.round(k))) < tol)


@dataclass
class Image:
    """Real-valued square intensity image plus a record of its normalization."""

    values: np.ndarray
    norm_meta: str = NORM_NONE

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2 or self.values.shape[0] != self.values.shape[1]:
            raise ValueError(f"image must be square 2-D, got shape {self.values.shape}")
        if self.norm_meta not in (NORM_NONE, NORM_DATASET):
            raise ValueError(f"unknown norm_meta {self.norm_meta!r}")

    @property
    def side(self) -> int:
        return self.values.shape[0]

    def assert_quantized(self):
        if self.norm_meta != NORM_NONE or not is_quantized(self.values):
            raise ValueError("image is not on the 256-level [-1, 1] grid")


def intensity_to_image(intensity: np.ndarray) -> Image:
    """Peak-normalize raw intensity to [-1, 1] and quantize.

    value = 2 * I / max(I) - 1, so zero intensity is -1 and the brightest
    pixel +1 (camera-style per-image exposure).  An all-zero field maps to a
    uniform -1 image.
    """
    inten = np.asarray(intensity, dtype=np.float64)
    peak = float(inten.max())
    if peak <= 0.0:
        return Image(np.full(inten.shape, -1.0, dtype=np.float32))
    return Image(quantize(2.0 * inten / peak - 1.0))


def rotate_bilinear(values: np.ndarray, angle_rad: float, fill: float = ZERO_INTENSITY_VALUE) -> np.ndarray:
    """Rotate about the grid center (pixel index (side-1)/2) with bilinear sampling.

    Multiples of 90 degrees land source coordinates on exact integer pixels, so
    those rotations are interpolation-exact.  Out-of-frame samples read `fill`.
    """
    side = values.shape[0]
    c = (side - 1) / 2.0
    idx = np.arange(side, dtype=np.float64) - c
    xx, yy = np.meshgrid(idx, idx, indexing="xy")
    # inverse map: sample the source at R(-angle) applied to output coords
    ca, sa = np.cos(angle_rad), np.sin(angle_rad)
    sx = ca * xx + sa * yy + c
    sy = -sa * xx + ca * yy + c

    x0 = np.floor(sx)
    y0 = np.floor(sy)
    fx = sx - x0
    fy = sy - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)

    padded = np.full((side + 2, side + 2), fill, dtype=np.float64)
    padded[1:-1, 1:-1] = values
    x0c = np.clip(x0 + 1, 0, side)
    y0c = np.clip(y0 + 1, 0, side)
    inside = (x0 >= -1) & (x0 <= side - 1) & (y0 >= -1) & (y0 <= side - 1)

    v00 = padded[y0c, x0c]
    v01 = padded[y0c, x0c + 1]
    v10 = padded[y0c + 1, x0c]
    v11 = padded[y0c + 1, x0c + 1]
    out = (
        v00 * (1 - fx) * (1 - fy)
        + v01 * fx * (1 - fy)
        + v10 * (1 - fx) * fy
        + v11 * fx * fy
    )
    return np.where(inside, out, fill)


def shift_integer(values: np.ndarray, dx: int, dy: int, fill: float = ZERO_INTENSITY_VALUE) -> np.ndarray:
    """Translate by whole pixels (+x right, +y down); vacated pixels read `fill`."""
    side = values.shape[0]
    if abs(dx) >= side or abs(dy) >= side:
        return np.full_like(values, fill)
    out = np.full_like(values, fill)
    src_x = slice(max(0, -dx), min(side, side - dx))
    dst_x = slice(max(0, dx), min(side, side + dx))
    src_y = slice(max(0, -dy), min(side, side - dy))
    dst_y = slice(max(0, dy), min(side, side + dy))
    out[dst_y, dst_x] = values[src_y, src_x]
    return out
