"""Calibration-training losses: Histogram Weighted Loss plus MAE/MSE baselines.

Mode images are sparse (most pixels sit at the dark level), so plain MAE/MSE
lets an image-to-image model win by predicting darkness everywhere.  HWL
reweights each pixel's absolute error by how rare that pixel's value is in the
*target* image:

    HWL = 1/(N*M) * sum_batch sum_pixels (1 - prob)^gamma * |target - pred|

where prob is the frequency of the target pixel's histogram bin within its own
image, N is pixels per image, M the batch size, and gamma (default 4) sharpens
the down-weighting of common values.  gamma = 0 recovers MAE exactly.

Every loss returns (scalar, gradient w.r.t. prediction).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imaging import QUANT_LEVELS, is_quantized


@dataclass(frozen=True)
class HWLConfig:
    gamma: float = 4.0
    bins: int = QUANT_LEVELS

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.bins < 2:
            raise ValueError("bins must be >= 2")


def _bin_indices(values: np.ndarray, bins: int, quantized: bool) -> np.ndarray:
    if quantized and bins == QUANT_LEVELS:
        # exact: each value is a level -1 + 2k/255
        idx = np.round((bins - 1) * (values + 1.0) / 2.0).astype(np.int64)
    else:
        idx = np.floor((values + 1.0) / 2.0 * bins).astype(np.int64)
    return np.clip(idx, 0, bins - 1)


def histogram_probs(target: np.ndarray, bins: int = QUANT_LEVELS) -> np.ndarray:
    """Per-pixel probability of each pixel's value bin, per image.

    `target` is (pixels...) for one image or (batch, pixels...) for a batch;
    each image's histogram is computed independently over its own pixels.
    Targets on the 256-level quantization grid bin exactly by level; anything
    else uses `bins` uniform bins over [-1, 1].
    """
    t = np.asarray(target, dtype=np.float64)
    batched = t.ndim > 2
    imgs = t.reshape(t.shape[0], -1) if batched else t.reshape(1, -1)
    idx = _bin_indices(imgs, bins, is_quantized(imgs))
    n = imgs.shape[1]
    probs = np.empty_like(imgs)
    for j in range(imgs.shape[0]):
        counts = np.bincount(idx[j], minlength=bins)
        probs[j] = counts[idx[j]] / n
    return probs.reshape(t.shape)


def hwl(pred: np.ndarray, target: np.ndarray, cfg: HWLConfig = HWLConfig()) -> tuple[float, np.ndarray]:
    """Histogram Weighted Loss over a batch, with gradient w.r.t. pred.

    The weight map depends on the target only, so the gradient of pixel (i, j)
    is -(1 - prob)^gamma * sign(target - pred) / (N*M), with sign(0) := 0.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    probs = histogram_probs(target, cfg.bins)
    weights = (1.0 - probs) ** cfg.gamma
    resid = target - pred
    scale = 1.0 / pred.size  # 1/(N*M): all pixels across the batch
    value = float(np.sum(weights * np.abs(resid)) * scale)
    grad = -weights * np.sign(resid) * scale
    return value, grad


def mae(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    resid = target - pred
    scale = 1.0 / pred.size
    return float(np.sum(np.abs(resid)) * scale), -np.sign(resid) * scale


def mse(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    resid = target - pred
    scale = 1.0 / pred.size
    return float(np.sum(resid * resid) * scale), -2.0 * resid * scale


LOSSES = {"hwl": hwl, "mae": mae, "mse": mse}


def get_loss(name: str, hwl_cfg: HWLConfig = HWLConfig()):
    """Loss function by name; 'hwl' is bound to the given config."""
    if name == "hwl":
        return lambda pred, target: hwl(pred, target, hwl_cfg)
    if name in LOSSES:
        return LOSSES[name]
    raise ValueError(f"unknown loss {name!r}; choose from {sorted(LOSSES)}")
