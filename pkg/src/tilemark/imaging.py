"""Image tensor conventions and quality/detection metrics.

Images are (H, W, C) float arrays in [-1, 1] at the numpy boundary, RGB
(C=3) or RGBW (C=4); the network code works on channel-first torch tensors
and converts through :func:`hwc_to_chw` / :func:`chw_to_hwc`.

PSNR and SSIM are computed on the 8-bit-equivalent scale (MAX = 255 after
mapping [-1, 1] -> [0, 255]) so the numbers line up with how the literature
reports them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.signal import convolve2d

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
_MAX_8BIT = 255.0


class MetricError(ValueError):
    """Shape mismatch or otherwise unusable metric input."""


def _as_float_array(x) -> np.ndarray:
    if hasattr(x, "detach"):  # torch tensor
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def to_uint8(image: np.ndarray) -> np.ndarray:
    """Map [-1, 1] floats to uint8 [0, 255] with round-to-nearest."""
    arr = _as_float_array(image)
    return np.clip(np.round((arr + 1.0) * 127.5), 0, 255).astype(np.uint8)


def from_uint8(image: np.ndarray) -> np.ndarray:
    """Map uint8 [0, 255] back to float32 in [-1, 1]."""
    return (np.asarray(image, dtype=np.float64) / 127.5 - 1.0).astype(np.float32)


def hwc_to_chw(image: np.ndarray):
    """(H, W, C) numpy array -> (C, H, W) float32 torch tensor."""
    import torch

    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim != 3:
        raise MetricError(f"expected (H, W, C), got shape {arr.shape}")
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1)))


def chw_to_hwc(tensor) -> np.ndarray:
    """(C, H, W) torch tensor -> (H, W, C) float32 numpy array."""
    arr = tensor.detach().cpu().numpy()
    if arr.ndim != 3:
        raise MetricError(f"expected (C, H, W), got shape {arr.shape}")
    return np.ascontiguousarray(arr.transpose(1, 2, 0))


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB on the 8-bit scale; inf iff identical."""
    x, y = _as_float_array(a), _as_float_array(b)
    if x.shape != y.shape:
        raise MetricError(f"shape mismatch {x.shape} vs {y.shape}")
    mse = np.mean(((x - y) * (_MAX_8BIT / 2.0)) ** 2)
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(_MAX_8BIT**2 / mse)


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def _ssim_single(x: np.ndarray, y: np.ndarray, data_range: float) -> float:
    window = _gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_x = convolve2d(x, window, mode="valid")
    mu_y = convolve2d(y, window, mode="valid")
    var_x = convolve2d(x * x, window, mode="valid") - mu_x**2
    var_y = convolve2d(y * y, window, mode="valid") - mu_y**2
    cov = convolve2d(x * y, window, mode="valid") - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def ssim(a, b) -> float:
    """Mean structural similarity, Gaussian-weighted 11x11 window, sigma 1.5.

    Computed per channel on the 8-bit scale and averaged over channels.
    """
    x, y = _as_float_array(a), _as_float_array(b)
    if x.shape != y.shape:
        raise MetricError(f"shape mismatch {x.shape} vs {y.shape}")
    if x.ndim == 2:
        x, y = x[:, :, None], y[:, :, None]
    if x.ndim != 3:
        raise MetricError(f"expected (H, W[, C]), got shape {x.shape}")
    if x.shape[0] < SSIM_WINDOW or x.shape[1] < SSIM_WINDOW:
        raise MetricError(
            f"image {x.shape[0]}x{x.shape[1]} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    x = (x + 1.0) * (_MAX_8BIT / 2.0)
    y = (y + 1.0) * (_MAX_8BIT / 2.0)
    scores = [_ssim_single(x[:, :, c], y[:, :, c], _MAX_8BIT) for c in range(x.shape[2])]
    return float(np.mean(scores))


def detection_accuracy(predictions: Sequence[int], labels: Sequence[int]) -> float:
    """Fraction of positions where prediction == label."""
    preds = list(predictions)
    labs = list(labels)
    if not preds:
        raise MetricError("empty prediction list")
    if len(preds) != len(labs):
        raise MetricError(f"length mismatch: {len(preds)} predictions vs {len(labs)} labels")
    return sum(int(p == l) for p, l in zip(preds, labs)) / len(preds)


@dataclass
class MetricReport:
    """Quality and robustness summary for one evaluation run."""

    psnr_db: float
    ssim: float
    detection_accuracy: float
    per_distortion: dict[str, float] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "psnr_db": None if math.isinf(self.psnr_db) else self.psnr_db,
            "psnr_is_inf": math.isinf(self.psnr_db),
            "ssim": self.ssim,
            "detection_accuracy": self.detection_accuracy,
            "per_distortion": dict(self.per_distortion),
        }
        if self.metadata:
            out["metadata"] = dict(self.metadata)
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "MetricReport":
        psnr_db = math.inf if d.get("psnr_is_inf") else d["psnr_db"]
        return cls(
            psnr_db=psnr_db,
            ssim=d["ssim"],
            detection_accuracy=d["detection_accuracy"],
            per_distortion=dict(d.get("per_distortion", {})),
            metadata=dict(d.get("metadata", {})),
        )
