"""Matting error functions and the bounded similarity score.

Four per-pixel error fields (mad, mse, grad, conn) are averaged over the
union of the two mattes' supports rather than the full image, so large
background areas cannot wash out errors on small instances.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .core import AlphaPlane, BinaryMask, ErrorKind, ImqConfig, _frozen, _require_same_shape

# Connectivity degradations below this level are treated as noise.
CONN_DEGRADATION_FLOOR = 0.15


@dataclass(frozen=True)
class ErrorField:
    """Per-pixel nonnegative error grid."""

    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 2 or min(values.shape) < 1:
            raise ValueError(f"error field must be a nonempty 2-D grid, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("error field contains non-finite values")
        if values.min() < 0.0:
            raise ValueError("error field entries must be nonnegative")
        object.__setattr__(self, "values", _frozen(values))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


class RegionMean(NamedTuple):
    value: float
    empty: bool


def gaussian_derivative_filters(sigma: float) -> tuple[np.ndarray, np.ndarray]:
    """1-D smoothing and first-derivative Gaussian taps, jointly L2-normalized.

    The outer product of the two vectors reproduces the 2-D derivative kernel
    used by the classic matting benchmarks.
    """
    eps = 1e-2
    log_term = -2.0 * np.log(np.sqrt(2.0 * np.pi) * sigma * eps)
    half = max(int(np.ceil(sigma * np.sqrt(max(log_term, 0.0)))), 1)
    x = np.arange(-half, half + 1, dtype=np.float64)
    g = np.exp(-(x**2) / (2.0 * sigma**2)) / (sigma * np.sqrt(2.0 * np.pi))
    dg = -x * g / sigma**2
    return g / np.linalg.norm(g), dg / np.linalg.norm(dg)


def gradient_filter_halfwidth(sigma: float) -> int:
    """Pixels of context the gradient filters read on each side."""
    return (gaussian_derivative_filters(sigma)[0].size - 1) // 2


def gradient_magnitude(values: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian-derivative gradient magnitude with reflective borders."""
    g, dg = gaussian_derivative_filters(sigma)
    gx = ndimage.convolve1d(ndimage.convolve1d(values, g, axis=0, mode="reflect"), dg, axis=1, mode="reflect")
    gy = ndimage.convolve1d(ndimage.convolve1d(values, dg, axis=0, mode="reflect"), g, axis=1, mode="reflect")
    return np.sqrt(gx**2 + gy**2)


def _connectivity_levels(step: float) -> np.ndarray:
    # Multiples of step in (0, 1], mirroring the 0:step:1 sweep of the
    # original benchmark code.
    n = int(np.floor(1.0 / step + 1e-9))
    return np.arange(1, n + 1, dtype=np.float64) * step


def _connectivity_degradations(pred: np.ndarray, gt: np.ndarray, step: float) -> tuple[np.ndarray, np.ndarray]:
    """Truncated connectivity degradation of each plane.

    A shared level map records, per pixel, the highest swept threshold at
    which the pixel still belongs to the largest 4-connected component of
    the jointly thresholded planes.
    """
    level_map = np.full(pred.shape, -1.0)
    previous = 0.0
    for level in _connectivity_levels(step):
        joint = (pred >= level) & (gt >= level)
        if joint.any():
            labels, n_components = ndimage.label(joint)
            if n_components:
                sizes = np.bincount(labels.ravel())
                sizes[0] = 0
                omega = labels == sizes.argmax()
            else:
                omega = np.zeros(pred.shape, dtype=bool)
        else:
            omega = np.zeros(pred.shape, dtype=bool)
        level_map[(level_map == -1.0) & ~omega] = previous
        previous = level
    level_map[level_map == -1.0] = 1.0

    d_pred = pred - level_map
    d_gt = gt - level_map
    d_pred = d_pred * (d_pred >= CONN_DEGRADATION_FLOOR)
    d_gt = d_gt * (d_gt >= CONN_DEGRADATION_FLOOR)
    return d_pred, d_gt


def error_field(
    kind: ErrorKind,
    pred: AlphaPlane,
    gt: AlphaPlane,
    config: ImqConfig | None = None,
) -> ErrorField:
    """Per-pixel error between a predicted and a reference matte."""
    config = config or ImqConfig()
    _require_same_shape(pred.values, gt.values)
    kind = ErrorKind(kind)
    if kind is ErrorKind.MAD:
        values = np.abs(pred.values - gt.values)
    elif kind is ErrorKind.MSE:
        values = (pred.values - gt.values) ** 2
    elif kind is ErrorKind.GRAD:
        pred_amp = gradient_magnitude(pred.values, config.grad_sigma)
        gt_amp = gradient_magnitude(gt.values, config.grad_sigma)
        values = (pred_amp - gt_amp) ** 2
    elif kind is ErrorKind.CONN:
        d_pred, d_gt = _connectivity_degradations(pred.values, gt.values, config.conn_step)
        values = np.abs(d_pred - d_gt)
    else:  # pragma: no cover - closed enumeration
        raise ValueError(f"unknown error kind {kind!r}")
    return ErrorField(values)


def region_error(field: ErrorField, region: BinaryMask) -> RegionMean:
    """Mean of the field over the region; (0.0, empty=True) for an empty region."""
    _require_same_shape(field.values, region.bits)
    n = region.count
    if n == 0:
        return RegionMean(0.0, True)
    return RegionMean(float(field.values[region.bits].sum() / n), False)


def similarity(err: float, w: float) -> float:
    """Bounded similarity score: 1 - min(w * err, 1)."""
    if err < 0:
        raise ValueError(f"error must be nonnegative, got {err}")
    if not w > 0:
        raise ValueError(f"w must be positive, got {w}")
    return 1.0 - min(w * err, 1.0)
