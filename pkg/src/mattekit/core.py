"""Grid value types and the support arithmetic every other module builds on.

All types are immutable once constructed: validation happens exactly once,
the backing arrays are frozen, and every operation is a pure function of its
inputs, so values can be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operands do not share the same height/width."""


def _require_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class AlphaPlane:
    """H x W grid of fractional opacities in [0, 1].

    Out-of-range or non-finite input is rejected, never clamped: corrupted
    data should surface at construction, not three modules later.
    """

    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 2 or min(values.shape) < 1:
            raise ValueError(f"alpha plane must be a nonempty 2-D grid, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("alpha plane contains non-finite values")
        lo, hi = float(values.min()), float(values.max())
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"alpha values must lie in [0, 1], found range [{lo}, {hi}]")
        object.__setattr__(self, "values", _frozen(values))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class BinaryMask:
    """H x W grid of {0, 1} bits, stored as booleans."""

    bits: np.ndarray

    def __post_init__(self) -> None:
        bits = np.asarray(self.bits)
        if bits.ndim != 2 or min(bits.shape) < 1:
            raise ValueError(f"mask must be a nonempty 2-D grid, got shape {bits.shape}")
        if bits.dtype != np.bool_:
            unique = np.unique(bits)
            if not np.all(np.isin(unique, (0, 1))):
                raise ValueError("mask values must be exactly 0 or 1")
            bits = bits.astype(np.bool_)
        else:
            bits = bits.copy()
        object.__setattr__(self, "bits", _frozen(bits))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.bits.shape

    @property
    def count(self) -> int:
        """Number of set pixels."""
        return int(np.count_nonzero(self.bits))

    def as_plane(self) -> AlphaPlane:
        """View the mask as a 0/1-valued alpha plane."""
        return AlphaPlane(self.bits.astype(np.float64))


@dataclass(frozen=True)
class InstanceMatteSet:
    """Ordered collection of per-instance alpha planes over one image."""

    instances: tuple[tuple[int, AlphaPlane], ...]

    def __post_init__(self) -> None:
        instances = tuple((int(i), m) for i, m in self.instances)
        ids = [i for i, _ in instances]
        if len(set(ids)) != len(ids):
            raise ValueError(f"instance ids must be unique, got {ids}")
        shapes = {m.shape for _, m in instances}
        if len(shapes) > 1:
            raise DimensionError(f"instance mattes disagree on shape: {sorted(shapes)}")
        object.__setattr__(self, "instances", instances)

    @classmethod
    def from_planes(cls, planes: Sequence[AlphaPlane], ids: Sequence[int] | None = None) -> "InstanceMatteSet":
        if ids is None:
            ids = range(len(planes))
        return cls(tuple(zip(ids, planes)))

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self) -> Iterator[tuple[int, AlphaPlane]]:
        return iter(self.instances)

    @property
    def ids(self) -> tuple[int, ...]:
        return tuple(i for i, _ in self.instances)

    @property
    def planes(self) -> tuple[AlphaPlane, ...]:
        return tuple(m for _, m in self.instances)

    @property
    def shape(self) -> tuple[int, int] | None:
        """Common grid shape, or None for an empty set."""
        return self.instances[0][1].shape if self.instances else None

    def matte(self, instance_id: int) -> AlphaPlane:
        for i, m in self.instances:
            if i == instance_id:
                return m
        raise KeyError(f"no instance with id {instance_id}")

    def stacked(self) -> np.ndarray:
        """All mattes as one (n, H, W) array. Requires a nonempty set."""
        if not self.instances:
            raise ValueError("cannot stack an empty matte set")
        return np.stack([m.values for _, m in self.instances])


class ErrorKind(str, Enum):
    """The four matting error functions the similarity score accepts."""

    MAD = "mad"
    MSE = "mse"
    GRAD = "grad"
    CONN = "conn"


ALL_ERROR_KINDS: tuple[ErrorKind, ...] = (ErrorKind.MAD, ErrorKind.MSE, ErrorKind.GRAD, ErrorKind.CONN)

AGGREGATION_MODES = ("mean", "pooled")


@dataclass(frozen=True)
class ImqConfig:
    """Knobs of the instance matting quality metric.

    ``w`` is the balance factor applied to the matting error before the score
    saturates; ``iou_threshold`` gates true-positive matches. Gradient and
    connectivity parameters are exposed because no single convention is
    universal; the defaults follow the long-standing matting benchmarks.
    """

    w: float = 10.0
    iou_threshold: float = 0.5
    error_kinds: tuple[ErrorKind, ...] = ALL_ERROR_KINDS
    grad_sigma: float = 1.4
    conn_step: float = 0.1
    aggregation: str = "mean"

    def __post_init__(self) -> None:
        if not self.w > 0:
            raise ValueError(f"w must be positive, got {self.w}")
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ValueError(f"iou_threshold must lie in (0, 1], got {self.iou_threshold}")
        kinds = tuple(dict.fromkeys(ErrorKind(k) for k in self.error_kinds))
        if not kinds:
            raise ValueError("error_kinds must not be empty")
        object.__setattr__(self, "error_kinds", kinds)
        if not self.grad_sigma > 0:
            raise ValueError(f"grad_sigma must be positive, got {self.grad_sigma}")
        if not 0.0 < self.conn_step < 1.0:
            raise ValueError(f"conn_step must lie in (0, 1), got {self.conn_step}")
        if self.aggregation not in AGGREGATION_MODES:
            raise ValueError(f"aggregation must be one of {AGGREGATION_MODES}, got {self.aggregation!r}")


def quantize(matte: AlphaPlane) -> BinaryMask:
    """Support of a matte: bit set exactly where alpha is strictly positive.

    Thresholding at zero (rather than some midrange level) keeps faint
    semi-transparent structures inside the support.
    """
    return BinaryMask(matte.values > 0.0)


def union_support(a: AlphaPlane, b: AlphaPlane) -> BinaryMask:
    """Union of the two mattes' supports."""
    _require_same_shape(a.values, b.values)
    return BinaryMask((a.values > 0.0) | (b.values > 0.0))


def iou(a: BinaryMask, b: BinaryMask) -> float:
    """Intersection over union of two masks; 0.0 when both are empty."""
    _require_same_shape(a.bits, b.bits)
    inter = int(np.count_nonzero(a.bits & b.bits))
    union = int(np.count_nonzero(a.bits | b.bits))
    if union == 0:
        return 0.0
    return inter / union
