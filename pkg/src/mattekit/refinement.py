"""Multi-instance interaction algebra over tri-matte (or feature) stacks.

Each instance's target/reference/background planes are synchronized against
every other instance by three reduction rules; stacks already consistent with
one another are fixed points. An error map measures how far a stack is from
the shared-alpha constraint and schedules fixed-size refinement patches.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .core import AlphaPlane, DimensionError
from .metrics import ErrorField
from .trimask import TriMatte

_CHANNELS = ("target", "reference", "background")
_BINOMIAL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


@dataclass(frozen=True)
class TriStack:
    """n instances x 3 channels (t, r, b) of equal-shaped value planes.

    ``alpha_valued`` marks stacks of alphas, whose refined values clamp to
    [0, 1]; feature stacks pass through unclamped.
    """

    values: np.ndarray
    alpha_valued: bool = False

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64, copy=True)
        if values.ndim != 4 or values.shape[1] != 3:
            raise ValueError(f"stack must have shape (n, 3, H, W), got {values.shape}")
        if values.shape[0] < 1:
            raise ValueError("stack needs at least one instance")
        if not np.all(np.isfinite(values)):
            raise ValueError("stack contains non-finite values")
        if self.alpha_valued and (values.min() < 0.0 or values.max() > 1.0):
            raise ValueError("alpha-valued stack must lie in [0, 1]")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_trimattes(cls, trimattes: Sequence[TriMatte]) -> "TriStack":
        if not trimattes:
            raise ValueError("stack needs at least one tri-matte")
        planes = np.stack(
            [np.stack([tm.target.values, tm.reference.values, tm.background.values]) for tm in trimattes]
        )
        return cls(planes, alpha_valued=True)

    def to_trimattes(self) -> list[TriMatte]:
        if not self.alpha_valued:
            raise ValueError("only alpha-valued stacks convert to tri-mattes")
        return [
            TriMatte(AlphaPlane(v[0]), AlphaPlane(v[1]), AlphaPlane(v[2])) for v in self.values
        ]

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def plane_shape(self) -> tuple[int, int]:
        return self.values.shape[2:]


def _ordered_sum(planes: np.ndarray) -> np.ndarray:
    # Summing in value order makes the result independent of instance order,
    # so parallel refinement is bitwise permutation-equivariant.
    return np.sort(planes, axis=0).sum(axis=0)


def _reduce_instance(values: np.ndarray, i: int, sums: tuple[np.ndarray, np.ndarray, np.ndarray]) -> np.ndarray:
    n = values.shape[0]
    sum_t, sum_r, sum_b = sums
    t, r = values[i, 0], values[i, 1]
    others_t = sum_t - t
    new = np.empty_like(values[i])
    new[0] = 0.5 * (t + sum_r / (n - 1) - others_t)
    new[1] = 0.5 * (r + others_t)
    new[2] = sum_b / n
    return new


def _channel_sums(values: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return _ordered_sum(values[:, 0]), _ordered_sum(values[:, 1]), _ordered_sum(values[:, 2])


def _clamped(values: np.ndarray, alpha_valued: bool) -> np.ndarray:
    return np.clip(values, 0.0, 1.0) if alpha_valued else values


def tri_reduce(stack: TriStack) -> TriStack:
    """One synchronization step applied to every instance simultaneously.

    Each target plane is reconciled against the mean of all reference planes
    and the other targets; each reference plane absorbs the other targets;
    background planes average. A single instance has no peers, so n = 1
    passes through unchanged.
    """
    if stack.n == 1:
        return stack
    sums = _channel_sums(stack.values)
    out = np.stack([_reduce_instance(stack.values, i, sums) for i in range(stack.n)])
    return TriStack(_clamped(out, stack.alpha_valued), stack.alpha_valued)


def parallel_refine(stack: TriStack, rounds: int = 1) -> TriStack:
    """Repeated simultaneous synchronization; each round reads only pre-round values."""
    if rounds < 1:
        raise ValueError(f"rounds must be at least 1, got {rounds}")
    for _ in range(rounds):
        stack = tri_reduce(stack)
    return stack


def cycle_refine(stack: TriStack, order: Sequence[int]) -> TriStack:
    """Sequential synchronization in the given instance order.

    Later instances see the already-refined values of earlier ones, which
    makes the result order-sensitive on inconsistent stacks.
    """
    order = list(order)
    if sorted(order) != list(range(stack.n)):
        raise ValueError(f"order must be a permutation of 0..{stack.n - 1}, got {order}")
    if stack.n == 1:
        return stack
    working = stack.values.copy()
    for i in order:
        updated = _reduce_instance(working, i, _channel_sums(working))
        working[i] = _clamped(updated, stack.alpha_valued)
    return TriStack(working, stack.alpha_valued)


def refine(stack: TriStack, mode: str, order: Sequence[int] | None = None, rounds: int = 1) -> TriStack:
    """Dispatch to parallel or cycle refinement; cycle repeats per round."""
    if mode == "parallel":
        return parallel_refine(stack, rounds)
    if mode == "cycle":
        if order is None:
            if stack.n > 1:
                raise ValueError("cycle refinement needs an explicit instance order")
            order = [0]
        if rounds < 1:
            raise ValueError(f"rounds must be at least 1, got {rounds}")
        for _ in range(rounds):
            stack = cycle_refine(stack, order)
        return stack
    raise ValueError(f"mode must be 'parallel' or 'cycle', got {mode!r}")


def error_map(stack: TriStack) -> ErrorField:
    """Pixelwise deviation from the shared-alpha constraint.

    Zero exactly where the averaged background alphas plus all target alphas
    account for the whole pixel; ground-truth tri-mattes satisfy this by
    construction.
    """
    mean_b = _ordered_sum(stack.values[:, 2]) / stack.n
    sum_t = _ordered_sum(stack.values[:, 0])
    return ErrorField(np.abs(mean_b + sum_t - 1.0))


@dataclass(frozen=True)
class Patch:
    """A refinement window anchored at an above-threshold pixel."""

    row: int
    col: int
    top: int
    left: int
    height: int
    width: int


def select_patches(errors: ErrorField, threshold: float = 0.01, patch_size: int = 128) -> list[Patch]:
    """Windows centered on above-threshold pixels, greedily deduplicated.

    Pixels are scanned row-major; a pixel already inside an earlier window is
    skipped, which keeps the schedule linear on dense error regions. Windows
    shift to stay inside the image.
    """
    if threshold < 0:
        raise ValueError(f"threshold must be nonnegative, got {threshold}")
    if patch_size < 1:
        raise ValueError(f"patch size must be positive, got {patch_size}")
    h, w = errors.shape
    above = errors.values > threshold
    if not above.any():
        return []
    half = patch_size // 2
    height = min(patch_size, h)
    width = min(patch_size, w)
    covered = np.zeros((h, w), dtype=bool)
    patches = []
    for r, c in np.argwhere(above):
        if covered[r, c]:
            continue
        top = min(max(int(r) - half, 0), h - height)
        left = min(max(int(c) - half, 0), w - width)
        patches.append(Patch(int(r), int(c), top, left, height, width))
        covered[top : top + height, left : left + width] = True
    return patches


def splice_patches(original: TriStack, refined: TriStack, patches: Sequence[Patch]) -> TriStack:
    """Adopt refined values inside the patch windows, originals elsewhere.

    Windows are applied in schedule order (row-major anchors); the per-pixel
    algebra writes identical values in overlaps, so last-writer-wins is only
    a stated convention, not a source of nondeterminism.
    """
    if original.values.shape != refined.values.shape:
        raise DimensionError("original and refined stacks must share one shape")
    out = original.values.copy()
    for p in patches:
        window = (slice(p.top, p.top + p.height), slice(p.left, p.left + p.width))
        out[(..., *window)] = refined.values[(..., *window)]
    return TriStack(out, original.alpha_valued)


@dataclass(frozen=True)
class LossBreakdown:
    """Constraint losses; the supervised terms are None without ground truth."""

    l_alpha: float | None
    l_lap: float | None
    l_mc: float
    l_malpha: float
    total: float


def _blur(values: np.ndarray) -> np.ndarray:
    out = ndimage.convolve1d(values, _BINOMIAL, axis=0, mode="reflect")
    return ndimage.convolve1d(out, _BINOMIAL, axis=1, mode="reflect")


def _upsample(values: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    out = np.zeros(shape)
    out[::2, ::2] = values
    return _blur(out) * 4.0


def _laplacian_pyramid(values: np.ndarray, levels: int) -> list[np.ndarray]:
    pyramid = []
    current = values
    for _ in range(levels - 1):
        if min(current.shape) < 2:
            break
        smaller = _blur(current)[::2, ::2]
        pyramid.append(current - _upsample(smaller, current.shape))
        current = smaller
    pyramid.append(current)
    return pyramid


def pyramid_loss(pred: np.ndarray, gt: np.ndarray, levels: int = 5) -> float:
    """Multi-level band-pass L1 distance, finest level weighted least."""
    if pred.shape != gt.shape:
        raise DimensionError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    pred_pyr = _laplacian_pyramid(pred, levels)
    gt_pyr = _laplacian_pyramid(gt, levels)
    return float(sum((2.0**i) * np.abs(a - b).mean() for i, (a, b) in enumerate(zip(pred_pyr, gt_pyr))))


def constraint_losses(
    pred: TriMatte,
    layers: tuple[np.ndarray, np.ndarray, np.ndarray],
    image: np.ndarray,
    gt: TriMatte | None = None,
    supervised: bool | None = None,
    levels: int = 5,
) -> LossBreakdown:
    """Composition and alpha constraints, plus supervised terms when gt is given.

    ``l_mc`` is the mean absolute residual of the three-layer blend against
    the image; ``l_malpha`` the mean deviation of the component sum from one.
    With ground truth, per-component L1 and pyramid losses are added.
    Requesting the supervised terms without ground truth is an error.
    """
    if supervised is None:
        supervised = gt is not None
    if supervised and gt is None:
        raise ValueError("supervised losses need a ground-truth tri-matte")
    image = np.asarray(image, dtype=np.float64)
    if image.shape[:2] != pred.shape:
        raise DimensionError(f"image shape {image.shape[:2]} != tri-matte shape {pred.shape}")
    components = (pred.target.values, pred.reference.values, pred.background.values)

    blend = np.zeros_like(image, dtype=np.float64)
    for alpha, layer in zip(components, layers):
        layer = np.asarray(layer, dtype=np.float64)
        if layer.shape != image.shape:
            raise DimensionError(f"layer shape {layer.shape} != image shape {image.shape}")
        blend = blend + (alpha if image.ndim == 2 else alpha[:, :, None]) * layer
    l_mc = float(np.abs(blend - image).mean())
    l_malpha = float(np.abs(components[0] + components[1] + components[2] - 1.0).mean())

    l_alpha = l_lap = None
    if supervised:
        gt_components = (gt.target.values, gt.reference.values, gt.background.values)
        l_alpha = float(sum(np.abs(p - g).mean() for p, g in zip(components, gt_components)))
        l_lap = float(sum(pyramid_loss(p, g, levels) for p, g in zip(components, gt_components)))

    total = l_mc + l_malpha + (l_alpha or 0.0) + (l_lap or 0.0)
    return LossBreakdown(l_alpha, l_lap, l_mc, l_malpha, total)


def stack_constraint_losses(
    trimattes: Sequence[TriMatte],
    layers: Sequence[tuple[np.ndarray, np.ndarray, np.ndarray]],
    image: np.ndarray,
    gts: Sequence[TriMatte] | None = None,
    levels: int = 5,
) -> LossBreakdown:
    """Mean of per-instance constraint losses over a whole stack."""
    if not trimattes:
        raise ValueError("need at least one tri-matte")
    if len(layers) != len(trimattes) or (gts is not None and len(gts) != len(trimattes)):
        raise ValueError("layers and ground truths must align with the tri-mattes")
    rows = [
        constraint_losses(tm, layer, image, gt=None if gts is None else gts[i], levels=levels)
        for i, (tm, layer) in enumerate(zip(trimattes, layers))
    ]
    mean = lambda vals: float(np.mean(vals))  # noqa: E731
    return LossBreakdown(
        None if gts is None else mean([r.l_alpha for r in rows]),
        None if gts is None else mean([r.l_lap for r in rows]),
        mean([r.l_mc for r in rows]),
        mean([r.l_malpha for r in rows]),
        mean([r.total for r in rows]),
    )
