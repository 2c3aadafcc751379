"""Target / reference / background mask and matte triples.

A tri-mask splits an image into the target instance, the union of all other
instances, and everything else; a tri-matte is the fractional analogue whose
components sum to one. Augmentation deliberately relaxes those guarantees to
mimic imperfect upstream segmentation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .core import AlphaPlane, BinaryMask, DimensionError, InstanceMatteSet, quantize

MORPH_OPS = ("dilate", "erode")


@dataclass(frozen=True)
class TriMask:
    """Binary masks for target, reference, and background regions."""

    target: BinaryMask
    reference: BinaryMask
    background: BinaryMask

    def __post_init__(self) -> None:
        if not (self.target.shape == self.reference.shape == self.background.shape):
            raise DimensionError("tri-mask components must share one shape")

    @property
    def is_partition(self) -> bool:
        """True when the three masks tile the image with no overlap or gap."""
        total = (
            self.target.bits.astype(np.int64)
            + self.reference.bits.astype(np.int64)
            + self.background.bits.astype(np.int64)
        )
        return bool((total == 1).all())


@dataclass(frozen=True)
class TriMatte:
    """Alpha planes for target, reference, and background components.

    Only ground-truth tri-mattes are required to sum to one; estimated ones
    may violate the constraint, which is exactly what refinement measures.
    """

    target: AlphaPlane
    reference: AlphaPlane
    background: AlphaPlane

    def __post_init__(self) -> None:
        if not (self.target.shape == self.reference.shape == self.background.shape):
            raise DimensionError("tri-matte components must share one shape")

    @property
    def shape(self) -> tuple[int, int]:
        return self.target.shape


def trimask_from_masks(masks: Sequence[BinaryMask], target_index: int) -> TriMask:
    """Exact tri-mask: target mask, union of the others, complement of both."""
    if not masks:
        raise ValueError("need at least one instance mask")
    if not 0 <= target_index < len(masks):
        raise IndexError(f"target index {target_index} out of range for {len(masks)} masks")
    shape = masks[0].shape
    for m in masks:
        if m.shape != shape:
            raise DimensionError("instance masks must share one shape")
    target = masks[target_index].bits
    reference = np.zeros(shape, dtype=bool)
    for j, m in enumerate(masks):
        if j != target_index:
            reference |= m.bits
    background = ~(target | reference)
    return TriMask(BinaryMask(target), BinaryMask(reference), BinaryMask(background))


def trimatte_gt(effective: InstanceMatteSet, target_index: int, tol: float = 1e-6) -> TriMatte:
    """Ground-truth tri-matte from effective (post-occlusion) instance alphas.

    Requires the instance alphas to sum to at most one everywhere (up to
    ``tol`` for quantized file data); the background component is defined as
    the complement so the triple sums to one.
    """
    if not 0 <= target_index < len(effective):
        raise IndexError(f"target index {target_index} out of range for {len(effective)} instances")
    stack = effective.stacked()
    target = stack[target_index]
    reference = stack.sum(axis=0) - target if len(effective) > 1 else np.zeros_like(target)
    reference = np.maximum(reference, 0.0)
    total = target + reference
    excess = total.max() - 1.0
    if excess > tol:
        raise ValueError(f"instance alphas sum to {1.0 + excess:.8f} > 1; not valid effective alphas")
    background = np.clip(1.0 - total, 0.0, 1.0)
    return TriMatte(AlphaPlane(target), AlphaPlane(np.clip(reference, 0.0, 1.0)), AlphaPlane(background))


def _normalize_kernel(kernel: int, warn: bool = True) -> int:
    if kernel < 1:
        raise ValueError(f"kernel must be at least 1, got {kernel}")
    if kernel % 2 == 0:
        if warn:
            warnings.warn(f"even kernel {kernel} normalized up to {kernel + 1}", stacklevel=3)
        kernel += 1
    return kernel


def morph(mask: BinaryMask, op: str, kernel: int) -> BinaryMask:
    """Square-structuring-element dilation or erosion.

    Pixels outside the image count as background for both operations, so
    dilation cannot grow in from the border while erosion shrinks at it.
    Even kernels are normalized up to the next odd size with a warning.
    """
    if op not in MORPH_OPS:
        raise ValueError(f"op must be one of {MORPH_OPS}, got {op!r}")
    kernel = _normalize_kernel(kernel)
    if kernel == 1:
        return mask
    # separable min/max filters beat binary_dilation/erosion by orders of
    # magnitude on large square structuring elements
    bits = mask.bits.view(np.uint8)
    if op == "dilate":
        out = ndimage.maximum_filter(bits, size=kernel, mode="constant", cval=0)
    else:
        out = ndimage.minimum_filter(bits, size=kernel, mode="constant", cval=0)
    return BinaryMask(out.astype(bool))


def partial_band(mask: BinaryMask, k: int) -> BinaryMask:
    """Boundary band k pixels wide on each side of the mask's edge.

    Computed as dilation minus erosion, each growing/shrinking by k pixels.
    Used to restrict supervision to the noisy fringe of polygon labels.
    """
    if k < 0:
        raise ValueError(f"band width must be nonnegative, got {k}")
    if k == 0:
        return BinaryMask(np.zeros(mask.shape, dtype=bool))
    grown = morph(mask, "dilate", 2 * k + 1)
    shrunk = morph(mask, "erode", 2 * k + 1)
    return BinaryMask(grown.bits & ~shrunk.bits)


@dataclass(frozen=True)
class TrimaskAugmentOptions:
    """Switches for the three augmentation steps.

    ``truncate`` thresholds ground-truth alphas at a random level instead of
    strictly-positive support; ``subset_reference`` drops a random subset of
    the non-target instances from the reference mask (``reference_subset``
    forces an explicit choice); ``perturb`` dilates or erodes each component
    with a random kernel. All randomness off reproduces the exact tri-mask.
    """

    truncate: bool = True
    truncation_range: tuple[float, float] = (0.2, 0.8)
    subset_reference: bool = True
    reference_subset: tuple[int, ...] | None = None
    perturb: bool = True
    kernel_range: tuple[int, int] = (1, 30)

    def __post_init__(self) -> None:
        lo, hi = self.truncation_range
        if not 0.0 < lo <= hi < 1.0:
            raise ValueError(f"truncation_range must lie within (0, 1), got {self.truncation_range}")
        lo, hi = self.kernel_range
        if not 1 <= lo <= hi:
            raise ValueError(f"kernel_range must satisfy 1 <= lo <= hi, got {self.kernel_range}")


def augment_trimask(
    source: InstanceMatteSet | Sequence[BinaryMask],
    target_index: int,
    options: TrimaskAugmentOptions | None = None,
    seed: int | tuple[int, ...] = 0,
) -> TriMask:
    """Randomized tri-mask for robustness training; deterministic per seed.

    Accepts ground-truth alphas (thresholded per ``options``) or ready-made
    binary masks. The result may overlap or leave gaps by design.
    """
    options = options or TrimaskAugmentOptions()
    rng = np.random.default_rng(seed)

    if isinstance(source, InstanceMatteSet):
        planes = source.planes
        if not planes:
            raise ValueError("need at least one instance")
        masks = []
        for plane in planes:
            if options.truncate:
                level = rng.uniform(*options.truncation_range)
                masks.append(BinaryMask(plane.values >= level))
            else:
                masks.append(quantize(plane))
    else:
        masks = list(source)
        if not masks:
            raise ValueError("need at least one instance")
    if not 0 <= target_index < len(masks):
        raise IndexError(f"target index {target_index} out of range for {len(masks)} masks")

    others = [j for j in range(len(masks)) if j != target_index]
    if options.reference_subset is not None:
        bad = set(options.reference_subset) - set(others)
        if bad:
            raise ValueError(f"reference_subset contains invalid indices {sorted(bad)}")
        chosen = list(options.reference_subset)
    elif options.subset_reference and others:
        keep = rng.random(len(others)) < 0.5
        chosen = [j for j, flag in zip(others, keep) if flag]
    else:
        chosen = others

    target = masks[target_index].bits
    reference = np.zeros_like(target)
    for j in chosen:
        reference |= masks[j].bits
    background = ~(target | reference)
    components = [BinaryMask(target), BinaryMask(reference), BinaryMask(background)]

    if options.perturb:
        perturbed = []
        for component in components:
            kernel = int(rng.integers(options.kernel_range[0], options.kernel_range[1] + 1))
            op = "dilate" if rng.random() < 0.5 else "erode"
            # Even draws map up to odd silently; the caller did not pick them.
            perturbed.append(morph(component, op, _normalize_kernel(kernel, warn=False)))
        components = perturbed

    return TriMask(*components)
