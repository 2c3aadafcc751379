"""Layered-scene synthesis with exact composition ground truth.

Foreground layers stack bottom-to-top over a background; each instance's
effective (post-occlusion) alpha is the closed form of the iterative blend,
so the per-instance ground truth and the composite agree by construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import AlphaPlane, DimensionError, InstanceMatteSet, _frozen


class PlacementError(RuntimeError):
    """No valid arrangement found for the requested foregrounds."""


def _as_color(values: np.ndarray) -> np.ndarray:
    values = np.array(values, dtype=np.float64, copy=True)
    if values.ndim not in (2, 3) or min(values.shape[:2]) < 1:
        raise ValueError(f"color plane must be 2-D or 3-D, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise ValueError("color plane contains non-finite values")
    if values.min() < 0.0 or values.max() > 1.0:
        raise ValueError("color intensities must lie in [0, 1]")
    return _frozen(values)


def _alpha_grid(alpha: np.ndarray, color: np.ndarray) -> np.ndarray:
    # Broadcast a (H, W) alpha against (H, W) or (H, W, C) colors.
    return alpha if color.ndim == 2 else alpha[:, :, None]


@dataclass(frozen=True)
class Layer:
    """A color plane plus its raw (pre-occlusion) alpha."""

    color: np.ndarray
    alpha: AlphaPlane

    def __post_init__(self) -> None:
        color = _as_color(self.color)
        if color.shape[:2] != self.alpha.shape:
            raise DimensionError(f"color shape {color.shape[:2]} != alpha shape {self.alpha.shape}")
        object.__setattr__(self, "color", color)

    @property
    def shape(self) -> tuple[int, int]:
        return self.alpha.shape


@dataclass(frozen=True)
class PlacementPolicy:
    """Bounds for random scaling and spacing of composited foregrounds.

    ``overlap_range`` is the signed horizontal overlap between neighbours as a
    fraction of the incoming foreground's width (negative means a gap).
    Arrangements leaving any instance with less than ``min_visible_fraction``
    of its support visible are resampled.
    """

    scale_range: tuple[float, float] = (0.4, 1.0)
    overlap_range: tuple[float, float] = (-0.3, 0.5)
    min_visible_fraction: float = 0.05
    max_tries: int = 100

    def __post_init__(self) -> None:
        lo, hi = self.scale_range
        if not 0 < lo <= hi <= 1.0:
            raise ValueError(f"scale_range must satisfy 0 < lo <= hi <= 1, got {self.scale_range}")
        lo, hi = self.overlap_range
        if not -1.0 <= lo <= hi <= 1.0:
            raise ValueError(f"overlap_range must lie within [-1, 1], got {self.overlap_range}")
        if not 0.0 <= self.min_visible_fraction <= 1.0:
            raise ValueError("min_visible_fraction must lie in [0, 1]")
        if self.max_tries < 1:
            raise ValueError("max_tries must be at least 1")


@dataclass(frozen=True)
class SparsityReport:
    """Distribution of how many layers (background included) are visible per pixel."""

    histogram: dict[int, int]
    pixels: int

    @property
    def fractions(self) -> dict[int, float]:
        return {k: v / self.pixels for k, v in sorted(self.histogram.items())}

    def fraction_above(self, count: int) -> float:
        return sum(v for k, v in self.histogram.items() if k > count) / self.pixels


@dataclass(frozen=True)
class LayeredScene:
    """Background plus ordered foregrounds with their effective alphas.

    Construction verifies the two defining identities: effective alphas
    (background included) partition unity at every pixel, and the iterated
    blend equals the effective-alpha weighted sum of layers.
    """

    background: Layer
    foregrounds: tuple[Layer, ...]
    effective: InstanceMatteSet
    background_alpha: AlphaPlane
    composite: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "foregrounds", tuple(self.foregrounds))
        object.__setattr__(self, "composite", _as_color(self.composite))
        shape = self.background.shape
        for layer in self.foregrounds:
            if layer.shape != shape:
                raise DimensionError("every layer must match the background canvas")
        total = self.background_alpha.values + (
            self.effective.stacked().sum(axis=0) if len(self.effective) else 0.0
        )
        if np.abs(total - 1.0).max() > 1e-6:
            raise ValueError("effective alphas do not partition unity")
        check = self.background_alpha.values[..., None] if self.composite.ndim == 3 else self.background_alpha.values
        recombined = check * self.background.color
        for (_, eff), layer in zip(self.effective, self.foregrounds):
            recombined = recombined + _alpha_grid(eff.values, layer.color) * layer.color
        if np.abs(recombined - self.composite).max() > 1e-6:
            raise ValueError("composite does not match the effective-alpha expansion")

    @property
    def n_instances(self) -> int:
        return len(self.foregrounds)


def composite_step(fg: Layer, under: np.ndarray) -> np.ndarray:
    """One blend step: alpha * color + (1 - alpha) * image-so-far."""
    under = np.asarray(under, dtype=np.float64)
    if under.shape[:2] != fg.shape:
        raise DimensionError(f"layer shape {fg.shape} != image shape {under.shape[:2]}")
    a = _alpha_grid(fg.alpha.values, under)
    return a * fg.color + (1.0 - a) * under


def effective_alphas(raw: Sequence[AlphaPlane]) -> tuple[InstanceMatteSet, AlphaPlane]:
    """Visible per-instance alphas after occlusion by the layers above.

    Instance j keeps alpha_j times the transparency product of all layers
    above it; the background keeps the transparency product of every layer.
    Returns instance ids 1..n in stacking order plus the background plane.
    """
    if not raw:
        shape = (1, 1)
        return InstanceMatteSet(()), AlphaPlane(np.ones(shape))
    stack = np.stack([p.values for p in raw])
    n = stack.shape[0]
    transparency = 1.0 - stack
    # above[j] = product of (1 - alpha_k) for all k > j
    above = np.ones_like(stack)
    for j in range(n - 2, -1, -1):
        above[j] = above[j + 1] * transparency[j + 1]
    effective = stack * above
    background = above[0] * transparency[0]
    planes = [AlphaPlane(effective[j]) for j in range(n)]
    return InstanceMatteSet.from_planes(planes, ids=range(1, n + 1)), AlphaPlane(background)


def _resize_bilinear(values: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Plain bilinear resample; convex, so [0, 1] ranges survive exactly."""
    h, w = values.shape[:2]
    out_h, out_w = shape
    if (out_h, out_w) == (h, w):
        return values.copy()
    rows = np.linspace(0, h - 1, out_h)
    cols = np.linspace(0, w - 1, out_w)
    r0 = np.floor(rows).astype(int)
    c0 = np.floor(cols).astype(int)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (rows - r0)[:, None]
    fc = (cols - c0)[None, :]
    if values.ndim == 3:
        fr = fr[..., None]
        fc = fc[..., None]
    top = values[np.ix_(r0, c0)] * (1 - fc) + values[np.ix_(r0, c1)] * fc
    bottom = values[np.ix_(r1, c0)] * (1 - fc) + values[np.ix_(r1, c1)] * fc
    return top * (1 - fr) + bottom * fr


def _paste(canvas_shape: tuple[int, int], tile: np.ndarray, top: int, left: int) -> np.ndarray:
    h, w = tile.shape[:2]
    out_shape = canvas_shape if tile.ndim == 2 else (*canvas_shape, tile.shape[2])
    out = np.zeros(out_shape)
    out[top : top + h, left : left + w] = tile
    return out


def compose_scene(
    foregrounds: Sequence[Layer],
    background: np.ndarray,
    policy: PlacementPolicy | None = None,
    seed: int | tuple[int, ...] = 0,
) -> LayeredScene:
    """Scale, place, and composite 2-5 foregrounds onto a background.

    Placement is drawn from the policy's ranges: each foreground is scaled to
    a fraction of the background height, neighbours overlap (or gap) by a
    random fraction of their width, and vertical position is uniform within
    the canvas. Deterministic for a fixed seed.
    """
    policy = policy or PlacementPolicy()
    n = len(foregrounds)
    if not 2 <= n <= 5:
        raise ValueError(f"scenes composite 2-5 foregrounds, got {n}")
    bg_color = _as_color(background).copy()
    bg_h, bg_w = bg_color.shape[:2]
    rng = np.random.default_rng(seed)

    for _ in range(policy.max_tries):
        scaled_colors = []
        scaled_alphas = []
        for layer in foregrounds:
            scale = rng.uniform(*policy.scale_range)
            h = max(int(round(scale * bg_h)), 1)
            w = max(int(round(h * layer.shape[1] / layer.shape[0])), 1)
            if w > bg_w:
                h = max(int(round(h * bg_w / w)), 1)
                w = bg_w
            scaled_colors.append(_resize_bilinear(layer.color, (h, w)))
            scaled_alphas.append(np.clip(_resize_bilinear(layer.alpha.values, (h, w)), 0.0, 1.0))

        lefts = [0.0]
        for i in range(1, n):
            overlap = rng.uniform(*policy.overlap_range) * scaled_alphas[i].shape[1]
            lefts.append(lefts[i - 1] + scaled_alphas[i - 1].shape[1] - overlap)
        extent_lo = min(lefts)
        extent_hi = max(left + a.shape[1] for left, a in zip(lefts, scaled_alphas))
        extent = extent_hi - extent_lo
        if extent > bg_w:
            continue
        shift = rng.uniform(0.0, bg_w - extent) - extent_lo
        tops = [int(rng.uniform(0, bg_h - a.shape[0] + 1)) for a in scaled_alphas]

        raw_alphas = []
        colors = []
        for alpha, color, left, top in zip(scaled_alphas, scaled_colors, lefts, tops):
            col = int(min(max(left + shift, 0), bg_w - alpha.shape[1]))
            raw_alphas.append(AlphaPlane(_paste((bg_h, bg_w), alpha, top, col)))
            colors.append(_paste((bg_h, bg_w), color, top, col))

        effective, background_alpha = effective_alphas(raw_alphas)
        visible = True
        for raw, (_, eff) in zip(raw_alphas, effective):
            raw_support = np.count_nonzero(raw.values)
            if raw_support == 0:
                visible = False
                break
            if np.count_nonzero(eff.values) < policy.min_visible_fraction * raw_support:
                visible = False
                break
        if not visible:
            continue

        layers = tuple(Layer(c, a) for c, a in zip(colors, raw_alphas))
        image = bg_color
        for layer in layers:
            image = composite_step(layer, image)
        return LayeredScene(
            background=Layer(bg_color, AlphaPlane(np.ones((bg_h, bg_w)))),
            foregrounds=layers,
            effective=effective,
            background_alpha=background_alpha,
            composite=image,
        )
    raise PlacementError(f"no valid arrangement after {policy.max_tries} tries")


def sparsity_audit(scene: LayeredScene) -> SparsityReport:
    """Histogram of strictly positive effective alphas per pixel, background included."""
    counts = (scene.background_alpha.values > 0).astype(np.int64)
    if len(scene.effective):
        counts = counts + (scene.effective.stacked() > 0).sum(axis=0)
    values, freq = np.unique(counts, return_counts=True)
    return SparsityReport({int(v): int(f) for v, f in zip(values, freq)}, int(counts.size))


def tri_layer_colors(scene: LayeredScene, target_index: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Color planes for the target, combined-reference, and background layers.

    The reference color is the effective-alpha weighted mean of the other
    instances' layers, making the three-layer blend reproduce the composite
    exactly wherever reference alpha is nonzero.
    """
    n = scene.n_instances
    if not 0 <= target_index < n:
        raise IndexError(f"target index {target_index} out of range for {n} instances")
    target_color = scene.foregrounds[target_index].color
    others = [
        (eff.values, layer.color)
        for i, ((_, eff), layer) in enumerate(zip(scene.effective, scene.foregrounds))
        if i != target_index
    ]
    if others:
        weight = np.zeros(scene.background.shape)
        blend = np.zeros_like(target_color, dtype=np.float64)
        for eff, color in others:
            weight = weight + eff
            blend = blend + _alpha_grid(eff, color) * color
        safe = np.where(weight > 0, weight, 1.0)
        reference_color = blend / _alpha_grid(safe, blend)
    else:
        reference_color = np.zeros_like(target_color, dtype=np.float64)
    return target_color, reference_color, scene.background.color
