"""Shared fixture builders for the test suite."""

from __future__ import annotations

import numpy as np

from mattekit import AlphaPlane, BinaryMask, InstanceMatteSet, Layer, TriStack


def plane(rows) -> AlphaPlane:
    return AlphaPlane(np.atleast_2d(np.asarray(rows, dtype=np.float64)))


def mask(rows) -> BinaryMask:
    return BinaryMask(np.atleast_2d(np.asarray(rows)))


def matte_set(*planes_, ids=None) -> InstanceMatteSet:
    return InstanceMatteSet.from_planes([plane(p) if not isinstance(p, AlphaPlane) else p for p in planes_], ids=ids)


def soft_blob(shape, center, radii, peak=1.0) -> np.ndarray:
    """Elliptical alpha with a soft fractional edge."""
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    d = ((yy - center[0]) / radii[0]) ** 2 + ((xx - center[1]) / radii[1]) ** 2
    return np.clip((1.0 - d) * 1.5, 0.0, 1.0) * peak


def blob_layer(shape, center, radii, color=0.8, peak=1.0) -> Layer:
    alpha = soft_blob(shape, center, radii, peak)
    return Layer(np.full(shape, color), AlphaPlane(alpha))


def random_blob_set(rng, shape, n, ids=None) -> InstanceMatteSet:
    """n soft instances scattered over the canvas."""
    h, w = shape
    planes = []
    for _ in range(n):
        center = (rng.uniform(0.2, 0.8) * h, rng.uniform(0.2, 0.8) * w)
        radii = (rng.uniform(0.15, 0.4) * h, rng.uniform(0.15, 0.4) * w)
        planes.append(AlphaPlane(soft_blob(shape, center, radii, peak=rng.uniform(0.6, 1.0))))
    return InstanceMatteSet.from_planes(planes, ids=ids)


def consistent_stack(rng, n, shape) -> TriStack:
    """Alpha stack at the refinement fixed point.

    Targets are a random sub-partition of unity; each reference is the sum of
    the other targets and every background is the shared complement.
    """
    h, w = shape
    raw = rng.random((n, h, w))
    budget = rng.uniform(0.2, 1.0, size=(h, w))
    targets = raw / raw.sum(axis=0) * budget
    sum_t = targets.sum(axis=0)
    background = 1.0 - sum_t
    values = np.empty((n, 3, h, w))
    for i in range(n):
        values[i, 0] = targets[i]
        values[i, 1] = sum_t - targets[i]
        values[i, 2] = background
    return TriStack(np.clip(values, 0.0, 1.0), alpha_valued=True)
