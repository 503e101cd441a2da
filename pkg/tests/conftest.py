"""Shared test helpers: finite differences and voxel-enumeration box oracles."""

from __future__ import annotations

import numpy as np
import pytest

from lesionkit.geometry import Box3


def central_diff(f, x: np.ndarray, h_scale: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient with per-coordinate step
    h = h_scale * (1 + |x_i|), in float64."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros(x.size)
    flat = x.ravel()
    for i in range(flat.size):
        h = h_scale * (1.0 + abs(flat[i]))
        up = flat.copy()
        up[i] += h
        down = flat.copy()
        down[i] -= h
        grad[i] = (f(up.reshape(x.shape)) - f(down.reshape(x.shape))) / (2.0 * h)
    return grad


def grad_rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max componentwise |a - n| / (1 + |n|)."""
    analytic = np.asarray(analytic).ravel()
    numeric = np.asarray(numeric).ravel()
    return float(np.max(np.abs(analytic - numeric) / (1.0 + np.abs(numeric))))


def enum_box_counts(a: Box3, b: Box3) -> tuple[int, int, int, int]:
    """Integer-voxel enumeration for integer-coordinate boxes: counts of
    (voxels in a, in b, in both, in hull).  Walks every voxel of the hull."""
    lo = [int(min(a.min[ax], b.min[ax])) for ax in range(3)]
    hi = [int(max(a.max[ax], b.max[ax])) for ax in range(3)]
    in_a = in_b = in_both = in_hull = 0
    for z in range(lo[0], hi[0]):
        for y in range(lo[1], hi[1]):
            for x in range(lo[2], hi[2]):
                in_hull += 1
                inside_a = (
                    a.min[0] <= z < a.max[0] and a.min[1] <= y < a.max[1] and a.min[2] <= x < a.max[2]
                )
                inside_b = (
                    b.min[0] <= z < b.max[0] and b.min[1] <= y < b.max[1] and b.min[2] <= x < b.max[2]
                )
                in_a += inside_a
                in_b += inside_b
                in_both += inside_a and inside_b
    return in_a, in_b, in_both, in_hull


def enum_iou(a: Box3, b: Box3) -> float:
    na, nb, nab, _ = enum_box_counts(a, b)
    return nab / (na + nb - nab)


def enum_giou(a: Box3, b: Box3) -> float:
    na, nb, nab, hull = enum_box_counts(a, b)
    union = na + nb - nab
    return nab / union - (hull - union) / hull


def random_int_box(rng: np.random.Generator, lo: int = 0, hi: int = 6, max_size: int = 4) -> Box3:
    mins = rng.integers(lo, hi, size=3)
    sizes = rng.integers(1, max_size + 1, size=3)
    return Box3(min=tuple(float(v) for v in mins), max=tuple(float(v) for v in mins + sizes))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
