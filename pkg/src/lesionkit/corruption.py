"""Volume corruption transforms for self-supervised reconstruction.

Two corruptions operate on ``(C, D, H, W)`` patches: coarse dropout (fill
rectangular regions, or everything outside them, with low random values)
and pixel shuffling (permute voxels inside regions, independently per
channel).  Both are bit-reproducible: all draws come from the splitmix64
stream of :mod:`lesionkit.rand` in a fixed, documented order.

Draw protocol, per transform, on the stream seeded by ``cfg.rng_seed``:

1.  coarse dropout only: one uniform ``u``; keep-mode iff
    ``u < keep_mode_prob``.
2.  for each of ``n_regions`` regions, six draws: size_z, size_y, size_x
    as integers in [size_min, size_max], then origin_z, origin_y, origin_x
    as integers in [0, dim - size].
3.  coarse dropout, replace mode: one uniform per region, scaled to the
    fill range, written over all channels of the region (regions applied in
    draw order).
    coarse dropout, keep mode: one full-shape uniform field scaled to the
    fill range, written to every voxel outside the region union.
    pixel shuffle: for each region in draw order and each channel in index
    order, one Fisher-Yates permutation over the region's voxels (flattened
    z-major), applied to that channel.

``make_views`` duplicates a patch and corrupts each copy with dropout then
shuffle, using sub-stream seeds spawn(seed, view)->spawn(., 1|2) as defined
in :mod:`lesionkit.rand`.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError
from .rand import Rng

_DROPOUT_SALT = 1
_SHUFFLE_SALT = 2


@dataclass(frozen=True)
class CorruptionConfig:
    rng_seed: int = 0
    n_regions: int = 8
    region_size_range: tuple[int, int] = (4, 16)
    dropout_fill_range: tuple[float, float] = (0.0, 0.2)
    keep_mode_prob: float = 0.5

    def __post_init__(self):
        if self.n_regions < 1:
            raise ConfigError("n_regions must be >= 1")
        lo, hi = self.region_size_range
        if lo < 0 or hi < lo:
            raise ConfigError(f"region_size_range must be ordered and non-negative, got {self.region_size_range}")
        flo, fhi = self.dropout_fill_range
        if not (0.0 <= flo <= fhi <= 0.2):
            raise ConfigError(f"dropout_fill_range must lie within [0, 0.2], got {self.dropout_fill_range}")
        if not 0.0 <= self.keep_mode_prob <= 1.0:
            raise ConfigError("keep_mode_prob must be in [0, 1]")


def _check_patch(patch: np.ndarray, cfg: CorruptionConfig) -> np.ndarray:
    patch = np.asarray(patch, dtype=np.float64)
    if patch.ndim != 4:
        raise ConfigError(f"patch must be (C, D, H, W), got ndim={patch.ndim}")
    if cfg.region_size_range[1] > min(patch.shape[1:]):
        raise ConfigError(
            f"max region size {cfg.region_size_range[1]} exceeds patch dims {patch.shape[1:]}"
        )
    return patch


def _draw_regions(rng: Rng, dims: tuple[int, ...], cfg: CorruptionConfig) -> list[tuple[slice, slice, slice]]:
    lo, hi = cfg.region_size_range
    regions = []
    for _ in range(cfg.n_regions):
        sizes = [int(rng.integers(lo, hi + 1)) for _ in range(3)]
        starts = [int(rng.integers(0, dims[ax] - sizes[ax] + 1)) for ax in range(3)]
        regions.append(tuple(slice(s, s + n) for s, n in zip(starts, sizes)))
    return regions


def coarse_dropout(patch: np.ndarray, cfg: CorruptionConfig) -> np.ndarray:
    """Fill rectangular regions (replace mode) or their complement (keep
    mode) with values from the fill range.  Deterministic per seed."""
    patch = _check_patch(patch, cfg)
    rng = Rng(cfg.rng_seed)
    keep_mode = rng.uniform() < cfg.keep_mode_prob
    regions = _draw_regions(rng, patch.shape[1:], cfg)
    flo, fhi = cfg.dropout_fill_range
    out = patch.copy()
    if keep_mode:
        field = flo + rng.uniform(patch.shape) * (fhi - flo)
        keep = np.zeros(patch.shape[1:], dtype=bool)
        for region in regions:
            keep[region] = True
        out[:, ~keep] = field[:, ~keep]
    else:
        for region in regions:
            fill = flo + rng.uniform() * (fhi - flo)
            out[(slice(None), *region)] = fill
    return out


def pixel_shuffle(patch: np.ndarray, cfg: CorruptionConfig) -> np.ndarray:
    """Permute voxel values inside each region, independently per channel.

    The per-channel value multiset of the whole patch is preserved exactly.
    """
    patch = _check_patch(patch, cfg)
    rng = Rng(cfg.rng_seed)
    regions = _draw_regions(rng, patch.shape[1:], cfg)
    out = patch.copy()
    for region in regions:
        for c in range(patch.shape[0]):
            block = out[(c, *region)]
            perm = rng.permutation(block.size)
            out[(c, *region)] = block.ravel()[perm].reshape(block.shape)
    return out


def make_views(
    patch: np.ndarray,
    seed: int,
    cfg: CorruptionConfig | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Duplicate a patch and corrupt each copy independently (dropout, then
    shuffle).  Region parameters come from ``cfg``; its seed is ignored in
    favor of sub-streams derived from ``seed``."""
    base = cfg if cfg is not None else CorruptionConfig()
    views = []
    for view in (1, 2):
        stream = Rng(seed).spawn(view)
        dropped = coarse_dropout(patch, replace(base, rng_seed=stream.spawn(_DROPOUT_SALT).seed))
        shuffled = pixel_shuffle(dropped, replace(base, rng_seed=stream.spawn(_SHUFFLE_SALT).seed))
        views.append(shuffled)
    return views[0], views[1]
