"""Deterministic synthetic PET/CT phantoms with known ground truth.

A phantom is a noisy background plus axis-aligned ellipsoids: labeled
organs on the anatomy mask (a configurable subset being "hot", i.e.
physiologic high-uptake structures such as liver, brain or bladder that
mimic lesions on PET) and tracer-avid lesions that form the ground truth.

Construction guarantees the detection tests can rely on:

* background noise is clipped to +-noise_clip sigma, so thresholding at
  background + 5 sigma never fires on noise;
* lesion voxels are set to background + lesion_contrast sigma exactly and
  hot-organ voxels slightly higher, so hot organs outrank lesions by score
  and a run without anatomy masking always loses precision;
* lesion masks are pairwise non-adjacent and disjoint from hot organs, so
  connected components recover exactly one instance per lesion.

Everything is drawn from the documented splitmix64 stream; a spec with the
same seed reproduces bit-identical volumes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .geometry import Box3, Detection
from .rand import Rng
from .volume import LabelMask, Volume, connected_components

_NOISE_SALT = 1
_ORGAN_SALT = 2
_LESION_SALT = 3
_PLACEMENT_ATTEMPTS = 200


@dataclass(frozen=True)
class PhantomSpec:
    shape: tuple[int, int, int] = (96, 96, 96)
    seed: int = 0
    n_lesions: int = 3
    lesion_radius: tuple[float, float] = (3.0, 8.0)
    n_organs: int = 5
    hot_organ_labels: tuple[int, ...] = (5, 90, 104)
    organ_radius: tuple[float, float] = (8.0, 16.0)
    noise_sigma: float = 0.05
    background: float = 0.5
    lesion_contrast: float = 8.0
    hot_contrast: float = 10.0
    noise_clip: float = 4.5

    def __post_init__(self):
        if any(s < 8 for s in self.shape):
            raise ConfigError("phantom dims must be >= 8 voxels")
        if self.n_lesions < 0 or self.n_organs < 0:
            raise ConfigError("counts must be >= 0")
        if len(self.hot_organ_labels) > self.n_organs:
            raise ConfigError("more hot organ labels than organs")
        if any(not 1 <= lab <= 104 for lab in self.hot_organ_labels):
            raise ConfigError("organ labels must lie in 1..104")
        for lo, hi in (self.lesion_radius, self.organ_radius):
            if not 1.0 <= lo <= hi:
                raise ConfigError("radius ranges must be ordered and >= 1")
        if 2 * self.lesion_radius[1] >= min(self.shape) or 2 * self.organ_radius[1] >= min(self.shape):
            raise ConfigError("ellipsoids must fit inside the volume")
        if self.noise_sigma <= 0 or self.noise_clip <= 0:
            raise ConfigError("noise sigma and clip must be > 0")
        if not self.noise_clip < 5.0 <= self.lesion_contrast < self.hot_contrast:
            raise ConfigError("need noise_clip < 5 <= lesion_contrast < hot_contrast")

    @property
    def detect_threshold(self) -> float:
        """Intensity cut separating tracer-avid voxels from background."""
        return self.background + 5.0 * self.noise_sigma


@dataclass(frozen=True)
class PhantomCase:
    pet: Volume
    ct: Volume
    anatomy: LabelMask
    lesion_mask: LabelMask  # instance ids 1..n_lesions
    gt_boxes: tuple[Box3, ...]


def _ellipsoid_mask(shape: tuple[int, int, int], center: np.ndarray, radii: np.ndarray) -> np.ndarray:
    zz, yy, xx = np.ogrid[: shape[0], : shape[1], : shape[2]]
    return (
        ((zz - center[0]) / radii[0]) ** 2
        + ((yy - center[1]) / radii[1]) ** 2
        + ((xx - center[2]) / radii[2]) ** 2
    ) <= 1.0


def _tight_box(mask: np.ndarray) -> Box3:
    idx = np.nonzero(mask)
    return Box3(
        min=tuple(float(ax.min()) for ax in idx),
        max=tuple(float(ax.max()) + 1.0 for ax in idx),
    )


def _draw_ellipsoid(rng: Rng, shape: tuple[int, int, int], radius_range: tuple[float, float]):
    lo, hi = radius_range
    radii = np.array([lo + rng.uniform() * (hi - lo) for _ in range(3)])
    center = np.array(
        [radii[ax] + 1 + rng.uniform() * (shape[ax] - 2 * (radii[ax] + 1)) for ax in range(3)]
    )
    return center, radii


def generate(spec: PhantomSpec) -> PhantomCase:
    """Build one phantom: PET/CT volumes, anatomy labels, the lesion
    instance mask and tight ground-truth boxes."""
    shape = spec.shape
    rng = Rng(spec.seed)
    noise = rng.spawn(_NOISE_SALT)
    clip = spec.noise_clip
    pet = spec.background + spec.noise_sigma * np.clip(noise.normal(shape), -clip, clip)
    ct = 0.2 + 0.05 * np.clip(noise.normal(shape), -clip, clip)
    anatomy = np.zeros(shape, dtype=np.int32)

    organ_rng = rng.spawn(_ORGAN_SALT)
    n_hot = len(spec.hot_organ_labels)
    cold_pool = [lab for lab in range(1, 105) if lab not in spec.hot_organ_labels]
    for organ in range(spec.n_organs):
        center, radii = _draw_ellipsoid(organ_rng, shape, spec.organ_radius)
        mask = _ellipsoid_mask(shape, center, radii)
        if organ < n_hot:
            label = spec.hot_organ_labels[organ]
        else:
            label = cold_pool[int(organ_rng.integers(0, len(cold_pool)))]
        anatomy[mask] = label
        ct[mask] = 0.35 + 0.04 * (organ % 5)
    # Uptake follows the final label owner, so masking by label removes it all.
    hot_voxels = np.isin(anatomy, spec.hot_organ_labels)
    pet[hot_voxels] = spec.background + spec.hot_contrast * spec.noise_sigma

    lesion_rng = rng.spawn(_LESION_SALT)
    lesion_mask = np.zeros(shape, dtype=np.int32)
    gt_boxes: list[Box3] = []
    for lesion in range(spec.n_lesions):
        placed = False
        for _ in range(_PLACEMENT_ATTEMPTS):
            center, radii = _draw_ellipsoid(lesion_rng, shape, spec.lesion_radius)
            mask = _ellipsoid_mask(shape, center, radii)
            if not mask.any():
                continue
            box = _tight_box(mask)
            # One-voxel margin against other lesions and hot organs keeps
            # every lesion its own 26-connected component.
            grown = tuple(
                slice(max(0, int(box.min[ax]) - 1), min(shape[ax], int(box.max[ax]) + 1))
                for ax in range(3)
            )
            if lesion_mask[grown].any() or hot_voxels[grown].any():
                continue
            lesion_mask[mask] = lesion + 1
            pet[mask] = spec.background + spec.lesion_contrast * spec.noise_sigma
            gt_boxes.append(box)
            placed = True
            break
        if not placed:
            raise ConfigError(
                f"could not place lesion {lesion + 1}/{spec.n_lesions} after {_PLACEMENT_ATTEMPTS} attempts"
            )
    return PhantomCase(
        pet=Volume(data=pet[None], channel_names=("pet",)),
        ct=Volume(data=ct[None], channel_names=("ct",)),
        anatomy=LabelMask(labels=anatomy),
        lesion_mask=LabelMask(labels=lesion_mask),
        gt_boxes=tuple(gt_boxes),
    )


def threshold_detect(
    pet: Volume,
    threshold: float,
    anatomy: LabelMask | None = None,
    exclude_labels: tuple[int, ...] = (),
    min_voxels: int = 1,
    case_id: str = "case",
    channel: str = "pet",
) -> list[Detection]:
    """Oracle detector: threshold the PET channel, optionally blank voxels
    whose anatomy label is excluded, then box the connected components.
    Scores are the peak intensity inside each component."""
    grid = pet.channel(channel)
    hot = grid >= threshold
    if anatomy is not None:
        if anatomy.shape != pet.shape:
            raise ConfigError(f"anatomy shape {anatomy.shape} != volume shape {pet.shape}")
        if exclude_labels:
            hot &= ~np.isin(anatomy.labels, exclude_labels)
    instances = connected_components(LabelMask(labels=hot.astype(np.int32), spacing=pet.spacing, origin=pet.origin))
    detections = []
    for inst in instances.instances:
        if inst.voxel_count < min_voxels:
            continue
        region = tuple(slice(int(lo), int(hi)) for lo, hi in zip(inst.bounding_box.min, inst.bounding_box.max))
        score = float(grid[region].max())
        detections.append(Detection(case_id=case_id, box=inst.bounding_box, score=score, label=1))
    return detections
