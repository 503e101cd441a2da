"""Volume and label-mask containers with NIfTI-1 and RAW+JSON file I/O.

Grids are kept channel-first ``(C, Z, Y, X)`` as float64 in memory and
float32 on disk.  World coordinates are axis-aligned: the center of voxel
``i`` sits at ``origin + i * spacing`` per axis; rotation matrices in NIfTI
headers are ignored (documented limitation).

The RAW+JSON format is a JSON header next to a flat little-endian binary:

    {"shape": [z, y, x], "spacing": [sz, sy, sx], "dtype": "f32|u8|i16",
     "data": "<relative path>"}

with z-major payload order (z slowest, x fastest).  Two optional fields
extend the single-grid schema: ``"origin": [z, y, x]`` and
``"channels": ["pet", "ct", ...]`` (payload then channel-major).
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from .errors import ConfigError, InputFormatError
from .geometry import Box3

_NIFTI_DTYPES = {2: "u1", 4: "i2", 16: "f4"}
_RAW_DTYPES = {"f32": "<f4", "u8": "<u1", "i16": "<i2"}


@dataclass(frozen=True)
class Volume:
    """Multi-channel scalar grid with spacing/origin metadata."""

    data: np.ndarray  # (C, Z, Y, X) float64
    channel_names: tuple[str, ...]
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        if data.ndim != 4:
            raise ConfigError(f"volume data must be (C, Z, Y, X), got ndim={data.ndim}")
        names = tuple(str(n) for n in self.channel_names)
        if len(names) != data.shape[0]:
            raise ConfigError(f"{len(names)} channel names for {data.shape[0]} channels")
        if len(set(names)) != len(names):
            raise ConfigError(f"channel names must be unique, got {names}")
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise ConfigError(f"spacing components must be > 0, got {self.spacing}")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "channel_names", names)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape[1:]

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    def channel(self, name: str) -> np.ndarray:
        try:
            return self.data[self.channel_names.index(name)]
        except ValueError:
            raise KeyError(f"no channel named {name!r}; have {self.channel_names}") from None


@dataclass(frozen=True)
class LabelMask:
    """Integer grid; 0 is background, positive values are anatomy labels
    (1..104) or arbitrary instance ids."""

    labels: np.ndarray  # (Z, Y, X) int32
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        labels = np.ascontiguousarray(self.labels)
        if labels.ndim != 3:
            raise ConfigError(f"label mask must be (Z, Y, X), got ndim={labels.ndim}")
        if not np.issubdtype(labels.dtype, np.integer):
            raise ConfigError(f"label mask must be integer, got {labels.dtype}")
        if labels.size and labels.min() < 0:
            raise ConfigError("labels must be >= 0")
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise ConfigError(f"spacing components must be > 0, got {self.spacing}")
        labels = labels.astype(np.int32, copy=False)
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.labels.shape


@dataclass(frozen=True)
class Instance:
    id: int
    voxel_count: int
    bounding_box: Box3


@dataclass(frozen=True)
class InstanceSet:
    instances: tuple[Instance, ...]

    def __post_init__(self):
        ids = [inst.id for inst in self.instances]
        if len(set(ids)) != len(ids):
            raise ConfigError("instance ids must be unique")
        if any(inst.id < 1 or inst.voxel_count < 1 for inst in self.instances):
            raise ConfigError("instance ids and voxel counts must be positive")

    def __len__(self) -> int:
        return len(self.instances)


def _read_exact(fh, n: int, what: str, path) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise InputFormatError(f"{path}: truncated {what} ({len(buf)} of {n} bytes)")
    return buf


def load_nifti(path: str | Path, as_mask: bool = False, channel_name: str = "image"):
    """Read an uncompressed single-file NIfTI-1 volume.

    Supports 3-D uint8/int16/float32 grids with either byte order (detected
    from sizeof_hdr).  With ``as_mask`` the datatype must be integral and
    the result is a :class:`LabelMask`, otherwise a one-channel
    :class:`Volume`.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        head = _read_exact(fh, 348, "header", path)
        if head[:2] == b"\x1f\x8b":
            raise InputFormatError(f"{path}: gzip-compressed NIfTI is not supported; decompress to .nii first")
        if struct.unpack("<i", head[:4])[0] == 348:
            bo = "<"
        elif struct.unpack(">i", head[:4])[0] == 348:
            bo = ">"
        else:
            raise InputFormatError(f"{path}: not a NIfTI-1 file (sizeof_hdr != 348)")
        magic = head[344:348]
        if magic != b"n+1\x00":
            raise InputFormatError(f"{path}: bad magic {magic!r}, expected single-file 'n+1'")
        dim = struct.unpack(bo + "8h", head[40:56])
        if dim[0] != 3:
            raise InputFormatError(f"{path}: expected a 3-D volume, got dim[0]={dim[0]}")
        datatype = struct.unpack(bo + "h", head[70:72])[0]
        if datatype not in _NIFTI_DTYPES:
            raise InputFormatError(f"{path}: unsupported NIfTI datatype code {datatype}")
        pixdim = struct.unpack(bo + "8f", head[76:108])
        vox_offset = int(round(struct.unpack(bo + "f", head[108:112])[0]))
        qoffset = struct.unpack(bo + "3f", head[268:280])
        nx, ny, nz = dim[1], dim[2], dim[3]
        if min(nx, ny, nz) < 1:
            raise InputFormatError(f"{path}: non-positive dimensions {dim[1:4]}")
        dtype = np.dtype(bo + _NIFTI_DTYPES[datatype])
        fh.seek(vox_offset)
        payload = _read_exact(fh, nx * ny * nz * dtype.itemsize, "payload", path)
    # NIfTI payload order is x fastest, so a (z, y, x) C-order reshape is direct.
    arr = np.frombuffer(payload, dtype=dtype).reshape(nz, ny, nx)
    spacing = tuple(float(pixdim[i]) if pixdim[i] > 0 else 1.0 for i in (3, 2, 1))
    origin = (float(qoffset[2]), float(qoffset[1]), float(qoffset[0]))
    if as_mask:
        if datatype == 16:
            raise InputFormatError(f"{path}: float32 data cannot be loaded as a label mask")
        if arr.min() < 0:
            raise InputFormatError(f"{path}: negative values cannot be label ids")
        return LabelMask(labels=arr.astype(np.int32), spacing=spacing, origin=origin)
    return Volume(
        data=arr.astype(np.float64)[None],
        channel_names=(channel_name,),
        spacing=spacing,
        origin=origin,
    )


def _raw_header(path: Path) -> dict:
    try:
        header = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputFormatError(f"{path}: not valid JSON: {exc}") from exc
    for key in ("shape", "spacing", "dtype", "data"):
        if key not in header:
            raise InputFormatError(f"{path}: missing required field {key!r}")
    if header["dtype"] not in _RAW_DTYPES:
        raise InputFormatError(f"{path}: dtype must be one of {sorted(_RAW_DTYPES)}, got {header['dtype']!r}")
    if len(header["shape"]) != 3:
        raise InputFormatError(f"{path}: shape must have 3 entries")
    return header


def load_raw(json_header_path: str | Path, as_mask: bool = False):
    """Read a RAW+JSON grid (see module docstring for the schema)."""
    path = Path(json_header_path)
    header = _raw_header(path)
    shape = tuple(int(s) for s in header["shape"])
    channels = tuple(header.get("channels", ())) or None
    n_chan = len(channels) if channels else 1
    dtype = np.dtype(_RAW_DTYPES[header["dtype"]])
    bin_path = path.parent / header["data"]
    payload = bin_path.read_bytes()
    expected = n_chan * int(np.prod(shape)) * dtype.itemsize
    if len(payload) != expected:
        raise InputFormatError(f"{bin_path}: payload is {len(payload)} bytes, header implies {expected}")
    arr = np.frombuffer(payload, dtype=dtype).reshape((n_chan,) + shape)
    spacing = tuple(float(s) for s in header["spacing"])
    origin = tuple(float(o) for o in header.get("origin", (0.0, 0.0, 0.0)))
    if as_mask:
        if header["dtype"] == "f32":
            raise InputFormatError(f"{path}: f32 data cannot be loaded as a label mask")
        if channels is not None and n_chan != 1:
            raise InputFormatError(f"{path}: a label mask must be single-channel")
        if arr.min() < 0:
            raise InputFormatError(f"{path}: negative values cannot be label ids")
        return LabelMask(labels=arr[0].astype(np.int32), spacing=spacing, origin=origin)
    return Volume(
        data=arr.astype(np.float64),
        channel_names=channels or ("image",),
        spacing=spacing,
        origin=origin,
    )


def save_raw(obj: Volume | LabelMask, json_header_path: str | Path) -> None:
    """Write a Volume (f32) or LabelMask (i16) as RAW+JSON with a sidecar
    ``.bin`` next to the header."""
    path = Path(json_header_path)
    bin_path = path.with_suffix(".bin")
    if isinstance(obj, Volume):
        dtype, payload = "f32", obj.data.astype("<f4")
        header: dict = {"shape": list(obj.shape), "spacing": list(obj.spacing), "dtype": dtype,
                        "data": bin_path.name, "origin": list(obj.origin),
                        "channels": list(obj.channel_names)}
    elif isinstance(obj, LabelMask):
        if obj.labels.size and obj.labels.max() > np.iinfo(np.int16).max:
            raise ConfigError("label ids exceed the i16 on-disk range")
        dtype, payload = "i16", obj.labels.astype("<i2")
        header = {"shape": list(obj.shape), "spacing": list(obj.spacing), "dtype": dtype,
                  "data": bin_path.name, "origin": list(obj.origin)}
    else:
        raise ConfigError(f"cannot save object of type {type(obj).__name__}")
    bin_path.write_bytes(payload.tobytes())
    path.write_text(json.dumps(header, indent=1) + "\n")


def fuse_channels(pet: Volume, ct: Volume, anatomy: LabelMask | None = None) -> Volume:
    """Stack PET and CT (and optionally an anatomy mask) into one volume.

    PET/CT values are preserved bitwise.  The anatomy mask becomes a single
    scalar channel holding label/104 (0 for background).
    """
    if pet.n_channels != 1 or ct.n_channels != 1:
        raise ConfigError("fuse_channels expects single-channel PET and CT volumes")
    if pet.shape != ct.shape:
        raise ConfigError(f"PET shape {pet.shape} != CT shape {ct.shape}")
    grids = [pet.data[0], ct.data[0]]
    names = ["pet", "ct"]
    if anatomy is not None:
        if anatomy.shape != pet.shape:
            raise ConfigError(f"anatomy shape {anatomy.shape} != PET shape {pet.shape}")
        max_label = int(anatomy.labels.max()) if anatomy.labels.size else 0
        if max_label > 104:
            raise ConfigError(f"anatomy label {max_label} exceeds the 104-structure convention")
        grids.append(anatomy.labels.astype(np.float64) / 104.0)
        names.append("anatomy")
    return Volume(
        data=np.stack(grids, axis=0),
        channel_names=tuple(names),
        spacing=pet.spacing,
        origin=pet.origin,
    )


def resample_nearest(
    mask: LabelMask,
    target_shape: Sequence[int],
    target_spacing: Sequence[float],
    target_origin: Sequence[float] | None = None,
) -> LabelMask:
    """Nearest-neighbor resample in world coordinates; labels are copied,
    never interpolated.  Ties round half-up and indices clamp to the grid."""
    shape = tuple(int(s) for s in target_shape)
    spacing = tuple(float(s) for s in target_spacing)
    if any(s < 1 for s in shape) or any(s <= 0 for s in spacing):
        raise ConfigError("target shape and spacing must be positive")
    origin = tuple(float(o) for o in (target_origin if target_origin is not None else mask.origin))
    idx = []
    for ax in range(3):
        world = origin[ax] + np.arange(shape[ax]) * spacing[ax]
        src = np.floor((world - mask.origin[ax]) / mask.spacing[ax] + 0.5).astype(np.int64)
        idx.append(np.clip(src, 0, mask.shape[ax] - 1))
    labels = mask.labels[np.ix_(idx[0], idx[1], idx[2])]
    return LabelMask(labels=labels, spacing=spacing, origin=origin)


def connected_components(
    mask: LabelMask,
    foreground: Callable[[np.ndarray], np.ndarray] | None = None,
) -> InstanceSet:
    """Extract 26-connected foreground components with tight bounding boxes.

    ``foreground`` maps the label grid to a boolean grid (default: > 0).
    Ids are assigned 1..n in first-voxel raster-scan order (z, then y, x).
    """
    fg = foreground(mask.labels) if foreground is not None else mask.labels > 0
    fg = np.asarray(fg, dtype=bool)
    if fg.shape != mask.shape:
        raise ConfigError("foreground predicate changed the grid shape")
    labeled, n = ndimage.label(fg, structure=np.ones((3, 3, 3), dtype=bool))
    if n == 0:
        return InstanceSet(instances=())
    counts = np.bincount(labeled.ravel())[1:]
    slices = ndimage.find_objects(labeled)
    # Re-rank components by the flat index of their first voxel.
    first_seen = np.full(n + 1, labeled.size, dtype=np.int64)
    flat = labeled.ravel()
    nz = np.flatnonzero(flat)
    np.minimum.at(first_seen, flat[nz], nz)
    order = np.argsort(first_seen[1:], kind="stable")
    instances = []
    for rank, comp in enumerate(order, start=1):
        sl = slices[comp]
        box = Box3(
            min=(float(sl[0].start), float(sl[1].start), float(sl[2].start)),
            max=(float(sl[0].stop), float(sl[1].stop), float(sl[2].stop)),
        )
        instances.append(Instance(id=rank, voxel_count=int(counts[comp]), bounding_box=box))
    return InstanceSet(instances=tuple(instances))
