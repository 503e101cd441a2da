"""Dense 3-D numeric kernels and the named-tensor weight container.

All kernels compute in float64 with a fixed accumulation order (kernel
offsets visited in ascending z, y, x), so repeated runs on one build are
bitwise identical regardless of worker-thread counts.  Feature maps are
channel-first ``(C, D, H, W)``.

Weight files use the NTWS v1 layout: a UTF-8 JSON manifest

    {"tensors": [{"name": ..., "shape": [...], "dtype": "f32", "offset": N}],
     "blob": "<relative path>"}

next to a flat little-endian float32 blob with row-major tensors packed
back to back (byte offsets, non-overlapping, covering the whole blob).
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import erf

from .errors import ConfigError, InputFormatError


def conv3d(
    x: np.ndarray,
    w: np.ndarray,
    b: np.ndarray | None = None,
    stride: int = 1,
    pad: int = 0,
) -> np.ndarray:
    """Cross-correlation of (C_in, D, H, W) with (C_out, C_in, k, k, k).

    Output extent per axis is (n + 2*pad - k) / stride + 1 and must divide
    exactly.
    """
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if x.ndim != 4 or w.ndim != 5:
        raise ConfigError(f"conv3d expects 4-D input and 5-D weights, got {x.ndim}-D and {w.ndim}-D")
    c_out, c_in, kz, ky, kx = w.shape
    if not (kz == ky == kx):
        raise ConfigError("conv3d kernels must be cubic")
    k = kz
    if k % 2 == 0 and k != stride:
        raise ConfigError("conv3d kernel size must be odd (or equal to the stride for patchifying)")
    if pad < 0 or stride < 1:
        raise ConfigError("pad must be >= 0 and stride >= 1")
    if x.shape[0] != c_in:
        raise ConfigError(f"input has {x.shape[0]} channels, weights expect {c_in}")
    dims = np.array(x.shape[1:])
    if np.any((dims + 2 * pad - k) % stride != 0) or np.any(dims + 2 * pad < k):
        raise ConfigError(f"conv3d output extent not integral for dims {tuple(dims)}, k={k}, stride={stride}, pad={pad}")
    out_dims = (dims + 2 * pad - k) // stride + 1
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (pad, pad)))
    out = np.zeros((c_out, *out_dims))
    span = [(od - 1) * stride + 1 for od in out_dims]
    for i in range(k):
        for j in range(k):
            for l in range(k):
                xs = x[:, i : i + span[0] : stride, j : j + span[1] : stride, l : l + span[2] : stride]
                out += np.tensordot(w[:, :, i, j, l], xs, axes=([1], [0]))
    if b is not None:
        out += np.asarray(b, dtype=np.float64).reshape(c_out, 1, 1, 1)
    return out


def conv_transpose3d(
    x: np.ndarray,
    w: np.ndarray,
    b: np.ndarray | None = None,
    stride: int = 1,
) -> np.ndarray:
    """Transposed convolution (gradient-of-conv semantics) of
    (C_in, D, H, W) with (C_in, C_out, k, k, k); output extent is
    (n - 1) * stride + k per axis."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if x.ndim != 4 or w.ndim != 5:
        raise ConfigError(f"conv_transpose3d expects 4-D input and 5-D weights, got {x.ndim}-D and {w.ndim}-D")
    c_in, c_out, kz, ky, kx = w.shape
    if not (kz == ky == kx):
        raise ConfigError("conv_transpose3d kernels must be cubic")
    if stride < 1:
        raise ConfigError("stride must be >= 1")
    if x.shape[0] != c_in:
        raise ConfigError(f"input has {x.shape[0]} channels, weights expect {c_in}")
    k = kz
    dims = np.array(x.shape[1:])
    out_dims = (dims - 1) * stride + k
    out = np.zeros((c_out, *out_dims))
    span = [(d - 1) * stride + 1 for d in dims]
    for i in range(k):
        for j in range(k):
            for l in range(k):
                y = np.tensordot(w[:, :, i, j, l], x, axes=([0], [0]))
                out[:, i : i + span[0] : stride, j : j + span[1] : stride, l : l + span[2] : stride] += y
    if b is not None:
        out += np.asarray(b, dtype=np.float64).reshape(c_out, 1, 1, 1)
    return out


def linear(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Affine map over the last axis: x @ w.T + b with w of shape (out, in)."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 2 or x.shape[-1] != w.shape[1]:
        raise ConfigError(f"linear shape mismatch: input {x.shape} vs weights {w.shape}")
    out = x @ w.T
    if b is not None:
        out = out + np.asarray(b, dtype=np.float64)
    return out


def layernorm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Layer normalization over the last axis."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] == 0:
        raise ConfigError("layernorm over an empty axis")
    mean = x.mean(axis=-1, keepdims=True)
    var = np.mean((x - mean) ** 2, axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + eps) * np.asarray(gamma) + np.asarray(beta)


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact (erf-form) Gaussian error linear unit."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Max-shifted softmax along one axis."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[axis] == 0:
        raise ConfigError("softmax over an empty axis")
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def _upsample_axis_2x(x: np.ndarray, axis: int) -> np.ndarray:
    n = x.shape[axis]
    src = (np.arange(2 * n) + 0.5) / 2.0 - 0.5
    i0f = np.floor(src)
    t = src - i0f
    i0 = np.clip(i0f.astype(np.int64), 0, n - 1)
    i1 = np.clip(i0f.astype(np.int64) + 1, 0, n - 1)
    shape = [1] * x.ndim
    shape[axis] = 2 * n
    t = t.reshape(shape)
    return (1.0 - t) * np.take(x, i0, axis=axis) + t * np.take(x, i1, axis=axis)


def trilinear_upsample(x: np.ndarray) -> np.ndarray:
    """Factor-2 trilinear upsampling (align_corners=False) of (C, D, H, W).

    Separable per axis; constant fields map to constant fields and interior
    samples of a linear ramp stay equispaced.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise ConfigError(f"trilinear_upsample expects (C, D, H, W), got ndim={x.ndim}")
    for axis in (1, 2, 3):
        x = _upsample_axis_2x(x, axis)
    return x


class WeightStore:
    """Immutable named-tensor container (NTWS v1 on disk).

    Tensors are float32 on disk and float64 in memory; names are unique and
    lookups check the requested shape.
    """

    def __init__(self, tensors: Mapping[str, np.ndarray] | Iterable[tuple[str, np.ndarray]] = ()):
        items = tensors.items() if isinstance(tensors, Mapping) else tensors
        self._tensors: dict[str, np.ndarray] = {}
        for name, arr in items:
            if name in self._tensors:
                raise ConfigError(f"duplicate tensor name {name!r}")
            a = np.asarray(arr, dtype=np.float64).copy()
            a.flags.writeable = False
            self._tensors[str(name)] = a

    def names(self) -> tuple[str, ...]:
        return tuple(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def get(self, name: str, shape: Sequence[int] | None = None) -> np.ndarray:
        if name not in self._tensors:
            raise ConfigError(f"weight store has no tensor named {name!r}")
        arr = self._tensors[name]
        if shape is not None and arr.shape != tuple(shape):
            raise ConfigError(f"tensor {name!r} has shape {arr.shape}, expected {tuple(shape)}")
        return arr


def save_weights(store: WeightStore, path: str | Path) -> None:
    """Write an NTWS v1 manifest plus its ``.bin`` blob sidecar."""
    path = Path(path)
    blob_path = path.with_suffix(path.suffix + ".bin") if path.suffix != ".json" else path.with_suffix(".bin")
    manifest = []
    chunks = []
    offset = 0
    for name in store.names():
        arr = store.get(name).astype("<f4")
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": "f32", "offset": offset})
        chunks.append(arr.tobytes())
        offset += len(chunks[-1])
    blob_path.write_bytes(b"".join(chunks))
    path.write_text(json.dumps({"tensors": manifest, "blob": blob_path.name}, indent=1) + "\n")


def load_weights(path: str | Path) -> WeightStore:
    """Read an NTWS v1 weight file, validating the manifest invariants."""
    path = Path(path)
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputFormatError(f"{path}: not valid JSON: {exc}") from exc
    if "tensors" not in manifest or "blob" not in manifest:
        raise InputFormatError(f"{path}: manifest needs 'tensors' and 'blob' fields")
    blob = (path.parent / manifest["blob"]).read_bytes()
    entries = manifest["tensors"]
    names = [e.get("name") for e in entries]
    if len(set(names)) != len(names):
        raise InputFormatError(f"{path}: duplicate tensor names in manifest")
    spans = []
    tensors = []
    for e in entries:
        if e.get("dtype") != "f32":
            raise InputFormatError(f"{path}: tensor {e.get('name')!r} has unsupported dtype {e.get('dtype')!r}")
        shape = tuple(int(s) for s in e["shape"])
        size = int(np.prod(shape, dtype=np.int64)) * 4
        offset = int(e["offset"])
        if offset < 0 or offset + size > len(blob):
            raise InputFormatError(f"{path}: tensor {e['name']!r} extends past the blob")
        spans.append((offset, offset + size, e["name"]))
        arr = np.frombuffer(blob, dtype="<f4", count=size // 4, offset=offset).reshape(shape)
        tensors.append((e["name"], arr.astype(np.float64)))
    spans.sort()
    for (s0, e0, n0), (s1, e1, n1) in zip(spans, spans[1:]):
        if s1 < e0:
            raise InputFormatError(f"{path}: tensors {n0!r} and {n1!r} overlap")
    if sum(e - s for s, e, _ in spans) != len(blob):
        raise InputFormatError(f"{path}: blob size {len(blob)} does not match the manifest total")
    return WeightStore(tensors)
