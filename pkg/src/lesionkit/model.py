"""Forward-only detection networks.

Two interchangeable encoders (a shifted-window transformer and a
double-conv baseline) feed a feature pyramid with shared detection heads
plus an auxiliary segmentation head; a two-layer transposed-convolution
decoder turns the transformer bottleneck into an autoencoder for the
self-supervised reconstruction task.

Tokens are laid out ``(D, H, W, C)``; feature maps channel-first
``(C, D, H, W)``.  Weight tensors live in a :class:`~lesionkit.nn.WeightStore`
under the dotted names produced by :func:`weight_spec`, e.g.
``swin.stage2.block3.attn.qkv.weight`` — any trainer that can emit NTWS v1
files with these names can drive inference here.

Window rule: attention uses the configured window on axes it divides; on a
non-dividing axis the window widens to the full token extent (global
attention) and the cyclic shift is disabled there.  Relative-position
tables are sized from the effective window, which ties a weight file to
the (config, patch shape) pair it was built for.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit

from .errors import ConfigError
from .geometry import AnchorGrid, Box3, Detection, decode_batch, filter_detections, generate_anchors, nms
from .nn import WeightStore, conv3d, conv_transpose3d, gelu, layernorm, linear, softmax, trilinear_upsample
from .rand import Rng
from .volume import Volume


@dataclass(frozen=True)
class SwinConfig:
    in_channels: int = 2
    patch_size: int = 2
    embed_dim: int = 96
    depths: tuple[int, ...] = (2, 2, 6, 2)
    num_heads: tuple[int, ...] = (3, 6, 12, 24)
    window: tuple[int, int, int] = (4, 4, 4)
    mlp_ratio: int = 4

    def __post_init__(self):
        if len(self.depths) != len(self.num_heads):
            raise ConfigError("depths and num_heads must have equal length")
        if self.patch_size < 1 or self.embed_dim < 1 or self.in_channels < 1:
            raise ConfigError("patch_size, embed_dim and in_channels must be positive")
        if any(w < 1 for w in self.window):
            raise ConfigError("window extents must be positive")
        for i, heads in enumerate(self.num_heads):
            if (self.embed_dim << i) % heads != 0:
                raise ConfigError(
                    f"stage {i + 1} channels {self.embed_dim << i} not divisible by {heads} heads"
                )

    @property
    def n_stages(self) -> int:
        return len(self.depths)

    def stage_channels(self, stage: int) -> int:
        """Channel width at which stage ``stage`` (1-based) runs its blocks."""
        return self.embed_dim << (stage - 1)

    def feature_strides(self) -> tuple[int, ...]:
        """Strides of [embed, stage1, .., stageN] outputs in input voxels."""
        return tuple(self.patch_size << i for i in range(self.n_stages + 1))

    def validate_input_shape(self, shape: Sequence[int]) -> None:
        div = self.patch_size << self.n_stages
        if any(s % div != 0 for s in shape):
            raise ConfigError(
                f"input dims {tuple(shape)} must be divisible by patch_size * 2^stages = {div}"
            )


@dataclass(frozen=True)
class ConvEncoderConfig:
    in_channels: int = 2
    base_channels: int = 32
    n_stages: int = 5

    def __post_init__(self):
        if self.base_channels < 1 or self.n_stages < 2 or self.in_channels < 1:
            raise ConfigError("conv encoder needs positive channels and >= 2 stages")

    def stage_channels(self, stage: int) -> int:
        return self.base_channels << (stage - 1)

    def feature_strides(self) -> tuple[int, ...]:
        return tuple(2 << i for i in range(self.n_stages))

    def validate_input_shape(self, shape: Sequence[int]) -> None:
        div = 2**self.n_stages
        if any(s % div != 0 for s in shape):
            raise ConfigError(f"input dims {tuple(shape)} must be divisible by 2^stages = {div}")


@dataclass(frozen=True)
class FpnConfig:
    channels: int = 64

    def __post_init__(self):
        if self.channels < 1:
            raise ConfigError("fpn channels must be positive")


@dataclass(frozen=True)
class AnchorConfig:
    aspect_ratios: tuple[tuple[float, float, float], ...] = (
        (1.0, 1.0, 1.0),
        (1.25, 1.0, 0.8),
        (0.8, 1.0, 1.25),
    )
    size_per_stride: float = 2.0

    def base_sizes(self, strides: Sequence[int]) -> tuple[float, ...]:
        return tuple(self.size_per_stride * s for s in strides)


@dataclass(frozen=True)
class DetectorConfig:
    encoder: str = "swin"
    swin: SwinConfig = SwinConfig()
    conv: ConvEncoderConfig = ConvEncoderConfig()
    fpn: FpnConfig = FpnConfig()
    anchors: AnchorConfig = AnchorConfig()
    tower_depth: int = 2
    num_classes: int = 1

    def __post_init__(self):
        if self.encoder not in ("swin", "conv"):
            raise ConfigError(f"encoder must be 'swin' or 'conv', got {self.encoder!r}")
        if self.num_classes < 1 or self.tower_depth < 0:
            raise ConfigError("num_classes must be >= 1 and tower_depth >= 0")

    @property
    def in_channels(self) -> int:
        return self.swin.in_channels if self.encoder == "swin" else self.conv.in_channels

    def feature_strides(self) -> tuple[int, ...]:
        active = self.swin if self.encoder == "swin" else self.conv
        return active.feature_strides()

    def detection_strides(self) -> tuple[int, ...]:
        # The highest-resolution pyramid level is reserved for segmentation.
        return self.feature_strides()[1:]


@dataclass(frozen=True)
class PostprocConfig:
    min_score: float = 0.05
    min_volume_voxels: float = 0.0
    nms_iou: float = 0.5

    def __post_init__(self):
        if self.min_score < 0 or self.min_volume_voxels < 0 or not 0 < self.nms_iou <= 1:
            raise ConfigError("invalid post-processing thresholds")


@dataclass(frozen=True)
class ModelOutput:
    class_logits: tuple[np.ndarray, ...]  # per detection level: (cells * A, K)
    box_deltas: tuple[np.ndarray, ...]  # per detection level: (cells * A, 6)
    seg_logits: np.ndarray  # (K, D, H, W) at the highest-resolution level
    strides: tuple[int, ...]
    reconstruction: np.ndarray | None = None


# ---------------------------------------------------------------------------
# Swin encoder components


def effective_window(dims: Sequence[int], window: Sequence[int]) -> tuple[int, ...]:
    """Configured window where it divides the token grid, else the full axis."""
    return tuple(w if d % w == 0 else d for d, w in zip(dims, window))


def patch_embed(x: np.ndarray, cfg: SwinConfig, store: WeightStore, prefix: str = "patch_embed") -> np.ndarray:
    """Patchify with a stride-p conv and layer-normalize the tokens."""
    p, c = cfg.patch_size, cfg.embed_dim
    if any(d % p != 0 for d in x.shape[1:]):
        raise ConfigError(f"input dims {x.shape[1:]} not divisible by patch size {p}")
    w = store.get(f"{prefix}.proj.weight", (c, cfg.in_channels, p, p, p))
    b = store.get(f"{prefix}.proj.bias", (c,))
    tokens = conv3d(x, w, b, stride=p).transpose(1, 2, 3, 0)
    return layernorm(tokens, store.get(f"{prefix}.norm.weight", (c,)), store.get(f"{prefix}.norm.bias", (c,)))


def window_partition(tokens: np.ndarray, window: Sequence[int]) -> np.ndarray:
    """(D, H, W, C) -> (n_windows, window_volume, C); token (z, y, x) lands in
    window (z//wz, y//wy, x//wx) at intra-window index (z%wz, y%wy, x%wx)."""
    d, h, w, c = tokens.shape
    wz, wy, wx = window
    if d % wz or h % wy or w % wx:
        raise ConfigError(f"token dims {(d, h, w)} not divisible by window {tuple(window)}")
    x = tokens.reshape(d // wz, wz, h // wy, wy, w // wx, wx, c)
    return x.transpose(0, 2, 4, 1, 3, 5, 6).reshape(-1, wz * wy * wx, c)


def window_reverse(windows: np.ndarray, dims: Sequence[int], window: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`window_partition`."""
    d, h, w = dims
    wz, wy, wx = window
    c = windows.shape[-1]
    x = windows.reshape(d // wz, h // wy, w // wx, wz, wy, wx, c)
    return x.transpose(0, 3, 1, 4, 2, 5, 6).reshape(d, h, w, c)


def relative_position_index(window: Sequence[int]) -> np.ndarray:
    """(V, V) indices into the (2wz-1)(2wy-1)(2wx-1) displacement table."""
    wz, wy, wx = window
    coords = np.stack(np.meshgrid(np.arange(wz), np.arange(wy), np.arange(wx), indexing="ij"), axis=0)
    flat = coords.reshape(3, -1)
    rel = flat[:, :, None] - flat[:, None, :]  # (3, V, V)
    rel = rel + np.array([wz - 1, wy - 1, wx - 1]).reshape(3, 1, 1)
    return (rel[0] * (2 * wy - 1) + rel[1]) * (2 * wx - 1) + rel[2]


def window_attention(
    windows: np.ndarray,
    num_heads: int,
    qkv_w: np.ndarray,
    qkv_b: np.ndarray,
    proj_w: np.ndarray,
    proj_b: np.ndarray,
    bias_table: np.ndarray,
    rel_index: np.ndarray,
    mask: np.ndarray | None = None,
) -> np.ndarray:
    """Multi-head attention within each window with relative-position bias.

    ``mask`` is an additive (n_windows, V, V) array of 0 / -inf applied
    before the softmax.
    """
    nw, v, c = windows.shape
    if c % num_heads:
        raise ConfigError(f"token dim {c} not divisible by {num_heads} heads")
    hd = c // num_heads
    qkv = linear(windows, qkv_w, qkv_b).reshape(nw, v, 3, num_heads, hd).transpose(2, 0, 3, 1, 4)
    q, k, val = qkv[0], qkv[1], qkv[2]
    attn = (q @ k.transpose(0, 1, 3, 2)) * hd**-0.5  # (nw, heads, V, V)
    attn = attn + bias_table[rel_index].transpose(2, 0, 1)[None]
    if mask is not None:
        attn = attn + mask[:, None]
    attn = softmax(attn, axis=-1)
    out = (attn @ val).transpose(0, 2, 1, 3).reshape(nw, v, c)
    return linear(out, proj_w, proj_b)


def _axis_segments(dim: int, win: int, shift: int) -> list[slice]:
    if shift == 0:
        return [slice(0, dim)]
    return [slice(0, dim - win), slice(dim - win, dim - shift), slice(dim - shift, dim)]


def shift_attention_mask(dims: Sequence[int], window: Sequence[int], shift: Sequence[int]) -> np.ndarray:
    """Additive mask that forbids attention between tokens whose pre-roll
    regions differ, per window of the rolled grid."""
    region = np.zeros(tuple(dims))
    count = 0
    for sz in _axis_segments(dims[0], window[0], shift[0]):
        for sy in _axis_segments(dims[1], window[1], shift[1]):
            for sx in _axis_segments(dims[2], window[2], shift[2]):
                region[sz, sy, sx] = count
                count += 1
    win_regions = window_partition(region[..., None], window)[..., 0]  # (nW, V)
    same = win_regions[:, :, None] == win_regions[:, None, :]
    return np.where(same, 0.0, -np.inf)


def swin_block(
    tokens: np.ndarray,
    cfg: SwinConfig,
    store: WeightStore,
    prefix: str,
    num_heads: int,
    shifted: bool,
) -> np.ndarray:
    """Pre-norm transformer block: window attention (optionally on a
    half-window cyclic shift, with the cross-boundary mask) plus an MLP."""
    dims = tokens.shape[:3]
    c = tokens.shape[3]
    win = effective_window(dims, cfg.window)
    shift = tuple(
        w // 2 if (shifted and win[ax] == cfg.window[ax] and dims[ax] > win[ax]) else 0
        for ax, w in enumerate(win)
    )
    x = layernorm(tokens, store.get(f"{prefix}.norm1.weight", (c,)), store.get(f"{prefix}.norm1.bias", (c,)))
    mask = None
    if any(shift):
        x = np.roll(x, shift=tuple(-s for s in shift), axis=(0, 1, 2))
        mask = shift_attention_mask(dims, win, shift)
    table_rows = (2 * win[0] - 1) * (2 * win[1] - 1) * (2 * win[2] - 1)
    attn = window_attention(
        window_partition(x, win),
        num_heads,
        store.get(f"{prefix}.attn.qkv.weight", (3 * c, c)),
        store.get(f"{prefix}.attn.qkv.bias", (3 * c,)),
        store.get(f"{prefix}.attn.proj.weight", (c, c)),
        store.get(f"{prefix}.attn.proj.bias", (c,)),
        store.get(f"{prefix}.attn.rel_pos_bias", (table_rows, num_heads)),
        relative_position_index(win),
        mask,
    )
    x = window_reverse(attn, dims, win)
    if any(shift):
        x = np.roll(x, shift=shift, axis=(0, 1, 2))
    x = tokens + x
    hidden = cfg.mlp_ratio * c
    h = layernorm(x, store.get(f"{prefix}.norm2.weight", (c,)), store.get(f"{prefix}.norm2.bias", (c,)))
    h = linear(gelu(linear(h, store.get(f"{prefix}.mlp.fc1.weight", (hidden, c)),
                           store.get(f"{prefix}.mlp.fc1.bias", (hidden,)))),
               store.get(f"{prefix}.mlp.fc2.weight", (c, hidden)),
               store.get(f"{prefix}.mlp.fc2.bias", (c,)))
    return x + h


def patch_merging(tokens: np.ndarray, store: WeightStore, prefix: str) -> np.ndarray:
    """Concatenate the 8 children of each 2x2x2 token group (z-major order),
    layer-normalize, and project 8C -> 2C."""
    d, h, w, c = tokens.shape
    if d % 2 or h % 2 or w % 2:
        raise ConfigError(f"patch merging needs even token dims, got {(d, h, w)}")
    children = [
        tokens[dz::2, dy::2, dx::2]
        for dz in (0, 1)
        for dy in (0, 1)
        for dx in (0, 1)
    ]
    x = np.concatenate(children, axis=-1)
    x = layernorm(x, store.get(f"{prefix}.norm.weight", (8 * c,)), store.get(f"{prefix}.norm.bias", (8 * c,)))
    return linear(x, store.get(f"{prefix}.reduction.weight", (2 * c, 8 * c)))


def swin_encoder_forward(x: np.ndarray, cfg: SwinConfig, store: WeightStore) -> list[np.ndarray]:
    """Channel-first features [embed, stage1, .., stageN] at strides
    p, 2p, .., (2^N)p with widths C, 2C, .., (2^N)C."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4 or x.shape[0] != cfg.in_channels:
        raise ConfigError(f"expected ({cfg.in_channels}, D, H, W) input, got {x.shape}")
    cfg.validate_input_shape(x.shape[1:])
    tokens = patch_embed(x, cfg, store)
    feats = [tokens.transpose(3, 0, 1, 2)]
    for stage in range(1, cfg.n_stages + 1):
        for j in range(cfg.depths[stage - 1]):
            tokens = swin_block(
                tokens, cfg, store, f"swin.stage{stage}.block{j}",
                cfg.num_heads[stage - 1], shifted=(j % 2 == 1),
            )
        tokens = patch_merging(tokens, store, f"swin.stage{stage}.merge")
        feats.append(tokens.transpose(3, 0, 1, 2))
    return feats


def conv_encoder_forward(x: np.ndarray, cfg: ConvEncoderConfig, store: WeightStore) -> list[np.ndarray]:
    """Five double-conv stages, each halving resolution: a stride-2 size-2
    conv followed by a 3x3x3 conv, GELU after both."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4 or x.shape[0] != cfg.in_channels:
        raise ConfigError(f"expected ({cfg.in_channels}, D, H, W) input, got {x.shape}")
    cfg.validate_input_shape(x.shape[1:])
    feats = []
    cur = x
    prev_c = cfg.in_channels
    for stage in range(1, cfg.n_stages + 1):
        c = cfg.stage_channels(stage)
        cur = gelu(conv3d(cur, store.get(f"conv.stage{stage}.conv1.weight", (c, prev_c, 2, 2, 2)),
                          store.get(f"conv.stage{stage}.conv1.bias", (c,)), stride=2))
        cur = gelu(conv3d(cur, store.get(f"conv.stage{stage}.conv2.weight", (c, c, 3, 3, 3)),
                          store.get(f"conv.stage{stage}.conv2.bias", (c,)), stride=1, pad=1))
        feats.append(cur)
        prev_c = c
    return feats


def fpn_forward(features: Sequence[np.ndarray], cfg: FpnConfig, store: WeightStore) -> list[np.ndarray]:
    """Feature pyramid: 1x1 laterals, top-down 2x trilinear upsampling with
    addition, then a 3x3x3 output conv per level."""
    if len(features) < 1:
        raise ConfigError("fpn needs at least one feature level")
    f = cfg.channels
    laterals = []
    for lvl, feat in enumerate(features):
        c_in = feat.shape[0]
        laterals.append(conv3d(feat, store.get(f"fpn.lateral{lvl}.weight", (f, c_in, 1, 1, 1)),
                               store.get(f"fpn.lateral{lvl}.bias", (f,))))
    pyramid: list[np.ndarray | None] = [None] * len(features)
    top_down = laterals[-1]
    for lvl in range(len(features) - 1, -1, -1):
        if lvl < len(features) - 1:
            top_down = laterals[lvl] + trilinear_upsample(top_down)
        pyramid[lvl] = conv3d(top_down, store.get(f"fpn.output{lvl}.weight", (f, f, 3, 3, 3)),
                              store.get(f"fpn.output{lvl}.bias", (f,)), pad=1)
    return pyramid  # type: ignore[return-value]


def _flatten_head_map(x: np.ndarray, per_cell: int, width: int) -> np.ndarray:
    """(A*width, D, H, W) -> (cells * A, width) in z, y, x cell order with the
    template index fastest, matching the anchor grid ordering."""
    a = per_cell
    _, d, h, w = x.shape
    return x.reshape(a, width, d, h, w).transpose(2, 3, 4, 0, 1).reshape(-1, width)


def heads_forward(pyramid: Sequence[np.ndarray], cfg: DetectorConfig, store: WeightStore) -> ModelOutput:
    """Shared conv towers over all detection levels (every pyramid level but
    the highest-resolution one, which feeds the segmentation head)."""
    f = cfg.fpn.channels
    k = cfg.num_classes
    a = len(cfg.anchors.aspect_ratios)
    seg = conv3d(pyramid[0], store.get("head.seg.logits.weight", (k, f, 1, 1, 1)),
                 store.get("head.seg.logits.bias", (k,)))
    cls_out = []
    reg_out = []
    for level in pyramid[1:]:
        t = level
        for depth in range(cfg.tower_depth):
            t = gelu(conv3d(t, store.get(f"head.cls.tower{depth}.weight", (f, f, 3, 3, 3)),
                            store.get(f"head.cls.tower{depth}.bias", (f,)), pad=1))
        logits = conv3d(t, store.get("head.cls.logits.weight", (a * k, f, 1, 1, 1)),
                        store.get("head.cls.logits.bias", (a * k,)))
        cls_out.append(_flatten_head_map(logits, a, k))
        t = level
        for depth in range(cfg.tower_depth):
            t = gelu(conv3d(t, store.get(f"head.reg.tower{depth}.weight", (f, f, 3, 3, 3)),
                            store.get(f"head.reg.tower{depth}.bias", (f,)), pad=1))
        deltas = conv3d(t, store.get("head.reg.deltas.weight", (6 * a, f, 1, 1, 1)),
                        store.get("head.reg.deltas.bias", (6 * a,)))
        reg_out.append(_flatten_head_map(deltas, a, 6))
    return ModelOutput(
        class_logits=tuple(cls_out),
        box_deltas=tuple(reg_out),
        seg_logits=seg,
        strides=cfg.feature_strides()[1 : 1 + len(cls_out)],
    )


def forward(x: np.ndarray, cfg: DetectorConfig, store: WeightStore) -> ModelOutput:
    """Encoder -> FPN -> heads on a (C, D, H, W) input."""
    if cfg.encoder == "swin":
        feats = swin_encoder_forward(x, cfg.swin, store)
    else:
        feats = conv_encoder_forward(x, cfg.conv, store)
    pyramid = fpn_forward(feats, cfg.fpn, store)
    return heads_forward(pyramid, cfg, store)


def build_anchors(image_shape: Sequence[int], cfg: DetectorConfig) -> AnchorGrid:
    strides = cfg.detection_strides()
    return generate_anchors(image_shape, strides, cfg.anchors.base_sizes(strides), cfg.anchors.aspect_ratios)


def infer(
    volume: Volume,
    cfg: DetectorConfig,
    store: WeightStore,
    post: PostprocConfig = PostprocConfig(),
    case_id: str = "case",
) -> list[Detection]:
    """Full detection pass: forward, sigmoid scores, delta decoding against
    the anchor grid, clipping to the volume, score/size filtering and NMS.
    Deterministic for fixed inputs."""
    if volume.n_channels != cfg.in_channels:
        raise ConfigError(
            f"volume has {volume.n_channels} channels but the {cfg.encoder} encoder expects {cfg.in_channels}"
        )
    out = forward(volume.data, cfg, store)
    grid = build_anchors(volume.shape, cfg)
    for level, logits in zip(grid.levels, out.class_logits):
        if len(level.boxes) != logits.shape[0]:
            raise ConfigError(
                f"anchor/head mismatch at stride {level.stride}: {len(level.boxes)} anchors vs {logits.shape[0]} cells"
            )
    scores = expit(np.concatenate(out.class_logits, axis=0))  # (N, K)
    boxes = decode_batch(grid.all_boxes, np.concatenate(out.box_deltas, axis=0))
    dims = np.array(volume.shape, dtype=np.float64)
    lo = np.clip(boxes[:, :3], 0.0, dims)
    hi = np.clip(boxes[:, 3:], 0.0, dims)
    detections = []
    for cls in range(scores.shape[1]):
        keep = scores[:, cls] >= post.min_score
        for i in np.flatnonzero(keep):
            if np.all(hi[i] > lo[i]):
                detections.append(
                    Detection(case_id=case_id, box=Box3(min=tuple(lo[i]), max=tuple(hi[i])),
                              score=float(scores[i, cls]), label=cls + 1)
                )
    detections = filter_detections(detections, post.min_score, post.min_volume_voxels)
    return nms(detections, post.nms_iou)


def ssl_forward(patch: np.ndarray, cfg: SwinConfig, store: WeightStore) -> np.ndarray:
    """Autoencoder pass: transformer bottleneck, then two stride-matched
    transposed convolutions (4x then 8x) back to the input resolution and
    channel count."""
    feats = swin_encoder_forward(patch, cfg, store)
    bottleneck = feats[-1]
    c_bottom = bottleneck.shape[0]
    c = cfg.embed_dim
    up = conv_transpose3d(bottleneck, store.get("ssl.deconv1.weight", (c_bottom, c, 4, 4, 4)),
                          store.get("ssl.deconv1.bias", (c,)), stride=4)
    rec = conv_transpose3d(up, store.get("ssl.deconv2.weight", (c, cfg.in_channels, 8, 8, 8)),
                           store.get("ssl.deconv2.bias", (cfg.in_channels,)), stride=8)
    if rec.shape != patch.shape:
        raise ConfigError(f"reconstruction shape {rec.shape} != input shape {patch.shape}")
    return rec


# ---------------------------------------------------------------------------
# Weight enumeration and initialization


def _swin_weight_spec(cfg: SwinConfig, image_shape: Sequence[int]) -> list[tuple[str, tuple[int, ...]]]:
    cfg.validate_input_shape(image_shape)
    p, c0 = cfg.patch_size, cfg.embed_dim
    spec: list[tuple[str, tuple[int, ...]]] = [
        ("patch_embed.proj.weight", (c0, cfg.in_channels, p, p, p)),
        ("patch_embed.proj.bias", (c0,)),
        ("patch_embed.norm.weight", (c0,)),
        ("patch_embed.norm.bias", (c0,)),
    ]
    dims = tuple(s // p for s in image_shape)
    for stage in range(1, cfg.n_stages + 1):
        c = cfg.stage_channels(stage)
        win = effective_window(dims, cfg.window)
        rows = (2 * win[0] - 1) * (2 * win[1] - 1) * (2 * win[2] - 1)
        for j in range(cfg.depths[stage - 1]):
            pre = f"swin.stage{stage}.block{j}"
            spec += [
                (f"{pre}.norm1.weight", (c,)), (f"{pre}.norm1.bias", (c,)),
                (f"{pre}.attn.qkv.weight", (3 * c, c)), (f"{pre}.attn.qkv.bias", (3 * c,)),
                (f"{pre}.attn.rel_pos_bias", (rows, cfg.num_heads[stage - 1])),
                (f"{pre}.attn.proj.weight", (c, c)), (f"{pre}.attn.proj.bias", (c,)),
                (f"{pre}.norm2.weight", (c,)), (f"{pre}.norm2.bias", (c,)),
                (f"{pre}.mlp.fc1.weight", (cfg.mlp_ratio * c, c)), (f"{pre}.mlp.fc1.bias", (cfg.mlp_ratio * c,)),
                (f"{pre}.mlp.fc2.weight", (c, cfg.mlp_ratio * c)), (f"{pre}.mlp.fc2.bias", (c,)),
            ]
        spec += [
            (f"swin.stage{stage}.merge.norm.weight", (8 * c,)),
            (f"swin.stage{stage}.merge.norm.bias", (8 * c,)),
            (f"swin.stage{stage}.merge.reduction.weight", (2 * c, 8 * c)),
        ]
        dims = tuple(d // 2 for d in dims)
    return spec


def _conv_weight_spec(cfg: ConvEncoderConfig) -> list[tuple[str, tuple[int, ...]]]:
    spec: list[tuple[str, tuple[int, ...]]] = []
    prev = cfg.in_channels
    for stage in range(1, cfg.n_stages + 1):
        c = cfg.stage_channels(stage)
        spec += [
            (f"conv.stage{stage}.conv1.weight", (c, prev, 2, 2, 2)), (f"conv.stage{stage}.conv1.bias", (c,)),
            (f"conv.stage{stage}.conv2.weight", (c, c, 3, 3, 3)), (f"conv.stage{stage}.conv2.bias", (c,)),
        ]
        prev = c
    return spec


def weight_spec(
    cfg: DetectorConfig,
    image_shape: Sequence[int],
    include_ssl_head: bool = False,
) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) pairs for every tensor the forward pass reads."""
    if cfg.encoder == "swin":
        spec = _swin_weight_spec(cfg.swin, image_shape)
        enc_channels = [cfg.swin.embed_dim << i for i in range(cfg.swin.n_stages + 1)]
    else:
        cfg.conv.validate_input_shape(image_shape)
        spec = _conv_weight_spec(cfg.conv)
        enc_channels = [cfg.conv.stage_channels(i) for i in range(1, cfg.conv.n_stages + 1)]
    f = cfg.fpn.channels
    for lvl, c_in in enumerate(enc_channels):
        spec += [
            (f"fpn.lateral{lvl}.weight", (f, c_in, 1, 1, 1)), (f"fpn.lateral{lvl}.bias", (f,)),
            (f"fpn.output{lvl}.weight", (f, f, 3, 3, 3)), (f"fpn.output{lvl}.bias", (f,)),
        ]
    a, k = len(cfg.anchors.aspect_ratios), cfg.num_classes
    for branch in ("cls", "reg"):
        for depth in range(cfg.tower_depth):
            spec += [
                (f"head.{branch}.tower{depth}.weight", (f, f, 3, 3, 3)),
                (f"head.{branch}.tower{depth}.bias", (f,)),
            ]
    spec += [
        ("head.cls.logits.weight", (a * k, f, 1, 1, 1)), ("head.cls.logits.bias", (a * k,)),
        ("head.reg.deltas.weight", (6 * a, f, 1, 1, 1)), ("head.reg.deltas.bias", (6 * a,)),
        ("head.seg.logits.weight", (k, f, 1, 1, 1)), ("head.seg.logits.bias", (k,)),
    ]
    if include_ssl_head:
        if cfg.encoder != "swin":
            raise ConfigError("the reconstruction head attaches to the swin encoder only")
        c = cfg.swin.embed_dim
        c_bottom = cfg.swin.embed_dim << cfg.swin.n_stages
        spec += [
            ("ssl.deconv1.weight", (c_bottom, c, 4, 4, 4)), ("ssl.deconv1.bias", (c,)),
            ("ssl.deconv2.weight", (c, cfg.swin.in_channels, 8, 8, 8)), ("ssl.deconv2.bias", (cfg.swin.in_channels,)),
        ]
    return spec


def zero_weights(cfg: DetectorConfig, image_shape: Sequence[int], include_ssl_head: bool = False) -> WeightStore:
    """All-zero weights; every classification score comes out at 0.5."""
    return WeightStore((name, np.zeros(shape)) for name, shape in weight_spec(cfg, image_shape, include_ssl_head))


def random_weights(
    cfg: DetectorConfig,
    image_shape: Sequence[int],
    seed: int = 0,
    scale: float = 0.02,
    include_ssl_head: bool = False,
) -> WeightStore:
    """Reproducible N(0, scale^2) weights; norm gains start at 1, biases and
    norm shifts at 0."""
    rng = Rng(seed)
    tensors = []
    for name, shape in weight_spec(cfg, image_shape, include_ssl_head):
        if name.endswith("norm.weight") or ".norm1.weight" in name or ".norm2.weight" in name:
            tensors.append((name, np.ones(shape)))
        elif name.endswith(".bias"):
            tensors.append((name, np.zeros(shape)))
        else:
            tensors.append((name, scale * np.asarray(rng.normal(shape))))
    return WeightStore(tensors)
