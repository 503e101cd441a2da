"""Model component tests: window attention against a dense loop oracle,
shift-mask region bookkeeping, merging/FPN/head composition, and the
end-to-end inference contract on constructed weight sets."""

import hashlib
import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from lesionkit.errors import ConfigError
from lesionkit.geometry import Box3, decode_batch, filter_detections, nms
from lesionkit.model import (
    AnchorConfig,
    ConvEncoderConfig,
    DetectorConfig,
    FpnConfig,
    PostprocConfig,
    SwinConfig,
    build_anchors,
    conv_encoder_forward,
    effective_window,
    fpn_forward,
    forward,
    heads_forward,
    infer,
    patch_embed,
    patch_merging,
    random_weights,
    relative_position_index,
    shift_attention_mask,
    ssl_forward,
    swin_block,
    swin_encoder_forward,
    weight_spec,
    window_attention,
    window_partition,
    window_reverse,
    zero_weights,
)
from lesionkit.nn import WeightStore, conv3d, layernorm, linear, trilinear_upsample
from lesionkit.volume import Volume
from scipy.special import expit

GOLDEN = Path(__file__).parent / "golden" / "model.json"


def small_cfg(in_channels=2):
    return DetectorConfig(
        encoder="swin",
        swin=SwinConfig(in_channels=in_channels),
        conv=ConvEncoderConfig(in_channels=in_channels),
        fpn=FpnConfig(channels=16),
        tower_depth=1,
    )


def digest(arr):
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()


class TestSwinConfig:
    def test_defaults_match_published_architecture(self):
        cfg = SwinConfig()
        assert cfg.embed_dim == 96
        assert cfg.depths == (2, 2, 6, 2)
        assert cfg.num_heads == (3, 6, 12, 24)
        assert cfg.window == (4, 4, 4)
        assert cfg.patch_size == 2
        assert cfg.mlp_ratio == 4

    def test_head_divisibility_enforced(self):
        with pytest.raises(ConfigError, match="heads"):
            SwinConfig(embed_dim=50, num_heads=(3, 6, 12, 24))

    def test_input_shape_divisibility(self):
        with pytest.raises(ConfigError, match="divisible"):
            SwinConfig().validate_input_shape((40, 40, 40))

    def test_effective_window_falls_back_to_axis(self):
        assert effective_window((6, 8, 12), (4, 4, 4)) == (6, 4, 4)


class TestPatchEmbed:
    def test_constant_input_gives_identical_tokens(self, rng):
        cfg = small_cfg()
        store = random_weights(cfg, (32, 32, 32), seed=1)
        tokens = patch_embed(np.full((2, 8, 8, 8), 0.3), cfg.swin, store)
        np.testing.assert_allclose(tokens, np.broadcast_to(tokens[0, 0, 0], tokens.shape), atol=1e-12)

    def test_equals_conv_plus_layernorm_composition(self, rng):
        cfg = small_cfg()
        store = random_weights(cfg, (32, 32, 32), seed=2)
        x = rng.normal(size=(2, 8, 8, 8))
        tokens = patch_embed(x, cfg.swin, store)
        p, c = cfg.swin.patch_size, cfg.swin.embed_dim
        expected = conv3d(x, store.get("patch_embed.proj.weight"), store.get("patch_embed.proj.bias"), stride=p)
        expected = layernorm(
            expected.transpose(1, 2, 3, 0),
            store.get("patch_embed.norm.weight"),
            store.get("patch_embed.norm.bias"),
        )
        np.testing.assert_allclose(tokens, expected, atol=1e-12)


class TestWindowOps:
    def test_window_count(self, rng):
        tokens = rng.normal(size=(24, 24, 24, 3))
        windows = window_partition(tokens, (4, 4, 4))
        assert windows.shape == (216, 64, 3)

    def test_partition_reverse_round_trip(self, rng):
        tokens = rng.normal(size=(8, 12, 16, 5))
        windows = window_partition(tokens, (4, 4, 4))
        back = window_reverse(windows, (8, 12, 16), (4, 4, 4))
        np.testing.assert_array_equal(back, tokens)

    def test_index_mapping_law(self):
        d = h = w = 8
        coords = np.stack(np.meshgrid(np.arange(d), np.arange(h), np.arange(w), indexing="ij"), axis=-1)
        windows = window_partition(coords.astype(float), (4, 4, 4))
        for z, y, x in [(0, 0, 0), (3, 5, 7), (7, 7, 7), (4, 1, 6)]:
            win_idx = ((z // 4) * 2 + (y // 4)) * 2 + (x // 4)
            intra = ((z % 4) * 4 + (y % 4)) * 4 + (x % 4)
            np.testing.assert_array_equal(windows[win_idx, intra], (z, y, x))

    def test_divisibility_enforced(self, rng):
        with pytest.raises(ConfigError, match="divisible"):
            window_partition(rng.normal(size=(6, 8, 8, 2)), (4, 4, 4))


def _attention_oracle(windows, heads, qkv_w, qkv_b, proj_w, proj_b, table, index, mask=None):
    """Dense per-window, per-head attention with explicit loops."""
    nw, v, c = windows.shape
    hd = c // heads
    out = np.zeros_like(windows)
    for n in range(nw):
        qkv = windows[n] @ qkv_w.T + qkv_b  # (v, 3c)
        q, k, val = qkv[:, :c], qkv[:, c : 2 * c], qkv[:, 2 * c :]
        merged = np.zeros((v, c))
        for h in range(heads):
            qh = q[:, h * hd : (h + 1) * hd]
            kh = k[:, h * hd : (h + 1) * hd]
            vh = val[:, h * hd : (h + 1) * hd]
            scores = qh @ kh.T / np.sqrt(hd) + table[index, h]
            if mask is not None:
                scores = scores + mask[n]
            weights = np.exp(scores - scores.max(axis=1, keepdims=True))
            weights /= weights.sum(axis=1, keepdims=True)
            merged[:, h * hd : (h + 1) * hd] = weights @ vh
        out[n] = merged @ proj_w.T + proj_b
    return out


class TestWindowAttention:
    def _weights(self, rng, c, heads, window):
        rows = (2 * window[0] - 1) * (2 * window[1] - 1) * (2 * window[2] - 1)
        return dict(
            num_heads=heads,
            qkv_w=rng.normal(size=(3 * c, c)) * 0.2,
            qkv_b=rng.normal(size=3 * c) * 0.1,
            proj_w=rng.normal(size=(c, c)) * 0.2,
            proj_b=rng.normal(size=c) * 0.1,
            bias_table=rng.normal(size=(rows, heads)) * 0.2,
            rel_index=relative_position_index(window),
        )

    def test_single_token_window_is_projected_value(self, rng):
        c = 8
        w = self._weights(rng, c, heads=2, window=(1, 1, 1))
        x = rng.normal(size=(5, 1, c))
        out = window_attention(x, **w)
        value = linear(x, w["qkv_w"], w["qkv_b"])[..., 2 * c :]
        expected = linear(value, w["proj_w"], w["proj_b"])
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_matches_dense_oracle(self, rng):
        c, heads, window = 8, 2, (2, 2, 2)
        w = self._weights(rng, c, heads, window)
        x = rng.normal(size=(3, 8, c))
        got = window_attention(x, **w)
        expected = _attention_oracle(x, heads, w["qkv_w"], w["qkv_b"], w["proj_w"], w["proj_b"],
                                     w["bias_table"], w["rel_index"])
        np.testing.assert_allclose(got, expected, atol=1e-10)

    def test_rows_sum_to_one_via_constant_value_probe(self, rng):
        """With the value projection pinned to a constant, the output equals
        proj(constant) iff every attention row sums to 1."""
        c, heads, window = 6, 3, (2, 2, 2)
        w = self._weights(rng, c, heads, window)
        qkv_w = w["qkv_w"].copy()
        qkv_b = w["qkv_b"].copy()
        qkv_w[2 * c :] = 0.0
        qkv_b[2 * c :] = 1.5  # value vector = 1.5 everywhere
        out = window_attention(rng.normal(size=(4, 8, c)), w["num_heads"], qkv_w, qkv_b,
                               w["proj_w"], w["proj_b"], w["bias_table"], w["rel_index"])
        expected = np.full(c, 1.5) @ w["proj_w"].T + w["proj_b"]
        np.testing.assert_allclose(out, np.broadcast_to(expected, out.shape), atol=1e-10)

    def test_relative_position_index_shape_and_symmetry(self):
        idx = relative_position_index((4, 4, 4))
        assert idx.shape == (64, 64)
        assert idx.min() >= 0 and idx.max() < 7**3
        # Zero displacement sits on the diagonal and is the table midpoint.
        assert len(set(np.diag(idx).tolist())) == 1


def _preroll_region_id(coord, dim, win, shift):
    """Region of a pre-roll coordinate: tokens that wrap around the volume
    edge during the cyclic shift must not mix with tokens that do not."""
    if shift == 0:
        return 0
    if coord < shift:
        return 2
    if coord >= dim - win + shift:
        return 1
    return 0


class TestShiftedWindows:
    def test_roll_round_trip(self, rng):
        x = rng.normal(size=(8, 8, 8, 4))
        shifted = np.roll(x, shift=(-2, -2, -2), axis=(0, 1, 2))
        np.testing.assert_array_equal(np.roll(shifted, shift=(2, 2, 2), axis=(0, 1, 2)), x)

    def test_shift_disabled_on_single_window_axes(self, rng):
        """Token grids no larger than the window run the unshifted path, so
        alternating blocks coincide bitwise."""
        cfg = replace(small_cfg(), swin=SwinConfig(in_channels=2, window=(8, 8, 8)))
        store = random_weights(cfg, (32, 32, 32), seed=3)
        tokens = rng.normal(size=(8, 8, 8, 96))  # one window per axis
        a = swin_block(tokens, cfg.swin, store, "swin.stage1.block0", 3, shifted=False)
        b = swin_block(tokens, cfg.swin, store, "swin.stage1.block0", 3, shifted=True)
        np.testing.assert_array_equal(a, b)

    def test_mask_forbids_cross_region_attention(self, rng):
        """Feed each token its pre-roll region id as the value vector; if any
        post-softmax weight crossed regions the output would mix ids."""
        dims, window, shift = (8, 8, 8), (4, 4, 4), (2, 2, 2)
        c, heads = 4, 2
        ids = np.zeros(dims)
        for z in range(dims[0]):
            for y in range(dims[1]):
                for x in range(dims[2]):
                    ids[z, y, x] = (
                        _preroll_region_id(z, dims[0], window[0], shift[0]) * 9
                        + _preroll_region_id(y, dims[1], window[1], shift[1]) * 3
                        + _preroll_region_id(x, dims[2], window[2], shift[2])
                    )
        tokens = np.repeat(ids[..., None], c, axis=-1)
        rolled = np.roll(tokens, shift=tuple(-s for s in shift), axis=(0, 1, 2))
        windows = window_partition(rolled, window)
        mask = shift_attention_mask(dims, window, shift)
        qkv_w = np.zeros((3 * c, c))
        qkv_w[:c] = rng.normal(size=(c, c))  # queries vary
        qkv_w[c : 2 * c] = rng.normal(size=(c, c))  # keys vary
        qkv_w[2 * c :] = np.eye(c)  # values carry the region id
        rows = 7**3
        out = window_attention(
            windows, heads, qkv_w, np.zeros(3 * c), np.eye(c), np.zeros(c),
            rng.normal(size=(rows, heads)), relative_position_index(window), mask,
        )
        np.testing.assert_allclose(out, windows, atol=1e-12)

    def test_mask_zeroes_probabilities_directly(self):
        dims, window, shift = (8, 8, 8), (4, 4, 4), (2, 2, 2)
        mask = shift_attention_mask(dims, window, shift)
        assert mask.shape == (8, 64, 64)
        blocked = np.isneginf(mask)
        assert blocked.any()
        probs = np.exp(mask) / np.exp(mask).sum(axis=-1, keepdims=True)
        assert np.all(probs[blocked] <= 1e-12)


class TestPatchMerging:
    def test_constant_tokens_stay_constant(self, rng):
        cfg = small_cfg()
        store = random_weights(cfg, (32, 32, 32), seed=4)
        tokens = np.full((8, 8, 8, 96), 0.4)
        out = patch_merging(tokens, store, "swin.stage1.merge")
        np.testing.assert_allclose(out, np.broadcast_to(out[0, 0, 0], out.shape), atol=1e-12)

    def test_shape_law(self, rng):
        cfg = small_cfg()
        store = random_weights(cfg, (32, 32, 32), seed=4)
        out = patch_merging(rng.normal(size=(8, 8, 8, 96)), store, "swin.stage1.merge")
        assert out.shape == (4, 4, 4, 192)

    def test_matches_gather_linear_oracle(self, rng):
        cfg = small_cfg()
        store = random_weights(cfg, (32, 32, 32), seed=4)
        tokens = rng.normal(size=(4, 4, 4, 96))
        got = patch_merging(tokens, store, "swin.stage1.merge")
        gathered = np.concatenate(
            [tokens[dz::2, dy::2, dx::2] for dz in (0, 1) for dy in (0, 1) for dx in (0, 1)], axis=-1
        )
        normed = layernorm(gathered, store.get("swin.stage1.merge.norm.weight"),
                           store.get("swin.stage1.merge.norm.bias"))
        expected = normed @ store.get("swin.stage1.merge.reduction.weight").T
        np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_odd_dims_rejected(self, rng):
        cfg = small_cfg()
        store = random_weights(cfg, (32, 32, 32), seed=4)
        with pytest.raises(ConfigError, match="even"):
            patch_merging(rng.normal(size=(3, 4, 4, 96)), store, "swin.stage1.merge")


class TestSwinEncoder:
    def test_stage_shape_law_32(self, rng):
        cfg = small_cfg()
        store = random_weights(cfg, (32, 32, 32), seed=5)
        feats = swin_encoder_forward(rng.normal(size=(2, 32, 32, 32)), cfg.swin, store)
        assert [f.shape for f in feats] == [
            (96, 16, 16, 16), (192, 8, 8, 8), (384, 4, 4, 4), (768, 2, 2, 2), (1536, 1, 1, 1),
        ]

    def test_degenerate_depths_equal_manual_composition(self, rng):
        cfg = replace(small_cfg(), swin=SwinConfig(in_channels=2, depths=(1, 0, 0, 0),
                                                   num_heads=(3, 6, 12, 24)))
        store = random_weights(cfg, (32, 32, 32), seed=6)
        x = rng.normal(size=(2, 32, 32, 32))
        feats = swin_encoder_forward(x, cfg.swin, store)
        tokens = patch_embed(x, cfg.swin, store)
        np.testing.assert_array_equal(feats[0], tokens.transpose(3, 0, 1, 2))
        blocked = swin_block(tokens, cfg.swin, store, "swin.stage1.block0", 3, shifted=False)
        merged = patch_merging(blocked, store, "swin.stage1.merge")
        np.testing.assert_array_equal(feats[1], merged.transpose(3, 0, 1, 2))

    def test_wrong_channel_count_rejected(self, rng):
        cfg = small_cfg()
        store = random_weights(cfg, (32, 32, 32), seed=5)
        with pytest.raises(ConfigError, match="expected"):
            swin_encoder_forward(rng.normal(size=(3, 32, 32, 32)), cfg.swin, store)


class TestConvEncoder:
    def test_stage_shapes_and_strides(self, rng):
        cfg = small_cfg()
        store = random_weights(cfg_conv := replace(cfg, encoder="conv"), (32, 32, 32), seed=7)
        feats = conv_encoder_forward(rng.normal(size=(2, 32, 32, 32)), cfg_conv.conv, store)
        assert [f.shape for f in feats] == [
            (32, 16, 16, 16), (64, 8, 8, 8), (128, 4, 4, 4), (256, 2, 2, 2), (512, 1, 1, 1),
        ]


class TestFpn:
    def test_single_level_degenerate(self, rng):
        fpn = FpnConfig(channels=8)
        feat = rng.normal(size=(5, 4, 4, 4))
        store = WeightStore(
            [("fpn.lateral0.weight", rng.normal(size=(8, 5, 1, 1, 1))), ("fpn.lateral0.bias", rng.normal(size=8)),
             ("fpn.output0.weight", rng.normal(size=(8, 8, 3, 3, 3))), ("fpn.output0.bias", rng.normal(size=8))]
        )
        got = fpn_forward([feat], fpn, store)
        lateral = conv3d(feat, store.get("fpn.lateral0.weight"), store.get("fpn.lateral0.bias"))
        expected = conv3d(lateral, store.get("fpn.output0.weight"), store.get("fpn.output0.bias"), pad=1)
        assert len(got) == 1
        np.testing.assert_allclose(got[0], expected, atol=1e-12)

    def test_zero_features_zero_biases_give_zero_pyramid(self, rng):
        cfg = small_cfg()
        store = random_weights(cfg, (32, 32, 32), seed=8)
        feats = [np.zeros((96, 8, 8, 8)), np.zeros((192, 4, 4, 4)), np.zeros((384, 2, 2, 2)),
                 np.zeros((768, 1, 1, 1)), np.zeros((1536, 1, 1, 1))]
        # Biases in random_weights are zero, so a zero input stays zero
        # until the upsample/add plumbing breaks it.
        pyramid = fpn_forward(feats[:4], cfg.fpn, store)
        for level in pyramid:
            np.testing.assert_allclose(level, 0.0, atol=0.0)

    def test_two_level_matches_hand_composition(self, rng):
        fpn = FpnConfig(channels=8)
        f0 = rng.normal(size=(6, 8, 8, 8))
        f1 = rng.normal(size=(12, 4, 4, 4))
        names = {
            "fpn.lateral0.weight": (8, 6, 1, 1, 1), "fpn.lateral0.bias": (8,),
            "fpn.lateral1.weight": (8, 12, 1, 1, 1), "fpn.lateral1.bias": (8,),
            "fpn.output0.weight": (8, 8, 3, 3, 3), "fpn.output0.bias": (8,),
            "fpn.output1.weight": (8, 8, 3, 3, 3), "fpn.output1.bias": (8,),
        }
        store = WeightStore([(k, rng.normal(size=s)) for k, s in names.items()])
        got = fpn_forward([f0, f1], fpn, store)
        lat0 = conv3d(f0, store.get("fpn.lateral0.weight"), store.get("fpn.lateral0.bias"))
        lat1 = conv3d(f1, store.get("fpn.lateral1.weight"), store.get("fpn.lateral1.bias"))
        top = conv3d(lat1, store.get("fpn.output1.weight"), store.get("fpn.output1.bias"), pad=1)
        bottom = conv3d(lat0 + trilinear_upsample(lat1), store.get("fpn.output0.weight"),
                        store.get("fpn.output0.bias"), pad=1)
        np.testing.assert_allclose(got[1], top, atol=1e-12)
        np.testing.assert_allclose(got[0], bottom, atol=1e-12)


class TestHeads:
    def test_zero_weights_give_even_scores(self):
        cfg = small_cfg()
        store = zero_weights(cfg, (32, 32, 32))
        out = forward(np.zeros((2, 32, 32, 32)), cfg, store)
        for logits in out.class_logits:
            np.testing.assert_array_equal(logits, 0.0)
            np.testing.assert_array_equal(expit(logits), 0.5)

    def test_anchor_count_consistency(self, rng):
        cfg = small_cfg()
        store = random_weights(cfg, (32, 32, 32), seed=9)
        out = forward(rng.normal(size=(2, 32, 32, 32)), cfg, store)
        grid = build_anchors((32, 32, 32), cfg)
        assert out.strides == tuple(level.stride for level in grid.levels)
        for level, logits, deltas in zip(grid.levels, out.class_logits, out.box_deltas):
            assert logits.shape == (len(level.boxes), cfg.num_classes)
            assert deltas.shape == (len(level.boxes), 6)

    def test_seg_logits_at_highest_resolution(self, rng):
        cfg = small_cfg()
        store = random_weights(cfg, (32, 32, 32), seed=9)
        out = forward(rng.normal(size=(2, 32, 32, 32)), cfg, store)
        assert out.seg_logits.shape == (1, 16, 16, 16)


class TestInfer:
    def _volume(self, rng, channels=2, side=32):
        return Volume(
            data=rng.normal(size=(channels, side, side, side)),
            channel_names=tuple(f"c{i}" for i in range(channels)),
        )

    def test_zero_weights_high_threshold_empty(self, rng):
        cfg = small_cfg()
        store = zero_weights(cfg, (32, 32, 32))
        dets = infer(self._volume(rng), cfg, store, PostprocConfig(min_score=0.6))
        assert dets == []

    def test_constructed_regression_bias_matches_decode(self, rng):
        """Score bias selects template 0 only; its constant delta bias must
        reproduce decode(anchor, delta) after the same clip/filter/NMS."""
        cfg = small_cfg()
        shape = (32, 32, 32)
        tensors = dict(zero_weights(cfg, shape)._tensors)
        a = len(cfg.anchors.aspect_ratios)
        cls_bias = np.full(a, -3.0)
        cls_bias[0] = 3.0
        tensors["head.cls.logits.bias"] = cls_bias
        delta = np.array([0.1, -0.05, 0.2, np.log(1.2), np.log(0.8), 0.0])
        reg_bias = np.zeros((a, 6))
        reg_bias[0] = delta
        tensors["head.reg.deltas.bias"] = reg_bias.ravel()
        store = WeightStore(tensors.items())
        post = PostprocConfig(min_score=0.5, nms_iou=0.5)
        vol = self._volume(rng)
        got = infer(vol, cfg, store, post, case_id="c")

        grid = build_anchors(shape, cfg)
        anchors = grid.all_boxes
        template0 = np.arange(len(anchors)) % a == 0
        decoded = decode_batch(anchors[template0], np.tile(delta, (int(template0.sum()), 1)))
        lo = np.clip(decoded[:, :3], 0, 32)
        hi = np.clip(decoded[:, 3:], 0, 32)
        from lesionkit.geometry import Detection

        score = float(expit(3.0))
        expected = [
            Detection(case_id="c", box=Box3(min=tuple(l), max=tuple(h)), score=score, label=1)
            for l, h in zip(lo, hi)
            if np.all(h > l)
        ]
        expected = nms(filter_detections(expected, 0.5, 0.0), 0.5)
        assert got == expected

    def test_inference_is_deterministic(self, rng):
        cfg = small_cfg()
        store = random_weights(cfg, (32, 32, 32), seed=11)
        vol = self._volume(rng)
        first = infer(vol, cfg, store, PostprocConfig(min_score=0.4))
        second = infer(vol, cfg, store, PostprocConfig(min_score=0.4))
        assert first == second

    def test_zeroed_anatomy_weights_match_two_channel_model(self, rng):
        """With the third input column of the patch embedding zeroed, a
        3-channel model ignores the anatomy channel bitwise."""
        cfg3 = small_cfg(in_channels=3)
        tensors = dict(random_weights(cfg3, (32, 32, 32), seed=12)._tensors)
        w3 = tensors["patch_embed.proj.weight"].copy()
        w3[:, 2] = 0.0
        tensors["patch_embed.proj.weight"] = w3
        store3 = WeightStore(tensors.items())
        tensors2 = dict(tensors)
        tensors2["patch_embed.proj.weight"] = w3[:, :2]
        store2 = WeightStore(tensors2.items())

        base = rng.normal(size=(3, 32, 32, 32))
        vol3 = Volume(data=base, channel_names=("pet", "ct", "anatomy"))
        vol2 = Volume(data=base[:2], channel_names=("pet", "ct"))
        cfg2 = small_cfg(in_channels=2)
        out3 = infer(vol3, cfg3, store3, PostprocConfig(min_score=0.4), case_id="c")
        out2 = infer(vol2, cfg2, store2, PostprocConfig(min_score=0.4), case_id="c")
        assert out3 == out2

    def test_channel_mismatch_rejected(self, rng):
        cfg = small_cfg()
        store = zero_weights(cfg, (32, 32, 32))
        with pytest.raises(ConfigError, match="channels"):
            infer(self._volume(rng, channels=3), cfg, store)

    def test_missing_weight_name_rejected(self, rng):
        cfg = small_cfg()
        tensors = dict(zero_weights(cfg, (32, 32, 32))._tensors)
        tensors.pop("head.cls.logits.bias")
        with pytest.raises(ConfigError, match="no tensor"):
            infer(self._volume(rng), cfg, WeightStore(tensors.items()), PostprocConfig())


class TestSslForward:
    def test_output_matches_input_shape(self, rng):
        cfg = small_cfg()
        store = random_weights(cfg, (32, 32, 32), seed=13, include_ssl_head=True)
        patch = rng.normal(size=(2, 32, 32, 32))
        rec = ssl_forward(patch, cfg.swin, store)
        assert rec.shape == patch.shape

    def test_zero_weights_give_zero_reconstruction(self):
        cfg = small_cfg()
        store = zero_weights(cfg, (32, 32, 32), include_ssl_head=True)
        rec = ssl_forward(np.ones((2, 32, 32, 32)), cfg.swin, store)
        np.testing.assert_array_equal(rec, 0.0)


class TestWeightSpec:
    def test_spec_names_are_exactly_what_forward_reads(self, rng):
        cfg = small_cfg()
        spec = weight_spec(cfg, (32, 32, 32), include_ssl_head=True)
        names = [n for n, _ in spec]
        assert len(names) == len(set(names))
        store = random_weights(cfg, (32, 32, 32), seed=14, include_ssl_head=True)
        assert store.names() == tuple(names)

    def test_ssl_head_requires_swin(self):
        with pytest.raises(ConfigError, match="swin"):
            weight_spec(replace(small_cfg(), encoder="conv"), (32, 32, 32), include_ssl_head=True)


class TestGoldenForward:
    def test_frozen_digests(self, rng):
        """Fixed weights and input reproduce frozen output digests run over
        run on one build."""
        golden = json.loads(GOLDEN.read_text())
        cfg = small_cfg()
        store = random_weights(cfg, (32, 32, 32), seed=2024, include_ssl_head=True)
        x = np.asarray(np.random.default_rng(99).normal(size=(2, 32, 32, 32)))
        feats = swin_encoder_forward(x, cfg.swin, store)
        assert [digest(f) for f in feats] == golden["swin_features"]
        out = forward(x, cfg, store)
        assert [digest(l) for l in out.class_logits] == golden["class_logits"]
        assert digest(out.seg_logits) == golden["seg_logits"]
        assert digest(ssl_forward(x, cfg.swin, store)) == golden["reconstruction"]
