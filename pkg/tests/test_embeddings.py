"""Position codes, tubelet embedding, feature tokenizer."""

import numpy as np
import pytest

from pedintent.errors import ConfigError, DimensionError
from pedintent.model import TubeletConfig, feature_tokenize, positional_encoding, tubelet_embed
from pedintent.tensor import Tensor


class TestPositionalEncoding:
    def test_position_zero(self):
        pe = positional_encoding(4, 8)
        assert np.array_equal(pe[0, 0::2], np.zeros(4, np.float32))
        assert np.array_equal(pe[0, 1::2], np.ones(4, np.float32))

    def test_position_one_d4(self):
        pe = positional_encoding(2, 4, dtype=np.float64)
        expected = [np.sin(1.0), np.cos(1.0), np.sin(0.01), np.cos(0.01)]
        assert np.allclose(pe[1], expected, atol=1e-5)
        assert np.allclose(pe[1], [0.84147, 0.54030, 0.01000, 0.99995], atol=1e-5)

    def test_range(self):
        pe = positional_encoding(300, 32)
        assert pe.min() >= -1.0 and pe.max() <= 1.0

    def test_rows_pairwise_distinct(self):
        pe = positional_encoding(10000, 16, dtype=np.float64)
        assert len(np.unique(pe, axis=0)) == 10000

    def test_odd_d_model(self):
        with pytest.raises(ConfigError):
            positional_encoding(4, 7)


def _tub_params(cfg, rng):
    w = Tensor(rng.normal(size=(cfg.flat_size, cfg.d_model)).astype(np.float32))
    b = Tensor(np.zeros(cfg.d_model, dtype=np.float32))
    return w, b


class TestTubeletEmbed:
    def test_token_count(self):
        cfg = TubeletConfig(2, 16, 16, 64)
        clip = Tensor(np.zeros((8, 112, 112, 3), np.float32))
        w, b = _tub_params(cfg, np.random.default_rng(0))
        assert tubelet_embed(clip, cfg, w, b).shape == (4 * 7 * 7, 64)

    def test_zero_clip_zero_bias(self):
        cfg = TubeletConfig(2, 4, 4, 8)
        clip = Tensor(np.zeros((4, 8, 8, 3), np.float32))
        w, b = _tub_params(cfg, np.random.default_rng(1))
        assert np.array_equal(tubelet_embed(clip, cfg, w, b).data, np.zeros((8, 8), np.float32))

    def test_identity_projection_single_patch(self):
        cfg = TubeletConfig(2, 2, 2, 24)  # flat size = 2*2*2*3 = 24
        rng = np.random.default_rng(2)
        clip_arr = rng.random((2, 2, 2, 3)).astype(np.float32)
        w = Tensor(np.eye(24, dtype=np.float32))
        b = Tensor(np.zeros(24, np.float32))
        out = tubelet_embed(Tensor(clip_arr), cfg, w, b)
        assert np.array_equal(out.data[0], clip_arr.reshape(-1))

    def test_linearity(self):
        cfg = TubeletConfig(2, 4, 4, 6)
        rng = np.random.default_rng(3)
        w, b = _tub_params(cfg, rng)
        a = rng.random((4, 8, 8, 3)).astype(np.float64)
        c = rng.random((4, 8, 8, 3)).astype(np.float64)
        w64 = Tensor(w.data.astype(np.float64))
        b64 = Tensor(np.zeros(6, np.float64))
        lhs = tubelet_embed(Tensor(2.0 * a + 3.0 * c, dtype=np.float64), cfg, w64, b64).data
        rhs = 2.0 * tubelet_embed(Tensor(a), cfg, w64, b64).data + 3.0 * tubelet_embed(Tensor(c), cfg, w64, b64).data
        assert np.allclose(lhs, rhs, atol=1e-9)

    def test_token_order_time_major(self):
        # mark one tubelet; only the matching token moves when tubelets swap
        cfg = TubeletConfig(1, 2, 2, 12)
        clip = np.zeros((2, 2, 4, 3), np.float32)  # 2 time x 1 row x 2 col tubelets
        clip[1, :, 2:, :] = 1.0  # time slice 1, column block 1 -> token index 3
        w = Tensor(np.eye(12, dtype=np.float32))
        b = Tensor(np.zeros(12, np.float32))
        out = tubelet_embed(Tensor(clip), cfg, w, b).data
        nonzero = np.flatnonzero(out.any(axis=1))
        assert nonzero.tolist() == [3]

    def test_permuting_whole_tubelets_permutes_tokens(self):
        cfg = TubeletConfig(2, 4, 4, 6)
        rng = np.random.default_rng(4)
        w, b = _tub_params(cfg, rng)
        clip = rng.random((4, 4, 8, 3)).astype(np.float32)  # 2 time x 1 row x 2 col
        swapped = clip[[2, 3, 0, 1]]  # swap the two temporal tubelets
        base = tubelet_embed(Tensor(clip), cfg, w, b).data
        perm = tubelet_embed(Tensor(swapped), cfg, w, b).data
        assert np.allclose(perm, base[[2, 3, 0, 1]], atol=1e-6)

    def test_indivisible_dims(self):
        cfg = TubeletConfig(2, 16, 16, 8)
        with pytest.raises(DimensionError):
            tubelet_embed(Tensor(np.zeros((5, 32, 32, 3), np.float32)), cfg, *_tub_params(cfg, np.random.default_rng(0)))

    def test_batched(self):
        cfg = TubeletConfig(2, 4, 4, 6)
        w, b = _tub_params(cfg, np.random.default_rng(5))
        clip = Tensor(np.random.default_rng(6).random((3, 4, 8, 8, 3)).astype(np.float32))
        assert tubelet_embed(clip, cfg, w, b).shape == (3, 2 * 2 * 2, 6)


class TestFeatureTokenize:
    def _params(self, f, d, rng):
        w = Tensor(rng.normal(size=(f, 1, d)).astype(np.float32))
        b = Tensor(rng.normal(size=(f, d)).astype(np.float32))
        cls = Tensor(rng.normal(size=(1, d)).astype(np.float32))
        return w, b, cls

    def test_token_count(self):
        rng = np.random.default_rng(0)
        w, b, cls = self._params(47, 16, rng)
        x = Tensor(rng.normal(size=(15, 47)).astype(np.float32))
        assert feature_tokenize(x, w, b, cls).shape == (15 * 47 + 1, 16)

    def test_zero_feature_yields_bias(self):
        rng = np.random.default_rng(1)
        w, b, cls = self._params(3, 4, rng)
        x = Tensor(np.zeros((2, 3), np.float32))
        out = feature_tokenize(x, w, b, cls).data
        for t in range(2):
            for j in range(3):
                assert np.allclose(out[1 + t * 3 + j], b.data[j], atol=1e-7)

    def test_affine_map_per_column(self):
        rng = np.random.default_rng(2)
        w, b, cls = self._params(2, 4, rng)
        x = np.array([[2.0, -1.0]], dtype=np.float32)
        out = feature_tokenize(Tensor(x), w, b, cls).data
        assert np.allclose(out[1], 2.0 * w.data[0, 0] + b.data[0], atol=1e-6)
        assert np.allclose(out[2], -1.0 * w.data[1, 0] + b.data[1], atol=1e-6)

    def test_cls_constant_across_inputs(self):
        rng = np.random.default_rng(3)
        w, b, cls = self._params(3, 4, rng)
        a = feature_tokenize(Tensor(rng.normal(size=(2, 3)).astype(np.float32)), w, b, cls).data[0]
        c = feature_tokenize(Tensor(rng.normal(size=(2, 3)).astype(np.float32)), w, b, cls).data[0]
        assert np.array_equal(a, c)
        assert np.array_equal(a, cls.data[0])

    def test_width_mismatch(self):
        rng = np.random.default_rng(4)
        w, b, cls = self._params(3, 4, rng)
        with pytest.raises(ConfigError):
            feature_tokenize(Tensor(np.zeros((2, 5), np.float32)), w, b, cls)
