import numpy as np
import pytest

from clearwave.dsp import Spectrogram, StftConfig
from clearwave.net.checkpoint import load_checkpoint, save_checkpoint
from clearwave.net.model import (
    CacheConsumedError,
    EmbeddingConfig,
    NetConfig,
    UNet,
    frequency_positional_embeddings,
    init_params,
    net_input_from_bins,
    pooling_lookahead_frames,
    unet_backward,
    unet_forward,
)

DESK = NetConfig()


class TestEmbeddings:
    def test_closed_form_anchors(self):
        # bandwidth F = freq_bins - 1; check f = 0, F/2, F for k = 4
        emb = frequency_positional_embeddings(3, EmbeddingConfig(k=4, freq_bins=257))
        assert np.allclose(emb[0, 0], [1, 1, 1, 1], atol=1e-12)
        assert np.allclose(emb[0, 128], [np.cos(np.pi / 2), -1, 1, 1], atol=1e-12)
        assert np.allclose(emb[0, 256], [-1, 1, 1, 1], atol=1e-12)

    def test_time_constant_and_bounded(self):
        emb = frequency_positional_embeddings(7, EmbeddingConfig(k=10, freq_bins=129))
        assert np.all(np.abs(emb) <= 1.0)
        for t in range(1, 7):
            assert np.array_equal(emb[t], emb[0])

    def test_shape(self):
        emb = frequency_positional_embeddings(5, EmbeddingConfig(k=3, freq_bins=65))
        assert emb.shape == (5, 65, 3)

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            EmbeddingConfig(k=0)
        with pytest.raises(ValueError):
            frequency_positional_embeddings(0, EmbeddingConfig())


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError):
            NetConfig(levels=3, filters_per_level=(8, 16))
        with pytest.raises(ValueError):
            NetConfig(n_output_masks=4)

    def test_lookahead_arithmetic(self):
        assert pooling_lookahead_frames(NetConfig()) == 3
        assert pooling_lookahead_frames(
            NetConfig(levels=2, filters_per_level=(8, 16), attention_levels={1})
        ) == 1


class TestInit:
    def test_deterministic(self):
        a = init_params(DESK, seed=3)
        b = init_params(DESK, seed=3)
        assert a.keys() == b.keys()
        for k in a:
            assert np.array_equal(a[k], b[k])

    def test_he_variance(self):
        params = init_params(DESK, seed=0, dtype=np.float64)
        checked = 0
        for name, arr in params.items():
            if name.endswith(".w") and arr.ndim == 4 and arr.size >= 1024:
                fan_in = arr.shape[0] * arr.shape[1] * arr.shape[2]
                target = 2.0 / fan_in
                assert abs(arr.var() - target) < 0.2 * target, name
                checked += 1
        assert checked >= 3

    def test_param_count_matches_shape_arithmetic(self):
        # independent enumeration of the architecture's array shapes
        cfg = DESK
        cin = 2 + cfg.embedding_k
        expected = 0

        def conv(kt, kf, ci, co, bias=False):
            return kt * kf * ci * co + (co if bias else 0)

        def bn(c):
            return 2 * c  # gamma and beta are learnable; running stats not

        def dense(ci, co):
            g = co // 4
            total = 0
            c = ci
            for _ in range(cfg.dense_layers_per_block):
                total += conv(3, 3, c, g) + bn(g)
                c += g
            return total + conv(1, 1, c, co) + bn(co)

        filt = cfg.filters_per_level
        expected += dense(cin, filt[0]) + dense(filt[0], filt[1]) + dense(filt[1], filt[2])
        for lvl in (1, 2):  # attention at the two deepest levels
            expected += 3 * filt[lvl] * filt[lvl] + 1
        for lvl in (1, 0):  # decoder
            expected += conv(3, 3, filt[lvl + 1], filt[lvl]) + bn(filt[lvl])
            expected += dense(2 * filt[lvl], filt[lvl])
        expected += conv(1, 1, filt[0], 2 * cfg.n_output_masks, bias=True)
        assert UNet(cfg).n_params() == expected

    def test_head_bias_starts_at_identity_mask(self):
        params = init_params(DESK, seed=1)
        assert params["head.b"][0] == 1.0
        assert np.all(params["head.b"][1:] == 0.0)


class TestForward:
    def test_output_shape_contract(self):
        cfg = StftConfig()
        rng = np.random.default_rng(0)
        bins = rng.normal(size=(64, 257)) + 1j * rng.normal(size=(64, 257))
        params = init_params(DESK, seed=0)
        masks, cache = unet_forward(Spectrogram(bins, cfg), params, DESK, mode="eval")
        assert len(masks) == 2
        for m in masks:
            assert m.values.shape == (64, 257)
            assert np.iscomplexobj(m.values)

    def test_zero_input_finite(self):
        params = init_params(DESK, seed=2)
        bins = np.zeros((16, 65), dtype=complex)
        masks, _ = unet_forward(Spectrogram(bins, StftConfig(fft_size=128, hop_size=64)),
                                params, DESK, mode="eval")
        for m in masks:
            assert np.all(np.isfinite(m.values))

    def test_eval_mode_bitwise_deterministic(self):
        rng = np.random.default_rng(1)
        net = UNet(DESK)
        params = net.init_params(4)
        x = rng.normal(size=(1, 16, 33, 12)).astype(np.float32)
        out1, c1 = net.forward(x, params, train=False)
        out2, c2 = net.forward(x, params, train=False)
        assert np.array_equal(out1, out2)

    def test_too_short_clip_rejected(self):
        net = UNet(DESK)
        params = net.init_params(0)
        with pytest.raises(ValueError, match="clip too short"):
            net.forward(np.zeros((1, 2, 20, 12), dtype=np.float32), params, train=False)

    def test_causality_with_lookahead(self):
        # perturbing frames beyond t never changes outputs before t - L
        cfg = NetConfig(attention_levels=frozenset())
        net = UNet(cfg)
        params = net.init_params(5)
        rng = np.random.default_rng(6)
        t_frames = 32
        x = rng.normal(size=(1, t_frames, 21, 12)).astype(np.float32)
        x2 = x.copy()
        x2[:, -8:] += rng.normal(size=(1, 8, 21, 12)).astype(np.float32)
        out1, _ = net.forward(x, params, train=False)
        out2, _ = net.forward(x2, params, train=False)
        lookahead = pooling_lookahead_frames(cfg)
        safe = t_frames - 8 - lookahead
        assert np.array_equal(out1[:, :safe], out2[:, :safe])
        assert not np.array_equal(out1[:, safe:], out2[:, safe:])

    def test_lookahead_bound_is_tight(self):
        # a single perturbed frame changes some output exactly L frames earlier
        cfg = NetConfig(attention_levels=frozenset())
        net = UNet(cfg)
        params = net.init_params(9)
        rng = np.random.default_rng(10)
        t_frames = 32
        x = rng.normal(size=(1, t_frames, 21, 12)).astype(np.float64)
        lookahead = pooling_lookahead_frames(cfg)
        perturb_at = 23  # aligned so the pooling window straddles earlier frames
        x2 = x.copy()
        x2[:, perturb_at] += 1.0
        out1, _ = net.forward(x, params, train=False)
        out2, _ = net.forward(x2, params, train=False)
        changed = np.nonzero(np.any(out1 != out2, axis=(0, 2, 3)))[0]
        assert changed.min() >= perturb_at - lookahead


class TestBackwardContracts:
    def test_zero_cotangent_zero_grads(self):
        net = UNet(DESK)
        params = net.init_params(1, dtype=np.float64)
        rng = np.random.default_rng(2)
        x = rng.normal(size=(1, 8, 20, 12))
        out, cache = net.forward(x, params, train=True)
        grads, dx = net.backward(np.zeros_like(out), params, cache)
        assert all(np.all(g == 0) for g in grads.values())
        assert np.all(dx == 0)

    def test_cache_reuse_raises(self):
        net = UNet(DESK)
        params = net.init_params(1)
        x = np.random.default_rng(3).normal(size=(1, 8, 20, 12)).astype(np.float32)
        out, cache = net.forward(x, params, train=True)
        net.backward(out.copy(), params, cache)
        with pytest.raises(CacheConsumedError):
            net.backward(out.copy(), params, cache)

    def test_spectrogram_level_wrappers(self):
        rng = np.random.default_rng(4)
        cfg = StftConfig(fft_size=128, hop_size=64)
        bins = rng.normal(size=(16, 65)) + 1j * rng.normal(size=(16, 65))
        params = init_params(DESK, seed=0, dtype=np.float64)
        masks, cache = unet_forward(Spectrogram(bins, cfg), params, DESK, mode="train")
        cots = [rng.normal(size=(16, 65)) + 1j * rng.normal(size=(16, 65))
                for _ in range(2)]
        grads, d_bins = unet_backward(cache, cots, params)
        assert d_bins.shape == (16, 65)
        assert set(grads) == {k for k in params if not k.endswith(("running_mean",
                                                                   "running_var"))}

    def test_dense_concat_backward_routes_slices(self):
        # finite differences through a whole dense block, catching slice
        # routing mistakes in the concatenation backward
        cfg = NetConfig(levels=2, filters_per_level=(8, 8), dense_layers_per_block=2,
                        attention_levels=frozenset())
        net = UNet(cfg)
        params = net.init_params(0, dtype=np.float64)
        rng = np.random.default_rng(5)
        x = rng.normal(size=(1, 4, 8, 12))
        direction = rng.normal(size=(1, 4, 8, 4))
        out, cache = net.forward(x, params, train=True)
        grads, dx = net.backward(direction, params, cache)
        h = 1e-6
        for fi in rng.integers(0, x.size, size=6):
            idx = np.unravel_index(fi, x.shape)
            x[idx] += h
            lp = float(np.sum(net.forward(x, params, train=True)[0] * direction))
            x[idx] -= 2 * h
            lm = float(np.sum(net.forward(x, params, train=True)[0] * direction))
            x[idx] += h
            fd = (lp - lm) / (2 * h)
            assert abs(fd - dx[idx]) <= 1e-5 * max(abs(fd), abs(dx[idx]), 1.0)


class TestCheckpoint:
    def test_round_trip_bitwise(self, tmp_path):
        params = init_params(DESK, seed=7)
        opt = {"m.head.w": np.ones((1, 1, 8, 4), dtype=np.float32),
               "step": np.array([42.0], dtype=np.float32)}
        path = tmp_path / "ck.bin"
        save_checkpoint(path, DESK, params, step=42, opt_arrays=opt)
        cfg2, params2, step2, opt2 = load_checkpoint(path)
        assert cfg2 == DESK
        assert step2 == 42
        assert params.keys() == params2.keys()
        for k in params:
            assert np.array_equal(params[k], params2[k]), k
        assert np.array_equal(opt2["m.head.w"], opt["m.head.w"])

    def test_write_then_read_stable_bytes(self, tmp_path):
        params = init_params(DESK, seed=8)
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        save_checkpoint(p1, DESK, params, step=1)
        save_checkpoint(p2, DESK, params, step=1)
        assert p1.read_bytes() == p2.read_bytes()

    def test_rejects_garbage(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"not a checkpoint at all")
        with pytest.raises(ValueError):
            load_checkpoint(path)
