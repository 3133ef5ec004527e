"""Causal 2D U-Net with DenseNet blocks, time-axis attention, and
frequency-positional embeddings, plus exact reverse-mode gradients.

The network maps a complex spectrogram (as real/imag channels plus k
embedding channels) to 2*n_output_masks real channels interpreted as the
real/imag parts of each complex ratio mask. Convolutions are causal in
time; the only look-ahead comes from the 2x2 average poolings, which is
why pooling_lookahead_frames() is pure arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from clearwave.dsp import Spectrogram, ComplexMask
from clearwave.net import layers as L


@dataclass(frozen=True)
class EmbeddingConfig:
    """Cosine frequency-positional embeddings: component i at bin f is
    cos(2^i * pi * f / (freq_bins - 1))."""

    k: int = 10
    freq_bins: int = 257

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.freq_bins < 2:
            raise ValueError("freq_bins must be >= 2")


def frequency_positional_embeddings(n_frames: int, cfg: EmbeddingConfig) -> np.ndarray:
    """[T, freq_bins, k] embedding array, identical across time frames."""
    if n_frames < 1:
        raise ValueError("need at least one frame")
    f_over_band = np.arange(cfg.freq_bins) / (cfg.freq_bins - 1)
    scales = 2.0 ** np.arange(cfg.k)
    plane = np.cos(np.pi * scales[None, :] * f_over_band[:, None])  # [F, k]
    return np.broadcast_to(plane, (n_frames, cfg.freq_bins, cfg.k)).copy()


@dataclass(frozen=True)
class NetConfig:
    levels: int = 3
    filters_per_level: tuple = (8, 16, 32)
    dense_layers_per_block: int = 4
    n_output_masks: int = 2
    attention_levels: frozenset = field(default_factory=lambda: frozenset({1, 2}))
    embedding_k: int = 10

    def __post_init__(self):
        object.__setattr__(self, "filters_per_level", tuple(self.filters_per_level))
        object.__setattr__(self, "attention_levels", frozenset(self.attention_levels))
        if len(self.filters_per_level) != self.levels:
            raise ValueError("filters_per_level length must equal levels")
        if any(f <= 0 for f in self.filters_per_level):
            raise ValueError("filter counts must be positive")
        if self.n_output_masks not in (1, 2, 3):
            raise ValueError("n_output_masks must be 1, 2, or 3")

    @property
    def pool_factor(self) -> int:
        return 2 ** (self.levels - 1)


def paper_scale_config(n_output_masks: int = 2) -> NetConfig:
    """The full-scale variant: 6 levels, 32..256 filters."""
    return NetConfig(
        levels=6,
        filters_per_level=(32, 64, 128, 256, 256, 256),
        attention_levels=frozenset({4, 5}),
        n_output_masks=n_output_masks,
    )


def pooling_lookahead_frames(cfg: NetConfig) -> int:
    """Frames of future context consumed by the pooling/upsampling path.

    Each of the levels-1 nested 2x2 average pools lets a coarse step see one
    extra fine step, compounding to 2^(levels-1) - 1 input frames.
    """
    return cfg.pool_factor - 1


class CacheConsumedError(RuntimeError):
    pass


def _growth(filters: int) -> int:
    return max(1, filters // 4)


class UNet:
    """Builds the layer graph for a NetConfig and runs forward/backward.

    Parameters live in a flat name->array dict so they can be checkpointed,
    updated, and gradient-checked uniformly. Names ending in .running_mean /
    .running_var are batch-norm statistics, not learnable weights.
    """

    def __init__(self, cfg: NetConfig):
        self.cfg = cfg
        self.in_channels = 2 + cfg.embedding_k
        self.shapes = {}
        self._build_shapes()

    # -- shape bookkeeping ---------------------------------------------------

    def _add_conv(self, name, kt, kf, cin, cout, bias=False):
        # convs feeding batch norm carry no bias; BN's shift absorbs it
        self.shapes[f"{name}.w"] = (kt, kf, cin, cout)
        if bias:
            self.shapes[f"{name}.b"] = (cout,)

    def _add_bn(self, name, c):
        self.shapes[f"{name}.gamma"] = (c,)
        self.shapes[f"{name}.beta"] = (c,)
        self.shapes[f"{name}.running_mean"] = (c,)
        self.shapes[f"{name}.running_var"] = (c,)

    def _add_dense_block(self, name, cin, cout):
        g = _growth(cout)
        c = cin
        for i in range(1, self.cfg.dense_layers_per_block + 1):
            self._add_conv(f"{name}.l{i}.conv", 3, 3, c, g)
            self._add_bn(f"{name}.l{i}.bn", g)
            c += g
        self._add_conv(f"{name}.trans.conv", 1, 1, c, cout)
        self._add_bn(f"{name}.trans.bn", cout)

    def _add_attention(self, name, c):
        for p in ("wq", "wk", "wv"):
            self.shapes[f"{name}.{p}"] = (c, c)
        self.shapes[f"{name}.gain"] = (1,)

    def _build_shapes(self):
        cfg = self.cfg
        filt = cfg.filters_per_level
        cin = self.in_channels
        for lvl in range(cfg.levels):
            self._add_dense_block(f"enc{lvl}.dense", cin, filt[lvl])
            if lvl in cfg.attention_levels:
                self._add_attention(f"enc{lvl}.att", filt[lvl])
            cin = filt[lvl]
        for lvl in range(cfg.levels - 2, -1, -1):
            self._add_conv(f"dec{lvl}.up.conv", 3, 3, filt[lvl + 1], filt[lvl])
            self._add_bn(f"dec{lvl}.up.bn", filt[lvl])
            self._add_dense_block(f"dec{lvl}.dense", 2 * filt[lvl], filt[lvl])
        self._add_conv("head", 1, 1, filt[0], 2 * cfg.n_output_masks, bias=True)

    def param_names(self):
        return list(self.shapes)

    def n_params(self, learnable_only: bool = True) -> int:
        total = 0
        for name, shape in self.shapes.items():
            if learnable_only and not is_learnable(name):
                continue
            total += int(np.prod(shape))
        return total

    # -- initialization ------------------------------------------------------

    def init_params(self, seed: int, dtype=np.float32) -> dict:
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in self.shapes.items():
            if name.endswith(".w") and len(shape) == 4:
                fan_in = shape[0] * shape[1] * shape[2]
                arr = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
            elif name.endswith((".wq", ".wk", ".wv")):
                arr = rng.normal(0.0, np.sqrt(2.0 / shape[0]), size=shape)
            elif name.endswith((".gamma", ".running_var")):
                arr = np.ones(shape)
            else:  # biases, betas, running means, attention gains
                arr = np.zeros(shape)
            params[name] = arr.astype(dtype)
        # bias the first mask toward identity (1 + 0j): the net starts by
        # passing audio through and learns to subtract noise, which keeps the
        # phase anchored instead of reconstructing it from scratch
        params["head.b"][0] = 1.0
        return params

    # -- forward / backward ----------------------------------------------------

    def forward(self, x, params, train: bool):
        """x: [B, T, F, 2 + k] with embeddings already concatenated.

        Returns (out [B, T, F, 2*n_masks], cache). T and F are padded
        internally to multiples of 2^(levels-1): frequency at the high edge,
        time at the early edge (so causal alignment is preserved).
        """
        cfg = self.cfg
        bsz, t, f, c = x.shape
        if c != self.in_channels:
            raise ValueError(f"expected {self.in_channels} input channels, got {c}")
        pf = cfg.pool_factor
        if t < pf:
            raise ValueError("clip too short")
        pad_t = (-t) % pf
        pad_f = (-f) % pf
        xp = np.pad(x, ((0, 0), (pad_t, 0), (0, pad_f), (0, 0))) if pad_t or pad_f else x

        cache = {"pad": (pad_t, pad_f, (bsz, t, f)), "tape": [], "running": {}, "consumed": False}
        tape = cache["tape"]
        running = cache["running"]

        def dense(name, h):
            return self._dense_forward(name, h, params, train, tape, running)

        h = xp
        skips = []
        for lvl in range(cfg.levels):
            h = dense(f"enc{lvl}.dense", h)
            if lvl in cfg.attention_levels:
                h = self._attention_forward(f"enc{lvl}.att", h, params, tape)
            if lvl < cfg.levels - 1:
                skips.append(h)
                h, shape = L.avgpool2_forward(h)
                tape.append(("pool", shape))
        for lvl in range(cfg.levels - 2, -1, -1):
            h, shape = L.upsample2_forward(h)
            tape.append(("unpool", shape))
            h = self._cbr_forward(f"dec{lvl}.up", h, params, train, tape, running)
            skip = skips.pop()
            h = np.concatenate([skip, h], axis=-1)
            tape.append(("concat", skip.shape[-1]))
            h = dense(f"dec{lvl}.dense", h)
        out, cv = L.conv2d_forward(h, params["head.w"], params["head.b"])
        tape.append(("conv", "head", cv))

        if pad_t or pad_f:
            out = out[:, pad_t:, :f, :]
        return out, cache

    def backward(self, dout, params, cache):
        """Exact reverse-mode pass. Returns (grads dict, d(input) [B,T,F,2+k])."""
        if cache["consumed"]:
            raise CacheConsumedError("backward cache already consumed")
        cache["consumed"] = True
        pad_t, pad_f, (bsz, t, f) = cache["pad"]
        cfg = self.cfg
        if pad_t or pad_f:
            full = np.zeros(
                (bsz, t + pad_t, f + pad_f, dout.shape[-1]), dtype=dout.dtype
            )
            full[:, pad_t:, :f, :] = dout
            dout = full

        grads = {}
        tape = cache["tape"]
        pos = len(tape) - 1
        d = dout

        def take(kind):
            nonlocal pos
            entry = tape[pos]
            pos -= 1
            assert entry[0] == kind, f"tape mismatch: wanted {kind}, got {entry[0]}"
            return entry

        _, name, cv = take("conv")
        d, dw, db = L.conv2d_backward(d, params["head.w"], cv)
        grads["head.w"], grads["head.b"] = dw, db

        # decoder backward runs levels 0..levels-2; each level's skip
        # cotangent crosses over to the encoder backward via this stack
        skip_grads = []
        for lvl in range(cfg.levels - 1):
            d = self._dense_backward(f"dec{lvl}.dense", d, params, grads, take)
            _, skip_c = take("concat")
            d_skip, d = d[..., :skip_c], d[..., skip_c:]
            skip_grads.append(d_skip)
            d = self._cbr_backward(f"dec{lvl}.up", d, params, grads, take)
            _, shape = take("unpool")
            d = L.upsample2_backward(d, shape)

        for lvl in range(cfg.levels - 1, -1, -1):
            if lvl < cfg.levels - 1:
                _, shape = take("pool")
                d = L.avgpool2_backward(d, shape)
                d = d + skip_grads.pop()
            if lvl in cfg.attention_levels:
                d = self._attention_backward(f"enc{lvl}.att", d, params, grads, take)
            d = self._dense_backward(f"enc{lvl}.dense", d, params, grads, take)

        assert pos == -1, "tape not fully consumed"
        if pad_t or pad_f:
            d = d[:, pad_t:, :f, :]
        return grads, d

    # -- blocks ----------------------------------------------------------------

    def _cbr_forward(self, name, x, params, train, tape, running):
        h, cv = L.conv2d_forward(x, params[f"{name}.conv.w"])
        h, cb, new_run = L.batchnorm_forward(
            h,
            params[f"{name}.bn.gamma"],
            params[f"{name}.bn.beta"],
            params[f"{name}.bn.running_mean"],
            params[f"{name}.bn.running_var"],
            train,
        )
        if new_run is not None:
            running[f"{name}.bn.running_mean"], running[f"{name}.bn.running_var"] = new_run
        h, cm = L.relu_forward(h)
        tape.append(("cbr", name, cv, cb, cm))
        return h

    def _cbr_backward(self, name, d, params, grads, take):
        _, nm, cv, cb, cm = take("cbr")
        assert nm == name
        d = L.relu_backward(d, cm)
        d, dgamma, dbeta = L.batchnorm_backward(d, cb)
        grads[f"{name}.bn.gamma"], grads[f"{name}.bn.beta"] = dgamma, dbeta
        d, dw, _ = L.conv2d_backward(d, params[f"{name}.conv.w"], cv, with_bias=False)
        grads[f"{name}.conv.w"] = dw
        return d

    def _dense_forward(self, name, x, params, train, tape, running):
        n = self.cfg.dense_layers_per_block
        cin = x.shape[-1]
        g = _growth(_trans_out_channels(self.shapes, name))
        # one concat buffer for the whole block: layer i reads the channel
        # prefix and writes its growth slice
        feats = np.empty(x.shape[:-1] + (cin + n * g,), dtype=x.dtype)
        feats[..., :cin] = x
        for i in range(1, n + 1):
            lo = cin + (i - 1) * g
            h = self._cbr_forward(f"{name}.l{i}", feats[..., :lo], params, train, tape, running)
            feats[..., lo : lo + g] = h
        out = self._cbr_forward(f"{name}.trans", feats, params, train, tape, running)
        tape.append(("dense_meta", name, cin))
        return out

    def _dense_backward(self, name, d, params, grads, take):
        _, nm, cin = take("dense_meta")
        assert nm == name
        n = self.cfg.dense_layers_per_block
        g = _growth(_trans_out_channels(self.shapes, name))
        d_feats = self._cbr_backward(f"{name}.trans", d, params, grads, take)
        for i in range(n, 0, -1):
            lo = cin + (i - 1) * g
            d_in = self._cbr_backward(f"{name}.l{i}", d_feats[..., lo : lo + g], params,
                                      grads, take)
            d_feats[..., :lo] += d_in
        return d_feats[..., :cin]

    def _attention_forward(self, name, x, params, tape):
        out, cache = L.attention_forward(
            x, params[f"{name}.wq"], params[f"{name}.wk"], params[f"{name}.wv"],
            params[f"{name}.gain"],
        )
        tape.append(("att", name, cache))
        return out

    def _attention_backward(self, name, d, params, grads, take):
        _, nm, cache = take("att")
        assert nm == name
        d, dwq, dwk, dwv, dgain = L.attention_backward(d, cache)
        grads[f"{name}.wq"], grads[f"{name}.wk"] = dwq, dwk
        grads[f"{name}.wv"], grads[f"{name}.gain"] = dwv, dgain
        return d


def _trans_out_channels(shapes, name):
    return shapes[f"{name}.trans.conv.w"][3]


def is_learnable(name: str) -> bool:
    return not name.endswith((".running_mean", ".running_var"))


# ---------------------------------------------------------------------------
# Spectrogram-level wrappers
# ---------------------------------------------------------------------------


def init_params(cfg: NetConfig, seed: int, dtype=np.float32) -> dict:
    return UNet(cfg).init_params(seed, dtype)


def net_input_from_bins(bins: np.ndarray, k: int) -> np.ndarray:
    """[T, F] complex bins -> [T, F, 2 + k] real input planes."""
    t, f = bins.shape
    emb = frequency_positional_embeddings(t, EmbeddingConfig(k=k, freq_bins=f))
    dtype = np.float32 if bins.dtype == np.complex64 else np.float64
    return np.concatenate(
        [bins.real[..., None], bins.imag[..., None], emb.astype(dtype)], axis=-1
    )


def masks_from_net_output(out: np.ndarray, n_masks: int) -> list:
    """[T, F, 2*n_masks] real channels -> list of [T, F] complex masks."""
    return [out[..., 2 * m] + 1j * out[..., 2 * m + 1] for m in range(n_masks)]


def unet_forward(S: Spectrogram, params: dict, cfg: NetConfig, mode: str = "eval"):
    """Evaluate the network on one spectrogram.

    Returns (list of ComplexMask, cache). mode is 'train' or 'eval'; only a
    train-mode cache can feed unet_backward.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    net = UNet(cfg)
    x = net_input_from_bins(S.bins, cfg.embedding_k)[None]
    out, cache = net.forward(x, params, train=(mode == "train"))
    cache["net"] = net
    masks = [ComplexMask(m) for m in masks_from_net_output(out[0], cfg.n_output_masks)]
    return masks, cache


def unet_backward(cache: dict, mask_cotangents, params: dict):
    """Reverse-mode pass from complex mask cotangents (dL/dRe + 1j*dL/dIm).

    Returns (grads dict, input cotangent as a [T, F] complex array over the
    spectrogram's real/imag channels).
    """
    net: UNet = cache["net"]
    n_masks = net.cfg.n_output_masks
    if len(mask_cotangents) != n_masks:
        raise ValueError(f"expected {n_masks} cotangents, got {len(mask_cotangents)}")
    first = np.asarray(mask_cotangents[0])
    t, f = first.shape
    dtype = np.float32 if first.dtype == np.complex64 else np.float64
    dout = np.zeros((1, t, f, 2 * n_masks), dtype=dtype)
    for m, g in enumerate(mask_cotangents):
        g = np.asarray(g)
        dout[0, ..., 2 * m] = g.real
        dout[0, ..., 2 * m + 1] = g.imag
    grads, dx = net.backward(dout, params, cache)
    d_bins = dx[0, ..., 0] + 1j * dx[0, ..., 1]
    return grads, d_bins
