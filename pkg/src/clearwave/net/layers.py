"""Primitive network layers with paired forward/backward passes.

Array layout is [batch, time, freq, channels] throughout. Convolutions are
stride 1 and causal in time: padding goes entirely on the early-time edge,
symmetric in frequency. Each forward returns (out, cache); the matching
backward consumes the cache and returns input/parameter cotangents.
"""

from __future__ import annotations

import numpy as np

BN_MOMENTUM = 0.9
BN_EPS = 1e-5


# ---------------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------------


def conv2d_forward(x, w, b=None):
    """3x3 / 1x1 convolution, causal time padding, symmetric frequency padding.

    w has shape [kt, kf, cin, cout]; time padding is kt-1 at the early edge
    only, frequency padding (kf-1)/2 on each side. Bias is optional:
    convolutions followed by batch norm omit it (BN absorbs any shift).

    Tap-shifted slices of the padded input are block-contiguous, so the sum
    over taps runs as batched GEMMs with no im2col copies.
    """
    kt, kf, cin, cout = w.shape
    bsz, t, f, _ = x.shape
    if kt == 1 and kf == 1:
        out = x.reshape(-1, cin) @ w[0, 0]
        if b is not None:
            out += b
        return out.reshape(bsz, t, f, cout), (x, x.shape, w.shape)
    pf = (kf - 1) // 2
    xpad = np.pad(x, ((0, 0), (kt - 1, 0), (pf, pf), (0, 0)))
    out = np.zeros((bsz, t, f, cout), dtype=x.dtype)
    for i in range(kt):
        for j in range(kf):
            np.add(out, xpad[:, i : i + t, j : j + f, :] @ w[i, j], out=out)
    if b is not None:
        out += b
    return out, (xpad, x.shape, w.shape)


def conv2d_backward(dout, w, cache, with_bias=True):
    xpad, x_shape, (kt, kf, cin, cout) = cache[0], cache[1], cache[2]
    bsz, t, f, _ = x_shape
    db = dout.reshape(-1, cout).sum(axis=0) if with_bias else None
    if kt == 1 and kf == 1:
        x2 = xpad.reshape(-1, cin)
        d2 = dout.reshape(-1, cout)
        dw = (x2.T @ d2).reshape(kt, kf, cin, cout)
        dx = (d2 @ w[0, 0].T).reshape(x_shape)
        return dx, dw, db
    dw = np.empty_like(w)
    for i in range(kt):
        for j in range(kf):
            xs = xpad[:, i : i + t, j : j + f, :]
            dw[i, j] = (np.swapaxes(xs, -1, -2) @ dout).sum(axis=(0, 1))
    # dx is the correlation of dout with the flipped, channel-transposed
    # kernel; padding mirrors the forward (late-time edge instead of early)
    pf = (kf - 1) // 2
    dpad = np.pad(dout, ((0, 0), (0, kt - 1), (pf, pf), (0, 0)))
    dx = np.zeros(x_shape, dtype=dout.dtype)
    for i in range(kt):
        for j in range(kf):
            np.add(dx, dpad[:, i : i + t, j : j + f, :] @ w[kt - 1 - i, kf - 1 - j].T, out=dx)
    return dx, dw, db


# ---------------------------------------------------------------------------
# Batch normalization (statistics over batch, time, and frequency)
# ---------------------------------------------------------------------------


def batchnorm_forward(x, gamma, beta, running_mean, running_var, train):
    if train:
        mean = x.mean(axis=(0, 1, 2))
        var = x.var(axis=(0, 1, 2))
        new_running = (
            BN_MOMENTUM * running_mean + (1.0 - BN_MOMENTUM) * mean,
            BN_MOMENTUM * running_var + (1.0 - BN_MOMENTUM) * var,
        )
    else:
        mean, var = running_mean, running_var
        new_running = None
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean) * inv_std
    out = gamma * xhat + beta
    return out, (xhat, inv_std, gamma, train, x.shape), new_running


def batchnorm_backward(dout, cache):
    xhat, inv_std, gamma, train, x_shape = cache
    axes = (0, 1, 2)
    dgamma = (dout * xhat).sum(axis=axes)
    dbeta = dout.sum(axis=axes)
    if not train:
        return dout * (gamma * inv_std), dgamma, dbeta
    n = x_shape[0] * x_shape[1] * x_shape[2]
    dxhat = dout * gamma
    dx = (inv_std / n) * (
        n * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes)
    )
    return dx, dgamma, dbeta


# ---------------------------------------------------------------------------
# Elementwise / resolution ops
# ---------------------------------------------------------------------------


def relu_forward(x):
    mask = x > 0  # gradient at exactly 0 is defined as 0
    return x * mask, mask


def relu_backward(dout, mask):
    return dout * mask


def avgpool2_forward(x):
    """2x2 average pooling over (time, freq); both extents must be even."""
    bsz, t, f, c = x.shape
    if t % 2 or f % 2:
        raise ValueError(f"avgpool needs even time/freq extents, got {(t, f)}")
    r = x.reshape(bsz, t // 2, 2, f // 2, 2, c)
    return r.mean(axis=(2, 4)), x.shape


def avgpool2_backward(dout, x_shape):
    bsz, t, f, c = x_shape
    d = np.repeat(np.repeat(dout, 2, axis=1), 2, axis=2)
    return d * 0.25


def upsample2_forward(x):
    """Nearest-neighbor 2x upsampling over (time, freq)."""
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2), x.shape


def upsample2_backward(dout, x_shape):
    bsz, t, f, c = x_shape
    r = dout.reshape(bsz, t, 2, f, 2, c)
    return r.sum(axis=(2, 4))


# ---------------------------------------------------------------------------
# Time-axis self-attention
# ---------------------------------------------------------------------------


def attention_forward(x, wq, wk, wv, gain):
    """Scaled dot-product attention along time, independent per frequency bin.

    Single head; q/k/v are 1x1 projections. Output is a residual with a
    learnable scalar gain: x + gain * attended.
    """
    c = x.shape[-1]
    q = x @ wq
    k = x @ wk
    v = x @ wv
    # python-float scale: a numpy scalar would promote float32 to float64
    scale = 1.0 / float(np.sqrt(c))
    # scores[b, f, t, s] = <q[b, t, f], k[b, s, f]> * scale
    scores = np.einsum("btfc,bsfc->bfts", q, k, optimize=True) * scale
    scores -= scores.max(axis=-1, keepdims=True)
    e = np.exp(scores)
    attn = e / e.sum(axis=-1, keepdims=True)
    attended = np.einsum("bfts,bsfc->btfc", attn, v, optimize=True)
    out = x + gain * attended
    return out, (x, q, k, v, attn, attended, wq, wk, wv, gain, scale)


def attention_backward(dout, cache):
    x, q, k, v, attn, attended, wq, wk, wv, gain, scale = cache
    dgain = np.array([np.sum(dout * attended)])
    datt = dout * gain
    dattn = np.einsum("btfc,bsfc->bfts", datt, v, optimize=True)
    dv = np.einsum("bfts,btfc->bsfc", attn, datt, optimize=True)
    # softmax backward per (b, f, t) row
    dscores = attn * (dattn - (dattn * attn).sum(axis=-1, keepdims=True))
    dq = np.einsum("bfts,bsfc->btfc", dscores, k, optimize=True) * scale
    dk = np.einsum("bfts,btfc->bsfc", dscores, q, optimize=True) * scale
    cdim = x.shape[-1]
    x2 = x.reshape(-1, cdim)
    dwq = x2.T @ dq.reshape(-1, cdim)
    dwk = x2.T @ dk.reshape(-1, cdim)
    dwv = x2.T @ dv.reshape(-1, cdim)
    dx = dout + dq @ wq.T + dk @ wk.T + dv @ wv.T
    return dx, dwq, dwk, dwv, dgain
