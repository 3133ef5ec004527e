"""Offline enhancement: mask providers and whole-buffer evaluation.

A mask provider maps a [T, F] complex spectrogram to one or more complex
masks. The 'model' provider evaluates a checkpoint; 'identity' passes audio
through the STFT/ISTFT path unchanged (for latency and plumbing tests);
'oracle' builds true ratio masks from a known target.
"""

from __future__ import annotations

import numpy as np

from clearwave.audio import AudioBuffer
from clearwave.dsp import StftConfig, istft_array, stft_array
from clearwave.net.checkpoint import load_checkpoint
from clearwave.net.model import UNet, masks_from_net_output, net_input_from_bins


class IdentityMaskProvider:
    n_output_masks = 1

    def __call__(self, bins: np.ndarray):
        return [np.ones_like(bins)]


class OracleMaskProvider:
    """True ratio masks for known component spectrograms: M_c = S_c / S_x."""

    def __init__(self, component_bins, eps: float = 1e-12):
        self.component_bins = list(component_bins)
        self.eps = eps
        self.n_output_masks = len(self.component_bins)

    def __call__(self, bins: np.ndarray):
        masks = []
        small = np.abs(bins) < self.eps
        safe = np.where(small, 1.0, bins)
        for comp in self.component_bins:
            masks.append(np.where(small, 0.0, comp / safe))
        return masks


class ModelMaskProvider:
    def __init__(self, checkpoint_path=None, cfg=None, params=None):
        if checkpoint_path is not None:
            cfg, params, _, _ = load_checkpoint(checkpoint_path)
        if cfg is None or params is None:
            raise ValueError("need a checkpoint path or (cfg, params)")
        self.cfg = cfg
        self.params = params
        self.net = UNet(cfg)
        self.n_output_masks = cfg.n_output_masks

    def __call__(self, bins: np.ndarray):
        dtype = np.complex64 if next(iter(self.params.values())).dtype == np.float32 else None
        if dtype is not None:
            bins = bins.astype(dtype)
        x = net_input_from_bins(bins, self.cfg.embedding_k)[None]
        out, _ = self.net.forward(x, self.params, train=False)
        return masks_from_net_output(out[0], self.cfg.n_output_masks)


def masks_for_bins(bins: np.ndarray, checkpoint_path) -> list:
    return ModelMaskProvider(checkpoint_path)(bins)


def enhance_array(x: np.ndarray, provider, cfg: StftConfig = StftConfig(),
                  mask_index: int = 0) -> np.ndarray:
    """Mask-and-resynthesize a whole buffer; output length equals input length.

    The input is zero-padded up to the frame grid and the synthesis cropped
    back, so arbitrary lengths round-trip.
    """
    n = x.size
    padded_len = cfg.padded_length(n)
    padded = np.concatenate([x, np.zeros(padded_len - n, dtype=x.dtype)]) if padded_len != n else x
    bins = stft_array(padded, cfg)
    mask = provider(bins)[mask_index]
    return istft_array(mask * bins, cfg)[:n]


def enhance_buffer(x: AudioBuffer, provider, cfg: StftConfig = StftConfig(),
                   mask_index: int = 0) -> AudioBuffer:
    return AudioBuffer(enhance_array(x.samples, provider, cfg, mask_index), x.sample_rate_hz)
