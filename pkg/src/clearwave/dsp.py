"""STFT/ISTFT, complex-mask application, resampling, and biquad filtering.

The transform pair uses square-root Hann analysis and synthesis windows at
50% overlap, which satisfy constant-overlap-add and give perfect
reconstruction away from the signal edges. Everything here is a pure
function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

from clearwave.audio import AudioBuffer

_COLA_EPS = 1e-12


def sqrt_hann(n: int) -> np.ndarray:
    # periodic Hann, so shifts by n/2 tile to exactly 1
    return np.sqrt(0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / n)))


@dataclass(frozen=True)
class StftConfig:
    fft_size: int = 512
    hop_size: int = 256
    window: str = "sqrt_hann"

    def __post_init__(self):
        if self.fft_size <= 0 or (self.fft_size & (self.fft_size - 1)) != 0:
            raise ValueError(f"fft_size must be a power of two, got {self.fft_size}")
        if self.fft_size % self.hop_size != 0:
            raise ValueError("hop_size must divide fft_size")
        if self.window != "sqrt_hann":
            raise ValueError(f"unknown window {self.window!r}")

    @property
    def freq_bins(self) -> int:
        return self.fft_size // 2 + 1

    def analysis_window(self) -> np.ndarray:
        return sqrt_hann(self.fft_size)

    def synthesis_window(self) -> np.ndarray:
        return sqrt_hann(self.fft_size)

    def num_frames(self, n_samples: int) -> int:
        if n_samples < self.fft_size:
            raise ValueError("insufficient samples")
        return 1 + (n_samples - self.fft_size) // self.hop_size

    def cover_length(self, n_frames: int) -> int:
        return (n_frames - 1) * self.hop_size + self.fft_size

    def padded_length(self, n_samples: int) -> int:
        """Smallest frame-grid length >= n_samples (>= one frame)."""
        n = max(n_samples, self.fft_size)
        frames = -(-(n - self.fft_size) // self.hop_size) + 1
        return self.cover_length(frames)


@dataclass(frozen=True)
class Spectrogram:
    """Complex time-frequency array of shape [frames, freq_bins]."""

    bins: np.ndarray
    config: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        bins = np.asarray(self.bins)
        if bins.ndim != 2 or bins.shape[1] != self.config.freq_bins:
            raise ValueError(
                f"expected [T, {self.config.freq_bins}] bins, got shape {bins.shape}"
            )
        object.__setattr__(self, "bins", bins.astype(np.complex128, copy=False))

    @property
    def n_frames(self) -> int:
        return self.bins.shape[0]


@dataclass(frozen=True)
class ComplexMask:
    """Per-bin complex multiplier, same shape as the spectrogram it masks."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2:
            raise ValueError(f"expected [T, F] mask, got shape {values.shape}")
        object.__setattr__(self, "values", values.astype(np.complex128, copy=False))


def frame_signal(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """[T, fft_size] windowed analysis frames (copies, safe to FFT in place)."""
    n_frames = cfg.num_frames(x.size)
    idx = np.arange(cfg.fft_size)[None, :] + cfg.hop_size * np.arange(n_frames)[:, None]
    return x[idx] * cfg.analysis_window()


def stft(x: AudioBuffer, cfg: StftConfig = StftConfig()) -> Spectrogram:
    """Windowed real FFT per frame; frames = 1 + floor((len - fft)/hop)."""
    frames = frame_signal(x.samples, cfg)
    return Spectrogram(np.fft.rfft(frames, n=cfg.fft_size), cfg)


def stft_array(x: np.ndarray, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """stft on a raw sample array; returns the raw [T, F] complex bins."""
    n_frames = cfg.num_frames(x.size)
    idx = np.arange(cfg.fft_size)[None, :] + cfg.hop_size * np.arange(n_frames)[:, None]
    window = cfg.analysis_window().astype(x.dtype, copy=False)
    return np.fft.rfft(x[idx] * window, n=cfg.fft_size)


def _cola_envelope(cfg: StftConfig, n_frames: int, dtype=np.float64) -> np.ndarray:
    env = np.zeros(cfg.cover_length(n_frames), dtype=dtype)
    ws = (cfg.analysis_window() * cfg.synthesis_window()).astype(dtype)
    for k in range(n_frames):
        env[k * cfg.hop_size : k * cfg.hop_size + cfg.fft_size] += ws
    return env


def istft(S: Spectrogram) -> AudioBuffer:
    """Overlap-add synthesis with COLA normalization.

    Output length is (T-1)*hop + fft_size. Reconstruction is exact except
    where the window envelope vanishes (the very first sample).
    """
    return AudioBuffer(istft_array(S.bins, S.config))


def istft_array(bins: np.ndarray, cfg: StftConfig = StftConfig()) -> np.ndarray:
    n_frames = bins.shape[0]
    dtype = np.float32 if bins.dtype == np.complex64 else np.float64
    frames = np.fft.irfft(bins, n=cfg.fft_size) * cfg.synthesis_window().astype(dtype)
    out = np.zeros(cfg.cover_length(n_frames), dtype=dtype)
    for k in range(n_frames):
        out[k * cfg.hop_size : k * cfg.hop_size + cfg.fft_size] += frames[k]
    env = _cola_envelope(cfg, n_frames, dtype)
    return out / np.maximum(env, _COLA_EPS)


def istft_adjoint(grad_out: np.ndarray, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Adjoint of istft_array as a map from (Re, Im) bins to time samples.

    Input is d(loss)/d(samples); output is the complex cotangent array with
    the convention g = dL/dRe + 1j*dL/dIm. Used to backpropagate waveform
    losses through synthesis to the masked spectrogram.
    """
    n_frames = 1 + (grad_out.size - cfg.fft_size) // cfg.hop_size
    dtype = grad_out.dtype
    g = grad_out / np.maximum(_cola_envelope(cfg, n_frames, dtype), _COLA_EPS)
    idx = np.arange(cfg.fft_size)[None, :] + cfg.hop_size * np.arange(n_frames)[:, None]
    gf = g[idx] * cfg.synthesis_window().astype(dtype)
    spec = np.fft.rfft(gf, n=cfg.fft_size)
    adj = spec * (2.0 / cfg.fft_size)
    # irfft ignores the imaginary parts of the DC and Nyquist bins, and they
    # enter the reconstruction once, not twice
    adj[:, 0] = spec[:, 0].real / cfg.fft_size
    adj[:, -1] = spec[:, -1].real / cfg.fft_size
    return adj


def apply_mask(S: Spectrogram, M: ComplexMask) -> Spectrogram:
    """Elementwise complex product N(X) * X."""
    if M.values.shape != S.bins.shape:
        raise ValueError(f"mask shape {M.values.shape} != spectrogram shape {S.bins.shape}")
    return Spectrogram(S.bins * M.values, S.config)


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------

_SINC_TAPS = 64
_KAISER_BETA = 8.0


def resample(x: AudioBuffer, ratio: float) -> AudioBuffer:
    """Windowed-sinc resampling; output length = round(len * ratio).

    Kaiser-windowed sinc, 64 taps, cutoff at the lower of the two Nyquist
    frequencies so decimation does not alias.
    """
    if not 0.5 <= ratio <= 2.0:
        raise ValueError(f"resample ratio {ratio} outside [0.5, 2.0]")
    return x.replace_samples(resample_array(x.samples, ratio))


def resample_array(x: np.ndarray, ratio: float) -> np.ndarray:
    n_in = x.size
    n_out = int(round(n_in * ratio))
    if n_in == 0 or n_out == 0:
        return np.zeros(0, dtype=x.dtype)
    half = _SINC_TAPS // 2
    # output sample j sits at input position j / ratio
    pos = np.arange(n_out) / ratio
    base = np.floor(pos).astype(np.int64)
    frac = pos - base
    offsets = np.arange(-half + 1, half + 1)
    # kernel argument: distance from each contributing input sample to pos
    u = offsets[None, :] - frac[:, None]
    cutoff = min(1.0, ratio)
    taps = cutoff * np.sinc(cutoff * u) * _kaiser_of(u, half)
    xpad = np.concatenate([np.zeros(half, dtype=np.float64), x, np.zeros(half + 1, dtype=np.float64)])
    idx = base[:, None] + offsets[None, :] + half
    return (xpad[idx] * taps).sum(axis=1)


def _kaiser_of(u: np.ndarray, half: int) -> np.ndarray:
    # evaluate the Kaiser window directly at fractional offsets
    arg = np.clip(1.0 - (u / half) ** 2, 0.0, None)
    return np.i0(_KAISER_BETA * np.sqrt(arg)) / np.i0(_KAISER_BETA)


# ---------------------------------------------------------------------------
# Biquad filters
# ---------------------------------------------------------------------------


def biquad_apply(x: AudioBuffer, coeffs) -> AudioBuffer:
    """Apply one biquad section given (b0, b1, b2, a1, a2), a0 normalized to 1.

    Direct-form transposed IIR with zero initial state. Rejects unstable
    filters (poles on or outside the unit circle).
    """
    b0, b1, b2, a1, a2 = (float(c) for c in coeffs)
    if not _biquad_stable(a1, a2):
        raise ValueError(f"unstable biquad: poles of z^2 + {a1} z + {a2} not inside unit circle")
    y = sps.lfilter([b0, b1, b2], [1.0, a1, a2], x.samples)
    return x.replace_samples(y)


def _biquad_stable(a1: float, a2: float) -> bool:
    # Schur-Cohn stability triangle
    return abs(a2) < 1.0 and abs(a1) < 1.0 + a2


def _clamp_design_freq(freq_hz: float, fs: int) -> float:
    # corners at Nyquist make the RBJ prototypes degenerate (poles land on
    # the unit circle), so pin designs strictly inside the band
    return min(max(freq_hz, 1.0), 0.497 * fs)


def design_low_shelf(freq_hz: float, gain_db: float, fs: int, slope: float = 1.5):
    """RBJ cookbook low-shelf biquad, returned as (b0, b1, b2, a1, a2).

    The default slope reaches the full shelf gain within one octave of the
    corner (at the cost of a fraction of a dB of overshoot).
    """
    a = 10.0 ** (gain_db / 40.0)
    w0 = 2.0 * np.pi * _clamp_design_freq(freq_hz, fs) / fs
    cw, sw = np.cos(w0), np.sin(w0)
    alpha = sw / 2.0 * np.sqrt((a + 1.0 / a) * (1.0 / slope - 1.0) + 2.0)
    two_sqrt_a_alpha = 2.0 * np.sqrt(a) * alpha
    b0 = a * ((a + 1) - (a - 1) * cw + two_sqrt_a_alpha)
    b1 = 2 * a * ((a - 1) - (a + 1) * cw)
    b2 = a * ((a + 1) - (a - 1) * cw - two_sqrt_a_alpha)
    a0 = (a + 1) + (a - 1) * cw + two_sqrt_a_alpha
    a1 = -2 * ((a - 1) + (a + 1) * cw)
    a2 = (a + 1) + (a - 1) * cw - two_sqrt_a_alpha
    return (b0 / a0, b1 / a0, b2 / a0, a1 / a0, a2 / a0)


def design_high_shelf(freq_hz: float, gain_db: float, fs: int, slope: float = 1.5):
    a = 10.0 ** (gain_db / 40.0)
    w0 = 2.0 * np.pi * _clamp_design_freq(freq_hz, fs) / fs
    cw, sw = np.cos(w0), np.sin(w0)
    alpha = sw / 2.0 * np.sqrt((a + 1.0 / a) * (1.0 / slope - 1.0) + 2.0)
    two_sqrt_a_alpha = 2.0 * np.sqrt(a) * alpha
    b0 = a * ((a + 1) + (a - 1) * cw + two_sqrt_a_alpha)
    b1 = -2 * a * ((a - 1) + (a + 1) * cw)
    b2 = a * ((a + 1) + (a - 1) * cw - two_sqrt_a_alpha)
    a0 = (a + 1) - (a - 1) * cw + two_sqrt_a_alpha
    a1 = 2 * ((a - 1) - (a + 1) * cw)
    a2 = (a + 1) - (a - 1) * cw - two_sqrt_a_alpha
    return (b0 / a0, b1 / a0, b2 / a0, a1 / a0, a2 / a0)


def design_peaking(freq_hz: float, gain_db: float, q: float, fs: int):
    """RBJ peaking EQ; boost and cut at the same |gain| are exact inverses."""
    a = 10.0 ** (gain_db / 40.0)
    w0 = 2.0 * np.pi * _clamp_design_freq(freq_hz, fs) / fs
    alpha = np.sin(w0) / (2.0 * q)
    b0 = 1 + alpha * a
    b1 = -2 * np.cos(w0)
    b2 = 1 - alpha * a
    a0 = 1 + alpha / a
    a1 = b1
    a2 = 1 - alpha / a
    return (b0 / a0, b1 / a0, b2 / a0, a1 / a0, a2 / a0)


def butter_lowpass(x: AudioBuffer, cutoff_hz: float, order: int = 8) -> AudioBuffer:
    """Butterworth low-pass as cascaded second-order sections, zero initial state."""
    sos = sps.butter(order, cutoff_hz, btype="low", fs=x.sample_rate_hz, output="sos")
    return x.replace_samples(sps.sosfilt(sos, x.samples))
