"""Mono audio container, WAV I/O, and level utilities.

All pipeline audio is mono float at a canonical 16 kHz. WAV files may be
PCM16 or IEEE float32; multichannel inputs are downmixed by averaging and
non-canonical rates are resampled on load.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile

CANONICAL_RATE = 16000

SILENCE_FLOOR_DBFS = -100.0


class SilentSignalError(ValueError):
    """Raised when an operation requires a non-silent signal."""


@dataclass(frozen=True)
class AudioBuffer:
    """Mono sample sequence with its sample rate.

    Samples are float64, nominal full scale 1.0 (values outside [-1, 1] are
    legal up to +/-4 headroom). All values must be finite.
    """

    samples: np.ndarray
    sample_rate_hz: int = CANONICAL_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"expected mono 1-D samples, got shape {samples.shape}")
        if samples.size and not np.all(np.isfinite(samples)):
            raise ValueError("non-finite sample values")
        if self.sample_rate_hz <= 0:
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz

    def replace_samples(self, samples: np.ndarray) -> "AudioBuffer":
        return AudioBuffer(samples, self.sample_rate_hz)


def rms_dbfs(x: AudioBuffer | np.ndarray) -> float:
    """RMS level in dB relative to full scale 1.0: 20*log10(sqrt(mean(x^2)))."""
    samples = x.samples if isinstance(x, AudioBuffer) else np.asarray(x, dtype=np.float64)
    if samples.size == 0:
        return -np.inf
    mean_sq = float(np.mean(samples * samples))
    if mean_sq == 0.0:
        return -np.inf
    return 10.0 * np.log10(mean_sq)


def normalize_rms(x: AudioBuffer, target_dbfs: float) -> AudioBuffer:
    """Scale x so its RMS equals target_dbfs.

    Raises SilentSignalError for inputs at or below the -100 dBFS silence floor.
    """
    level = rms_dbfs(x)
    if level <= SILENCE_FLOOR_DBFS:
        raise SilentSignalError("silent signal")
    gain = 10.0 ** ((target_dbfs - level) / 20.0)
    return x.replace_samples(x.samples * gain)


def _downmix(data: np.ndarray) -> np.ndarray:
    if data.ndim == 2:
        return data.mean(axis=1)
    return data


def read_wav(path, target_rate_hz: int | None = CANONICAL_RATE) -> AudioBuffer:
    """Read a PCM16 or float32 WAV as a mono AudioBuffer.

    Multichannel files are downmixed by channel averaging. When
    target_rate_hz is given and differs from the file rate, the audio is
    resampled on load; pass None to keep the file rate.
    """
    rate, data = wavfile.read(path)
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"unsupported WAV sample format {data.dtype} in {path}")
    samples = _downmix(samples)
    buf = AudioBuffer(samples, rate)
    if target_rate_hz is not None and rate != target_rate_hz:
        from clearwave.dsp import resample

        if rate > 48000:
            raise ValueError(f"sample rates above 48 kHz unsupported ({rate} in {path})")
        buf = resample(buf, target_rate_hz / rate)
        buf = AudioBuffer(buf.samples, target_rate_hz)
    return buf


def write_wav(path, x: AudioBuffer, fmt: str = "float32") -> None:
    """Write a mono WAV, either IEEE 'float32' (bit-exact round trip) or 'pcm16'."""
    if fmt == "float32":
        wavfile.write(path, x.sample_rate_hz, x.samples.astype(np.float32))
    elif fmt == "pcm16":
        scaled = np.clip(np.round(x.samples * 32768.0), -32768, 32767)
        wavfile.write(path, x.sample_rate_hz, scaled.astype(np.int16))
    else:
        raise ValueError(f"unknown WAV format {fmt!r}")
