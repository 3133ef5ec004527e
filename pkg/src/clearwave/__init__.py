"""Speech enhancement toolkit: complex-ratio-mask U-Net, data engine, streaming inference."""

from clearwave.audio import AudioBuffer, read_wav, write_wav, rms_dbfs, normalize_rms
from clearwave.dsp import StftConfig, Spectrogram, ComplexMask, stft, istft, apply_mask

__all__ = [
    "AudioBuffer",
    "read_wav",
    "write_wav",
    "rms_dbfs",
    "normalize_rms",
    "StftConfig",
    "Spectrogram",
    "ComplexMask",
    "stft",
    "istft",
    "apply_mask",
]

__version__ = "0.1.0"
