"""Objective quality metrics and evaluation reports.

SI-SDR, plain SNR, and log-spectral distance stand in for the licensed /
human-rated metrics this kind of system is usually judged by; see README.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from clearwave.audio import AudioBuffer
from clearwave.dsp import StftConfig, stft_array

SI_SDR_CAP_DB = 100.0
LSD_EPS = 1e-8


def _samples(x) -> np.ndarray:
    return x.samples if isinstance(x, AudioBuffer) else np.asarray(x, dtype=np.float64)


def si_sdr_db(est, ref) -> float:
    """Scale-invariant SDR: 10*log10(|a*ref|^2 / |est - a*ref|^2) with the
    projection a = <est, ref>/|ref|^2. Exactly invariant to positive scaling
    of est; capped at +100 dB."""
    e = _samples(est)
    r = _samples(ref)
    if e.shape != r.shape:
        raise ValueError("length mismatch")
    ref_energy = float(np.dot(r, r))
    if ref_energy == 0.0:
        raise ValueError("silent reference")
    alpha = float(np.dot(e, r)) / ref_energy
    target = alpha * r
    err = e - target
    err_energy = float(np.dot(err, err))
    tgt_energy = float(np.dot(target, target))
    if err_energy <= tgt_energy * 10.0 ** (-SI_SDR_CAP_DB / 10.0):
        return SI_SDR_CAP_DB
    return min(SI_SDR_CAP_DB, 10.0 * np.log10(tgt_energy / err_energy))


def snr_improvement_db(enhanced, noisy, ref) -> float:
    return si_sdr_db(enhanced, ref) - si_sdr_db(noisy, ref)


def log_spectral_distance(est, ref, cfg: StftConfig = StftConfig()) -> float:
    """RMS over frames of the per-frame RMS log-magnitude ratio, in dB."""
    e = _samples(est)
    r = _samples(ref)
    if e.shape != r.shape:
        raise ValueError("length mismatch")
    em = np.abs(stft_array(e, cfg))
    rm = np.abs(stft_array(r, cfg))
    ratio_db = 20.0 * np.log10((em + LSD_EPS) / (rm + LSD_EPS))
    per_frame = np.sqrt(np.mean(ratio_db * ratio_db, axis=1))
    return float(np.sqrt(np.mean(per_frame * per_frame)))


@dataclass(frozen=True)
class EvalRow:
    name: str
    si_sdr_db: float
    snr_db: float
    lsd_db: float


@dataclass(frozen=True)
class EvalReport:
    rows: tuple

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(self.rows))

    def _column(self, key):
        return np.array([getattr(r, key) for r in self.rows], dtype=np.float64)

    def aggregate(self) -> dict:
        """Means with 95% normal-approximation confidence intervals."""
        out = {}
        n = len(self.rows)
        for key in ("si_sdr_db", "snr_db", "lsd_db"):
            col = self._column(key)
            mean = float(col.mean())
            half = 1.96 * float(col.std(ddof=1)) / np.sqrt(n) if n > 1 else 0.0
            out[key] = {"mean": mean, "ci95": half}
        return out

    def write(self, path) -> None:
        agg = self.aggregate()
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("name\tsi_sdr_db\tsnr_db\tlsd_db\n")
            for r in self.rows:
                fh.write(f"{r.name}\t{r.si_sdr_db:.6f}\t{r.snr_db:.6f}\t{r.lsd_db:.6f}\n")
            for key, stats in sorted(agg.items()):
                fh.write(f"#mean_{key}\t{stats['mean']:.6f}\t+/-\t{stats['ci95']:.6f}\n")


def evaluate_pair(name: str, enhanced: AudioBuffer, reference: AudioBuffer) -> EvalRow:
    from clearwave.data import snr_db as plain_snr

    n = min(len(enhanced), len(reference))
    e = AudioBuffer(enhanced.samples[:n], enhanced.sample_rate_hz)
    r = AudioBuffer(reference.samples[:n], reference.sample_rate_hz)
    noise = AudioBuffer(e.samples - r.samples, e.sample_rate_hz)
    return EvalRow(
        name=name,
        si_sdr_db=si_sdr_db(e, r),
        snr_db=plain_snr(r, noise),
        lsd_db=log_spectral_distance(e, r),
    )
