"""Desk-scale synthetic corpora with known ground truth.

Foregrounds are harmonic, formant-shaped tones with syllabic amplitude
modulation and drifting pitch (speech-like structure without real speech);
backgrounds are shaped noise with optional bursts. The filter-test corpus
mixes components at construction-controlled DRR and SNR so gate decisions
can be checked against ground truth exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from clearwave.audio import AudioBuffer, write_wav
from clearwave.data import Manifest, ManifestRecord, ORACLE_SUFFIXES


def speech_like(duration_s: float, seed: int, fs: int = 16000) -> AudioBuffer:
    """Harmonic tone complex with vibrato, formant shaping, and syllable
    envelopes; RMS roughly -20 dBFS."""
    rng = np.random.default_rng(np.random.SeedSequence([0x5BEEC4, seed]))
    n = int(round(duration_s * fs))
    t = np.arange(n) / fs
    f0 = rng.uniform(90.0, 250.0)
    # slow random pitch drift, a few semitones across the clip
    drift = np.cumsum(rng.normal(0.0, 0.5, size=n)) / fs
    drift = drift - drift.mean()
    inst_f0 = f0 * (1.0 + 0.08 * np.tanh(drift)) * (
        1.0 + 0.01 * np.sin(2 * np.pi * rng.uniform(4.0, 7.0) * t)
    )
    phase = 2 * np.pi * np.cumsum(inst_f0) / fs
    formants = rng.uniform(300.0, 3200.0, size=3)
    bw = rng.uniform(80.0, 300.0, size=3)
    x = np.zeros(n)
    for k in range(1, 13):
        fk = k * f0
        if fk > 0.45 * fs:
            break
        # formant resonance gains, 1/k harmonic rolloff
        gain = sum(np.exp(-((fk - fm) ** 2) / (2 * bwm**2)) for fm, bwm in zip(formants, bw))
        x += (0.2 + gain) / k * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
    # syllabic gating: 2-5 Hz raised-cosine envelope with pauses
    syl = 0.5 * (1 + np.sin(2 * np.pi * rng.uniform(2.0, 5.0) * t + rng.uniform(0, 2 * np.pi)))
    env = np.clip(syl - rng.uniform(0.05, 0.25), 0.0, None)
    env /= max(env.max(), 1e-9)
    x *= env
    rms = np.sqrt(np.mean(x * x))
    if rms > 0:
        x *= 0.1 / rms
    return AudioBuffer(x, fs)


def noise_like(duration_s: float, seed: int, fs: int = 16000) -> AudioBuffer:
    """Shaped noise: white/pink base, optional AM wobble and bursts."""
    rng = np.random.default_rng(np.random.SeedSequence([0x0153E5, seed]))
    n = int(round(duration_s * fs))
    white = rng.normal(0.0, 1.0, size=n)
    kind = rng.integers(0, 3)
    if kind >= 1:
        # pink-ish tilt via leaky integration of white noise
        shaped = lfilter([1.0], [1.0, -0.98], white)
        shaped /= max(np.std(shaped), 1e-9)
        x = 0.5 * white + 0.5 * shaped if kind == 1 else shaped
    else:
        x = white
    if rng.random() < 0.5:
        x *= 1.0 + 0.5 * np.sin(2 * np.pi * rng.uniform(0.5, 4.0) * np.arange(n) / fs)
    if rng.random() < 0.5:
        for _ in range(rng.integers(1, 4)):
            start = rng.integers(0, max(1, n - fs // 10))
            burst_len = int(rng.uniform(0.02, 0.1) * fs)
            x[start : start + burst_len] += rng.normal(0.0, 6.0, size=min(burst_len, n - start))
    rms = np.sqrt(np.mean(x * x))
    if rms > 0:
        x *= 0.1 / rms
    return AudioBuffer(x, fs)


def generate_clip_corpus(
    out_dir,
    kind: str,
    count: int,
    seed: int,
    duration_s: float = 2.0,
    fs: int = 16000,
    val_fraction: float = 0.2,
) -> Manifest:
    """Write a directory of foreground or background WAVs plus a manifest."""
    if kind not in ("speech", "noise"):
        raise ValueError("kind must be 'speech' or 'noise'")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    make = speech_like if kind == "speech" else noise_like
    records = []
    n_val = int(round(count * val_fraction))
    for i in range(count):
        clip = make(duration_s, seed * 100_0001 + i, fs)
        name = f"{kind}_{i:04d}.wav"
        write_wav(out_dir / name, clip, fmt="float32")
        split = "val" if i >= count - n_val else "train"
        records.append(ManifestRecord(name, duration_s, frozenset({kind}), split))
    manifest = Manifest(tuple(records))
    manifest.save(out_dir / "manifest.jsonl")
    return manifest


def _scale_to_energy_ratio(reference: np.ndarray, other: np.ndarray, ratio_db: float) -> np.ndarray:
    """Scale `other` so 10*log10(E(reference)/E(other)) == ratio_db."""
    e_ref = np.sum(reference * reference)
    e_other = np.sum(other * other)
    target = e_ref / (10.0 ** (ratio_db / 10.0))
    return other * np.sqrt(target / e_other)


def generate_filter_test_corpus(
    out_dir,
    count: int = 60,
    seed: int = 0,
    duration_s: float = 1.0,
    fs: int = 16000,
    drr_span_db: tuple = (20.0, 40.0),
    snr_span_db: tuple = (0.0, 20.0),
) -> tuple:
    """Mixed clips with construction-known DRR and SNR spanning both gates.

    Each clip is speech + reverb-tail + noise where the tail and noise are
    scaled to hit exact target ratios: DRR = E(speech)/E(tail) and
    SNR = E(speech)/E(noise), both against the dry direct speech (matching
    the three-component estimator interface). Ground-truth components are
    stored next to each clip for the oracle estimator. Returns
    (manifest, truth) where truth maps clip name -> dict(drr_db, snr_db).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence([0xF117E5, seed]))
    records = []
    truth = {}
    n = int(round(duration_s * fs))
    for i in range(count):
        s = speech_like(duration_s, seed * 31 + i, fs).samples
        # reverb tail stand-in: smeared, delayed copy of the speech
        kernel = rng.normal(0.0, 1.0, size=int(0.12 * fs)) * np.exp(
            -np.arange(int(0.12 * fs)) / (0.04 * fs)
        )
        tail = np.convolve(s, kernel)[:n]
        noise = noise_like(duration_s, seed * 53 + i + 7_000, fs).samples
        # spread targets across the thresholds, with a few near-boundary clips
        frac = i / max(count - 1, 1)
        drr_target = drr_span_db[0] + frac * (drr_span_db[1] - drr_span_db[0])
        snr_target = snr_span_db[0] + (1 - frac) * (snr_span_db[1] - snr_span_db[0])
        if i % 10 == 3:
            drr_target = 30.0 + 0.01
        if i % 10 == 7:
            drr_target = 30.0 - 0.01
        if i % 12 == 5:
            snr_target = 10.0 + 0.01
        if i % 12 == 9:
            snr_target = 10.0 - 0.01
        tail = _scale_to_energy_ratio(s, tail, drr_target)
        noise = _scale_to_energy_ratio(s, noise, snr_target)
        clip = s + tail + noise
        name = f"clip_{i:04d}.wav"
        write_wav(out_dir / name, AudioBuffer(clip, fs), fmt="float32")
        base = str((out_dir / name).with_suffix(""))
        write_wav(base + ORACLE_SUFFIXES["speech"], AudioBuffer(s, fs))
        write_wav(base + ORACLE_SUFFIXES["noise"], AudioBuffer(noise, fs))
        write_wav(base + ORACLE_SUFFIXES["reverb"], AudioBuffer(tail, fs))
        records.append(ManifestRecord(name, duration_s, frozenset({"mixed"}), "train"))
        truth[name] = {"drr_db": drr_target, "snr_db": snr_target}
    manifest = Manifest(tuple(records))
    manifest.save(out_dir / "manifest.jsonl")
    with open(out_dir / "truth.json", "w", encoding="utf-8") as fh:
        json.dump(truth, fh, indent=1, sort_keys=True)
    return manifest, truth
