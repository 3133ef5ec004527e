"""Room impulse response synthesis, normalization, augmentation, RT60
estimation, and reverberant mixing with independent speech/noise tail gains.

RIRs are synthesized with the rectangular-room image method at 343 m/s with
a uniform reflection coefficient on all six walls. Each image source of
total reflection order o at distance d contributes an impulse of amplitude
beta^o / d at the floor-quantized integer delay floor(fs * d / 343).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

from clearwave.audio import AudioBuffer, read_wav, write_wav
from clearwave.dsp import resample

SPEED_OF_SOUND = 343.0

FIRST_TAP_REL_THRESHOLD = 10.0 ** (-40.0 / 20.0)  # 40 dB below the global peak

REFLECTION_CLAMP = 0.99


class UndecayableError(ValueError):
    """RIR has no usable energy-decay segment."""


@dataclass(frozen=True)
class RoomSpec:
    dimensions_m: tuple
    source_pos_m: tuple
    mic_pos_m: tuple
    reflection_coeff: float
    max_order: int | None = None

    def __post_init__(self):
        dims = tuple(float(v) for v in self.dimensions_m)
        src = tuple(float(v) for v in self.source_pos_m)
        mic = tuple(float(v) for v in self.mic_pos_m)
        object.__setattr__(self, "dimensions_m", dims)
        object.__setattr__(self, "source_pos_m", src)
        object.__setattr__(self, "mic_pos_m", mic)
        if len(dims) != 3 or any(d <= 0 for d in dims):
            raise ValueError(f"degenerate room dimensions {dims}")
        for name, pos in (("source", src), ("mic", mic)):
            if len(pos) != 3 or not all(0 < p < d for p, d in zip(pos, dims)):
                raise ValueError(f"{name} position {pos} not strictly inside room {dims}")

    @property
    def synthesis_reflection(self) -> float:
        # coefficients are sampled up to 1.5 but anything >= 1 is
        # non-physical and divergent, so synthesis clamps
        return min(self.reflection_coeff, REFLECTION_CLAMP)

    def to_dict(self) -> dict:
        return {
            "dimensions_m": list(self.dimensions_m),
            "source_pos_m": list(self.source_pos_m),
            "mic_pos_m": list(self.mic_pos_m),
            "reflection_coeff": self.reflection_coeff,
            "max_order": self.max_order,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RoomSpec":
        return cls(
            tuple(d["dimensions_m"]),
            tuple(d["source_pos_m"]),
            tuple(d["mic_pos_m"]),
            d["reflection_coeff"],
            d.get("max_order"),
        )


@dataclass(frozen=True)
class Rir:
    taps: AudioBuffer
    first_tap_index: int = 0
    rt60_s: float | None = None


@dataclass(frozen=True)
class ReverbMixParams:
    alpha_db: float  # speech tail gain, [-25, 0]
    beta_db: float  # noise tail gain, same range
    reverb_noise_prob: float = 0.6

    def __post_init__(self):
        if self.alpha_db > 0 or self.beta_db > 0:
            raise ValueError("tail gains must be <= 0 dB")


def image_method_rir(room: RoomSpec, fs: int = 16000, length_s: float = 1.0) -> Rir:
    """Sum attenuated impulses over all image sources within the time window.

    max_order, when set, additionally restricts the total reflection count.
    """
    dims = np.array(room.dimensions_m)
    src = np.array(room.source_pos_m)
    mic = np.array(room.mic_pos_m)
    beta = room.synthesis_reflection
    n_taps = int(round(fs * length_s))
    max_dist = SPEED_OF_SOUND * n_taps / fs

    # grid ranges wide enough to cover every image within max_dist
    n_range = [int(np.ceil(max_dist / (2 * d))) + 1 for d in dims]
    h = np.zeros(n_taps)
    # chunk over the x grid to bound memory for small rooms / long windows
    ny = np.arange(-n_range[1], n_range[1] + 1)
    nz = np.arange(-n_range[2], n_range[2] + 1)
    p = np.array([[px, py, pz] for px in (0, 1) for py in (0, 1) for pz in (0, 1)])
    for nx in range(-n_range[0], n_range[0] + 1):
        grid = np.stack(np.meshgrid([nx], ny, nz, indexing="ij"), axis=-1).reshape(-1, 3)
        for pvec in p:
            # image position: (1-2p)*src + 2n*L; reflections = |n - p| + |n|
            pos = (1 - 2 * pvec) * src + 2 * grid * dims
            order = np.abs(grid - pvec).sum(axis=1) + np.abs(grid).sum(axis=1)
            if room.max_order is not None:
                keep = order <= room.max_order
                pos, order = pos[keep], order[keep]
                if pos.size == 0:
                    continue
            dist = np.linalg.norm(pos - mic, axis=1)
            delay = np.floor(fs * dist / SPEED_OF_SOUND).astype(np.int64)
            inside = delay < n_taps
            if not np.any(inside):
                continue
            amp = beta ** order[inside] / dist[inside]
            h += np.bincount(delay[inside], weights=amp, minlength=n_taps)
    return Rir(AudioBuffer(h, fs))


def normalize_first_tap(h: Rir) -> Rir:
    """Shift so the first significant tap sits at index 0 with height 1.

    'First tap' means the earliest tap within 40 dB of the global peak.
    """
    taps = h.taps.samples
    peak = np.max(np.abs(taps)) if taps.size else 0.0
    if peak <= 0 or not np.any(np.abs(taps) >= peak * 1e-4):
        raise ValueError("all-near-zero RIR")
    significant = np.abs(taps) >= peak * FIRST_TAP_REL_THRESHOLD
    first = int(np.argmax(significant))
    shifted = taps[first:] / taps[first]
    return Rir(AudioBuffer(shifted, h.taps.sample_rate_hz), first_tap_index=0, rt60_s=h.rt60_s)


def estimate_rt60(h: Rir) -> float:
    """Schroeder backward-integrated decay, -5..-25 dB fit extrapolated to -60.

    Raises UndecayableError when the decay segment is shorter than 10 ms.
    """
    taps = h.taps.samples
    fs = h.taps.sample_rate_hz
    if taps.size < int(0.1 * fs):
        raise UndecayableError("RIR shorter than 0.1 s")
    energy = np.cumsum((taps * taps)[::-1])[::-1]
    total = energy[0]
    if total <= 0:
        raise UndecayableError("silent RIR")
    with np.errstate(divide="ignore"):
        edc_db = 10.0 * np.log10(energy / total)
    finite = np.isfinite(edc_db)
    below5 = np.nonzero((edc_db <= -5.0) & finite)[0]
    below25 = np.nonzero((edc_db <= -25.0) & finite)[0]
    if below5.size == 0 or below25.size == 0:
        raise UndecayableError("undecayable")
    i5, i25 = below5[0], below25[0]
    if i25 - i5 < int(0.010 * fs):
        raise UndecayableError("undecayable")
    seg = slice(i5, i25 + 1)
    t = np.arange(i5, i25 + 1) / fs
    slope, intercept = np.polyfit(t, edc_db[seg], 1)
    if slope >= 0:
        raise UndecayableError("non-decaying energy curve")
    return float(-60.0 / slope)


def augment_rir(h: Rir, resample_ratio: float = 1.0, extra_decay_tau: float = np.inf) -> Rir:
    """Resample (simulates room size), apply exp(-t/tau) (simulates
    absorption), then re-normalize the first tap."""
    taps = resample(h.taps, resample_ratio).samples
    fs = h.taps.sample_rate_hz
    if np.isfinite(extra_decay_tau):
        if extra_decay_tau <= 0:
            raise ValueError("decay tau must be positive")
        t = np.arange(taps.size) / fs
        taps = taps * np.exp(-t / extra_decay_tau)
    return normalize_first_tap(Rir(AudioBuffer(taps, fs)))


# Amplitude decay exp(-t/tau) loses 60 dB of energy in t = tau * ln(10^3),
# so this tau alone forces RT60 = 0.15 s on the shaped tail.
_LABEL_RT60_TARGET = 0.15
_LN_1000 = 3.0 * np.log(10.0)


def make_partial_dereverb_target(h: Rir, keep_ms: float = 20.0, rt60_max: float = 0.2) -> Rir:
    """Keep the first 20 ms untouched, then force a fast exponential decay so
    the estimated RT60 drops below 0.2 s. Inputs already below the target are
    returned unchanged."""
    try:
        if estimate_rt60(h) < rt60_max:
            return h
    except UndecayableError:
        return h
    fs = h.taps.sample_rate_hz
    keep = int(round(keep_ms * 1e-3 * fs))
    tau = _LABEL_RT60_TARGET / _LN_1000
    for _ in range(8):
        taps = h.taps.samples.copy()
        t = np.arange(max(0, taps.size - keep)) / fs
        taps[keep:] *= np.exp(-t / tau)
        shaped = Rir(AudioBuffer(taps, fs), h.first_tap_index)
        try:
            if estimate_rt60(shaped) < rt60_max:
                return shaped
        except UndecayableError:
            return shaped
        tau *= 0.7
    return shaped


def split_tail(h: Rir, tail_gain_db: float) -> np.ndarray:
    """h0 + g * h_>0 for a normalized RIR: scale every tap except the first."""
    taps = h.taps.samples.copy()
    if taps.size == 0 or taps[0] != 1.0:
        raise ValueError("RIR must be first-tap normalized")
    gain = 0.0 if tail_gain_db == -np.inf else 10.0 ** (tail_gain_db / 20.0)
    taps[1:] *= gain
    return taps


def convolve_rir(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Convolution truncated to the input length (the RIR is causal)."""
    if taps.size > x.size:
        raise ValueError("RIR longer than signal")
    if taps.size and taps[0] == 1.0 and np.count_nonzero(taps) == 1:
        return x.copy()  # degenerate dry path stays exact
    return fftconvolve(x, taps)[: x.size]


def reverberant_mix(
    s: AudioBuffer,
    n: AudioBuffer,
    h: Rir,
    p: ReverbMixParams,
    rng: np.random.Generator,
    mode: str = "no-dereverb",
):
    """x = s*(h0 + alpha*h>0) + n*(h0 + beta*h>0), noise tail applied with
    probability reverb_noise_prob (else the noise stays dry).

    Returns (x, label_fg, label_bg, mode). In 'no-dereverb' mode the speech
    label keeps its full tail; in 'partial' mode the label RIR is the
    partial-dereverberation version of (h0 + alpha*h>0). label_bg is defined
    as x - label_fg so the pair is always additive.
    """
    if mode not in ("no-dereverb", "partial"):
        raise ValueError(f"unknown dereverb mode {mode!r}")
    if s.sample_rate_hz != n.sample_rate_hz:
        raise ValueError("sample rate mismatch")
    if len(s) != len(n):
        raise ValueError("speech and noise must have equal lengths")
    h_alpha = split_tail(h, p.alpha_db)
    x_s = convolve_rir(s.samples, h_alpha)
    if rng.random() < p.reverb_noise_prob:
        x_n = convolve_rir(n.samples, split_tail(h, p.beta_db))
    else:
        x_n = n.samples
    x = x_s + x_n
    if mode == "partial":
        label_rir = make_partial_dereverb_target(
            Rir(AudioBuffer(h_alpha, h.taps.sample_rate_hz))
        )
        label_fg = convolve_rir(s.samples, label_rir.taps.samples)
    else:
        label_fg = x_s
    label_bg = x - label_fg
    rate = s.sample_rate_hz
    return (
        AudioBuffer(x, rate),
        AudioBuffer(label_fg, rate),
        AudioBuffer(label_bg, rate),
        mode,
    )


# ---------------------------------------------------------------------------
# RIR library
# ---------------------------------------------------------------------------

RT60_LIBRARY_MAX_S = 0.8

_LIBRARY_MAX_ORDER = 60  # keeps image enumeration tractable for small rooms


def sample_room(rng: np.random.Generator, max_order: int | None = _LIBRARY_MAX_ORDER) -> RoomSpec:
    """Random rectangular room, 2-10 m sides, reflection coefficient in
    [0.5, 1.5] (clamped for synthesis), source/mic at least 0.3 m off walls."""
    dims = rng.uniform(2.0, 10.0, size=3)
    margin = 0.3
    src = rng.uniform(margin, dims - margin)
    mic = rng.uniform(margin, dims - margin)
    refl = rng.uniform(0.5, 1.5)
    return RoomSpec(tuple(dims), tuple(src), tuple(mic), float(refl), max_order)


def generate_rir_library(
    out_dir,
    count: int = 200,
    seed: int = 0,
    fs: int = 16000,
    length_s: float = 1.0,
    rt60_max_s: float = RT60_LIBRARY_MAX_S,
) -> list:
    """Synthesize RIRs, keeping only those with estimated RT60 below the cap.

    Writes one float32 WAV per accepted RIR plus an index.json with the room,
    seed, and estimated RT60 of each entry. Returns the index records.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    attempt = 0
    while len(records) < count:
        room_seed = seed * 1_000_003 + attempt
        attempt += 1
        rng = np.random.default_rng(room_seed)
        room = sample_room(rng)
        h = normalize_first_tap(image_method_rir(room, fs=fs, length_s=length_s))
        try:
            rt60 = estimate_rt60(h)
        except UndecayableError:
            continue
        if rt60 >= rt60_max_s:
            continue
        name = f"rir_{len(records):05d}.wav"
        write_wav(out_dir / name, h.taps, fmt="float32")
        records.append(
            {"file": name, "room": room.to_dict(), "seed": room_seed, "rt60_s": rt60}
        )
    with open(out_dir / "index.json", "w", encoding="utf-8") as fh:
        json.dump(records, fh, indent=1, sort_keys=True)
    return records


def load_rir_library(path) -> list:
    """Load a directory of RIR WAVs (with or without an index) as Rir objects."""
    path = Path(path)
    index_file = path / "index.json"
    rirs = []
    if index_file.exists():
        with open(index_file, encoding="utf-8") as fh:
            records = json.load(fh)
        for rec in records:
            buf = read_wav(path / rec["file"], target_rate_hz=None)
            rirs.append(Rir(buf, 0, rec.get("rt60_s")))
    else:
        for wav in sorted(path.glob("*.wav")):
            rirs.append(normalize_first_tap(Rir(read_wav(wav, target_rate_hz=None))))
    return rirs
