"""Stochastic augmentation stack for speech/noise pairs.

Every random choice for one datapoint is sampled up front into an
AugmentRecipe; applying a recipe is a pure function, so any datapoint can be
reproduced bitwise from (inputs, recipe). Probability branches draw from a
dedicated named RNG stream, so changing the range of one parameter never
flips an unrelated branch for the same seed.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from clearwave.audio import AudioBuffer, rms_dbfs, normalize_rms, SILENCE_FLOOR_DBFS
from clearwave.dsp import (
    biquad_apply,
    butter_lowpass,
    design_high_shelf,
    design_low_shelf,
    design_peaking,
    resample,
)


def named_rng(seed: int, label: str) -> np.random.Generator:
    """Independent, reproducible generator for (seed, stream label)."""
    digest = hashlib.blake2s(label.encode("utf-8"), digest_size=8).digest()
    return np.random.default_rng(
        np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int.from_bytes(digest, "little")])
    )


@dataclass(frozen=True)
class AugmentConfig:
    eq_freq_range_hz: tuple = (40.0, 8000.0)  # log-uniform
    eq_gain_db: float = 10.0  # shelf/bell gains drawn in +/- this
    bell_q: tuple = (0.5, 1.5)
    pitch_ratio: tuple = (0.9, 1.1)
    clip_fraction: tuple = (0.5, 1.0)
    clip_prob: float = 0.10
    empty_buffer_s: tuple = (0.5, 1.0)
    empty_buffer_prob: float = 0.10
    fg_skip_rms_dbfs: float = -38.0
    norm_rms_dbfs: float = -20.0
    bg_gain_db: tuple = (-30.0, 0.0)
    final_gain_db: tuple = (-25.0, 5.0)
    silence_fg_prob: float = 0.03
    bandlimit_hz: tuple = (4000.0, 7000.0)
    bandlimit_prob_bg: float = 0.025
    bandlimit_prob_fg: float = 0.025
    bandlimit_prob_both: float = 0.05
    rir_tail_gain_db: tuple = (-25.0, 0.0)
    reverb_noise_prob: float = 0.6
    nonstationary_window_s: float = 0.050
    nonstationary_std_db: float = 3.0
    nonstationary_weight: float = 3.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AugmentConfig":
        d = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        return cls(**d)


@dataclass(frozen=True)
class EqParams:
    low_shelf_hz: float
    low_shelf_db: float
    high_shelf_hz: float
    high_shelf_db: float
    bell1_hz: float
    bell1_db: float
    bell1_q: float
    bell2_hz: float
    bell2_db: float
    bell2_q: float


@dataclass(frozen=True)
class AugmentRecipe:
    """Fully sampled parameters for one datapoint; replay is bitwise."""

    seed: int
    eq_fg: EqParams
    eq_bg: EqParams
    pitch_fg: float
    pitch_bg: float
    alpha_db: float
    beta_db: float
    reverb_noise: bool
    silence_fg: bool
    bg_gain_db: float
    final_gain_db: float
    bandlimit_mode: str  # none|fg|bg|both
    bandlimit_hz: float
    clip: bool
    clip_fraction: float
    empty_buffer: bool
    empty_buffer_s: float

    def to_json(self) -> str:
        d = asdict(self)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "AugmentRecipe":
        d = json.loads(text)
        d["eq_fg"] = EqParams(**d["eq_fg"])
        d["eq_bg"] = EqParams(**d["eq_bg"])
        return cls(**d)


def _sample_eq(rng: np.random.Generator, cfg: AugmentConfig) -> EqParams:
    lo, hi = np.log(cfg.eq_freq_range_hz[0]), np.log(cfg.eq_freq_range_hz[1])

    def freq():
        return float(np.exp(rng.uniform(lo, hi)))

    g = cfg.eq_gain_db
    return EqParams(
        low_shelf_hz=freq(),
        low_shelf_db=float(rng.uniform(-g, g)),
        high_shelf_hz=freq(),
        high_shelf_db=float(rng.uniform(-g, g)),
        bell1_hz=freq(),
        bell1_db=float(rng.uniform(-g, g)),
        bell1_q=float(rng.uniform(*cfg.bell_q)),
        bell2_hz=freq(),
        bell2_db=float(rng.uniform(-g, g)),
        bell2_q=float(rng.uniform(*cfg.bell_q)),
    )


def sample_recipe(cfg: AugmentConfig, seed: int) -> AugmentRecipe:
    """Draw every augmentation parameter for one datapoint.

    Branch outcomes (clip? empty? band-limit arm? noise reverb? silent
    foreground?) come from the 'branches' stream in a fixed order.
    """
    branches = named_rng(seed, "branches")
    u_noise_reverb = branches.random()
    u_silence = branches.random()
    u_band = branches.random()
    u_clip = branches.random()
    u_empty = branches.random()

    if u_band < cfg.bandlimit_prob_bg:
        band_mode = "bg"
    elif u_band < cfg.bandlimit_prob_bg + cfg.bandlimit_prob_fg:
        band_mode = "fg"
    elif u_band < cfg.bandlimit_prob_bg + cfg.bandlimit_prob_fg + cfg.bandlimit_prob_both:
        band_mode = "both"
    else:
        band_mode = "none"

    levels = named_rng(seed, "levels")
    gains = named_rng(seed, "reverb_gains")
    degrade_rng = named_rng(seed, "degrade")
    pitch_rng = named_rng(seed, "pitch")
    band_rng = named_rng(seed, "bandlimit")
    return AugmentRecipe(
        seed=int(seed),
        eq_fg=_sample_eq(named_rng(seed, "eq_fg"), cfg),
        eq_bg=_sample_eq(named_rng(seed, "eq_bg"), cfg),
        pitch_fg=float(pitch_rng.uniform(*cfg.pitch_ratio)),
        pitch_bg=float(pitch_rng.uniform(*cfg.pitch_ratio)),
        alpha_db=float(gains.uniform(*cfg.rir_tail_gain_db)),
        beta_db=float(gains.uniform(*cfg.rir_tail_gain_db)),
        reverb_noise=bool(u_noise_reverb < cfg.reverb_noise_prob),
        silence_fg=bool(u_silence < cfg.silence_fg_prob),
        bg_gain_db=float(levels.uniform(*cfg.bg_gain_db)),
        final_gain_db=float(levels.uniform(*cfg.final_gain_db)),
        bandlimit_mode=band_mode,
        bandlimit_hz=float(band_rng.uniform(*cfg.bandlimit_hz)),
        clip=bool(u_clip < cfg.clip_prob),
        clip_fraction=float(degrade_rng.uniform(*cfg.clip_fraction)),
        empty_buffer=bool(u_empty < cfg.empty_buffer_prob),
        empty_buffer_s=float(degrade_rng.uniform(*cfg.empty_buffer_s)),
    )


# ---------------------------------------------------------------------------
# Deterministic application of sampled parameters
# ---------------------------------------------------------------------------


def apply_eq(x: AudioBuffer, p: EqParams) -> AudioBuffer:
    fs = x.sample_rate_hz
    out = biquad_apply(x, design_low_shelf(p.low_shelf_hz, p.low_shelf_db, fs))
    out = biquad_apply(out, design_high_shelf(p.high_shelf_hz, p.high_shelf_db, fs))
    out = biquad_apply(out, design_peaking(p.bell1_hz, p.bell1_db, p.bell1_q, fs))
    out = biquad_apply(out, design_peaking(p.bell2_hz, p.bell2_db, p.bell2_q, fs))
    return out


def apply_pitch(x: AudioBuffer, ratio: float) -> AudioBuffer:
    """Resample by the ratio, then trim or zero-pad back to the input length."""
    y = resample(x, ratio).samples
    n = len(x)
    if y.size >= n:
        y = y[:n]
    else:
        y = np.concatenate([y, np.zeros(n - y.size)])
    return x.replace_samples(y)


def hard_clip(x: AudioBuffer, fraction_of_peak: float) -> AudioBuffer:
    peak = float(np.max(np.abs(x.samples))) if len(x) else 0.0
    if peak == 0.0:
        return x
    limit = fraction_of_peak * peak
    return x.replace_samples(np.clip(x.samples, -limit, limit))


def zero_head(x: AudioBuffer, seconds: float) -> AudioBuffer:
    n = min(len(x), int(round(seconds * x.sample_rate_hz)))
    out = x.samples.copy()
    out[:n] = 0.0
    return x.replace_samples(out)


@dataclass(frozen=True)
class LevelMixResult:
    mix: AudioBuffer
    fg: AudioBuffer
    bg: AudioBuffer
    skip: bool = False


def level_and_mix_recipe(fg: AudioBuffer, bg: AudioBuffer, recipe: AugmentRecipe,
                         cfg: AugmentConfig) -> LevelMixResult:
    """Level pipeline, in order: skip quiet foregrounds, normalize each
    component to the reference RMS, turn the background down, renormalize the
    mix, then apply a final overall gain. The same gains hit the mix and both
    labels, so mix == fg + bg at every stage.
    """
    if len(fg) != len(bg):
        raise ValueError("foreground/background length mismatch")
    fg_samples = fg.samples
    bg_samples = bg.samples
    if recipe.silence_fg:
        fg_samples = np.zeros_like(fg_samples)
    elif rms_dbfs(fg) < cfg.fg_skip_rms_dbfs:
        return LevelMixResult(fg, fg, bg, skip=True)

    fg_level = rms_dbfs(fg_samples)
    bg_level = rms_dbfs(bg_samples)
    if fg_level <= SILENCE_FLOOR_DBFS and bg_level <= SILENCE_FLOOR_DBFS:
        return LevelMixResult(fg, fg, bg, skip=True)
    if fg_level > SILENCE_FLOOR_DBFS:
        fg_samples = fg_samples * 10.0 ** ((cfg.norm_rms_dbfs - fg_level) / 20.0)
    if bg_level > SILENCE_FLOOR_DBFS:
        bg_samples = bg_samples * 10.0 ** ((cfg.norm_rms_dbfs - bg_level) / 20.0)

    bg_samples = bg_samples * 10.0 ** (recipe.bg_gain_db / 20.0)
    mix = fg_samples + bg_samples
    mix_level = rms_dbfs(mix)
    if mix_level > SILENCE_FLOOR_DBFS:
        g = 10.0 ** ((cfg.norm_rms_dbfs - mix_level) / 20.0)
    else:
        g = 1.0
    g *= 10.0 ** (recipe.final_gain_db / 20.0)
    rate = fg.sample_rate_hz
    return LevelMixResult(
        AudioBuffer(mix * g, rate),
        AudioBuffer(fg_samples * g, rate),
        AudioBuffer(bg_samples * g, rate),
    )


def band_limit_recipe(fg: AudioBuffer, bg: AudioBuffer, recipe: AugmentRecipe):
    """Low-pass one or both components per the sampled branch; the filtered
    foreground is also the training target (it stays band-limited)."""
    if recipe.bandlimit_mode in ("fg", "both"):
        fg = butter_lowpass(fg, recipe.bandlimit_hz)
    if recipe.bandlimit_mode in ("bg", "both"):
        bg = butter_lowpass(bg, recipe.bandlimit_hz)
    return fg, bg


def degrade_recipe(x: AudioBuffer, label_fg: AudioBuffer, label_bg: AudioBuffer,
                   recipe: AugmentRecipe):
    """Mixture-input degradations: hard clipping and empty-buffer zeroing.

    Clip residue is attributed to the background label; the zeroed head is
    zeroed in the labels as well. Both keep label_fg + label_bg == x.
    """
    if recipe.clip:
        x = hard_clip(x, recipe.clip_fraction)
        label_bg = AudioBuffer(x.samples - label_fg.samples, x.sample_rate_hz)
    if recipe.empty_buffer:
        x = zero_head(x, recipe.empty_buffer_s)
        label_fg = zero_head(label_fg, recipe.empty_buffer_s)
        label_bg = zero_head(label_bg, recipe.empty_buffer_s)
    return x, label_fg, label_bg


# ---------------------------------------------------------------------------
# rng-driven convenience wrappers (sample + apply in one call)
# ---------------------------------------------------------------------------


def random_eq(x: AudioBuffer, rng: np.random.Generator,
              cfg: AugmentConfig = AugmentConfig()) -> AudioBuffer:
    return apply_eq(x, _sample_eq(rng, cfg))


def pitch_shift(x: AudioBuffer, rng: np.random.Generator,
                cfg: AugmentConfig = AugmentConfig()) -> AudioBuffer:
    return apply_pitch(x, float(rng.uniform(*cfg.pitch_ratio)))


def degrade(x: AudioBuffer, rng: np.random.Generator,
            cfg: AugmentConfig = AugmentConfig()) -> AudioBuffer:
    if rng.random() < cfg.clip_prob:
        x = hard_clip(x, float(rng.uniform(*cfg.clip_fraction)))
    if rng.random() < cfg.empty_buffer_prob:
        x = zero_head(x, float(rng.uniform(*cfg.empty_buffer_s)))
    return x


def level_and_mix(fg: AudioBuffer, bg: AudioBuffer, rng: np.random.Generator,
                  cfg: AugmentConfig = AugmentConfig()) -> LevelMixResult:
    recipe = sample_recipe(cfg, int(rng.integers(0, 2**63 - 1)))
    return level_and_mix_recipe(fg, bg, recipe, cfg)


def band_limit(fg: AudioBuffer, bg: AudioBuffer, rng: np.random.Generator,
               cfg: AugmentConfig = AugmentConfig()):
    recipe = sample_recipe(cfg, int(rng.integers(0, 2**63 - 1)))
    return band_limit_recipe(fg, bg, recipe)


# ---------------------------------------------------------------------------
# Nonstationary-noise scoring
# ---------------------------------------------------------------------------


def nonstationary_score(chunk: AudioBuffer, cfg: AugmentConfig = AugmentConfig()):
    """Std of per-window energy in dB over non-overlapping 50 ms windows.

    Returns (std_db, is_nonstationary). Chunks flagged nonstationary get
    sampling weight cfg.nonstationary_weight during training, others 1.
    """
    win = int(round(cfg.nonstationary_window_s * chunk.sample_rate_hz))
    n_win = len(chunk) // win
    if n_win < 2:
        raise ValueError("chunk shorter than two analysis windows")
    x = chunk.samples[: n_win * win].reshape(n_win, win)
    energy = np.mean(x * x, axis=1)
    if np.all(energy == 0.0):
        return 0.0, False
    energy_db = 10.0 * np.log10(np.maximum(energy, 1e-20))
    std_db = float(np.std(energy_db))
    return std_db, bool(std_db >= cfg.nonstationary_std_db)
