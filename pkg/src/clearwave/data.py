"""Dataset manifests, deterministic training-example synthesis, and the
semi-supervised clip-filtering pipeline (DRR and SNR gates).

Corpora are plain directories of WAV files described by a JSON-lines
manifest. The filter accepts a clip when its direct-to-reverberant ratio and
signal-to-noise ratio both clear their thresholds, estimated either from
ground-truth component files stored next to each clip (oracle) or from a
trained model's masks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from clearwave.audio import AudioBuffer, read_wav, write_wav
from clearwave.augment import (
    AugmentConfig,
    AugmentRecipe,
    apply_eq,
    apply_pitch,
    band_limit_recipe,
    degrade_recipe,
    level_and_mix_recipe,
    nonstationary_score,
)
from clearwave.dsp import StftConfig, istft_array, stft_array
from clearwave.reverb import Rir, ReverbMixParams, reverberant_mix

DB_CAP = 100.0


@dataclass(frozen=True)
class ManifestRecord:
    path: str
    duration_s: float
    tags: frozenset = field(default_factory=frozenset)
    split: str = "train"

    def to_json(self) -> str:
        return json.dumps(
            {
                "path": self.path,
                "duration_s": self.duration_s,
                "tags": sorted(self.tags),
                "split": self.split,
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, line: str) -> "ManifestRecord":
        d = json.loads(line)
        return cls(d["path"], d["duration_s"], frozenset(d.get("tags", [])), d.get("split", "train"))


@dataclass(frozen=True)
class Manifest:
    records: tuple

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        for rec in self.records:
            if rec.duration_s <= 0:
                raise ValueError(f"non-positive duration for {rec.path}")

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def filter_tags(self, include=None, exclude=None) -> "Manifest":
        keep = []
        include = frozenset(include) if include else None
        exclude = frozenset(exclude) if exclude else frozenset()
        for rec in self.records:
            if include is not None and not (rec.tags & include):
                continue
            if rec.tags & exclude:
                continue
            keep.append(rec)
        return Manifest(tuple(keep))

    def for_split(self, split: str) -> "Manifest":
        return Manifest(tuple(r for r in self.records if r.split == split))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(rec.to_json() + "\n")

    @classmethod
    def load(cls, path, check_paths: bool = True) -> "Manifest":
        records = []
        base = Path(path).parent
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = ManifestRecord.from_json(line)
                if check_paths and not (base / rec.path).exists():
                    raise FileNotFoundError(f"manifest entry missing on disk: {rec.path}")
                records.append(rec)
        return cls(tuple(records))


# ---------------------------------------------------------------------------
# Example synthesis
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SynthesizedExample:
    x: AudioBuffer
    label_fg: AudioBuffer
    label_bg: AudioBuffer
    skip: bool = False


def synthesize_example(
    fg_clip: AudioBuffer,
    bg_clip: AudioBuffer,
    rir: Rir | None,
    recipe: AugmentRecipe,
    cfg: AugmentConfig = AugmentConfig(),
    dereverb_mode: str = "no-dereverb",
) -> SynthesizedExample:
    """Full augmentation pipeline, deterministic given the recipe.

    Order: per-component EQ and pitch, reverberant mixing, leveling,
    band-limiting, then mixture degradations. label_fg + label_bg == x is
    maintained throughout. Passing rir=None mixes dry.
    """
    fg = apply_pitch(apply_eq(fg_clip, recipe.eq_fg), recipe.pitch_fg)
    bg = apply_pitch(apply_eq(bg_clip, recipe.eq_bg), recipe.pitch_bg)

    if rir is not None:
        mix_params = ReverbMixParams(recipe.alpha_db, recipe.beta_db)
        # the noise-reverb branch was already sampled into the recipe
        _, fg, bg, _ = _reverberant_mix_fixed(fg, bg, rir, mix_params, recipe.reverb_noise,
                                              dereverb_mode)
    leveled = level_and_mix_recipe(fg, bg, recipe, cfg)
    if leveled.skip:
        return SynthesizedExample(leveled.mix, leveled.fg, leveled.bg, skip=True)
    fg, bg = band_limit_recipe(leveled.fg, leveled.bg, recipe)
    x = AudioBuffer(fg.samples + bg.samples, fg.sample_rate_hz)
    x, fg, bg = degrade_recipe(x, fg, bg, recipe)
    return SynthesizedExample(x, fg, bg)


def _reverberant_mix_fixed(fg, bg, rir, mix_params, reverb_noise: bool, mode: str):
    """reverberant_mix with the noise-reverb branch pinned by the recipe."""

    class _FixedBranch:
        def __init__(self, value: bool):
            self._value = 0.0 if value else 1.0

        def random(self):
            return self._value

    return reverberant_mix(fg, bg, rir, mix_params, _FixedBranch(reverb_noise), mode)


# ---------------------------------------------------------------------------
# Component estimation (oracle and model)
# ---------------------------------------------------------------------------

ORACLE_SUFFIXES = {"speech": ".speech.wav", "noise": ".noise.wav", "reverb": ".reverb.wav"}


@dataclass(frozen=True)
class Estimator:
    """kind 'oracle' reads ground-truth component files stored next to each
    clip; kind 'model' applies a checkpoint's masks (2 outputs for
    speech/noise, 3 adds a reverb-only estimate). mask_fn allows injecting a
    custom mask provider with the model-kind interface."""

    kind: str
    checkpoint_path: str | None = None
    mask_fn: object = None
    n_output_masks: int = 2

    def __post_init__(self):
        if self.kind not in ("oracle", "model"):
            raise ValueError(f"unknown estimator kind {self.kind!r}")


@dataclass(frozen=True)
class ComponentEstimates:
    speech: AudioBuffer
    noise: AudioBuffer
    reverb: AudioBuffer | None = None


def oracle_components_for(clip_path) -> ComponentEstimates:
    clip_path = Path(clip_path)
    base = clip_path.with_suffix("")
    paths = {name: Path(str(base) + suffix) for name, suffix in ORACLE_SUFFIXES.items()}
    if not paths["speech"].exists() or not paths["noise"].exists():
        raise FileNotFoundError(f"missing ground-truth components for {clip_path}")
    reverb = read_wav(paths["reverb"]) if paths["reverb"].exists() else None
    return ComponentEstimates(
        speech=read_wav(paths["speech"]),
        noise=read_wav(paths["noise"]),
        reverb=reverb,
    )


def estimate_components(x_or_path, est: Estimator) -> ComponentEstimates:
    """Oracle kind returns stored ground truth; model kind masks and resynthesizes."""
    if est.kind == "oracle":
        if not isinstance(x_or_path, (str, Path)):
            raise ValueError("oracle estimator needs the clip path to locate ground truth")
        return oracle_components_for(x_or_path)
    x = x_or_path if isinstance(x_or_path, AudioBuffer) else read_wav(x_or_path)
    masks = _model_masks(x, est)
    cfg = StftConfig()
    padded = np.concatenate([x.samples, np.zeros(cfg.padded_length(len(x)) - len(x))])
    bins = stft_array(padded, cfg)
    comps = []
    for mask in masks:
        y = istft_array(mask * bins, cfg)[: len(x)]
        comps.append(AudioBuffer(y, x.sample_rate_hz))
    return ComponentEstimates(
        speech=comps[0],
        noise=comps[1] if len(comps) > 1 else None,
        reverb=comps[2] if len(comps) > 2 else None,
    )


def _model_masks(x: AudioBuffer, est: Estimator) -> list:
    cfg = StftConfig()
    padded = np.concatenate([x.samples, np.zeros(cfg.padded_length(len(x)) - len(x))])
    bins = stft_array(padded, cfg)
    if est.mask_fn is not None:
        return list(est.mask_fn(bins))
    if est.checkpoint_path is None:
        raise ValueError("model estimator needs a checkpoint or mask_fn")
    from clearwave.enhance import masks_for_bins

    return masks_for_bins(bins, est.checkpoint_path)


# ---------------------------------------------------------------------------
# DRR / SNR metrics and the two-gate filter
# ---------------------------------------------------------------------------


def _energy_ratio_db(num: np.ndarray, den: np.ndarray) -> float:
    e_num = float(np.sum(num * num))
    e_den = float(np.sum(den * den))
    if e_num == 0.0 and e_den == 0.0:
        raise ValueError("both signals silent")
    if e_den == 0.0:
        return DB_CAP
    return min(DB_CAP, 10.0 * np.log10(e_num / e_den))


def drr_db(direct: AudioBuffer, reverb: AudioBuffer) -> float:
    """Direct-to-reverberant energy ratio, capped at +100 dB."""
    if len(direct) != len(reverb):
        raise ValueError("length mismatch")
    return _energy_ratio_db(direct.samples, reverb.samples)


def snr_db(speech: AudioBuffer, noise: AudioBuffer) -> float:
    if len(speech) != len(noise):
        raise ValueError("length mismatch")
    return _energy_ratio_db(speech.samples, noise.samples)


@dataclass(frozen=True)
class FilterThresholds:
    drr_min_db: float = 30.0
    snr_min_db: float = 10.0


def gate_decision(drr: float | None, snr: float | None, th: FilterThresholds) -> bool:
    """Both gates must clear; comparisons accept at equality."""
    if drr is None or drr < th.drr_min_db:
        return False
    if snr is None or snr < th.snr_min_db:
        return False
    return True


@dataclass(frozen=True)
class FilterReportRow:
    path: str
    drr_db: float | None
    snr_db: float | None
    accepted: bool
    output_path: str | None
    error: str | None = None


def filter_corpus(
    manifest: Manifest,
    est: Estimator,
    th: FilterThresholds,
    manifest_dir,
    out_dir,
    est_snr: Estimator | None = None,
) -> tuple:
    """Two-stage gate: reject DRR < threshold, then reject SNR < threshold.

    DRR uses est's reverb-only estimate (third model output or the oracle's
    reverb file); the SNR gate and the written speech estimates come from
    est_snr when given (the two-model setup), otherwise from est. SNR is not
    evaluated for clips that already failed DRR. Accepted clips are written
    out as speech estimates. Returns (accepted Manifest, report rows).
    """
    manifest_dir = Path(manifest_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    accepted = []

    def components(estimator, clip_path):
        return estimate_components(
            clip_path if estimator.kind == "oracle" else read_wav(clip_path), estimator
        )

    for rec in manifest:
        clip_path = manifest_dir / rec.path
        try:
            comps = components(est, clip_path)
            if comps.reverb is None:
                raise ValueError("estimator provides no reverb estimate for the DRR gate")
            drr = drr_db(comps.speech, comps.reverb)
            if drr < th.drr_min_db:
                rows.append(FilterReportRow(rec.path, drr, None, False, None))
                continue
            if est_snr is not None:
                comps = components(est_snr, clip_path)
            snr = snr_db(comps.speech, comps.noise)
        except (ValueError, OSError, FileNotFoundError) as exc:
            rows.append(FilterReportRow(rec.path, None, None, False, None, error=str(exc)))
            continue
        ok = gate_decision(drr, snr, th)
        out_path = None
        if ok:
            out_path = f"enhanced_{Path(rec.path).stem}.wav"
            write_wav(out_dir / out_path, comps.speech, fmt="float32")
            accepted.append(
                ManifestRecord(out_path, rec.duration_s, rec.tags, rec.split)
            )
        rows.append(FilterReportRow(rec.path, drr, snr, ok, out_path))
    return Manifest(tuple(accepted)), rows


def write_filter_report(rows, path) -> None:
    """One delimited line per clip: path, drr_db, snr_db, decision, output."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("path\tdrr_db\tsnr_db\taccepted\toutput_path\terror\n")
        for row in rows:
            fh.write(
                "\t".join(
                    [
                        row.path,
                        "" if row.drr_db is None else f"{row.drr_db:.6f}",
                        "" if row.snr_db is None else f"{row.snr_db:.6f}",
                        "1" if row.accepted else "0",
                        row.output_path or "",
                        row.error or "",
                    ]
                )
                + "\n"
            )


# ---------------------------------------------------------------------------
# Chunk sampling with nonstationary upsampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ChunkRef:
    path: str
    offset: int
    weight: float


def index_chunks(
    manifest: Manifest,
    manifest_dir,
    chunk_s: float = 1.0,
    cfg: AugmentConfig = AugmentConfig(),
) -> list:
    """Enumerate non-overlapping chunks and weight the nonstationary ones."""
    manifest_dir = Path(manifest_dir)
    chunks = []
    for rec in manifest:
        buf = read_wav(manifest_dir / rec.path)
        n = int(round(chunk_s * buf.sample_rate_hz))
        for start in range(0, len(buf) - n + 1, n):
            piece = AudioBuffer(buf.samples[start : start + n], buf.sample_rate_hz)
            _, flagged = nonstationary_score(piece, cfg)
            chunks.append(
                ChunkRef(rec.path, start, cfg.nonstationary_weight if flagged else 1.0)
            )
    return chunks


def chunk_sampler(chunks: list, rng: np.random.Generator):
    """Infinite weighted stream of (path, offset); deterministic given rng."""
    if not chunks:
        raise ValueError("empty chunk index")
    weights = np.array([c.weight for c in chunks], dtype=np.float64)
    probs = weights / weights.sum()
    while True:
        i = int(rng.choice(len(chunks), p=probs))
        yield chunks[i].path, chunks[i].offset
