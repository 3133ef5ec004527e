"""ADAM training loop, learning-rate schedule, gradient checking, and the
deterministic data sources that feed them.

Training state is (params, optimizer moments, step); data is keyed by step
index through stateless sources, so resuming from a checkpoint continues
bitwise-identically to an uninterrupted single-worker run.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from clearwave.audio import AudioBuffer, rms_dbfs
from clearwave.augment import named_rng
from clearwave.config import TrainConfig
from clearwave.corpus import noise_like, speech_like
from clearwave.dsp import StftConfig, stft_array
from clearwave.losses import LossWeights, combined_loss_and_mask_grad
from clearwave.net.checkpoint import load_checkpoint, save_checkpoint
from clearwave.net.model import NetConfig, UNet, is_learnable, net_input_from_bins


class NonFiniteGradientError(RuntimeError):
    pass


class NonFiniteLossError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


@dataclass
class OptimizerState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict) -> "OptimizerState":
        m = {k: np.zeros_like(p) for k, p in params.items() if is_learnable(k)}
        v = {k: np.zeros_like(p) for k, p in params.items() if is_learnable(k)}
        return cls(m=m, v=v)

    def to_arrays(self) -> dict:
        out = {f"m.{k}": a for k, a in self.m.items()}
        out.update({f"v.{k}": a for k, a in self.v.items()})
        out["step"] = np.array([self.step], dtype=np.float32)
        return out

    @classmethod
    def from_arrays(cls, arrays: dict) -> "OptimizerState":
        m = {k[2:]: a for k, a in arrays.items() if k.startswith("m.")}
        v = {k[2:]: a for k, a in arrays.items() if k.startswith("v.")}
        step = int(arrays["step"][0]) if "step" in arrays else 0
        return cls(m=m, v=v, step=step)


def adam_step(params: dict, grads: dict, state: OptimizerState, lr_now: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """Standard ADAM with bias correction; returns (new params, new state).

    Only learnable entries are updated; batch-norm running statistics pass
    through untouched. Raises NonFiniteGradientError naming the first
    parameter with a NaN/Inf gradient.
    """
    new_params = dict(params)
    new_m, new_v = {}, {}
    t = state.step + 1
    corr1 = 1.0 - beta1**t
    corr2 = 1.0 - beta2**t
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for parameter {name!r}")
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * (g * g)
        update = (lr_now / corr1) * m / (np.sqrt(v / corr2) + eps)
        new_params[name] = params[name] - update.astype(params[name].dtype, copy=False)
        new_m[name], new_v[name] = m, v
    return new_params, OptimizerState(m=new_m, v=new_v, step=t)


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Base rate halved every lr_halve_every steps: lr * 0.5^(step // halve)."""
    if step < 0:
        raise ValueError("step must be >= 0")
    return cfg.lr * 0.5 ** (step // cfg.lr_halve_every)


# ---------------------------------------------------------------------------
# Data sources
# ---------------------------------------------------------------------------


class FixedExampleSource:
    """Cycles a fixed list of (x, label_fg, label_bg) buffers."""

    def __init__(self, examples):
        if not examples:
            raise ValueError("no examples")
        self.examples = list(examples)

    def __len__(self):
        return len(self.examples)

    def example(self, index: int):
        return self.examples[index % len(self.examples)]


class MixtureSource:
    """On-the-fly speech-like + noise mixtures at a target SNR range.

    Deterministic per (seed, index): the foreground is normalized to the
    reference level and the background scaled for an SNR drawn uniformly
    from snr_range_db.
    """

    def __init__(self, seed: int = 0, chunk_s: float = 0.5,
                 snr_range_db: tuple = (0.0, 10.0), fs: int = 16000,
                 norm_dbfs: float = -20.0):
        self.seed = seed
        self.chunk_s = chunk_s
        self.snr_range_db = snr_range_db
        self.fs = fs
        self.norm_dbfs = norm_dbfs
        self.cfg = StftConfig()

    def example(self, index: int):
        rng = named_rng(self.seed, f"mixture.{index}")
        n = self.cfg.padded_length(int(round(self.chunk_s * self.fs)))
        fg = speech_like(n / self.fs, int(rng.integers(2**31)), self.fs).samples[:n]
        bg = noise_like(n / self.fs, int(rng.integers(2**31)), self.fs).samples[:n]
        fg = fg * 10.0 ** ((self.norm_dbfs - rms_dbfs(fg)) / 20.0)
        snr = rng.uniform(*self.snr_range_db)
        bg_level = rms_dbfs(bg)
        bg = bg * 10.0 ** ((self.norm_dbfs - snr - bg_level) / 20.0)
        x = fg + bg
        rate = self.fs
        return (AudioBuffer(x, rate), AudioBuffer(fg, rate), AudioBuffer(bg, rate))


class SynthesisSource:
    """Full augmentation pipeline over clip corpora, keyed by example index."""

    def __init__(self, fg_clips, bg_clips, rirs, augment_cfg, seed: int = 0,
                 chunk_s: float = 1.0, reverb_prob: float = 0.5,
                 dereverb_mode: str = "no-dereverb", fs: int = 16000):
        from clearwave.augment import AugmentConfig

        self.fg_clips = list(fg_clips)
        self.bg_clips = list(bg_clips)
        self.rirs = list(rirs)
        self.augment_cfg = augment_cfg or AugmentConfig()
        self.seed = seed
        self.chunk_s = chunk_s
        self.reverb_prob = reverb_prob
        self.dereverb_mode = dereverb_mode
        self.fs = fs
        self.cfg = StftConfig()

    def _chunk(self, clips, rng) -> AudioBuffer:
        n = self.cfg.padded_length(int(round(self.chunk_s * self.fs)))
        buf = clips[int(rng.integers(len(clips)))]
        if len(buf) <= n:
            samples = np.concatenate([buf.samples, np.zeros(n - len(buf))])
        else:
            start = int(rng.integers(0, len(buf) - n))
            samples = buf.samples[start : start + n]
        return AudioBuffer(samples, self.fs)

    def example(self, index: int):
        from clearwave.augment import sample_recipe
        from clearwave.data import synthesize_example

        for attempt in range(16):
            rng = named_rng(self.seed, f"synth.{index}.{attempt}")
            fg = self._chunk(self.fg_clips, rng)
            bg = self._chunk(self.bg_clips, rng)
            rir = None
            if self.rirs and rng.random() < self.reverb_prob:
                rir = self.rirs[int(rng.integers(len(self.rirs)))]
            recipe = sample_recipe(self.augment_cfg, int(rng.integers(2**60)))
            made = synthesize_example(fg, bg, rir, recipe, self.augment_cfg,
                                      self.dereverb_mode)
            if not made.skip:
                return made.x, made.label_fg, made.label_bg
        raise RuntimeError(f"no usable datapoint for index {index} after 16 attempts")


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainResult:
    steps: int
    initial_loss: float
    final_loss: float
    checkpoint_path: str
    log_path: str
    aborted: bool = False


def _batch_arrays(net: UNet, source, indices, cfg: StftConfig, k: int):
    fgs, bgs, bins = [], [], []
    for i in indices:
        x, fg, bg = source.example(i)
        bins.append(stft_array(x.samples.astype(np.float32), cfg))
        fgs.append(fg.samples.astype(np.float32))
        bgs.append(bg.samples.astype(np.float32))
    inputs = np.stack([net_input_from_bins(b, k) for b in bins])
    return inputs.astype(np.float32), bins, fgs, bgs


def batch_loss_and_cotangent(net: UNet, out: np.ndarray, bins, fgs, bgs,
                             weights: LossWeights, cfg: StftConfig):
    bsz = out.shape[0]
    n_masks = net.cfg.n_output_masks
    dout = np.zeros_like(out)
    total = 0.0
    fg_total = 0.0
    bg_total = 0.0
    for b in range(bsz):
        masks = [out[b, ..., 2 * m] + 1j * out[b, ..., 2 * m + 1] for m in range(n_masks)]
        targets = [fgs[b], bgs[b]][:n_masks]
        loss, mask_grads, details = combined_loss_and_mask_grad(
            masks, bins[b], targets, weights, cfg
        )
        total += loss / bsz
        fg_total += details.get("mask0", 0.0) / bsz
        bg_total += details.get("mask1", 0.0) / bsz
        for m, g in enumerate(mask_grads):
            dout[b, ..., 2 * m] = g.real / bsz
            dout[b, ..., 2 * m + 1] = g.imag / bsz
    return total, fg_total, bg_total, dout


def evaluate_loss(net: UNet, params: dict, source, indices, weights: LossWeights,
                  cfg: StftConfig = StftConfig()) -> float:
    """Eval-mode combined loss over a fixed set of examples."""
    inputs, bins, fgs, bgs = _batch_arrays(net, source, indices, cfg, net.cfg.embedding_k)
    out, cache = net.forward(inputs, params, train=False)
    cache["consumed"] = True
    total, _, _, _ = batch_loss_and_cotangent(net, out, bins, fgs, bgs, weights, cfg)
    return total


def grad_norm(grads: dict) -> float:
    return float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values())))


def train(
    net_cfg: NetConfig,
    source,
    tcfg: TrainConfig,
    out_dir,
    weights: LossWeights = LossWeights(),
    resume_from=None,
    val_fn=None,
) -> TrainResult:
    """Synthesize-forward-backward-update loop with periodic checkpoints.

    Aborts on a non-finite loss, keeping the last good checkpoint. val_fn,
    when given, is called as val_fn(params, step) at every checkpoint and its
    result is logged.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "train_log.jsonl"
    ckpt_path = out_dir / "checkpoint.bin"
    stft_cfg = StftConfig()
    net = UNet(net_cfg)

    if resume_from is not None:
        loaded_cfg, params, start_step, opt_arrays = load_checkpoint(resume_from)
        if loaded_cfg != net_cfg:
            raise ValueError("checkpoint config does not match the requested net config")
        opt = OptimizerState.from_arrays(opt_arrays)
        log_mode = "a"
    else:
        params = net.init_params(tcfg.seed, dtype=np.float32)
        opt = OptimizerState.zeros_like(params)
        start_step = 0
        log_mode = "w"

    initial_loss = evaluate_loss(
        net, params, source, range(min(8, tcfg.batch_size * 2)), weights, stft_cfg
    )
    aborted = False
    t_start = time.perf_counter()
    with open(log_path, log_mode, encoding="utf-8") as log:
        for step in range(start_step, tcfg.total_steps):
            indices = [step * tcfg.batch_size + j for j in range(tcfg.batch_size)]
            inputs, bins, fgs, bgs = _batch_arrays(net, source, indices, stft_cfg,
                                                   net_cfg.embedding_k)
            out, cache = net.forward(inputs, params, train=True)
            loss, fg_loss, bg_loss, dout = batch_loss_and_cotangent(
                net, out, bins, fgs, bgs, weights, stft_cfg
            )
            if not np.isfinite(loss):
                aborted = True
                break
            grads, _ = net.backward(dout, params, cache)
            params, opt = adam_step(
                params, grads, opt, lr_at(step, tcfg),
                tcfg.adam_beta1, tcfg.adam_beta2, tcfg.adam_eps,
            )
            params.update(cache["running"])
            record = {
                "step": step,
                "loss": round(float(loss), 8),
                "fg_loss": round(float(fg_loss), 8),
                "bg_loss": round(float(bg_loss), 8),
                "grad_norm": round(grad_norm(grads), 8),
                "lr": lr_at(step, tcfg),
                "elapsed_s": round(time.perf_counter() - t_start, 3),
            }
            last = step == tcfg.total_steps - 1
            if step % tcfg.checkpoint_every == 0 or last:
                save_checkpoint(ckpt_path, net_cfg, params, step + 1, opt.to_arrays())
                if val_fn is not None:
                    record["val"] = val_fn(params, step)
            log.write(json.dumps(record) + "\n")
    final_loss = evaluate_loss(
        net, params, source, range(min(8, tcfg.batch_size * 2)), weights, stft_cfg
    )
    if not aborted:
        save_checkpoint(ckpt_path, net_cfg, params, tcfg.total_steps, opt.to_arrays())
    return TrainResult(
        steps=tcfg.total_steps if not aborted else step,
        initial_loss=initial_loss,
        final_loss=final_loss,
        checkpoint_path=str(ckpt_path),
        log_path=str(log_path),
        aborted=aborted,
    )


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

GRAD_CHECK_STEP = 1e-4
GRAD_CHECK_TOL = 1e-4


def _relu_signature(cache) -> list:
    return [entry[4] for entry in cache["tape"] if entry[0] == "cbr"]


def grad_check(
    net_cfg: NetConfig | None = None,
    seed: int = 0,
    frames: int = 8,
    freq_bins: int = 17,
    probes_per_group: int = 3,
    corrupt_param: str | None = None,
) -> dict:
    """Central finite differences vs the analytic backward pass, double
    precision, for every learnable parameter group and the input.

    Probes whose +/- evaluations land on different sides of a ReLU kink are
    resampled (the loss is not differentiable there). corrupt_param is a test
    hook that doubles one group's analytic gradient so the harness can be
    shown to catch faults. Returns {"groups": {name: max_rel_err},
    "input": err, "max_rel_err": float, "passed": bool}.
    """
    cfg = net_cfg or NetConfig()
    net = UNet(cfg)
    rng = np.random.default_rng(np.random.SeedSequence([0x96AD, seed]))
    params = net.init_params(seed, dtype=np.float64)
    for name in params:
        if name.endswith(".gain"):
            params[name] = np.array([0.3 + 0.1 * rng.random()])
    x = rng.normal(size=(2, frames, freq_bins, 2 + cfg.embedding_k))
    direction = rng.normal(size=(2, frames, freq_bins, 2 * cfg.n_output_masks))

    def loss_and_masks(p, xx):
        out, cache = net.forward(xx, p, train=True)
        cache["consumed"] = True
        return float(np.sum(out * direction)), _relu_signature(cache)

    out, cache = net.forward(x, params, train=True)
    base_loss = float(np.sum(out * direction))
    grads, dx = net.backward(direction.copy(), params, cache)
    if corrupt_param is not None:
        grads[corrupt_param] = grads[corrupt_param] * 2.0

    h = GRAD_CHECK_STEP

    def probe(get_loss, analytic, arr, idx):
        a = arr[idx]
        arr[idx] = a + h
        lp, sig_p = get_loss()
        arr[idx] = a - h
        lm, sig_m = get_loss()
        arr[idx] = a
        crossed = any(not np.array_equal(p, m) for p, m in zip(sig_p, sig_m))
        if crossed:
            return None
        fd = (lp - lm) / (2 * h)
        an = analytic[idx]
        denom = max(abs(fd), abs(an))
        if denom < 1e-7:
            return 0.0
        return abs(fd - an) / denom

    report = {}
    for name, arr in params.items():
        if not is_learnable(name):
            continue
        work = arr.copy()
        params_view = dict(params)
        params_view[name] = work
        errs = []
        tries = 0
        flat = rng.permutation(arr.size)
        want = min(probes_per_group, arr.size)
        for fi in flat:
            if len(errs) >= want or tries > 4 * want:
                break
            tries += 1
            idx = np.unravel_index(fi, arr.shape)
            err = probe(lambda: loss_and_masks(params_view, x), grads[name], work, idx)
            if err is not None:
                errs.append(err)
        report[name] = max(errs) if errs else 0.0

    input_errs = []
    xi = x.copy()
    for fi in rng.permutation(x.size)[: 4 * probes_per_group]:
        if len(input_errs) >= probes_per_group:
            break
        idx = np.unravel_index(fi, x.shape)
        err = probe(lambda: loss_and_masks(params, xi), dx, xi, idx)
        if err is not None:
            input_errs.append(err)
    input_err = max(input_errs) if input_errs else 0.0

    max_err = max(max(report.values()), input_err)
    return {
        "groups": report,
        "input": input_err,
        "max_rel_err": max_err,
        "passed": bool(max_err <= GRAD_CHECK_TOL),
        "base_loss": base_loss,
        "seed": seed,
    }
