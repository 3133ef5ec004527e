"""Low-latency chunked inference.

Input arrives in 640-sample (40 ms) chunks. Each push re-evaluates the model
on the last 16384 samples of a zero-initialized rolling buffer and emits the
second-to-last chunk-sized region of that evaluation: the freshly pushed
chunk provides one chunk of look-ahead for the chunk before it, so output
lags input by exactly one chunk. Consecutive evaluations overlap, and the
emitted region is crossfaded from the previous evaluation's estimate into
the newer, better-informed one to suppress boundary artifacts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import time

import numpy as np

from clearwave.audio import AudioBuffer
from clearwave.dsp import StftConfig
from clearwave.enhance import enhance_array

BUFFER_LEN = 16384
CHUNK_SIZE = 640


class StreamFlushedError(RuntimeError):
    pass


@dataclass
class StreamState:
    chunk_size: int = CHUNK_SIZE
    buffer_len: int = BUFFER_LEN
    crossfade_len: int | None = None  # defaults to one full chunk
    crossfade: bool = True
    mask_index: int = 0
    buffer: np.ndarray = None
    pending: np.ndarray = None  # previous evaluation's estimate of the newest chunk
    frames_emitted: int = 0
    pushes: int = 0
    input_samples: int = 0
    flushed: bool = False

    def __post_init__(self):
        if self.crossfade_len is None:
            self.crossfade_len = self.chunk_size
        if self.buffer is None:
            self.buffer = np.zeros(self.buffer_len)
        if 2 * self.chunk_size > self.buffer_len:
            raise ValueError("buffer must hold at least two chunks")
        if not 0 < self.crossfade_len <= self.chunk_size:
            raise ValueError("crossfade length must be in (0, chunk_size]")


def crossfade_merge(prev_tail: np.ndarray, new_head: np.ndarray, length: int) -> np.ndarray:
    """Linear blend out[i] = (1 - i/len)*prev[i] + (i/len)*new[i]."""
    if prev_tail.shape != new_head.shape or prev_tail.size != length:
        raise ValueError("crossfade inputs must both have the given length")
    ramp = np.arange(length) / length
    return (1.0 - ramp) * prev_tail + ramp * new_head


def push_chunk(state: StreamState, chunk: np.ndarray, provider,
               cfg: StftConfig = StftConfig(), final: bool = False):
    """Append one chunk, re-evaluate the buffer, emit the look-ahead-delayed
    chunk (None on the first push while the look-ahead fills)."""
    if state.flushed:
        raise StreamFlushedError("stream already flushed")
    chunk = np.asarray(chunk, dtype=np.float64)
    n = state.chunk_size
    true_size = chunk.size
    if chunk.size != n:
        if not final or chunk.size > n:
            raise ValueError(f"chunk must be exactly {n} samples, got {chunk.size}")
        chunk = np.concatenate([chunk, np.zeros(n - chunk.size)])
    state.input_samples += true_size
    state.buffer = np.concatenate([state.buffer[n:], chunk])
    enhanced = enhance_array(state.buffer, provider, cfg, state.mask_index)
    good = enhanced[-2 * n : -n]
    rough = enhanced[-n:]
    emitted = None
    if state.pushes > 0:
        emitted = _blend(state, good)
        state.frames_emitted += 1
    state.pending = rough
    state.pushes += 1
    return emitted


def _blend(state: StreamState, good: np.ndarray) -> np.ndarray:
    if not state.crossfade or state.pending is None:
        return good.copy()
    length = state.crossfade_len
    out = good.copy()
    out[:length] = crossfade_merge(state.pending[:length], good[:length], length)
    return out


def flush(state: StreamState, provider, cfg: StftConfig = StftConfig()) -> np.ndarray:
    """Emit the final pending chunk by evaluating with a zero-padded future.

    Raises on a second flush. Returns an empty array when nothing was pushed.
    """
    if state.flushed:
        raise StreamFlushedError("double flush")
    state.flushed = True
    if state.pushes == 0:
        return np.zeros(0)
    n = state.chunk_size
    state.buffer = np.concatenate([state.buffer[n:], np.zeros(n)])
    enhanced = enhance_array(state.buffer, provider, cfg, state.mask_index)
    good = enhanced[-2 * n : -n]
    out = _blend(state, good)
    state.pending = None
    state.frames_emitted += 1
    return out


@dataclass(frozen=True)
class StreamStats:
    chunks: int
    input_samples: int
    emitted_samples: int
    elapsed_s: float
    realtime_factor: float  # processing seconds per second of audio


def run_stream(x: AudioBuffer, provider, cfg: StftConfig = StftConfig(),
               crossfade: bool = True, chunk_size: int = CHUNK_SIZE,
               mask_index: int = 0):
    """Process a whole buffer chunk by chunk; output length == input length."""
    state = StreamState(chunk_size=chunk_size, crossfade=crossfade, mask_index=mask_index)
    n = len(x)
    pieces = []
    t0 = time.perf_counter()
    for start in range(0, n, chunk_size):
        chunk = x.samples[start : start + chunk_size]
        emitted = push_chunk(state, chunk, provider, cfg, final=(chunk.size < chunk_size))
        if emitted is not None:
            pieces.append(emitted)
    pieces.append(flush(state, provider, cfg))
    elapsed = time.perf_counter() - t0
    out = np.concatenate(pieces) if pieces else np.zeros(0)
    out = out[:n]
    stats = StreamStats(
        chunks=state.pushes,
        input_samples=n,
        emitted_samples=out.size,
        elapsed_s=elapsed,
        realtime_factor=elapsed / max(x.duration_s, 1e-9),
    )
    return AudioBuffer(out, x.sample_rate_hz), stats
