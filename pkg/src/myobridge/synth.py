"""Offline additive synthesis: eight-oscillator bank, waveshaping, mixdown,
and 16-bit WAV output.

The renderer is a desk-scale stand-in for an embedded audio engine, built
for reproducibility: phases accumulate in 64-bit integers (wrap-exact, so
rendering is bit-identical regardless of how a span is split into blocks),
and identical parameter sequences always produce identical samples.

Per sample: s = sum_k amps[k] * sin(phase_k) / 8, then the normalized
waveshaper tanh(drive * s) / tanh(drive), then the master gain.  Parameters
changing between blocks are linearly interpolated across the block.
"""

from __future__ import annotations

import math
import wave
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .mapping import N_OSCILLATORS, SynthParams

# Phase lives in uint64 turns: 2**64 == one full cycle.
_PHASE_MODULUS = 2.0 ** 64
_PHASE_TO_RADIANS = 2.0 * math.pi / _PHASE_MODULUS

PCM_FULL_SCALE = 32767.0


class LengthMismatchError(ValueError):
    pass


class RateMismatchError(ValueError):
    pass


@dataclass
class AudioBlock:
    """Mono float samples in [-1, 1]."""

    samples: np.ndarray
    sample_rate: float


class OscillatorBank:
    """Eight phase accumulators plus the previous block's parameters.

    Single-owner: one bank per performer, rendered in stream order.
    """

    def __init__(self, sample_rate: float = 44100.0,
                 phases: Optional[Sequence[float]] = None):
        if sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        self.sample_rate = float(sample_rate)
        if phases is None:
            self._acc = np.zeros(N_OSCILLATORS, dtype=np.uint64)
        else:
            if len(phases) != N_OSCILLATORS:
                raise ValueError(f"need {N_OSCILLATORS} phases")
            turns = np.asarray(phases, dtype=np.float64) / (2.0 * math.pi)
            self._acc = (np.mod(turns, 1.0) * _PHASE_MODULUS).astype(np.uint64)
        self._prev_params: Optional[SynthParams] = None

    @property
    def phases(self) -> np.ndarray:
        """Current phases in radians, wrapped to [0, 2*pi)."""
        return self._acc.astype(np.float64) * _PHASE_TO_RADIANS


def _lerp_path(a: np.ndarray, b: np.ndarray, t: np.ndarray) -> np.ndarray:
    # with a == b this is exactly a for every t
    return a + (b - a) * t


def render_block(bank: OscillatorBank, params: SynthParams,
                 n: int) -> AudioBlock:
    """Render n samples, ramping from the bank's previous parameters.

    Phase persists across calls; with constant parameters, rendering
    n1 + n2 samples equals rendering n1 then n2 (sample-exact).
    """
    if n <= 0:
        raise ValueError("sample count must be positive")
    prev = bank._prev_params or params

    t = (np.arange(1, n + 1, dtype=np.float64) / n)[:, None]
    freqs = _lerp_path(np.asarray(prev.freqs), np.asarray(params.freqs), t)
    amps = _lerp_path(np.asarray(prev.amps), np.asarray(params.amps), t)
    drive = _lerp_path(np.float64(prev.drive), np.float64(params.drive),
                       t[:, 0])
    gain = _lerp_path(np.float64(prev.master_gain),
                      np.float64(params.master_gain), t[:, 0])

    increments = np.round(
        freqs * (_PHASE_MODULUS / bank.sample_rate)).astype(np.uint64)
    acc_path = np.cumsum(increments, axis=0, dtype=np.uint64) + bank._acc
    bank._acc = acc_path[-1].copy()
    bank._prev_params = params

    phases = acc_path.astype(np.float64) * _PHASE_TO_RADIANS
    s = (np.sin(phases) * amps).sum(axis=1) / N_OSCILLATORS
    shaped = np.tanh(drive * s) / np.tanh(drive)
    return AudioBlock(samples=gain * shaped, sample_rate=bank.sample_rate)


def mix_performers(blocks: Sequence[AudioBlock]) -> AudioBlock:
    """Samplewise mean across performers; never clips for inputs in [-1, 1]."""
    if not blocks:
        raise ValueError("nothing to mix")
    length = len(blocks[0].samples)
    rate = blocks[0].sample_rate
    for b in blocks[1:]:
        if len(b.samples) != length:
            raise LengthMismatchError(
                f"block lengths differ: {len(b.samples)} vs {length}")
        if b.sample_rate != rate:
            raise RateMismatchError(
                f"sample rates differ: {b.sample_rate} vs {rate}")
    stacked = np.stack([b.samples for b in blocks])
    return AudioBlock(samples=stacked.sum(axis=0) / len(blocks),
                      sample_rate=rate)


def write_wav(block: AudioBlock, path) -> None:
    """Write mono 16-bit PCM, little-endian; byte-exact across runs.

    Sample s maps to rint(s * 32767).  Samples must already be finite and
    within [-1, 1]; the renderer guarantees that bound.
    """
    samples = np.asarray(block.samples, dtype=np.float64)
    if samples.size and not np.all(np.isfinite(samples)):
        raise ValueError("samples must be finite")
    if samples.size and np.max(np.abs(samples)) > 1.0:
        raise ValueError("samples must lie in [-1, 1]")
    pcm = np.rint(samples * PCM_FULL_SCALE).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(int(block.sample_rate))
        w.writeframes(pcm.tobytes())
