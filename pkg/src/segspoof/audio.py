"""Waveform container and 16-bit PCM WAV I/O."""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_SAMPLE_RATE = 16000

_PCM16_SCALE = 32767.0


@dataclass(frozen=True)
class Waveform:
    """Mono audio: float samples (nominal range [-1, 1]) plus a sample rate."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"samples must be 1-D, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples contain non-finite values")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


def read_wav(path: str | Path, expected_rate: int | None = DEFAULT_SAMPLE_RATE) -> Waveform:
    """Read a mono 16-bit PCM WAV file.

    Resampling is out of scope: a rate different from `expected_rate` is an
    error unless `expected_rate` is None.
    """
    with wave.open(str(path), "rb") as f:
        n_channels = f.getnchannels()
        sampwidth = f.getsampwidth()
        rate = f.getframerate()
        n_frames = f.getnframes()
        if n_channels != 1:
            raise ValueError(f"{path}: expected mono audio, got {n_channels} channels")
        if sampwidth != 2:
            raise ValueError(f"{path}: expected 16-bit PCM, got {8 * sampwidth}-bit")
        if expected_rate is not None and rate != expected_rate:
            raise ValueError(
                f"{path}: sample rate {rate} Hz not supported (expected {expected_rate} Hz)"
            )
        raw = f.readframes(n_frames)
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / _PCM16_SCALE
    return Waveform(data, rate)


def write_wav(path: str | Path, waveform: Waveform) -> None:
    """Write a Waveform as mono 16-bit PCM, clipping to [-1, 1]."""
    clipped = np.clip(waveform.samples, -1.0, 1.0)
    pcm = np.round(clipped * _PCM16_SCALE).astype("<i2")
    with wave.open(str(path), "wb") as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(waveform.sample_rate)
        f.writeframes(pcm.tobytes())
