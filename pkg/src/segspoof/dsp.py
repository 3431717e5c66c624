"""Spectrogram front-end: STFT, mel filterbank, and windowed log-mel streams.

The detector consumes two streams derived from the same 10 ms frame grid:
a 64-bin log-mel stream summarized per 1 s window (coarse) and a 128-bin
log-mel stream at full frame rate (fine). Audio is zero-padded so every
coarse window holds exactly `frames_per_window` frames; a validity mask
marks frames that start inside the original signal.
"""

from __future__ import annotations

import numpy as np

from .audio import Waveform

LOG_FLOOR = 1e-10


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window of length n."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def hz_to_mel(f):
    """HTK mel scale: 2595*log10(1 + f/700)."""
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def frame_count(n_samples: int, win_samples: int, hop_samples: int) -> int:
    """Number of full analysis frames for a signal of n_samples."""
    if n_samples < win_samples:
        return 0
    return (n_samples - win_samples) // hop_samples + 1


def compute_stft(
    samples: np.ndarray,
    win_samples: int,
    hop_samples: int,
    fft_size: int,
    window: np.ndarray | None = None,
) -> np.ndarray:
    """Magnitude spectrogram [n_frames x (fft_size//2 + 1)].

    Frame i covers samples [i*hop, i*hop + win). `window=None` means
    rectangular. Signals shorter than one window are rejected.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if win_samples > fft_size:
        raise ValueError(f"win_samples {win_samples} exceeds fft_size {fft_size}")
    if hop_samples < 1:
        raise ValueError("hop_samples must be >= 1")
    n = samples.shape[0]
    if n < win_samples:
        raise ValueError(f"signal too short: {n} samples < one window of {win_samples}")
    n_frames = frame_count(n, win_samples, hop_samples)
    idx = np.arange(win_samples)[None, :] + hop_samples * np.arange(n_frames)[:, None]
    frames = samples[idx]
    if window is not None:
        if window.shape[0] != win_samples:
            raise ValueError("window length must equal win_samples")
        frames = frames * window[None, :]
    return np.abs(np.fft.rfft(frames, n=fft_size, axis=1))


def mel_filterbank(
    n_mels: int,
    fft_size: int,
    sample_rate: float,
    fmin: float = 0.0,
    fmax: float | None = None,
) -> np.ndarray:
    """Triangular mel filterbank [n_mels x (fft_size//2 + 1)].

    Triangle corners are mel-spaced and snapped to FFT bins; a minimum
    one-bin rise/fall is enforced so every row has positive sum even when
    filters are narrower than the bin spacing.
    """
    if fmax is None:
        fmax = sample_rate / 2.0
    if not (0.0 <= fmin < fmax <= sample_rate / 2.0):
        raise ValueError(f"invalid frequency range [{fmin}, {fmax}] at rate {sample_rate}")
    if n_mels < 1:
        raise ValueError("n_mels must be >= 1")
    n_bins = fft_size // 2 + 1
    mel_points = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2)
    hz_points = mel_to_hz(mel_points)
    bins = np.floor((fft_size + 1) * hz_points / sample_rate).astype(int)
    bins = np.clip(bins, 0, n_bins - 1)

    fb = np.zeros((n_mels, n_bins))
    for i in range(n_mels):
        left = bins[i]
        center = max(bins[i + 1], left + 1)
        right = max(bins[i + 2], center + 1)
        center = min(center, n_bins - 1)
        right = min(right, n_bins - 1)
        if center <= left:  # crowding at the top edge
            left = center - 1
        if right <= center:
            right = center
            fb[i, center] = max(fb[i, center], 1.0)
        for k in range(left + 1, center + 1):
            fb[i, k] = (k - left) / (center - left)
        for k in range(center + 1, right):
            fb[i, k] = (right - k) / (right - center)
    return fb


def log_mel(
    samples: np.ndarray,
    sample_rate: float,
    win_samples: int,
    hop_samples: int,
    fft_size: int,
    filterbank: np.ndarray,
    window: np.ndarray | None = None,
) -> np.ndarray:
    """Log mel-power spectrogram [n_frames x n_mels], floored before log."""
    mag = compute_stft(samples, win_samples, hop_samples, fft_size, window=window)
    mel = (mag * mag) @ filterbank.T
    return np.log(np.maximum(mel, LOG_FLOOR))


def pad_to_window_grid(
    samples: np.ndarray, sample_rate: int, win_samples: int, hop_samples: int, window_seconds: float = 1.0
) -> tuple[np.ndarray, int]:
    """Zero-pad so framing yields exactly (window_seconds/hop) frames per window.

    Returns (padded samples, n_windows). The pad extends the signal to whole
    windows plus the (win - hop) tail a final frame needs.
    """
    n = samples.shape[0]
    samples_per_window = int(round(window_seconds * sample_rate))
    n_windows = max(1, -(-n // samples_per_window))  # ceil, at least one window
    target = n_windows * samples_per_window + (win_samples - hop_samples)
    padded = np.concatenate([samples, np.zeros(target - n)]) if target > n else samples
    return padded, n_windows


def windowed_log_mel(
    waveform: Waveform,
    n_mels: int,
    win_samples: int,
    hop_samples: int,
    fft_size: int,
    filterbank: np.ndarray,
    window: np.ndarray,
    frames_per_window: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Log-mel frames grouped per coarse window.

    Returns (feats [n_windows x frames_per_window x n_mels],
    valid [n_windows x frames_per_window]) where valid marks frames whose
    start lies inside the unpadded signal.
    """
    n = len(waveform)
    window_seconds = frames_per_window * hop_samples / waveform.sample_rate
    padded, n_windows = pad_to_window_grid(
        waveform.samples, waveform.sample_rate, win_samples, hop_samples, window_seconds
    )
    feats = log_mel(
        padded, waveform.sample_rate, win_samples, hop_samples, fft_size, filterbank, window
    )
    total = n_windows * frames_per_window
    if feats.shape[0] != total:
        raise AssertionError(
            f"framing mismatch: {feats.shape[0]} frames for {n_windows} windows"
        )
    feats = feats.reshape(n_windows, frames_per_window, n_mels)
    starts = np.arange(total) * hop_samples
    valid = (starts < n).reshape(n_windows, frames_per_window)
    return feats, valid
