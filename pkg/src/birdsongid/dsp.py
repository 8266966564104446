"""Time-frequency transforms: STFT, unit normalization, Mel projection.

The STFT reflection-pads around frame centers so that a signal of length n
yields exactly ceil(n / hop) frames; a 32768-sample segment at hop 64 then
gives the 512 frames the network input expects.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MEL_BANDS = 80


@dataclass
class Spectrogram:
    """Magnitude spectrogram, rows = frequency bins, cols = frames."""

    values: np.ndarray
    sample_rate: int
    window_size: int
    hop: int

    @property
    def num_frames(self) -> int:
        return self.values.shape[1]


@dataclass
class MelSpectrogram:
    """80-row Mel-band image normalized to [0, 1].

    ``band_edges`` is the mel-spaced frequency grid (81 values): band i
    rises from band_edges[i], peaks at band_edges[i+1] and falls to
    band_edges[i+2] (the top band falls to the Nyquist frequency).
    """

    values: np.ndarray
    band_edges: np.ndarray

    @property
    def num_frames(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class FeatureConfig:
    """Segment-to-network-input settings shared by training and inference."""

    fft_window: int = 256
    segment_samples: int = 32768
    sample_rate: int = 22050

    @property
    def hop(self) -> int:
        # 75% overlap: the only hop for which both supported
        # (window, segment) pairs produce exactly 512 frames.
        return self.fft_window // 4


def _reflect_indices(n: int, idx: np.ndarray) -> np.ndarray:
    """Mirror out-of-range indices back into [0, n) without edge repeats."""
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * n - 2
    m = np.mod(idx, period)
    return np.where(m >= n, period - m, m)


def hann_window(size: int) -> np.ndarray:
    """Periodic Hann window (DFT-even), so a bin-centered sine leaks into
    exactly the two adjacent bins."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(size) / size)


def stft(samples: np.ndarray, sample_rate: int, window_size: int,
         hop: int) -> Spectrogram:
    """Magnitude STFT with a Hann window and reflection center-padding.

    Frame t is centered on sample t * hop; output has window_size/2 + 1
    rows and ceil(len / hop) columns.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 1 or samples.size < 1:
        raise ValueError("stft input must be a non-empty 1-D array")
    if window_size < 2 or window_size & (window_size - 1):
        raise ValueError(f"window_size {window_size} is not a power of two")
    if not 0 < hop <= window_size:
        raise ValueError(f"hop {hop} outside (0, window_size]")
    n = samples.size
    frames = -(-n // hop)
    idx = np.arange(frames)[:, None] * hop - window_size // 2 + np.arange(window_size)
    framed = samples[_reflect_indices(n, idx)] * hann_window(window_size)
    mag = np.abs(np.fft.rfft(framed, axis=1)).T
    return Spectrogram(mag, sample_rate, window_size, hop)


def normalize_unit(values: np.ndarray) -> np.ndarray:
    """Affine rescale to [0, 1]; a constant matrix maps to all zeros."""
    values = np.asarray(values, dtype=np.float64)
    lo = values.min()
    hi = values.max()
    if hi == lo:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(num_bands: int, window_size: int,
                   sample_rate: int) -> tuple[np.ndarray, np.ndarray]:
    """Triangular filters with centers uniform on the mel scale over
    [0, sample_rate/2].

    Returns (weights, band_edges): weights is num_bands x bins, band_edges
    the num_bands+1 lower/peak frequency grid (see MelSpectrogram). With a
    small window some low bands are narrower than a bin and come out
    all-zero; that is expected and left to the caller.
    """
    if num_bands < 1:
        raise ValueError("num_bands must be >= 1")
    bins = window_size // 2 + 1
    freqs = np.arange(bins) * sample_rate / window_size
    points = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), num_bands + 2))
    up = (freqs[None, :] - points[:-2, None]) / (points[1:-1] - points[:-2])[:, None]
    down = (points[2:, None] - freqs[None, :]) / (points[2:] - points[1:-1])[:, None]
    weights = np.maximum(0.0, np.minimum(up, down))
    return weights, points[:num_bands + 1]


def mel_spectrogram(spec: Spectrogram, num_bands: int = MEL_BANDS) -> MelSpectrogram:
    """Log-compressed, unit-normalized Mel projection of a spectrogram."""
    weights, edges = mel_filterbank(num_bands, spec.window_size, spec.sample_rate)
    projected = weights @ spec.values
    return MelSpectrogram(normalize_unit(np.log1p(projected)), edges)


def segment_features(samples: np.ndarray, cfg: FeatureConfig) -> np.ndarray:
    """Plain (un-augmented) network input for one audio segment: 80 rows x
    ceil(len/hop) frames in [0, 1]."""
    spec = stft(samples, cfg.sample_rate, cfg.fft_window, cfg.hop)
    return mel_spectrogram(spec).values
