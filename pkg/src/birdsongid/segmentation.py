"""Sound / noise / irrelevant separation by median clipping and morphology.

The sound pipeline thresholds a unit-normalized spectrogram at a multiple
of each pixel's row and column medians, cleans the mask with a 4x4 binary
opening, collapses it to a per-frame indicator, dilates the indicator
twice, and scales it to sample resolution. When that yields fewer sound
samples than one network segment, the clipping factor is lowered in 0.1
steps down to 1.0; if the recording is still short the whole file counts
as sound.

Noise frames come from the inverted 2.5x-clipped image, excluding frames
already claimed as sound. Frames in neither mask are irrelevant.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .corpus import Waveform
from .dsp import normalize_unit, stft


@dataclass(frozen=True)
class SegmentationConfig:
    sound_factor: float = 3.0
    noise_factor: float = 2.5
    struct_size: int = 4
    indicator_dilations: int = 2
    threshold_step: float = 0.1
    min_sound_samples: int = 32768
    window_size: int = 512
    hop: int = 133  # window 512 at 74% overlap

    def __post_init__(self):
        if not self.sound_factor > self.noise_factor > 0:
            raise ValueError("need sound_factor > noise_factor > 0")


@dataclass
class SegmentationResult:
    """Per-sample masks; sound and noise never overlap (sound wins)."""

    sound_mask: np.ndarray  # bool, one flag per sample
    noise_mask: np.ndarray
    sound_threshold_used: float

    @property
    def irrelevant_mask(self) -> np.ndarray:
        return ~(self.sound_mask | self.noise_mask)

    @property
    def num_samples(self) -> int:
        return self.sound_mask.size


def median_clip_mask(values: np.ndarray, factor: float) -> np.ndarray:
    """Pixels strictly above factor x row median AND factor x column median."""
    values = np.asarray(values, dtype=np.float64)
    row_med = np.median(values, axis=1, keepdims=True)
    col_med = np.median(values, axis=0, keepdims=True)
    return (values > factor * row_med) & (values > factor * col_med)


def morph_binary(mask: np.ndarray, kind: str, struct_size: int = 4) -> np.ndarray:
    """Binary erosion/dilation with an all-ones square structuring element.

    The element is anchored at its (1, 1) cell for size 4 (generally at
    ((size-1)//2, (size-1)//2)), i.e. the window for output pixel (r, c)
    spans rows r-1..r+2 and columns c-1..c+2; out-of-bounds pixels count
    as 0 for both operations.
    """
    if kind not in ("erode", "dilate"):
        raise ValueError(f"unknown morphology kind {kind!r}")
    mask = np.asarray(mask, dtype=bool)
    anchor = (struct_size - 1) // 2
    pad = ((anchor, struct_size - 1 - anchor),) * 2
    padded = np.pad(mask, pad, mode="constant", constant_values=False)
    windows = sliding_window_view(padded, (struct_size, struct_size))
    if kind == "dilate":
        return windows.any(axis=(2, 3))
    return windows.all(axis=(2, 3))


def frame_indicator(mask: np.ndarray) -> np.ndarray:
    """Per-frame flag: 1 iff the mask column contains any foreground pixel."""
    return np.asarray(mask, dtype=bool).any(axis=0)


def dilate_indicator(vector: np.ndarray, times: int = 2) -> np.ndarray:
    """Iterated 1-D dilation with element [1, 1, 1]; each pass widens every
    run of ones by one frame on both sides."""
    out = np.asarray(vector, dtype=bool).copy()
    for _ in range(times):
        grown = out.copy()
        grown[1:] |= out[:-1]
        grown[:-1] |= out[1:]
        out = grown
    return out


def indicator_to_sample_mask(vector: np.ndarray, hop: int,
                             total_samples: int) -> np.ndarray:
    """Stretch a frame indicator to sample resolution: sample i copies frame
    floor(i / hop), clamped to the final frame."""
    vector = np.asarray(vector, dtype=bool)
    if vector.size == 0:
        raise ValueError("empty frame indicator")
    frames = np.minimum(np.arange(total_samples) // hop, vector.size - 1)
    return vector[frames]


def _sound_frame_indicator(norm_spec: np.ndarray, factor: float,
                           cfg: SegmentationConfig) -> np.ndarray:
    clipped = median_clip_mask(norm_spec, factor)
    opened = morph_binary(morph_binary(clipped, "erode", cfg.struct_size),
                          "dilate", cfg.struct_size)
    return dilate_indicator(frame_indicator(opened), cfg.indicator_dilations)


def segment_spectrogram(norm_spec: np.ndarray, total_samples: int,
                        cfg: SegmentationConfig) -> SegmentationResult:
    """Mask derivation from an already unit-normalized spectrogram.

    Runs the adaptive sound-threshold loop, then derives the noise mask
    from the inverted 2.5x-clipped image restricted to non-sound frames.
    """
    threshold = None
    sound_frames = sound_mask = None
    step = 0
    while True:
        candidate = round(cfg.sound_factor - step * cfg.threshold_step, 9)
        if candidate < 1.0:
            break
        sound_frames = _sound_frame_indicator(norm_spec, candidate, cfg)
        sound_mask = indicator_to_sample_mask(sound_frames, cfg.hop, total_samples)
        if int(sound_mask.sum()) >= cfg.min_sound_samples:
            threshold = candidate
            break
        step += 1
    if threshold is None:
        # Even a factor of 1.0 found too little sound: take the whole file.
        return SegmentationResult(
            sound_mask=np.ones(total_samples, dtype=bool),
            noise_mask=np.zeros(total_samples, dtype=bool),
            sound_threshold_used=1.0)
    noise_clip = median_clip_mask(norm_spec, cfg.noise_factor)
    noise_open = morph_binary(morph_binary(noise_clip, "erode", cfg.struct_size),
                              "dilate", cfg.struct_size)
    noise_frames = frame_indicator(~noise_open) & ~sound_frames
    noise_mask = indicator_to_sample_mask(noise_frames, cfg.hop, total_samples)
    return SegmentationResult(sound_mask, noise_mask, threshold)


def separate_recording(w: Waveform, cfg: SegmentationConfig) -> SegmentationResult:
    """Full per-recording separation: STFT, normalize, derive masks."""
    spec = stft(w.samples, w.sample_rate, cfg.window_size, cfg.hop)
    return segment_spectrogram(normalize_unit(spec.values), len(w), cfg)


def mask_runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Runs of ones as (start, end) sample index pairs, end exclusive."""
    mask = np.asarray(mask, dtype=bool)
    diff = np.diff(mask.astype(np.int8))
    starts = np.flatnonzero(diff == 1) + 1
    ends = np.flatnonzero(diff == -1) + 1
    if mask.size and mask[0]:
        starts = np.concatenate(([0], starts))
    if mask.size and mask[-1]:
        ends = np.concatenate((ends, [mask.size]))
    return list(zip(starts.tolist(), ends.tolist()))


def format_mask_dump(result: SegmentationResult) -> str:
    """Text form of a segmentation result (also the on-disk cache format)."""
    def fmt(mask):
        return ",".join(f"{a}-{b}" for a, b in mask_runs(mask))
    return (f"samples: {result.num_samples}\n"
            f"threshold: {result.sound_threshold_used}\n"
            f"sound: {fmt(result.sound_mask)}\n"
            f"noise: {fmt(result.noise_mask)}\n")


def parse_mask_dump(text: str) -> SegmentationResult:
    fields = {}
    for line in text.strip().splitlines():
        key, _, value = line.partition(":")
        fields[key.strip()] = value.strip()
    try:
        n = int(fields["samples"])
        threshold = float(fields["threshold"])
        masks = {}
        for key in ("sound", "noise"):
            mask = np.zeros(n, dtype=bool)
            if fields[key]:
                for run in fields[key].split(","):
                    a, _, b = run.partition("-")
                    mask[int(a):int(b)] = True
            masks[key] = mask
    except (KeyError, ValueError) as exc:
        raise ValueError(f"malformed mask dump: {exc}") from exc
    return SegmentationResult(masks["sound"], masks["noise"], threshold)
