"""Stochastic training-segment augmentation.

Three waveform overlays (background noise, same species, geographically
neighboring species), a volume jitter, then two spectrogram-domain edits
(pitch scaling and a random time cut). Overlay material comes from the
sound-masked portion of donor recordings and the noise-masked portion of
noise donors. Every stage draws from a caller-supplied Generator, so a
fixed seed reproduces the augmented batch exactly.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .dsp import FeatureConfig, MelSpectrogram, mel_spectrogram, stft

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AugmentConfig:
    noise_overlays_max: int = 4
    noise_overlay_prob: float = 0.75
    noise_volume_jitter: float = 0.10
    same_class_prob: float = 0.70
    same_class_damp_range: tuple[float, float] = (0.20, 0.60)
    neighbor_prob: float = 0.30
    neighbor_damp_center: float = 0.30
    neighbor_damp_jitter: float = 0.05
    volume_jitter: float = 0.05
    pitch_jitter: float = 0.05
    time_cut: bool = True

    def __post_init__(self):
        for name in ("noise_overlay_prob", "same_class_prob", "neighbor_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} {p} outside [0, 1]")
        for name in ("noise_volume_jitter", "neighbor_damp_jitter",
                     "volume_jitter", "pitch_jitter"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")
        lo, hi = self.same_class_damp_range
        if not 0.0 <= lo <= hi:
            raise ValueError(f"bad same_class_damp_range {self.same_class_damp_range}")
        if self.noise_overlays_max < 0:
            raise ValueError("noise_overlays_max must be >= 0")

    @classmethod
    def disabled(cls) -> "AugmentConfig":
        """All probabilities and jitters zero: the pipeline becomes the
        plain feature path."""
        return cls(noise_overlay_prob=0.0, noise_volume_jitter=0.0,
                   same_class_prob=0.0, same_class_damp_range=(0.0, 0.0),
                   neighbor_prob=0.0, neighbor_damp_jitter=0.0,
                   neighbor_damp_center=0.0, volume_jitter=0.0,
                   pitch_jitter=0.0, time_cut=False)


@dataclass
class RecordingSource:
    """Decoded audio paired with its sound/noise sample masks."""

    recording_id: str
    species_id: int
    samples: np.ndarray
    sound_mask: np.ndarray
    noise_mask: np.ndarray

    def sound_material(self) -> np.ndarray:
        return self.samples[self.sound_mask]

    def noise_material(self) -> np.ndarray:
        return self.samples[self.noise_mask]


@dataclass
class DonorPools:
    """Overlay material for one training split.

    sources holds every training recording; noise is the non-empty
    noise-mask material arrays; sound_by_species maps species to the ids
    of recordings with sound material; neighbors maps recording id to the
    species found within the coordinate box around it.
    """

    sources: dict[str, RecordingSource]
    noise: list[np.ndarray] = field(default_factory=list)
    sound_by_species: dict[int, list[str]] = field(default_factory=dict)
    neighbors: dict[str, frozenset[int]] = field(default_factory=dict)

    @classmethod
    def build(cls, sources: dict[str, RecordingSource],
              neighbors: dict[str, frozenset[int]] | None = None) -> "DonorPools":
        noise = []
        by_species: dict[int, list[str]] = {}
        for rid in sorted(sources):
            src = sources[rid]
            if src.noise_mask.any():
                noise.append(src.noise_material())
            if src.sound_mask.any():
                by_species.setdefault(src.species_id, []).append(rid)
        return cls(sources, noise, by_species, dict(neighbors or {}))

    def same_class_pool(self, species_id: int) -> list[np.ndarray]:
        return [self.sources[rid].sound_material()
                for rid in self.sound_by_species.get(species_id, [])]

    def neighbor_pool(self, recording_id: str) -> list[np.ndarray]:
        pool = []
        for species_id in sorted(self.neighbors.get(recording_id, frozenset())):
            for rid in self.sound_by_species.get(species_id, []):
                pool.append(self.sources[rid].sound_material())
        return pool


def _loop_to_length(material: np.ndarray, length: int) -> np.ndarray:
    """First ``length`` samples of the material repeated end to end."""
    if material.size == 0:
        raise ValueError("cannot loop empty material")
    if material.size >= length:
        return material[:length]
    return np.resize(material, length)


def sample_segment(material: np.ndarray, length: int,
                   rng: np.random.Generator) -> np.ndarray:
    """Random window of ``length`` samples from a material array.

    Material shorter than the window is looped: the window starts anywhere
    in the material and reads it cyclically.
    """
    material = np.asarray(material)
    if material.size == 0:
        raise ValueError("cannot sample from empty material")
    if material.size >= length:
        start = int(rng.integers(0, material.size - length + 1))
        return material[start:start + length].copy()
    start = int(rng.integers(0, material.size))
    return material.take(np.arange(start, start + length), mode="wrap")


def _clip(seg: np.ndarray) -> np.ndarray:
    return np.clip(seg, -1.0, 1.0)


def overlay_noise(seg: np.ndarray, noise_pool: list[np.ndarray],
                  cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Up to noise_overlays_max independent chances to add a noise segment
    at a volume jittered around 1. Draw order per trial: coin, donor
    index, volume factor (donor and factor only drawn when the coin hits).
    """
    if not noise_pool:
        if cfg.noise_overlay_prob > 0 and cfg.noise_overlays_max > 0:
            logger.warning("empty noise pool, skipping noise overlay")
        return seg
    out = seg.astype(np.float64, copy=True)
    for _ in range(cfg.noise_overlays_max):
        if rng.random() < cfg.noise_overlay_prob:
            donor = noise_pool[int(rng.integers(len(noise_pool)))]
            factor = rng.uniform(1.0 - cfg.noise_volume_jitter,
                                 1.0 + cfg.noise_volume_jitter)
            out = _clip(out + factor * _loop_to_length(donor, seg.size))
    return out


def combine_same_class(seg: np.ndarray, same_class_pool: list[np.ndarray],
                       cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """With probability same_class_prob, add a damped segment of the same
    species (damping uniform over same_class_damp_range)."""
    if not same_class_pool:
        return seg
    if rng.random() >= cfg.same_class_prob:
        return seg
    donor = same_class_pool[int(rng.integers(len(same_class_pool)))]
    damp = rng.uniform(*cfg.same_class_damp_range)
    return _clip(seg + damp * _loop_to_length(donor, seg.size))


def overlay_neighbor_species(seg: np.ndarray, neighbor_pool: list[np.ndarray],
                             cfg: AugmentConfig,
                             rng: np.random.Generator) -> np.ndarray:
    """With probability neighbor_prob, add a damped segment from a species
    recorded within one degree of this recording's location."""
    if not neighbor_pool:
        return seg
    if rng.random() >= cfg.neighbor_prob:
        return seg
    donor = neighbor_pool[int(rng.integers(len(neighbor_pool)))]
    damp = rng.uniform(cfg.neighbor_damp_center - cfg.neighbor_damp_jitter,
                       cfg.neighbor_damp_center + cfg.neighbor_damp_jitter)
    return _clip(seg + damp * _loop_to_length(donor, seg.size))


def volume_shift(seg: np.ndarray, cfg: AugmentConfig,
                 rng: np.random.Generator) -> np.ndarray:
    factor = rng.uniform(1.0 - cfg.volume_jitter, 1.0 + cfg.volume_jitter)
    return _clip(seg * factor)


def pitch_shift(m: MelSpectrogram, cfg: AugmentConfig,
                rng: np.random.Generator) -> MelSpectrogram:
    """Rescale the frequency axis by a factor near 1 (linear interpolation,
    rows beyond the source zero-filled); shape is preserved."""
    factor = rng.uniform(1.0 - cfg.pitch_jitter, 1.0 + cfg.pitch_jitter)
    values = m.values
    rows = values.shape[0]
    src = np.arange(rows) * factor  # output row r reads input row r*factor
    lower = np.floor(src).astype(int)
    frac = (src - lower)[:, None]

    def rows_at(idx: np.ndarray) -> np.ndarray:
        valid = (idx >= 0) & (idx < rows)
        picked = values[np.clip(idx, 0, rows - 1)]
        picked[~valid] = 0.0
        return picked

    out = (1.0 - frac) * rows_at(lower) + frac * rows_at(lower + 1)
    return MelSpectrogram(out, m.band_edges)


def random_cut(m: MelSpectrogram, rng: np.random.Generator) -> MelSpectrogram:
    """Split the time axis at a random column and swap the two parts."""
    frames = m.num_frames
    if frames < 2:
        return m
    cut = int(rng.integers(1, frames))
    values = np.concatenate([m.values[:, cut:], m.values[:, :cut]], axis=1)
    return MelSpectrogram(values, m.band_edges)


def augment_pipeline(recording_id: str, pools: DonorPools, cfg: AugmentConfig,
                     feature_cfg: FeatureConfig,
                     rng: np.random.Generator) -> MelSpectrogram:
    """One augmented network input for a training recording.

    Stage order: sample a sound-mask segment (looped if short), mix in
    same-class / neighbor-species / noise material, jitter the volume,
    take the Mel spectrogram, then pitch-scale and time-cut it.
    """
    source = pools.sources[recording_id]
    seg = sample_segment(source.sound_material(), feature_cfg.segment_samples, rng)
    seg = combine_same_class(seg, pools.same_class_pool(source.species_id),
                             cfg, rng)
    seg = overlay_neighbor_species(seg, pools.neighbor_pool(recording_id),
                                   cfg, rng)
    seg = overlay_noise(seg, pools.noise, cfg, rng)
    seg = volume_shift(seg, cfg, rng)
    spec = stft(seg, feature_cfg.sample_rate, feature_cfg.fft_window,
                feature_cfg.hop)
    mel = mel_spectrogram(spec)
    mel = pitch_shift(mel, cfg, rng)
    if cfg.time_cut:
        mel = random_cut(mel, rng)
    return mel
