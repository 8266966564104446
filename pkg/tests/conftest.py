"""Shared fixtures: synthetic tone corpora written as real WAV files.

Each "species" is a distinct pulse-train signature (carrier frequency and
pulse count) over a gaussian noise bed, loud enough that the segmentation
stage finds sound where the pulses are. Corpora are session-scoped and
treated as read-only by the tests.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest
from scipy.io import wavfile

SAMPLE_RATE = 22050
TONES = {0: 2000.0, 1: 4000.0, 2: 6500.0}
PULSE_COUNTS = {0: 6, 1: 9, 2: 12}

# One home location per species; species 0 and 1 sit within a degree of
# each other (so they show up in each other's neighbor pools), species 2
# is far away on another continent.
HOMES = {0: (10.0, 20.0), 1: (10.4, 20.4), 2: (40.0, -60.0)}


def tone_signal(rng: np.random.Generator, species: int,
                n_samples: int, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Pulse train of the species' tone over a quiet noise bed."""
    x = 0.03 * rng.standard_normal(n_samples)
    pulse_len = min(int(0.065 * sample_rate), max(n_samples // 4, 16))
    count = PULSE_COUNTS[species]
    starts = np.linspace(0, n_samples - pulse_len, count).astype(int)
    envelope = np.hanning(pulse_len)
    t = np.arange(pulse_len) / sample_rate
    freq = TONES[species] * rng.uniform(0.97, 1.03)
    for s in starts:
        x[s:s + pulse_len] += 0.5 * envelope * np.sin(2 * np.pi * freq * t)
    return np.clip(x, -1.0, 1.0)


def write_wav(path: Path, samples: np.ndarray,
              sample_rate: int = SAMPLE_RATE) -> None:
    data = np.clip(np.asarray(samples), -1.0, 1.0)
    wavfile.write(str(path), sample_rate, (data * 32767.0).astype(np.int16))


@dataclass
class Corpus:
    root: Path
    manifest_path: Path
    rows: list[dict]

    @property
    def num_species(self) -> int:
        return len({r["species_id"] for r in self.rows})


def build_corpus(root: Path, per_species: dict[int, int], seed: int,
                 lengths=(32768,), missing_every: int = 5) -> Corpus:
    """Write WAVs plus a manifest CSV under root.

    Recording lengths cycle through ``lengths``; every ``missing_every``-th
    row drops one metadata column so the imputation paths get exercised.
    """
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    rows = []
    k = 0
    for species in sorted(per_species):
        lat0, lon0 = HOMES[species]
        for i in range(per_species[species]):
            rid = f"rec{species}_{i:02d}"
            n = lengths[k % len(lengths)]
            path = root / f"{rid}.wav"
            write_wav(path, tone_signal(rng, species, n))
            row = {
                "recording_id": rid,
                "audio_path": str(path),
                "species_id": str(species),
                "latitude": f"{lat0 + rng.uniform(-0.2, 0.2):.4f}",
                "longitude": f"{lon0 + rng.uniform(-0.2, 0.2):.4f}",
                "elevation": f"{100.0 + 40.0 * species + rng.uniform(0, 30):.1f}",
                "date": "2015-05-10",
                "time": f"{int(rng.integers(5, 20)):02d}:{int(rng.integers(0, 60)):02d}",
            }
            if k % missing_every == 1:
                row["elevation"] = ""
            elif k % missing_every == 2:
                row["time"] = ""
            elif k % missing_every == 3:
                row["latitude"] = ""
                row["longitude"] = ""
            rows.append(row)
            k += 1
    manifest_path = root / "manifest.csv"
    with manifest_path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=[
            "recording_id", "audio_path", "species_id", "latitude",
            "longitude", "elevation", "date", "time"])
        writer.writeheader()
        writer.writerows(rows)
    return Corpus(root, manifest_path, rows)


@pytest.fixture(scope="session")
def tone_corpus(tmp_path_factory) -> Corpus:
    """3 species x 6 recordings, varied lengths including one shorter than
    a 32768-sample segment."""
    root = tmp_path_factory.mktemp("tone_corpus")
    return build_corpus(root, {0: 6, 1: 6, 2: 6}, seed=11,
                        lengths=(32768, 48000, 32768, 20000, 70000, 32768))


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory) -> Corpus:
    """2 species x 4 short recordings; the cheap corpus for CLI runs."""
    root = tmp_path_factory.mktemp("tiny_corpus")
    return build_corpus(root, {0: 4, 1: 4}, seed=23,
                        lengths=(32768, 32768, 20000, 32768))
