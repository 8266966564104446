"""Corpus ingestion: manifest parsing, WAV decoding, neighbor index, splits.

A corpus is described by a UTF-8 CSV manifest with header

    recording_id,audio_path,species_id,latitude,longitude,elevation,date,time

Empty cells mean "missing". Dates are ``YYYY-MM-DD``, times ``HH:MM`` (24 h).
Audio files are PCM WAV (16-bit int or 32-bit float), mono or stereo.
"""
from __future__ import annotations

import csv
import datetime
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from .errors import AudioDecodeError, ManifestError

DEFAULT_SAMPLE_RATE = 22050

MANIFEST_COLUMNS = [
    "recording_id", "audio_path", "species_id",
    "latitude", "longitude", "elevation", "date", "time",
]


@dataclass(frozen=True)
class RecordingMetadata:
    """Per-recording side information; any field but species may be missing."""

    species_id: int
    latitude: float | None = None
    longitude: float | None = None
    elevation: float | None = None
    date: datetime.date | None = None
    time_of_day: float | None = None  # minutes since local midnight, [0, 1440)

    def __post_init__(self):
        if self.latitude is not None and not -90.0 <= self.latitude <= 90.0:
            raise ManifestError(f"latitude {self.latitude} outside [-90, 90]")
        if self.longitude is not None and not -180.0 <= self.longitude <= 180.0:
            raise ManifestError(f"longitude {self.longitude} outside [-180, 180]")
        if self.time_of_day is not None and not 0.0 <= self.time_of_day < 1440.0:
            raise ManifestError(f"time_of_day {self.time_of_day} outside [0, 1440)")

    @property
    def has_coordinates(self) -> bool:
        return self.latitude is not None and self.longitude is not None


@dataclass(frozen=True)
class ManifestEntry:
    recording_id: str
    audio_path: str
    species_id: int
    metadata: RecordingMetadata


@dataclass
class CorpusManifest:
    """Validated list of recordings plus the number of target classes."""

    entries: list[ManifestEntry]
    num_species: int

    def __post_init__(self):
        if self.num_species < 1:
            raise ManifestError("num_species must be >= 1")
        seen = set()
        for e in self.entries:
            if e.recording_id in seen:
                raise ManifestError(f"duplicate recording_id {e.recording_id!r}")
            seen.add(e.recording_id)
            if not e.audio_path:
                raise ManifestError(f"empty audio_path for {e.recording_id!r}")
            if not 0 <= e.species_id < self.num_species:
                raise ManifestError(
                    f"species_id {e.species_id} of {e.recording_id!r} "
                    f"outside 0..{self.num_species - 1}")

    def __len__(self) -> int:
        return len(self.entries)

    def by_id(self, recording_id: str) -> ManifestEntry:
        for e in self.entries:
            if e.recording_id == recording_id:
                return e
        raise KeyError(recording_id)

    def species_to_ids(self) -> dict[int, list[str]]:
        out: dict[int, list[str]] = {s: [] for s in range(self.num_species)}
        for e in self.entries:
            out[e.species_id].append(e.recording_id)
        return out


@dataclass
class Waveform:
    """Mono audio samples in [-1, 1] at a known sample rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size < 1:
            raise ValueError("waveform must be a non-empty 1-D array")

    def __len__(self) -> int:
        return self.samples.size


def _parse_float(cell: str, name: str, line: int, lo: float, hi: float) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise ManifestError(f"line {line}: {name} {cell!r} is not a number") from None
    if not lo <= value <= hi:
        raise ManifestError(f"line {line}: {name} {value} outside [{lo}, {hi}]")
    return value


def load_manifest(path: str | Path) -> CorpusManifest:
    """Parse and validate a manifest CSV.

    Species ids must form a contiguous 0..num_species-1 range; gaps are
    rejected so that network outputs line up with labels.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    entries: list[ManifestEntry] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError(f"{path}: empty file") from None
        if [h.strip() for h in header] != MANIFEST_COLUMNS:
            raise ManifestError(
                f"{path}: bad header, expected {','.join(MANIFEST_COLUMNS)}")
        for line, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(MANIFEST_COLUMNS):
                raise ManifestError(
                    f"line {line}: expected {len(MANIFEST_COLUMNS)} cells, got {len(row)}")
            rec_id, audio_path, species_raw, lat_c, lon_c, elev_c, date_c, time_c = (
                c.strip() for c in row)
            if not rec_id:
                raise ManifestError(f"line {line}: empty recording_id")
            if not audio_path:
                raise ManifestError(f"line {line}: empty audio_path")
            try:
                species_id = int(species_raw)
            except ValueError:
                raise ManifestError(
                    f"line {line}: species_id {species_raw!r} is not an integer") from None
            if species_id < 0:
                raise ManifestError(f"line {line}: species_id {species_id} is negative")
            lat = _parse_float(lat_c, "latitude", line, -90.0, 90.0) if lat_c else None
            lon = _parse_float(lon_c, "longitude", line, -180.0, 180.0) if lon_c else None
            elev = float(elev_c) if elev_c else None
            date = None
            if date_c:
                try:
                    date = datetime.date.fromisoformat(date_c)
                except ValueError:
                    raise ManifestError(
                        f"line {line}: date {date_c!r} is not YYYY-MM-DD") from None
            tod = None
            if time_c:
                try:
                    parsed = datetime.datetime.strptime(time_c, "%H:%M")
                except ValueError:
                    raise ManifestError(
                        f"line {line}: time {time_c!r} is not HH:MM") from None
                tod = float(parsed.hour * 60 + parsed.minute)
            md = RecordingMetadata(species_id, lat, lon, elev, date, tod)
            entries.append(ManifestEntry(rec_id, audio_path, species_id, md))
    if not entries:
        raise ManifestError(f"{path}: no entries")
    species = sorted({e.species_id for e in entries})
    num_species = species[-1] + 1
    if species != list(range(num_species)):
        raise ManifestError(
            f"non-contiguous species ids: present {species}, "
            f"expected 0..{num_species - 1} without gaps")
    return CorpusManifest(entries, num_species)


def decode_audio(path: str | Path, target_rate: int = DEFAULT_SAMPLE_RATE) -> Waveform:
    """Decode a PCM WAV file to a mono [-1, 1] waveform at ``target_rate``.

    Stereo input is collapsed by channel mean. When the file rate already
    equals the target the samples pass through untouched (no resampling).
    """
    path = Path(path)
    if not path.is_file():
        raise AudioDecodeError(f"audio file not found: {path}")
    try:
        rate, data = wavfile.read(str(path))
    except Exception as exc:
        raise AudioDecodeError(f"{path}: corrupt or unreadable WAV ({exc})") from exc
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise AudioDecodeError(
            f"{path}: unsupported sample format {data.dtype}; "
            "expected 16-bit PCM or 32-bit float")
    if samples.ndim == 2:
        if samples.shape[1] > 2:
            raise AudioDecodeError(f"{path}: {samples.shape[1]} channels, expected <= 2")
        samples = samples.mean(axis=1)
    if samples.size == 0:
        raise AudioDecodeError(f"{path}: file contains no samples")
    if rate != target_rate:
        g = math.gcd(int(target_rate), int(rate))
        samples = resample_poly(samples, target_rate // g, rate // g)
        if samples.size == 0:
            raise AudioDecodeError(f"{path}: too short to resample to {target_rate} Hz")
    samples = np.clip(samples, -1.0, 1.0)
    return Waveform(samples, target_rate)


def build_neighbor_index(manifest: CorpusManifest,
                         box_degrees: float = 1.0) -> dict[str, frozenset[int]]:
    """Map each recording to the other species found within a coordinate box.

    Species B neighbors recording a iff some recording of B lies within
    ``box_degrees`` of a in both latitude and longitude (axis-aligned box,
    no wrap-around at the antimeridian). Recordings without coordinates get
    an empty set.
    """
    with_coords = [e for e in manifest.entries if e.metadata.has_coordinates]
    lats = np.array([e.metadata.latitude for e in with_coords])
    lons = np.array([e.metadata.longitude for e in with_coords])
    specs = np.array([e.species_id for e in with_coords])
    index: dict[str, frozenset[int]] = {}
    for e in manifest.entries:
        if not e.metadata.has_coordinates or len(with_coords) == 0:
            index[e.recording_id] = frozenset()
            continue
        near = (np.abs(lats - e.metadata.latitude) <= box_degrees) & \
               (np.abs(lons - e.metadata.longitude) <= box_degrees)
        index[e.recording_id] = frozenset(specs[near].tolist()) - {e.species_id}
    return index


def split_train_val(manifest: CorpusManifest, val_fraction: float,
                    seed: int) -> tuple[CorpusManifest, CorpusManifest]:
    """Deterministic stratified split into disjoint train/validation manifests.

    Each species contributes round(n * val_fraction) entries to validation;
    classes too small to round to one entry stay entirely in training.
    """
    if not 0.0 <= val_fraction < 1.0:
        raise ValueError(f"val_fraction {val_fraction} outside [0, 1)")
    if not manifest.entries:
        raise ManifestError("cannot split an empty manifest")
    rng = np.random.default_rng(seed)
    train: list[ManifestEntry] = []
    val: list[ManifestEntry] = []
    by_species: dict[int, list[ManifestEntry]] = {}
    for e in manifest.entries:
        by_species.setdefault(e.species_id, []).append(e)
    for species_id in sorted(by_species):
        group = by_species[species_id]
        order = rng.permutation(len(group))
        n_val = int(round(len(group) * val_fraction))
        val.extend(group[i] for i in order[:n_val])
        train.extend(group[i] for i in order[n_val:])
    if not train:
        raise ManifestError(
            f"val_fraction {val_fraction} leaves the training split empty")
    train.sort(key=lambda e: e.recording_id)
    val.sort(key=lambda e: e.recording_id)
    return (CorpusManifest(train, manifest.num_species),
            CorpusManifest(val, manifest.num_species))
