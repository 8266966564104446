"""Batch sampling, the optimization loop, checkpoints, and the epoch log.

Training draws 16 recordings per batch uniformly with replacement, cuts a
random sound-mask segment from each (looping material shorter than a
segment), and runs the augmentation pipeline on it. Every epoch reseeds
its generator from (base seed, epoch index), so a run resumed from a
checkpoint continues exactly as the uninterrupted run would have.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .augment import AugmentConfig, DonorPools, RecordingSource, augment_pipeline
from .corpus import CorpusManifest, ManifestEntry, build_neighbor_index, decode_audio
from .dsp import FeatureConfig
from .errors import CheckpointError, DataError, TrainingDiverged
from .infer import RelevanceJudgment, map_score, predict_recording
from .metadata import SpeciesAttributeStats, compute_species_stats, metadata_vector
from .net import (NetworkConfig, NetworkParams, init_params,
                  loss_and_gradients, sgd_nesterov_step)
from .segmentation import SegmentationConfig, parse_mask_dump, separate_recording

EPOCH_LOG_HEADER = "epoch,mean_loss,val_map,elapsed_s"

# (fft_window, segment_samples) pairs that map a segment onto 512 frames
# at the window/4 hop.
SUPPORTED_FEATURE_PAIRS = ((256, 32768), (512, 65536))


@dataclass(frozen=True)
class TrainingConfig:
    batch_size: int = 16
    fft_window: int = 256
    segment_samples: int = 32768
    sample_rate: int = 22050
    lr: float = 0.001
    momentum: float = 0.9
    epochs: int = 10
    seed: int = 0
    checkpoint_interval: int = 1

    def __post_init__(self):
        if (self.fft_window, self.segment_samples) not in SUPPORTED_FEATURE_PAIRS:
            raise ValueError(
                f"(fft_window, segment_samples) = "
                f"({self.fft_window}, {self.segment_samples}) is not one of "
                f"{SUPPORTED_FEATURE_PAIRS}")
        if self.batch_size < 1 or self.epochs < 0 or self.checkpoint_interval < 1:
            raise ValueError("batch_size/epochs/checkpoint_interval out of range")
        if self.lr <= 0 or not 0.0 <= self.momentum < 1.0:
            raise ValueError("need lr > 0 and momentum in [0, 1)")

    @property
    def feature_config(self) -> FeatureConfig:
        return FeatureConfig(self.fft_window, self.segment_samples,
                             self.sample_rate)


@dataclass
class Batch:
    spectrograms: np.ndarray  # (B, 80, 512)
    metadata: np.ndarray      # (B, 7)
    labels: np.ndarray        # (B,)
    recording_ids: list[str]


@dataclass
class TrainingPools:
    """Everything batch composition needs for one training split."""

    pools: DonorPools
    entries: list[ManifestEntry]
    stats: SpeciesAttributeStats
    num_species: int


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    """One generator per (run seed, epoch), so resumption can rebuild the
    exact stream for any epoch without replaying earlier ones."""
    return np.random.default_rng(np.random.SeedSequence((seed, epoch)))


def build_sources(manifest: CorpusManifest, seg_cfg: SegmentationConfig,
                  sample_rate: int,
                  cache_dir: str | Path | None = None
                  ) -> dict[str, RecordingSource]:
    """Decode every recording and attach its sound/noise masks.

    With a cache directory, masks are read from preprocess dumps (and it
    is an error for one to be missing or stale); otherwise they are
    computed in place.
    """
    sources = {}
    for e in manifest.entries:
        w = decode_audio(e.audio_path, sample_rate)
        if cache_dir is not None:
            mask_path = Path(cache_dir) / f"{e.recording_id}.mask"
            if not mask_path.is_file():
                raise DataError(f"no segmentation cache for {e.recording_id!r} "
                                f"(expected {mask_path})")
            try:
                result = parse_mask_dump(mask_path.read_text())
            except ValueError as exc:
                raise DataError(f"{mask_path}: {exc}") from exc
            if result.num_samples != len(w):
                raise DataError(
                    f"{mask_path}: cached mask covers {result.num_samples} "
                    f"samples but the audio has {len(w)}; re-run preprocess")
        else:
            result = separate_recording(w, seg_cfg)
        sources[e.recording_id] = RecordingSource(
            e.recording_id, e.species_id, w.samples,
            result.sound_mask, result.noise_mask)
    return sources


def build_training_pools(manifest: CorpusManifest,
                         sources: dict[str, RecordingSource]) -> TrainingPools:
    neighbors = build_neighbor_index(manifest)
    split_sources = {e.recording_id: sources[e.recording_id]
                     for e in manifest.entries}
    pools = DonorPools.build(split_sources, neighbors)
    stats = compute_species_stats(manifest)
    return TrainingPools(pools, list(manifest.entries), stats,
                         manifest.num_species)


def compose_batch(tp: TrainingPools, aug_cfg: AugmentConfig,
                  feature_cfg: FeatureConfig, batch_size: int,
                  rng: np.random.Generator) -> Batch:
    """Draw recordings with replacement and build their network inputs.

    Each batch item runs on a spawned child generator, so items could be
    assembled concurrently without changing the result.
    """
    if not tp.entries:
        raise DataError("training split is empty")
    picks = rng.integers(0, len(tp.entries), size=batch_size)
    item_rngs = rng.spawn(batch_size)
    specs = np.empty((batch_size, 80, 512))
    metas = np.empty((batch_size, 7))
    labels = np.empty(batch_size, dtype=int)
    ids = []
    for i, (pick, item_rng) in enumerate(zip(picks, item_rngs)):
        entry = tp.entries[pick]
        mel = augment_pipeline(entry.recording_id, tp.pools, aug_cfg,
                               feature_cfg, item_rng)
        specs[i] = mel.values
        metas[i] = metadata_vector(entry.metadata, tp.stats, item_rng)
        labels[i] = entry.species_id
        ids.append(entry.recording_id)
    return Batch(specs, metas, labels, ids)


def train_epoch(params: NetworkParams, tp: TrainingPools,
                net_cfg: NetworkConfig, train_cfg: TrainingConfig,
                aug_cfg: AugmentConfig, rng: np.random.Generator
                ) -> tuple[NetworkParams, float]:
    """ceil(N/batch) batches of forward/backward/update; mean batch loss."""
    n_batches = math.ceil(len(tp.entries) / train_cfg.batch_size)
    feature_cfg = train_cfg.feature_config
    losses = []
    for b in range(n_batches):
        batch = compose_batch(tp, aug_cfg, feature_cfg,
                              train_cfg.batch_size, rng)
        loss, grads = loss_and_gradients(batch.spectrograms, batch.metadata,
                                         batch.labels, params, net_cfg, rng)
        if not math.isfinite(loss):
            raise TrainingDiverged(
                f"non-finite loss {loss} at batch {b} "
                f"(recordings {batch.recording_ids})")
        sgd_nesterov_step(params, grads, train_cfg.lr, train_cfg.momentum)
        losses.append(loss)
    return params, float(np.mean(losses))


# ---------------------------------------------------------------------------
# Checkpoints: a small versioned binary container. No timestamps anywhere,
# so identical training runs produce byte-identical files.

CHECKPOINT_MAGIC = b"BSCK"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    params: NetworkParams
    network: NetworkConfig
    feature: FeatureConfig
    epoch: int  # number of completed epochs
    seed: int


def _net_config_from_dict(d: dict) -> NetworkConfig:
    d = dict(d)
    d["conv_filters"] = tuple(d["conv_filters"])
    d["input_shape"] = tuple(d["input_shape"])
    return NetworkConfig(**d)


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    names = sorted(ckpt.params.tensors)
    tensors = []
    blobs = []
    for name in names:
        for kind, arr in (("tensor", ckpt.params.tensors[name]),
                          ("velocity", ckpt.params.velocities[name])):
            arr = np.ascontiguousarray(arr)
            le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
            tensors.append([name, kind, le.dtype.str, list(arr.shape)])
            blobs.append(le.tobytes())
    header = json.dumps({
        "network": asdict(ckpt.network),
        "feature": asdict(ckpt.feature),
        "epoch": ckpt.epoch,
        "seed": ckpt.seed,
        "tensors": tensors,
    }, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(CHECKPOINT_VERSION.to_bytes(4, "little"))
        fh.write(len(header).to_bytes(8, "little"))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < 16 or raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version = int.from_bytes(raw[4:8], "little")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {version}")
    header_len = int.from_bytes(raw[8:16], "little")
    offset = 16 + header_len
    if offset > len(raw):
        raise CheckpointError(f"{path}: truncated checkpoint header")
    try:
        header = json.loads(raw[16:offset].decode())
        net_cfg = _net_config_from_dict(header["network"])
        feature = FeatureConfig(**header["feature"])
        epoch, seed = int(header["epoch"]), int(header["seed"])
        entries = list(header["tensors"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint header ({exc})") from exc
    tensors: dict[str, np.ndarray] = {}
    velocities: dict[str, np.ndarray] = {}
    for name, kind, dtype_str, shape in entries:
        dtype = np.dtype(dtype_str)
        nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated checkpoint data")
        arr = np.frombuffer(raw, dtype=dtype, count=int(np.prod(shape, dtype=np.int64)),
                            offset=offset).reshape(shape).copy()
        offset += nbytes
        (tensors if kind == "tensor" else velocities)[name] = arr
    if offset != len(raw):
        raise CheckpointError(f"{path}: trailing bytes after checkpoint data")
    if set(tensors) != set(velocities):
        raise CheckpointError(f"{path}: tensor/velocity sets do not match")
    return Checkpoint(NetworkParams(tensors, velocities), net_cfg, feature,
                      epoch, seed)


# ---------------------------------------------------------------------------
# Run orchestration.

@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    val_map: float | None
    elapsed_s: float

    def as_csv_row(self) -> str:
        val = "" if self.val_map is None else f"{self.val_map:.6f}"
        return f"{self.epoch},{self.mean_loss:.8f},{val},{self.elapsed_s:.3f}"


@dataclass
class TrainingRun:
    checkpoint: Checkpoint
    history: list[EpochRecord] = field(default_factory=list)


def _validation_map(params, net_cfg, feature_cfg, val_manifest,
                    val_sources, stats, seed) -> float:
    predictions = []
    judgments = []
    for i, e in enumerate(val_manifest.entries):
        rng = np.random.default_rng(np.random.SeedSequence((seed, 1, i)))
        meta = metadata_vector(e.metadata, stats, rng)
        samples = val_sources[e.recording_id].samples
        predictions.append(predict_recording(samples, meta, params, net_cfg,
                                             feature_cfg, e.recording_id))
        judgments.append(RelevanceJudgment(e.recording_id, e.species_id))
    return map_score(predictions, judgments)


def run_training(tp: TrainingPools, net_cfg: NetworkConfig,
                 train_cfg: TrainingConfig, aug_cfg: AugmentConfig,
                 checkpoint_dir: str | Path | None = None,
                 log_path: str | Path | None = None,
                 val_manifest: CorpusManifest | None = None,
                 val_sources: dict[str, RecordingSource] | None = None,
                 resume: Checkpoint | None = None) -> TrainingRun:
    """The full loop: epochs of train_epoch, optional per-epoch validation
    MAP, periodic checkpoints, and a CSV log."""
    if resume is not None:
        if resume.network != net_cfg:
            raise CheckpointError(
                "resume checkpoint was trained with a different network config")
        if resume.feature != train_cfg.feature_config:
            raise CheckpointError(
                "resume checkpoint was trained with different feature settings")
        params = resume.params
        start_epoch = resume.epoch
    else:
        params = init_params(net_cfg, np.random.default_rng(
            np.random.SeedSequence((train_cfg.seed, 0))))
        start_epoch = 0
    feature_cfg = train_cfg.feature_config
    log_lines = [EPOCH_LOG_HEADER]
    history = []
    ckpt = Checkpoint(params, net_cfg, feature_cfg, start_epoch, train_cfg.seed)
    for epoch in range(start_epoch, train_cfg.epochs):
        t0 = time.monotonic()
        params, mean_loss = train_epoch(params, tp, net_cfg, train_cfg,
                                        aug_cfg, epoch_rng(train_cfg.seed, epoch))
        val_map = None
        if val_manifest is not None and val_manifest.entries:
            val_map = _validation_map(params, net_cfg, feature_cfg,
                                      val_manifest, val_sources, tp.stats,
                                      train_cfg.seed)
        record = EpochRecord(epoch, mean_loss, val_map,
                             time.monotonic() - t0)
        history.append(record)
        log_lines.append(record.as_csv_row())
        ckpt = Checkpoint(params, net_cfg, feature_cfg, epoch + 1,
                          train_cfg.seed)
        if checkpoint_dir is not None and (
                (epoch + 1 - start_epoch) % train_cfg.checkpoint_interval == 0
                or epoch + 1 == train_cfg.epochs):
            out = Path(checkpoint_dir)
            out.mkdir(parents=True, exist_ok=True)
            save_checkpoint(ckpt, out / f"epoch_{epoch + 1:04d}.ckpt")
        if log_path is not None:
            Path(log_path).write_text("\n".join(log_lines) + "\n")
    return TrainingRun(ckpt, history)
