"""Scikit-learn style wrappers over the pipeline.

SoundSegmenter is a stateless transformer (waveforms to sound/noise
masks), MetadataVectorizer a fitted transformer (manifest statistics to
7-element feature vectors), and BirdSongClassifier the end-to-end model.
All follow the estimator protocol: keyword-only constructor state,
get_params/set_params, fit returning self, and trailing-underscore
fitted attributes.

The data objects are domain types rather than flat arrays: fit takes a
CorpusManifest (audio paths plus labels and side information), transform
and predict take the corresponding domain inputs.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .augment import AugmentConfig
from .corpus import CorpusManifest, decode_audio, split_train_val
from .metadata import compute_species_stats, metadata_vector
from .net import NetworkConfig
from .segmentation import SegmentationConfig, SegmentationResult, separate_recording
from .train import (TrainingConfig, build_sources, build_training_pools,
                    run_training)
from .infer import predict_recording


def _check_fitted(estimator, attribute: str):
    if not hasattr(estimator, attribute):
        raise NotFittedError(
            f"{type(estimator).__name__} must be fitted first")


class SoundSegmenter(BaseEstimator, TransformerMixin):
    """Transformer from waveforms to per-sample sound/noise masks."""

    def __init__(self, sound_factor=3.0, noise_factor=2.5, struct_size=4,
                 indicator_dilations=2, threshold_step=0.1,
                 min_sound_samples=32768, window_size=512, hop=133):
        self.sound_factor = sound_factor
        self.noise_factor = noise_factor
        self.struct_size = struct_size
        self.indicator_dilations = indicator_dilations
        self.threshold_step = threshold_step
        self.min_sound_samples = min_sound_samples
        self.window_size = window_size
        self.hop = hop

    def _config(self) -> SegmentationConfig:
        return SegmentationConfig(
            sound_factor=self.sound_factor, noise_factor=self.noise_factor,
            struct_size=self.struct_size,
            indicator_dilations=self.indicator_dilations,
            threshold_step=self.threshold_step,
            min_sound_samples=self.min_sound_samples,
            window_size=self.window_size, hop=self.hop)

    def fit(self, X=None, y=None):
        self._config()  # validates the parameter combination
        return self

    def transform(self, X) -> list[SegmentationResult]:
        """X: iterable of Waveform."""
        cfg = self._config()
        return [separate_recording(w, cfg) for w in X]


class MetadataVectorizer(BaseEstimator, TransformerMixin):
    """Fits per-species attribute statistics, then turns recording
    metadata into the 7-element network input (missing values imputed
    from the fitted distributions)."""

    def __init__(self, seed=0):
        self.seed = seed

    def fit(self, X: CorpusManifest, y=None):
        self.stats_ = compute_species_stats(X)
        return self

    def transform(self, X) -> np.ndarray:
        """X: sequence of RecordingMetadata. Imputation draws are seeded
        per item, so transform is deterministic for a given estimator."""
        _check_fitted(self, "stats_")
        rows = []
        for i, md in enumerate(X):
            rng = np.random.default_rng(np.random.SeedSequence((self.seed, 3, i)))
            rows.append(metadata_vector(md, self.stats_, rng))
        return np.array(rows).reshape(len(rows), 7)


class BirdSongClassifier(BaseEstimator):
    """End-to-end model: fit segments, augments and trains on a manifest;
    predict averages segment probabilities over whole recordings."""

    def __init__(self, conv_filters=(64, 64, 128, 128), metadata_units=100,
                 head_units=512, dropout_input=0.2, dropout_flatten=0.4,
                 dropout_head=0.4, fft_window=256, segment_samples=32768,
                 sample_rate=22050, batch_size=16, lr=0.001, momentum=0.9,
                 epochs=10, augment=True, val_fraction=0.0, seed=0):
        self.conv_filters = conv_filters
        self.metadata_units = metadata_units
        self.head_units = head_units
        self.dropout_input = dropout_input
        self.dropout_flatten = dropout_flatten
        self.dropout_head = dropout_head
        self.fft_window = fft_window
        self.segment_samples = segment_samples
        self.sample_rate = sample_rate
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.epochs = epochs
        self.augment = augment
        self.val_fraction = val_fraction
        self.seed = seed

    def _augment_config(self) -> AugmentConfig:
        if isinstance(self.augment, AugmentConfig):
            return self.augment
        return AugmentConfig() if self.augment else AugmentConfig.disabled()

    def _training_config(self) -> TrainingConfig:
        return TrainingConfig(
            batch_size=self.batch_size, fft_window=self.fft_window,
            segment_samples=self.segment_samples,
            sample_rate=self.sample_rate, lr=self.lr, momentum=self.momentum,
            epochs=self.epochs, seed=self.seed)

    def fit(self, X: CorpusManifest, y=None):
        """Train on all recordings of the manifest (labels come from it);
        a positive val_fraction holds out a per-species validation split
        scored by MAP each epoch."""
        manifest = X
        training = self._training_config()
        net_cfg = NetworkConfig(
            num_classes=manifest.num_species,
            conv_filters=tuple(self.conv_filters),
            metadata_units=self.metadata_units, head_units=self.head_units,
            dropout_input=self.dropout_input,
            dropout_flatten=self.dropout_flatten,
            dropout_head=self.dropout_head)
        train_manifest, val_manifest = split_train_val(
            manifest, self.val_fraction, self.seed)
        sources = build_sources(manifest, SegmentationConfig(),
                                self.sample_rate)
        tp = build_training_pools(train_manifest, sources)
        run = run_training(
            tp, net_cfg, training, self._augment_config(),
            val_manifest=val_manifest if val_manifest.entries else None,
            val_sources=sources)
        self.checkpoint_ = run.checkpoint
        self.history_ = run.history
        self.stats_ = tp.stats
        self.classes_ = np.arange(manifest.num_species)
        return self

    def predict_proba(self, X: CorpusManifest) -> np.ndarray:
        """Per-recording class probabilities, (n_recordings, n_classes)."""
        _check_fitted(self, "checkpoint_")
        ckpt = self.checkpoint_
        rows = []
        for i, entry in enumerate(X.entries):
            w = decode_audio(entry.audio_path, ckpt.feature.sample_rate)
            rng = np.random.default_rng(np.random.SeedSequence((self.seed, 4, i)))
            meta = metadata_vector(entry.metadata, self.stats_, rng)
            rows.append(predict_recording(w.samples, meta, ckpt.params,
                                          ckpt.network, ckpt.feature,
                                          entry.recording_id).probabilities)
        return np.array(rows).reshape(len(rows), ckpt.network.num_classes)

    def predict(self, X: CorpusManifest) -> np.ndarray:
        probabilities = self.predict_proba(X)
        return self.classes_[np.argmax(probabilities, axis=1)]
