"""Bird-song identification from field recordings.

Sound/noise segmentation by median clipping, stochastic augmentation,
solar-position metadata features, a small multi-modal convolutional
network in plain numpy, overlap-averaged inference with run ensembling,
and mean-average-precision evaluation.
"""
from .augment import (AugmentConfig, DonorPools, RecordingSource,
                      augment_pipeline, random_cut)
from .config import RunConfig, load_run_config
from .corpus import (CorpusManifest, ManifestEntry, RecordingMetadata,
                     Waveform, build_neighbor_index, decode_audio,
                     load_manifest, split_train_val)
from .dsp import (FeatureConfig, MelSpectrogram, Spectrogram,
                  mel_spectrogram, segment_features, stft)
from .errors import (AudioDecodeError, BirdsongError, CheckpointError,
                     ConfigError, DataError, ManifestError, TrainingDiverged)
from .estimators import BirdSongClassifier, MetadataVectorizer, SoundSegmenter
from .infer import (Prediction, RelevanceJudgment, average_precision,
                    ensemble_average, map_score, predict_recording,
                    segment_recording)
from .metadata import (DayPart, SpeciesAttributeStats, classify_day_part,
                       compute_species_stats, metadata_vector,
                       sun_event_times)
from .net import (NetworkConfig, NetworkParams, forward, init_params,
                  loss_and_gradients, sgd_nesterov_step)
from .segmentation import (SegmentationConfig, SegmentationResult,
                           separate_recording)
from .train import (Checkpoint, TrainingConfig, TrainingPools, compose_batch,
                    load_checkpoint, run_training, save_checkpoint,
                    train_epoch)

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig", "DonorPools", "RecordingSource", "augment_pipeline",
    "random_cut", "RunConfig", "load_run_config", "CorpusManifest",
    "ManifestEntry", "RecordingMetadata", "Waveform", "build_neighbor_index",
    "decode_audio", "load_manifest", "split_train_val", "FeatureConfig",
    "MelSpectrogram", "Spectrogram", "mel_spectrogram", "segment_features",
    "stft", "AudioDecodeError", "BirdsongError", "CheckpointError",
    "ConfigError", "DataError", "ManifestError", "TrainingDiverged",
    "BirdSongClassifier", "MetadataVectorizer", "SoundSegmenter",
    "Prediction", "RelevanceJudgment", "average_precision",
    "ensemble_average", "map_score", "predict_recording", "segment_recording",
    "DayPart", "SpeciesAttributeStats", "classify_day_part",
    "compute_species_stats", "metadata_vector", "sun_event_times",
    "NetworkConfig", "NetworkParams", "forward", "init_params",
    "loss_and_gradients", "sgd_nesterov_step", "SegmentationConfig",
    "SegmentationResult", "separate_recording", "Checkpoint",
    "TrainingConfig", "TrainingPools", "compose_batch", "load_checkpoint",
    "run_training", "save_checkpoint", "train_epoch",
]
