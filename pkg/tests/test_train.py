"""Training loop tests: batching, checkpoints, resumption, determinism."""
import numpy as np
import pytest

from birdsongid.augment import AugmentConfig, RecordingSource
from birdsongid.corpus import (CorpusManifest, ManifestEntry,
                               RecordingMetadata, decode_audio, load_manifest)
from birdsongid.dsp import FeatureConfig
from birdsongid.errors import CheckpointError, DataError, TrainingDiverged
from birdsongid.net import NetworkConfig, NetworkParams, init_params
from birdsongid.segmentation import (SegmentationConfig, format_mask_dump,
                                     separate_recording)
from birdsongid.train import (Checkpoint, TrainingConfig, build_sources,
                              build_training_pools, compose_batch, epoch_rng,
                              load_checkpoint, run_training, save_checkpoint,
                              train_epoch)

TINY_NET = NetworkConfig(num_classes=2, conv_filters=(2, 2, 2, 2),
                         metadata_units=4, head_units=8,
                         dropout_input=0.0, dropout_flatten=0.0,
                         dropout_head=0.0)
NO_AUG = AugmentConfig.disabled()


def make_pools(num_species=2, per_species=3, seed=0, n_samples=3000):
    """In-memory corpus: no files, short looping material."""
    rng = np.random.default_rng(seed)
    entries = []
    sources = {}
    for s in range(num_species):
        for k in range(per_species):
            rid = f"s{s}r{k}"
            meta = RecordingMetadata(
                species_id=s, latitude=10.0 + s, longitude=20.0 + s,
                elevation=300.0, date=None, time_of_day=600.0)
            entries.append(ManifestEntry(rid, f"{rid}.wav", s, meta))
            samples = rng.uniform(-0.5, 0.5, n_samples)
            sound = np.arange(n_samples) % 2 == 0
            sources[rid] = RecordingSource(rid, s, samples, sound, ~sound)
    manifest = CorpusManifest(entries, num_species)
    return build_training_pools(manifest, sources), manifest, sources


class TestTrainingConfig:
    def test_feature_pair_validation(self):
        TrainingConfig(fft_window=512, segment_samples=65536)
        with pytest.raises(ValueError):
            TrainingConfig(fft_window=256, segment_samples=65536)
        with pytest.raises(ValueError):
            TrainingConfig(fft_window=300, segment_samples=32768)

    def test_scalar_validation(self):
        with pytest.raises(ValueError):
            TrainingConfig(batch_size=0)
        with pytest.raises(ValueError):
            TrainingConfig(lr=0.0)
        with pytest.raises(ValueError):
            TrainingConfig(momentum=1.0)
        with pytest.raises(ValueError):
            TrainingConfig(epochs=-1)
        with pytest.raises(ValueError):
            TrainingConfig(checkpoint_interval=0)

    def test_feature_config_property(self):
        cfg = TrainingConfig().feature_config
        assert cfg == FeatureConfig(256, 32768, 22050)


class TestEpochRng:
    def test_deterministic_per_seed_epoch(self):
        a = epoch_rng(7, 3).random(5)
        b = epoch_rng(7, 3).random(5)
        np.testing.assert_array_equal(a, b)

    def test_distinct_across_epochs_and_seeds(self):
        base = epoch_rng(7, 3).random(5)
        assert not np.array_equal(base, epoch_rng(7, 4).random(5))
        assert not np.array_equal(base, epoch_rng(8, 3).random(5))


class TestComposeBatch:
    FEAT = FeatureConfig(256, 32768, 22050)

    def test_shapes_and_ranges(self):
        tp, _, _ = make_pools()
        batch = compose_batch(tp, NO_AUG, self.FEAT, 4, np.random.default_rng(1))
        assert batch.spectrograms.shape == (4, 80, 512)
        assert batch.metadata.shape == (4, 7)
        assert batch.labels.shape == (4,)
        assert len(batch.recording_ids) == 4
        assert batch.spectrograms.min() >= 0.0
        assert batch.spectrograms.max() <= 1.0
        assert set(batch.labels) <= {0, 1}
        known = {e.recording_id for e in tp.entries}
        assert set(batch.recording_ids) <= known

    def test_reproducible_from_equal_rng(self):
        tp, _, _ = make_pools()
        a = compose_batch(tp, AugmentConfig(), self.FEAT, 3,
                          np.random.default_rng(2))
        b = compose_batch(tp, AugmentConfig(), self.FEAT, 3,
                          np.random.default_rng(2))
        np.testing.assert_array_equal(a.spectrograms, b.spectrograms)
        np.testing.assert_array_equal(a.metadata, b.metadata)
        np.testing.assert_array_equal(a.labels, b.labels)
        assert a.recording_ids == b.recording_ids

    def test_seed_changes_selection(self):
        tp, _, _ = make_pools()
        a = compose_batch(tp, NO_AUG, self.FEAT, 6, np.random.default_rng(3))
        b = compose_batch(tp, NO_AUG, self.FEAT, 6, np.random.default_rng(4))
        assert not np.array_equal(a.spectrograms, b.spectrograms)

    def test_labels_match_ids(self):
        tp, manifest, _ = make_pools()
        batch = compose_batch(tp, NO_AUG, self.FEAT, 8, np.random.default_rng(5))
        for rid, label in zip(batch.recording_ids, batch.labels):
            assert manifest.by_id(rid).species_id == label

    def test_empty_split_rejected(self):
        tp, _, _ = make_pools()
        tp.entries = []
        with pytest.raises(DataError):
            compose_batch(tp, NO_AUG, self.FEAT, 2, np.random.default_rng(6))


class TestBuildSources:
    SEG = SegmentationConfig()

    def test_inline_masks(self, tiny_corpus):
        manifest = load_manifest(tiny_corpus.manifest_path)
        sources = build_sources(manifest, self.SEG, 22050)
        assert set(sources) == {e.recording_id for e in manifest.entries}
        for e in manifest.entries:
            src = sources[e.recording_id]
            assert src.species_id == e.species_id
            assert src.sound_mask.size == src.samples.size
            assert not (src.sound_mask & src.noise_mask).any()

    def test_cache_hit_equals_inline(self, tiny_corpus, tmp_path):
        manifest = load_manifest(tiny_corpus.manifest_path)
        inline = build_sources(manifest, self.SEG, 22050)
        for rid in inline:
            w = decode_audio(manifest.by_id(rid).audio_path, 22050)
            result = separate_recording(w, self.SEG)
            (tmp_path / f"{rid}.mask").write_text(format_mask_dump(result))
        cached = build_sources(manifest, self.SEG, 22050, cache_dir=tmp_path)
        for rid in inline:
            np.testing.assert_array_equal(cached[rid].sound_mask,
                                          inline[rid].sound_mask)
            np.testing.assert_array_equal(cached[rid].noise_mask,
                                          inline[rid].noise_mask)

    def test_missing_cache_entry_rejected(self, tiny_corpus, tmp_path):
        manifest = load_manifest(tiny_corpus.manifest_path)
        with pytest.raises(DataError, match="no segmentation cache"):
            build_sources(manifest, self.SEG, 22050, cache_dir=tmp_path)

    def test_stale_cache_rejected(self, tiny_corpus, tmp_path):
        manifest = load_manifest(tiny_corpus.manifest_path)
        from birdsongid.segmentation import SegmentationResult
        stale = SegmentationResult(np.ones(10, bool), np.zeros(10, bool), 1.0)
        for e in manifest.entries:
            (tmp_path / f"{e.recording_id}.mask").write_text(
                format_mask_dump(stale))
        with pytest.raises(DataError, match="re-run preprocess"):
            build_sources(manifest, self.SEG, 22050, cache_dir=tmp_path)


class TestTrainEpoch:
    def test_batch_count_and_finite_loss(self):
        tp, _, _ = make_pools(per_species=3)  # 6 recordings
        cfg = TrainingConfig(batch_size=4, epochs=1, seed=3)
        params = init_params(TINY_NET, np.random.default_rng(0))
        before = {k: v.copy() for k, v in params.tensors.items()}
        params, mean_loss = train_epoch(params, tp, TINY_NET, cfg, NO_AUG,
                                        epoch_rng(3, 0))
        assert np.isfinite(mean_loss)
        assert any(not np.array_equal(before[k], params.tensors[k])
                   for k in before)

    def test_divergence_detected(self):
        tp, _, _ = make_pools()
        cfg = TrainingConfig(batch_size=4, epochs=1, seed=3)
        params = init_params(TINY_NET, np.random.default_rng(0))
        params.tensors["out_b"][:] = np.inf
        with pytest.raises(TrainingDiverged), np.errstate(invalid="ignore"):
            train_epoch(params, tp, TINY_NET, cfg, NO_AUG, epoch_rng(3, 0))


class TestCheckpointRoundtrip:
    def make(self, seed=0, dtype=np.float32):
        params = init_params(TINY_NET, np.random.default_rng(seed), dtype)
        params.velocities["head_w"][:] = 0.25
        return Checkpoint(params, TINY_NET, FeatureConfig(256, 32768, 22050),
                          epoch=4, seed=11)

    def test_roundtrip(self, tmp_path):
        ckpt = self.make()
        path = tmp_path / "a.ckpt"
        save_checkpoint(ckpt, path)
        back = load_checkpoint(path)
        assert back.network == TINY_NET
        assert back.feature == ckpt.feature
        assert back.epoch == 4 and back.seed == 11
        for k in ckpt.params.tensors:
            np.testing.assert_array_equal(back.params.tensors[k],
                                          ckpt.params.tensors[k])
            np.testing.assert_array_equal(back.params.velocities[k],
                                          ckpt.params.velocities[k])
            assert back.params.tensors[k].dtype == ckpt.params.tensors[k].dtype

    def test_roundtrip_float64(self, tmp_path):
        ckpt = self.make(dtype=np.float64)
        save_checkpoint(ckpt, tmp_path / "b.ckpt")
        back = load_checkpoint(tmp_path / "b.ckpt")
        assert back.params.tensors["out_w"].dtype == np.float64

    def test_identical_saves_are_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(self.make(), a)
        save_checkpoint(self.make(), b)
        assert a.read_bytes() == b.read_bytes()

    def test_corrupted_magic(self, tmp_path):
        path = tmp_path / "c.ckpt"
        save_checkpoint(self.make(), path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="not a checkpoint"):
            load_checkpoint(path)

    def test_bad_version(self, tmp_path):
        path = tmp_path / "d.ckpt"
        save_checkpoint(self.make(), path)
        raw = bytearray(path.read_bytes())
        raw[4:8] = (99).to_bytes(4, "little")
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_truncation(self, tmp_path):
        path = tmp_path / "e.ckpt"
        save_checkpoint(self.make(), path)
        raw = path.read_bytes()
        path.write_bytes(raw[:len(raw) - 40])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_trailing_bytes(self, tmp_path):
        path = tmp_path / "f.ckpt"
        save_checkpoint(self.make(), path)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(CheckpointError, match="trailing"):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError, match="cannot read"):
            load_checkpoint(tmp_path / "nope.ckpt")


class TestRunTraining:
    CFG = TrainingConfig(batch_size=4, epochs=2, seed=5,
                         checkpoint_interval=1)

    def test_files_and_history(self, tmp_path):
        tp, manifest, sources = make_pools()
        run = run_training(tp, TINY_NET, self.CFG, NO_AUG,
                           checkpoint_dir=tmp_path / "ckpt",
                           log_path=tmp_path / "log.csv",
                           val_manifest=manifest, val_sources=sources)
        assert [r.epoch for r in run.history] == [0, 1]
        assert run.checkpoint.epoch == 2
        names = sorted(p.name for p in (tmp_path / "ckpt").iterdir())
        assert names == ["epoch_0001.ckpt", "epoch_0002.ckpt"]
        lines = (tmp_path / "log.csv").read_text().splitlines()
        assert lines[0] == "epoch,mean_loss,val_map,elapsed_s"
        assert len(lines) == 3
        val = float(lines[1].split(",")[2])
        assert 0.0 <= val <= 1.0
        assert all(0.0 <= r.val_map <= 1.0 for r in run.history)

    def test_no_validation_leaves_column_empty(self, tmp_path):
        tp, _, _ = make_pools()
        run = run_training(tp, TINY_NET, self.CFG, NO_AUG,
                           log_path=tmp_path / "log.csv")
        assert all(r.val_map is None for r in run.history)
        assert (tmp_path / "log.csv").read_text().splitlines()[1].split(",")[2] == ""

    def test_resume_continues_exactly(self, tmp_path):
        tp, _, _ = make_pools()
        full = run_training(tp, TINY_NET, self.CFG, NO_AUG,
                            checkpoint_dir=tmp_path / "full")
        cfg1 = TrainingConfig(batch_size=4, epochs=1, seed=5)
        run_training(tp, TINY_NET, cfg1, NO_AUG, checkpoint_dir=tmp_path / "half")
        mid = load_checkpoint(tmp_path / "half" / "epoch_0001.ckpt")
        resumed = run_training(tp, TINY_NET, self.CFG, NO_AUG, resume=mid)
        assert resumed.checkpoint.epoch == 2
        for k, v in full.checkpoint.params.tensors.items():
            np.testing.assert_array_equal(resumed.checkpoint.params.tensors[k], v)

    def test_resume_rejects_other_network(self):
        tp, _, _ = make_pools()
        other = NetworkConfig(num_classes=2, conv_filters=(2, 2, 2, 4),
                              metadata_units=4, head_units=8)
        params = init_params(other, np.random.default_rng(0))
        ckpt = Checkpoint(params, other, self.CFG.feature_config, 1, 5)
        with pytest.raises(CheckpointError, match="network config"):
            run_training(tp, TINY_NET, self.CFG, NO_AUG, resume=ckpt)

    def test_resume_rejects_other_features(self):
        tp, _, _ = make_pools()
        params = init_params(TINY_NET, np.random.default_rng(0))
        ckpt = Checkpoint(params, TINY_NET, FeatureConfig(512, 65536, 22050),
                          1, 5)
        with pytest.raises(CheckpointError, match="feature"):
            run_training(tp, TINY_NET, self.CFG, NO_AUG, resume=ckpt)

    def test_two_runs_identical(self, tmp_path):
        tp, _, _ = make_pools()
        a = run_training(tp, TINY_NET, self.CFG, NO_AUG,
                         checkpoint_dir=tmp_path / "a")
        b = run_training(tp, TINY_NET, self.CFG, NO_AUG,
                         checkpoint_dir=tmp_path / "b")
        assert (tmp_path / "a" / "epoch_0002.ckpt").read_bytes() == \
               (tmp_path / "b" / "epoch_0002.ckpt").read_bytes()
        assert [r.mean_loss for r in a.history] == [r.mean_loss for r in b.history]

    def test_checkpoint_interval_still_writes_final(self, tmp_path):
        tp, _, _ = make_pools()
        cfg = TrainingConfig(batch_size=4, epochs=3, seed=5,
                             checkpoint_interval=2)
        run_training(tp, TINY_NET, cfg, NO_AUG, checkpoint_dir=tmp_path / "c")
        names = sorted(p.name for p in (tmp_path / "c").iterdir())
        assert names == ["epoch_0002.ckpt", "epoch_0003.ckpt"]
