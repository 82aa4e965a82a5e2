"""Synthetic corpus: determinism, annotation validity, learnability oracles."""

import hashlib

import numpy as np
import pytest

from evsed.data import load_corpus, rasterize_labels
from evsed.frontend import FMAX_HZ, N_MELS, extract_features, hz_to_mel, segment_stream
from evsed.synthgen import (
    ConfigError,
    SynthConfig,
    class_band,
    generate_corpus,
    synthesize_clip,
)


def mel_band_indices(lo, hi):
    edges = np.linspace(hz_to_mel(0.0), hz_to_mel(FMAX_HZ), N_MELS + 2)
    centers = edges[1:-1]
    return np.flatnonzero((centers >= hz_to_mel(lo)) & (centers <= hz_to_mel(hi)))


def band_log_energy(segments, k):
    idx = mel_band_indices(*class_band(k))
    return segments[:, :, idx].mean(axis=(1, 2))


class TestConfigValidation:
    def test_overlong_event_duration_names_field(self):
        with pytest.raises(ConfigError, match="event_duration"):
            SynthConfig(clip_seconds=2.0, event_duration=(0.5, 3.0))

    def test_too_many_classes(self):
        with pytest.raises(ConfigError, match="num_classes"):
            SynthConfig(num_classes=11)

    def test_bad_event_count_range(self):
        with pytest.raises(ConfigError, match="events_per_clip"):
            SynthConfig(events_per_clip=(4, 1))

    def test_bad_polyphony(self):
        with pytest.raises(ConfigError, match="polyphony"):
            SynthConfig(polyphony_max=0)


class TestDeterminism:
    def test_clip_synthesis_is_reproducible(self):
        cfg = SynthConfig(clips=1, seed=42)
        a_clip, a_ann = synthesize_clip(cfg, 3)
        b_clip, b_ann = synthesize_clip(cfg, 3)
        np.testing.assert_array_equal(a_clip.samples, b_clip.samples)
        assert a_ann == b_ann

    def test_clip_index_changes_content(self):
        cfg = SynthConfig(clips=2, seed=42)
        a_clip, _ = synthesize_clip(cfg, 0)
        b_clip, _ = synthesize_clip(cfg, 1)
        assert not np.array_equal(a_clip.samples, b_clip.samples)

    def test_corpus_files_byte_identical_across_runs(self, tmp_path):
        cfg = SynthConfig(clips=3, clip_seconds=2.0, seed=9)
        generate_corpus(cfg, tmp_path / "a")
        generate_corpus(cfg, tmp_path / "b")
        for rel in ("manifest.csv", "labels.tsv", "classes.txt", "audio/clip_00001.wav"):
            ha = hashlib.sha256((tmp_path / "a" / rel).read_bytes()).hexdigest()
            hb = hashlib.sha256((tmp_path / "b" / rel).read_bytes()).hexdigest()
            assert ha == hb, rel


class TestCorpusContents:
    def test_no_events_means_pure_background(self):
        cfg = SynthConfig(clips=1, clip_seconds=2.0, events_per_clip=(0, 0), seed=1)
        clip, annotations = synthesize_clip(cfg, 0)
        assert annotations == []
        assert clip.duration == pytest.approx(2.0)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_annotations_valid_and_polyphony_bounded(self, seed):
        cfg = SynthConfig(
            clips=1, clip_seconds=6.0, events_per_clip=(6, 10), polyphony_max=2, seed=seed
        )
        _, annotations = synthesize_clip(cfg, 0)
        for ev in annotations:
            assert 0.0 <= ev.onset < ev.offset <= cfg.clip_seconds
        grid = np.linspace(0.0, cfg.clip_seconds, 2400)
        concurrency = np.zeros_like(grid)
        for ev in annotations:
            concurrency += (grid > ev.onset) & (grid < ev.offset)
        assert concurrency.max() <= cfg.polyphony_max

    def test_generate_corpus_layout(self, tmp_path):
        cfg = SynthConfig(clips=4, clip_seconds=2.0, seed=3)
        rows = generate_corpus(cfg, tmp_path)
        assert len(rows) == 4
        assert (tmp_path / "manifest.csv").exists()
        assert (tmp_path / "labels.tsv").exists()
        classes = (tmp_path / "classes.txt").read_text().split()
        assert classes == [f"class{k}" for k in range(4)]
        corpus = load_corpus(tmp_path)
        assert corpus.clip_ids == [f"clip_{i:05d}" for i in range(4)]
        for cid in corpus.clip_ids:
            assert corpus.segments[cid].shape[1:] == (4, 128)

    def test_default_class_bands_are_disjoint(self):
        bands = sorted(class_band(k) for k in range(4))
        for (lo1, hi1), (lo2, hi2) in zip(bands[:-1], bands[1:]):
            assert hi1 < lo2


class TestLearnabilityOracles:
    def aggregate(self, cfg, clips):
        feats, labels = [], []
        names = cfg.class_names()
        for i in range(clips):
            clip, annotations = synthesize_clip(cfg, i)
            segments = segment_stream(extract_features(clip))
            feats.append(segments)
            labels.append(rasterize_labels(annotations, segments.shape[0], names))
        return np.concatenate(feats), np.concatenate(labels)

    def test_events_lift_band_energy_by_6db(self):
        cfg = SynthConfig(
            num_classes=4, clips=6, clip_seconds=6.0, snr_db=(10.0, 10.0),
            events_per_clip=(2, 4), seed=17,
        )
        segments, labels = self.aggregate(cfg, 6)
        for k in range(4):
            active = labels[:, k] == 1
            assert active.any(), f"class{k} never active in oracle corpus"
            energy = band_log_energy(segments, k)
            delta_db = (energy[active].mean() - energy[~active].mean()) * 10.0 / np.log(10.0)
            assert delta_db >= 6.0, f"class{k}: {delta_db:.2f} dB"

    def test_trivial_band_classifier_exceeds_90_percent(self):
        cfg = SynthConfig(num_classes=4, clips=8, clip_seconds=6.0, seed=23)
        segments, labels = self.aggregate(cfg, 8)
        correct = 0
        total = 0
        for k in range(4):
            energy = band_log_energy(segments, k)
            active = labels[:, k] == 1
            threshold = 0.5 * (energy[active].mean() + energy[~active].mean())
            predictions = energy > threshold
            correct += int((predictions == active).sum())
            total += active.size
        assert correct / total > 0.9
