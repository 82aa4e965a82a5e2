"""Corpus loading, feature preparation, and label rasterization."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io
from .frontend import SEGMENT_SECONDS, AudioClip, extract_features, segment_stream
from .metrics import EventAnnotation


@dataclass
class PreparedCorpus:
    """Features and labels for a corpus directory, ready for train/detect."""

    clip_ids: list[str]
    segments: dict[str, np.ndarray]  # clip_id -> (T, 4, mel) float32
    annotations: dict[str, list[EventAnnotation]]
    durations: dict[str, float]
    class_names: list[str]

    def label_matrix(self, clip_id: str) -> np.ndarray:
        return rasterize_labels(
            self.annotations.get(clip_id, []),
            self.segments[clip_id].shape[0],
            self.class_names,
        )

    def training_clips(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [(self.segments[cid], self.label_matrix(cid)) for cid in self.clip_ids]


def _merge_intervals(intervals):
    merged = []
    for lo, hi in sorted(intervals):
        if merged and lo <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], hi))
        else:
            merged.append((lo, hi))
    return merged


def rasterize_labels(
    annotations: list[EventAnnotation],
    num_segments: int,
    class_names: list[str],
    segment_seconds: float = SEGMENT_SECONDS,
) -> np.ndarray:
    """Binary (T, K) labels: a segment is positive for a class when at least
    half of its span overlaps that class's events."""
    labels = np.zeros((num_segments, len(class_names)), dtype=np.int8)
    index = {name: k for k, name in enumerate(class_names)}
    by_class: dict[int, list[tuple[float, float]]] = {}
    for ev in annotations:
        if ev.class_name not in index:
            raise ValueError(f"annotation class {ev.class_name!r} not in {class_names}")
        by_class.setdefault(index[ev.class_name], []).append((ev.onset, ev.offset))
    starts = np.arange(num_segments) * segment_seconds
    for k, intervals in by_class.items():
        overlap = np.zeros(num_segments)
        for lo, hi in _merge_intervals(intervals):
            overlap += np.clip(
                np.minimum(hi, starts + segment_seconds) - np.maximum(lo, starts), 0.0, None
            )
        labels[:, k] = overlap >= 0.5 * segment_seconds
    return labels


def load_corpus(corpus_dir, clip_limit: int | None = None) -> PreparedCorpus:
    """Read a corpus directory (manifest.csv, labels.tsv, classes.txt,
    audio/) and extract features for every clip."""
    root = Path(corpus_dir)
    manifest_path = root / "manifest.csv"
    if not manifest_path.exists():
        raise FileNotFoundError(f"no manifest.csv under {root}")
    manifest = io.read_manifest(manifest_path)
    if clip_limit is not None:
        manifest = manifest[:clip_limit]

    labels_path = root / "labels.tsv"
    annotations: dict[str, list[EventAnnotation]] = {}
    if labels_path.exists():
        for clip_id, onset, offset, label in io.read_strong_labels(labels_path):
            annotations.setdefault(clip_id, []).append(
                EventAnnotation(class_name=label, onset=onset, offset=offset)
            )

    classes_path = root / "classes.txt"
    if classes_path.exists():
        class_names = [line for line in classes_path.read_text().splitlines() if line]
    else:
        class_names = sorted({ev.class_name for evs in annotations.values() for ev in evs})

    clip_ids = []
    segments = {}
    durations = {}
    for clip_id, rel_path, duration in manifest:
        samples, rate = io.read_wav(root / rel_path)
        mel = extract_features(AudioClip(samples=samples, sample_rate=rate))
        clip_ids.append(clip_id)
        segments[clip_id] = segment_stream(mel).astype(np.float32)
        durations[clip_id] = duration
    return PreparedCorpus(
        clip_ids=clip_ids,
        segments=segments,
        annotations={cid: annotations.get(cid, []) for cid in clip_ids},
        durations=durations,
        class_names=class_names,
    )
