"""On-disk formats: WAV clips, feature matrices, strong labels, manifests,
detection logs, and model checkpoints.

All writers emit deterministic bytes for identical inputs; several
reproducibility tests hash the files directly.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np
from scipy.io import wavfile

MATRIX_MAGIC = b"EVSM"
MATRIX_DTYPE_F32 = 0

CHECKPOINT_MAGIC = b"PENET1"

DETECTION_LOG_COLUMNS = ("stream_id", "segment_index", "class", "decision", "b", "d", "u", "p")
STRONG_LABEL_COLUMNS = ("filename", "onset", "offset", "event_label")
MANIFEST_COLUMNS = ("clip_id", "path", "duration")


# ---------------------------------------------------------------------------
# WAV audio
# ---------------------------------------------------------------------------

def read_wav(path) -> tuple[np.ndarray, int]:
    """Read a WAV file to mono float64 samples in [-1, 1] plus sample rate.

    Accepts 16-bit PCM and 32/64-bit float; multi-channel input is downmixed
    by averaging.
    """
    rate, data = wavfile.read(str(path))
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise ValueError(f"unsupported WAV sample format {data.dtype} in {path}")
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    return samples, int(rate)


def write_wav(path, samples: np.ndarray, sample_rate: int) -> None:
    """Write mono samples in [-1, 1] as 16-bit PCM."""
    clipped = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    pcm = np.round(clipped * 32767.0).astype(np.int16)
    wavfile.write(str(path), sample_rate, pcm)


# ---------------------------------------------------------------------------
# Feature matrix dumps: 16-byte header (magic, rows, cols, dtype code),
# then row-major little-endian float32.
# ---------------------------------------------------------------------------

def save_matrix(path, matrix: np.ndarray) -> None:
    m = np.ascontiguousarray(matrix, dtype="<f4")
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {matrix.shape}")
    header = MATRIX_MAGIC + struct.pack("<III", m.shape[0], m.shape[1], MATRIX_DTYPE_F32)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(m.tobytes(order="C"))


def load_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) < 16 or header[:4] != MATRIX_MAGIC:
            raise ValueError(f"{path} is not a feature matrix dump (bad magic)")
        rows, cols, code = struct.unpack("<III", header[4:])
        if code != MATRIX_DTYPE_F32:
            raise ValueError(f"unsupported matrix dtype code {code}")
        payload = fh.read(rows * cols * 4)
    if len(payload) != rows * cols * 4:
        raise ValueError(f"{path} truncated: expected {rows}x{cols} float32 payload")
    return np.frombuffer(payload, dtype="<f4").reshape(rows, cols).copy()


# ---------------------------------------------------------------------------
# Strong labels (tab-separated, DESED-style) and corpus manifest
# ---------------------------------------------------------------------------

def write_strong_labels(path, rows) -> None:
    """rows: iterable of (clip_id, onset_seconds, offset_seconds, class_name)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(STRONG_LABEL_COLUMNS)
        for clip_id, onset, offset, label in rows:
            writer.writerow([clip_id, f"{onset:.6f}", f"{offset:.6f}", label])


def read_strong_labels(path) -> list[tuple[str, float, float, str]]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        for i, row in enumerate(reader):
            if not row:
                continue
            if i == 0 and row[0] == STRONG_LABEL_COLUMNS[0]:
                continue
            if len(row) != 4:
                raise ValueError(f"{path}:{i + 1}: expected 4 tab-separated fields, got {len(row)}")
            out.append((row[0], float(row[1]), float(row[2]), row[3]))
    return out


def write_manifest(path, rows) -> None:
    """rows: iterable of (clip_id, relative_path, duration_seconds)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_COLUMNS)
        for clip_id, rel_path, duration in rows:
            writer.writerow([clip_id, rel_path, f"{duration:.6f}"])


def read_manifest(path) -> list[tuple[str, str, float]]:
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != MANIFEST_COLUMNS:
            raise ValueError(f"{path}: missing or malformed manifest header")
        for row in reader:
            out.append((row[0], row[1], float(row[2])))
    return out


# ---------------------------------------------------------------------------
# Per-segment detection log
# ---------------------------------------------------------------------------

def write_detection_log(path, rows) -> None:
    """rows: iterable of (stream_id, segment_index, class_name, decision, b, d, u, p)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(DETECTION_LOG_COLUMNS)
        for stream_id, seg, label, decision, b, d, u, p in rows:
            writer.writerow(
                [stream_id, seg, label, decision, f"{b:.9g}", f"{d:.9g}", f"{u:.9g}", f"{p:.9g}"]
            )


def read_detection_log(path):
    """Yield (stream_id, segment_index, class_name, decision, b, d, u, p) tuples."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != DETECTION_LOG_COLUMNS:
            raise ValueError(f"{path}: missing or malformed detection-log header")
        for row in reader:
            yield (
                row[0],
                int(row[1]),
                row[2],
                int(row[3]),
                float(row[4]),
                float(row[5]),
                float(row[6]),
                float(row[7]),
            )


# ---------------------------------------------------------------------------
# Model checkpoints: magic, JSON config block, then named float32 tensors.
# ---------------------------------------------------------------------------

def save_checkpoint(path, config: dict, tensors: dict[str, np.ndarray]) -> None:
    blob = json.dumps(config, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(tensors)))
        for name in sorted(tensors):
            data = np.ascontiguousarray(tensors[name], dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.tobytes(order="C"))


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a checkpoint (bad magic {magic!r})")
        (config_len,) = struct.unpack("<I", fh.read(4))
        config = json.loads(fh.read(config_len).decode("utf-8"))
        (count,) = struct.unpack("<I", fh.read(4))
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", fh.read(2))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            size = int(np.prod(shape)) if shape else 1
            payload = fh.read(size * 4)
            if len(payload) != size * 4:
                raise ValueError(f"{path}: truncated tensor {name!r}")
            tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    return config, tensors
