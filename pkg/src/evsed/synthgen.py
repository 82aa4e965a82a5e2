"""Deterministic synthetic corpus: polyphonic events over pink noise.

Each class has a fixed spectral home so the detection task is learnable by
construction: even classes are harmonic combs with class-specific
fundamentals, odd classes are band-limited noise bursts. Per-clip randomness
is derived from (seed, clip_index), so corpora are byte-identical across runs
and clip generation order never matters.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io
from .frontend import SAMPLE_RATE, AudioClip
from .metrics import EventAnnotation

MAX_CLASSES = 10

# Spectral homes, index = class id. Even entries: comb fundamental (Hz);
# odd entries: noise band (Hz). Chosen so the default four classes occupy
# disjoint bands.
_COMB_FUNDAMENTALS = {0: 220.0, 2: 2400.0, 4: 4100.0, 6: 5800.0, 8: 7300.0}
_NOISE_BANDS = {1: (1200.0, 1900.0), 3: (2900.0, 3600.0), 5: (4500.0, 5300.0),
                7: (6100.0, 6900.0), 9: (7500.0, 7900.0)}

_MAX_EVENT_FREQ = 7900.0
_MAX_HARMONICS = 4
_BACKGROUND_RMS = 0.03
# Events fade in over a per-event random attack: the early segments of an
# event then carry genuinely little energy, which is what makes the
# early-detection problem (and evidence accumulation) non-trivial.
_ATTACK_RANGE_SECONDS = (0.05, 0.4)
_RELEASE_SECONDS = 0.02


class ConfigError(ValueError):
    """Synthesis configuration cannot produce a valid corpus."""


@dataclass(frozen=True)
class SynthConfig:
    num_classes: int = 4
    clips: int = 200
    clip_seconds: float = 10.0
    events_per_clip: tuple[int, int] = (1, 4)
    event_duration: tuple[float, float] = (0.25, 2.0)
    snr_db: tuple[float, float] = (0.0, 10.0)
    polyphony_max: int = 2
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.num_classes <= MAX_CLASSES:
            raise ConfigError(f"num_classes must be in [1, {MAX_CLASSES}], got {self.num_classes}")
        if self.clips < 0:
            raise ConfigError(f"clips must be >= 0, got {self.clips}")
        if self.clip_seconds <= 0:
            raise ConfigError(f"clip_seconds must be positive, got {self.clip_seconds}")
        lo, hi = self.events_per_clip
        if lo < 0 or hi < lo:
            raise ConfigError(f"events_per_clip range invalid: {self.events_per_clip}")
        dmin, dmax = self.event_duration
        if not 0.0 < dmin <= dmax:
            raise ConfigError(f"event_duration range invalid: {self.event_duration}")
        if dmax > self.clip_seconds:
            raise ConfigError(
                f"event_duration max {dmax}s does not fit in a {self.clip_seconds}s clip"
            )
        if self.snr_db[1] < self.snr_db[0]:
            raise ConfigError(f"snr_db range invalid: {self.snr_db}")
        if self.polyphony_max < 1:
            raise ConfigError(f"polyphony_max must be >= 1, got {self.polyphony_max}")

    def class_names(self) -> list[str]:
        return [f"class{k}" for k in range(self.num_classes)]


def class_band(k: int) -> tuple[float, float]:
    """Frequency band where class k concentrates its energy (used by the
    band-energy oracles and nothing in the detection path)."""
    if k in _COMB_FUNDAMENTALS:
        f0 = _COMB_FUNDAMENTALS[k]
        return (0.9 * f0, 1.1 * f0)
    return _NOISE_BANDS[k]


def _clip_rng(seed: int, clip_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(clip_index,)))


def _pink_noise(rng: np.random.Generator, n: int) -> np.ndarray:
    white = rng.standard_normal(n)
    spectrum = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n)
    shaping = np.ones_like(freqs)
    shaping[1:] = 1.0 / np.sqrt(freqs[1:] / freqs[1])
    x = np.fft.irfft(spectrum * shaping, n)
    return x / max(np.sqrt(np.mean(x * x)), 1e-12)


def _envelope(n: int, sample_rate: int) -> np.ndarray:
    ramp = min(int(_RAMP_SECONDS * sample_rate), max(n // 4, 1))
    env = np.ones(n)
    up = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
    env[:ramp] = up
    env[n - ramp :] = up[::-1]
    return env


def _render_event(rng: np.random.Generator, k: int, n: int, sample_rate: int) -> np.ndarray:
    t = np.arange(n) / sample_rate
    if k in _COMB_FUNDAMENTALS:
        f0 = _COMB_FUNDAMENTALS[k]
        n_harm = min(_MAX_HARMONICS, int(_MAX_EVENT_FREQ / f0))
        x = np.zeros(n)
        for h in range(1, n_harm + 1):
            phase = rng.uniform(0.0, 2.0 * np.pi)
            x += np.sin(2.0 * np.pi * f0 * h * t + phase) / h
    else:
        lo, hi = _NOISE_BANDS[k]
        white = rng.standard_normal(n)
        spectrum = np.fft.rfft(white)
        freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate)
        spectrum[(freqs < lo) | (freqs > hi)] = 0.0
        x = np.fft.irfft(spectrum, n)
    x = x * _envelope(n, sample_rate)
    rms = np.sqrt(np.mean(x * x))
    return x / max(rms, 1e-12)


def _max_concurrency(intervals: list[tuple[float, float]]) -> int:
    points = sorted({p for lo, hi in intervals for p in (lo, hi)})
    worst = 0
    for a, b in zip(points[:-1], points[1:]):
        mid = 0.5 * (a + b)
        worst = max(worst, sum(1 for lo, hi in intervals if lo < mid < hi))
    return worst


def _schedule_events(cfg: SynthConfig, rng: np.random.Generator):
    lo, hi = cfg.events_per_clip
    count = int(rng.integers(lo, hi + 1))
    scheduled: list[tuple[int, float, float]] = []
    for _ in range(count):
        k = int(rng.integers(cfg.num_classes))
        duration = float(rng.uniform(*cfg.event_duration))
        for _attempt in range(100):
            onset = float(rng.uniform(0.0, cfg.clip_seconds - duration))
            candidate = [(o, o + d) for _, o, d in scheduled] + [(onset, onset + duration)]
            if _max_concurrency(candidate) <= cfg.polyphony_max:
                scheduled.append((k, onset, duration))
                break
        # an event that cannot be placed under the polyphony cap is dropped;
        # the draw sequence stays deterministic either way
    scheduled.sort(key=lambda e: e[1])
    return scheduled


def synthesize_clip(cfg: SynthConfig, clip_index: int) -> tuple[AudioClip, list[EventAnnotation]]:
    """Render one clip and its strong labels, deterministic in (seed, index)."""
    rng = _clip_rng(cfg.seed, clip_index)
    n = int(round(cfg.clip_seconds * SAMPLE_RATE))
    mix = _pink_noise(rng, n) * _BACKGROUND_RMS
    annotations = []
    for k, onset, duration in _schedule_events(cfg, rng):
        length = int(round(duration * SAMPLE_RATE))
        if length < 2:
            continue
        snr = float(rng.uniform(*cfg.snr_db))
        event = _render_event(rng, k, length, SAMPLE_RATE)
        event *= _BACKGROUND_RMS * 10.0 ** (snr / 20.0)
        start = int(round(onset * SAMPLE_RATE))
        mix[start : start + length] += event[: n - start]
        annotations.append(
            EventAnnotation(class_name=f"class{k}", onset=onset, offset=onset + duration)
        )
    return AudioClip(samples=np.clip(mix, -1.0, 1.0), sample_rate=SAMPLE_RATE), annotations


def clip_id_for(index: int) -> str:
    return f"clip_{index:05d}"


def generate_corpus(cfg: SynthConfig, out_dir) -> list[tuple[str, str, float]]:
    """Write WAVs, strong labels, class list, and the manifest; returns the
    manifest rows."""
    out = Path(out_dir)
    (out / "audio").mkdir(parents=True, exist_ok=True)
    manifest_rows = []
    label_rows = []
    for i in range(cfg.clips):
        clip, annotations = synthesize_clip(cfg, i)
        clip_id = clip_id_for(i)
        rel = f"audio/{clip_id}.wav"
        io.write_wav(out / rel, clip.samples, clip.sample_rate)
        manifest_rows.append((clip_id, rel, clip.duration))
        for ev in annotations:
            label_rows.append((clip_id, ev.onset, ev.offset, ev.class_name))
    io.write_manifest(out / "manifest.csv", manifest_rows)
    io.write_strong_labels(out / "labels.tsv", label_rows)
    (out / "classes.txt").write_text("\n".join(cfg.class_names()) + "\n")
    return manifest_rows
