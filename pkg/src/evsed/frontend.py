"""Audio feature pipeline: resampling, STFT, log-mel projection, segmentation.

A 10-second mono clip at 16 kHz becomes a (626 x 128) log-mel matrix
(2048-point Hann STFT, hop 256, 128 triangular mel filters to 8 kHz) and is
then cut into non-overlapping 4-frame segments of 64 ms each, which is the
granularity the streaming detector operates at.

Everything here is a pure, deterministic transform.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.signal import resample_poly

SAMPLE_RATE = 16000
N_FFT = 2048
HOP_LENGTH = 256
N_MELS = 128
FMIN_HZ = 0.0
FMAX_HZ = 8000.0
LOG_FLOOR = 1e-10
MIN_SOURCE_RATE = 8000

SEGMENT_FRAMES = 4
FRAME_SECONDS = HOP_LENGTH / SAMPLE_RATE  # 0.016 s
SEGMENT_SECONDS = SEGMENT_FRAMES * FRAME_SECONDS  # 0.064 s


@dataclass(frozen=True)
class AudioClip:
    """Mono audio in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"expected mono samples, got shape {samples.shape}")
        if samples.size and not np.all(np.isfinite(samples)):
            raise ValueError("audio contains non-finite samples")
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(frozen=True)
class MelFrames:
    """Log-mel energies, one row per STFT frame."""

    frames: np.ndarray
    frame_hop_seconds: float = FRAME_SECONDS

    def __post_init__(self):
        if self.frames.ndim != 2 or self.frames.shape[1] != N_MELS:
            raise ValueError(f"expected (num_frames, {N_MELS}) features, got {self.frames.shape}")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class FeatureWindow:
    """Context block of frames around one segment: `back` segments of history
    and `forward` segments of lookahead."""

    frames: np.ndarray
    start_time: float
    back: int
    forward: int


def resample(clip: AudioClip, target_rate: int = SAMPLE_RATE) -> AudioClip:
    """Bandlimited rate conversion (windowed-sinc, cutoff at the lower Nyquist)."""
    if clip.sample_rate < MIN_SOURCE_RATE:
        raise ValueError(f"unsupported source rate {clip.sample_rate} Hz (minimum {MIN_SOURCE_RATE})")
    if clip.sample_rate == target_rate:
        return clip
    g = np.gcd(int(target_rate), int(clip.sample_rate))
    out = resample_poly(clip.samples, target_rate // g, clip.sample_rate // g)
    return AudioClip(samples=out, sample_rate=target_rate)


def _hann_periodic(n: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft(samples: np.ndarray) -> np.ndarray:
    """One-sided complex spectrogram, shape (num_frames, N_FFT // 2 + 1).

    Frames are Hann-windowed with centered reflect padding of N_FFT // 2 on
    each side, so a clip of L samples yields 1 + L // HOP_LENGTH frames
    (626 for 10 s at 16 kHz).
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected mono samples, got shape {x.shape}")
    if x.size == 0:
        raise ValueError("empty audio")
    pad = N_FFT // 2
    if x.size <= pad:
        # reflect padding needs more than `pad` samples; extend sub-64ms
        # inputs with silence first
        x = np.pad(x, (0, pad + 1 - x.size))
    x = np.pad(x, pad, mode="reflect")
    frames = np.lib.stride_tricks.sliding_window_view(x, N_FFT)[::HOP_LENGTH]
    return np.fft.rfft(frames * _hann_periodic(N_FFT), axis=1)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=4)
def mel_filterbank(
    num_filters: int = N_MELS,
    n_fft: int = N_FFT,
    sample_rate: int = SAMPLE_RATE,
    fmin: float = FMIN_HZ,
    fmax: float = FMAX_HZ,
) -> np.ndarray:
    """Triangular mel filterbank over rfft bins, shape (num_filters, n_fft//2+1)."""
    bin_freqs = np.arange(n_fft // 2 + 1) * (sample_rate / n_fft)
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), num_filters + 2))
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bin_freqs[None, :] - lower) / (center - lower)
    falling = (upper - bin_freqs[None, :]) / (upper - center)
    bank = np.maximum(0.0, np.minimum(rising, falling))
    if np.any(bank.sum(axis=1) <= 0.0):
        raise ValueError("mel filterbank has an empty filter; fft resolution too coarse")
    return bank


def mel_project(magnitudes: np.ndarray) -> MelFrames:
    """Project a magnitude spectrogram onto log-mel energies.

    Squares the magnitudes, applies the 128-filter bank, then compresses with
    log(x + 1e-10).
    """
    mag = np.asarray(magnitudes, dtype=np.float64)
    expected_bins = N_FFT // 2 + 1
    if mag.ndim != 2 or mag.shape[1] != expected_bins:
        raise ValueError(f"expected (num_frames, {expected_bins}) magnitudes, got {mag.shape}")
    power = mag * mag
    mel = power @ mel_filterbank().T
    return MelFrames(frames=np.log(mel + LOG_FLOOR))


def extract_features(clip: AudioClip) -> MelFrames:
    """Full pipeline: resample to 16 kHz, STFT, log-mel projection."""
    clip = resample(clip, SAMPLE_RATE)
    return mel_project(np.abs(stft(clip.samples)))


def segment_stream(mel: MelFrames, seg_frames: int = SEGMENT_FRAMES) -> np.ndarray:
    """Cut frames into consecutive non-overlapping segments, shape
    (num_segments, seg_frames, N_MELS); the trailing remainder is dropped.

    Segment k covers [k * SEGMENT_SECONDS, (k + 1) * SEGMENT_SECONDS).
    """
    if mel.num_frames < seg_frames:
        raise ValueError(f"need at least {seg_frames} frames, got {mel.num_frames}")
    n_seg = mel.num_frames // seg_frames
    return mel.frames[: n_seg * seg_frames].reshape(n_seg, seg_frames, N_MELS)


def segment_start_time(index: int) -> float:
    return index * SEGMENT_SECONDS


def assemble_window(segments: np.ndarray, t: int, back: int, forward: int) -> FeatureWindow:
    """Concatenate segments [t - back, t + forward] into one frame block.

    Near the clip start, missing history is filled by repeating the earliest
    available segment. The forward edge is never padded: a decision for
    segment t only exists once segment t + forward has arrived, so callers
    must keep t + forward within range.
    """
    n_seg = segments.shape[0]
    if not 0 <= t < n_seg:
        raise ValueError(f"segment index {t} out of range [0, {n_seg})")
    if t + forward >= n_seg:
        raise ValueError(f"window for t={t} needs segment {t + forward}, clip has {n_seg}")
    idx = np.maximum(np.arange(t - back, t + forward + 1), 0)
    frames = segments[idx].reshape(-1, segments.shape[2])
    return FeatureWindow(frames=frames, start_time=segment_start_time(t), back=back, forward=forward)
