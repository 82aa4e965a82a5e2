"""Online detector: buffers segments, assembles context windows, applies a
decision rule per class.

A decision for segment t is only available once segment t + n has arrived
(n = forward lookahead), so n buys accuracy at the price of latency. The
decision timestamp is the start time of the decided segment; evaluation adds
the n-segment wait back in as the effective prediction time.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .frontend import N_MELS, SEGMENT_FRAMES, SEGMENT_SECONDS
from .model import forward_batch
from .sl import (
    DEFAULT_BASE_RATE,
    BetaEvidence,
    expected_probability,
    opinion_from_evidence,
)

RULE_KINDS = ("vacuity", "probability", "entropy")

# Thresholds used when a rule is requested without an explicit value.
DEFAULT_THRESHOLDS = {"vacuity": 0.9, "probability": 0.5, "entropy": 0.9}


@dataclass(frozen=True)
class DecisionRule:
    """A per-class binary decision rule over Beta evidence."""

    kind: str
    threshold: float

    def __post_init__(self):
        if self.kind not in RULE_KINDS:
            raise ValueError(f"unknown rule {self.kind!r}, expected one of {RULE_KINDS}")
        if self.kind == "vacuity" and not 0.0 < self.threshold <= 1.0:
            raise ValueError(f"vacuity threshold must be in (0, 1], got {self.threshold}")
        if self.kind == "probability" and not 0.0 < self.threshold < 1.0:
            raise ValueError(f"probability threshold must be in (0, 1), got {self.threshold}")
        if self.kind == "entropy" and not 0.0 < self.threshold <= 1.0:
            raise ValueError(f"entropy threshold must be in (0, 1], got {self.threshold}")

    @classmethod
    def with_default_threshold(cls, kind: str) -> "DecisionRule":
        return cls(kind=kind, threshold=DEFAULT_THRESHOLDS[kind])


def decide_vacuity(ev: BetaEvidence, threshold: float, base_rate: float = DEFAULT_BASE_RATE) -> int:
    """1 iff belief strictly exceeds disbelief and vacuity stays under the
    threshold; ties and vacuous evidence abstain."""
    op = opinion_from_evidence(ev, base_rate)
    return int(op.belief > op.disbelief and op.vacuity < threshold)


def decide_probability(ev: BetaEvidence, threshold: float = 0.5, base_rate: float = DEFAULT_BASE_RATE) -> int:
    """1 iff the projected probability strictly exceeds the threshold."""
    return int(expected_probability(opinion_from_evidence(ev, base_rate)) > threshold)


def decide_entropy(ev: BetaEvidence, threshold: float = 0.9, base_rate: float = DEFAULT_BASE_RATE) -> int:
    """1 iff p > 0.5 and the binary entropy of p (normalized by ln 2) is
    below the threshold."""
    p = expected_probability(opinion_from_evidence(ev, base_rate))
    if p <= 0.5:
        return 0
    if p >= 1.0:
        entropy = 0.0
    else:
        entropy = -(p * math.log(p) + (1.0 - p) * math.log(1.0 - p))
    return int(entropy / math.log(2.0) < threshold)


def apply_rule(rule: DecisionRule, ev: BetaEvidence, base_rate: float = DEFAULT_BASE_RATE) -> int:
    if rule.kind == "vacuity":
        return decide_vacuity(ev, rule.threshold, base_rate)
    if rule.kind == "probability":
        return decide_probability(ev, rule.threshold, base_rate)
    return decide_entropy(ev, rule.threshold, base_rate)


@dataclass(frozen=True)
class SegmentDecision:
    """Per-class decisions for one decided segment.

    start_time is the decided segment's own position on the timeline;
    effective_time adds the forward wait (what evaluation scores against);
    available_time is when the decision could physically be emitted.
    """

    segment_index: int
    decisions: np.ndarray
    belief: np.ndarray
    disbelief: np.ndarray
    vacuity: np.ndarray
    probability: np.ndarray
    start_time: float
    effective_time: float
    available_time: float


def _decide_segment(
    t: int, alpha: np.ndarray, beta: np.ndarray, rule: DecisionRule, forward_steps: int, base_rate: float
) -> SegmentDecision:
    k = alpha.shape[0]
    decisions = np.zeros(k, dtype=np.int64)
    b = np.zeros(k)
    d = np.zeros(k)
    u = np.zeros(k)
    p = np.zeros(k)
    for i in range(k):
        ev = BetaEvidence(float(alpha[i]), float(beta[i]))
        op = opinion_from_evidence(ev, base_rate)
        decisions[i] = apply_rule(rule, ev, base_rate)
        b[i], d[i], u[i] = op.belief, op.disbelief, op.vacuity
        p[i] = expected_probability(op)
    return SegmentDecision(
        segment_index=t,
        decisions=decisions,
        belief=b,
        disbelief=d,
        vacuity=u,
        probability=p,
        start_time=t * SEGMENT_SECONDS,
        effective_time=(t + forward_steps) * SEGMENT_SECONDS,
        available_time=(t + forward_steps + 1) * SEGMENT_SECONDS,
    )


class Detector:
    """Streaming state for one audio stream.

    Not thread-safe per instance; run one detector per stream and share the
    read-only params across streams freely.
    """

    def __init__(
        self,
        params,
        num_classes: int,
        rule: DecisionRule,
        back: int = 3,
        forward: int = 0,
        base_rate: float = DEFAULT_BASE_RATE,
    ):
        self.params = params
        self.num_classes = num_classes
        self.rule = rule
        self.back = back
        self.forward = forward
        self.base_rate = base_rate
        self._buffer: deque[np.ndarray] = deque(maxlen=back + forward + 1)
        self._arrivals = 0
        self._last = np.zeros(num_classes, dtype=np.int64)
        # first positive effective time per class, latched once per episode
        self.episode_starts: list[tuple[int, float]] = []

    def step(self, segment: np.ndarray) -> SegmentDecision | None:
        """Feed one (4 x 128) segment; returns the decision that just became
        available, or None while the lookahead buffer warms up."""
        seg = np.asarray(segment)
        if seg.shape != (SEGMENT_FRAMES, N_MELS):
            raise ValueError(f"expected ({SEGMENT_FRAMES}, {N_MELS}) segment, got {seg.shape}")
        self._buffer.append(seg)
        self._arrivals += 1
        t = self._arrivals - 1 - self.forward
        if t < 0:
            return None
        base = self._arrivals - len(self._buffer)
        rel = np.maximum(np.arange(t - self.back, t + self.forward + 1), 0) - base
        frames = np.concatenate([self._buffer[int(j)] for j in rel], axis=0)
        alpha, beta, _ = forward_batch(self.params, frames[None], self.num_classes)
        decision = _decide_segment(t, alpha[0], beta[0], self.rule, self.forward, self.base_rate)
        for k in range(self.num_classes):
            if decision.decisions[k] and not self._last[k]:
                self.episode_starts.append((k, decision.effective_time))
        self._last = decision.decisions
        return decision


def evidence_for_clip(params, segments: np.ndarray, num_classes: int, back: int, forward: int):
    """Batch evidence for every decidable segment of a clip.

    Returns (alpha, beta) of shape (T - forward, K); segment t's window spans
    [t - back, t + forward] with the left edge repeated.
    """
    n_seg = segments.shape[0]
    decidable = n_seg - forward
    if decidable <= 0:
        return np.zeros((0, num_classes)), np.zeros((0, num_classes))
    mel_bins = segments.shape[2]
    span = back + forward + 1
    windows = np.empty((decidable, span * SEGMENT_FRAMES, mel_bins))
    for t in range(decidable):
        idx = np.maximum(np.arange(t - back, t + forward + 1), 0)
        windows[t] = segments[idx].reshape(-1, mel_bins)
    alphas = []
    betas = []
    for start in range(0, decidable, 512):
        a, b, _ = forward_batch(params, windows[start : start + 512], num_classes)
        alphas.append(a)
        betas.append(b)
    return np.concatenate(alphas), np.concatenate(betas)


def decide_clip(
    params,
    segments: np.ndarray,
    num_classes: int,
    rule: DecisionRule,
    back: int = 3,
    forward: int = 0,
    base_rate: float = DEFAULT_BASE_RATE,
) -> list[SegmentDecision]:
    """Offline evaluation of a whole clip; identical output to feeding the
    segments through Detector.step one by one."""
    alpha, beta = evidence_for_clip(params, segments, num_classes, back, forward)
    return [
        _decide_segment(t, alpha[t], beta[t], rule, forward, base_rate)
        for t in range(alpha.shape[0])
    ]


def decisions_to_positives(decisions: list[SegmentDecision], class_names) -> dict[str, np.ndarray]:
    """Positive segment indices per class, for the event matcher."""
    out: dict[str, np.ndarray] = {}
    for k, name in enumerate(class_names):
        out[name] = np.array(
            [d.segment_index for d in decisions if d.decisions[k]], dtype=np.int64
        )
    return out
