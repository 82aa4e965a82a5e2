"""Early-detection scoring: tolerance-based event matching, detection delay,
event-level F1, and the threshold/lookahead sweep drivers.

Matching semantics, per annotated event and class:

* The event's detection time d_p is the first positive decision whose
  effective time falls inside [onset + tolerance, offset] (tolerance <= 0,
  so the window opens slightly before the onset). Found: TP with
  delay = max(d_p - onset, 0) - a detection inside [onset + tolerance,
  onset) is an early hit and costs zero delay. Not found: FN.
* A contiguous run of positive decisions that overlaps no event window of
  its class is one false positive, regardless of its length in segments.
  Runs overlapping a window are absorbed by the event they cover.

`strict` mode instead applies the printed truth-table literally: d_p is the
first positive of the first run that reaches the event's window, and it must
itself lie inside [onset, offset]; a run that reaches a window but starts
too early therefore burns the event (FN) and counts as an FP.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .frontend import SEGMENT_SECONDS
from .model import ModelConfig, train
from .sl import BetaEvidence
from .stream import (
    DecisionRule,
    apply_rule,
    decide_clip,
    decisions_to_positives,
    evidence_for_clip,
)


class TimelineMismatchError(ValueError):
    """Decisions and annotations do not describe the same clips/timeline."""


@dataclass(frozen=True)
class EventAnnotation:
    """Strong label: one event instance with explicit boundaries."""

    class_name: str
    onset: float
    offset: float

    def __post_init__(self):
        if not 0.0 <= self.onset < self.offset:
            raise ValueError(
                f"invalid event bounds [{self.onset}, {self.offset}] for {self.class_name}"
            )


@dataclass(frozen=True)
class DetectionRecord:
    """Outcome for one annotated event (TP/FN) or one spurious run (FP)."""

    clip_id: str
    class_name: str
    status: str  # "TP" | "FP" | "FN"
    d_p: float | None = None
    delay: float | None = None
    annotation: EventAnnotation | None = None


def detection_delay(d_p: float, d_t: float) -> float:
    """Seconds from true onset to detection; early hits count as zero."""
    return max(d_p - d_t, 0.0)


def _runs(indices: np.ndarray) -> list[np.ndarray]:
    """Split sorted segment indices into maximal consecutive runs."""
    if indices.size == 0:
        return []
    breaks = np.where(np.diff(indices) > 1)[0] + 1
    return np.split(indices, breaks)


def match_events(
    positives: dict[str, dict[str, np.ndarray]],
    annotations: dict[str, list[EventAnnotation]],
    tolerance: float = -0.25,
    *,
    segment_seconds: float = SEGMENT_SECONDS,
    forward_steps: int = 0,
    durations: dict[str, float] | None = None,
    strict: bool = False,
) -> list[DetectionRecord]:
    """Match per-segment decisions against strong labels.

    positives: clip_id -> class_name -> sorted positive segment indices.
    Every evaluated clip must be present (empty dict for silent clips); an
    annotation naming an unknown clip is a timeline mismatch. The effective
    time of segment index i is (i + forward_steps) * segment_seconds.
    """
    if tolerance > 0.0:
        raise ValueError(f"tolerance is an early allowance and must be <= 0, got {tolerance}")
    for clip_id, events in annotations.items():
        if clip_id not in positives:
            raise TimelineMismatchError(f"annotations reference unknown clip {clip_id!r}")
        if durations is not None and clip_id in durations:
            limit = durations[clip_id] + 1e-9
            for ev in events:
                if ev.offset > limit:
                    raise TimelineMismatchError(
                        f"{clip_id}: event offset {ev.offset} beyond clip duration {durations[clip_id]}"
                    )

    records: list[DetectionRecord] = []
    for clip_id, by_class in positives.items():
        events = annotations.get(clip_id, [])
        classes = set(by_class) | {ev.class_name for ev in events}
        for class_name in sorted(classes):
            idx = np.asarray(by_class.get(class_name, np.array([], dtype=np.int64)))
            times = (idx + forward_steps) * segment_seconds
            runs = _runs(idx)
            # a decision at time tau covers [tau, tau + segment)
            run_spans = [
                (
                    (run[0] + forward_steps) * segment_seconds,
                    (run[-1] + forward_steps + 1) * segment_seconds,
                )
                for run in runs
            ]
            class_events = sorted(
                (ev for ev in events if ev.class_name == class_name), key=lambda e: e.onset
            )
            absorbed: set[int] = set()  # runs overlapping some event window
            tp_runs: set[int] = set()  # runs that actually produced a TP
            for ev in class_events:
                w_lo, w_hi = ev.onset + tolerance, ev.offset
                overlapping = [
                    ri for ri, (lo, hi) in enumerate(run_spans) if lo < w_hi and hi > w_lo
                ]
                absorbed.update(overlapping)
                if strict:
                    record, tp_run = _match_strict(
                        clip_id, ev, runs, overlapping, tolerance, segment_seconds, forward_steps
                    )
                else:
                    record, tp_run = _match_tolerant(
                        clip_id, ev, idx, times, runs, w_lo, w_hi
                    )
                if tp_run is not None:
                    tp_runs.add(tp_run)
                records.append(record)
            for ri, run in enumerate(runs):
                spurious = ri not in absorbed or (strict and ri not in tp_runs)
                if spurious:
                    records.append(
                        DetectionRecord(
                            clip_id=clip_id,
                            class_name=class_name,
                            status="FP",
                            d_p=float((run[0] + forward_steps) * segment_seconds),
                        )
                    )
    return records


def _run_containing(runs, segment_index: int) -> int | None:
    for ri, run in enumerate(runs):
        if run[0] <= segment_index <= run[-1]:
            return ri
    return None


def _match_tolerant(clip_id, ev, idx, times, runs, w_lo, w_hi):
    """d_p = first positive decision time inside the tolerance window."""
    in_window = np.flatnonzero((times >= w_lo) & (times <= w_hi))
    if in_window.size == 0:
        return (
            DetectionRecord(clip_id=clip_id, class_name=ev.class_name, status="FN", annotation=ev),
            None,
        )
    pos = int(in_window[0])
    d_p = float(times[pos])
    record = DetectionRecord(
        clip_id=clip_id,
        class_name=ev.class_name,
        status="TP",
        d_p=d_p,
        delay=detection_delay(d_p, ev.onset),
        annotation=ev,
    )
    return record, _run_containing(runs, int(idx[pos]))


def _match_strict(clip_id, ev, runs, overlapping, tolerance, segment_seconds, forward_steps):
    """Literal truth-table reading: d_p is the first positive of the first
    run reaching the event and must itself lie inside [onset, offset].

    The printed early-tolerance clause d_p - d_t >= tolerance is kept even
    though it is vacuous once d_p >= onset holds (the documented
    contradiction in this metric's definition).
    """
    if not overlapping:
        return (
            DetectionRecord(clip_id=clip_id, class_name=ev.class_name, status="FN", annotation=ev),
            None,
        )
    first_run = runs[overlapping[0]]
    d_p = float((first_run[0] + forward_steps) * segment_seconds)
    if ev.onset <= d_p <= ev.offset and d_p - ev.onset >= tolerance:
        record = DetectionRecord(
            clip_id=clip_id,
            class_name=ev.class_name,
            status="TP",
            d_p=d_p,
            delay=detection_delay(d_p, ev.onset),
            annotation=ev,
        )
        return record, overlapping[0]
    return (
        DetectionRecord(clip_id=clip_id, class_name=ev.class_name, status="FN", annotation=ev),
        None,
    )


@dataclass(frozen=True)
class EvalSummary:
    tp: int
    fp: int
    fn: int
    f1: float
    mean_delay: float

    @property
    def defined(self) -> bool:
        return not math.isnan(self.f1)


def early_f1(records: list[DetectionRecord]) -> EvalSummary:
    """Micro-averaged event-level F1 = 2TP / (2TP + FP + FN), plus the mean
    delay over true positives. f1 is NaN when no events and no detections
    exist (undefined), mean_delay is NaN without TPs."""
    tp = sum(1 for r in records if r.status == "TP")
    fp = sum(1 for r in records if r.status == "FP")
    fn = sum(1 for r in records if r.status == "FN")
    denom = 2 * tp + fp + fn
    f1 = (2 * tp / denom) if denom else math.nan
    delays = [r.delay for r in records if r.status == "TP"]
    mean_delay = float(np.mean(delays)) if delays else math.nan
    return EvalSummary(tp=tp, fp=fp, fn=fn, f1=f1, mean_delay=mean_delay)


# ---------------------------------------------------------------------------
# Sweep drivers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SweepRow:
    parameter: float
    mean_delay: float
    f1: float
    tp: int
    fp: int
    fn: int


@dataclass(frozen=True)
class SweepResult:
    parameter_name: str
    rows: list[SweepRow]
    trained_per_point: bool
    delay_monotone_notes: str


def _evaluate_positives(per_clip_positives, corpus, tolerance, forward_steps):
    records = match_events(
        per_clip_positives,
        corpus.annotations,
        tolerance,
        forward_steps=forward_steps,
        durations=corpus.durations,
    )
    return early_f1(records)


def sweep_vacuity(
    params,
    corpus,
    v_grid,
    *,
    num_classes: int,
    back: int,
    forward: int = 0,
    tolerance: float = -0.25,
    base_rate: float = 0.5,
) -> SweepResult:
    """Evaluate the detection pipeline across vacuity thresholds.

    Evidence depends only on the model, so it is computed once per clip and
    each threshold re-derives decisions from it. corpus must expose clip_ids,
    segments (dict), annotations (dict), durations (dict), class_names.
    """
    evidences = {
        clip_id: evidence_for_clip(params, corpus.segments[clip_id], num_classes, back, forward)
        for clip_id in corpus.clip_ids
    }
    rows = []
    for v in v_grid:
        rule = DecisionRule(kind="vacuity", threshold=float(v))
        positives = {}
        for clip_id in corpus.clip_ids:
            alpha, beta = evidences[clip_id]
            decided = _decide_from_evidence(alpha, beta, rule, base_rate)
            positives[clip_id] = {
                name: decided[:, k].nonzero()[0] for k, name in enumerate(corpus.class_names)
            }
        summary = _evaluate_positives(positives, corpus, tolerance, forward)
        rows.append(
            SweepRow(
                parameter=float(v),
                mean_delay=summary.mean_delay,
                f1=summary.f1,
                tp=summary.tp,
                fp=summary.fp,
                fn=summary.fn,
            )
        )
    notes = _delay_monotonicity_note(rows, expect="nonincreasing")
    return SweepResult(
        parameter_name="vacuity_threshold", rows=rows, trained_per_point=False,
        delay_monotone_notes=notes,
    )


def _decide_from_evidence(alpha, beta, rule, base_rate):
    out = np.zeros(alpha.shape, dtype=np.int64)
    for t in range(alpha.shape[0]):
        for k in range(alpha.shape[1]):
            out[t, k] = apply_rule(rule, BetaEvidence(float(alpha[t, k]), float(beta[t, k])), base_rate)
    return out


def _delay_monotonicity_note(rows: list[SweepRow], expect: str) -> str:
    """expect: 'nonincreasing' (vacuity: higher thresholds admit earlier,
    lower-evidence detections) or 'increasing' (backtrack: the forward wait
    adds to every effective prediction time)."""
    deltas = [
        rows[i + 1].mean_delay - rows[i].mean_delay
        for i in range(len(rows) - 1)
        if not (math.isnan(rows[i].mean_delay) or math.isnan(rows[i + 1].mean_delay))
    ]
    if not deltas:
        return "delay trend undefined (no comparable points)"
    if expect == "nonincreasing":
        worst = max(deltas)
        if worst <= 0.0:
            return "delay non-increasing across the grid (expected trend)"
        return f"delay inversions up to {worst:.4f}s against the expected decrease"
    worst = min(deltas)
    if worst > 0.0:
        return "delay strictly increasing across the grid (expected trend)"
    return f"delay failed to increase at some step (worst delta {worst:.4f}s)"


def sweep_backtrack(
    corpus,
    n_grid,
    *,
    train_clips,
    base_config: ModelConfig,
    rule: DecisionRule,
    tolerance: float = -0.25,
    base_rate: float = 0.5,
    shared_params=None,
) -> SweepResult:
    """Evaluate forward-lookahead settings.

    By default a model is trained per grid point (matching train and test
    context); passing shared_params instead evaluates one model at every n,
    which the result flags since the model then sees contexts it was not
    trained for.
    """
    rows = []
    for n in n_grid:
        n = int(n)
        config = dataclasses.replace(base_config, context_forward=n)
        if shared_params is None:
            result = train(config, train_clips)
            params = result.params
        else:
            params = shared_params
        positives = {}
        for clip_id in corpus.clip_ids:
            decisions = decide_clip(
                params,
                corpus.segments[clip_id],
                config.num_classes,
                rule,
                back=config.context_back,
                forward=n,
                base_rate=base_rate,
            )
            positives[clip_id] = decisions_to_positives(decisions, corpus.class_names)
        summary = _evaluate_positives(positives, corpus, tolerance, n)
        rows.append(
            SweepRow(
                parameter=float(n),
                mean_delay=summary.mean_delay,
                f1=summary.f1,
                tp=summary.tp,
                fp=summary.fp,
                fn=summary.fn,
            )
        )
    notes = _delay_monotonicity_note(rows, expect="increasing")
    return SweepResult(
        parameter_name="forward_steps",
        rows=rows,
        trained_per_point=shared_params is None,
        delay_monotone_notes=notes,
    )
