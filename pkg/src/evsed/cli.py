"""Command line entry point: gen / train / detect / eval / sweep.

Configuration precedence is flags > config file > defaults; the resolved
configuration is echoed into every output directory as config.json so any
run can be reproduced from its artifacts. All randomness flows from the one
top-level --seed through named sub-streams, so, e.g., regenerating a corpus
never depends on whether training ran in the same invocation.

Exit codes: 0 success, 1 usage/configuration error, 2 runtime failure. A
runtime failure after outputs have started leaves a .failed marker in the
output directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import io
from .data import load_corpus
from .metrics import early_f1, match_events, sweep_backtrack, sweep_vacuity
from .model import ModelConfig, load_model, save_model, train
from .stream import DecisionRule, Detector
from .synthgen import ConfigError, SynthConfig, generate_corpus

logger = logging.getLogger("evsed")

DEFAULT_TOLERANCE = -0.25
VACUITY_GRID = (0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
BACKTRACK_GRID = (0, 2, 4, 6)


class UsageError(ValueError):
    """Bad flags or configuration; reported on stderr with exit code 1."""


def _derive_seed(seed: int, name: str) -> int:
    """Named sub-stream of the top-level seed (gen/train/eval stay independent)."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(name.encode("ascii")))
    return int(ss.generate_state(1, np.uint64)[0] % np.iinfo(np.int64).max)


def _configure_logging() -> None:
    level = os.environ.get("EVSED_LOG", "info").lower()
    chosen = {"debug": logging.DEBUG, "info": logging.INFO, "warning": logging.WARNING,
              "quiet": logging.ERROR}.get(level, logging.INFO)
    logging.basicConfig(level=chosen, format="%(levelname)s %(name)s: %(message)s")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; we use 1
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="evsed", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, help="JSON config file (flags override it)")
        p.add_argument("--seed", type=int, help="top-level seed (default 0)")
        p.add_argument("--out", type=Path, help="output directory")

    p = sub.add_parser("gen", help="generate a synthetic corpus")
    common(p)
    p.add_argument("--clips", type=int)
    p.add_argument("--classes", type=int, dest="num_classes")
    p.add_argument("--clip-seconds", type=float, dest="clip_seconds")
    p.add_argument("--events-min", type=int, dest="events_min")
    p.add_argument("--events-max", type=int, dest="events_max")
    p.add_argument("--duration-min", type=float, dest="duration_min")
    p.add_argument("--duration-max", type=float, dest="duration_max")
    p.add_argument("--snr-min", type=float, dest="snr_min")
    p.add_argument("--snr-max", type=float, dest="snr_max")
    p.add_argument("--polyphony", type=int, dest="polyphony_max")

    p = sub.add_parser("train", help="train the evidence model on a corpus")
    common(p)
    p.add_argument("--corpus", type=Path)
    p.add_argument("--hidden", type=int)
    p.add_argument("--back", type=int, help="context segments behind the decision point")
    p.add_argument("--forward", type=int, help="lookahead segments ahead of the decision point")
    p.add_argument("--lr", type=float, dest="learning_rate")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--resume", type=Path, help="checkpoint to continue from")

    p = sub.add_parser("detect", help="stream a corpus through the detector")
    common(p)
    p.add_argument("--corpus", type=Path)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--rule", choices=["vacuity", "probability", "entropy"])
    p.add_argument("--threshold", type=float)
    p.add_argument("--forward", type=int, help="override the checkpoint's lookahead")

    p = sub.add_parser("eval", help="score a detection log against strong labels")
    common(p)
    p.add_argument("--detections", type=Path, help="detect output dir or detections.csv")
    p.add_argument("--corpus", type=Path)
    p.add_argument("--tolerance", type=float, help=f"early tolerance <= 0 (default {DEFAULT_TOLERANCE})")
    p.add_argument("--forward", type=int, help="lookahead used at detect time (else from config echo)")
    p.add_argument("--strict-eq8", action="store_true", dest="strict", default=None,
                   help="literal truth-table matching instead of the tolerant reading")

    p = sub.add_parser("sweep", help="threshold / lookahead sweeps")
    common(p)
    p.add_argument("--param", choices=["vacuity", "backtrack"], required=True)
    p.add_argument("--corpus", type=Path)
    p.add_argument("--checkpoint", type=Path,
                   help="vacuity: evidence model; backtrack: optional shared model (skips per-point training)")
    p.add_argument("--grid", type=str, help="comma-separated grid values")
    p.add_argument("--tolerance", type=float)
    p.add_argument("--hidden", type=int)
    p.add_argument("--back", type=int)
    p.add_argument("--lr", type=float, dest="learning_rate")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    return parser


def _load_config_file(path: Path | None) -> dict:
    if path is None:
        return {}
    if not path.exists():
        raise UsageError(f"config file {path} does not exist")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise UsageError(f"config file {path} is not valid JSON: {err}") from err


def _resolve(args, file_config: dict, keys: list[str], defaults: dict) -> dict:
    """flags > config-file section > defaults."""
    section = dict(file_config.get(args.command, {}))
    resolved = {}
    for key in keys:
        flag = getattr(args, key, None)
        if flag is not None:
            resolved[key] = flag
        elif key in section:
            resolved[key] = section[key]
        else:
            resolved[key] = defaults.get(key)
    seed = args.seed if args.seed is not None else file_config.get("seed", 0)
    resolved["seed"] = int(seed)
    return resolved


def _require(resolved: dict, key: str, hint: str):
    if resolved.get(key) is None:
        raise UsageError(f"--{hint} is required for this command")
    return resolved[key]


# out dir of the command in flight, for the .failed marker when --out came
# from the config file rather than the flags
_ACTIVE_OUT: list[Path] = []


def _echo_config(out: Path, command: str, resolved: dict) -> None:
    _ACTIVE_OUT.append(out)
    payload = {"command": command}
    payload.update(
        {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(resolved.items())}
    )
    (out / "config.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_gen(args, file_config) -> int:
    keys = ["out", "clips", "num_classes", "clip_seconds", "events_min", "events_max",
            "duration_min", "duration_max", "snr_min", "snr_max", "polyphony_max"]
    r = _resolve(args, file_config, keys, {})
    out = Path(_require(r, "out", "out"))
    base = SynthConfig(seed=_derive_seed(r["seed"], "gen"))
    cfg = SynthConfig(
        num_classes=r["num_classes"] if r["num_classes"] is not None else base.num_classes,
        clips=r["clips"] if r["clips"] is not None else base.clips,
        clip_seconds=r["clip_seconds"] if r["clip_seconds"] is not None else base.clip_seconds,
        events_per_clip=(
            r["events_min"] if r["events_min"] is not None else base.events_per_clip[0],
            r["events_max"] if r["events_max"] is not None else base.events_per_clip[1],
        ),
        event_duration=(
            r["duration_min"] if r["duration_min"] is not None else base.event_duration[0],
            r["duration_max"] if r["duration_max"] is not None else base.event_duration[1],
        ),
        snr_db=(
            r["snr_min"] if r["snr_min"] is not None else base.snr_db[0],
            r["snr_max"] if r["snr_max"] is not None else base.snr_db[1],
        ),
        polyphony_max=r["polyphony_max"] if r["polyphony_max"] is not None else base.polyphony_max,
        seed=base.seed,
    )
    out.mkdir(parents=True, exist_ok=True)
    _echo_config(out, "gen", {**r, "synth": asdict(cfg)})
    rows = generate_corpus(cfg, out)
    import hashlib

    digest = hashlib.sha256((out / "manifest.csv").read_bytes()).hexdigest()
    print(f"wrote {len(rows)} clips to {out}")
    print(f"manifest sha256 {digest}")
    return 0


def _model_config_from(r: dict, num_classes: int) -> ModelConfig:
    base = ModelConfig(num_classes=num_classes)
    return ModelConfig(
        num_classes=num_classes,
        hidden=r["hidden"] if r.get("hidden") is not None else base.hidden,
        context_back=r["back"] if r.get("back") is not None else base.context_back,
        context_forward=r["forward"] if r.get("forward") is not None else base.context_forward,
        learning_rate=r["learning_rate"] if r.get("learning_rate") is not None else base.learning_rate,
        epochs=r["epochs"] if r.get("epochs") is not None else base.epochs,
        batch_size=r["batch_size"] if r.get("batch_size") is not None else base.batch_size,
        seed=_derive_seed(r["seed"], "train"),
    )


def cmd_train(args, file_config) -> int:
    keys = ["out", "corpus", "hidden", "back", "forward", "learning_rate", "epochs",
            "batch_size", "resume"]
    r = _resolve(args, file_config, keys, {})
    out = Path(_require(r, "out", "out"))
    corpus_dir = Path(_require(r, "corpus", "corpus"))
    if not (corpus_dir / "manifest.csv").exists():
        raise UsageError(f"no corpus at {corpus_dir} (missing manifest.csv)")
    initial = None
    if r["resume"] is not None:
        _, initial = load_model(Path(r["resume"]))

    corpus = load_corpus(corpus_dir)
    config = _model_config_from(r, num_classes=len(corpus.class_names))
    out.mkdir(parents=True, exist_ok=True)
    _echo_config(out, "train", {**r, "model": config.to_dict(), "classes": corpus.class_names})

    logger.info("training on %d clips (%d classes)", len(corpus.clip_ids), config.num_classes)
    result = train(
        config,
        corpus.training_clips(),
        initial_params=initial,
        log_fn=lambda e, l: logger.info("epoch %d loss %.6f", e, l),
    )
    save_model(out / "model.ckpt", config, result.params)
    with open(out / "loss_trace.csv", "w") as fh:
        fh.write("epoch,loss\n")
        for i, value in enumerate(result.loss_trace):
            fh.write(f"{i},{value:.9g}\n")
    print(f"trained {config.epochs} epochs; "
          f"loss {result.loss_trace[0]:.4f} -> {result.loss_trace[-1]:.4f}")
    print(f"checkpoint {out / 'model.ckpt'}")
    return 0


def cmd_detect(args, file_config) -> int:
    keys = ["out", "corpus", "checkpoint", "rule", "threshold", "forward"]
    r = _resolve(args, file_config, keys, {"rule": "vacuity"})
    out = Path(_require(r, "out", "out"))
    ckpt_path = Path(_require(r, "checkpoint", "checkpoint"))
    corpus_dir = Path(_require(r, "corpus", "corpus"))
    config, params = load_model(ckpt_path)
    corpus = load_corpus(corpus_dir)
    if len(corpus.class_names) != config.num_classes:
        raise UsageError(
            f"checkpoint has {config.num_classes} classes, corpus has {len(corpus.class_names)}"
        )
    rule_kind = r["rule"]
    threshold = r["threshold"]
    rule = (DecisionRule(rule_kind, float(threshold)) if threshold is not None
            else DecisionRule.with_default_threshold(rule_kind))
    forward_steps = int(r["forward"]) if r["forward"] is not None else config.context_forward

    out.mkdir(parents=True, exist_ok=True)
    _echo_config(out, "detect", {**r, "rule_threshold": rule.threshold,
                                 "back": config.context_back, "forward": forward_steps})

    rows = []
    step_seconds = []
    for clip_id in corpus.clip_ids:
        detector = Detector(
            params, config.num_classes, rule,
            back=config.context_back, forward=forward_steps,
        )
        for segment in corpus.segments[clip_id]:
            t0 = time.perf_counter()
            decision = detector.step(segment)
            step_seconds.append(time.perf_counter() - t0)
            if decision is None:
                continue
            for k, name in enumerate(corpus.class_names):
                rows.append((
                    clip_id, decision.segment_index, name, int(decision.decisions[k]),
                    decision.belief[k], decision.disbelief[k], decision.vacuity[k],
                    decision.probability[k],
                ))
    io.write_detection_log(out / "detections.csv", rows)
    mean_step = float(np.mean(step_seconds))
    (out / "timing.json").write_text(json.dumps({
        "mean_step_seconds": mean_step,
        "segments": len(step_seconds),
        "real_time_budget_seconds": 0.064,
    }, indent=2) + "\n")
    print(f"wrote {len(rows)} log rows to {out / 'detections.csv'}")
    print(f"mean per-segment step {mean_step * 1e3:.3f} ms (budget 64 ms)")
    return 0


def _positives_from_log(path: Path):
    positives: dict[str, dict[str, list[int]]] = {}
    for stream_id, seg, label, decision, *_ in io.read_detection_log(path):
        clip = positives.setdefault(stream_id, {})
        if decision:
            clip.setdefault(label, []).append(seg)
    return {
        cid: {name: np.array(sorted(idx), dtype=np.int64) for name, idx in by.items()}
        for cid, by in positives.items()
    }


def cmd_eval(args, file_config) -> int:
    keys = ["out", "detections", "corpus", "tolerance", "forward", "strict"]
    r = _resolve(args, file_config, keys, {"tolerance": DEFAULT_TOLERANCE, "strict": False})
    det_path = Path(_require(r, "detections", "detections"))
    corpus_dir = Path(_require(r, "corpus", "corpus"))
    if det_path.is_dir():
        log_path = det_path / "detections.csv"
        echo_path = det_path / "config.json"
    else:
        log_path = det_path
        echo_path = det_path.parent / "config.json"
    if not log_path.exists():
        raise UsageError(f"no detection log at {log_path}")
    forward_steps = r["forward"]
    if forward_steps is None and echo_path.exists():
        forward_steps = json.loads(echo_path.read_text()).get("forward", 0)
    forward_steps = int(forward_steps or 0)
    if float(r["tolerance"]) > 0.0:
        raise UsageError(f"--tolerance is an early allowance and must be <= 0, got {r['tolerance']}")

    corpus = load_corpus(corpus_dir)
    positives = _positives_from_log(log_path)
    for clip_id in corpus.clip_ids:  # clips with no positives at all still count
        positives.setdefault(clip_id, {})
    records = match_events(
        positives,
        corpus.annotations,
        float(r["tolerance"]),
        forward_steps=forward_steps,
        durations=corpus.durations,
        strict=bool(r["strict"]),
    )
    summary = early_f1(records)
    payload = {
        "f1": summary.f1,
        "mean_delay_seconds": summary.mean_delay,
        "tp": summary.tp,
        "fp": summary.fp,
        "fn": summary.fn,
        "tolerance": float(r["tolerance"]),
        "forward_steps": forward_steps,
        "strict": bool(r["strict"]),
    }
    if r["out"] is not None:
        out = Path(r["out"])
        out.mkdir(parents=True, exist_ok=True)
        _echo_config(out, "eval", r)
        (out / "summary.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(f"F1 {summary.f1:.4f}  mean delay {summary.mean_delay:.4f}s  "
          f"TP {summary.tp} FP {summary.fp} FN {summary.fn}")
    return 0


def _parse_grid(text: str | None, default, cast):
    if text is None:
        return list(default)
    try:
        return [cast(v) for v in text.split(",") if v.strip()]
    except ValueError as err:
        raise UsageError(f"bad --grid value: {err}") from err


def _write_sweep_csv(path: Path, result) -> None:
    with open(path, "w") as fh:
        fh.write(f"{result.parameter_name},mean_delay,f1,tp,fp,fn,trained_per_point\n")
        for row in result.rows:
            fh.write(
                f"{row.parameter:.9g},{row.mean_delay:.9g},{row.f1:.9g},"
                f"{row.tp},{row.fp},{row.fn},{int(result.trained_per_point)}\n"
            )


def cmd_sweep(args, file_config) -> int:
    keys = ["out", "corpus", "checkpoint", "grid", "tolerance", "hidden", "back",
            "learning_rate", "epochs", "batch_size"]
    r = _resolve(args, file_config, keys, {"tolerance": DEFAULT_TOLERANCE})
    out = Path(_require(r, "out", "out"))
    corpus_dir = Path(_require(r, "corpus", "corpus"))
    corpus = load_corpus(corpus_dir)
    tolerance = float(r["tolerance"])
    if tolerance > 0.0:
        raise UsageError(f"--tolerance is an early allowance and must be <= 0, got {tolerance}")
    out.mkdir(parents=True, exist_ok=True)
    _echo_config(out, f"sweep-{args.param}", r)

    if args.param == "vacuity":
        ckpt = Path(_require(r, "checkpoint", "checkpoint"))
        config, params = load_model(ckpt)
        grid = _parse_grid(r["grid"], VACUITY_GRID, float)
        result = sweep_vacuity(
            params, corpus, grid,
            num_classes=config.num_classes,
            back=config.context_back,
            forward=config.context_forward,
            tolerance=tolerance,
        )
        csv_path = out / "sweep_vacuity.csv"
    else:
        grid = _parse_grid(r["grid"], BACKTRACK_GRID, int)
        base_config = _model_config_from(r, num_classes=len(corpus.class_names))
        shared = None
        if r["checkpoint"] is not None:
            _, shared = load_model(Path(r["checkpoint"]))
        result = sweep_backtrack(
            corpus, grid,
            train_clips=corpus.training_clips(),
            base_config=base_config,
            rule=DecisionRule.with_default_threshold("vacuity"),
            tolerance=tolerance,
            shared_params=shared,
        )
        csv_path = out / "sweep_backtrack.csv"

    _write_sweep_csv(csv_path, result)
    print(f"{result.parameter_name}  mean_delay  f1")
    for row in result.rows:
        print(f"{row.parameter:>12.3g}  {row.mean_delay:10.4f}  {row.f1:.4f}")
    print(result.delay_monotone_notes)
    print(f"wrote {csv_path}")
    return 0


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "detect": cmd_detect,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        file_config = _load_config_file(args.config)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1

    _ACTIVE_OUT.clear()
    try:
        return COMMANDS[args.command](args, file_config)
    except (UsageError, ConfigError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # runtime failure: mark partial outputs
        logger.exception("command failed")
        out_dir = _ACTIVE_OUT[-1] if _ACTIVE_OUT else getattr(args, "out", None)
        if out_dir is not None and Path(out_dir).exists():
            (Path(out_dir) / ".failed").write_text(f"{type(err).__name__}: {err}\n")
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
