"""Command-line behavior: exit codes, reproducibility, file contracts."""

import csv
import hashlib
import json

import numpy as np
import pytest

from evsed import io
from evsed.cli import main
from evsed.data import load_corpus, rasterize_labels


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


class TestGen:
    def test_writes_requested_clip_count(self, tmp_path):
        out = tmp_path / "c"
        assert main(["gen", "--out", str(out), "--clips", "3", "--clip-seconds", "2"]) == 0
        assert len(io.read_manifest(out / "manifest.csv")) == 3
        assert (out / "config.json").exists()

    def test_repeated_seed_reproduces_manifest_hash(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert main([
                "gen", "--out", str(out), "--clips", "3", "--clip-seconds", "2", "--seed", "5",
            ]) == 0
        assert sha(a / "manifest.csv") == sha(b / "manifest.csv")
        assert sha(a / "labels.tsv") == sha(b / "labels.tsv")
        assert sha(a / "audio" / "clip_00000.wav") == sha(b / "audio" / "clip_00000.wav")

    def test_infeasible_event_range_exits_1_naming_field(self, tmp_path, capsys):
        code = main([
            "gen", "--out", str(tmp_path / "x"), "--clips", "1",
            "--clip-seconds", "1", "--duration-min", "0.5", "--duration-max", "5.0",
        ])
        assert code == 1
        assert "event_duration" in capsys.readouterr().err

    def test_config_file_provides_values_flags_override(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"gen": {"clips": 3, "clip_seconds": 2.0}}))
        out1 = tmp_path / "from_file"
        assert main(["gen", "--config", str(cfg), "--out", str(out1)]) == 0
        assert len(io.read_manifest(out1 / "manifest.csv")) == 3
        out2 = tmp_path / "flag_wins"
        assert main(["gen", "--config", str(cfg), "--out", str(out2), "--clips", "2"]) == 0
        assert len(io.read_manifest(out2 / "manifest.csv")) == 2


class TestTrain:
    def test_missing_corpus_exits_1_without_outputs(self, tmp_path, capsys):
        out = tmp_path / "run"
        code = main(["train", "--corpus", str(tmp_path / "nope"), "--out", str(out)])
        assert code == 1
        assert "corpus" in capsys.readouterr().err
        assert not out.exists()

    def test_trains_and_is_deterministic(self, mini_pipeline, tmp_path):
        out = tmp_path / "run2"
        assert main([
            "train", "--corpus", str(mini_pipeline["corpus"]), "--out", str(out),
            "--epochs", "3", "--hidden", "16", "--lr", "0.005", "--seed", "11",
        ]) == 0
        assert sha(out / "loss_trace.csv") == sha(mini_pipeline["run"] / "loss_trace.csv")
        assert sha(out / "model.ckpt") == sha(mini_pipeline["run"] / "model.ckpt")

    def test_resume_from_checkpoint(self, mini_pipeline, tmp_path):
        out = tmp_path / "resumed"
        assert main([
            "train", "--corpus", str(mini_pipeline["corpus"]), "--out", str(out),
            "--epochs", "2", "--hidden", "16", "--lr", "0.005", "--seed", "11",
            "--resume", str(mini_pipeline["run"] / "model.ckpt"),
        ]) == 0
        with open(out / "loss_trace.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 2
        resumed_first = float(rows[0]["loss"])
        with open(mini_pipeline["run"] / "loss_trace.csv") as fh:
            prior = [float(r["loss"]) for r in csv.DictReader(fh)]
        assert resumed_first <= 1.10 * prior[-1]

    def test_divergent_resume_leaves_failed_marker(self, mini_pipeline, tmp_path):
        from evsed.model import load_model, save_model

        config, params = load_model(mini_pipeline["run"] / "model.ckpt")
        params["head_w"][0, 0] = np.nan
        bad = tmp_path / "bad.ckpt"
        save_model(bad, config, params)
        out = tmp_path / "diverged"
        code = main([
            "train", "--corpus", str(mini_pipeline["corpus"]), "--out", str(out),
            "--epochs", "1", "--hidden", "16", "--seed", "11", "--resume", str(bad),
        ])
        assert code == 2
        assert (out / ".failed").exists()
        assert "diverged" in (out / ".failed").read_text()


class TestDetect:
    def test_log_row_count_and_columns(self, mini_pipeline):
        det = mini_pipeline["det"]
        rows = list(io.read_detection_log(det / "detections.csv"))
        corpus = load_corpus(mini_pipeline["corpus"])
        segments_per_clip = corpus.segments[corpus.clip_ids[0]].shape[0]
        assert len(rows) == 4 * segments_per_clip * len(corpus.class_names)
        timing = json.loads((det / "timing.json").read_text())
        assert timing["mean_step_seconds"] < 0.064

    def test_probability_rule_baseline(self, mini_pipeline, tmp_path):
        out = tmp_path / "prob"
        assert main([
            "detect", "--corpus", str(mini_pipeline["corpus"]),
            "--checkpoint", str(mini_pipeline["run"] / "model.ckpt"),
            "--out", str(out), "--rule", "probability", "--threshold", "0.5",
        ]) == 0
        assert (out / "detections.csv").exists()

    def test_bad_checkpoint_is_runtime_error(self, mini_pipeline, tmp_path, capsys):
        junk = tmp_path / "junk.ckpt"
        junk.write_bytes(b"garbage")
        code = main([
            "detect", "--corpus", str(mini_pipeline["corpus"]),
            "--checkpoint", str(junk), "--out", str(tmp_path / "d"),
        ])
        assert code == 2
        assert "magic" in capsys.readouterr().err


class TestEval:
    def test_eval_runs_and_writes_summary(self, mini_pipeline, tmp_path, capsys):
        out = tmp_path / "eval"
        assert main([
            "eval", "--detections", str(mini_pipeline["det"]),
            "--corpus", str(mini_pipeline["corpus"]), "--out", str(out),
        ]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert set(summary) >= {"f1", "mean_delay_seconds", "tp", "fp", "fn"}
        assert "F1" in capsys.readouterr().out

    def test_ground_truth_as_predictions_scores_perfect(self, mini_pipeline, tmp_path):
        corpus = load_corpus(mini_pipeline["corpus"])
        rows = []
        for clip_id in corpus.clip_ids:
            labels = rasterize_labels(
                corpus.annotations[clip_id],
                corpus.segments[clip_id].shape[0],
                corpus.class_names,
            )
            for t in range(labels.shape[0]):
                for k, name in enumerate(corpus.class_names):
                    rows.append((clip_id, t, name, int(labels[t, k]), 0.5, 0.0, 0.5, 0.75))
        log = tmp_path / "gt" / "detections.csv"
        log.parent.mkdir()
        io.write_detection_log(log, rows)
        out = tmp_path / "gt_eval"
        assert main([
            "eval", "--detections", str(log), "--corpus", str(mini_pipeline["corpus"]),
            "--out", str(out),
        ]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["f1"] == 1.0
        assert summary["mean_delay_seconds"] <= 0.064

    def test_positive_tolerance_is_usage_error(self, mini_pipeline):
        assert main([
            "eval", "--detections", str(mini_pipeline["det"]),
            "--corpus", str(mini_pipeline["corpus"]), "--tolerance", "0.5",
        ]) == 1

    def test_strict_flag_accepted(self, mini_pipeline, capsys):
        assert main([
            "eval", "--detections", str(mini_pipeline["det"]),
            "--corpus", str(mini_pipeline["corpus"]), "--strict-eq8",
        ]) == 0


class TestSweep:
    def test_vacuity_sweep_one_row_per_grid_point(self, mini_pipeline, tmp_path):
        out = tmp_path / "sv"
        assert main([
            "sweep", "--param", "vacuity", "--corpus", str(mini_pipeline["corpus"]),
            "--checkpoint", str(mini_pipeline["run"] / "model.ckpt"),
            "--out", str(out), "--grid", "0.5,0.7,0.9,1.0",
        ]) == 0
        with open(out / "sweep_vacuity.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 4
        assert [float(r["vacuity_threshold"]) for r in rows] == [0.5, 0.7, 0.9, 1.0]

    def test_backtrack_sweep_delay_strictly_increasing(self, mini_pipeline, tmp_path):
        out = tmp_path / "sb"
        assert main([
            "sweep", "--param", "backtrack", "--corpus", str(mini_pipeline["corpus"]),
            "--out", str(out), "--grid", "0,2", "--epochs", "2", "--hidden", "16",
            "--lr", "0.005", "--seed", "11",
        ]) == 0
        with open(out / "sweep_backtrack.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 2
        assert all(r["trained_per_point"] == "1" for r in rows)
        delays = [float(r["mean_delay"]) for r in rows]
        assert delays[1] > delays[0]


class TestUsage:
    def test_unknown_flag_exits_1(self, capsys):
        assert main(["gen", "--frobnicate"]) == 1

    def test_missing_required_out_exits_1(self, capsys):
        assert main(["gen"]) == 1
        assert "required" in capsys.readouterr().err
