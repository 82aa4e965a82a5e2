import pytest

from evsed.cli import main


@pytest.fixture(scope="session")
def mini_pipeline(tmp_path_factory):
    """One tiny gen->train->detect run shared by the CLI-facing tests."""
    root = tmp_path_factory.mktemp("mini")
    corpus = root / "corpus"
    run = root / "run"
    det = root / "det"
    assert main([
        "gen", "--out", str(corpus), "--clips", "4", "--clip-seconds", "2",
        "--seed", "11", "--snr-min", "8", "--snr-max", "12",
    ]) == 0
    assert main([
        "train", "--corpus", str(corpus), "--out", str(run),
        "--epochs", "3", "--hidden", "16", "--lr", "0.005", "--seed", "11",
    ]) == 0
    assert main([
        "detect", "--corpus", str(corpus), "--checkpoint", str(run / "model.ckpt"),
        "--out", str(det), "--rule", "vacuity", "--threshold", "0.9",
    ]) == 0
    return {"root": root, "corpus": corpus, "run": run, "det": det}
