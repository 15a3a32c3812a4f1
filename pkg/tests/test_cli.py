"""End-to-end command line runs: same seed, same bytes."""
import json

import pytest

from xrpose.cli import main


def _run(*argv):
    assert main([str(a) for a in argv]) == 0


def _same(a, b, names):
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes(), n


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen")
    _run("--seed", 1, "--out", out, "generate", "--split", "test", "--count", 4)
    return out


def test_generate_is_byte_identical(dataset, tmp_path):
    _run("--seed", 1, "--out", tmp_path, "generate", "--split", "test", "--count", 4)
    _same(dataset, tmp_path, ["records.csv", "manifest.jsonl"])
    for img in (dataset / "images").iterdir():
        assert img.read_bytes() == (tmp_path / "images" / img.name).read_bytes()


def test_generate_seed_matters(dataset, tmp_path):
    _run("--seed", 2, "--out", tmp_path, "generate", "--split", "test", "--count", 4)
    assert (dataset / "records.csv").read_bytes() != (tmp_path / "records.csv").read_bytes()


def test_evaluate_is_byte_identical(dataset, tmp_path):
    for d in ("a", "b"):
        _run("--seed", 5, "--out", tmp_path / d, "evaluate", "--data", dataset, "--noise", 0.5, "--trials", 2)
    _same(tmp_path / "a", tmp_path / "b", ["errors.csv", "summary.csv"])
    assert "published reference" in (tmp_path / "a" / "summary.csv").read_text()


def test_train_rectangle_is_byte_identical(tmp_path):
    for d in ("a", "b"):
        _run("--seed", 3, "--out", tmp_path / d, "train", "--task", "rectangle", "--head", "direct",
             "--train-count", 40, "--test-count", 10, "--epochs", 2, "--channels", 2, "--fc-base", 4)
    _same(tmp_path / "a", tmp_path / "b", ["loss_curve.csv", "test_errors.csv"])
    assert len((tmp_path / "a" / "test_errors.csv").read_text().splitlines()) == 11


def test_train_patches_then_estimate(dataset, tmp_path):
    for d in ("a", "b"):
        _run("--seed", 0, "--out", tmp_path / d, "train", "--task", "patches", "--data", dataset,
             "--patches-per-image", 2, "--epochs", 1, "--channels", 2, "--fc-base", 4)
    _same(tmp_path / "a", tmp_path / "b", ["loss_curve.csv"])
    _run("--out", tmp_path / "est", "estimate", "--data", dataset, "--predictor", "convnet",
         "--weights", tmp_path / "a" / "weights", "--k-max", 1)
    assert (tmp_path / "est" / "estimates.csv").exists()


def test_config_file_supplies_defaults(dataset, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"version": 1, "seed": 5, "evaluate": {"noise": 0.5, "trials": 2}}))
    _run("--config", cfg, "--out", tmp_path / "a", "evaluate", "--data", dataset)
    _run("--seed", 5, "--out", tmp_path / "b", "evaluate", "--data", dataset, "--noise", 0.5, "--trials", 2)
    _same(tmp_path / "a", tmp_path / "b", ["errors.csv"])


def test_config_version_checked(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"version": 99}))
    with pytest.raises(SystemExit):
        main(["--config", str(cfg), "generate"])


def test_register_and_plot(dataset, tmp_path):
    _run("--out", tmp_path, "register", "--data", dataset, "--budget", 20, "--trials", 1, "--records", 1)
    _run("--out", tmp_path / "ev", "evaluate", "--data", dataset)
    _run("--out", tmp_path / "svg", "plot", tmp_path / "registration.csv", tmp_path / "ev" / "errors.csv")
    assert (tmp_path / "svg" / "box_position_mm.svg").exists()
