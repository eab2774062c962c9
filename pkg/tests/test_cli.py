import hashlib
import json
import logging
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
import torch
from click.testing import CliRunner

from camadapt.bench import emit_report, load_report
from camadapt.imaging.preprocess import load_image, save_image
from camadapt.main import cli
from camadapt.manifest import Manifest
from camadapt.models.classifier import Classifier
from camadapt.training.adaptation import AdaptationTrainer, save_run
from camadapt.types import ExitCode
from tests.utils.tiny import (
    TINY_SIZE,
    image_files,
    sample_report,
    tiny_classifier_config,
    tiny_discriminator_config,
    tiny_generator_config,
    tiny_synth_config,
    tiny_train_config,
)


def _checksum(root: Path) -> str:
    digest = hashlib.sha256()
    for path in image_files(root):
        digest.update(path.relative_to(root).as_posix().encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()


@pytest.fixture
def synth_config(tmp_path: Path) -> Path:
    """The tiny dataset config as a JSON file."""
    path = tmp_path / "synth.json"
    path.write_text(tiny_synth_config().model_dump_json(), encoding="utf-8")
    return path


@pytest.fixture
def identity_run(tmp_path: Path, random_images: torch.Tensor) -> Path:
    """An untrained adaptation run saved to disk."""
    run = AdaptationTrainer(
        "A",
        "B",
        random_images[:4].float(),
        random_images[4:].float(),
        Classifier(tiny_classifier_config(), seed=0).eval(),
        tiny_train_config(),
        generator=tiny_generator_config(),
        discriminator=tiny_discriminator_config(),
    ).run
    save_run(run, tmp_path / "run")
    return tmp_path / "run"


def test_synth_is_reproducible(tmp_path: Path, synth_config: Path) -> None:
    """Two runs with the same config write byte-identical images."""
    runner = CliRunner()
    for name in ("first", "second"):
        result = runner.invoke(
            cli, ["-q", "synth", str(tmp_path / name), "-c", str(synth_config)]
        )
        assert result.exit_code == 0, result.output
        assert "Wrote 20 images" in result.output
    assert image_files(tmp_path / "first")
    assert _checksum(tmp_path / "first") == _checksum(tmp_path / "second")


def test_synth_dry_run_writes_nothing(tmp_path: Path, synth_config: Path) -> None:
    """A dry run prints the plan and leaves the output directory absent."""
    result = CliRunner().invoke(
        cli,
        ["-q", "--dry-run", "synth", str(tmp_path / "out"), "-c", str(synth_config)],
    )
    assert result.exit_code == 0, result.output
    assert "[dry-run]" in result.output
    assert not (tmp_path / "out").exists()


def test_malformed_config_exits_with_config_code(
    tmp_path: Path, caplog: pytest.LogCaptureFixture
) -> None:
    """Invalid JSON is a configuration error with exit code 2."""
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")
    with caplog.at_level(logging.ERROR):
        result = CliRunner().invoke(
            cli, ["synth", str(tmp_path / "out"), "-c", str(bad)]
        )
    assert result.exit_code == ExitCode.CONFIG_ERROR == 2
    assert str(bad) in caplog.text


def test_invalid_config_values_exit_with_config_code(tmp_path: Path) -> None:
    """A config that fails validation also exits with code 2."""
    config = json.loads(tiny_synth_config().model_dump_json())
    config["image_size"] = -1
    path = tmp_path / "invalid.json"
    path.write_text(json.dumps(config), encoding="utf-8")
    args = ["synth", str(tmp_path / "out"), "-c", str(path)]
    result = CliRunner().invoke(cli, args)
    assert result.exit_code == 2


def test_gradcheck_passes() -> None:
    """All loss terms pass the finite-difference check."""
    result = CliRunner().invoke(cli, ["-q", "gradcheck"])
    assert result.exit_code == 0, result.output
    for term in ("gan_F", "gan_G", "cyc", "idt"):
        assert term in result.output
    assert "FAIL" not in result.output


def test_gradcheck_detects_corrupted_gradients() -> None:
    """Scaled autograd gradients fail the check with exit code 1."""
    result = CliRunner().invoke(cli, ["-q", "gradcheck", "--corrupt-gradients"])
    assert result.exit_code == ExitCode.CHECK_FAILED == 1
    assert "FAIL" in result.output


def test_transform_with_identity_run(
    tmp_path: Path, identity_run: Path, random_images: torch.Tensor
) -> None:
    """An untrained G returns its inputs unchanged and a residue map per image."""
    inputs = tmp_path / "inputs"
    for i, image in enumerate(random_images[:3]):
        save_image(inputs / f"img{i}.png", image.permute(1, 2, 0).numpy())

    result = CliRunner().invoke(
        cli,
        ["-q", "transform", str(identity_run), str(inputs), "-o", str(tmp_path / "o")],
    )

    assert result.exit_code == 0, result.output
    written = sorted(p.name for p in (tmp_path / "o").iterdir())
    assert written == [
        "img0.png",
        "img0_residue.png",
        "img1.png",
        "img1_residue.png",
        "img2.png",
        "img2_residue.png",
    ]
    for i in range(3):
        original = load_image(inputs / f"img{i}.png")
        transformed = load_image(tmp_path / "o" / f"img{i}.png")
        assert np.array_equal(original, transformed)


def test_transform_rejects_size_mismatch(tmp_path: Path, identity_run: Path) -> None:
    """Images at another resolution exit with code 3 unless resized."""
    image = np.full((2 * TINY_SIZE, 2 * TINY_SIZE, 3), 0.5, dtype=np.float32)
    save_image(tmp_path / "big.png", image)
    args = ["-q", "transform", str(identity_run), str(tmp_path / "big.png")]

    result = CliRunner().invoke(cli, [*args, "-o", str(tmp_path / "o")])
    assert result.exit_code == ExitCode.ARTIFACT_MISMATCH == 3
    assert not (tmp_path / "o").exists()

    result = CliRunner().invoke(cli, [*args, "-o", str(tmp_path / "o"), "--resize"])
    assert result.exit_code == 0, result.output
    assert load_image(tmp_path / "o" / "big.png").shape == (TINY_SIZE, TINY_SIZE, 3)


def test_report_conversion(tmp_path: Path) -> None:
    """A JSON report converts to markdown and back to the same report."""
    emit_report(sample_report(), tmp_path / "r.json", "json")
    runner = CliRunner()

    result = runner.invoke(
        cli, ["-q", "report", str(tmp_path / "r.json"), "-o", str(tmp_path / "r.md")]
    )
    assert result.exit_code == 0, result.output
    assert (tmp_path / "r.md").read_text(encoding="utf-8").startswith("# Camera")

    result = runner.invoke(
        cli,
        [
            "-q",
            "report",
            str(tmp_path / "r.json"),
            "-f",
            "json",
            "-o",
            str(tmp_path / "again.json"),
        ],
    )
    assert result.exit_code == 0, result.output
    assert load_report(tmp_path / "again.json") == sample_report()


def test_missing_checkpoint_is_a_usage_error(tmp_path: Path) -> None:
    """Click rejects paths that do not exist before any command runs."""
    result = CliRunner().invoke(
        cli, ["transform", str(tmp_path / "absent"), "-o", str(tmp_path / "o")]
    )
    assert result.exit_code == 2
    assert "does not exist" in result.output


@pytest.mark.parametrize("source", ["Z", "A"])
def test_bad_training_input_exits_with_config_code(
    tmp_path: Path, tiny_dataset: Manifest, source: str
) -> None:
    """An unknown brand or a brand without train images is a config error."""
    assert tiny_dataset.root is not None
    frame = pd.read_csv(tiny_dataset.root / "manifest.csv")
    manifest = tmp_path / "test_only.csv"
    frame[frame["split"] == "test"].to_csv(manifest, index=False)
    args = ["train-cls", str(manifest), "--source", source, "--task", "binary"]

    result = CliRunner().invoke(cli, [*args, "-o", str(tmp_path / "cls")])

    assert result.exit_code == ExitCode.CONFIG_ERROR
    assert not isinstance(result.exception, (KeyError, ValueError))


def test_transform_blank_image_exits_with_config_code(
    tmp_path: Path, identity_run: Path
) -> None:
    """A blank input has nothing to square."""
    save_image(tmp_path / "black.png", np.zeros((32, 32, 3)))
    args = ["transform", str(identity_run), str(tmp_path / "black.png"), "--resize"]
    result = CliRunner().invoke(cli, [*args, "-o", str(tmp_path / "o")])
    assert result.exit_code == ExitCode.CONFIG_ERROR
    assert not (tmp_path / "o").exists()


def test_gradcheck_rejects_bad_size() -> None:
    """Toy sizes must be multiples of 16."""
    result = CliRunner().invoke(cli, ["gradcheck", "--size", "24"])
    assert result.exit_code == 2
    assert "multiple of 16" in result.output
