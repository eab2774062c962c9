from pathlib import Path

import pytest

from camadapt.settings import (
    Settings,
    get_settings,
    load_config,
    parse_config,
    reset_settings,
    set_settings,
)
from camadapt.training.config import TrainConfig
from camadapt.types import ConfigError, DatasetIOError, ExitCode


def test_load_config(tmp_path: Path) -> None:
    """A JSON file validates into its frozen model."""
    path = tmp_path / "train.json"
    path.write_text('{"epochs": 3, "batch_size": 8}', encoding="utf-8")
    config = load_config(path, TrainConfig)
    assert config.epochs == 3
    assert config.batch_size == 8
    assert config.lr_start == 1e-4


def test_settings_seed_overrides_file(tmp_path: Path) -> None:
    """An active seed replaces the seed written in the file."""
    path = tmp_path / "train.json"
    path.write_text('{"seed": 5}', encoding="utf-8")
    assert load_config(path, TrainConfig).seed == 5

    token = set_settings(Settings(seed=11))
    try:
        assert load_config(path, TrainConfig).seed == 11
    finally:
        reset_settings(token)
    assert get_settings().seed is None


def test_syntax_error_has_line_number(tmp_path: Path) -> None:
    """Malformed JSON reports the file, line and column."""
    path = tmp_path / "bad.json"
    path.write_text('{\n  "epochs": 3,\n  oops\n}', encoding="utf-8")
    with pytest.raises(ConfigError, match=r"bad\.json: line 3, column 3") as info:
        load_config(path, TrainConfig)
    assert info.value.exit_code == ExitCode.CONFIG_ERROR


def test_validation_error_names_field() -> None:
    """Validation failures list the offending field path."""
    with pytest.raises(ConfigError, match="epochs"):
        parse_config({"epochs": 0}, TrainConfig, source="inline")
    with pytest.raises(ConfigError, match="unknown"):
        parse_config({"unknown": 1}, TrainConfig)


def test_missing_config_is_an_io_error(tmp_path: Path) -> None:
    """An unreadable file is an I/O error, not a config error."""
    with pytest.raises(DatasetIOError):
        load_config(tmp_path / "absent.json", TrainConfig)


def test_settings_from_environment(monkeypatch: pytest.MonkeyPatch) -> None:
    """Settings read the CAMADAPT_ environment."""
    monkeypatch.setenv("CAMADAPT_SEED", "7")
    monkeypatch.setenv("CAMADAPT_JOBS", "3")
    monkeypatch.setenv("CAMADAPT_DRY_RUN", "true")
    settings = Settings()
    assert (settings.seed, settings.jobs, settings.dry_run) == (7, 3, True)
