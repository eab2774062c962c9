import json
from contextvars import ContextVar, Token
from pathlib import Path

from pydantic import BaseModel, Field, ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from camadapt.types import ConfigError, DatasetIOError


class Settings(BaseSettings):
    """Process-wide settings for camadapt commands."""

    seed: int | None = Field(default=None)
    jobs: int = Field(default=1, ge=1)
    dry_run: bool = Field(default=False)

    model_config = SettingsConfigDict(
        env_prefix="CAMADAPT_",
        env_nested_delimiter="__",
        extra="forbid",
        frozen=True,
    )


_current_settings: ContextVar[Settings] = ContextVar(
    "camadapt_settings", default=Settings()  # noqa: B039
)


def get_settings() -> Settings:
    """Get the settings of the running command.

    Outside a command these come from the `CAMADAPT_*` environment.

    Returns:
        Settings: The active settings.
    """
    return _current_settings.get()


def set_settings(settings: Settings) -> Token[Settings]:
    """Activate settings for the current context.

    Args:
        settings (Settings): The settings built from the global CLI options.

    Returns:
        Token[Settings]: Token for `reset_settings`.
    """
    return _current_settings.set(settings)


def reset_settings(token: Token[Settings]) -> None:
    """Restore the settings that were active before `set_settings`."""
    _current_settings.reset(token)


def load_config[M: BaseModel](path: Path, model: type[M]) -> M:
    """Load a JSON config file into a pydantic model.

    If the current settings carry a seed and the model has a ``seed`` field, the
    settings seed overrides the file value.

    Args:
        path: The JSON file to read.
        model: The pydantic model class to validate against.

    Returns:
        M: The validated config.

    Raises:
        ConfigError: If the file is not valid JSON or fails validation.
        DatasetIOError: If the file cannot be read.
    """
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        msg = f"Cannot read config file {path}: {e}"
        raise DatasetIOError(msg) from e

    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        msg = f"{path}: line {e.lineno}, column {e.colno}: {e.msg}"
        raise ConfigError(msg) from e

    return parse_config(data, model, source=str(path))


def parse_config[M: BaseModel](data: object, model: type[M], source: str = "") -> M:
    """Validate already decoded config data, applying the seed override.

    Args:
        data: The decoded JSON data.
        model: The pydantic model class to validate against.
        source: A description of the data origin for error messages.

    Returns:
        M: The validated config.

    Raises:
        ConfigError: If validation fails.
    """
    seed = get_settings().seed
    if seed is not None and "seed" in model.model_fields and isinstance(data, dict):
        data = {**data, "seed": seed}

    try:
        return model.model_validate(data)
    except ValidationError as e:
        problems = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}"
            for err in e.errors()
        )
        msg = f"{source or model.__name__}: {problems}"
        raise ConfigError(msg) from e
