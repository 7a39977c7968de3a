import json
from pathlib import Path

from pydantic import ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from src.errors import ConfigError
from src.schemas import RunConfig


class Settings(BaseSettings):
    cache: Path | None = None
    log_level: str = "INFO"
    max_tensor_points: int = 100_000
    max_midpoint_points: int = 1_000_000
    max_workers: int = 4
    solver_timeout: float = 3600.0

    model_config = SettingsConfigDict(env_prefix="MFUQ_", env_file=".env", env_file_encoding="utf-8",
                                      extra="ignore")


settings = Settings()


def load_run_config(path: Path) -> RunConfig:
    """
    Read and validate a JSON run configuration.

    :param path: Configuration file.
    :type path: Path
    :return: The validated configuration.
    :rtype: RunConfig
    :raises ConfigError: with the line and column of a syntax error, or the field path of a
        validation error.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise ConfigError(f"{path}: cannot read configuration ({err.strerror})")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}:{err.lineno}:{err.colno}: {err.msg}")
    try:
        return RunConfig.model_validate(data)
    except ValidationError as err:
        problems = "; ".join(f"{'.'.join(str(p) for p in e['loc']) or '<root>'}: {e['msg']}" for e in err.errors())
        raise ConfigError(f"{path}: {problems}")
