from __future__ import annotations

import configparser
from dataclasses import dataclass, field
import os
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from .schemas import ExperimentConfig


def _parse_origins(raw: str) -> List[str]:
    if not raw or raw.strip() in {"", "*"}:
        return ["*"]
    items = [chunk.strip() for chunk in raw.split(",")]
    return [item for item in items if item] or ["*"]


def _env_bool(key: str, default: bool) -> bool:
    value = os.getenv(key)
    if value is None:
        return default
    return value.strip().lower() in {"1", "true", "yes", "on"}


def _env_float(key: str, default: float) -> float:
    value = os.getenv(key)
    if value is None or not value.strip():
        return default
    return float(value)


def _env_int(key: str, default: int) -> int:
    value = os.getenv(key)
    if value is None or not value.strip():
        return default
    return int(float(value))


@dataclass
class Settings:
    abs_C: float = _env_float("BEAM_ABS_C", 1.0)
    abs_small_c: float = _env_float("BEAM_ABS_SMALL_C", 1.0)
    m_grid: int = _env_int("BEAM_M_GRID", 1024)
    truncation_buffer: int = _env_int("BEAM_TRUNCATION_BUFFER", 2)
    sample_every: int = _env_int("BEAM_SAMPLE_EVERY", 10)
    n_jobs: int = _env_int("BEAM_N_JOBS", 1)
    enum_budget: int = _env_int("BEAM_ENUM_BUDGET", 10 ** 8)
    runs_dir: str = os.getenv("BEAM_RUNS_DIR", "runs")
    log_level: str = os.getenv("BEAM_LOG_LEVEL", "INFO").upper()
    write_artifacts: bool = _env_bool("BEAM_WRITE_ARTIFACTS", True)
    cors_allow_origins: List[str] = field(
        default_factory=lambda: _parse_origins(os.getenv("BEAM_ALLOW_ORIGINS", "*"))
    )


settings = Settings()


LIST_KEYS = {"deltas", "m_values", "series_delta", "series_T", "series_censored"}


def _split_list(raw: str) -> List[str]:
    return [chunk.strip() for chunk in raw.split(",") if chunk.strip()]


def parse_config_text(text: str) -> Dict[str, Any]:
    """
    Parse an experiment config document into a flat dict.

    The ``[experiment]`` section holds common keys; a section named after the
    experiment kind (e.g. ``[lifespan]``) may override or extend them.
    Comma-separated values become lists for the list-valued keys.
    """
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keep key case
    parser.read_string(text)
    if not parser.has_section("experiment"):
        raise ValueError("config must contain an [experiment] section")
    values: Dict[str, Any] = dict(parser.items("experiment"))
    kind = values.get("kind", "").strip()
    if kind and parser.has_section(kind):
        values.update(dict(parser.items(kind)))
    for key in list(values):
        if key in LIST_KEYS:
            values[key] = _split_list(values[key])
    return values


def load_experiment_config(
    source: Union[str, Path],
    overrides: Optional[Dict[str, Any]] = None,
) -> ExperimentConfig:
    """Read an INI file (or text) and validate it as an ExperimentConfig."""
    path = Path(source) if not isinstance(source, str) or "\n" not in source else None
    if path is not None:
        if not path.exists():
            raise FileNotFoundError(f"config file {path} not found")
        text = path.read_text(encoding="utf-8")
    else:
        text = str(source)
    values = parse_config_text(text)
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    return ExperimentConfig(**values)
