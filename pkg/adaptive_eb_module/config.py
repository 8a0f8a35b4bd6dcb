from dataclasses import fields, replace
import os
from pathlib import Path
import typing
from typing import Any, Dict, Optional

from dotenv import dotenv_values, load_dotenv
from loguru import logger

from adaptive_eb_module.models import ROLE_RANGES, PipelineConfig

# Load environment variables from .env file if it exists
load_dotenv()

# Paths
PROJ_ROOT = Path(__file__).resolve().parents[1]
logger.info(f"PROJ_ROOT path is: {PROJ_ROOT}")

DATA_DIR = PROJ_ROOT / "data"
RAW_DATA_DIR = DATA_DIR / "raw"
INTERIM_DATA_DIR = DATA_DIR / "interim"
PROCESSED_DATA_DIR = DATA_DIR / "processed"
EXTERNAL_DATA_DIR = DATA_DIR / "external"

MODELS_DIR = PROJ_ROOT / "models"

REPORTS_DIR = PROJ_ROOT / "reports"

LOG_LEVEL = os.getenv("ADAPTIVE_EB_LOG_LEVEL", "INFO")

# If tqdm is installed, configure loguru with tqdm.write
# https://github.com/Delgan/loguru/issues/135
try:
    from tqdm import tqdm

    logger.remove(0)
    logger.add(lambda msg: tqdm.write(msg, end=""), colorize=True, level=LOG_LEVEL)
except ModuleNotFoundError:
    pass

STRATEGIES = ("uniform", "fft", "halo", "combined")


def _coerce(name: str, raw: Any, annotation: Any) -> Any:
    """Convert a text value from a config file or flag into the field's type"""
    if raw is None or (isinstance(raw, str) and raw.strip().lower() in ("", "none")):
        return None
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    origin = typing.get_origin(annotation)
    args = typing.get_args(annotation)
    if origin is typing.Union:
        # Optional[X]
        inner = [a for a in args if a is not type(None)][0]
        return _coerce(name, text, inner)
    if origin is tuple:
        items = [t for t in text.replace(";", ",").split(",") if t.strip()]
        item_type = args[0] if args else str
        return tuple(item_type(t.strip()) for t in items)
    if annotation is bool:
        return text.lower() in ("1", "true", "yes", "on")
    try:
        return annotation(text)
    except (TypeError, ValueError):
        raise ValueError(f"config key {name!r}: cannot parse {raw!r}") from None


def validate_config(config: PipelineConfig) -> PipelineConfig:
    """Check the invariants a planning run relies on"""
    if (config.eb_avg is None) == (config.target_sigma is None):
        raise ValueError("exactly one of eb_avg / target_sigma must be provided")
    for name in ("eb_avg", "target_sigma", "mass_fault_budget"):
        value = getattr(config, name)
        if value is not None and value <= 0:
            raise ValueError(f"{name} must be positive, got {value}")
    if config.tol < 0:
        raise ValueError(f"tol must be non-negative, got {config.tol}")
    if config.role not in ROLE_RANGES:
        raise ValueError(f"Unknown field role: {config.role}")
    if any(b <= 0 for b in config.block_dims):
        raise ValueError(f"block dims must be positive, got {config.block_dims}")
    if config.strategy is not None and config.strategy not in STRATEGIES:
        raise ValueError(f"Unsupported strategy: {config.strategy}, use one of {STRATEGIES}")
    if config.resolved_strategy() in ("halo", "combined") and config.mass_fault_budget is None:
        raise ValueError(f"strategy {config.resolved_strategy()} needs mass_fault_budget")
    if config.connectivity not in (6, 26):
        raise ValueError(f"connectivity must be 6 or 26, got {config.connectivity}")
    if config.rate_mode not in ("model", "measure"):
        raise ValueError(f"rate_mode must be 'model' or 'measure', got {config.rate_mode}")
    return config


def load_config(
    path: Optional[Path] = None,
    overrides: Optional[Dict[str, Any]] = None,
    validate: bool = True,
) -> PipelineConfig:
    """
    Build a PipelineConfig from defaults, a flat ``key=value`` file and flag overrides

    Precedence is flags > file > defaults. ``None`` overrides are ignored so unset
    CLI options never mask the file.

    Parameters
    ----------
    path : Path, optional
        Config file parsed with ``dotenv_values`` (``#`` comments allowed)
    overrides : dict, optional
        Values from command-line flags
    validate : bool
        Run validate_config on the result

    Returns
    -------
    PipelineConfig
        Merged configuration
    """
    types = typing.get_type_hints(PipelineConfig)
    known = {f.name for f in fields(PipelineConfig)}
    values: Dict[str, Any] = {}

    if path is not None:
        path = Path(path)
        if not path.exists():
            raise OSError(f"Config file not found: {path}")
        for key, raw in dotenv_values(path).items():
            key = key.strip().lower()
            if key not in known:
                raise ValueError(f"{path}: unknown config key {key!r}")
            values[key] = _coerce(key, raw, types[key])
        logger.debug(f"Loaded {len(values)} config keys from {path}")

    for key, raw in (overrides or {}).items():
        if raw is None:
            continue
        if key not in known:
            raise ValueError(f"unknown config key {key!r}")
        values[key] = _coerce(key, raw, types[key])

    config = replace(PipelineConfig(), **values)
    return validate_config(config) if validate else config
