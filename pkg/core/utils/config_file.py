"""
TOML run configuration: one [section] per command, flat `key = value`
entries. Command-line flags override file values.
"""
import logging
from pathlib import Path
from typing import Any, Dict, Optional

import tomli

logger = logging.getLogger(__name__)

SECTIONS = ("model", "train", "plan", "cost", "decompose")


class ConfigFileError(ValueError):
    """Unreadable or malformed run configuration."""


def load_config(path: Optional[str]) -> Dict[str, Any]:
    if not path:
        return {}
    path = Path(path)
    if not path.is_file():
        raise ConfigFileError(f"Config file not found: {path}")
    try:
        with path.open("rb") as handle:
            config = tomli.load(handle)
    except tomli.TOMLDecodeError as exc:
        raise ConfigFileError(f"Cannot parse {path}: {exc}") from exc

    unknown = sorted(set(config) - set(SECTIONS))
    if unknown:
        logger.warning(f"Ignoring unknown config sections in {path}: {', '.join(unknown)}")
    return config


def config_section(config: Dict[str, Any], name: str) -> Dict[str, Any]:
    section = config.get(name, {})
    if not isinstance(section, dict):
        raise ConfigFileError(f"[{name}] must be a table of key = value entries")
    return dict(section)


def merge_options(file_values: Dict[str, Any], cli_values: Dict[str, Any]) -> Dict[str, Any]:
    """File values overlaid by every command-line value that was actually given."""
    merged = dict(file_values)
    merged.update({key: value for key, value in cli_values.items() if value is not None})
    return merged
