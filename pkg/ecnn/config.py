"""
Run Configuration

Loads YAML run configs and resolves parameters with the precedence
built-in defaults < config file < explicit command-line flags. A run
manifest is itself a valid config file: its ``parameters`` block is used.
"""

import dataclasses
import logging
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Type, TypeVar

import yaml

from ecnn.errors import InvalidArgumentError, ParseError

logger = logging.getLogger(__name__)

T = TypeVar("T")


def normalize_key(key: str) -> str:
    """Config keys accept dashes or underscores; flags use underscores."""
    return str(key).strip().replace("-", "_")


def load_config(path: Path) -> Dict[str, Any]:
    """
    Read a YAML run config.

    Args:
        path: Config or manifest file

    Returns:
        Flat mapping of normalized keys to values
    """
    path = Path(path)
    with path.open() as handle:
        payload = yaml.safe_load(handle)

    if payload is None:
        return {}
    if not isinstance(payload, dict):
        raise ParseError("config must be a mapping of keys to values", source=str(path))

    if "parameters" in payload and isinstance(payload["parameters"], dict):
        logger.debug("Using the parameters block of manifest %s", path)
        payload = payload["parameters"]

    return {normalize_key(key): value for key, value in payload.items()}


def resolve_parameters(
    defaults: Mapping[str, Any],
    file_values: Optional[Mapping[str, Any]],
    explicit: Mapping[str, Any],
) -> Dict[str, Any]:
    """
    Merge the three parameter layers.

    Args:
        defaults: Built-in defaults, every known key
        file_values: Values from ``--config``, may be None
        explicit: Values the user set on the command line

    Returns:
        Resolved parameters restricted to the known keys
    """
    resolved = dict(defaults)
    if file_values:
        unknown = sorted(set(file_values) - set(defaults))
        if unknown:
            logger.warning("Ignoring unknown config keys: %s", ", ".join(unknown))
        resolved.update({k: v for k, v in file_values.items() if k in defaults})
    resolved.update(explicit)
    return resolved


def to_plain(value: Any) -> Any:
    """Convert dataclasses, enums, tuples and numpy scalars to YAML-safe values."""
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return {f.name: to_plain(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, Mapping):
        return {str(k): to_plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_plain(v) for v in value]
    if isinstance(value, Path):
        return str(value)
    if hasattr(value, "tolist"):
        return value.tolist()
    return value


def from_mapping(cls: Type[T], data: Mapping[str, Any]) -> T:
    """
    Build a config dataclass from a mapping, coercing enum-typed fields.

    Unknown keys are rejected so typos in config files surface early.
    """
    if not dataclasses.is_dataclass(cls):
        raise TypeError(f"{cls!r} is not a dataclass")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    data = {normalize_key(k): v for k, v in data.items()}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise InvalidArgumentError(f"unknown {cls.__name__} fields: {unknown}")

    kwargs: Dict[str, Any] = {}
    for name, value in data.items():
        default = fields[name].default
        if isinstance(default, Enum) and not isinstance(value, Enum):
            try:
                value = type(default)(value)
            except ValueError as exc:
                raise InvalidArgumentError(f"{name}: {exc}") from exc
        kwargs[name] = value
    return cls(**kwargs)  # type: ignore[call-arg]
