"""Grid expansion over dotted config keys."""

import itertools
import json
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple, Union

from ..utils.exceptions import ConfigError
from .settings import ExperimentConfig

Grid = Dict[str, Sequence[Any]]


def set_dotted(data: Dict[str, Any], dotted: str, value: Any) -> None:
    """Set a nested key in place; every intermediate key must already exist."""
    node = data
    parts = dotted.split(".")
    for part in parts[:-1]:
        if not isinstance(node, dict) or part not in node or not isinstance(node[part], dict):
            raise ConfigError(f"Unknown grid key '{dotted}'")
        node = node[part]
    if parts[-1] not in node:
        raise ConfigError(f"Unknown grid key '{dotted}'")
    node[parts[-1]] = value


def expand_grid(base: ExperimentConfig, grid: Grid) -> List[Tuple[Dict[str, Any], ExperimentConfig]]:
    """Every combination of grid values applied to base, in itertools.product order.

    Raises:
        ConfigError: Unknown key, empty value list, or an invalid resulting config
    """
    keys = list(grid)
    for key in keys:
        if not grid[key]:
            raise ConfigError(f"grid key '{key}' has no values")
    base_dict = base.to_dict()
    points = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        data = json.loads(json.dumps(base_dict))
        overrides = dict(zip(keys, combo))
        for key, value in overrides.items():
            set_dotted(data, key, value)
        config = ExperimentConfig.from_dict(data)
        config.validate()
        points.append((overrides, config))
    return points


def load_grid(path: Union[str, Path]) -> Grid:
    """Read a {dotted_key: [values]} JSON file."""
    try:
        grid = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"Grid file '{path}' not found")
    except json.JSONDecodeError as e:
        raise ConfigError(f"Grid file '{path}' is not valid JSON: {e}")
    if not isinstance(grid, dict) or not all(isinstance(v, list) for v in grid.values()):
        raise ConfigError("grid must map dotted keys to lists of values")
    return grid
