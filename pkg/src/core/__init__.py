"""Shared infrastructure: errors, scalar backend, settings, worker pool.

Exports:
    - Mode and scalar helpers for exact/float arithmetic
    - Settings loading (defaults.yaml + user file + env + overrides)
    - The FractalError hierarchy
"""

from src.core.errors import (
    FractalError,
    ConfigError,
    StructureError,
    HarmonicError,
    MeasureError,
    ZooError,
)
from src.core.scalars import Mode, parse_scalar, as_array, format_scalar
from src.core.config_loader import (
    Settings,
    Tolerances,
    load_settings,
    get_settings,
    load_json,
    load_yaml,
)
from src.core.parallel import parallel_map, split_blocks

__all__ = [
    # Errors
    "FractalError",
    "ConfigError",
    "StructureError",
    "HarmonicError",
    "MeasureError",
    "ZooError",
    # Scalars
    "Mode",
    "parse_scalar",
    "as_array",
    "format_scalar",
    # Settings
    "Settings",
    "Tolerances",
    "load_settings",
    "get_settings",
    "load_json",
    "load_yaml",
    # Parallel
    "parallel_map",
    "split_blocks",
]
