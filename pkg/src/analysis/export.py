"""CSV and JSON writers for cell tables and reports.

Row order is always the lexicographic cell order the tables are built in, and
JSON keys are written sorted, so rational-mode outputs are byte-identical
between runs.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, is_dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from src.core.scalars import format_scalar

logger = logging.getLogger(__name__)


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, Fraction):
        return format_scalar(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonable(x) for x in obj.tolist()]
    if is_dataclass(obj) and not isinstance(obj, type):
        return _jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(x) for x in obj]
    if hasattr(obj, "model_dump"):
        return _jsonable(obj.model_dump(exclude_none=True))
    return obj


def write_json(path: str | Path, data: Any) -> Path:
    """Write ``data`` as indented JSON with sorted keys; parents are created.

    Fractions become "p/q" strings, numpy scalars and arrays plain values.

    Example:
        >>> write_json("results/verify.json", {"residual": Fraction(0)})
        PosixPath('results/verify.json')
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(_jsonable(data), f, indent=2, sort_keys=True, allow_nan=True)
        f.write("\n")
    logger.debug("Wrote %s", path)
    return path


def write_csv(path: str | Path, rows: Iterable[dict[str, Any]], columns: Sequence[str]) -> Path:
    """Write rows with a fixed header; values are formatted with format_scalar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: v if isinstance(v, str) else format_scalar(v) for k, v in row.items()})
    logger.debug("Wrote %s", path)
    return path


MEASURE_COLUMNS = ("word", "value")
INDEX_COLUMNS = ("word", "rank", "sigma_ratio", "mass")
SLOPE_COLUMNS = ("word", "slope", "remainder_ratio", "mass")
OSCILLATION_COLUMNS = ("word", "osc", "scale", "ratio")


def measure_to_json(rows: Sequence[dict[str, str]], meta: str, level: int) -> dict[str, Any]:
    """JSON mirror of a word,value table: {"level", "measure", "values": {word: value}}."""
    return {"level": level, "measure": meta, "values": {row["word"]: row["value"] for row in rows}}


def ladder_columns(rows: Sequence[dict[str, str]]) -> list[str]:
    if not rows:
        return ["level", "s_m", "energy", "gap"]
    return list(rows[0].keys())
