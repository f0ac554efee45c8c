"""
Helper functions for the bench: seed derivation and output writers.
"""
import hashlib
import json
import math
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Sequence, Union

import numpy as np
import pandas as pd

from src.utils.config import CSV_FLOAT_FORMAT

SCHEMA_PREFIX = "# schema: "

PathLike = Union[str, Path]


def derive_seed(master: int, *labels: Any) -> int:
    """
    Derive an independent 64-bit seed for one random stream.

    Args:
        master: The master seed of the run
        labels: Purpose labels, e.g. ("noise",) or ("replicate", 3)

    Returns:
        A 64-bit unsigned integer determined only by (master, labels)
    """
    key = ":".join([str(int(master))] + [str(label) for label in labels])
    digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def make_rng(master: int, *labels: Any) -> np.random.Generator:
    """Return a numpy Generator for the stream named by labels."""
    return np.random.default_rng(derive_seed(master, *labels))


def mean_and_stderr(values: Sequence[float]) -> tuple:
    """
    Sample mean and its standard error.

    Args:
        values: Sample values

    Returns:
        (mean, stderr); stderr is NaN for fewer than two values
    """
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        return math.nan, math.nan
    if arr.size < 2:
        return float(arr.mean()), math.nan
    return float(arr.mean()), float(arr.std(ddof=1) / math.sqrt(arr.size))


def write_csv(path: PathLike, rows: Iterable[Mapping[str, Any]], columns: Sequence[str],
              append: bool = False) -> Path:
    """
    Write rows as CSV behind a schema header line.

    Args:
        path: Destination file
        rows: Row mappings keyed by column name
        columns: Column order; also written to the schema line
        append: Append rows to an existing file (schema and header are not repeated)

    Returns:
        The written path
    """
    path = Path(path)
    frame = pd.DataFrame(list(rows), columns=list(columns))
    if append and path.exists():
        with path.open("a", newline="") as handle:
            frame.to_csv(handle, index=False, header=False, float_format=CSV_FLOAT_FORMAT,
                         lineterminator="\n")
        return path

    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as handle:
        handle.write(SCHEMA_PREFIX + ",".join(columns) + "\n")
        frame.to_csv(handle, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    return path


def read_csv(path: PathLike) -> pd.DataFrame:
    """Read a CSV written by write_csv."""
    return pd.read_csv(path, comment="#")


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.floating, float)):
        value = float(value)
        # JSON has no NaN/inf
        return value if math.isfinite(value) else str(value)
    if isinstance(value, np.integer):
        return int(value)
    return value


def write_json_summary(path: PathLike, summary: Dict[str, Any]) -> Path:
    """
    Write a run summary as JSON with sorted keys.

    Args:
        path: Destination file
        summary: Summary content (resolved config, headline numbers)

    Returns:
        The written path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
    return path


def format_report(items: Mapping[str, Any]) -> str:
    """Render a key: value report, one entry per line."""
    lines: List[str] = []
    for key, value in items.items():
        if isinstance(value, float):
            value = f"{value:.15g}"
        lines.append(f"{key}: {value}")
    return "\n".join(lines) + "\n"
