"""
Utility Functions Module

Logging setup and bit-stable file output helpers.
"""

import csv
import hashlib
import json
import logging
import math
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import numpy as np
from rich.logging import RichHandler

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
LOG_DATEFMT = '%Y-%m-%d %H:%M:%S'


def setup_logging(level: str = "INFO", log_file: Optional[str] = None, rich_console: bool = False):
    """
    Setup logging configuration.

    Args:
        level: Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)
        log_file: Optional log file path
        rich_console: Use a rich handler for the console instead of plain text
    """
    numeric_level = getattr(logging, level.upper(), None)
    if not isinstance(numeric_level, int):
        raise ValueError(f'Invalid log level: {level}')

    formatter = logging.Formatter(LOG_FORMAT, datefmt=LOG_DATEFMT)

    if rich_console:
        console_handler = RichHandler(show_path=False, log_time_format=LOG_DATEFMT)
    else:
        console_handler = logging.StreamHandler()
        console_handler.setFormatter(formatter)
    console_handler.setLevel(numeric_level)

    root_logger = logging.getLogger()
    root_logger.setLevel(numeric_level)
    root_logger.addHandler(console_handler)

    if log_file:
        add_file_handler(log_file, level)


def add_file_handler(log_file: str, level: str = "INFO") -> logging.Handler:
    """Attach a plain-text file handler to the root logger and return it."""
    handler = logging.FileHandler(log_file)
    handler.setLevel(getattr(logging, level.upper(), logging.INFO))
    handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt=LOG_DATEFMT))
    logging.getLogger().addHandler(handler)
    return handler


def format_float(value: float) -> str:
    """Format a number with 17 significant digits so it round-trips exactly."""
    value = float(value)
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return format(value, '.17g')


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """
    Write rows to a CSV file with full-precision numerics.

    Args:
        path: Output file
        header: Column names
        rows: Row sequences; floats are written with 17 significant digits

    Returns:
        The written path
    """
    path = Path(path)
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            writer.writerow([
                format_float(v) if isinstance(v, (float, np.floating)) else v
                for v in row
            ])
    logger.debug(f"Wrote {path}")
    return path


def read_csv(path: Path) -> Dict[str, np.ndarray]:
    """Read a numeric CSV written by write_csv into column arrays."""
    with open(path, 'r', newline='') as f:
        reader = csv.reader(f)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    data = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    return {name: data[:, i] for i, name in enumerate(header)}


def to_jsonable(value: Any) -> Any:
    """Convert numpy scalars/arrays, enums and non-finite floats for JSON output."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else format_float(value)
    if isinstance(value, Enum):
        return value.value
    return value


def write_json(path: Path, payload: Dict[str, Any]) -> Path:
    """Write a JSON document with sorted keys and stable formatting."""
    path = Path(path)
    with open(path, 'w') as f:
        json.dump(to_jsonable(payload), f, indent=2, sort_keys=True)
        f.write('\n')
    logger.debug(f"Wrote {path}")
    return path


def config_hash(config: Dict[str, Any]) -> str:
    """SHA-256 of the canonical JSON form of a configuration."""
    canonical = json.dumps(to_jsonable(config), sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def log_spaced_grid(horizon: float, count: int) -> np.ndarray:
    """Sample grid on [0, horizon]: zero followed by log-spaced points."""
    if count < 2:
        raise ValueError("count must be at least 2")
    if count == 2:
        return np.array([0.0, horizon])
    lo = horizon * 1e-6
    return np.concatenate(([0.0], np.geomspace(lo, horizon, count - 1)))


def banner(title: str) -> List[str]:
    """Lines of a log banner block."""
    return ["=" * 60, title, "=" * 60]
