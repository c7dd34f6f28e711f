"""Tests for logging setup and the file-output helpers."""
import json
import logging
import math

import numpy as np
import pytest

from viscowave_lab.solver import TrajectoryStatus
from viscowave_lab.utils import (banner, config_hash, format_float, log_spaced_grid, read_csv, setup_logging,
                                 to_jsonable, write_csv, write_json)


def test_format_float_round_trips():
    for value in (0.1, 1.0 / 3.0, 2.0 ** -40, 6.02214076e23):
        assert float(format_float(value)) == value
    assert format_float(math.nan) == "nan"
    assert format_float(-math.inf) == "-inf"


def test_csv_round_trip(tmp_path):
    path = tmp_path / "series.csv"
    t = np.linspace(0.0, 1.0, 7)
    write_csv(path, ("t", "E"), zip(t, np.exp(-t)))
    columns = read_csv(path)
    assert list(columns) == ["t", "E"]
    assert np.array_equal(columns["E"], np.exp(-t))
    assert path.read_text().splitlines()[0] == "t,E"


def test_write_json_is_stable(tmp_path):
    payload = {'b': np.float64(0.5), 'a': [np.int64(3), math.inf], 'status': TrajectoryStatus.BLEWUP,
               'flag': np.bool_(True)}
    first = write_json(tmp_path / "one.json", payload).read_text()
    second = write_json(tmp_path / "two.json", dict(reversed(list(payload.items())))).read_text()
    assert first == second
    assert json.loads(first) == {'a': [3, "inf"], 'b': 0.5, 'flag': True, 'status': "blewup"}


def test_to_jsonable_arrays():
    assert to_jsonable(np.array([1.0, np.nan])) == [1.0, "nan"]
    assert to_jsonable((1, 2)) == [1, 2]


def test_config_hash():
    a = {'mesh': {'N': 64}, 'seed': 0}
    b = {'seed': 0, 'mesh': {'N': 64}}
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash({'mesh': {'N': 65}, 'seed': 0})
    assert len(config_hash(a)) == 64


def test_log_spaced_grid():
    grid = log_spaced_grid(10.0, 5)
    assert grid[0] == 0.0 and grid[-1] == pytest.approx(10.0)
    assert np.all(np.diff(grid) > 0)
    assert list(log_spaced_grid(2.0, 2)) == [0.0, 2.0]
    with pytest.raises(ValueError):
        log_spaced_grid(1.0, 1)


def test_setup_logging(tmp_path):
    root = logging.getLogger()
    before = list(root.handlers)
    level = root.level
    try:
        setup_logging("debug", log_file=str(tmp_path / "run.log"))
        assert root.level == logging.DEBUG
        logging.getLogger("viscowave_lab.test").debug("hello")
        for handler in root.handlers:
            handler.flush()
        assert "hello" in (tmp_path / "run.log").read_text()
        with pytest.raises(ValueError):
            setup_logging("LOUD")
    finally:
        for handler in root.handlers[:]:
            if handler not in before:
                root.removeHandler(handler)
                handler.close()
        root.setLevel(level)


def test_banner():
    lines = banner("Run")
    assert lines[1] == "Run"
    assert lines[0] == lines[2] == "=" * 60
