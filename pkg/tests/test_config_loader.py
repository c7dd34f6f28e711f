"""Tests for configuration loading, merging, validation and environment overrides."""
import json
from pathlib import Path

import pytest

from viscowave_lab.config_loader import ConfigLoader
from viscowave_lab.exceptions import ConfigError

CONFIG_DIR = Path(__file__).resolve().parent.parent / "config"


def test_defaults_validate():
    config = ConfigLoader.get_default_experiment_config()
    ConfigLoader.validate(config)
    assert config['mesh']['N'] == 128
    assert config['kernel']['family'] == 'exponential'
    assert config['analysis']['t1'] == 0.5


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIG_DIR.glob("*.yaml")))
def test_shipped_configs_load(name):
    config = ConfigLoader.load_experiment_config(str(CONFIG_DIR / name))
    assert isinstance(config['solver']['U_max'], float)
    assert isinstance(config['solver']['adapt']['dt_min'], float)


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="kernel.beta"):
        ConfigLoader.build_config({'kernel': {'beta': 1.0}})
    with pytest.raises(ConfigError, match="must be a mapping"):
        ConfigLoader.build_config({'solver': 3})


def test_supercritical_exponent_names_bound():
    with pytest.raises(ConfigError, match=r"\(2n-2\)/\(n-2\)"):
        ConfigLoader.build_config({'problem': {'p': 5.0}})


@pytest.mark.parametrize("overrides", [
    {'mesh': {'N': 4}},
    {'mms': {'N': 4}},
    {'kernel': {'family': 'polynomial_shift', 'b': 1.0, 'nu': 0.5}},
    {'kernel': {'family': 'exponential', 'lambda': None}},
    {'kernel': {'family': 'gaussian'}},
    {'solver': {'cfl_safety': 1.5}},
    {'solver': {'T_end': 0.0}},
    {'solver': {'record_stride': 0}},
    {'initial': {'profile': 'triangle'}},
    {'initial': {'auto_scale': {'target': 'X'}}},
    {'initial': {'auto_scale': {'margin': 1.0}}},
    {'analysis': {'t1': 0.0}},
    {'logging': {'level': 'LOUD'}},
])
def test_range_rules(overrides):
    with pytest.raises(ConfigError):
        ConfigLoader.build_config(overrides)


def test_explicit_amplitude_skips_auto_scale_rules():
    config = ConfigLoader.build_config({'initial': {'amplitude': 2.0, 'auto_scale': {'target': 'X'}}})
    assert config['initial']['amplitude'] == 2.0


def test_sweep_grid_is_open():
    config = ConfigLoader.build_config({'sweep': {'grid': {'initial.amplitude': [1.0, 2.0]}}})
    assert config['sweep']['grid'] == {'initial.amplitude': [1.0, 2.0]}
    with pytest.raises(ConfigError):
        ConfigLoader.build_config({'sweep': {'grid': [1, 2]}})


def test_yaml_file_merges_over_defaults(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("mesh:\n  N: 64\nkernel:\n  b: 0.2\nsolver:\n  U_max: 1.0e+4\n")
    config = ConfigLoader.load_experiment_config(str(path))
    assert config['mesh']['N'] == 64
    assert config['kernel']['b'] == 0.2
    assert config['kernel']['lambda'] == 1.0
    assert config['solver']['U_max'] == 1e4


def test_json_file_keeps_exponent_floats(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({'solver': {'adapt': {'dt_min': 1e-12}, 'U_max': 1e8}}))
    config = ConfigLoader.load_experiment_config(str(path))
    assert config['solver']['adapt']['dt_min'] == 1e-12
    assert config['solver']['U_max'] == 1e8


def test_bad_files(tmp_path):
    with pytest.raises(ConfigError):
        ConfigLoader.load_experiment_config(str(tmp_path / "missing.yaml"))
    listing = tmp_path / "list.yaml"
    listing.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError, match="mapping"):
        ConfigLoader.load_experiment_config(str(listing))
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    assert ConfigLoader.load_json(str(broken)) is None
    with pytest.raises(ConfigError):
        ConfigLoader.load_experiment_config(str(broken))


def test_env_overrides(monkeypatch, tmp_path):
    monkeypatch.setenv("VISCOWAVE_LOG_LEVEL", "debug")
    monkeypatch.setenv("VISCOWAVE_THREADS", "4")
    overrides = ConfigLoader.load_env_overrides(str(tmp_path / "absent.env"))
    assert overrides == {'log_level': 'DEBUG', 'threads': 4}

    monkeypatch.setenv("VISCOWAVE_THREADS", "zero")
    monkeypatch.delenv("VISCOWAVE_LOG_LEVEL")
    assert ConfigLoader.load_env_overrides(str(tmp_path / "absent.env")) == {}


def test_env_file(monkeypatch, tmp_path):
    # setenv first so teardown removes what load_dotenv writes
    monkeypatch.setenv("VISCOWAVE_THREADS", "")
    monkeypatch.delenv("VISCOWAVE_THREADS")
    monkeypatch.setenv("VISCOWAVE_LOG_LEVEL", "")
    monkeypatch.delenv("VISCOWAVE_LOG_LEVEL")
    env_file = tmp_path / ".env"
    env_file.write_text("VISCOWAVE_THREADS=3\n")
    assert ConfigLoader.load_env_overrides(str(env_file)) == {'threads': 3}
