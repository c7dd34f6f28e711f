"""
Configuration Loader Module

Load experiment configuration files (YAML, or JSON as a YAML subset),
merge them over the defaults, validate them and apply environment overrides.
"""

import copy
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional

import yaml
from dotenv import load_dotenv

from .exceptions import ConfigError
from .kernel import KernelSpec
from .mesh import ProblemSpec

logger = logging.getLogger(__name__)

# Sections whose keys are free-form
_OPEN_SECTIONS = {('sweep', 'grid')}

INITIAL_PROFILES = ("bump", "cosine", "gaussian", "ground_state", "zero")
VELOCITY_PROFILES = INITIAL_PROFILES + ("displacement",)


class ConfigLoader:
    """Experiment configuration loader."""

    @staticmethod
    def load_yaml(filepath: str) -> Optional[Dict]:
        """
        Load YAML configuration file.

        Args:
            filepath: Path to YAML (or JSON) file

        Returns:
            Configuration dictionary or None if error
        """
        try:
            with open(filepath, 'r') as f:
                config = yaml.safe_load(f)
            logger.info(f"Loaded configuration from {filepath}")
            return config
        except FileNotFoundError:
            logger.error(f"Configuration file not found: {filepath}")
            return None
        except yaml.YAMLError as e:
            logger.error(f"Error parsing YAML file: {e}")
            return None

    @staticmethod
    def load_json(filepath: str) -> Optional[Dict]:
        """
        Load a JSON file (configs and summaries written by a run).

        PyYAML reads exponent floats without a dot as strings, so JSON goes
        through the json module.

        Args:
            filepath: Path to JSON file

        Returns:
            Parsed document or None if error
        """
        try:
            with open(filepath, 'r') as f:
                return json.load(f)
        except FileNotFoundError:
            logger.error(f"Configuration file not found: {filepath}")
            return None
        except json.JSONDecodeError as e:
            logger.error(f"Error parsing JSON file: {e}")
            return None

    @staticmethod
    def load_experiment_config(filepath: str) -> Dict:
        """
        Load an experiment configuration.

        Priority: file values over defaults; the result is validated.

        Args:
            filepath: Path to the configuration file

        Returns:
            Validated configuration dictionary

        Raises:
            ConfigError: missing/unparsable file, unknown key or range violation
        """
        if Path(filepath).suffix.lower() == ".json":
            raw = ConfigLoader.load_json(filepath)
        else:
            raw = ConfigLoader.load_yaml(filepath)
        if raw is None:
            raise ConfigError(f"Could not load configuration from {filepath}")
        if not isinstance(raw, dict):
            raise ConfigError(f"Configuration root must be a mapping, got {type(raw).__name__}")
        return ConfigLoader.build_config(raw)

    @staticmethod
    def build_config(overrides: Dict) -> Dict:
        """Merge overrides into the defaults and validate."""
        config = ConfigLoader.get_default_experiment_config()
        ConfigLoader.merge(config, overrides)
        ConfigLoader.validate(config)
        return config

    @staticmethod
    def merge(base: Dict, overrides: Dict, path: tuple = ()):
        """Deep-merge overrides into base in place, rejecting unknown keys."""
        for key, value in overrides.items():
            where = path + (key,)
            if key not in base:
                raise ConfigError(f"Unknown configuration key: {'.'.join(map(str, where))}")
            if isinstance(base[key], dict) and where not in _OPEN_SECTIONS:
                if not isinstance(value, dict):
                    raise ConfigError(f"Configuration key {'.'.join(where)} must be a mapping")
                ConfigLoader.merge(base[key], value, where)
            elif where in _OPEN_SECTIONS:
                if not isinstance(value, dict):
                    raise ConfigError(f"Configuration key {'.'.join(where)} must be a mapping")
                base[key] = copy.deepcopy(value)
            else:
                base[key] = value

    @staticmethod
    def validate(config: Dict):
        """
        Check every range rule; raises ConfigError naming the violated bound.
        """
        ProblemSpec.from_config(config['problem'])

        if int(config['mesh']['N']) < 8:
            raise ConfigError(f"mesh.N must be at least 8, got {config['mesh']['N']}")
        if int(config['mms']['N']) < 8:
            raise ConfigError(f"mms.N must be at least 8, got {config['mms']['N']}")

        kernel = config['kernel']
        if kernel.get('family') == 'polynomial_shift':
            if kernel.get('nu') is None or not float(kernel['nu']) > 1.0:
                raise ConfigError(f"polynomial_shift kernel needs nu > 1, got {kernel.get('nu')}")
        elif kernel.get('family') == 'exponential' and kernel.get('lambda') is None:
            raise ConfigError("exponential kernel needs lambda")
        try:
            KernelSpec.from_config(kernel)
        except (KeyError, TypeError, ValueError) as e:
            raise ConfigError(f"Invalid kernel section: {e}") from e

        solver = config['solver']
        if solver.get('dt0') is not None and not float(solver['dt0']) > 0:
            raise ConfigError(f"solver.dt0 must be positive, got {solver['dt0']}")
        if not float(solver['dt_over_h']) > 0:
            raise ConfigError(f"solver.dt_over_h must be positive, got {solver['dt_over_h']}")
        if not 0.0 < float(solver['cfl_safety']) <= 1.0:
            raise ConfigError(f"solver.cfl_safety must lie in (0, 1], got {solver['cfl_safety']}")
        if not float(solver['T_end']) > 0:
            raise ConfigError(f"solver.T_end must be positive, got {solver['T_end']}")
        if not float(solver['U_max']) > 0:
            raise ConfigError(f"solver.U_max must be positive, got {solver['U_max']}")
        if int(solver['record_stride']) < 1:
            raise ConfigError(f"solver.record_stride must be >= 1, got {solver['record_stride']}")

        initial = config['initial']
        if initial['profile'] not in INITIAL_PROFILES:
            raise ConfigError(f"Unknown initial.profile: {initial['profile']}. Supported: {list(INITIAL_PROFILES)}")
        if initial['velocity']['profile'] not in VELOCITY_PROFILES:
            raise ConfigError(f"Unknown initial.velocity.profile: {initial['velocity']['profile']}. "
                              f"Supported: {list(VELOCITY_PROFILES)}")
        auto = initial.get('auto_scale') or {}
        if initial.get('amplitude') is None:
            if auto.get('target') not in ('W', 'V'):
                raise ConfigError(f"initial.auto_scale.target must be W or V, got {auto.get('target')}")
            if not 0.0 < float(auto.get('margin', 0.5)) < 1.0:
                raise ConfigError(f"initial.auto_scale.margin must lie in (0, 1), got {auto.get('margin')}")

        analysis = config['analysis']
        if not float(analysis['t1']) > 0:
            raise ConfigError(f"analysis.t1 must be positive, got {analysis['t1']}")
        if float(analysis['eps1']) < 0 or float(analysis['eps2']) < 0:
            raise ConfigError("analysis.eps1 and analysis.eps2 must be nonnegative")

        if not str(config['logging']['level']).upper() in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'):
            raise ConfigError(f"Invalid log level: {config['logging']['level']}")

    @staticmethod
    def load_env_overrides(env_file: Optional[str] = None) -> Dict[str, Any]:
        """
        Read overrides from the environment (and a .env file if present).

        Returns:
            Dictionary with 'log_level' and/or 'threads' when set
        """
        path = Path(env_file) if env_file else Path.cwd() / ".env"
        if path.exists():
            load_dotenv(path)
            logger.info(f"Loaded environment from {path}")

        overrides: Dict[str, Any] = {}
        level = os.getenv('VISCOWAVE_LOG_LEVEL')
        if level:
            overrides['log_level'] = level.upper()
        threads = os.getenv('VISCOWAVE_THREADS', '')
        if threads.isdigit() and int(threads) > 0:
            overrides['threads'] = int(threads)
        return overrides

    @staticmethod
    def get_default_experiment_config() -> Dict:
        """Get default experiment configuration."""
        return {
            'problem': {
                'n': 3,
                'R': 1.0,
                'p': 3.0,
                'sigma': 1.0,
                'k': {
                    'profile': 'constant',
                    'c': 1.0,
                },
            },
            'mesh': {
                'N': 128,
            },
            'kernel': {
                'family': 'exponential',
                'b': 0.5,
                'lambda': 1.0,
                'nu': None,
            },
            'initial': {
                'profile': 'ground_state',
                'width': 0.5,
                'amplitude': None,
                'auto_scale': {
                    'target': 'W',
                    'margin': 0.5,
                },
                'velocity': {
                    'profile': 'zero',
                    'amplitude': 0.0,
                },
            },
            'solver': {
                'dt0': None,
                'dt_over_h': 0.5,
                'T_end': 20.0,
                'cfl_safety': 0.5,
                'U_max': 1.0e6,
                'adapt': {
                    'enabled': True,
                    'exponent': None,
                    'dt_min': 1.0e-10,
                },
                'record_stride': 1,
                'first_order_start': False,
            },
            'analysis': {
                't1': 0.5,
                'eps1': 0.01,
                'eps2': 0.01,
                'eta_mu_search': {
                    'mu_min': 1.0e-3,
                    'mu_max': 1.0e3,
                    'grid': 41,
                },
            },
            'well': {
                'max_iter': 5000,
                'tol': 1.0e-8,
                'window': 50,
                'restarts': 5,
            },
            'mms': {
                'N': 128,
                'dt_over_h': 0.5,
                'T_end': 1.0,
                'omega': 1.0,
                'amplitude': 1.0,
                'required_order': 1.8,
            },
            'output': {
                'snapshot_times': [],
                'dump_minimizer': False,
            },
            'sweep': {
                'grid': {},
            },
            'seed': 0,
            'logging': {
                'level': 'INFO',
                'rich': False,
            },
        }
