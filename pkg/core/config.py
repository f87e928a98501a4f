"""
Configuration management for the network compiler.
Handles training, network, cost, verification and output settings.
"""

import copy
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional, Union

logger = logging.getLogger(__name__)

SHIPPED_SETTINGS = Path(__file__).resolve().parent.parent / 'config' / 'settings.json'
SHIPPED_BACKENDS = Path(__file__).resolve().parent.parent / 'config' / 'backends.json'


class Config:
    """Configuration manager: in-code defaults, shipped settings, then the user file."""

    def __init__(self, config_dir: Optional[Union[str, Path]] = None,
                 settings_file: Optional[Union[str, Path]] = SHIPPED_SETTINGS):
        home = config_dir or os.environ.get('QNET_HOME') or Path.home() / '.qnet-compiler'
        self.config_dir = Path(home)
        self.config_file = self.config_dir / 'config.json'
        self.settings_file = Path(settings_file) if settings_file else None

        # Default configuration
        self.default_config = {
            'training': {
                'learning_rate': 0.5,
                'batch_size': 32,
                'epochs': 10,
                'seed': 0,
                'momentum': 0.1,
                'latent_clip': 1.0
            },
            'network': {
                'kind': 'hnet',
                'arch': [4, 2],
                'bn': True,
                'merge_bn': True,
                'resolution': 4,
                'classes': [3, 6]
            },
            'cost': {
                'k_min': 4,
                'k_max': 11,
                'samples': 50,
                'seed': 0
            },
            'casestudy': {
                'grid': 10,
                'calibrate_bn': True,
                'samples': 400,
                'epochs': 60,
                'learning_rate': 0.5,
                'batch_size': 16
            },
            'verify': {
                'samples': 20,
                'tolerance': 1e-9
            },
            'data': {
                'data_dir': 'data/mnist'
            },
            'logging': {
                'level': 'INFO',
                'format': '%(asctime)s %(levelname)s %(name)s: %(message)s'
            },
            'output': {
                'out_dir': 'runs'
            }
        }

        # Ensure config directory exists
        try:
            self.config_dir.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            logger.warning("cannot create config directory %s: %s", self.config_dir, e)

        # Load configuration
        self.config = self.load_config()

    def _read_json(self, path: Optional[Path]) -> Optional[Dict[str, Any]]:
        if path is None or not path.exists():
            return None
        try:
            with open(path, 'r', encoding='utf-8') as f:
                data = json.load(f)
            if isinstance(data, dict):
                return data
            logger.warning("ignoring %s: top level is not an object", path)
        except (json.JSONDecodeError, IOError) as e:
            logger.warning("ignoring unreadable settings %s: %s", path, e)
        return None

    def load_config(self) -> Dict[str, Any]:
        """Load configuration from files, falling back to defaults."""
        config = copy.deepcopy(self.default_config)
        shipped = self._read_json(self.settings_file)
        if shipped:
            config = self._merge_configs(config, shipped)
        user = self._read_json(self.config_file)
        if user:
            config = self._merge_configs(config, user)
        return config

    def save_config(self, config: Optional[Dict[str, Any]] = None):
        """Save configuration to the user file."""
        config_to_save = config if config is not None else self.config
        try:
            with open(self.config_file, 'w', encoding='utf-8') as f:
                json.dump(config_to_save, f, indent=2)
            if config is not None:
                self.config = config_to_save
        except IOError as e:
            logger.warning("cannot save configuration to %s: %s", self.config_file, e)

    def get(self, key_path: str, default: Any = None) -> Any:
        """Get a configuration value using dot notation (e.g., 'training.learning_rate')."""
        value = self.config
        for key in key_path.split('.'):
            if isinstance(value, dict) and key in value:
                value = value[key]
            else:
                return default
        return value

    def set(self, key_path: str, value: Any, persist: bool = True):
        """Set a configuration value using dot notation."""
        keys = key_path.split('.')
        section = self.config

        # Navigate to the parent of the target key
        for key in keys[:-1]:
            if not isinstance(section.get(key), dict):
                section[key] = {}
            section = section[key]

        section[keys[-1]] = value
        if persist:
            self.save_config()

    def override(self, key_path: str, value: Any):
        """Set a value for this run only."""
        self.set(key_path, value, persist=False)

    def _merge_configs(self, default: Dict[str, Any], loaded: Dict[str, Any]) -> Dict[str, Any]:
        """Recursively merge loaded config with defaults."""
        merged = copy.deepcopy(default)
        for key, value in loaded.items():
            if key in merged and isinstance(merged[key], dict) and isinstance(value, dict):
                merged[key] = self._merge_configs(merged[key], value)
            else:
                merged[key] = value
        return merged

    def as_dict(self) -> Dict[str, Any]:
        return copy.deepcopy(self.config)

    def reset_to_defaults(self):
        """Reset configuration to default values."""
        self.config = copy.deepcopy(self.default_config)
        self.save_config()
