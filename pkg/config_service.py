"""
Configuration Service Module

This module loads solver defaults and run configurations from YAML (or JSON,
which YAML reads as a subset). Loading goes through a loader interface so the
source can be swapped in tests; the defaults are cached by a service object
with a module-level singleton accessor.

Precedence when a run is assembled: solver defaults < run config file < CLI flags.

@version 0.1.0
@date October 2026
"""

import os
import yaml
import logging
from abc import ABC, abstractmethod
from typing import Dict, Any, Optional
from pathlib import Path

DEFAULTS_FILE = "solver_defaults.yaml"
CONFIG_DIR_ENV = "SPARSEACC_CONFIG_DIR"


class ConfigurationError(Exception):
    """Custom exception for configuration-related errors."""
    pass


class ConfigLoaderInterface(ABC):
    """Abstract interface for configuration loaders."""

    @abstractmethod
    def load_config(self, file_path: str) -> Dict[str, Any]:
        """Load configuration from a file."""
        pass


class YAMLConfigLoader(ConfigLoaderInterface):
    """YAML (and JSON) configuration loader implementation."""

    def load_config(self, file_path: str) -> Dict[str, Any]:
        """
        Load configuration from a YAML or JSON file.

        Args:
            file_path (str): Path to the configuration file

        Returns:
            Dict[str, Any]: Loaded configuration data (empty for an empty file)

        Raises:
            ConfigurationError: If file cannot be loaded, parsed, or is not a mapping
        """
        try:
            with open(file_path, 'r', encoding='utf-8') as file:
                data = yaml.safe_load(file)
        except FileNotFoundError:
            raise ConfigurationError(f"Configuration file not found: {file_path}")
        except yaml.YAMLError as e:
            raise ConfigurationError(f"Error parsing configuration file {file_path}: {str(e)}")
        except Exception as e:
            raise ConfigurationError(f"Unexpected error loading {file_path}: {str(e)}")
        if data is None:
            return {}
        if not isinstance(data, dict):
            raise ConfigurationError(f"Configuration file {file_path} must contain a mapping")
        return data


class SolverDefaultsService:
    """
    Service for solver defaults.

    The defaults file has a 'common' section shared by every solver and one
    section per registered solver name; verification settings live under
    'verify'.
    """

    def __init__(self, config_loader: ConfigLoaderInterface, config_dir: str = "config"):
        """
        Initialize the defaults service.

        Args:
            config_loader (ConfigLoaderInterface): Configuration loader implementation
            config_dir (str): Directory containing solver_defaults.yaml
        """
        self.config_loader = config_loader
        self.config_dir = Path(config_dir)
        self.logger = logging.getLogger(__name__)
        self._cached_defaults: Optional[Dict[str, Any]] = None

    def get_defaults(self, force_reload: bool = False) -> Dict[str, Any]:
        """
        Get the whole defaults mapping.

        Args:
            force_reload (bool): Whether to force reload from file (ignore cache)

        Raises:
            ConfigurationError: If configuration cannot be loaded
        """
        if self._cached_defaults is None or force_reload:
            self._load_defaults()
        return dict(self._cached_defaults)

    def get_solver_defaults(self, solver: str) -> Dict[str, Any]:
        """Common defaults overlaid with the solver's own section."""
        defaults = self.get_defaults()
        merged = dict(defaults.get('common', {}))
        merged.update(defaults.get('solvers', {}).get(solver, {}))
        return merged

    def get_section(self, name: str) -> Dict[str, Any]:
        return dict(self.get_defaults().get(name, {}))

    def _load_defaults(self) -> None:
        config_file = self.config_dir / DEFAULTS_FILE
        try:
            data = self.config_loader.load_config(str(config_file))
            if 'common' not in data or 'solvers' not in data:
                raise ConfigurationError(f"{config_file} needs 'common' and 'solvers' sections")
            self._cached_defaults = data
            self.logger.info(f"Loaded defaults for {len(data['solvers'])} solvers from {config_file}")
        except ConfigurationError as e:
            self.logger.error(f"Failed to load solver defaults: {str(e)}")
            raise
        except Exception as e:
            error_msg = f"Unexpected error loading solver defaults: {str(e)}"
            self.logger.error(error_msg)
            raise ConfigurationError(error_msg)

    def reload_configuration(self) -> None:
        """Reload configuration from file, clearing cache."""
        self.get_defaults(force_reload=True)


def default_config_dir() -> str:
    """SPARSEACC_CONFIG_DIR, else the config/ directory next to this module."""
    return os.environ.get(CONFIG_DIR_ENV) or os.path.join(os.path.dirname(os.path.abspath(__file__)), "config")


def create_defaults_service(config_dir: Optional[str] = None) -> SolverDefaultsService:
    """
    Factory function to create a defaults service.

    Returns:
        SolverDefaultsService: Configured service instance
    """
    return SolverDefaultsService(YAMLConfigLoader(), config_dir or default_config_dir())


# Global service instance (singleton pattern)
_defaults_service: Optional[SolverDefaultsService] = None


def get_defaults_service() -> SolverDefaultsService:
    """Get the global defaults service instance."""
    global _defaults_service
    if _defaults_service is None:
        _defaults_service = create_defaults_service()
    return _defaults_service


def load_run_config(path: str, config_loader: Optional[ConfigLoaderInterface] = None) -> Dict[str, Any]:
    """
    Load a run configuration file (JSON or YAML).

    Raises:
        ConfigurationError: If the file is missing, malformed, or not a mapping
    """
    loader = config_loader or YAMLConfigLoader()
    data = loader.load_config(path)
    logging.getLogger(__name__).info(f"Loaded run configuration {path} ({len(data)} keys)")
    return data
