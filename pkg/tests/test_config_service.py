"""
Unit tests for the configuration service module.

Covers YAML/JSON loading, the solver defaults service (caching, merging,
reloading), the factory and singleton accessors and run config files.

@version 0.1.0
@date October 2026
"""

import unittest
import tempfile
import json
import os
import yaml
from unittest.mock import Mock, patch

# Add the parent directory to sys.path to import the module
import sys
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import config_service
from config_service import (
    ConfigurationError,
    ConfigLoaderInterface,
    YAMLConfigLoader,
    SolverDefaultsService,
    create_defaults_service,
    default_config_dir,
    get_defaults_service,
    load_run_config
)
from solver_factory import SOLVER_MAP


class TestConfigurationError(unittest.TestCase):
    """Test cases for ConfigurationError exception."""

    def test_configuration_error_creation(self):
        """Test that ConfigurationError can be created and raised."""
        error_message = "Test configuration error"
        with self.assertRaises(ConfigurationError) as context:
            raise ConfigurationError(error_message)
        self.assertEqual(str(context.exception), error_message)
        self.assertIsInstance(context.exception, Exception)


class TestYAMLConfigLoader(unittest.TestCase):
    """Test cases for YAMLConfigLoader class."""

    def setUp(self):
        """Set up test fixtures."""
        self.loader = YAMLConfigLoader()
        self.temp_dir = tempfile.TemporaryDirectory()
        self.test_data = {'common': {'omega': 50.0, 'seed': 0}, 'solvers': {'svrg': {'step_const': 4.0}}}

    def tearDown(self):
        self.temp_dir.cleanup()

    def _write(self, name, text):
        path = os.path.join(self.temp_dir.name, name)
        with open(path, 'w') as f:
            f.write(text)
        return path

    def test_load_yaml_success(self):
        """Test successful YAML configuration loading."""
        path = self._write('defaults.yaml', yaml.dump(self.test_data))
        self.assertEqual(self.loader.load_config(path), self.test_data)

    def test_load_json_success(self):
        """JSON files go through the same loader."""
        path = self._write('run.json', json.dumps(self.test_data))
        self.assertEqual(self.loader.load_config(path), self.test_data)

    def test_empty_file_is_empty_mapping(self):
        path = self._write('empty.yaml', '')
        self.assertEqual(self.loader.load_config(path), {})

    def test_load_config_file_not_found(self):
        """Test ConfigurationError when file doesn't exist."""
        missing = "/path/that/does/not/exist.yaml"
        with self.assertRaises(ConfigurationError) as context:
            self.loader.load_config(missing)
        self.assertIn("Configuration file not found", str(context.exception))
        self.assertIn(missing, str(context.exception))

    def test_load_config_invalid_yaml(self):
        """Test ConfigurationError when YAML is malformed."""
        path = self._write('bad.yaml', "invalid: yaml: content: [unclosed")
        with self.assertRaises(ConfigurationError) as context:
            self.loader.load_config(path)
        self.assertIn("Error parsing configuration file", str(context.exception))

    def test_load_config_not_a_mapping(self):
        path = self._write('list.yaml', "- 1\n- 2\n")
        with self.assertRaises(ConfigurationError) as context:
            self.loader.load_config(path)
        self.assertIn("must contain a mapping", str(context.exception))

    @patch('builtins.open', side_effect=PermissionError("Permission denied"))
    def test_load_config_permission_error(self, mock_open):
        """Test ConfigurationError when file cannot be read due to permissions."""
        with self.assertRaises(ConfigurationError) as context:
            self.loader.load_config("test.yaml")
        self.assertIn("Unexpected error loading", str(context.exception))
        self.assertIn("Permission denied", str(context.exception))


class TestSolverDefaultsService(unittest.TestCase):
    """Test cases for SolverDefaultsService class."""

    def setUp(self):
        """Set up test fixtures."""
        self.mock_loader = Mock(spec=ConfigLoaderInterface)
        self.defaults = {
            'common': {'omega': 50.0, 'threads': 1, 'regularizer': 'sparse'},
            'solvers': {
                'svrg': {'step_const': 4.0},
                'katyusha_lagged': {'regularizer': 'dense'},
            },
            'verify': {'overlap_trials': 1000},
        }
        self.mock_loader.load_config.return_value = self.defaults
        self.service = SolverDefaultsService(self.mock_loader, "test_config")

    def test_get_defaults_caches(self):
        """The file is read once until a reload is forced."""
        self.service.get_defaults()
        self.service.get_defaults()
        self.mock_loader.load_config.assert_called_once_with(os.path.join("test_config", "solver_defaults.yaml"))
        self.service.get_defaults(force_reload=True)
        self.assertEqual(self.mock_loader.load_config.call_count, 2)

    def test_solver_section_overrides_common(self):
        merged = self.service.get_solver_defaults('katyusha_lagged')
        self.assertEqual(merged['regularizer'], 'dense')
        self.assertEqual(merged['omega'], 50.0)

    def test_unknown_solver_gets_common(self):
        self.assertEqual(self.service.get_solver_defaults('nope'), self.defaults['common'])

    def test_get_section(self):
        self.assertEqual(self.service.get_section('verify'), {'overlap_trials': 1000})
        self.assertEqual(self.service.get_section('missing'), {})

    def test_missing_sections_rejected(self):
        self.mock_loader.load_config.return_value = {'common': {}}
        with self.assertRaises(ConfigurationError) as context:
            self.service.get_defaults()
        self.assertIn("'common' and 'solvers'", str(context.exception))

    def test_unexpected_loader_error_wrapped(self):
        self.mock_loader.load_config.side_effect = RuntimeError("disk on fire")
        with self.assertRaises(ConfigurationError) as context:
            self.service.get_defaults()
        self.assertIn("disk on fire", str(context.exception))

    def test_reload_configuration(self):
        self.service.get_defaults()
        self.service.reload_configuration()
        self.assertEqual(self.mock_loader.load_config.call_count, 2)


class TestShippedDefaults(unittest.TestCase):
    """The defaults file in config/ matches the solver registry."""

    def setUp(self):
        self.service = create_defaults_service(default_config_dir())

    def test_every_registered_solver_has_a_section(self):
        solvers = self.service.get_defaults()['solvers']
        self.assertEqual(set(solvers), set(SOLVER_MAP))

    def test_epoch_length_and_step_constants(self):
        self.assertEqual(self.service.get_solver_defaults('ss_acc_svrg')['epoch_multiplier'], 2)
        self.assertEqual(self.service.get_solver_defaults('svrg')['step_const'], 4.0)
        self.assertEqual(self.service.get_solver_defaults('saga')['step_const'], 3.0)
        self.assertEqual(self.service.get_solver_defaults('kromagnon')['step_const'], 2.0)
        self.assertEqual(self.service.get_solver_defaults('asaga')['step_const'], 3.0)

    def test_lagged_solvers_use_dense_regularizer(self):
        for name in ('katyusha_lagged', 'ss_acc_svrg_lagged'):
            self.assertEqual(self.service.get_solver_defaults(name)['regularizer'], 'dense')


class TestFactoryFunctions(unittest.TestCase):
    """Test cases for factory and singleton functions."""

    def tearDown(self):
        config_service._defaults_service = None

    def test_create_defaults_service(self):
        service = create_defaults_service("some_dir")
        self.assertIsInstance(service, SolverDefaultsService)
        self.assertIsInstance(service.config_loader, YAMLConfigLoader)
        self.assertEqual(str(service.config_dir), "some_dir")

    @patch.dict(os.environ, {'SPARSEACC_CONFIG_DIR': '/tmp/sparseacc-config'})
    def test_config_dir_from_environment(self):
        self.assertEqual(default_config_dir(), '/tmp/sparseacc-config')

    def test_singleton(self):
        config_service._defaults_service = None
        first = get_defaults_service()
        self.assertIs(first, get_defaults_service())

    def test_load_run_config(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'run.json')
            with open(path, 'w') as f:
                json.dump({'solver': 'svrg', 'mu': 1e-5}, f)
            self.assertEqual(load_run_config(path), {'solver': 'svrg', 'mu': 1e-5})


if __name__ == '__main__':
    unittest.main()
