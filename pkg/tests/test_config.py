## Tests for the configuration defaults and their validation

import logging

import pytest

from config.config import Config, configure_logging
from qql import data, nnet, rng
from utils.validators import RecordValidator


class TestConfig:

    def test_defaults_validate(self):
        assert Config.validate_config() is True

    def test_hidden_dims_follow_defaults(self):
        assert Config.default_hidden_dims() == [Config.DEFAULT_HIDDEN_DIM] * Config.DEFAULT_HIDDEN_LAYERS

    def test_meta_path_sits_next_to_dataset(self, tmp_path):
        assert Config.meta_path_for(tmp_path / "grid.jsonl") == tmp_path / "grid.meta.json"

    @pytest.mark.parametrize("name, value", [
        ("DEFAULT_GAMMA", 1.0), ("DEFAULT_TAU", -0.1), ("DEFAULT_BATCH_SIZE", 0),
        ("DEFAULT_BETA_LOW", 0.0), ("DEFAULT_LAMBDA", -1.0), ("EVAL_EPISODES", 0), ("LOG_LEVEL", "LOUD"),
    ])
    def test_invalid_setting_is_reported(self, monkeypatch, capsys, name, value):
        monkeypatch.setattr(Config, name, value)
        assert Config.validate_config() is False
        assert capsys.readouterr().out

    def test_configure_logging_sets_level(self):
        configure_logging('WARNING')
        assert logging.getLogger().level == logging.WARNING
        configure_logging('INFO')
        assert logging.getLogger().level == logging.INFO


## Every module logs through its own named logger
class TestModuleLoggers:

    def test_records_carry_module_names(self, caplog, tmp_path, grid_env):
        with caplog.at_level(logging.DEBUG):
            dataset = data.generate(grid_env, 'uniform-random', 20, seed=0)
            data.load(data.save(dataset, tmp_path / "grid.jsonl"))
            rng.make_stream(0, 'batch')
            RecordValidator.validate_manifest({})
        names = {record.name for record in caplog.records}
        assert {'qql.data', 'qql.rng', 'utils.validators'} <= names
        assert 'root' not in names
        for module in (data, nnet, rng):
            assert module.logger.name == module.__name__
