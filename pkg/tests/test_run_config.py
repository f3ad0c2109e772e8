import json

import pytest

from src.errors import ConfigError
from src.run_config import RunConfig, load_run_config


class TestRunConfig:
    def test_defaults(self):
        config = RunConfig.from_dict({})
        assert config.seed == 42
        assert config.split.fraction == 0.75
        assert config.select.rfe_target == 21
        assert config.select.overrides == ["PO2", "Serum Calcium", "RDW"]
        assert config.model.train.eta == 0.025
        assert config.model.train.n_estimators == 1000
        assert config.resample.method == "smote"

    def test_run_seed_propagates_into_training(self):
        config = RunConfig.from_dict({"seed": 7, "model": {"train": {"eta": 0.1},
                                                             "grid": {"etas": [0.1], "max_depths": [2],
                                                                      "n_estimators": [10]}}})
        assert config.model.train.seed == 7
        assert config.model.train.eta == 0.1
        assert config.model.grid.base.seed == 7

    @pytest.mark.parametrize("entry", [
        {"colour": 1},
        {"split": {"ratio": 0.8}},
        {"model": {"train": {"learning_rate": 0.1}}},
        {"paths": []},
    ])
    def test_unknown_keys_rejected(self, entry):
        with pytest.raises(ConfigError):
            RunConfig.from_dict(entry)

    def test_resolved_round_trips(self):
        config = RunConfig.from_dict({"seed": 3, "impute": {"k": 7}})
        again = RunConfig.from_dict(json.loads(json.dumps(config.to_dict())))
        assert again == config

    @pytest.mark.parametrize("entry", [
        {"split": {"fraction": 1.0}},
        {"impute": {"leakage_mode": "everything"}},
        {"select": {"vif_threshold": 1.0}},
        {"select": {"rfe_estimator": "lasso"}},
        {"resample": {"method": "tomek"}},
        {"evaluate": {"threshold_policy": "max_f1"}},
        {"explain": {"kernel_width": 0.0}},
        {"impute": {"low": 0.6, "high": 0.5}},
    ])
    def test_invalid_values(self, entry):
        with pytest.raises(ConfigError):
            RunConfig.from_dict(entry).validate(check_paths=False)

    @pytest.mark.parametrize("entry", [
        {"seed": "abc"},
        {"seed": None},
        {"model": "fast"},
        {"model": [["train", 1]]},
        {"paths": ["cohort.csv"]},
    ])
    def test_malformed_sections_are_config_errors(self, entry):
        with pytest.raises(ConfigError) as excinfo:
            RunConfig.from_dict(entry)
        assert excinfo.value.stage == "config"

    @pytest.mark.parametrize("entry", [
        {"impute": {"k": "5"}},
        {"evaluate": {"n_boot": "many"}},
    ])
    def test_wrongly_typed_values_are_config_errors(self, entry):
        with pytest.raises(ConfigError):
            RunConfig.from_dict(entry).validate(check_paths=False)

    def test_missing_paths_reported_together(self):
        with pytest.raises(ConfigError) as excinfo:
            RunConfig.from_dict({}).validate()
        assert len(excinfo.value.details["problems"]) == 2

    def test_existing_paths_pass(self, tmp_path):
        cohort = tmp_path / "cohort.csv"
        schema = tmp_path / "schema.json"
        cohort.write_text("x\n")
        schema.write_text("{}")
        config = RunConfig.from_dict({}).with_paths(cohort_csv=str(cohort), schema=str(schema))
        assert config.validate() is config


class TestLoadRunConfig:
    def test_none_gives_defaults(self):
        assert load_run_config(None) == RunConfig.from_dict({})

    def test_reads_file(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"seed": 9}))
        assert load_run_config(str(path)).seed == 9

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_run_config(str(tmp_path / "absent.json"))

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text("{seed: 9")
        with pytest.raises(ConfigError):
            load_run_config(str(path))

    def test_malformed_file_is_config_error(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"seed": "abc"}))
        with pytest.raises(ConfigError):
            load_run_config(str(path))
