import json

import numpy as np
import pytest

from src.baselines import train_forest, train_logistic
from src.boosting import TrainConfig, predict_proba, train
from src.errors import DataError, SchemaMismatchError
from src.model_store import load_model, model_envelope, model_kind, model_to_json


@pytest.fixture
def ensemble(separable_data, logger):
    X, y = separable_data
    config = TrainConfig(eta=0.3, max_depth=2, n_estimators=5)
    return train(X, y, config, feature_names=["a", "b", "noise"], logger=logger)[0]


def write_model(tmp_path, text, name="model.json"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


class TestModelStore:
    def test_envelope_fields(self, ensemble):
        envelope = model_envelope(ensemble)
        assert envelope["format_version"] == 1
        assert envelope["model_kind"] == "gbdt"
        assert envelope["toolkit_version"] == "1.0.0"

    def test_saved_ensemble_predicts_identically(self, tmp_path, ensemble, separable_data):
        X, _ = separable_data
        restored = load_model(write_model(tmp_path, model_to_json(ensemble)), expected_kind="gbdt")
        np.testing.assert_array_equal(predict_proba(restored, X), predict_proba(ensemble, X))

    def test_baselines_dispatch_on_kind(self, tmp_path, separable_data, logger):
        X, y = separable_data
        logistic = train_logistic(X, y, logger=logger)
        forest = train_forest(X, y, n_trees=3, max_depth=2, logger=logger)
        assert model_kind(load_model(write_model(tmp_path, model_to_json(logistic), "lr.json"))) == "logistic"
        restored = load_model(write_model(tmp_path, model_to_json(forest), "rf.json"))
        np.testing.assert_array_equal(restored.predict_proba(X), forest.predict_proba(X))

    def test_other_format_version_rejected(self, tmp_path, ensemble):
        envelope = model_envelope(ensemble)
        envelope["format_version"] = 2
        with pytest.raises(SchemaMismatchError):
            load_model(write_model(tmp_path, json.dumps(envelope)))

    def test_wrong_kind_rejected(self, tmp_path, ensemble):
        with pytest.raises(SchemaMismatchError):
            load_model(write_model(tmp_path, model_to_json(ensemble)), expected_kind="forest")

    def test_malformed_body(self, tmp_path, ensemble):
        envelope = model_envelope(ensemble)
        del envelope["model"]["trees"]
        with pytest.raises(SchemaMismatchError):
            load_model(write_model(tmp_path, json.dumps(envelope)))

    def test_missing_and_invalid_files(self, tmp_path):
        with pytest.raises(DataError):
            load_model(str(tmp_path / "absent.json"))
        with pytest.raises(SchemaMismatchError):
            load_model(write_model(tmp_path, "not json"))

    def test_unstorable_object(self):
        with pytest.raises(DataError):
            model_kind(TrainConfig())
