"""
Versioned JSON envelope for fitted models.

    {"format_version": 1, "model_kind": "gbdt", "toolkit_version": "1.0.0", "model": {...}}

Loading checks the format version and dispatches on model_kind.
"""

import json
from typing import Dict, Union

from config.settings import MODEL_FORMAT_VERSION, TOOLKIT_VERSION
from src.baselines import ForestModel, LogisticModel
from src.boosting import Ensemble
from src.errors import DataError, SchemaMismatchError
from src.file_manager import json_text

MODEL_KINDS = {
    "gbdt": Ensemble,
    "logistic": LogisticModel,
    "forest": ForestModel,
}

Model = Union[Ensemble, LogisticModel, ForestModel]


def model_kind(model: Model) -> str:
    for kind, cls in MODEL_KINDS.items():
        if isinstance(model, cls):
            return kind
    raise DataError(f"Not a storable model: {type(model).__name__}", stage="train")


def model_envelope(model: Model) -> Dict:
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "model_kind": model_kind(model),
        "toolkit_version": TOOLKIT_VERSION,
        "model": model.to_dict(),
    }


def model_to_json(model: Model) -> str:
    return json_text(model_envelope(model))


def model_from_dict(entry: Dict, expected_kind: str = None) -> Model:
    version = entry.get("format_version")
    if version != MODEL_FORMAT_VERSION:
        raise SchemaMismatchError(f"Unsupported model format version {version}; "
                                  f"this toolkit reads version {MODEL_FORMAT_VERSION}", stage="predict")
    kind = entry.get("model_kind")
    if kind not in MODEL_KINDS:
        raise SchemaMismatchError(f"Unknown model kind: {kind}", stage="predict")
    if expected_kind is not None and kind != expected_kind:
        raise SchemaMismatchError(f"Expected a {expected_kind} model, found {kind}", stage="predict")
    try:
        return MODEL_KINDS[kind].from_dict(entry["model"])
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaMismatchError(f"Malformed {kind} model: {e}", stage="predict")


def load_model(path: str, expected_kind: str = None) -> Model:
    try:
        with open(path, "r", encoding="utf-8") as f:
            entry = json.load(f)
    except FileNotFoundError:
        raise DataError(f"Model file not found: {path}", stage="predict")
    except json.JSONDecodeError as e:
        raise SchemaMismatchError(f"Model file {path} is not valid JSON: {e}", stage="predict")
    return model_from_dict(entry, expected_kind=expected_kind)
