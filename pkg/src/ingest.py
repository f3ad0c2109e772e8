"""
Cohort CSV ingestion and export.
Parses a cohort file against a SchemaFile, validates it and produces a Dataset.
"""

import json
import os
import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.core import Dataset, FeatureDescriptor, FeatureKind
from src.errors import DataError, SchemaMismatchError
from src.logger import get_logger

DEFAULT_MISSING_TOKENS = ("", "NA", "NaN")

# Decimal point only; no thousands separators, no locale forms.
NUMBER_PATTERN = re.compile(r'^[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?$')


@dataclass(frozen=True)
class SchemaFile:
    features: Tuple[FeatureDescriptor, ...]
    label_column: str
    id_column: Optional[str] = None
    missing_tokens: Tuple[str, ...] = DEFAULT_MISSING_TOKENS

    def __post_init__(self):
        names = [feature.name for feature in self.features]
        if self.label_column in names:
            raise SchemaMismatchError(f"Label column {self.label_column} is also listed as a feature")
        if self.id_column is not None and (self.id_column in names or self.id_column == self.label_column):
            raise SchemaMismatchError(f"Id column {self.id_column} collides with another column")
        duplicates = sorted({name for name in names if names.count(name) > 1})
        if duplicates:
            raise SchemaMismatchError(f"Duplicate feature names in schema: {', '.join(duplicates)}")

    @property
    def column_names(self) -> List[str]:
        names = [feature.name for feature in self.features] + [self.label_column]
        if self.id_column:
            names.append(self.id_column)
        return names

    def to_dict(self) -> Dict:
        return {
            "features": [feature.to_dict() for feature in self.features],
            "label_column": self.label_column,
            "id_column": self.id_column,
            "missing_tokens": list(self.missing_tokens),
        }

    @classmethod
    def from_dict(cls, entry: Dict) -> "SchemaFile":
        if "features" not in entry or "label_column" not in entry:
            raise SchemaMismatchError("Schema requires 'features' and 'label_column'")
        return cls(
            features=tuple(FeatureDescriptor.from_dict(feature) for feature in entry["features"]),
            label_column=entry["label_column"],
            id_column=entry.get("id_column"),
            missing_tokens=tuple(entry.get("missing_tokens", DEFAULT_MISSING_TOKENS)),
        )

    @classmethod
    def for_dataset(cls, dataset: Dataset, label_column: str = "label", id_column: Optional[str] = "row_id",
                    missing_tokens: Sequence[str] = DEFAULT_MISSING_TOKENS) -> "SchemaFile":
        """Schema that reproduces a Dataset exactly, categorical levels included."""
        return cls(features=dataset.schema, label_column=label_column, id_column=id_column,
                   missing_tokens=tuple(missing_tokens))


def load_schema(path: str) -> SchemaFile:
    try:
        with open(path, "r", encoding="utf-8") as f:
            entry = json.load(f)
    except FileNotFoundError:
        raise DataError(f"Schema file not found: {path}", stage="ingest")
    except json.JSONDecodeError as e:
        raise SchemaMismatchError(f"Schema file {path} is not valid JSON: {e}", stage="ingest")
    return SchemaFile.from_dict(entry)


def schema_to_json(schema: SchemaFile) -> str:
    return json.dumps(schema.to_dict(), indent=2) + "\n"


def _parse_numeric(tokens: np.ndarray, missing: np.ndarray, column: str, row_ids: Sequence[str]) -> np.ndarray:
    values = np.zeros(tokens.size, dtype=np.float64)
    for row, (token, is_missing) in enumerate(zip(tokens, missing)):
        if is_missing:
            continue
        token = token.strip()
        if not NUMBER_PATTERN.match(token):
            raise DataError(f"Non-numeric token '{token}' in numeric column {column} at row {row_ids[row]}",
                            stage="ingest", details={"column": column, "row": row_ids[row], "token": token})
        values[row] = float(token)
    return values


def _parse_categorical(tokens: np.ndarray, missing: np.ndarray,
                       feature: FeatureDescriptor, column: str) -> Tuple[np.ndarray, FeatureDescriptor]:
    levels = list(feature.levels)
    if not levels:
        levels = sorted({token.strip() for token, is_missing in zip(tokens, missing) if not is_missing})
    lookup = {level: code for code, level in enumerate(levels)}
    values = np.zeros(tokens.size, dtype=np.float64)
    for row, (token, is_missing) in enumerate(zip(tokens, missing)):
        if is_missing:
            continue
        token = token.strip()
        if token not in lookup:
            raise DataError(f"Unknown category '{token}' in column {column}", stage="ingest",
                            details={"column": column, "token": token})
        values[row] = lookup[token]
    descriptor = FeatureDescriptor(name=feature.name, kind=feature.kind, unit=feature.unit,
                                   category=feature.category, levels=tuple(levels))
    return values, descriptor


def ingest_csv(path: str, schema: SchemaFile, logger=None) -> Dataset:
    """
    Parse a cohort CSV into a Dataset.
    Numeric parse failures are errors, never silent masks. Row order is preserved.
    """
    logger = logger or get_logger()
    if not os.path.exists(path):
        raise DataError(f"Cohort file not found: {path}", stage="ingest")

    try:
        raw = pd.read_csv(path, header=None, dtype=str, keep_default_na=False, na_filter=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise DataError(f"Cohort file {path} has no header row", stage="ingest")
    except (pd.errors.ParserError, UnicodeDecodeError) as e:
        raise DataError(f"Cannot parse {path}: {e}", stage="ingest")
    raw = raw.fillna("")
    if raw.shape[0] == 0:
        raise DataError(f"Cohort file {path} has no header row", stage="ingest")

    header = [str(name) for name in raw.iloc[0].tolist()]
    body = raw.iloc[1:].reset_index(drop=True)

    duplicates = sorted({name for name in header if header.count(name) > 1})
    if duplicates:
        raise SchemaMismatchError(f"Duplicate header column(s): {', '.join(duplicates)}", stage="ingest")
    unknown = [name for name in header if name not in schema.column_names]
    if unknown:
        raise SchemaMismatchError(f"Unknown column(s) not in schema: {', '.join(unknown)}", stage="ingest",
                                  details={"columns": unknown})
    absent = [name for name in schema.column_names if name not in header]
    if absent:
        raise SchemaMismatchError(f"Schema column(s) missing from header: {', '.join(absent)}", stage="ingest",
                                  details={"columns": absent})

    body.columns = header
    n_rows = body.shape[0]
    missing_tokens = set(schema.missing_tokens)

    if schema.id_column:
        row_ids = tuple(body[schema.id_column].tolist())
    else:
        row_ids = tuple(str(row) for row in range(n_rows))

    values = np.zeros((n_rows, len(schema.features)), dtype=np.float64, order="F")
    mask = np.zeros((n_rows, len(schema.features)), dtype=bool, order="F")
    descriptors = []
    for index, feature in enumerate(schema.features):
        tokens = body[feature.name].to_numpy(dtype=object)
        missing = np.array([token.strip() in missing_tokens for token in tokens], dtype=bool)
        if feature.kind == FeatureKind.NUMERIC:
            column_values = _parse_numeric(tokens, missing, feature.name, row_ids)
            descriptors.append(feature)
        else:
            column_values, descriptor = _parse_categorical(tokens, missing, feature, feature.name)
            descriptors.append(descriptor)
        values[:, index] = column_values
        mask[:, index] = missing

    label_tokens = body[schema.label_column].tolist()
    labels = np.zeros(n_rows, dtype=np.int8)
    for row, token in enumerate(label_tokens):
        token = token.strip()
        if token not in ("0", "1"):
            raise DataError(f"Label '{token}' outside {{0,1}} at row {row_ids[row]}", stage="ingest",
                            details={"row": row_ids[row], "token": token})
        labels[row] = int(token)

    dataset = Dataset(schema=tuple(descriptors), values=values, missing_mask=mask, labels=labels, row_ids=row_ids)
    logger.debug(f"Ingested {path}: {dataset.n_rows} rows x {dataset.n_features} features, "
                 f"{int(mask.sum())} missing cells")
    return dataset


def _format_numeric(value: float) -> str:
    text = repr(float(value))
    if text in ("nan", "inf", "-inf"):
        raise DataError(f"Non-finite value {text} cannot be exported")
    return text


def dataset_to_frame(dataset: Dataset, label_column: str = "label", id_column: Optional[str] = "row_id") -> pd.DataFrame:
    columns = {}
    if id_column:
        columns[id_column] = list(dataset.row_ids)
    for index, feature in enumerate(dataset.schema):
        values = dataset.values[:, index]
        mask = dataset.missing_mask[:, index]
        if feature.kind == FeatureKind.NUMERIC:
            cells = ["" if is_missing else _format_numeric(value) for value, is_missing in zip(values, mask)]
        else:
            cells = ["" if is_missing else feature.levels[int(value)] for value, is_missing in zip(values, mask)]
        columns[feature.name] = cells
    if dataset.labels is not None:
        columns[label_column] = [str(int(label)) for label in dataset.labels]
    return pd.DataFrame(columns, dtype=object)


def export_csv(dataset: Dataset, path: str, label_column: str = "label", id_column: Optional[str] = "row_id") -> str:
    """Write a Dataset as CSV; masked cells become empty strings, categoricals their labels."""
    frame = dataset_to_frame(dataset, label_column=label_column, id_column=id_column)
    try:
        frame.to_csv(path, index=False, lineterminator="\n", encoding="utf-8")
    except OSError as e:
        raise DataError(f"Cannot write {path}: {e}", stage="ingest")
    return path
