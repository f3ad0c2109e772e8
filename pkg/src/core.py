"""
Canonical in-memory data model shared by every pipeline stage.

A Dataset is column-major: values and the missingness mask are (n_rows, n_features)
arrays in Fortran order so each feature column is contiguous. Missing cells are
described by the mask alone; their stored payload is never read.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.errors import DataError, SchemaMismatchError

RNG_ALGORITHM = "PCG64"
SYNTHETIC_ROW_PREFIX = "syn-"


class FeatureKind(Enum):
    NUMERIC = "numeric"
    CATEGORICAL = "categorical"


class FeatureCategory(Enum):
    """Clinical feature groups of the final predictor set."""
    DEMOGRAPHIC = "Demographic and Clinical Information"
    SEVERITY = "Severity of Illness Scores"
    LABORATORY = "Laboratory and Biochemical Markers"
    PHYSIOLOGICAL = "Physiological Parameters"
    OTHER = "Other"


@dataclass(frozen=True)
class FeatureDescriptor:
    name: str
    kind: FeatureKind = FeatureKind.NUMERIC
    unit: Optional[str] = None
    category: str = FeatureCategory.OTHER.value
    # Categorical code -> label mapping; position is the integer code.
    levels: Tuple[str, ...] = ()

    @property
    def is_numeric(self) -> bool:
        return self.kind == FeatureKind.NUMERIC

    def to_dict(self) -> Dict:
        entry = {"name": self.name, "kind": self.kind.value, "unit": self.unit, "category": self.category}
        if self.kind == FeatureKind.CATEGORICAL:
            entry["levels"] = list(self.levels)
        return entry

    @classmethod
    def from_dict(cls, entry: Dict) -> "FeatureDescriptor":
        try:
            kind = FeatureKind(entry.get("kind", FeatureKind.NUMERIC.value))
        except ValueError:
            raise SchemaMismatchError(f"Unknown feature kind for {entry.get('name')}: {entry.get('kind')}")
        return cls(
            name=entry["name"],
            kind=kind,
            unit=entry.get("unit"),
            category=entry.get("category", FeatureCategory.OTHER.value),
            levels=tuple(entry.get("levels", ())),
        )


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class Dataset:
    schema: Tuple[FeatureDescriptor, ...]
    values: np.ndarray
    missing_mask: np.ndarray
    labels: Optional[np.ndarray]
    row_ids: Tuple[str, ...]

    def __post_init__(self):
        names = [feature.name for feature in self.schema]
        duplicates = sorted({name for name in names if names.count(name) > 1})
        if duplicates:
            raise SchemaMismatchError(f"Duplicate feature names: {', '.join(duplicates)}")

        values = np.asfortranarray(np.asarray(self.values, dtype=np.float64))
        mask = np.asfortranarray(np.asarray(self.missing_mask, dtype=bool))
        if values.ndim != 2 or values.shape[1] != len(self.schema):
            raise DataError(f"values shape {values.shape} does not match {len(self.schema)} features")
        if mask.shape != values.shape:
            raise DataError(f"missing_mask shape {mask.shape} differs from values shape {values.shape}")
        if len(self.row_ids) != values.shape[0]:
            raise DataError(f"{len(self.row_ids)} row ids for {values.shape[0]} rows")

        labels = self.labels
        if labels is not None:
            labels = np.asarray(labels)
            if labels.shape != (values.shape[0],):
                raise DataError(f"labels length {labels.shape} differs from row count {values.shape[0]}")
            if not np.all((labels == 0) | (labels == 1)):
                bad = int(np.flatnonzero((labels != 0) & (labels != 1))[0])
                raise DataError(f"label outside {{0,1}} at row {self.row_ids[bad]}")
            labels = _frozen(labels.astype(np.int8))

        object.__setattr__(self, "schema", tuple(self.schema))
        object.__setattr__(self, "row_ids", tuple(str(row_id) for row_id in self.row_ids))
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "missing_mask", _frozen(mask))
        object.__setattr__(self, "labels", labels)

    # Shape helpers
    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    @property
    def feature_names(self) -> List[str]:
        return [feature.name for feature in self.schema]

    @property
    def has_labels(self) -> bool:
        return self.labels is not None

    @property
    def is_complete(self) -> bool:
        return not bool(self.missing_mask.any())

    def index_of(self, name: str) -> int:
        for index, feature in enumerate(self.schema):
            if feature.name == name:
                return index
        raise SchemaMismatchError(f"Unknown column: {name}")

    def descriptor(self, name: str) -> FeatureDescriptor:
        return self.schema[self.index_of(name)]

    def column(self, name: str) -> Tuple[np.ndarray, np.ndarray]:
        """Return (values, mask) views of one column."""
        index = self.index_of(name)
        return self.values[:, index], self.missing_mask[:, index]

    def observed(self, name: str, rows: Optional[Sequence[int]] = None) -> np.ndarray:
        """Unmasked values of a column, optionally restricted to rows."""
        values, mask = self.column(name)
        if rows is not None:
            rows = np.asarray(rows, dtype=np.int64)
            values, mask = values[rows], mask[rows]
        return values[~mask]

    def matrix(self, names: Optional[Sequence[str]] = None) -> np.ndarray:
        """Dense float matrix of a complete dataset, row-major for model code."""
        if not self.is_complete:
            raise DataError("Dataset has missing cells; impute before building a model matrix")
        indices = [self.index_of(name) for name in (names or self.feature_names)]
        return np.ascontiguousarray(self.values[:, indices])

    # Derivations
    def take(self, rows: Sequence[int]) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(
            schema=self.schema,
            values=self.values[rows],
            missing_mask=self.missing_mask[rows],
            labels=None if self.labels is None else self.labels[rows],
            row_ids=tuple(self.row_ids[row] for row in rows),
        )

    def select_features(self, names: Sequence[str]) -> "Dataset":
        indices = [self.index_of(name) for name in names]
        return Dataset(
            schema=tuple(self.schema[index] for index in indices),
            values=self.values[:, indices],
            missing_mask=self.missing_mask[:, indices],
            labels=self.labels,
            row_ids=self.row_ids,
        )

    def poisoned(self, payload: float = np.nan) -> "Dataset":
        """Copy with every masked payload overwritten; used to prove masked cells are never read."""
        values = np.array(self.values, order="F")
        values[self.missing_mask] = payload
        return Dataset(self.schema, values, self.missing_mask, self.labels, self.row_ids)

    def synthetic_rows(self) -> np.ndarray:
        return np.array([row_id.startswith(SYNTHETIC_ROW_PREFIX) for row_id in self.row_ids], dtype=bool)

    def equals(self, other: "Dataset") -> bool:
        """Value equality on observed cells, masks, labels, ids and schema order."""
        if self.schema != other.schema or self.row_ids != other.row_ids:
            return False
        if not np.array_equal(self.missing_mask, other.missing_mask):
            return False
        if (self.labels is None) != (other.labels is None):
            return False
        if self.labels is not None and not np.array_equal(self.labels, other.labels):
            return False
        observed = ~self.missing_mask
        return bool(np.array_equal(self.values[observed], other.values[observed]))


@dataclass(frozen=True)
class SplitIndices:
    train_rows: Tuple[int, ...]
    test_rows: Tuple[int, ...]
    seed: int
    stratified: bool = True
    fraction: float = 0.75

    @property
    def identifier(self) -> str:
        mode = "stratified" if self.stratified else "random"
        return f"{mode}:seed={self.seed}:train={len(self.train_rows)}:test={len(self.test_rows)}"

    def to_dict(self) -> Dict:
        return {
            "seed": self.seed,
            "fraction": self.fraction,
            "stratified": self.stratified,
            "train_rows": list(self.train_rows),
            "test_rows": list(self.test_rows),
        }

    @classmethod
    def from_dict(cls, entry: Dict) -> "SplitIndices":
        return cls(
            train_rows=tuple(int(row) for row in entry["train_rows"]),
            test_rows=tuple(int(row) for row in entry["test_rows"]),
            seed=int(entry["seed"]),
            stratified=bool(entry.get("stratified", True)),
            fraction=float(entry.get("fraction", 0.75)),
        )


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic generator; identical stream for a seed on every platform."""
    return np.random.Generator(np.random.PCG64(seed))


def derive_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent stream for a sub-task, keyed so parallel scheduling cannot reorder draws."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *[int(key) for key in keys]])))


def _part_sizes(n: int, fraction: float) -> int:
    n_train = int(round(n * fraction))
    return n_train


def split(dataset: Dataset, fraction: float = 0.75, seed: int = 42, stratified: bool = True) -> SplitIndices:
    """
    Partition rows into train/test parts.
    Stratified mode allocates each class separately so prevalence is preserved
    within one row per class.
    """
    if not 0 < fraction < 1:
        raise DataError(f"Split fraction must lie in (0, 1), got {fraction}", stage="split")
    n = dataset.n_rows
    if n == 0:
        raise DataError("Cannot split an empty dataset", stage="split")
    if stratified and not dataset.has_labels:
        raise DataError("Stratified split requires labels", stage="split")

    rng = make_rng(seed)
    if stratified:
        train_parts, test_parts = [], []
        for label in (0, 1):
            members = np.flatnonzero(dataset.labels == label)
            if members.size == 0:
                continue
            members = rng.permutation(members)
            n_train = _part_sizes(members.size, fraction)
            train_parts.append(members[:n_train])
            test_parts.append(members[n_train:])
        train = np.sort(np.concatenate(train_parts))
        test = np.sort(np.concatenate(test_parts))
    else:
        order = rng.permutation(n)
        n_train = _part_sizes(n, fraction)
        train = np.sort(order[:n_train])
        test = np.sort(order[n_train:])

    if train.size == 0 or test.size == 0:
        raise DataError(f"Fraction {fraction} leaves an empty part for {n} rows", stage="split")

    return SplitIndices(
        train_rows=tuple(int(row) for row in train),
        test_rows=tuple(int(row) for row in test),
        seed=seed,
        stratified=stratified,
        fraction=fraction,
    )


@dataclass(frozen=True)
class ColumnStats:
    mean: Optional[float]
    sd: Optional[float]
    min: Optional[float]
    max: Optional[float]
    missing_fraction: float
    n_observed: int = 0

    def to_dict(self) -> Dict:
        return {
            "mean": self.mean,
            "sd": self.sd,
            "min": self.min,
            "max": self.max,
            "missing_fraction": self.missing_fraction,
            "n_observed": self.n_observed,
        }


def column_stats(dataset: Dataset, column: str, rows: Optional[Sequence[int]] = None) -> ColumnStats:
    """Statistics over unmasked cells only; sd is the sample (n-1) standard deviation."""
    values, mask = dataset.column(column)
    if rows is not None:
        rows = np.asarray(rows, dtype=np.int64)
        values, mask = values[rows], mask[rows]
    total = mask.size
    observed = values[~mask]
    missing_fraction = float(mask.sum()) / total if total else 1.0

    if observed.size == 0:
        return ColumnStats(None, None, None, None, missing_fraction, 0)

    sd = float(observed.std(ddof=1)) if observed.size > 1 else None
    return ColumnStats(
        mean=float(observed.mean()),
        sd=sd,
        min=float(observed.min()),
        max=float(observed.max()),
        missing_fraction=missing_fraction,
        n_observed=int(observed.size),
    )


def dataset_from_matrix(X: np.ndarray, labels: Optional[np.ndarray] = None,
                        names: Optional[Sequence[str]] = None,
                        mask: Optional[np.ndarray] = None,
                        row_ids: Optional[Sequence[str]] = None) -> Dataset:
    """Build an all-numeric Dataset from a dense matrix."""
    X = np.asarray(X, dtype=np.float64)
    names = list(names) if names is not None else [f"x{j}" for j in range(X.shape[1])]
    if mask is None:
        mask = np.zeros(X.shape, dtype=bool)
    if row_ids is None:
        row_ids = [str(i) for i in range(X.shape[0])]
    return Dataset(
        schema=tuple(FeatureDescriptor(name=name) for name in names),
        values=np.where(mask, 0.0, X),
        missing_mask=mask,
        labels=labels,
        row_ids=tuple(row_ids),
    )
