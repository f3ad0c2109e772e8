"""
Missingness-stratified imputation.

Numeric columns: missing fraction in [0, low] -> mean, (low, high] -> KNN, > high -> drop.
Categorical columns: [0, cat_high] -> mode, > cat_high -> drop.
Fractions and fill statistics come from the fitting rows only (the training split by default).
"""

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.core import Dataset, FeatureKind, SplitIndices
from src.errors import ConfigError, ImputationError
from src.logger import get_logger

DEFAULT_K = 5
KNN_CHUNK_ROWS = 32


class ImputationAction(Enum):
    MEAN = "mean"
    MODE = "mode"
    KNN = "knn"
    DROP = "drop"


class LeakageMode(Enum):
    TRAIN = "train"      # statistics from training rows only
    WHOLE = "whole"      # statistics from all rows, imputation before splitting


@dataclass(frozen=True)
class Thresholds:
    low: float = 0.20
    high: float = 0.50
    cat_high: float = 0.20

    def validate(self):
        if not 0 < self.low < self.high < 1:
            raise ConfigError(f"Thresholds must satisfy 0 < low < high < 1, got low={self.low} high={self.high}",
                              stage="impute")
        if not 0 < self.cat_high < 1:
            raise ConfigError(f"cat_high must lie in (0, 1), got {self.cat_high}", stage="impute")


@dataclass(frozen=True)
class ColumnPlan:
    name: str
    kind: FeatureKind
    action: ImputationAction
    missing_fraction: float
    # Mean for MEAN/KNN (KNN falls back to it), category code for MODE.
    fill_value: Optional[float] = None
    k: Optional[int] = None

    def to_dict(self) -> Dict:
        return {
            "name": self.name,
            "kind": self.kind.value,
            "action": self.action.value,
            "missing_fraction": self.missing_fraction,
            "fill_value": self.fill_value,
            "k": self.k,
        }


@dataclass(frozen=True)
class ImputationPolicy:
    columns: Tuple[ColumnPlan, ...]
    thresholds: Thresholds
    fitted_on: str
    leakage_mode: LeakageMode = LeakageMode.TRAIN

    def action_of(self, name: str) -> ImputationAction:
        return self.plan_for(name).action

    def plan_for(self, name: str) -> ColumnPlan:
        for column in self.columns:
            if column.name == name:
                return column
        raise ImputationError(f"Column {name} is not part of the imputation policy", stage="impute")

    @property
    def kept_columns(self) -> List[str]:
        return [column.name for column in self.columns if column.action != ImputationAction.DROP]

    @property
    def dropped_columns(self) -> List[str]:
        return [column.name for column in self.columns if column.action == ImputationAction.DROP]

    def with_k(self, k: int) -> "ImputationPolicy":
        columns = tuple(replace(column, k=k) if column.action == ImputationAction.KNN else column
                        for column in self.columns)
        return replace(self, columns=columns)

    def to_dict(self) -> Dict:
        return {
            "fitted_on": self.fitted_on,
            "leakage_mode": self.leakage_mode.value,
            "thresholds": {"low": self.thresholds.low, "high": self.thresholds.high,
                           "cat_high": self.thresholds.cat_high},
            "columns": [column.to_dict() for column in self.columns],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, entry: Dict) -> "ImputationPolicy":
        thresholds = Thresholds(**entry["thresholds"])
        columns = tuple(
            ColumnPlan(
                name=column["name"],
                kind=FeatureKind(column["kind"]),
                action=ImputationAction(column["action"]),
                missing_fraction=column["missing_fraction"],
                fill_value=column["fill_value"],
                k=column.get("k"),
            )
            for column in entry["columns"]
        )
        return cls(columns=columns, thresholds=thresholds, fitted_on=entry["fitted_on"],
                   leakage_mode=LeakageMode(entry.get("leakage_mode", LeakageMode.TRAIN.value)))


def assign_action(kind: FeatureKind, missing_fraction: float, thresholds: Thresholds) -> ImputationAction:
    """Band assignment; intervals are closed on the right so a fraction equal to a threshold takes the lower band."""
    if kind == FeatureKind.CATEGORICAL:
        return ImputationAction.MODE if missing_fraction <= thresholds.cat_high else ImputationAction.DROP
    if missing_fraction <= thresholds.low:
        return ImputationAction.MEAN
    if missing_fraction <= thresholds.high:
        return ImputationAction.KNN
    return ImputationAction.DROP


def _fitting_rows(dataset: Dataset, train: Optional[SplitIndices], leakage_mode: LeakageMode) -> np.ndarray:
    if leakage_mode == LeakageMode.WHOLE or train is None:
        return np.arange(dataset.n_rows)
    return np.asarray(train.train_rows, dtype=np.int64)


def _mode_code(codes: np.ndarray) -> float:
    # Most frequent code; ties go to the lowest code.
    values, counts = np.unique(codes.astype(np.int64), return_counts=True)
    return float(values[np.argmax(counts)])


def plan(dataset: Dataset, train: Optional[SplitIndices], thresholds: Thresholds = Thresholds(),
         k: int = DEFAULT_K, leakage_mode: LeakageMode = LeakageMode.TRAIN, logger=None) -> ImputationPolicy:
    """Assign an action per column from fitting-row missing fractions and record fill statistics."""
    logger = logger or get_logger()
    thresholds.validate()
    rows = _fitting_rows(dataset, train, leakage_mode)
    if rows.size == 0:
        raise ImputationError("Cannot plan imputation with zero training rows", stage="impute")

    columns = []
    for index, feature in enumerate(dataset.schema):
        mask = dataset.missing_mask[rows, index]
        missing_fraction = float(mask.sum()) / rows.size
        action = assign_action(feature.kind, missing_fraction, thresholds)
        observed = dataset.values[rows, index][~mask]

        fill_value = None
        if action in (ImputationAction.MEAN, ImputationAction.KNN):
            fill_value = float(observed.mean())
        elif action == ImputationAction.MODE and observed.size:
            fill_value = _mode_code(observed)

        columns.append(ColumnPlan(
            name=feature.name,
            kind=feature.kind,
            action=action,
            missing_fraction=missing_fraction,
            fill_value=fill_value,
            k=k if action == ImputationAction.KNN else None,
        ))
        logger.debug(f"[IMPUTE] {feature.name}: {missing_fraction:.3f} missing -> {action.value}")

    if train is None or leakage_mode == LeakageMode.WHOLE:
        fitted_on = f"whole:n={dataset.n_rows}"
    else:
        fitted_on = train.identifier

    return ImputationPolicy(columns=tuple(columns), thresholds=thresholds, fitted_on=fitted_on,
                            leakage_mode=leakage_mode)


@dataclass
class KnnResult:
    filled: np.ndarray
    fallback_rows: List[int] = field(default_factory=list)
    short_rows: List[int] = field(default_factory=list)  # averaged fewer than k donors


def _zscore_parameters(values: np.ndarray, mask: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-column mean and sd over observed fitting cells; zero/undefined sd maps to 1."""
    n_cols = values.shape[1]
    means = np.zeros(n_cols)
    sds = np.ones(n_cols)
    for j in range(n_cols):
        observed = values[~mask[:, j], j]
        if observed.size == 0:
            continue
        means[j] = observed.mean()
        if observed.size > 1:
            sd = observed.std(ddof=1)
            if sd > 0:
                sds[j] = sd
    return means, sds


def knn_fill_column(target_values: np.ndarray, target_mask: np.ndarray,
                    target_compare: np.ndarray, target_compare_mask: np.ndarray,
                    donor_values: np.ndarray, donor_compare: np.ndarray, donor_compare_mask: np.ndarray,
                    k: int, fallback: float) -> KnnResult:
    """
    Fill masked target cells with the unweighted mean of the k nearest donors.

    Distances are Euclidean over co-observed comparison features, rescaled by
    sqrt(D/d) when d of D features are co-observed. Donors arrive in ascending row
    order and a stable sort keeps ties on the lower row index.
    """
    filled = np.array(target_values, dtype=np.float64)
    fallback_rows = []
    short_rows = []
    n_compare = target_compare.shape[1]
    recipients = np.flatnonzero(target_mask)

    donor_z = np.where(donor_compare_mask, 0.0, donor_compare)
    donor_present = ~donor_compare_mask

    for start in range(0, recipients.size, KNN_CHUNK_ROWS):
        chunk = recipients[start:start + KNN_CHUNK_ROWS]
        query_z = np.where(target_compare_mask[chunk], 0.0, target_compare[chunk])
        query_present = ~target_compare_mask[chunk]

        co_observed = query_present[:, None, :] & donor_present[None, :, :]
        diff = query_z[:, None, :] - donor_z[None, :, :]
        squared = np.where(co_observed, diff * diff, 0.0).sum(axis=2)
        counts = co_observed.sum(axis=2)
        with np.errstate(divide="ignore", invalid="ignore"):
            distances = np.sqrt(squared * (n_compare / counts))
        distances[counts == 0] = np.inf

        for offset, row in enumerate(chunk):
            if not query_present[offset].any():
                filled[row] = fallback
                fallback_rows.append(int(row))
                continue
            order = np.argsort(distances[offset], kind="stable")
            finite = order[np.isfinite(distances[offset][order])]
            if finite.size == 0:
                filled[row] = fallback
                fallback_rows.append(int(row))
                continue
            neighbours = np.sort(finite[:k])
            if neighbours.size < k:
                short_rows.append(int(row))
            filled[row] = donor_values[neighbours].mean()

    return KnnResult(filled=filled, fallback_rows=fallback_rows, short_rows=short_rows)


@dataclass
class ImputationOutcome:
    dataset: Dataset
    fallback_counts: Dict[str, int] = field(default_factory=dict)
    short_donor_counts: Dict[str, int] = field(default_factory=dict)


def fit_apply(dataset: Dataset, policy: ImputationPolicy, train: Optional[SplitIndices], k: Optional[int] = None,
              target: Optional[Dataset] = None, logger=None) -> ImputationOutcome:
    """
    Produce a complete dataset: MEAN/MODE fill with fitted statistics, KNN from training donors,
    DROP columns removed. When `target` is given (an external cohort with the same schema), its
    cells are filled using `dataset`'s fitting rows as donors and statistics.
    """
    logger = logger or get_logger()
    rows = _fitting_rows(dataset, train, policy.leakage_mode)
    if rows.size == 0:
        raise ImputationError("Cannot impute with zero training rows", stage="impute")
    target = target if target is not None else dataset
    if target.feature_names != dataset.feature_names:
        raise ImputationError("Target dataset schema differs from the fitting dataset", stage="impute")

    kept = policy.kept_columns
    fit_values = dataset.values[rows]
    fit_mask = dataset.missing_mask[rows]

    numeric_kept = [name for name in kept if dataset.descriptor(name).is_numeric]
    numeric_index = [dataset.index_of(name) for name in numeric_kept]
    means, sds = _zscore_parameters(fit_values[:, numeric_index], fit_mask[:, numeric_index])

    target_z = (target.values[:, numeric_index] - means) / sds
    donor_z = (fit_values[:, numeric_index] - means) / sds
    target_compare_mask = target.missing_mask[:, numeric_index]
    donor_compare_mask = fit_mask[:, numeric_index]

    out_values = np.zeros((target.n_rows, len(kept)), dtype=np.float64, order="F")
    fallback_counts = {}
    short_donor_counts = {}

    for out_index, name in enumerate(kept):
        column_plan = policy.plan_for(name)
        index = dataset.index_of(name)
        values = target.values[:, index]
        mask = target.missing_mask[:, index]

        if column_plan.action in (ImputationAction.MEAN, ImputationAction.MODE):
            if mask.any() and column_plan.fill_value is None:
                raise ImputationError(f"Column {name} has no observed training values to fill from",
                                      stage="impute", details={"column": name})
            out_values[:, out_index] = np.where(mask, column_plan.fill_value, values)
            continue

        neighbours = column_plan.k if k is None else k
        donor_rows = np.flatnonzero(~fit_mask[:, index])
        if neighbours > donor_rows.size:
            raise ImputationError(
                f"k={neighbours} exceeds the {donor_rows.size} training rows observing {name}",
                stage="impute", details={"column": name, "k": neighbours, "donors": int(donor_rows.size)})

        compare = [position for position, other in enumerate(numeric_kept) if other != name]
        result = knn_fill_column(
            target_values=np.where(mask, 0.0, values),
            target_mask=mask,
            target_compare=target_z[:, compare],
            target_compare_mask=target_compare_mask[:, compare],
            donor_values=fit_values[donor_rows, index],
            donor_compare=donor_z[donor_rows][:, compare],
            donor_compare_mask=donor_compare_mask[donor_rows][:, compare],
            k=neighbours,
            fallback=column_plan.fill_value,
        )
        out_values[:, out_index] = result.filled
        fallback_counts[name] = len(result.fallback_rows)
        if result.fallback_rows:
            logger.log_warning_event("knn_fallback",
                                     f"{len(result.fallback_rows)} row(s) in {name} observed no comparison "
                                     f"feature; filled with the training mean",
                                     {"column": name, "rows": [target.row_ids[r] for r in result.fallback_rows]})
        short_donor_counts[name] = len(result.short_rows)
        if result.short_rows:
            logger.log_warning_event("knn_short_donors",
                                     f"{len(result.short_rows)} row(s) in {name} had fewer than {neighbours} "
                                     f"comparable donors; filled with the mean of those available",
                                     {"column": name, "k": neighbours,
                                      "rows": [target.row_ids[r] for r in result.short_rows]})

    imputed = Dataset(
        schema=tuple(target.descriptor(name) for name in kept),
        values=out_values,
        missing_mask=np.zeros(out_values.shape, dtype=bool),
        labels=target.labels,
        row_ids=target.row_ids,
    )
    return ImputationOutcome(dataset=imputed, fallback_counts=fallback_counts, short_donor_counts=short_donor_counts)
