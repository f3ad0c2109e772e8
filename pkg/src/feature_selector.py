"""
Feature selection in three stages: iterative VIF pruning, recursive feature
elimination around a wrapped importance trainer, and expert re-inclusion of
named features.
"""

import json
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy.linalg import qr

from src.boosting import TrainConfig, EarlyStopping, train
from src.baselines import train_logistic
from src.core import Dataset
from src.errors import ConfigError, DataError, UndefinedVifError
from src.logger import get_logger

DEFAULT_VIF_THRESHOLD = 10.0
# 1 - R^2 below this is reported as perfect collinearity.
COLLINEARITY_TOLERANCE = 1e-12


def _vif_from_matrix(X: np.ndarray, column: int, name: str) -> float:
    n_rows, n_features = X.shape
    target = X[:, column]
    others = np.delete(X, column, axis=1)

    centered = target - target.mean()
    total = float(centered @ centered)
    if total == 0.0 or np.ptp(target) == 0.0:
        raise UndefinedVifError(f"VIF undefined for constant feature {name}", stage="select",
                                details={"feature": name})

    # Centering the regressors absorbs the intercept; unit-norm columns keep the rank test scale-free.
    others = others - others.mean(axis=0)
    norms = np.linalg.norm(others, axis=0)
    usable = norms > 0
    others = others[:, usable] / norms[usable]
    if others.shape[1] == 0:
        return 1.0

    Q, R, _ = qr(others, mode="economic", pivoting=True)
    diagonal = np.abs(np.diag(R))
    tolerance = max(others.shape) * np.finfo(np.float64).eps * diagonal[0]
    rank = int((diagonal > tolerance).sum())
    basis = Q[:, :rank]
    residual = centered - basis @ (basis.T @ centered)
    unexplained = float(residual @ residual) / total

    if unexplained < COLLINEARITY_TOLERANCE:
        return float("inf")
    return max(1.0, 1.0 / unexplained)


def vif(dataset: Dataset, feature: str, features: Optional[Sequence[str]] = None) -> float:
    """
    Variance inflation factor 1/(1 - R^2) of `feature` regressed by least squares
    (pivoted QR) on the other candidate features with an intercept.
    """
    features = list(features) if features is not None else dataset.feature_names
    if feature not in features:
        raise DataError(f"{feature} is not among the VIF candidates", stage="select")
    if len(features) < 2:
        raise DataError("VIF needs at least two features", stage="select")
    if dataset.n_rows < len(features) + 1:
        raise DataError(f"VIF needs at least {len(features) + 1} rows, got {dataset.n_rows}", stage="select")
    X = dataset.matrix(features)
    return _vif_from_matrix(X, features.index(feature), feature)


@dataclass
class VifResult:
    survivors: List[str]
    removed: List[Tuple[str, float]] = field(default_factory=list)


def _all_vifs(X: np.ndarray, names: List[str], threads: int) -> List[float]:
    return Parallel(n_jobs=threads, prefer="threads")(
        delayed(_vif_from_matrix)(X, index, name) for index, name in enumerate(names)
    )


def vif_prune(dataset: Dataset, features: Sequence[str], threshold: float = DEFAULT_VIF_THRESHOLD,
              threads: int = 1, logger=None) -> VifResult:
    """Remove the highest-VIF feature while any VIF exceeds the threshold; ties go to the lowest name."""
    logger = logger or get_logger()
    current = list(features)
    if len(current) >= 2 and dataset.n_rows < len(current) + 1:
        raise DataError(f"VIF needs at least {len(current) + 1} rows, got {dataset.n_rows}", stage="select")
    result = VifResult(survivors=current)

    while len(current) >= 2:
        X = dataset.matrix(current)
        values = _all_vifs(X, current, threads)
        worst = max(values)
        if not worst > threshold:
            break
        candidates = sorted(name for name, value in zip(current, values) if value == worst)
        removed = candidates[0]
        result.removed.append((removed, worst))
        current = [name for name in current if name != removed]
        logger.debug(f"[VIF] removed {removed} (VIF {worst:.3f})")

    result.survivors = current
    return result


class BoostingImportanceTrainer:
    """Total split gain of a reduced boosted model."""

    name = "boosting_gain"

    def __init__(self, config: Optional[TrainConfig] = None):
        self.config = config or TrainConfig(eta=0.1, max_depth=3, n_estimators=100,
                                            early_stopping=EarlyStopping(patience=10))

    def importances(self, X: np.ndarray, y: np.ndarray, names: Sequence[str], logger=None) -> np.ndarray:
        ensemble, _ = train(X, y, self.config, feature_names=names, logger=logger)
        return ensemble.feature_importance()

    def describe(self) -> Dict:
        return {"estimator": self.name, "eta": self.config.eta, "max_depth": self.config.max_depth,
                "n_estimators": self.config.n_estimators, "seed": self.config.seed}


class LogisticImportanceTrainer:
    """Absolute standardized coefficient of an L2 logistic model."""

    name = "logistic_coefficient"

    def __init__(self, l2: float = 1.0):
        self.l2 = l2

    def importances(self, X: np.ndarray, y: np.ndarray, names: Sequence[str], logger=None) -> np.ndarray:
        return train_logistic(X, y, l2=self.l2, feature_names=names, logger=logger).coefficient_importance()

    def describe(self) -> Dict:
        return {"estimator": self.name, "l2": self.l2}


def make_trainer(name: str, seed: int = 42):
    if name == BoostingImportanceTrainer.name:
        return BoostingImportanceTrainer(replace(BoostingImportanceTrainer().config, seed=seed))
    if name == LogisticImportanceTrainer.name:
        return LogisticImportanceTrainer()
    raise ConfigError(f"Unknown RFE estimator: {name}", stage="select")


@dataclass
class RfeResult:
    retained: List[str]
    eliminated: List[Dict] = field(default_factory=list)
    rounds: int = 0


def rfe(dataset: Dataset, labels: np.ndarray, trainer, target_count: int, step: int = 1,
        features: Optional[Sequence[str]] = None, logger=None) -> RfeResult:
    """
    Retrain on the current set and drop the `step` least important features until
    `target_count` remain. Equal importances drop the lowest name first.
    """
    logger = logger or get_logger()
    current = list(features) if features is not None else dataset.feature_names
    if target_count < 1:
        raise ConfigError(f"RFE target must be >= 1, got {target_count}", stage="select")
    if step < 1:
        raise ConfigError(f"RFE step must be >= 1, got {step}", stage="select")
    if target_count > len(current):
        raise ConfigError(f"RFE target {target_count} exceeds the {len(current)} available features",
                          stage="select")

    labels = np.asarray(labels)
    result = RfeResult(retained=current)
    while len(current) > target_count:
        X = dataset.matrix(current)
        importance = trainer.importances(X, labels, current, logger=logger)
        drop_count = min(step, len(current) - target_count)
        ranking = sorted(zip(importance.tolist(), current))
        dropped = ranking[:drop_count]
        result.rounds += 1
        for score, name in dropped:
            result.eliminated.append({"round": result.rounds, "feature": name, "importance": score})
            logger.debug(f"[RFE] round {result.rounds}: removed {name} (importance {score:.6g})")
        dropped_names = {name for _, name in dropped}
        current = [name for name in current if name not in dropped_names]

    result.retained = current
    return result


def apply_overrides(selected: Sequence[str], must_include: Sequence[str], universe: Sequence[str]) -> List[str]:
    """Union keeping the selected order, additions appended in the order given."""
    unknown = [name for name in must_include if name not in universe]
    if unknown:
        raise ConfigError(f"Override feature(s) not among the candidates: {', '.join(unknown)}", stage="select",
                          details={"features": unknown})
    final = list(selected)
    for name in must_include:
        if name not in final:
            final.append(name)
    return final


@dataclass
class SelectionTrace:
    candidates: List[str]
    vif_removed: List[Tuple[str, float]]
    vif_survivors: List[str]
    rfe_eliminated: List[Dict]
    rfe_retained: List[str]
    overrides_added: List[str]
    final_set: List[str]
    settings: Dict = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {
            "settings": self.settings,
            "candidates": self.candidates,
            "vif": {
                "removed": [{"feature": name, "vif": value if np.isfinite(value) else "inf"}
                            for name, value in self.vif_removed],
                "survivors": self.vif_survivors,
            },
            "rfe": {"eliminated": self.rfe_eliminated, "retained": self.rfe_retained},
            "overrides_added": self.overrides_added,
            "final_set": self.final_set,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, entry: Dict) -> "SelectionTrace":
        return cls(
            candidates=list(entry["candidates"]),
            vif_removed=[(item["feature"], float(item["vif"])) for item in entry["vif"]["removed"]],
            vif_survivors=list(entry["vif"]["survivors"]),
            rfe_eliminated=list(entry["rfe"]["eliminated"]),
            rfe_retained=list(entry["rfe"]["retained"]),
            overrides_added=list(entry["overrides_added"]),
            final_set=list(entry["final_set"]),
            settings=dict(entry.get("settings", {})),
        )


def select_features(dataset: Dataset, labels: np.ndarray, vif_threshold: float = DEFAULT_VIF_THRESHOLD,
                    rfe_target: Optional[int] = None, rfe_step: int = 1, trainer=None,
                    overrides: Sequence[str] = (), threads: int = 1, logger=None) -> SelectionTrace:
    """
    All three stages on a complete training dataset. VIF runs over numeric
    candidates only; categorical codes skip it and enter RFE directly.
    """
    logger = logger or get_logger()
    candidates = dataset.feature_names
    numeric = [name for name in candidates if dataset.descriptor(name).is_numeric]
    vif_result = vif_prune(dataset, numeric, threshold=vif_threshold, threads=threads, logger=logger)
    vif_survivors = [name for name in candidates
                     if name in vif_result.survivors or not dataset.descriptor(name).is_numeric]

    trainer = trainer or BoostingImportanceTrainer()
    if rfe_target is None or rfe_target >= len(vif_survivors):
        if rfe_target is not None and rfe_target > len(vif_survivors):
            raise ConfigError(f"RFE target {rfe_target} exceeds the {len(vif_survivors)} VIF survivors",
                              stage="select")
        rfe_result = RfeResult(retained=list(vif_survivors))
    else:
        rfe_result = rfe(dataset, labels, trainer, rfe_target, step=rfe_step, features=vif_survivors,
                         logger=logger)

    final = apply_overrides(rfe_result.retained, overrides, candidates)
    added = [name for name in final if name not in rfe_result.retained]

    settings = {"vif_threshold": vif_threshold, "vif_strategy": "iterative_max_removal",
                "rfe_target": rfe_target, "rfe_step": rfe_step, "overrides": list(overrides)}
    settings.update(trainer.describe())
    logger.info(f"[SELECT] {len(candidates)} candidates -> {len(vif_survivors)} after VIF -> "
                f"{len(rfe_result.retained)} after RFE -> {len(final)} with overrides")
    return SelectionTrace(
        candidates=list(candidates),
        vif_removed=vif_result.removed,
        vif_survivors=vif_survivors,
        rfe_eliminated=rfe_result.eliminated,
        rfe_retained=rfe_result.retained,
        overrides_added=added,
        final_set=final,
        settings=settings,
    )
