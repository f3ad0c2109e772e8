"""
Evaluation report assembly: one row per model with a bootstrap AUROC interval and
threshold metrics, cohort t-test tables, ROC point exports, and a stable aligned-text
rendering for humans.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.baselines import ForestModel, LogisticModel
from src.boosting import Ensemble, predict_proba
from src.core import Dataset
from src.errors import DataError
from src.evaluation import (BootstrapInterval, RocCurve, ThresholdMetrics, TTestRow, bootstrap_ci, roc_curve,
                            t_test_table, threshold_metrics)
from src.file_manager import json_text
from src.logger import get_logger

RULE = "=" * 78
THIN_RULE = "-" * 78


def model_scores(model, data: Dataset) -> np.ndarray:
    """Positive-class probabilities for any stored model kind."""
    if isinstance(model, Ensemble):
        return predict_proba(model, data)
    if isinstance(model, (LogisticModel, ForestModel)):
        return model.predict_proba(data)
    raise DataError(f"Cannot score a {type(model).__name__}", stage="evaluate")


@dataclass
class ModelEvaluation:
    name: str
    interval: BootstrapInterval
    metrics: ThresholdMetrics
    curve: RocCurve
    threshold_source: str

    def to_dict(self) -> Dict:
        return {
            "model": self.name,
            "auroc": self.interval.point,
            "ci_low": self.interval.low,
            "ci_high": self.interval.high,
            "accuracy": self.metrics.accuracy,
            "sensitivity": self.metrics.sensitivity,
            "specificity": self.metrics.specificity,
            "precision": self.metrics.precision,
            "threshold": self.metrics.threshold,
            "threshold_source": self.threshold_source,
            "n_bootstrap": self.interval.n_boot,
            "seed": self.interval.seed,
            "bootstrap_redraws": self.interval.redraws,
            "confusion": {"tp": self.metrics.tp, "fp": self.metrics.fp, "tn": self.metrics.tn,
                          "fn": self.metrics.fn},
        }


@dataclass
class CohortSection:
    name: str
    rows: int
    positives: int
    models: List[ModelEvaluation] = field(default_factory=list)

    def to_dict(self) -> Dict:
        return {
            "rows": self.rows,
            "positives": self.positives,
            "models": [evaluation.to_dict() for evaluation in self.models],
        }


@dataclass
class EvaluationReport:
    seed: int
    internal: CohortSection
    external: Optional[CohortSection] = None
    split_balance: List[TTestRow] = field(default_factory=list)
    outcome_comparison: List[TTestRow] = field(default_factory=list)
    settings: Dict = field(default_factory=dict)

    def sections(self) -> List[CohortSection]:
        return [self.internal] + ([self.external] if self.external is not None else [])

    def model(self, name: str, section: str = "internal") -> ModelEvaluation:
        cohort = self.internal if section == "internal" else self.external
        for evaluation in cohort.models:
            if evaluation.name == name:
                return evaluation
        raise KeyError(name)

    def to_dict(self) -> Dict:
        return {
            "seed": self.seed,
            "settings": self.settings,
            "internal": self.internal.to_dict(),
            "external": None if self.external is None else self.external.to_dict(),
            "t_tests": {
                "train_vs_test": [row.to_dict() for row in self.split_balance],
                "survivors_vs_non_survivors": [row.to_dict() for row in self.outcome_comparison],
            },
        }

    def to_json(self) -> str:
        return json_text(self.to_dict())

    def roc_exports(self) -> Dict[str, str]:
        """File name -> CSV text, one curve per model and cohort."""
        exports = {}
        for section in self.sections():
            prefix = "roc_" if section.name == "internal" else f"roc_{section.name}_"
            for evaluation in section.models:
                exports[f"{prefix}{evaluation.name}.csv"] = evaluation.curve.to_csv()
        return exports

    def to_text(self) -> str:
        lines = [RULE, "MORTALITY RISK MODEL EVALUATION", RULE, f"Seed: {self.seed}"]
        for key in ("split", "leakage_mode", "knn_k", "n_boot", "level", "bootstrap", "threshold_policy"):
            if key in self.settings:
                lines.append(f"{key}: {self.settings[key]}")

        for section in self.sections():
            lines += ["", f"{section.name.upper()} VALIDATION ({section.rows} rows, {section.positives} positive)",
                      THIN_RULE]
            lines.append(f"{'Model':<10} {'AUROC (CI)':<22} {'Accuracy':>8} {'Sensitivity':>11} "
                         f"{'Specificity':>11} {'Precision':>9} {'Threshold':>10}")
            for evaluation in section.models:
                row = evaluation.to_dict()
                auroc_text = f"{row['auroc']:.3f} ({row['ci_low']:.3f}-{row['ci_high']:.3f})"
                precision = "n/a" if row["precision"] is None else f"{row['precision']:.3f}"
                lines.append(f"{evaluation.name:<10} {auroc_text:<22} {row['accuracy']:>8.3f} "
                             f"{row['sensitivity']:>11.3f} {row['specificity']:>11.3f} {precision:>9} "
                             f"{row['threshold']:>10.4f}")

        for title, rows, labels in (
            ("TRAIN VS TEST BALANCE (Welch t-test)", self.split_balance, ("Train", "Test")),
            ("SURVIVORS VS NON-SURVIVORS (Welch t-test)", self.outcome_comparison, ("Survivors", "Non-surv.")),
        ):
            if not rows:
                continue
            lines += ["", title, THIN_RULE,
                      f"{'Feature':<20} {labels[0]:>12} {labels[1]:>12} {'t':>9} {'P-value':>8} {'Sig.':>5}"]
            for row in rows:
                result = row.result
                lines.append(f"{row.feature:<20} {result.mean_a:>12.3f} {result.mean_b:>12.3f} {result.t:>9.3f} "
                             f"{result.p_value:>8.3f} {'yes' if result.significant else 'no':>5}")
        lines.append(RULE)
        return "\n".join(lines) + "\n"


def evaluate_model(name: str, scores: np.ndarray, labels: np.ndarray, threshold: float, threshold_source: str,
                   n_boot: int = 1000, level: float = 0.95, seed: int = 42, stratified: bool = True,
                   threads: int = 1, logger=None) -> ModelEvaluation:
    interval = bootstrap_ci(scores, labels, n_boot=n_boot, level=level, seed=seed, stratified=stratified,
                            threads=threads, logger=logger)
    return ModelEvaluation(
        name=name,
        interval=interval,
        metrics=threshold_metrics(scores, labels, threshold),
        curve=roc_curve(scores, labels),
        threshold_source=threshold_source,
    )


def _cohort_section(name: str, models: Dict[str, object], data: Dataset, thresholds: Dict[str, Tuple[float, str]],
                    n_boot: int, level: float, seed: int, stratified: bool, threads: int,
                    logger) -> CohortSection:
    if data.n_rows == 0:
        raise DataError(f"The {name} evaluation set is empty", stage="evaluate")
    if not data.has_labels:
        raise DataError(f"The {name} evaluation set has no labels", stage="evaluate")
    section = CohortSection(name=name, rows=data.n_rows, positives=int(data.labels.sum()))
    for model_name, model in models.items():
        threshold, source = thresholds[model_name]
        scores = model_scores(model, data)
        section.models.append(evaluate_model(model_name, scores, data.labels, threshold, source, n_boot=n_boot,
                                             level=level, seed=seed, stratified=stratified, threads=threads,
                                             logger=logger))
        logger.debug(f"[EVALUATE] {name}/{model_name}: AUROC {section.models[-1].interval.point:.4f}")
    return section


def build_report(models: Dict[str, object], test: Dataset, thresholds: Dict[str, Tuple[float, str]],
                 n_boot: int = 1000, level: float = 0.95, seed: int = 42, stratified: bool = True,
                 external: Optional[Dataset] = None, balance: Optional[Tuple[Dataset, Dataset]] = None,
                 cohort: Optional[Dataset] = None, t_test_features: Optional[Sequence[str]] = None,
                 settings: Optional[Dict] = None, threads: int = 1, logger=None) -> EvaluationReport:
    """
    `models` maps a report name to a fitted model, evaluated in insertion order.
    `thresholds` maps the same names to (threshold, how it was chosen).
    `balance` is the (train, test) pair of the raw cohort for the split-balance
    table; `cohort` is split by label for the survivor comparison. Both tables
    use observed cells of numeric features only.
    """
    logger = logger or get_logger()
    internal = _cohort_section("internal", models, test, thresholds, n_boot, level, seed, stratified, threads,
                               logger)
    external_section = None
    if external is not None:
        external_section = _cohort_section("external", models, external, thresholds, n_boot, level, seed,
                                           stratified, threads, logger)

    split_balance, outcome_comparison = [], []
    if balance is not None:
        features = _numeric_features(balance[0], t_test_features)
        split_balance = t_test_table(balance[0], balance[1], features, logger=logger)
    if cohort is not None:
        features = _numeric_features(cohort, t_test_features)
        survivors = cohort.take(np.flatnonzero(cohort.labels == 0))
        non_survivors = cohort.take(np.flatnonzero(cohort.labels == 1))
        outcome_comparison = t_test_table(survivors, non_survivors, features, logger=logger)

    report = EvaluationReport(seed=seed, internal=internal, external=external_section, split_balance=split_balance,
                              outcome_comparison=outcome_comparison, settings=dict(settings or {}))
    if split_balance:
        unbalanced = [row.feature for row in split_balance if row.result.significant]
        logger.log_validation_result("split_balance", not unbalanced,
                                     {"features": len(split_balance), "significant": unbalanced})
    return report


def _numeric_features(data: Dataset, features: Optional[Sequence[str]]) -> List[str]:
    names = list(features) if features is not None else data.feature_names
    return [name for name in names if name in data.feature_names and data.descriptor(name).is_numeric]
