"""
Discrimination metrics, bootstrap confidence intervals, threshold metrics and Welch t-tests.
All functions here are pure; randomness comes from an explicit seed.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy.special import betainc
from scipy.stats import rankdata

from src.core import Dataset, derive_rng
from src.errors import DataError, SingleClassError
from src.logger import get_logger

SIGNIFICANCE_LEVEL = 0.05
BOOTSTRAP_CHUNK = 50


def _check_binary(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise DataError(f"scores {scores.shape} and labels {labels.shape} differ in length", stage="evaluate")
    positives = int((labels == 1).sum())
    negatives = int((labels == 0).sum())
    if positives + negatives != labels.size:
        raise DataError("Labels must be 0/1", stage="evaluate")
    if positives == 0 or negatives == 0:
        raise SingleClassError("AUROC needs both classes present", stage="evaluate")
    return scores, labels.astype(np.int8)


def auroc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative, ties counted one half."""
    scores, labels = _check_binary(scores, labels)
    ranks = rankdata(scores, method="average")
    positive = labels == 1
    n_pos = int(positive.sum())
    n_neg = labels.size - n_pos
    u = ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass(frozen=True)
class RocCurve:
    """Points ordered from threshold +inf down to -inf; a row is positive when score >= threshold."""
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray

    def area(self) -> float:
        return float(np.sum(np.diff(self.fpr) * (self.tpr[1:] + self.tpr[:-1]) / 2.0))

    def to_csv(self) -> str:
        lines = ["threshold,fpr,tpr"]
        for threshold, fpr, tpr in zip(self.thresholds, self.fpr, self.tpr):
            lines.append(f"{_format_threshold(threshold)},{repr(float(fpr))},{repr(float(tpr))}")
        return "\n".join(lines) + "\n"


def _format_threshold(value: float) -> str:
    if np.isposinf(value):
        return "inf"
    if np.isneginf(value):
        return "-inf"
    return repr(float(value))


def roc_curve(scores, labels) -> RocCurve:
    scores, labels = _check_binary(scores, labels)
    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order]

    # Last index of each run of equal scores.
    distinct = np.flatnonzero(np.diff(sorted_scores)) if sorted_scores.size > 1 else np.array([], dtype=np.int64)
    ends = np.concatenate([distinct, [sorted_scores.size - 1]])
    true_positives = np.cumsum(sorted_labels == 1)[ends]
    false_positives = np.cumsum(sorted_labels == 0)[ends]
    n_pos = true_positives[-1]
    n_neg = false_positives[-1]

    thresholds = np.concatenate([[np.inf], sorted_scores[ends], [-np.inf]])
    tpr = np.concatenate([[0.0], true_positives / n_pos, [1.0]])
    fpr = np.concatenate([[0.0], false_positives / n_neg, [1.0]])
    return RocCurve(thresholds=thresholds, fpr=fpr, tpr=tpr)


def youden_threshold(curve: RocCurve) -> float:
    """
    Finite threshold maximizing tpr - fpr, ties going to the higher threshold.
    The returned value is the midpoint to the next lower observed score, which
    classifies every observed score the same way.
    """
    finite = np.flatnonzero(np.isfinite(curve.thresholds))
    if finite.size == 0:
        raise DataError("ROC curve has no finite thresholds", stage="evaluate")
    youden = curve.tpr[finite] - curve.fpr[finite]
    best = int(np.argmax(youden))
    threshold = float(curve.thresholds[finite[best]])
    if best + 1 < finite.size:
        lower = float(curve.thresholds[finite[best + 1]])
        return 0.5 * (threshold + lower)
    return threshold


@dataclass(frozen=True)
class ThresholdMetrics:
    threshold: float
    accuracy: float
    sensitivity: float
    specificity: float
    # Absent when nothing is predicted positive.
    precision: Optional[float]
    tp: int
    fp: int
    tn: int
    fn: int

    def to_dict(self) -> Dict:
        return {
            "threshold": self.threshold,
            "accuracy": self.accuracy,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "precision": self.precision,
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
        }


def threshold_metrics(scores, labels, threshold: float) -> ThresholdMetrics:
    scores, labels = _check_binary(scores, labels)
    predicted = scores >= threshold
    actual = labels == 1
    tp = int((predicted & actual).sum())
    fp = int((predicted & ~actual).sum())
    tn = int((~predicted & ~actual).sum())
    fn = int((~predicted & actual).sum())
    return ThresholdMetrics(
        threshold=float(threshold),
        accuracy=(tp + tn) / labels.size,
        sensitivity=tp / (tp + fn),
        specificity=tn / (tn + fp),
        precision=tp / (tp + fp) if tp + fp > 0 else None,
        tp=tp, fp=fp, tn=tn, fn=fn,
    )


@dataclass(frozen=True)
class BootstrapInterval:
    point: float
    low: float
    high: float
    level: float
    n_boot: int
    seed: int
    stratified: bool = True
    redraws: int = 0

    def to_dict(self) -> Dict:
        return {
            "point": self.point,
            "low": self.low,
            "high": self.high,
            "level": self.level,
            "n_boot": self.n_boot,
            "seed": self.seed,
            "stratified": self.stratified,
            "redraws": self.redraws,
        }


def _bootstrap_chunk(scores: np.ndarray, labels: np.ndarray, seed: int, start: int, stop: int, stratified: bool):
    positives = np.flatnonzero(labels == 1)
    negatives = np.flatnonzero(labels == 0)
    values = []
    redraws = 0
    for b in range(start, stop):
        rng = derive_rng(seed, b)
        while True:
            if stratified:
                rows = np.concatenate([rng.choice(positives, size=positives.size, replace=True),
                                       rng.choice(negatives, size=negatives.size, replace=True)])
            else:
                rows = rng.integers(0, labels.size, size=labels.size)
            sample_labels = labels[rows]
            if 0 < sample_labels.sum() < sample_labels.size:
                break
            redraws += 1
        values.append(auroc(scores[rows], sample_labels))
    return values, redraws


def bootstrap_ci(scores, labels, n_boot: int = 1000, level: float = 0.95, seed: int = 42,
                 stratified: bool = True, threads: int = 1, logger=None) -> BootstrapInterval:
    """
    Percentile interval of AUROC over case resamples. Resample b uses a stream
    derived from (seed, b), so the interval does not depend on the thread count.
    """
    logger = logger or get_logger()
    scores, labels = _check_binary(scores, labels)
    if n_boot < 1 or not 0 < level < 1:
        raise DataError(f"Invalid bootstrap settings n_boot={n_boot} level={level}", stage="evaluate")

    chunks = [(start, min(start + BOOTSTRAP_CHUNK, n_boot)) for start in range(0, n_boot, BOOTSTRAP_CHUNK)]
    results = Parallel(n_jobs=threads, prefer="threads")(
        delayed(_bootstrap_chunk)(scores, labels, seed, start, stop, stratified) for start, stop in chunks
    )
    values = np.array([value for chunk_values, _ in results for value in chunk_values])
    redraws = sum(count for _, count in results)
    if redraws:
        logger.log_warning_event("bootstrap_redraw", f"{redraws} resample(s) lost a class and were redrawn",
                                 {"redraws": redraws})

    point = auroc(scores, labels)
    alpha = 1.0 - level
    low, high = np.quantile(values, [alpha / 2.0, 1.0 - alpha / 2.0])
    return BootstrapInterval(
        point=point,
        low=float(low),
        high=float(high),
        level=level,
        n_boot=n_boot,
        seed=seed,
        stratified=stratified,
        redraws=redraws,
    )


@dataclass(frozen=True)
class WelchResult:
    t: float
    df: float
    p_value: float
    mean_a: float
    mean_b: float

    @property
    def significant(self) -> bool:
        return self.p_value < SIGNIFICANCE_LEVEL

    def to_dict(self) -> Dict:
        return {
            "t": self.t,
            "df": self.df,
            "p_value": self.p_value,
            "mean_a": self.mean_a,
            "mean_b": self.mean_b,
            "significant": self.significant,
        }


def welch_t_test(a, b, logger=None) -> WelchResult:
    """Two-sided Welch test; p = I_{df/(df+t^2)}(df/2, 1/2)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise DataError(f"Welch t-test needs at least 2 values per sample, got {a.size} and {b.size}",
                        stage="evaluate")
    mean_a, mean_b = float(a.mean()), float(b.mean())
    var_a = a.var(ddof=1) / a.size
    var_b = b.var(ddof=1) / b.size
    standard_error_sq = var_a + var_b

    if standard_error_sq == 0.0:
        logger = logger or get_logger()
        if mean_a == mean_b:
            logger.log_warning_event("welch_zero_variance", "both samples constant with equal means; p = 1")
            return WelchResult(t=0.0, df=float(a.size + b.size - 2), p_value=1.0, mean_a=mean_a, mean_b=mean_b)
        logger.log_warning_event("welch_zero_variance", "both samples constant with different means; p = 0")
        t = np.inf if mean_a > mean_b else -np.inf
        return WelchResult(t=float(t), df=float(a.size + b.size - 2), p_value=0.0, mean_a=mean_a, mean_b=mean_b)

    t = (mean_a - mean_b) / np.sqrt(standard_error_sq)
    df = standard_error_sq ** 2 / (var_a ** 2 / (a.size - 1) + var_b ** 2 / (b.size - 1))
    p_value = float(betainc(df / 2.0, 0.5, df / (df + t * t)))
    return WelchResult(t=float(t), df=float(df), p_value=min(max(p_value, 0.0), 1.0), mean_a=mean_a, mean_b=mean_b)


@dataclass
class TTestRow:
    feature: str
    result: WelchResult

    def to_dict(self) -> Dict:
        entry = {"feature": self.feature}
        entry.update(self.result.to_dict())
        entry["p_value_display"] = f"{self.result.p_value:.3f}"
        return entry


def t_test_table(group_a: Dataset, group_b: Dataset, features: Optional[Sequence[str]] = None,
                 logger=None) -> List[TTestRow]:
    """Per-feature Welch tests between two groups over observed cells."""
    features = list(features) if features is not None else group_a.feature_names
    rows = []
    for name in features:
        rows.append(TTestRow(feature=name, result=welch_t_test(group_a.observed(name), group_b.observed(name),
                                                               logger=logger)))
    return rows
