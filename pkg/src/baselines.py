"""
Comparison models: L2-regularized logistic regression fitted by IRLS and a
bagged random forest built on the boosting tree learner.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from joblib import Parallel, delayed
from scipy.special import expit

from src.boosting import design_matrix
from src.core import Dataset, derive_rng
from src.errors import DataError, NumericError, SingleClassError
from src.evaluation import auroc
from src.logger import get_logger
from src.tree_grower import GrowthParams, RegressionTree, TreeGrower


def _require_two_classes(y: np.ndarray, stage: str) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if not np.all((y == 0) | (y == 1)):
        raise DataError("Labels must be 0/1", stage=stage)
    if np.unique(y).size < 2:
        raise SingleClassError("Training labels contain a single class", stage=stage)
    return y


@dataclass
class LogisticModel:
    feature_names: List[str]
    weights: np.ndarray
    intercept: float
    l2: float
    means: np.ndarray
    scales: np.ndarray
    converged: bool = True
    iterations: int = 0
    loss_trace: List[float] = field(default_factory=list)

    def standardize(self, X: np.ndarray) -> np.ndarray:
        return (X - self.means) / self.scales

    def predict_margin(self, X: Union[np.ndarray, Dataset]) -> np.ndarray:
        X = design_matrix(self.feature_names, X)
        return self.standardize(X) @ self.weights + self.intercept

    def predict_proba(self, X: Union[np.ndarray, Dataset]) -> np.ndarray:
        return expit(self.predict_margin(X))

    def coefficient_importance(self) -> np.ndarray:
        return np.abs(self.weights)

    def to_dict(self) -> Dict:
        return {
            "feature_names": list(self.feature_names),
            "weights": self.weights.tolist(),
            "intercept": self.intercept,
            "l2": self.l2,
            "means": self.means.tolist(),
            "scales": self.scales.tolist(),
            "converged": self.converged,
            "iterations": self.iterations,
            "loss_trace": self.loss_trace,
        }

    @classmethod
    def from_dict(cls, entry: Dict) -> "LogisticModel":
        return cls(
            feature_names=list(entry["feature_names"]),
            weights=np.asarray(entry["weights"], dtype=np.float64),
            intercept=float(entry["intercept"]),
            l2=float(entry["l2"]),
            means=np.asarray(entry["means"], dtype=np.float64),
            scales=np.asarray(entry["scales"], dtype=np.float64),
            converged=bool(entry.get("converged", True)),
            iterations=int(entry.get("iterations", 0)),
            loss_trace=list(entry.get("loss_trace", [])),
        )


def penalized_loss(Z: np.ndarray, y: np.ndarray, beta: np.ndarray, l2: float) -> float:
    """Mean logloss plus l2/(2n)·||w||^2; beta[0] is the unpenalized intercept."""
    margin = beta[0] + Z @ beta[1:]
    # log(1 + e^m) - y·m, stable for large |m|
    loss = np.logaddexp(0.0, margin) - y * margin
    return float(loss.mean() + 0.5 * l2 * np.dot(beta[1:], beta[1:]) / y.size)


def penalized_gradient(Z: np.ndarray, y: np.ndarray, beta: np.ndarray, l2: float) -> np.ndarray:
    n = y.size
    residual = expit(beta[0] + Z @ beta[1:]) - y
    gradient = np.empty_like(beta)
    gradient[0] = residual.sum() / n
    gradient[1:] = (Z.T @ residual + l2 * beta[1:]) / n
    return gradient


def train_logistic(X: np.ndarray, y: np.ndarray, l2: float = 1.0, tol: float = 1e-8, max_iter: int = 100,
                   feature_names: Optional[Sequence[str]] = None, logger=None) -> LogisticModel:
    """Newton/IRLS with step halving, so the penalized loss never increases between iterations."""
    logger = logger or get_logger()
    X = np.asarray(X, dtype=np.float64)
    y = _require_two_classes(y, stage="train")
    if not np.all(np.isfinite(X)):
        raise DataError("Non-finite feature value in logistic training matrix", stage="train")
    n_rows, n_features = X.shape
    feature_names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(n_features)]

    means = X.mean(axis=0)
    scales = X.std(axis=0)
    scales[scales == 0] = 1.0
    Z = (X - means) / scales

    beta = np.zeros(n_features + 1)
    beta[0] = math.log(y.mean() / (1.0 - y.mean()))
    penalty = np.full(n_features + 1, l2)
    penalty[0] = 0.0
    design = np.hstack([np.ones((n_rows, 1)), Z])

    loss = penalized_loss(Z, y, beta, l2)
    trace = [loss]
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        gradient = penalized_gradient(Z, y, beta, l2)
        if np.linalg.norm(gradient) <= tol:
            converged = True
            iterations -= 1
            break
        p = expit(design @ beta)
        weights = p * (1.0 - p)
        hessian = (design.T * weights) @ design / n_rows + np.diag(penalty) / n_rows
        try:
            step = np.linalg.solve(hessian, gradient)
        except np.linalg.LinAlgError as e:
            raise NumericError(f"Logistic Hessian is singular: {e}", stage="train")

        scale = 1.0
        while True:
            candidate = beta - scale * step
            candidate_loss = penalized_loss(Z, y, candidate, l2)
            if candidate_loss <= loss or scale < 1e-10:
                break
            scale *= 0.5
        if candidate_loss > loss:
            break
        beta, loss = candidate, candidate_loss
        trace.append(loss)
    else:
        converged = np.linalg.norm(penalized_gradient(Z, y, beta, l2)) <= tol

    if not converged:
        logger.log_warning_event("logistic_not_converged",
                                 f"IRLS stopped after {iterations} iterations above tol={tol}",
                                 {"gradient_norm": float(np.linalg.norm(penalized_gradient(Z, y, beta, l2)))})

    return LogisticModel(feature_names=feature_names, weights=beta[1:].copy(), intercept=float(beta[0]), l2=l2,
                         means=means, scales=scales, converged=bool(converged), iterations=iterations,
                         loss_trace=trace)


@dataclass
class ForestModel:
    feature_names: List[str]
    trees: List[RegressionTree]
    seed: int
    features_per_split: int
    max_depth: int
    bootstrap: bool = True
    # Mean out-of-bag probability per training row; NaN where a row was never out of bag.
    oob_prediction: Optional[np.ndarray] = None

    def predict_proba(self, X: Union[np.ndarray, Dataset]) -> np.ndarray:
        X = design_matrix(self.feature_names, X)
        total = np.zeros(X.shape[0])
        for tree in self.trees:
            total += tree.predict(X)
        return total / len(self.trees)

    def oob_auroc(self, y: np.ndarray) -> Optional[float]:
        if self.oob_prediction is None:
            return None
        valid = np.isfinite(self.oob_prediction)
        labels = np.asarray(y)[valid]
        if valid.sum() == 0 or np.unique(labels).size < 2:
            return None
        return auroc(self.oob_prediction[valid], labels)

    def to_dict(self) -> Dict:
        return {
            "feature_names": list(self.feature_names),
            "seed": self.seed,
            "features_per_split": self.features_per_split,
            "max_depth": self.max_depth,
            "bootstrap": self.bootstrap,
            "trees": [tree.to_dict() for tree in self.trees],
        }

    @classmethod
    def from_dict(cls, entry: Dict) -> "ForestModel":
        return cls(
            feature_names=list(entry["feature_names"]),
            trees=[RegressionTree.from_dict(tree) for tree in entry["trees"]],
            seed=int(entry["seed"]),
            features_per_split=int(entry["features_per_split"]),
            max_depth=int(entry["max_depth"]),
            bootstrap=bool(entry.get("bootstrap", True)),
        )


def _grow_forest_tree(grower: TreeGrower, y: np.ndarray, seed: int, tree_index: int, bootstrap: bool):
    rng = derive_rng(seed, tree_index)
    n_rows = y.size
    if bootstrap:
        counts = np.bincount(rng.integers(0, n_rows, size=n_rows), minlength=n_rows).astype(np.float64)
    else:
        counts = np.ones(n_rows)
    # g = -y, h = 1 with no regularization: gain is the Gini decrease, leaf value the class fraction.
    tree = grower.grow(-y * counts, counts.copy(), counts, rng=rng)
    return tree, counts


def train_forest(X: np.ndarray, y: np.ndarray, n_trees: int = 100, max_depth: int = 10, seed: int = 42,
                 bootstrap: bool = True, features_per_split: Optional[int] = None,
                 feature_names: Optional[Sequence[str]] = None, threads: int = 1, logger=None) -> ForestModel:
    """Bagged classification trees with sqrt(d) candidate features per split; tree i draws from (seed, i)."""
    logger = logger or get_logger()
    X = np.asarray(X, dtype=np.float64)
    y = _require_two_classes(y, stage="train")
    if n_trees < 1 or max_depth < 1:
        raise DataError(f"Forest needs n_trees >= 1 and max_depth >= 1, got {n_trees} and {max_depth}",
                        stage="train")
    n_rows, n_features = X.shape
    feature_names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(n_features)]
    if features_per_split is None:
        features_per_split = max(1, int(math.floor(math.sqrt(n_features))))

    params = GrowthParams(max_depth=max_depth, min_child_weight=1.0, reg_lambda=0.0, reg_alpha=0.0, gamma=0.0,
                          shrinkage=1.0, features_per_split=features_per_split)
    grower = TreeGrower(X, params)
    grown = Parallel(n_jobs=threads, prefer="threads")(
        delayed(_grow_forest_tree)(grower, y, seed, index, bootstrap) for index in range(n_trees)
    )

    oob_prediction = None
    if bootstrap:
        oob_sum = np.zeros(n_rows)
        oob_count = np.zeros(n_rows)
        for tree, counts in grown:
            out = counts == 0
            if out.any():
                oob_sum[out] += tree.predict(X[out])
                oob_count[out] += 1
        with np.errstate(invalid="ignore", divide="ignore"):
            oob_prediction = np.where(oob_count > 0, oob_sum / np.maximum(oob_count, 1), np.nan)

    logger.debug(f"[FOREST] {n_trees} trees, depth <= {max_depth}, {features_per_split} features per split")
    return ForestModel(
        feature_names=feature_names,
        trees=[tree for tree, _ in grown],
        seed=seed,
        features_per_split=features_per_split,
        max_depth=max_depth,
        bootstrap=bootstrap,
        oob_prediction=oob_prediction,
    )
