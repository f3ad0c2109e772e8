"""
Model explanations.

tree_shap computes exact Shapley values of the tree-conditional expectation
game with the polynomial path-weight recursion, conditioning on the training
cover stored in every node. The recursion is vectorized over rows: each row's
"one fraction" is the product of its own routing indicators along the path, so
one traversal per tree serves every row. lime_explain fits a kernel-weighted
ridge surrogate around one row.
"""

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from sklearn.linear_model import Ridge

from src.boosting import Ensemble, design_matrix, predict_margin
from src.core import Dataset
from src.errors import DataError, KernelWidthError
from src.tree_grower import RegressionTree

LIME_RIDGE_ALPHA = 1e-3
LIME_MIN_WEIGHT = 1e-12


@dataclass
class Attribution:
    phi: np.ndarray
    base_value: float
    prediction_margin: float
    feature_names: List[str]

    def local_accuracy_gap(self) -> float:
        return abs(float(self.phi.sum()) + self.base_value - self.prediction_margin)

    def to_dict(self) -> Dict:
        return {
            "base_value": self.base_value,
            "prediction_margin": self.prediction_margin,
            "phi": dict(zip(self.feature_names, self.phi.tolist())),
        }


class _Path:
    """Unique feature path for the recursion; fractions and weights are per-row arrays."""

    def __init__(self, n_rows: int):
        self.n_rows = n_rows
        self.feature: List[int] = []
        self.zero: List[float] = []
        self.one: List[np.ndarray] = []
        self.weight: List[np.ndarray] = []

    def copy(self) -> "_Path":
        path = _Path(self.n_rows)
        path.feature = list(self.feature)
        path.zero = list(self.zero)
        path.one = list(self.one)
        path.weight = [w.copy() for w in self.weight]
        return path

    @property
    def depth(self) -> int:
        return len(self.feature) - 1

    def extend(self, zero: float, one: np.ndarray, feature: int):
        depth = len(self.feature)
        self.feature.append(feature)
        self.zero.append(zero)
        self.one.append(one)
        self.weight.append(np.ones(self.n_rows) if depth == 0 else np.zeros(self.n_rows))
        for i in range(depth - 1, -1, -1):
            self.weight[i + 1] = self.weight[i + 1] + one * self.weight[i] * (i + 1) / (depth + 1)
            self.weight[i] = zero * self.weight[i] * (depth - i) / (depth + 1)

    def unwind(self, index: int):
        depth = self.depth
        one = self.one[index]
        zero = self.zero[index]
        hot = one != 0
        safe_one = np.where(hot, one, 1.0)
        next_one = self.weight[depth].copy()
        for i in range(depth - 1, -1, -1):
            previous = self.weight[i]
            from_one = next_one * (depth + 1) / ((i + 1) * safe_one)
            from_zero = previous * (depth + 1) / (zero * (depth - i)) if zero != 0 else np.zeros(self.n_rows)
            self.weight[i] = np.where(hot, from_one, from_zero)
            next_one = np.where(hot, previous - self.weight[i] * zero * (depth - i) / (depth + 1), next_one)
        del self.feature[index]
        del self.zero[index]
        del self.one[index]
        self.weight.pop()

    def unwound_sum(self, index: int) -> np.ndarray:
        depth = self.depth
        one = self.one[index]
        zero = self.zero[index]
        hot = one != 0
        safe_one = np.where(hot, one, 1.0)
        next_one = self.weight[depth].copy()
        total = np.zeros(self.n_rows)
        for i in range(depth - 1, -1, -1):
            from_one = next_one * (depth + 1) / ((i + 1) * safe_one)
            from_zero = (self.weight[i] / zero) * (depth + 1) / (depth - i) if zero != 0 else np.zeros(self.n_rows)
            total += np.where(hot, from_one, from_zero)
            next_one = np.where(hot, self.weight[i] - from_one * zero * (depth - i) / (depth + 1), next_one)
        return total


def _check_cover(tree: RegressionTree):
    if tree.cover.size == 0 or not np.all(tree.cover > 0):
        raise DataError("Tree has no stored cover counts; retrain or re-export the model", stage="explain")


def tree_expected_value(tree: RegressionTree, node: int = 0) -> float:
    """Cover-weighted mean leaf value below `node`."""
    if tree.feature[node] < 0:
        return float(tree.value[node])
    left, right = tree.left[node], tree.right[node]
    return (tree_expected_value(tree, left) * tree.cover[left]
            + tree_expected_value(tree, right) * tree.cover[right]) / (tree.cover[left] + tree.cover[right])


def tree_shap_values(tree: RegressionTree, X: np.ndarray) -> np.ndarray:
    """Shapley values of one tree for every row of X, shape (n_rows, n_features)."""
    _check_cover(tree)
    n_rows, n_features = X.shape
    phi = np.zeros((n_rows, n_features))

    def recurse(node: int, path: _Path, zero: float, one: np.ndarray, feature: int):
        path = path.copy()
        path.extend(zero, one, feature)
        if tree.feature[node] < 0:
            value = tree.value[node]
            for i in range(1, path.depth + 1):
                weight = path.unwound_sum(i)
                phi[:, path.feature[i]] += weight * (path.one[i] - path.zero[i]) * value
            return

        split = int(tree.feature[node])
        goes_left = (X[:, split] < tree.threshold[node]).astype(np.float64)
        incoming_zero, incoming_one = 1.0, np.ones(n_rows)
        if split in path.feature[1:]:
            index = path.feature.index(split, 1)
            incoming_zero, incoming_one = path.zero[index], path.one[index]
            path.unwind(index)

        left, right = int(tree.left[node]), int(tree.right[node])
        cover = tree.cover[node]
        recurse(left, path, incoming_zero * tree.cover[left] / cover, incoming_one * goes_left, split)
        recurse(right, path, incoming_zero * tree.cover[right] / cover, incoming_one * (1.0 - goes_left), split)

    recurse(0, _Path(n_rows), 1.0, np.ones(n_rows), -1)
    return phi


def shap_matrix(trees: Sequence[RegressionTree], X: np.ndarray, base_margin: float = 0.0) -> Tuple[np.ndarray, float]:
    """Summed attributions over trees and the matching base value."""
    phi = np.zeros(X.shape)
    base_value = base_margin
    for tree in trees:
        phi += tree_shap_values(tree, X)
        base_value += tree_expected_value(tree)
    return phi, float(base_value)


def tree_shap(ensemble: Ensemble, x: Union[np.ndarray, Dataset]) -> Attribution:
    """Attribution of one row (or the first row of a Dataset) in margin units."""
    if not isinstance(x, Dataset):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    X = design_matrix(ensemble.feature_names, x)[:1]
    phi, base_value = shap_matrix(ensemble.active_trees, X, ensemble.base_margin)
    return Attribution(phi=phi[0], base_value=base_value, prediction_margin=float(predict_margin(ensemble, X)[0]),
                       feature_names=list(ensemble.feature_names))


@dataclass
class GlobalImportance:
    feature_names: List[str]
    row_ids: List[str]
    phi: np.ndarray
    base_value: float
    margins: np.ndarray
    standardized: np.ndarray
    values: np.ndarray

    def ranking(self) -> List[Tuple[str, float]]:
        """Features by descending mean |phi|; equal means keep the lower name first."""
        means = np.abs(self.phi).mean(axis=0)
        return sorted(zip(self.feature_names, means.tolist()), key=lambda item: (-item[1], item[0]))

    def max_local_accuracy_gap(self) -> float:
        return float(np.max(np.abs(self.phi.sum(axis=1) + self.base_value - self.margins)))

    def ranking_csv(self) -> str:
        lines = ["feature,mean_abs_phi"]
        lines += [f"{name},{repr(value)}" for name, value in self.ranking()]
        return "\n".join(lines) + "\n"

    def attribution_csv(self) -> str:
        lines = ["row_id,feature,phi,feature_value"]
        for row, row_id in enumerate(self.row_ids):
            for column, name in enumerate(self.feature_names):
                lines.append(f"{row_id},{name},{repr(float(self.phi[row, column]))},"
                             f"{repr(float(self.values[row, column]))}")
        return "\n".join(lines) + "\n"

    def beeswarm_csv(self) -> str:
        lines = ["row_id,feature,phi,standardized_value"]
        for row, row_id in enumerate(self.row_ids):
            for column, name in enumerate(self.feature_names):
                lines.append(f"{row_id},{name},{repr(float(self.phi[row, column]))},"
                             f"{repr(float(self.standardized[row, column]))}")
        return "\n".join(lines) + "\n"


def global_importance(ensemble: Ensemble, X_test: Union[np.ndarray, Dataset],
                      row_ids: Optional[Sequence[str]] = None) -> GlobalImportance:
    X = design_matrix(ensemble.feature_names, X_test)
    if X.shape[0] == 0:
        raise DataError("Global importance needs at least one row", stage="explain")
    if row_ids is None:
        row_ids = list(X_test.row_ids) if isinstance(X_test, Dataset) else [str(row) for row in range(X.shape[0])]
    phi, base_value = shap_matrix(ensemble.active_trees, X, ensemble.base_margin)
    sds = X.std(axis=0)
    standardized = (X - X.mean(axis=0)) / np.where(sds > 0, sds, 1.0)
    return GlobalImportance(feature_names=list(ensemble.feature_names), row_ids=list(row_ids), phi=phi,
                            base_value=base_value, margins=predict_margin(ensemble, X), standardized=standardized,
                            values=X)


@dataclass
class LocalSurrogate:
    feature_names: List[str]
    weights: np.ndarray
    intercept: float
    kernel_width: float
    n_samples: int
    r2: float
    top_k: int
    ridge_alpha: float = LIME_RIDGE_ALPHA
    seed: Optional[int] = None
    row_id: Optional[str] = None
    prediction: Optional[float] = None

    def top_features(self) -> List[Tuple[str, float]]:
        order = sorted(range(len(self.feature_names)), key=lambda j: (-abs(self.weights[j]), j))
        return [(self.feature_names[j], float(self.weights[j])) for j in order[:self.top_k]]

    def to_csv(self) -> str:
        lines = ["feature,weight"]
        lines += [f"{name},{repr(weight)}" for name, weight in self.top_features()]
        return "\n".join(lines) + "\n"

    def metadata(self) -> Dict:
        return {
            "row_id": self.row_id,
            "prediction": self.prediction,
            "intercept": self.intercept,
            "kernel_width": self.kernel_width,
            "n_samples": self.n_samples,
            "r2": self.r2,
            "top_k": self.top_k,
            "ridge_alpha": self.ridge_alpha,
            "seed": self.seed,
            "space": "standardized",
            "kernel": "exp(-distance^2 / kernel_width^2)",
        }

    def metadata_json(self) -> str:
        return json.dumps(self.metadata(), indent=2) + "\n"


def lime_explain(predict_fn: Callable[[np.ndarray], np.ndarray], x: np.ndarray, scales: np.ndarray,
                 rng: np.random.Generator, n_samples: int = 5000, kernel_width: Optional[float] = None,
                 top_k: int = 10, feature_names: Optional[Sequence[str]] = None,
                 ridge_alpha: float = LIME_RIDGE_ALPHA, seed: Optional[int] = None,
                 row_id: Optional[str] = None) -> LocalSurrogate:
    """
    Weighted ridge surrogate of predict_fn around x. Perturbations are standard
    normal in z-space (x + z * scales) and weighted by exp(-|z|^2 / width^2).
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    n_features = x.size
    feature_names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(n_features)]
    scales = np.where(np.asarray(scales, dtype=np.float64) > 0, scales, 1.0)
    if kernel_width is None:
        kernel_width = 0.75 * math.sqrt(n_features)
    if kernel_width <= 0 or n_samples < 2:
        raise KernelWidthError(f"Invalid LIME settings kernel_width={kernel_width} n_samples={n_samples}",
                               stage="explain")

    Z = rng.standard_normal((n_samples, n_features))
    samples = x + Z * scales
    targets = np.asarray(predict_fn(samples), dtype=np.float64)
    distances_sq = (Z * Z).sum(axis=1)
    weights = np.exp(-distances_sq / kernel_width ** 2)
    if weights.sum() < LIME_MIN_WEIGHT:
        raise KernelWidthError(f"Kernel width {kernel_width:.4g} gives every perturbation ~0 weight; "
                               f"use a wider kernel", stage="explain")

    surrogate = Ridge(alpha=ridge_alpha)
    surrogate.fit(Z, targets, sample_weight=weights)
    r2 = float(surrogate.score(Z, targets, sample_weight=weights)) if np.ptp(targets) > 0 else 1.0
    prediction = float(np.asarray(predict_fn(x[None, :]), dtype=np.float64)[0])
    return LocalSurrogate(feature_names=feature_names, weights=np.asarray(surrogate.coef_, dtype=np.float64),
                          intercept=float(surrogate.intercept_), kernel_width=float(kernel_width),
                          n_samples=n_samples, r2=r2, top_k=min(top_k, n_features), ridge_alpha=ridge_alpha,
                          seed=seed, row_id=row_id, prediction=prediction)
