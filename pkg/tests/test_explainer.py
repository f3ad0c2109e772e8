import itertools
import json
import math

import numpy as np
import pytest

from src.boosting import TrainConfig, predict_margin, train
from src.core import make_rng
from src.errors import DataError, KernelWidthError
from src.explainer import (global_importance, lime_explain, shap_matrix, tree_expected_value, tree_shap,
                           tree_shap_values)
from src.tree_grower import GrowthParams, RegressionTree, TreeGrower


def conditional_expectation(tree, x, known, node=0):
    """Tree output with features in `known` fixed to x and the rest following training cover."""
    if tree.feature[node] < 0:
        return tree.value[node]
    feature = tree.feature[node]
    left, right = tree.left[node], tree.right[node]
    if feature in known:
        child = left if x[feature] < tree.threshold[node] else right
        return conditional_expectation(tree, x, known, child)
    return (conditional_expectation(tree, x, known, left) * tree.cover[left]
            + conditional_expectation(tree, x, known, right) * tree.cover[right]) / tree.cover[node]


def brute_force_shapley(tree, x, n_features):
    phi = np.zeros(n_features)
    for j in range(n_features):
        others = [f for f in range(n_features) if f != j]
        for size in range(n_features):
            weight = math.factorial(size) * math.factorial(n_features - size - 1) / math.factorial(n_features)
            for subset in itertools.combinations(others, size):
                known = set(subset)
                phi[j] += weight * (conditional_expectation(tree, x, known | {j})
                                    - conditional_expectation(tree, x, known))
    return phi


def grown_tree(seed, n_features, depth):
    rng = np.random.default_rng(seed)
    X = np.round(rng.normal(size=(120, n_features)), 1)
    g = rng.normal(size=120) + X[:, 0]
    params = GrowthParams(max_depth=depth, min_child_weight=1.0, reg_lambda=1.0)
    return TreeGrower(X, params).grow(g, np.ones(120), np.ones(120)), X


class TestTreeShap:
    @pytest.mark.parametrize("seed,n_features,depth", [(0, 3, 3), (1, 2, 4), (2, 4, 3)])
    def test_matches_brute_force_shapley(self, seed, n_features, depth):
        tree, X = grown_tree(seed, n_features, depth)
        phi = tree_shap_values(tree, X[:8])
        for row in range(8):
            np.testing.assert_allclose(phi[row], brute_force_shapley(tree, X[row], n_features), atol=1e-10)

    def test_repeated_split_feature_on_path(self):
        tree, X = grown_tree(1, 2, 4)
        assert tree.depth >= 3  # two features, so some path splits on one of them twice
        np.testing.assert_allclose(tree_shap_values(tree, X[:1])[0], brute_force_shapley(tree, X[0], 2),
                                   atol=1e-10)

    def test_local_accuracy_per_tree(self):
        tree, X = grown_tree(3, 3, 3)
        phi = tree_shap_values(tree, X)
        np.testing.assert_allclose(phi.sum(axis=1) + tree_expected_value(tree), tree.predict(X), atol=1e-10)

    def test_expected_value_is_cover_weighted_leaf_mean(self):
        tree, X = grown_tree(4, 3, 2)
        assert tree_expected_value(tree) == pytest.approx(tree.predict(X).mean())

    def test_single_leaf_tree_attributes_nothing(self):
        tree, X = grown_tree(0, 3, 0)
        assert np.all(tree_shap_values(tree, X[:3]) == 0.0)

    def test_missing_cover_rejected(self):
        tree, X = grown_tree(0, 3, 2)
        entry = tree.to_dict()
        del entry["cover"]
        with pytest.raises(DataError):
            tree_shap_values(RegressionTree.from_dict(entry), X[:1])


class TestEnsembleAttribution:
    @pytest.fixture
    def ensemble(self, separable_data, logger):
        X, y = separable_data
        config = TrainConfig(eta=0.3, max_depth=3, n_estimators=15, subsample=0.8, colsample_bytree=1.0, seed=2)
        ensemble, _ = train(X, y, config, feature_names=["a", "b", "noise"], logger=logger)
        return ensemble

    def test_local_accuracy(self, ensemble, separable_data):
        X, _ = separable_data
        attribution = tree_shap(ensemble, X[5])
        assert attribution.local_accuracy_gap() < 1e-9
        assert attribution.prediction_margin == pytest.approx(predict_margin(ensemble, X[5:6])[0])

    def test_global_ranking_puts_noise_last(self, ensemble, separable_data):
        X, _ = separable_data
        importance = global_importance(ensemble, X[:60])
        assert importance.max_local_accuracy_gap() < 1e-9
        assert importance.ranking()[-1][0] == "noise"
        assert importance.ranking_csv().splitlines()[0] == "feature,mean_abs_phi"
        assert len(importance.beeswarm_csv().splitlines()) == 1 + 60 * 3

    def test_base_value_includes_tree_expectations(self, ensemble, separable_data):
        X, _ = separable_data
        _, base_value = shap_matrix(ensemble.active_trees, X[:1], ensemble.base_margin)
        expected = ensemble.base_margin + sum(tree_expected_value(tree) for tree in ensemble.active_trees)
        assert base_value == pytest.approx(expected)

    def test_empty_rows_rejected(self, ensemble):
        with pytest.raises(DataError):
            global_importance(ensemble, np.zeros((0, 3)))


class TestLime:
    def linear(self, X):
        return X @ np.array([2.0, -1.0, 0.0])

    def bounded(self, X):
        return np.tanh(X).sum(axis=1)

    def test_recovers_linear_model_in_standardized_units(self):
        scales = np.array([1.0, 2.0, 0.5])
        surrogate = lime_explain(self.linear, np.zeros(3), scales, make_rng(0), n_samples=2000)
        np.testing.assert_allclose(surrogate.weights, [2.0, -2.0, 0.0], atol=1e-2)
        assert surrogate.r2 > 0.99
        assert [name for name, _ in surrogate.top_features()][2] == "x2"

    def test_same_seed_same_surrogate(self):
        x = np.array([0.5, 1.0, -0.2])
        first = lime_explain(self.bounded, x, np.ones(3), make_rng(7), n_samples=500, seed=7, row_id="pt-000003")
        second = lime_explain(self.bounded, x, np.ones(3), make_rng(7), n_samples=500, seed=7, row_id="pt-000003")
        np.testing.assert_array_equal(first.weights, second.weights)
        assert first.to_csv() == second.to_csv()
        assert json.loads(first.metadata_json())["row_id"] == "pt-000003"

    def test_default_kernel_width(self):
        surrogate = lime_explain(self.linear, np.zeros(3), np.ones(3), make_rng(0), n_samples=100)
        assert surrogate.kernel_width == pytest.approx(0.75 * math.sqrt(3))

    def test_top_k_limits_output(self):
        surrogate = lime_explain(self.linear, np.zeros(3), np.ones(3), make_rng(0), n_samples=100, top_k=2)
        assert len(surrogate.to_csv().splitlines()) == 3

    @pytest.mark.parametrize("width", [0.0, -1.0, 1e-4])
    def test_bad_kernel_width(self, width):
        with pytest.raises(KernelWidthError):
            lime_explain(self.linear, np.zeros(3), np.ones(3), make_rng(0), n_samples=200, kernel_width=width)

