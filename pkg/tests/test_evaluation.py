import numpy as np
import pytest
from scipy import stats

from src.core import dataset_from_matrix
from src.errors import DataError, SingleClassError
from src.evaluation import (auroc, bootstrap_ci, roc_curve, t_test_table, threshold_metrics, welch_t_test,
                            youden_threshold)

SCORES = np.array([0.1, 0.4, 0.35, 0.8])
LABELS = np.array([0, 0, 1, 1])


def pairwise_auroc(scores, labels):
    positives = scores[labels == 1]
    negatives = scores[labels == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in positives for n in negatives)
    return wins / (positives.size * negatives.size)


class TestAuroc:
    def test_small_example(self):
        assert auroc(SCORES, LABELS) == 0.75

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_pairwise_count_with_ties(self, seed):
        rng = np.random.default_rng(seed)
        scores = np.round(rng.random(60), 1)
        labels = (rng.random(60) < 0.4).astype(int)
        assert auroc(scores, labels) == pytest.approx(pairwise_auroc(scores, labels))

    def test_constant_scores_give_one_half(self):
        assert auroc(np.full(6, 0.3), np.array([0, 1, 0, 1, 1, 0])) == 0.5

    def test_single_class(self):
        with pytest.raises(SingleClassError):
            auroc(np.array([0.1, 0.2]), np.array([1, 1]))

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            auroc(np.array([0.1, 0.2]), np.array([0, 1, 1]))


class TestRocCurve:
    def test_points_and_area(self):
        curve = roc_curve(SCORES, LABELS)
        assert curve.tpr.tolist() == [0.0, 0.5, 0.5, 1.0, 1.0, 1.0]
        assert curve.fpr.tolist() == [0.0, 0.0, 0.5, 0.5, 1.0, 1.0]
        assert curve.area() == pytest.approx(auroc(SCORES, LABELS))

    def test_area_equals_auroc_with_ties(self):
        rng = np.random.default_rng(9)
        scores = np.round(rng.random(80), 1)
        labels = (rng.random(80) < 0.3).astype(int)
        assert roc_curve(scores, labels).area() == pytest.approx(auroc(scores, labels))

    def test_csv_marks_infinite_thresholds(self):
        lines = roc_curve(SCORES, LABELS).to_csv().splitlines()
        assert lines[0] == "threshold,fpr,tpr"
        assert lines[1].startswith("inf,")
        assert lines[-1].startswith("-inf,")


class TestThresholds:
    def test_youden_prefers_higher_threshold_and_returns_midpoint(self):
        assert youden_threshold(roc_curve(SCORES, LABELS)) == pytest.approx(0.6)

    def test_metrics_at_threshold(self):
        metrics = threshold_metrics(SCORES, LABELS, 0.6)
        assert (metrics.tp, metrics.fp, metrics.tn, metrics.fn) == (1, 0, 2, 1)
        assert metrics.accuracy == 0.75
        assert metrics.sensitivity == 0.5
        assert metrics.specificity == 1.0
        assert metrics.precision == 1.0

    def test_precision_absent_when_nothing_predicted_positive(self):
        metrics = threshold_metrics(SCORES, LABELS, 0.9)
        assert metrics.precision is None
        assert metrics.to_dict()["precision"] is None

    def test_score_equal_to_threshold_is_positive(self):
        assert threshold_metrics(SCORES, LABELS, 0.8).tp == 1


class TestBootstrap:
    @pytest.fixture
    def scored(self):
        rng = np.random.default_rng(12)
        labels = (rng.random(150) < 0.3).astype(int)
        scores = labels * 0.8 + rng.normal(size=150)
        return scores, labels

    def test_interval_brackets_point(self, scored, logger):
        scores, labels = scored
        interval = bootstrap_ci(scores, labels, n_boot=200, seed=1, logger=logger)
        assert interval.low <= interval.point <= interval.high
        assert interval.point == auroc(scores, labels)
        assert interval.high - interval.low < 0.5

    def test_interval_is_raw_percentiles_even_when_point_lies_outside(self, monkeypatch, logger):
        # A resample distribution sitting entirely below the observed AUROC of 1.0.
        def skewed_chunk(scores, labels, seed, start, stop, stratified):
            return list(np.linspace(0.6, 0.7, stop - start)), 0

        monkeypatch.setattr("src.evaluation._bootstrap_chunk", skewed_chunk)
        scores = np.array([0.1, 0.2, 0.8, 0.9])
        labels = np.array([0, 0, 1, 1])
        interval = bootstrap_ci(scores, labels, n_boot=11, level=0.8, logger=logger)

        expected_low, expected_high = np.quantile(np.linspace(0.6, 0.7, 11), [0.1, 0.9])
        assert interval.point == 1.0
        assert interval.low == pytest.approx(expected_low)
        assert interval.high == pytest.approx(expected_high)
        assert interval.high < interval.point

    def test_thread_count_does_not_change_interval(self, scored, logger):
        scores, labels = scored
        single = bootstrap_ci(scores, labels, n_boot=120, seed=5, threads=1, logger=logger)
        multi = bootstrap_ci(scores, labels, n_boot=120, seed=5, threads=4, logger=logger)
        assert single == multi

    def test_unstratified_redraws_single_class_resamples(self, logger):
        scores = np.array([0.9, 0.1, 0.2, 0.3])
        labels = np.array([1, 0, 0, 0])
        interval = bootstrap_ci(scores, labels, n_boot=100, seed=0, stratified=False, logger=logger)
        assert interval.redraws > 0
        assert interval.low <= interval.high

    def test_invalid_level(self, scored, logger):
        scores, labels = scored
        with pytest.raises(DataError):
            bootstrap_ci(scores, labels, level=1.0, logger=logger)


class TestWelch:
    def test_matches_scipy(self, logger):
        rng = np.random.default_rng(3)
        a = rng.normal(1.0, 1.0, size=25)
        b = rng.normal(0.3, 2.5, size=40)
        result = welch_t_test(a, b, logger=logger)
        reference = stats.ttest_ind(a, b, equal_var=False)
        assert result.t == pytest.approx(reference.statistic)
        assert result.p_value == pytest.approx(reference.pvalue, rel=1e-8)

    def test_constant_equal_samples(self, logger):
        result = welch_t_test([2.0, 2.0, 2.0], [2.0, 2.0], logger=logger)
        assert result.p_value == 1.0
        assert not result.significant

    def test_constant_different_samples(self, logger):
        result = welch_t_test([1.0, 1.0], [3.0, 3.0, 3.0], logger=logger)
        assert result.p_value == 0.0
        assert result.t == -np.inf

    def test_too_few_values(self, logger):
        with pytest.raises(DataError):
            welch_t_test([1.0], [2.0, 3.0], logger=logger)

    def test_table_uses_observed_cells(self, logger):
        group_a = dataset_from_matrix(np.array([[1.0], [2.0], [1e9]]), mask=np.array([[False], [False], [True]]),
                                      names=["Lactate"])
        group_b = dataset_from_matrix(np.array([[3.0], [4.0]]), names=["Lactate"])
        row = t_test_table(group_a, group_b, logger=logger)[0]
        assert row.feature == "Lactate"
        assert row.result.mean_a == 1.5
        assert row.to_dict()["p_value_display"] == f"{row.result.p_value:.3f}"
