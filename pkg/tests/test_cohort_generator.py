import json
from dataclasses import replace

import numpy as np
import pytest

from src.cohort_generator import (CALIBRATION, EXTRA_CANDIDATES, FINAL_FEATURES, GeneratorSpec, bayes_auroc,
                                  class_parameters, generate)
from src.errors import ConfigError

SMALL = GeneratorSpec(n=3000, seed=11, bayes_sample_size=4000)


@pytest.fixture(scope="module")
def small_cohort():
    return generate(SMALL)


class TestGenerate:
    def test_shape_ids_and_schema(self, small_cohort):
        dataset, manifest = small_cohort
        assert dataset.n_rows == 3000
        assert dataset.feature_names == list(FINAL_FEATURES)
        assert dataset.row_ids[0] == "pt-000001"
        assert manifest["rows"] == 3000
        assert manifest["positives"] + manifest["negatives"] == 3000

    def test_same_spec_same_cohort(self, small_cohort, logger):
        again, _ = generate(SMALL, logger=logger)
        assert again.equals(small_cohort[0])

    def test_different_seed_different_cohort(self, small_cohort, logger):
        other, _ = generate(replace(SMALL, seed=12), logger=logger)
        assert not other.equals(small_cohort[0])

    def test_prevalence(self, small_cohort):
        dataset, _ = small_cohort
        assert dataset.labels.mean() == pytest.approx(0.162, abs=0.02)

    def test_missing_rates_close_to_configured(self, small_cohort):
        dataset, manifest = small_cohort
        for entry in manifest["features"]:
            observed = dataset.missing_mask[:, dataset.index_of(entry["name"])].mean()
            assert observed == pytest.approx(entry["missing_rate"], abs=0.03)
            assert observed == pytest.approx(entry["observed_missing_fraction"])
        assert not dataset.missing_mask[:, dataset.index_of("SOFA")].any()

    def test_floors_and_ceilings_hold_on_observed_cells(self, small_cohort):
        dataset, _ = small_cohort
        for entry in CALIBRATION:
            observed = dataset.observed(entry.name)
            if entry.floor is not None:
                assert observed.min() >= entry.floor
            if entry.ceiling is not None:
                assert observed.max() <= entry.ceiling

    def test_non_survivors_have_higher_sofa(self, small_cohort):
        dataset, _ = small_cohort
        sofa = dataset.values[:, dataset.index_of("SOFA")]
        assert sofa[dataset.labels == 1].mean() > sofa[dataset.labels == 0].mean() + 2.0

    def test_severity_factor_induces_correlation(self, small_cohort):
        dataset, _ = small_cohort
        survivors = dataset.labels == 0
        apsiii = dataset.values[survivors, dataset.index_of("APSIII")]
        sapsii = dataset.values[survivors, dataset.index_of("SAPSII")]
        assert np.corrcoef(apsiii, sapsii)[0, 1] == pytest.approx(0.36, abs=0.08)

    def test_uncorrelated_variant(self, logger):
        dataset, _ = generate(replace(SMALL, correlation=False), logger=logger)
        survivors = dataset.labels == 0
        urine = dataset.values[survivors][:, [dataset.index_of("Avg_UrineOutput"),
                                              dataset.index_of("Total_UrineOutput")]]
        assert abs(np.corrcoef(urine.T)[0, 1]) < 0.15

    def test_manifest_regenerates_the_cohort(self, small_cohort, logger):
        dataset, manifest = small_cohort
        restored = GeneratorSpec.from_manifest(json.loads(json.dumps(manifest)))
        assert restored == SMALL
        assert generate(restored, logger=logger)[0].equals(dataset)


class TestVariants:
    def test_extra_candidates_appended(self, logger):
        dataset, manifest = generate(replace(SMALL, n=500, extra_candidates=True), logger=logger)
        names = [extra.name for extra in EXTRA_CANDIDATES]
        assert dataset.feature_names == list(FINAL_FEATURES) + names
        assert dataset.descriptor("Gender").levels == ("F", "M")
        assert [entry["name"] for entry in manifest["extra_candidates"]] == names

    def test_extras_leave_final_features_unchanged(self, small_cohort, logger):
        with_extras, _ = generate(replace(SMALL, extra_candidates=True), logger=logger)
        base = small_cohort[0]
        assert np.array_equal(with_extras.values[:, :base.n_features], base.values)
        assert np.array_equal(with_extras.missing_mask[:, :base.n_features], base.missing_mask)

    def test_external_variant(self):
        external = GeneratorSpec(seed=42).external_variant()
        assert external.n == 8547
        assert external.seed == 43
        assert external.separation_scale == 0.6
        assert external.location_shift == 0.25

    def test_weaker_separation_lowers_bayes_auroc(self):
        strong = bayes_auroc(SMALL)
        weak = bayes_auroc(replace(SMALL, separation_scale=0.6))
        assert 0.6 < weak < strong < 1.0

    def test_spread_is_bracket_over_3_92_scaled(self):
        params = class_parameters(SMALL)
        sofa = CALIBRATION[FINAL_FEATURES.index("SOFA")]
        expected = (sofa.survivor[2] - sofa.survivor[1]) / 3.92 * 1.5
        assert params.spreads[0, FINAL_FEATURES.index("SOFA")] == pytest.approx(expected)

    def test_no_floors(self, logger):
        dataset, manifest = generate(replace(SMALL, n=2000, apply_floors=False), logger=logger)
        assert dataset.observed("Creatinine").min() < 0.0
        assert manifest["features"][0]["floor"] is None


class TestSpecValidation:
    @pytest.mark.parametrize("changes", [
        {"n": 0},
        {"prevalence": 1.0},
        {"spread_scale": 0.0},
        {"missingness": {"Bilirubin": 0.1}},
        {"missingness": {"PO2": 1.0}},
    ])
    def test_invalid_spec(self, changes):
        with pytest.raises(ConfigError):
            replace(SMALL, **changes).validate()

    def test_unknown_setting(self):
        with pytest.raises(ConfigError):
            GeneratorSpec.from_dict({"rows": 10})
