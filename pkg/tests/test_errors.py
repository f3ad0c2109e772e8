import numpy as np
import pytest

from src.errors import (ConfigError, DataError, NumericError, PipelineError, SingleClassError,
                        as_pipeline_error)


class TestErrorTaxonomy:
    def test_str_names_the_stage(self):
        assert str(DataError("empty cohort", stage="ingest")) == "[ingest] empty cohort"
        assert str(PipelineError("plain")) == "plain"

    @pytest.mark.parametrize("error_type, exit_code", [
        (PipelineError, 1), (ConfigError, 2), (DataError, 3), (SingleClassError, 3), (NumericError, 4),
    ])
    def test_exit_codes(self, error_type, exit_code):
        assert error_type("x").exit_code == exit_code


class TestAsPipelineError:
    def test_pipeline_error_passes_through_with_stage(self):
        original = DataError("bad row")
        mapped = as_pipeline_error(original, "impute")
        assert mapped is original
        assert mapped.stage == "impute"

    def test_existing_stage_kept(self):
        assert as_pipeline_error(DataError("x", stage="ingest"), "impute").stage == "ingest"

    @pytest.mark.parametrize("error, expected", [
        (np.linalg.LinAlgError("singular"), NumericError),
        (FloatingPointError("overflow"), NumericError),
        (ValueError("nan"), NumericError),
        (OSError("disk full"), DataError),
        (KeyError("label"), PipelineError),
        (TypeError("bad operand"), PipelineError),
    ])
    def test_mapping(self, error, expected):
        mapped = as_pipeline_error(error, "train")
        assert type(mapped) is expected
        assert mapped.stage == "train"
        assert mapped.details["exception_type"] == type(error).__name__
