import json

import numpy as np
import pytest

from src.core import FeatureDescriptor, FeatureKind
from src.errors import DataError, SchemaMismatchError
from src.ingest import SchemaFile, export_csv, ingest_csv, load_schema, schema_to_json

SCHEMA = SchemaFile(
    features=(FeatureDescriptor("SOFA"), FeatureDescriptor("Lactate", unit="mmol/L"),
              FeatureDescriptor("Gender", kind=FeatureKind.CATEGORICAL)),
    label_column="died",
    id_column="stay_id",
)


def write_csv(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


class TestIngestCsv:
    def test_parses_values_masks_and_labels(self, tmp_path, logger):
        path = write_csv(tmp_path / "cohort.csv",
                         "stay_id,SOFA,Lactate,Gender,died\n"
                         "a,3,1.5,F,0\n"
                         "b,7,NA,M,1\n"
                         "c,5,,F,0\n")
        data = ingest_csv(path, SCHEMA, logger=logger)

        assert data.row_ids == ("a", "b", "c")
        assert data.labels.tolist() == [0, 1, 0]
        assert data.missing_mask[:, 1].tolist() == [False, True, True]
        assert data.observed("SOFA").tolist() == [3.0, 7.0, 5.0]
        assert data.descriptor("Gender").levels == ("F", "M")

    def test_category_tokens_are_trimmed(self, tmp_path, logger):
        path = write_csv(tmp_path / "cohort.csv",
                         "stay_id,SOFA,Lactate,Gender,died\n"
                         "a,3,1.5, M,0\n"
                         "b,7,2.0,F ,1\n")
        data = ingest_csv(path, SCHEMA, logger=logger)
        assert data.descriptor("Gender").levels == ("F", "M")
        assert data.observed("Gender").tolist() == [1.0, 0.0]

        declared = SchemaFile(features=(FeatureDescriptor("SOFA"), FeatureDescriptor("Lactate"),
                                        FeatureDescriptor("Gender", kind=FeatureKind.CATEGORICAL, levels=("F", "M"))),
                              label_column="died", id_column="stay_id")
        assert ingest_csv(path, declared, logger=logger).observed("Gender").tolist() == [1.0, 0.0]

    def test_column_order_follows_schema_not_header(self, tmp_path, logger):
        path = write_csv(tmp_path / "cohort.csv",
                         "died,Gender,Lactate,SOFA,stay_id\n"
                         "1,M,2.5,4,x\n")
        data = ingest_csv(path, SCHEMA, logger=logger)
        assert data.feature_names == ["SOFA", "Lactate", "Gender"]
        assert data.values[0, 0] == 4.0

    def test_non_numeric_token_is_an_error(self, tmp_path, logger):
        path = write_csv(tmp_path / "cohort.csv",
                         "stay_id,SOFA,Lactate,Gender,died\n"
                         "a,3,abc,F,0\n")
        with pytest.raises(DataError):
            ingest_csv(path, SCHEMA, logger=logger)

    def test_thousands_separator_rejected(self, tmp_path, logger):
        path = write_csv(tmp_path / "cohort.csv",
                         'stay_id,SOFA,Lactate,Gender,died\n'
                         'a,"1,000",1.0,F,0\n')
        with pytest.raises(DataError) as excinfo:
            ingest_csv(path, SCHEMA, logger=logger)
        assert excinfo.value.details["column"] == "SOFA"

    def test_unknown_column_rejected(self, tmp_path, logger):
        path = write_csv(tmp_path / "cohort.csv",
                         "stay_id,SOFA,Lactate,Gender,died,extra\n"
                         "a,3,1.0,F,0,9\n")
        with pytest.raises(SchemaMismatchError):
            ingest_csv(path, SCHEMA, logger=logger)

    def test_missing_schema_column_rejected(self, tmp_path, logger):
        path = write_csv(tmp_path / "cohort.csv",
                         "stay_id,SOFA,Gender,died\n"
                         "a,3,F,0\n")
        with pytest.raises(SchemaMismatchError):
            ingest_csv(path, SCHEMA, logger=logger)

    def test_label_outside_binary_rejected(self, tmp_path, logger):
        path = write_csv(tmp_path / "cohort.csv",
                         "stay_id,SOFA,Lactate,Gender,died\n"
                         "a,3,1.0,F,2\n")
        with pytest.raises(DataError):
            ingest_csv(path, SCHEMA, logger=logger)

    def test_empty_file_is_a_data_error(self, tmp_path, logger):
        path = write_csv(tmp_path / "cohort.csv", "")
        with pytest.raises(DataError):
            ingest_csv(path, SCHEMA, logger=logger)

    def test_header_only_gives_zero_rows(self, tmp_path, logger):
        path = write_csv(tmp_path / "cohort.csv", "stay_id,SOFA,Lactate,Gender,died\n")
        data = ingest_csv(path, SCHEMA, logger=logger)
        assert data.n_rows == 0


class TestExport:
    def test_export_then_ingest_preserves_dataset(self, tmp_path, mixed_dataset, logger):
        path = str(tmp_path / "out.csv")
        export_csv(mixed_dataset, path)
        schema = SchemaFile.for_dataset(mixed_dataset)

        reloaded = ingest_csv(path, schema, logger=logger)
        assert reloaded.equals(mixed_dataset)

    def test_masked_cells_exported_empty(self, tmp_path, mixed_dataset):
        path = tmp_path / "out.csv"
        export_csv(mixed_dataset.poisoned(np.nan), str(path))
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "row_id,age,lactate,sex,label"
        assert lines[2] == "r2,2.0,,M,1"

    def test_schema_file_round_trip(self, tmp_path):
        path = tmp_path / "schema.json"
        path.write_text(schema_to_json(SCHEMA), encoding="utf-8")
        assert load_schema(str(path)) == SCHEMA
        assert json.loads(path.read_text())["label_column"] == "died"

    def test_missing_schema_file(self, tmp_path):
        with pytest.raises(DataError):
            load_schema(str(tmp_path / "absent.json"))
