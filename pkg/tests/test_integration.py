#!/usr/bin/env python3
"""
Integration tests for the risk pipeline
Runs every stage on a small synthetic cohort, including rollback scenarios
"""

import json
import os

import pytest

from config.settings import MODEL_FILE, REPORT_JSON_FILE, REPORT_TEXT_FILE, RESOLVED_CONFIG_FILE
from main import main
from src.cohort_generator import GeneratorSpec
from src.file_manager import FileManager
from src.ingest import ingest_csv
from src.logger import PipelineLogger
from src.processing_pipeline import (IMPUTED_FILE, IMPUTED_SCHEMA_FILE, SELECTION_FILE, STAGES, ProcessingPipeline,
                                     write_synthetic_cohort)
from src.run_config import RunConfig
from tests.mocks.mock_filesystem import FailingFileManager

pytestmark = pytest.mark.slow

SMALL_RUN = {
    "seed": 5,
    "select": {"rfe_target": 10, "rfe_estimator": "logistic_coefficient"},
    "model": {"train": {"eta": 0.3, "max_depth": 3, "n_estimators": 40}, "forest_trees": 10,
              "forest_max_depth": 4},
    "evaluate": {"n_boot": 50},
    "explain": {"lime_rows": 2, "lime_samples": 300},
}


@pytest.fixture(scope="module")
def module_logger(tmp_path_factory):
    return PipelineLogger("INFO", logs_dir=str(tmp_path_factory.mktemp("logs")))


@pytest.fixture(scope="module")
def cohort_files(tmp_path_factory, module_logger):
    """Small cohort plus a shifted external companion."""
    data_dir = str(tmp_path_factory.mktemp("data"))
    manager = FileManager(data_dir, module_logger)
    spec = GeneratorSpec(n=600, seed=5, bayes_sample_size=2000)
    cohort = write_synthetic_cohort(manager, spec, "cohort", module_logger)
    external = write_synthetic_cohort(manager, spec.external_variant(n=300), "external", module_logger)
    return {"csv": cohort["csv"], "schema": cohort["schema"], "external_csv": external["csv"]}


def small_config(cohort_files, output_dir):
    entry = dict(SMALL_RUN, paths={"cohort_csv": cohort_files["csv"], "schema": cohort_files["schema"],
                                   "external_csv": cohort_files["external_csv"], "output_dir": output_dir})
    return RunConfig.from_dict(entry).validate()


def read(path):
    with open(path, "r", encoding="utf-8") as f:
        return f.read()


@pytest.fixture(scope="module")
def full_run(tmp_path_factory, cohort_files, module_logger):
    output_dir = str(tmp_path_factory.mktemp("run") / "out")
    pipeline = ProcessingPipeline(small_config(cohort_files, output_dir), threads=1, logger=module_logger)
    return pipeline, pipeline.run()


class TestFullRun:
    def test_run_succeeds_and_writes_artifacts(self, full_run):
        pipeline, code = full_run
        assert code == 0
        assert pipeline.processing_state["completed_stages"] == list(STAGES)
        for name in (RESOLVED_CONFIG_FILE, MODEL_FILE, REPORT_JSON_FILE, REPORT_TEXT_FILE, SELECTION_FILE,
                     "imputation_policy.json", "synthetic_batch.csv", "roc_gbdt.csv", "roc_external_gbdt.csv",
                     "shap_importance.csv", "shap_beeswarm.csv"):
            assert pipeline.file_manager.exists(name), name
        lime_files = [name for name in os.listdir(pipeline.config.paths.output_dir)
                      if name.startswith("lime_") and name.endswith(".csv")]
        assert len(lime_files) == 2

    def test_report_contents(self, full_run):
        pipeline, _ = full_run
        report = json.loads(read(pipeline.file_manager.path(REPORT_JSON_FILE)))

        models = {row["model"]: row for row in report["internal"]["models"]}
        assert list(models) == ["gbdt", "logistic", "forest"]
        assert models["gbdt"]["auroc"] > 0.6
        assert models["gbdt"]["ci_low"] <= models["gbdt"]["auroc"] <= models["gbdt"]["ci_high"]
        assert models["gbdt"]["threshold_source"] == "youden_validation"
        assert report["external"]["rows"] == 300
        assert len(report["t_tests"]["survivors_vs_non_survivors"]) == 24
        assert report["settings"]["split"] == "stratified"
        assert report["settings"]["leakage_mode"] == "train"

    def test_model_ranking_directions(self, full_run):
        pipeline, _ = full_run
        report = json.loads(read(pipeline.file_manager.path(REPORT_JSON_FILE)))
        internal = {row["model"]: row["auroc"] for row in report["internal"]["models"]}
        external = {row["model"]: row["auroc"] for row in report["external"]["models"]}

        assert internal["gbdt"] >= internal["logistic"]
        assert external["gbdt"] < internal["gbdt"]

    def test_masked_payloads_never_reach_artifacts(self, tmp_path, full_run, cohort_files, module_logger,
                                                   monkeypatch):
        reference, _ = full_run

        def poisoned_ingest(path, schema, logger=None):
            return ingest_csv(path, schema, logger=logger).poisoned(1e12)

        monkeypatch.setattr("src.processing_pipeline.ingest_csv", poisoned_ingest)
        output_dir = str(tmp_path / "poisoned")
        pipeline = ProcessingPipeline(small_config(cohort_files, output_dir), threads=1, logger=module_logger)
        assert pipeline.run() == 0

        for name in (MODEL_FILE, REPORT_JSON_FILE):
            with open(os.path.join(output_dir, name), "rb") as poisoned, \
                    open(reference.file_manager.path(name), "rb") as clean:
                assert poisoned.read() == clean.read(), name

    def test_selection_keeps_overrides(self, full_run):
        pipeline, _ = full_run
        trace = json.loads(read(pipeline.file_manager.path(SELECTION_FILE)))
        assert {"PO2", "Serum Calcium", "RDW"} <= set(trace["final_set"])
        assert len(trace["rfe"]["retained"]) == 10

    def test_synthetic_rows_only_in_training(self, full_run):
        pipeline, _ = full_run
        batch = read(pipeline.file_manager.path("synthetic_batch.csv")).splitlines()
        assert batch[0] == "row_id,base,neighbor,delta"
        assert all(line.startswith("syn-") for line in batch[1:])
        assert "syn-" not in read(pipeline.file_manager.path(IMPUTED_FILE))

    def test_stage_by_stage_matches_full_run(self, tmp_path, full_run, cohort_files, module_logger):
        reference, _ = full_run
        output_dir = str(tmp_path / "stages")
        for stage in STAGES:
            # A fresh pipeline per stage: each one reads only what earlier stages left on disk.
            pipeline = ProcessingPipeline(small_config(cohort_files, output_dir), threads=2, logger=module_logger)
            assert pipeline.run_stage(stage) == 0, stage

        for name in (MODEL_FILE, REPORT_JSON_FILE, SELECTION_FILE, "shap_importance.csv"):
            assert read(os.path.join(output_dir, name)) == read(reference.file_manager.path(name)), name


class TestRollback:
    def test_failed_write_rolls_back_whole_run(self, tmp_path, cohort_files, module_logger):
        output_dir = str(tmp_path / "out")
        manager = FailingFileManager(output_dir, module_logger)
        manager.fail_when_writing(REPORT_TEXT_FILE)
        pipeline = ProcessingPipeline(small_config(cohort_files, output_dir), logger=module_logger,
                                      file_manager=manager)

        assert pipeline.run() == 3
        assert pipeline.processing_state["completed_stages"] == ["ingest", "impute", "select", "train"]
        assert len(manager.get_operations_log()) > 0
        assert not os.path.exists(output_dir)

    def test_rollback_keeps_files_from_earlier_invocations(self, tmp_path, cohort_files, module_logger):
        output_dir = str(tmp_path / "out")
        config = small_config(cohort_files, output_dir)
        assert ProcessingPipeline(config, logger=module_logger).run_stage("ingest") == 0

        manager = FailingFileManager(output_dir, module_logger)
        manager.set_failure_point(2)
        assert ProcessingPipeline(config, logger=module_logger, file_manager=manager).run_stage("impute") == 3
        assert os.path.exists(os.path.join(output_dir, RESOLVED_CONFIG_FILE))
        assert not os.path.exists(os.path.join(output_dir, IMPUTED_FILE))

    def test_unexpected_exception_rolls_back(self, tmp_path, cohort_files, module_logger):
        output_dir = str(tmp_path / "out")
        pipeline = ProcessingPipeline(small_config(cohort_files, output_dir), logger=module_logger)

        def broken_ingest():
            pipeline.file_manager.write_text("partial.csv", "row_id\n", stage="ingest")
            raise KeyError("label")

        pipeline.ingest = broken_ingest
        assert pipeline.run() == 1
        assert pipeline.processing_state["completed_stages"] == []
        assert not os.path.exists(os.path.join(output_dir, "partial.csv"))

    def test_stage_without_prior_artifacts(self, tmp_path, cohort_files, module_logger):
        output_dir = str(tmp_path / "empty")
        pipeline = ProcessingPipeline(small_config(cohort_files, output_dir), logger=module_logger)
        assert pipeline.run_stage("train") == 3
        assert not os.path.exists(os.path.join(output_dir, MODEL_FILE))


class TestCommandLine:
    def test_synth_then_run_then_evaluate_saved_model(self, tmp_path, capsys):
        data_dir = str(tmp_path / "data")
        assert main(["synth", "--n", "500", "--seed", "9", "--out", data_dir]) == 0
        assert sorted(os.listdir(data_dir)) == ["cohort.csv", "cohort_manifest.json", "cohort_schema.json"]

        config_path = tmp_path / "run.json"
        config_path.write_text(json.dumps(dict(SMALL_RUN, paths={
            "cohort_csv": os.path.join(data_dir, "cohort.csv"),
            "schema": os.path.join(data_dir, "cohort_schema.json"),
        })))
        output_dir = str(tmp_path / "out")
        assert main(["run", "--config", str(config_path), "--output", output_dir]) == 0
        assert os.path.exists(os.path.join(output_dir, REPORT_TEXT_FILE))

        saved_dir = str(tmp_path / "saved")
        assert main(["evaluate", "--model", os.path.join(output_dir, MODEL_FILE),
                     "--data", os.path.join(output_dir, IMPUTED_FILE),
                     "--schema", os.path.join(output_dir, IMPUTED_SCHEMA_FILE), "--output", saved_dir]) == 0
        assert os.path.exists(os.path.join(saved_dir, "roc_model.csv"))

    def test_missing_config_file(self, tmp_path, capsys):
        assert main(["run", "--config", str(tmp_path / "absent.json")]) == 2
        assert "Error: [config]" in capsys.readouterr().err

    def test_invalid_thread_count(self):
        assert main(["train", "--threads", "0"]) == 2

    def test_run_without_paths(self, tmp_path):
        output_dir = str(tmp_path / "out")
        assert main(["run", "--output", output_dir]) == 2
        assert not os.path.exists(output_dir)

    def test_unexpected_error_gets_stage_diagnostic(self, tmp_path, capsys, monkeypatch):
        def broken_select(self):
            raise IndexError("feature list exhausted")

        monkeypatch.setattr(ProcessingPipeline, "select", broken_select)
        assert main(["select", "--output", str(tmp_path / "out")]) == 1
        assert "Error: [select] Unexpected IndexError" in capsys.readouterr().err

    def test_unexpected_error_outside_stages(self, capsys, monkeypatch):
        def broken_loader(path):
            raise KeyError("paths")

        monkeypatch.setattr("main.load_run_config", broken_loader)
        assert main(["train"]) == 1
        assert "Error: [train] Unexpected KeyError" in capsys.readouterr().err

    def test_version(self, capsys):
        with pytest.raises(SystemExit) as excinfo:
            main(["--version"])
        assert excinfo.value.code == 0
        assert "model format 1" in capsys.readouterr().out
