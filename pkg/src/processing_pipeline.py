import os
import re
from typing import Dict, List, Optional

import numpy as np

from config.settings import MODEL_FILE, REPORT_JSON_FILE, REPORT_TEXT_FILE, RESOLVED_CONFIG_FILE
from src.baselines import train_forest, train_logistic
from src.boosting import grid_search, predict_proba, train
from src.cohort_generator import GeneratorSpec, generate
from src.core import Dataset, SplitIndices, derive_rng, split
from src.errors import DataError, NumericError, PipelineError, as_pipeline_error
from src.evaluation import roc_curve, youden_threshold
from src.explainer import global_importance, lime_explain
from src.feature_selector import SelectionTrace, make_trainer, select_features
from src.file_manager import FileManager
from src.imputer import LeakageMode, fit_apply, plan
from src.ingest import SchemaFile, dataset_to_frame, ingest_csv, load_schema, schema_to_json
from src.logger import get_logger
from src.model_store import load_model, model_to_json
from src.oversampler import ResampleMethod, rebalance
from src.reporter import build_report, model_scores
from src.run_config import RunConfig

STAGES = ("ingest", "impute", "select", "train", "evaluate", "explain")

# Work-directory artifacts passed between stages.
DATASET_FILE = "dataset.csv"
SCHEMA_FILE = "schema.json"
SPLIT_FILE = "split.json"
IMPUTED_FILE = "imputed.csv"
IMPUTED_SCHEMA_FILE = "imputed_schema.json"
EXTERNAL_IMPUTED_FILE = "external_imputed.csv"
POLICY_FILE = "imputation_policy.json"
SELECTION_FILE = "selection_trace.json"
LOGISTIC_FILE = "model_logistic.json"
FOREST_FILE = "model_forest.json"
SYNTHETIC_BATCH_FILE = "synthetic_batch.csv"
TRAIN_TRACE_FILE = "train_trace.json"

# Seed stream keys under the run seed.
EARLY_STOP_KEY = 1
RESAMPLE_KEY = 2
LIME_KEY = 3

LOCAL_ACCURACY_TOLERANCE = 1e-6


def sub_seed(seed: int, key: int) -> int:
    """Integer seed for a stage that takes a plain seed, derived from the run seed and a key."""
    return int(np.random.SeedSequence([int(seed), int(key)]).generate_state(1)[0])


def _frame_csv(dataset: Dataset) -> str:
    return dataset_to_frame(dataset).to_csv(index=False, lineterminator="\n")


def _safe_name(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", text)


def write_synthetic_cohort(file_manager: FileManager, spec: GeneratorSpec, prefix: str = "cohort",
                           logger=None) -> Dict[str, str]:
    """Generate a cohort and write `<prefix>.csv`, `<prefix>_schema.json`, `<prefix>_manifest.json`."""
    logger = logger or get_logger()
    dataset, manifest = generate(spec, logger=logger)
    schema = SchemaFile.for_dataset(dataset)
    return {
        "csv": file_manager.write_text(f"{prefix}.csv", _frame_csv(dataset), stage="synth"),
        "schema": file_manager.write_text(f"{prefix}_schema.json", schema_to_json(schema), stage="synth"),
        "manifest": file_manager.write_json(f"{prefix}_manifest.json", manifest, stage="synth"),
    }


class ProcessingPipeline:
    """Runs the modeling stages over one work directory; every stage reads the previous stages' artifacts."""

    def __init__(self, config: RunConfig, threads: int = 1, logger=None, file_manager: Optional[FileManager] = None):
        self.config = config
        self.threads = threads
        self.logger = logger or get_logger()
        self.file_manager = file_manager or FileManager(config.paths.output_dir, self.logger)

        # Track processing state for rollback and failure reports
        self.processing_state = {"completed_stages": [], "current_stage": None, "error": None}

    # Artifact helpers
    def _write_dataset(self, name: str, dataset: Dataset, stage: str):
        return self.file_manager.write_text(name, _frame_csv(dataset), stage=stage)

    def _read_dataset(self, name: str, schema_name: str, stage: str) -> Dataset:
        schema = load_schema(self.file_manager.path(schema_name))
        path = self.file_manager.path(name)
        if not os.path.exists(path):
            raise DataError(f"Required artifact {name} not found in {self.file_manager.output_dir}; "
                            f"run the earlier stage first", stage=stage)
        return ingest_csv(path, schema, logger=self.logger)

    def _read_split(self, stage: str) -> SplitIndices:
        return SplitIndices.from_dict(self.file_manager.read_json(SPLIT_FILE, stage=stage))

    def _log_decisions(self):
        config = self.config
        self.logger.log_decision("impute.k", config.impute.k, "KNN neighbor count is not stated by the method")
        self.logger.log_decision("impute.leakage_mode", config.impute.leakage_mode,
                                 "imputation statistics come from training rows unless 'whole' is requested")
        self.logger.log_decision("select.vif_strategy", "iterative_max_removal",
                                 "remove the single highest-VIF feature and recompute")
        self.logger.log_decision("select.rfe_estimator", config.select.rfe_estimator, "importance source for RFE")
        self.logger.log_decision("select.rfe_step", config.select.rfe_step, "features removed per RFE round")
        self.logger.log_decision("resample.method", config.resample.method, "oversampler applied to training rows")
        self.logger.log_decision("model.early_stopping_fraction", config.model.early_stopping_fraction,
                                 "stratified carve-out of training rows for early stopping and thresholds")
        if config.model.grid is not None:
            self.logger.log_decision("model.grid.metric", config.model.grid.metric, "grid cell selection metric")
        self.logger.log_decision("evaluate.threshold_policy", config.evaluate.threshold_policy,
                                 "operating threshold for accuracy/sensitivity/specificity")
        self.logger.log_decision("evaluate.bootstrap", "stratified percentile" if config.evaluate.stratified_bootstrap
                                 else "percentile", "AUROC confidence interval method")

    # Stages
    def ingest(self) -> Dict:
        paths = self.config.paths
        schema = load_schema(paths.schema)
        dataset = ingest_csv(paths.cohort_csv, schema, logger=self.logger)
        if not dataset.has_labels:
            raise DataError("Cohort has no labels", stage="ingest")
        indices = split(dataset, fraction=self.config.split.fraction, seed=self.config.seed,
                        stratified=self.config.split.stratified)

        self.file_manager.write_json(RESOLVED_CONFIG_FILE, self.config.to_dict(), stage="ingest")
        self._write_dataset(DATASET_FILE, dataset, "ingest")
        self.file_manager.write_text(SCHEMA_FILE, schema_to_json(SchemaFile.for_dataset(dataset)), stage="ingest")
        self.file_manager.write_json(SPLIT_FILE, indices.to_dict(), stage="ingest")
        return {"rows": dataset.n_rows, "features": dataset.n_features, "positives": int(dataset.labels.sum()),
                "split": indices.identifier}

    def impute(self) -> Dict:
        settings = self.config.impute
        dataset = self._read_dataset(DATASET_FILE, SCHEMA_FILE, "impute")
        indices = self._read_split("impute")
        policy = plan(dataset, indices, thresholds=settings.thresholds(), k=settings.k,
                      leakage_mode=LeakageMode(settings.leakage_mode), logger=self.logger)
        outcome = fit_apply(dataset, policy, indices, logger=self.logger)
        imputed = outcome.dataset

        self._write_dataset(IMPUTED_FILE, imputed, "impute")
        self.file_manager.write_text(IMPUTED_SCHEMA_FILE, schema_to_json(SchemaFile.for_dataset(imputed)),
                                     stage="impute")
        self.file_manager.write_text(POLICY_FILE, policy.to_json(), stage="impute")

        summary = {"kept": len(policy.kept_columns), "dropped": policy.dropped_columns,
                   "knn_fallbacks": sum(outcome.fallback_counts.values()),
                   "knn_short_donors": sum(outcome.short_donor_counts.values())}
        if self.config.paths.external_csv:
            external = ingest_csv(self.config.paths.external_csv, load_schema(self.file_manager.path(SCHEMA_FILE)),
                                  logger=self.logger)
            external_outcome = fit_apply(dataset, policy, indices, target=external, logger=self.logger)
            self._write_dataset(EXTERNAL_IMPUTED_FILE, external_outcome.dataset, "impute")
            summary["external_rows"] = external.n_rows
        return summary

    def select(self) -> Dict:
        settings = self.config.select
        imputed = self._read_dataset(IMPUTED_FILE, IMPUTED_SCHEMA_FILE, "select")
        training = imputed.take(self._read_split("select").train_rows)

        if settings.enabled:
            trainer = make_trainer(settings.rfe_estimator, seed=self.config.seed)
            trace = select_features(training, training.labels, vif_threshold=settings.vif_threshold,
                                    rfe_target=settings.rfe_target, rfe_step=settings.rfe_step, trainer=trainer,
                                    overrides=settings.overrides, threads=self.threads, logger=self.logger)
        else:
            names = training.feature_names
            trace = SelectionTrace(candidates=names, vif_removed=[], vif_survivors=names, rfe_eliminated=[],
                                   rfe_retained=names, overrides_added=[], final_set=names,
                                   settings={"enabled": False})
        self.file_manager.write_text(SELECTION_FILE, trace.to_json(), stage="select")
        return {"candidates": len(trace.candidates), "final": len(trace.final_set)}

    def _threshold(self, model, validation: Dataset):
        settings = self.config.evaluate
        if settings.threshold_policy == "fixed":
            return {"threshold": settings.fixed_threshold, "source": "fixed"}
        curve = roc_curve(model_scores(model, validation), validation.labels)
        return {"threshold": youden_threshold(curve), "source": "youden_validation"}

    def train(self) -> Dict:
        config = self.config
        imputed = self._read_dataset(IMPUTED_FILE, IMPUTED_SCHEMA_FILE, "train")
        indices = self._read_split("train")
        selection = SelectionTrace.from_dict(self.file_manager.read_json(SELECTION_FILE, stage="train"))
        features = selection.final_set
        training = imputed.take(indices.train_rows).select_features(features)

        carve = split(training, fraction=1.0 - config.model.early_stopping_fraction,
                      seed=sub_seed(config.seed, EARLY_STOP_KEY), stratified=True)
        fitting = training.take(carve.train_rows)
        validation = training.take(carve.test_rows)

        resampled = rebalance(fitting, None, ResampleMethod(config.resample.method),
                              derive_rng(config.seed, RESAMPLE_KEY), k=config.resample.k, logger=self.logger)
        X = resampled.dataset.matrix(features)
        y = resampled.dataset.labels

        train_config = config.model.train
        grid_result = None
        if config.model.grid is not None:
            grid_result = grid_search(X, y, config.model.grid, seed=config.seed, threads=self.threads,
                                      logger=self.logger)
            train_config = grid_result.best

        ensemble, trace = train(X, y, train_config, eval_set=(validation.matrix(features), validation.labels),
                                feature_names=features, logger=self.logger)
        models = {"gbdt": ensemble}
        if config.model.baselines:
            models["logistic"] = train_logistic(X, y, l2=config.model.logistic_l2, feature_names=features,
                                                logger=self.logger)
            models["forest"] = train_forest(X, y, n_trees=config.model.forest_trees,
                                            max_depth=config.model.forest_max_depth, seed=config.seed,
                                            feature_names=features, threads=self.threads, logger=self.logger)
        thresholds = {name: self._threshold(model, validation) for name, model in models.items()}

        self.file_manager.write_text(MODEL_FILE, model_to_json(ensemble), stage="train")
        if config.model.baselines:
            self.file_manager.write_text(LOGISTIC_FILE, model_to_json(models["logistic"]), stage="train")
            self.file_manager.write_text(FOREST_FILE, model_to_json(models["forest"]), stage="train")
        self.file_manager.write_text(SYNTHETIC_BATCH_FILE, resampled.audit_csv(), stage="train")
        self.file_manager.write_json(TRAIN_TRACE_FILE, {
            "features": features,
            "early_stopping_split": carve.identifier,
            "resample": dict(resampled.summary(), method=config.resample.method, k=config.resample.k),
            "grid": None if grid_result is None else grid_result.to_dict(),
            "config": train_config.to_dict(),
            "trace": trace.to_dict(),
            "thresholds": thresholds,
        }, stage="train")
        return {"rounds": trace.rounds, "best_iteration": trace.best_iteration,
                "synthetic_rows": resampled.summary()["synthetic_rows"]}

    def _load_models(self) -> Dict:
        models = {"gbdt": load_model(self.file_manager.path(MODEL_FILE), expected_kind="gbdt")}
        if self.file_manager.exists(LOGISTIC_FILE):
            models["logistic"] = load_model(self.file_manager.path(LOGISTIC_FILE), expected_kind="logistic")
        if self.file_manager.exists(FOREST_FILE):
            models["forest"] = load_model(self.file_manager.path(FOREST_FILE), expected_kind="forest")
        return models

    def evaluate(self) -> Dict:
        settings = self.config.evaluate
        indices = self._read_split("evaluate")
        raw = self._read_dataset(DATASET_FILE, SCHEMA_FILE, "evaluate")
        imputed = self._read_dataset(IMPUTED_FILE, IMPUTED_SCHEMA_FILE, "evaluate")
        models = self._load_models()
        recorded = self.file_manager.read_json(TRAIN_TRACE_FILE, stage="evaluate")["thresholds"]
        thresholds = {name: (float(recorded[name]["threshold"]), recorded[name]["source"]) for name in models}

        external = None
        if self.file_manager.exists(EXTERNAL_IMPUTED_FILE):
            external = self._read_dataset(EXTERNAL_IMPUTED_FILE, IMPUTED_SCHEMA_FILE, "evaluate")

        report = build_report(
            models, imputed.take(indices.test_rows), thresholds,
            n_boot=settings.n_boot, level=settings.level, seed=self.config.seed,
            stratified=settings.stratified_bootstrap, external=external,
            balance=(raw.take(indices.train_rows), raw.take(indices.test_rows)), cohort=raw,
            settings={"split": "stratified" if self.config.split.stratified else "random",
                      "leakage_mode": self.config.impute.leakage_mode, "knn_k": self.config.impute.k,
                      "n_boot": settings.n_boot, "level": settings.level,
                      "threshold_policy": settings.threshold_policy,
                      "bootstrap": "stratified percentile" if settings.stratified_bootstrap else "percentile"},
            threads=self.threads, logger=self.logger,
        )
        self.file_manager.write_text(REPORT_JSON_FILE, report.to_json(), stage="evaluate")
        self.file_manager.write_text(REPORT_TEXT_FILE, report.to_text(), stage="evaluate")
        for name, text in report.roc_exports().items():
            self.file_manager.write_text(name, text, stage="evaluate")
        summary = {f"auroc_{evaluation.name}": round(evaluation.interval.point, 4)
                   for evaluation in report.internal.models}
        if report.external is not None:
            summary["auroc_external_gbdt"] = round(report.model("gbdt", "external").interval.point, 4)
        return summary

    def explain(self) -> Dict:
        settings = self.config.explain
        indices = self._read_split("explain")
        imputed = self._read_dataset(IMPUTED_FILE, IMPUTED_SCHEMA_FILE, "explain")
        ensemble = load_model(self.file_manager.path(MODEL_FILE), expected_kind="gbdt")
        features = ensemble.feature_names
        test = imputed.take(indices.test_rows)
        summary = {}

        if settings.shap:
            importance = global_importance(ensemble, test)
            gap = importance.max_local_accuracy_gap()
            passed = gap < LOCAL_ACCURACY_TOLERANCE
            self.logger.log_validation_result("shap_local_accuracy", passed,
                                              {"message": f"max gap {gap:.3e}", "max_gap": gap})
            if not passed:
                raise NumericError(f"TreeSHAP local accuracy gap {gap:.3e} exceeds {LOCAL_ACCURACY_TOLERANCE}",
                                   stage="explain")
            self.file_manager.write_text("shap_importance.csv", importance.ranking_csv(), stage="explain")
            self.file_manager.write_text("shap_values.csv", importance.attribution_csv(), stage="explain")
            self.file_manager.write_text("shap_beeswarm.csv", importance.beeswarm_csv(), stage="explain")
            summary["top_feature"] = importance.ranking()[0][0]

        if settings.lime_rows:
            scales = imputed.take(indices.train_rows).matrix(features).std(axis=0)
            X_test = test.matrix(features)
            risk = predict_proba(ensemble, X_test)
            chosen = np.argsort(-risk, kind="stable")[:settings.lime_rows]
            for position, row in enumerate(chosen):
                row_id = test.row_ids[row]
                surrogate = lime_explain(
                    lambda samples: predict_proba(ensemble, samples), X_test[row], scales,
                    derive_rng(self.config.seed, LIME_KEY, position), n_samples=settings.lime_samples,
                    kernel_width=settings.kernel_width, top_k=settings.lime_top_k, feature_names=features,
                    seed=self.config.seed, row_id=row_id,
                )
                name = _safe_name(row_id)
                self.file_manager.write_text(f"lime_{name}.csv", surrogate.to_csv(), stage="explain")
                self.file_manager.write_text(f"lime_{name}.json", surrogate.metadata_json(), stage="explain")
            summary["lime_rows"] = int(len(chosen))
        return summary

    # Orchestration
    def run_stage(self, stage: str) -> int:
        """Run one stage; on failure remove what this pipeline wrote and return the exit code."""
        if stage not in STAGES:
            raise ValueError(f"Unknown stage: {stage}")
        self.processing_state["current_stage"] = stage
        timer = self.logger.start_timer(f"stage_{stage}")
        self.logger.log_stage_start(stage, {"output_dir": self.config.paths.output_dir})
        try:
            summary = getattr(self, stage)()
        except Exception as e:
            return self._fail(stage, as_pipeline_error(e, stage), timer)

        self.processing_state["completed_stages"].append(stage)
        self.logger.end_timer(timer)
        self.logger.log_stage_success(stage, summary)
        return 0

    def run(self, stages: Optional[List[str]] = None) -> int:
        """Stages in order; the first failure aborts and rolls back every artifact written by this run."""
        stages = list(stages or STAGES)
        self.logger.log_run_start(self.config.to_dict())
        self._log_decisions()
        for stage in stages:
            code = self.run_stage(stage)
            if code != 0:
                return code
        self.logger.log_run_finish(self.config.paths.output_dir, list(self.file_manager.written))
        return 0

    def _fail(self, stage: str, error: PipelineError, timer: str) -> int:
        self.logger.end_timer(timer)
        error_details = {
            "exception_type": type(error).__name__,
            "exception_message": str(error),
            "details": error.details,
            "processing_state": dict(self.processing_state),
        }
        self.processing_state["error"] = str(error)
        self.logger.log_stage_failure(stage, str(error), error.exit_code, error_details)
        self.file_manager.rollback(f"stage {stage} failed")
        return error.exit_code


def evaluate_saved_model(model_path: str, data_csv: str, schema_path: str, output_dir: str,
                         threshold: float = 0.5, n_boot: int = 1000, seed: int = 42, threads: int = 1,
                         logger=None) -> int:
    """Report fragment for one stored model on a labeled, complete CSV."""
    logger = logger or get_logger()
    file_manager = FileManager(output_dir, logger)
    try:
        model = load_model(model_path)
        data = ingest_csv(data_csv, load_schema(schema_path), logger=logger)
        report = build_report({"model": model}, data, {"model": (threshold, "fixed")}, n_boot=n_boot, seed=seed,
                              settings={"n_boot": n_boot, "threshold_policy": "fixed"}, threads=threads,
                              logger=logger)
        file_manager.write_text(REPORT_JSON_FILE, report.to_json(), stage="evaluate")
        file_manager.write_text(REPORT_TEXT_FILE, report.to_text(), stage="evaluate")
        for name, text in report.roc_exports().items():
            file_manager.write_text(name, text, stage="evaluate")
    except Exception as e:
        error = as_pipeline_error(e, "evaluate")
        logger.log_stage_failure("evaluate", str(error), error.exit_code, {"exception_type": type(e).__name__})
        file_manager.rollback("evaluate failed")
        return error.exit_code
    return 0


def generate_cohort_files(output_dir: str, spec: GeneratorSpec, external: bool = False, logger=None) -> Dict:
    """`synth` stage: the cohort, and optionally its shifted external companion, in one directory."""
    logger = logger or get_logger()
    file_manager = FileManager(output_dir, logger)
    try:
        written = {"cohort": write_synthetic_cohort(file_manager, spec, "cohort", logger)}
        if external:
            written["external"] = write_synthetic_cohort(file_manager, spec.external_variant(), "external",
                                                         logger)
    except Exception as e:
        error = as_pipeline_error(e, "synth")
        logger.log_stage_failure("synth", str(error), error.exit_code, {"exception_type": type(e).__name__})
        file_manager.rollback("synth failed")
        if error is e:
            raise
        raise error from e
    return written
