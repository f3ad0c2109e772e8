#!/usr/bin/env python3
"""
SA-AKI Mortality Risk Pipeline
Command-line entry point: the full `run` plus one subcommand per stage.
"""

import argparse
import sys

from config.settings import (BUNDLED_COHORT_PREVALENCE, BUNDLED_COHORT_ROWS, DEFAULT_SEED, DEFAULT_THREADS,
                             LOG_LEVEL, MODEL_FORMAT_VERSION, TOOLKIT_VERSION, validate_config)
from src.cohort_generator import GeneratorSpec
from src.errors import ConfigError, PipelineError, as_pipeline_error
from src.file_manager import FileManager
from src.logger import PipelineLogger
from src.processing_pipeline import (STAGES, ProcessingPipeline, evaluate_saved_model, generate_cohort_files,
                                     write_synthetic_cohort)
from src.run_config import load_run_config

# Stages whose inputs come from the configured paths rather than the work directory.
PATH_STAGES = ("run", "ingest", "impute")


def build_parser():
    parser = argparse.ArgumentParser(prog="main.py", description="SA-AKI mortality risk modeling pipeline")
    parser.add_argument("--version", action="version",
                        version=f"risk-pipeline {TOOLKIT_VERSION} (model format {MODEL_FORMAT_VERSION})")
    subparsers = parser.add_subparsers(dest="command", required=True)

    run = subparsers.add_parser("run", help="Run every stage in order")
    _add_common(run)
    run.add_argument("--synthetic", action="store_true",
                     help="Generate the bundled synthetic cohort and its external companion into the output dir")

    synth = subparsers.add_parser("synth", help="Write a synthetic cohort, schema and manifest")
    synth.add_argument("--n", type=int, default=BUNDLED_COHORT_ROWS)
    synth.add_argument("--seed", type=int, default=DEFAULT_SEED)
    synth.add_argument("--prevalence", type=float, default=BUNDLED_COHORT_PREVALENCE)
    synth.add_argument("--out", default="data", help="Directory for cohort.csv, cohort_schema.json, ...")
    synth.add_argument("--external", action="store_true", help="Also write a domain-shifted external cohort")
    synth.add_argument("--extra-candidates", action="store_true",
                       help="Add non-final candidate columns (near-duplicate, noise, categorical)")
    synth.add_argument("--no-floors", action="store_true", help="Skip physical floors and ceilings")

    for stage in STAGES:
        stage_parser = subparsers.add_parser(stage, help=f"Run the {stage} stage against the work directory")
        _add_common(stage_parser)
        if stage == "evaluate":
            stage_parser.add_argument("--model", help="Evaluate one stored model instead of the work directory")
            stage_parser.add_argument("--data", help="Labeled, complete CSV for --model")
            stage_parser.add_argument("--schema", help="Schema JSON for --data")
            stage_parser.add_argument("--threshold", type=float, default=0.5)
    return parser


def _add_common(parser):
    parser.add_argument("--config", help="RunConfig JSON; defaults are used for anything omitted")
    parser.add_argument("--output", help="Output / work directory (overrides paths.output_dir)")
    parser.add_argument("--threads", type=int, default=DEFAULT_THREADS, help="Worker cap; results do not depend on it")


def _synth(args, logger) -> int:
    spec = GeneratorSpec(n=args.n, seed=args.seed, prevalence=args.prevalence,
                         extra_candidates=args.extra_candidates, apply_floors=not args.no_floors)
    generate_cohort_files(args.out, spec, external=args.external, logger=logger)
    print(f"Synthetic cohort written to {args.out}")
    return 0


def _pipeline_command(args, logger) -> int:
    if args.threads < 1:
        raise ConfigError(f"--threads must be >= 1, got {args.threads}", stage="config")
    config = load_run_config(args.config)
    if args.output:
        config = config.with_paths(output_dir=args.output)

    if args.command == "evaluate" and args.model:
        if not (args.data and args.schema):
            raise ConfigError("evaluate --model needs --data and --schema", stage="config")
        return evaluate_saved_model(args.model, args.data, args.schema, config.paths.output_dir,
                                    threshold=args.threshold, n_boot=config.evaluate.n_boot, seed=config.seed,
                                    threads=args.threads, logger=logger)

    file_manager = FileManager(config.paths.output_dir, logger)
    if args.command == "run" and args.synthetic:
        spec = GeneratorSpec(seed=config.seed)
        try:
            cohort = write_synthetic_cohort(file_manager, spec, "cohort", logger)
            external = write_synthetic_cohort(file_manager, spec.external_variant(), "external", logger)
        except Exception:
            file_manager.rollback("synthetic cohort failed")
            raise
        config = config.with_paths(cohort_csv=cohort["csv"], schema=cohort["schema"],
                                   external_csv=config.paths.external_csv or external["csv"])

    try:
        config.validate(check_paths=args.command in PATH_STAGES)
    except ConfigError:
        file_manager.rollback("invalid configuration")
        raise

    pipeline = ProcessingPipeline(config, threads=args.threads, logger=logger, file_manager=file_manager)
    code = pipeline.run() if args.command == "run" else pipeline.run_stage(args.command)
    if code != 0:
        print(f"Error: {pipeline.processing_state['error']}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        validate_config()
        logger = PipelineLogger(LOG_LEVEL)
        if args.command == "synth":
            return _synth(args, logger)
        return _pipeline_command(args, logger)
    except PipelineError as e:
        print(f"Error: {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        error = as_pipeline_error(e, args.command)
        print(f"Error: {error}", file=sys.stderr)
        return error.exit_code


if __name__ == "__main__":
    sys.exit(main())
