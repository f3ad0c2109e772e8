"""
Declarative run configuration.

A RunConfig is read from JSON, every section optional. Unknown keys are
rejected at every level, and the resolved form (all defaults filled in) is
written into the run's output directory.
"""

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Dict, List, Optional

from config.settings import DEFAULT_SEED, OUTPUT_DIR_OVERRIDE
from src.boosting import GridSpec, TrainConfig
from src.errors import ConfigError
from src.feature_selector import BoostingImportanceTrainer, LogisticImportanceTrainer
from src.imputer import LeakageMode, Thresholds
from src.oversampler import ResampleMethod

THRESHOLD_POLICIES = ("youden", "fixed")


def _reject_unknown(cls, entry: Dict, section: str):
    if not isinstance(entry, dict):
        raise ConfigError(f"Section '{section}' must be an object", stage="config")
    unknown = sorted(set(entry) - {f.name for f in fields(cls)})
    if unknown:
        raise ConfigError(f"Unknown key(s) in '{section}': {', '.join(unknown)}", stage="config",
                          details={"section": section, "keys": unknown})


def _flat_section(cls, entry: Optional[Dict], section: str):
    entry = entry or {}
    _reject_unknown(cls, entry, section)
    return cls(**entry)


@dataclass(frozen=True)
class PathsConfig:
    cohort_csv: str = ""
    schema: str = ""
    external_csv: Optional[str] = None
    output_dir: str = "output"


@dataclass(frozen=True)
class SplitConfig:
    fraction: float = 0.75
    stratified: bool = True


@dataclass(frozen=True)
class ImputeConfig:
    low: float = 0.20
    high: float = 0.50
    cat_high: float = 0.20
    k: int = 5
    leakage_mode: str = LeakageMode.TRAIN.value

    def thresholds(self) -> Thresholds:
        return Thresholds(low=self.low, high=self.high, cat_high=self.cat_high)


@dataclass(frozen=True)
class SelectConfig:
    enabled: bool = True
    vif_threshold: float = 10.0
    rfe_target: Optional[int] = 21
    rfe_step: int = 1
    rfe_estimator: str = BoostingImportanceTrainer.name
    overrides: List[str] = field(default_factory=lambda: ["PO2", "Serum Calcium", "RDW"])


@dataclass(frozen=True)
class ResampleConfig:
    method: str = ResampleMethod.SMOTE.value
    k: int = 5


@dataclass(frozen=True)
class ModelConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    grid: Optional[GridSpec] = None
    # Stratified share of the training rows held out for early stopping.
    early_stopping_fraction: float = 0.1
    baselines: bool = True
    logistic_l2: float = 1.0
    forest_trees: int = 100
    forest_max_depth: int = 10

    def to_dict(self) -> Dict:
        return {
            "train": self.train.to_dict(),
            "grid": None if self.grid is None else self.grid.to_dict(),
            "early_stopping_fraction": self.early_stopping_fraction,
            "baselines": self.baselines,
            "logistic_l2": self.logistic_l2,
            "forest_trees": self.forest_trees,
            "forest_max_depth": self.forest_max_depth,
        }

    @classmethod
    def from_dict(cls, entry: Optional[Dict]) -> "ModelConfig":
        entry = dict(entry or {})
        _reject_unknown(cls, entry, "model")
        if "train" in entry:
            entry["train"] = TrainConfig.from_dict(entry["train"])
        if entry.get("grid") is not None:
            entry["grid"] = GridSpec.from_dict(entry["grid"])
        return cls(**entry)


@dataclass(frozen=True)
class EvaluateConfig:
    n_boot: int = 1000
    level: float = 0.95
    stratified_bootstrap: bool = True
    threshold_policy: str = "youden"
    fixed_threshold: float = 0.5


@dataclass(frozen=True)
class ExplainConfig:
    shap: bool = True
    lime_rows: int = 3
    lime_samples: int = 5000
    lime_top_k: int = 10
    kernel_width: Optional[float] = None


@dataclass(frozen=True)
class RunConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    seed: int = DEFAULT_SEED
    split: SplitConfig = field(default_factory=SplitConfig)
    impute: ImputeConfig = field(default_factory=ImputeConfig)
    select: SelectConfig = field(default_factory=SelectConfig)
    resample: ResampleConfig = field(default_factory=ResampleConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    evaluate: EvaluateConfig = field(default_factory=EvaluateConfig)
    explain: ExplainConfig = field(default_factory=ExplainConfig)

    @classmethod
    def from_dict(cls, entry: Optional[Dict]) -> "RunConfig":
        entry = entry or {}
        _reject_unknown(cls, entry, "config")
        try:
            config = cls(
                paths=_flat_section(PathsConfig, entry.get("paths"), "paths"),
                seed=int(entry.get("seed", DEFAULT_SEED)),
                split=_flat_section(SplitConfig, entry.get("split"), "split"),
                impute=_flat_section(ImputeConfig, entry.get("impute"), "impute"),
                select=_flat_section(SelectConfig, entry.get("select"), "select"),
                resample=_flat_section(ResampleConfig, entry.get("resample"), "resample"),
                model=ModelConfig.from_dict(entry.get("model")),
                evaluate=_flat_section(EvaluateConfig, entry.get("evaluate"), "evaluate"),
                explain=_flat_section(ExplainConfig, entry.get("explain"), "explain"),
            )
        except (TypeError, ValueError, AttributeError) as e:
            raise ConfigError(f"Malformed run configuration: {type(e).__name__}: {e}", stage="config")
        return config.resolved()

    def resolved(self) -> "RunConfig":
        """Propagate the run seed into the model sections and apply the output-dir override."""
        train = replace(self.model.train, seed=self.seed)
        grid = None
        if self.model.grid is not None:
            grid = replace(self.model.grid, base=replace(self.model.grid.base, seed=self.seed))
        paths = self.paths
        if OUTPUT_DIR_OVERRIDE:
            paths = replace(paths, output_dir=OUTPUT_DIR_OVERRIDE)
        return replace(self, paths=paths, model=replace(self.model, train=train, grid=grid))

    def with_paths(self, **changes) -> "RunConfig":
        return replace(self, paths=replace(self.paths, **changes))

    def validate(self, check_paths: bool = True) -> "RunConfig":
        try:
            return self._checked(check_paths)
        except TypeError as e:
            raise ConfigError(f"Wrongly typed run configuration value: {e}", stage="config")

    def _checked(self, check_paths: bool) -> "RunConfig":
        problems = []
        if check_paths:
            for label, path in (("cohort_csv", self.paths.cohort_csv), ("schema", self.paths.schema),
                                ("external_csv", self.paths.external_csv)):
                if label == "external_csv" and not path:
                    continue
                if not path:
                    problems.append(f"paths.{label} is not set")
                elif not os.path.exists(path):
                    problems.append(f"paths.{label} does not exist: {path}")
        if not self.paths.output_dir:
            problems.append("paths.output_dir is not set")
        if not 0 < self.split.fraction < 1:
            problems.append(f"split.fraction={self.split.fraction} outside (0, 1)")
        if self.impute.k < 1:
            problems.append(f"impute.k={self.impute.k} < 1")
        if self.impute.leakage_mode not in [mode.value for mode in LeakageMode]:
            problems.append(f"impute.leakage_mode={self.impute.leakage_mode}")
        if self.select.vif_threshold <= 1:
            problems.append(f"select.vif_threshold={self.select.vif_threshold} <= 1")
        if self.select.rfe_target is not None and self.select.rfe_target < 1:
            problems.append(f"select.rfe_target={self.select.rfe_target} < 1")
        if self.select.rfe_step < 1:
            problems.append(f"select.rfe_step={self.select.rfe_step} < 1")
        if self.select.rfe_estimator not in (BoostingImportanceTrainer.name, LogisticImportanceTrainer.name):
            problems.append(f"select.rfe_estimator={self.select.rfe_estimator}")
        if self.resample.method not in [method.value for method in ResampleMethod]:
            problems.append(f"resample.method={self.resample.method}")
        if self.resample.k < 1:
            problems.append(f"resample.k={self.resample.k} < 1")
        if not 0 < self.model.early_stopping_fraction < 1:
            problems.append(f"model.early_stopping_fraction={self.model.early_stopping_fraction} outside (0, 1)")
        if self.model.forest_trees < 1 or self.model.forest_max_depth < 1:
            problems.append("model.forest_trees and model.forest_max_depth must be >= 1")
        if self.evaluate.n_boot < 1:
            problems.append(f"evaluate.n_boot={self.evaluate.n_boot} < 1")
        if not 0 < self.evaluate.level < 1:
            problems.append(f"evaluate.level={self.evaluate.level} outside (0, 1)")
        if self.evaluate.threshold_policy not in THRESHOLD_POLICIES:
            problems.append(f"evaluate.threshold_policy={self.evaluate.threshold_policy}")
        if self.explain.lime_rows < 0 or self.explain.lime_samples < 2 or self.explain.lime_top_k < 1:
            problems.append("explain.lime_rows >= 0, lime_samples >= 2 and lime_top_k >= 1 are required")
        if self.explain.kernel_width is not None and self.explain.kernel_width <= 0:
            problems.append(f"explain.kernel_width={self.explain.kernel_width} <= 0")

        if problems:
            raise ConfigError(f"Invalid run configuration: {'; '.join(problems)}", stage="config",
                              details={"problems": problems})

        self.impute.thresholds().validate()
        self.model.train.validate()
        if self.model.grid is not None:
            self.model.grid.validate()
        return self

    def to_dict(self) -> Dict:
        return {
            "paths": asdict(self.paths),
            "seed": self.seed,
            "split": asdict(self.split),
            "impute": asdict(self.impute),
            "select": asdict(self.select),
            "resample": asdict(self.resample),
            "model": self.model.to_dict(),
            "evaluate": asdict(self.evaluate),
            "explain": asdict(self.explain),
        }


def load_run_config(path: Optional[str]) -> RunConfig:
    """RunConfig from a JSON file; None gives the defaults."""
    if path is None:
        return RunConfig().resolved()
    try:
        with open(path, "r", encoding="utf-8") as f:
            entry = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"Config file not found: {path}", stage="config")
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config file {path} is not valid JSON: {e}", stage="config")
    return RunConfig.from_dict(entry)
