"""
Synthetic SA-AKI cohort generator.

Features are drawn from class-conditional Gaussians whose means are the published
survivor / non-survivor group means. The published brackets are read as central
95% ranges, so a group's spread is (upper - lower) / 3.92, widened by
`spread_scale`. Shared latent factors add collinearity inside a few feature groups
(severity scores with lactate, the two urine-output measures). Physical floors are
applied after drawing and MCAR masking is applied last.

The manifest records every draw parameter; `GeneratorSpec.from_manifest` rebuilds
the generator spec so the same cohort can be regenerated.
"""

from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.stats import multivariate_normal

from src.core import Dataset, FeatureCategory, FeatureDescriptor, FeatureKind, derive_rng
from src.errors import ConfigError
from src.evaluation import auroc
from src.logger import get_logger

GENERATOR_VERSION = 1
BRACKET_WIDTH_IN_SD = 3.92
ROW_ID_PREFIX = "pt-"

# Stream keys under the generator seed.
_LABEL_STREAM = 0
_FEATURE_STREAM = 1
_MISSING_STREAM = 2
_BAYES_STREAM = 3
_EXTRA_STREAM = 4


@dataclass(frozen=True)
class FeatureCalibration:
    name: str
    unit: str
    category: str
    # (mean, lower, upper) for survivors (label 0) and non-survivors (label 1).
    survivor: Tuple[float, float, float]
    non_survivor: Tuple[float, float, float]
    floor: Optional[float] = 0.0
    ceiling: Optional[float] = None

    def spread(self, label: int) -> float:
        _, lower, upper = self.survivor if label == 0 else self.non_survivor
        return (upper - lower) / BRACKET_WIDTH_IN_SD

    def mean(self, label: int) -> float:
        return (self.survivor if label == 0 else self.non_survivor)[0]


_DEMOGRAPHIC = FeatureCategory.DEMOGRAPHIC.value
_SEVERITY = FeatureCategory.SEVERITY.value
_LABORATORY = FeatureCategory.LABORATORY.value
_PHYSIOLOGICAL = FeatureCategory.PHYSIOLOGICAL.value

# Group statistics of the 24 final predictors, survivors vs non-survivors.
CALIBRATION: Tuple[FeatureCalibration, ...] = (
    FeatureCalibration("Length of Stay", "days", _DEMOGRAPHIC, (6.706, 2.059, 26.913), (7.931, 2.078, 27.185)),
    FeatureCalibration("APSIII", "points", _SEVERITY, (58.301, 29.0, 105.0), (75.661, 37.0, 130.0)),
    FeatureCalibration("SAPSII", "points", _SEVERITY, (45.088, 22.0, 75.0), (55.223, 29.475, 89.525)),
    FeatureCalibration("SOFA", "points", _SEVERITY, (5.522, 1.871, 11.322), (8.947, 3.207, 15.788)),
    FeatureCalibration("GCS", "points", _SEVERITY, (14.456, 11.847, 15.0), (14.101, 10.607, 15.0),
                       floor=3.0, ceiling=15.0),
    FeatureCalibration("PO2", "mmHg", _LABORATORY, (114.979, 35.0, 253.008), (103.084, 39.325, 187.279)),
    FeatureCalibration("PaO2_FiO2_Ratio", "mmHg", _LABORATORY, (229.696, 78.317, 429.14),
                       (208.439, 64.916, 424.666)),
    FeatureCalibration("Serum Calcium", "mmol/L", _LABORATORY, (1.128, 0.983, 1.278), (1.105, 0.949, 1.26)),
    FeatureCalibration("Serum Lactate", "mmol/L", _LABORATORY, (2.009, 0.8, 4.795), (3.564, 0.937, 11.3)),
    FeatureCalibration("AnionGap", "mEq/L", _LABORATORY, (15.016, 9.549, 22.5), (17.640, 10.948, 27.302)),
    FeatureCalibration("Creatinine", "mg/dL", _LABORATORY, (2.580, 1.0, 7.85), (2.584, 1.097, 6.214)),
    FeatureCalibration("Glucose", "mg/dL", _LABORATORY, (144.891, 88.8, 257.251), (155.858, 85.023, 271.679)),
    FeatureCalibration("Potassium", "mEq/L", _LABORATORY, (4.246, 3.462, 5.301), (4.393, 3.542, 5.644)),
    FeatureCalibration("PTT", "s", _LABORATORY, (40.330, 24.175, 83.2), (50.658, 24.9, 103.466)),
    FeatureCalibration("Platelet", "K/uL", _LABORATORY, (182.587, 40.499, 410.34), (160.818, 29.879, 388.287)),
    FeatureCalibration("RDW", "%", _LABORATORY, (15.904, 12.72, 21.8), (17.115, 13.133, 24.31)),
    FeatureCalibration("WBC", "K/uL", _LABORATORY, (12.567, 4.299, 27.419), (16.170, 3.895, 37.464)),
    FeatureCalibration("Lymphocytes", "%", _LABORATORY, (10.969, 2.183, 26.953), (9.485, 1.2, 28.764)),
    FeatureCalibration("Total_UrineOutput", "mL", _PHYSIOLOGICAL, (10826.957, 100.0, 51044.1),
                       (7120.166, 15.0, 36519.725)),
    FeatureCalibration("Avg_UrineOutput", "mL/h", _PHYSIOLOGICAL, (136.456, 8.826, 406.184),
                       (75.908, 1.772, 249.253)),
    FeatureCalibration("Heart_Rate", "bpm", _PHYSIOLOGICAL, (84.748, 60.966, 113.159), (91.124, 63.428, 119.572)),
    FeatureCalibration("Resp_Rate", "breaths/min", _PHYSIOLOGICAL, (19.679, 14.002, 26.582),
                       (21.972, 14.810, 30.618)),
    FeatureCalibration("Temperature", "C", _PHYSIOLOGICAL, (36.853, 36.088, 37.706), (36.774, 35.496, 37.975),
                       floor=None),
    FeatureCalibration("SpO2", "%", _PHYSIOLOGICAL, (96.617, 93.269, 99.326), (95.982, 90.488, 99.255),
                       ceiling=100.0),
)

FINAL_FEATURES: Tuple[str, ...] = tuple(entry.name for entry in CALIBRATION)


@dataclass(frozen=True)
class FactorLoading:
    """A shared standard-normal factor entering every listed feature with the same loading."""
    name: str
    features: Tuple[str, ...]
    loading: float

    def to_dict(self) -> Dict:
        return {"name": self.name, "features": list(self.features), "loading": self.loading}

    @classmethod
    def from_dict(cls, entry: Dict) -> "FactorLoading":
        return cls(name=entry["name"], features=tuple(entry["features"]), loading=float(entry["loading"]))


DEFAULT_FACTORS: Tuple[FactorLoading, ...] = (
    FactorLoading("severity", ("SOFA", "APSIII", "SAPSII", "Serum Lactate"), 0.6),
    FactorLoading("urine_output", ("Avg_UrineOutput", "Total_UrineOutput"), 0.8),
)

# Bands chosen so the default cohort exercises mean fills, KNN fills and complete columns.
DEFAULT_MISSINGNESS: Dict[str, float] = {
    "Length of Stay": 0.0,
    "APSIII": 0.0,
    "SAPSII": 0.0,
    "SOFA": 0.0,
    "GCS": 0.02,
    "PO2": 0.24,
    "PaO2_FiO2_Ratio": 0.28,
    "Serum Calcium": 0.32,
    "Serum Lactate": 0.22,
    "AnionGap": 0.03,
    "Creatinine": 0.01,
    "Glucose": 0.01,
    "Potassium": 0.01,
    "PTT": 0.12,
    "Platelet": 0.02,
    "RDW": 0.03,
    "WBC": 0.02,
    "Lymphocytes": 0.15,
    "Total_UrineOutput": 0.05,
    "Avg_UrineOutput": 0.05,
    "Heart_Rate": 0.0,
    "Resp_Rate": 0.0,
    "Temperature": 0.01,
    "SpO2": 0.0,
}


@dataclass(frozen=True)
class ExtraCandidate:
    """A non-final candidate column, uninformative about the label."""
    name: str
    unit: Optional[str]
    missing_rate: float
    mean: float = 0.0
    sd: float = 1.0
    floor: Optional[float] = None
    # Numeric near-duplicate of another feature (noise sd as a fraction of the source spread).
    duplicate_of: Optional[str] = None
    duplicate_noise: float = 0.05
    # Categorical levels with their probabilities; empty for numeric candidates.
    levels: Tuple[str, ...] = ()
    level_probabilities: Tuple[float, ...] = ()

    @property
    def kind(self) -> FeatureKind:
        return FeatureKind.CATEGORICAL if self.levels else FeatureKind.NUMERIC


EXTRA_CANDIDATES: Tuple[ExtraCandidate, ...] = (
    ExtraCandidate("Creatinine_Baseline", "mg/dL", 0.01, floor=0.0, duplicate_of="Creatinine"),
    ExtraCandidate("Age", "years", 0.0, mean=66.0, sd=15.0, floor=18.0),
    ExtraCandidate("Chloride", "mEq/L", 0.62, mean=104.0, sd=6.0, floor=0.0),
    ExtraCandidate("Monocytes", "%", 0.10, mean=6.0, sd=3.0, floor=0.0),
    ExtraCandidate("Gender", None, 0.35, levels=("F", "M"), level_probabilities=(0.44, 0.56)),
)


@dataclass(frozen=True)
class GeneratorSpec:
    n: int = 9474
    prevalence: float = 0.162
    seed: int = 42
    missingness: Dict[str, float] = field(default_factory=lambda: dict(DEFAULT_MISSINGNESS))
    factors: Tuple[FactorLoading, ...] = DEFAULT_FACTORS
    correlation: bool = True
    spread_scale: float = 1.5
    # 1.0 keeps the published class separation; below 1 pulls both class means toward their midpoint.
    separation_scale: float = 1.0
    # Added to every mean, in units of the feature's pooled spread.
    location_shift: float = 0.0
    apply_floors: bool = True
    extra_candidates: bool = False
    bayes_sample_size: int = 20000

    def validate(self):
        if self.n < 1:
            raise ConfigError(f"Cohort size must be >= 1, got {self.n}", stage="synth")
        if not 0.0 < self.prevalence < 1.0:
            raise ConfigError(f"Prevalence must lie in (0, 1), got {self.prevalence}", stage="synth")
        if not self.spread_scale > 0.0:
            raise ConfigError(f"spread_scale must be > 0, got {self.spread_scale}", stage="synth")
        for entry in CALIBRATION:
            for label in (0, 1):
                if not entry.spread(label) > 0.0:
                    raise ConfigError(f"Non-positive spread for {entry.name}", stage="synth")
        known = set(FINAL_FEATURES) | {extra.name for extra in EXTRA_CANDIDATES}
        for name, rate in self.missingness.items():
            if name not in known:
                raise ConfigError(f"Missingness given for unknown feature {name}", stage="synth")
            if not 0.0 <= rate < 1.0:
                raise ConfigError(f"Missingness for {name} must lie in [0, 1), got {rate}", stage="synth")
        seen = set()
        for factor in self.factors:
            if not 0.0 <= factor.loading < 1.0:
                raise ConfigError(f"Loading of factor {factor.name} must lie in [0, 1)", stage="synth")
            for name in factor.features:
                if name not in FINAL_FEATURES:
                    raise ConfigError(f"Factor {factor.name} names unknown feature {name}", stage="synth")
                if name in seen:
                    raise ConfigError(f"{name} loads on more than one factor", stage="synth")
                seen.add(name)
        if self.bayes_sample_size < 2:
            raise ConfigError("bayes_sample_size must be >= 2", stage="synth")

    def missing_rate(self, name: str) -> float:
        if name in self.missingness:
            return self.missingness[name]
        for extra in EXTRA_CANDIDATES:
            if extra.name == name:
                return extra.missing_rate
        return 0.0

    def external_variant(self, n: int = 8547, seed_offset: int = 1) -> "GeneratorSpec":
        """Domain-shifted companion cohort: weaker class separation and moved locations."""
        return replace(self, n=n, seed=self.seed + seed_offset, separation_scale=0.6, location_shift=0.25)

    def to_dict(self) -> Dict:
        entry = asdict(self)
        entry["factors"] = [factor.to_dict() for factor in self.factors]
        return entry

    @classmethod
    def from_dict(cls, entry: Dict) -> "GeneratorSpec":
        entry = dict(entry)
        unknown = set(entry) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"Unknown generator setting(s): {', '.join(sorted(unknown))}", stage="synth")
        if "factors" in entry:
            entry["factors"] = tuple(FactorLoading.from_dict(factor) for factor in entry["factors"])
        if "missingness" in entry:
            entry["missingness"] = {name: float(rate) for name, rate in entry["missingness"].items()}
        return cls(**entry)

    @classmethod
    def from_manifest(cls, manifest: Dict) -> "GeneratorSpec":
        return cls.from_dict(manifest["spec"])


@dataclass(frozen=True)
class ClassParameters:
    """Per-feature location and spread of each class, after separation and shift."""
    means: np.ndarray       # (2, n_features)
    spreads: np.ndarray     # (2, n_features)
    loadings: np.ndarray    # (n_features,)
    factor_index: np.ndarray  # (n_features,), -1 when no factor

    def correlation(self) -> np.ndarray:
        n_features = self.loadings.size
        matrix = np.eye(n_features)
        for j in range(n_features):
            for k in range(n_features):
                if j != k and self.factor_index[j] >= 0 and self.factor_index[j] == self.factor_index[k]:
                    matrix[j, k] = self.loadings[j] * self.loadings[k]
        return matrix

    def covariance(self, label: int) -> np.ndarray:
        spread = self.spreads[label]
        return self.correlation() * np.outer(spread, spread)


def class_parameters(spec: GeneratorSpec) -> ClassParameters:
    means = np.array([[entry.mean(label) for entry in CALIBRATION] for label in (0, 1)])
    spreads = np.array([[entry.spread(label) for entry in CALIBRATION] for label in (0, 1)]) * spec.spread_scale

    midpoint = means.mean(axis=0)
    means = midpoint + spec.separation_scale * (means - midpoint)
    pooled = np.sqrt((spreads[0] ** 2 + spreads[1] ** 2) / 2.0)
    means = means + spec.location_shift * pooled

    loadings = np.zeros(len(CALIBRATION))
    factor_index = np.full(len(CALIBRATION), -1, dtype=np.int64)
    if spec.correlation:
        for index, factor in enumerate(spec.factors):
            for name in factor.features:
                position = FINAL_FEATURES.index(name)
                loadings[position] = factor.loading
                factor_index[position] = index
    return ClassParameters(means=means, spreads=spreads, loadings=loadings, factor_index=factor_index)


def _draw_latent(params: ClassParameters, labels: np.ndarray, n_factors: int,
                 rng: np.random.Generator) -> np.ndarray:
    """Unfloored class-conditional draws, one row per label."""
    n_rows = labels.size
    n_features = params.loadings.size
    factors = rng.standard_normal((n_rows, max(n_factors, 1)))
    noise = rng.standard_normal((n_rows, n_features))

    standard = noise.copy()
    loaded = params.factor_index >= 0
    if loaded.any():
        shared = factors[:, params.factor_index[loaded]]
        lam = params.loadings[loaded]
        standard[:, loaded] = lam * shared + np.sqrt(1.0 - lam ** 2) * noise[:, loaded]

    label_index = labels.astype(np.int64)
    return params.means[label_index] + params.spreads[label_index] * standard


def _apply_floors(values: np.ndarray) -> np.ndarray:
    values = values.copy()
    for j, entry in enumerate(CALIBRATION):
        if entry.floor is not None or entry.ceiling is not None:
            values[:, j] = np.clip(values[:, j], entry.floor, entry.ceiling)
    return values


def bayes_auroc(spec: GeneratorSpec, params: Optional[ClassParameters] = None) -> float:
    """
    AUROC of the likelihood-ratio score of the two latent Gaussians, estimated on an
    independent sample. Floors and masking are ignored, so this is an upper
    reference for models trained on the generated data.
    """
    params = params or class_parameters(spec)
    rng = derive_rng(spec.seed, _BAYES_STREAM)
    labels = (rng.random(spec.bayes_sample_size) < spec.prevalence).astype(np.int8)
    if labels.min() == labels.max():
        labels[0] = 1 - labels[0]
    sample = _draw_latent(params, labels, len(spec.factors), rng)
    score = (multivariate_normal(params.means[1], params.covariance(1)).logpdf(sample)
             - multivariate_normal(params.means[0], params.covariance(0)).logpdf(sample))
    return auroc(score, labels)


def _draw_extras(spec: GeneratorSpec, core_values: np.ndarray, params: ClassParameters,
                 n_rows: int) -> Tuple[List[FeatureDescriptor], np.ndarray]:
    rng = derive_rng(spec.seed, _EXTRA_STREAM)
    descriptors, columns = [], []
    for extra in EXTRA_CANDIDATES:
        if extra.kind == FeatureKind.CATEGORICAL:
            column = rng.choice(len(extra.levels), size=n_rows, p=np.asarray(extra.level_probabilities))
            column = column.astype(np.float64)
            descriptors.append(FeatureDescriptor(name=extra.name, kind=FeatureKind.CATEGORICAL,
                                                 category=_DEMOGRAPHIC, levels=extra.levels))
        else:
            if extra.duplicate_of is not None:
                source = FINAL_FEATURES.index(extra.duplicate_of)
                noise_sd = extra.duplicate_noise * float(params.spreads[:, source].mean())
                column = core_values[:, source] + noise_sd * rng.standard_normal(n_rows)
            else:
                column = extra.mean + extra.sd * rng.standard_normal(n_rows)
            if spec.apply_floors and extra.floor is not None:
                column = np.maximum(column, extra.floor)
            descriptors.append(FeatureDescriptor(name=extra.name, unit=extra.unit,
                                                 category=FeatureCategory.OTHER.value))
        columns.append(column)
    return descriptors, np.column_stack(columns)


def generate(spec: GeneratorSpec = GeneratorSpec(), logger=None) -> Tuple[Dataset, Dict]:
    """
    Draw a labeled cohort and its ground-truth manifest.
    Labels are Bernoulli(prevalence); each purpose (labels, features, masks,
    extras) has its own seeded stream.
    """
    logger = logger or get_logger()
    spec.validate()
    params = class_parameters(spec)

    label_rng = derive_rng(spec.seed, _LABEL_STREAM)
    labels = (label_rng.random(spec.n) < spec.prevalence).astype(np.int8)

    latent = _draw_latent(params, labels, len(spec.factors), derive_rng(spec.seed, _FEATURE_STREAM))
    values = _apply_floors(latent) if spec.apply_floors else latent

    descriptors = [FeatureDescriptor(name=entry.name, unit=entry.unit, category=entry.category)
                   for entry in CALIBRATION]
    if spec.extra_candidates:
        extra_descriptors, extra_values = _draw_extras(spec, values, params, spec.n)
        descriptors.extend(extra_descriptors)
        values = np.hstack([values, extra_values])

    # MCAR, one uniform per cell, masked last. Extras draw from a child stream so the
    # final-feature cohort does not depend on whether extras are requested.
    uniforms = derive_rng(spec.seed, _MISSING_STREAM).random((spec.n, len(CALIBRATION)))
    if spec.extra_candidates:
        extra_uniforms = derive_rng(spec.seed, _MISSING_STREAM, 1).random((spec.n, len(EXTRA_CANDIDATES)))
        uniforms = np.hstack([uniforms, extra_uniforms])
    rates = np.array([spec.missing_rate(descriptor.name) for descriptor in descriptors])
    mask = uniforms < rates

    dataset = Dataset(
        schema=tuple(descriptors),
        values=np.where(mask, 0.0, values),
        missing_mask=mask,
        labels=labels,
        row_ids=tuple(f"{ROW_ID_PREFIX}{row + 1:06d}" for row in range(spec.n)),
    )

    bayes = bayes_auroc(spec, params)
    manifest = {
        "generator_version": GENERATOR_VERSION,
        "spec": spec.to_dict(),
        "bracket_convention": f"published brackets read as central 95% ranges; "
                              f"spread = (upper - lower) / {BRACKET_WIDTH_IN_SD} * spread_scale",
        "rows": spec.n,
        "positives": int(labels.sum()),
        "negatives": int(spec.n - labels.sum()),
        "features": [
            {
                "name": entry.name,
                "unit": entry.unit,
                "category": entry.category,
                "mean": [float(params.means[0, j]), float(params.means[1, j])],
                "spread": [float(params.spreads[0, j]), float(params.spreads[1, j])],
                "loading": float(params.loadings[j]),
                "factor": (spec.factors[params.factor_index[j]].name if params.factor_index[j] >= 0 else None),
                "floor": entry.floor if spec.apply_floors else None,
                "ceiling": entry.ceiling if spec.apply_floors else None,
                "missing_rate": spec.missing_rate(entry.name),
                "observed_missing_fraction": float(mask[:, j].mean()),
            }
            for j, entry in enumerate(CALIBRATION)
        ],
        "extra_candidates": [
            {"name": extra.name, "kind": extra.kind.value, "missing_rate": spec.missing_rate(extra.name),
             "duplicate_of": extra.duplicate_of}
            for extra in EXTRA_CANDIDATES
        ] if spec.extra_candidates else [],
        "bayes_auroc": bayes,
    }

    logger.info(f"[SYNTH] {spec.n} rows, {manifest['positives']} positives, "
                f"{dataset.n_features} features, latent Bayes AUROC {bayes:.3f}")
    return dataset, manifest
