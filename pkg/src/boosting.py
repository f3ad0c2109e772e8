"""
Second-order gradient-boosted trees for the binary logistic objective.

Each round fits one regression tree to the gradients g = p - y and hessians
h = p(1 - p) of the logloss at the current margin. The learning rate is folded
into the stored leaf weights so the margin is base_margin plus the plain sum of
leaf values, which keeps tree attributions additive.
"""

import itertools
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from scipy.special import expit, logit
from sklearn.model_selection import StratifiedKFold

from src.core import Dataset, derive_rng
from src.errors import ConfigError, DataError, SchemaMismatchError, SingleClassError
from src.evaluation import auroc
from src.logger import get_logger
from src.tree_grower import GrowthParams, RegressionTree, TreeGrower

LOGLOSS_CLIP = 1e-15


@dataclass(frozen=True)
class EarlyStopping:
    patience: int = 10
    min_delta: float = 1e-4
    keep_best: bool = True


@dataclass(frozen=True)
class TrainConfig:
    eta: float = 0.025
    max_depth: int = 7
    n_estimators: int = 1000
    subsample: float = 0.8
    colsample_bytree: float = 0.8
    reg_alpha: float = 0.05
    reg_lambda: float = 0.08
    objective: str = "binary:logistic"
    eval_metric: str = "logloss"
    early_stopping: EarlyStopping = field(default_factory=EarlyStopping)
    min_child_weight: float = 1.0
    gamma: float = 0.0
    base_score: float = 0.5
    base_score_from_prevalence: bool = False
    seed: int = 42

    def validate(self):
        problems = []
        if not 0 < self.eta <= 1:
            problems.append(f"eta={self.eta} outside (0, 1]")
        if self.max_depth < 1:
            problems.append(f"max_depth={self.max_depth} < 1")
        if self.n_estimators < 0:
            problems.append(f"n_estimators={self.n_estimators} < 0")
        if not 0 < self.subsample <= 1:
            problems.append(f"subsample={self.subsample} outside (0, 1]")
        if not 0 < self.colsample_bytree <= 1:
            problems.append(f"colsample_bytree={self.colsample_bytree} outside (0, 1]")
        if self.reg_alpha < 0 or self.reg_lambda < 0 or self.gamma < 0 or self.min_child_weight < 0:
            problems.append("regularizers must be non-negative")
        if not 0 < self.base_score < 1:
            problems.append(f"base_score={self.base_score} outside (0, 1)")
        if self.early_stopping.patience < 1:
            problems.append(f"patience={self.early_stopping.patience} < 1")
        if self.objective != "binary:logistic" or self.eval_metric != "logloss":
            problems.append("only binary:logistic with logloss is supported")
        if problems:
            raise ConfigError(f"Invalid TrainConfig: {'; '.join(problems)}", stage="train")
        return self

    def growth_params(self) -> GrowthParams:
        return GrowthParams(
            max_depth=self.max_depth,
            min_child_weight=self.min_child_weight,
            reg_lambda=self.reg_lambda,
            reg_alpha=self.reg_alpha,
            gamma=self.gamma,
            shrinkage=self.eta,
        )

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, entry: Dict) -> "TrainConfig":
        entry = dict(entry)
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(entry) - known)
        if unknown:
            raise ConfigError(f"Unknown TrainConfig key(s): {', '.join(unknown)}", stage="config")
        if "early_stopping" in entry and isinstance(entry["early_stopping"], dict):
            stopping = entry["early_stopping"]
            unknown = sorted(set(stopping) - set(EarlyStopping.__dataclass_fields__))
            if unknown:
                raise ConfigError(f"Unknown early_stopping key(s): {', '.join(unknown)}", stage="config")
            entry["early_stopping"] = EarlyStopping(**stopping)
        return cls(**entry)


@dataclass(frozen=True)
class GridSpec:
    etas: Tuple[float, ...] = (0.01, 0.025, 0.05)
    max_depths: Tuple[int, ...] = (3, 5, 7)
    n_estimators: Tuple[int, ...] = (300, 600, 1000)
    base: TrainConfig = field(default_factory=TrainConfig)
    metric: str = "auroc"
    n_folds: int = 5

    def validate(self):
        if not (self.etas and self.max_depths and self.n_estimators):
            raise ConfigError("Grid must have at least one value per axis", stage="train")
        if self.metric not in ("auroc", "logloss"):
            raise ConfigError(f"Unknown grid selection metric: {self.metric}", stage="train")
        if self.n_folds < 2:
            raise ConfigError(f"n_folds must be >= 2, got {self.n_folds}", stage="train")
        for cell in self.cells():
            cell.validate()
        return self

    def cells(self) -> List[TrainConfig]:
        return [replace(self.base, eta=eta, max_depth=depth, n_estimators=n)
                for eta, depth, n in itertools.product(self.etas, self.max_depths, self.n_estimators)]

    def to_dict(self) -> Dict:
        return {
            "etas": list(self.etas),
            "max_depths": list(self.max_depths),
            "n_estimators": list(self.n_estimators),
            "base": self.base.to_dict(),
            "metric": self.metric,
            "n_folds": self.n_folds,
        }

    @classmethod
    def from_dict(cls, entry: Dict) -> "GridSpec":
        unknown = sorted(set(entry) - set(cls.__dataclass_fields__))
        if unknown:
            raise ConfigError(f"Unknown grid key(s): {', '.join(unknown)}", stage="config")
        return cls(
            etas=tuple(entry.get("etas", cls.etas)),
            max_depths=tuple(entry.get("max_depths", cls.max_depths)),
            n_estimators=tuple(entry.get("n_estimators", cls.n_estimators)),
            base=TrainConfig.from_dict(entry.get("base", {})),
            metric=entry.get("metric", "auroc"),
            n_folds=int(entry.get("n_folds", 5)),
        )


@dataclass
class Ensemble:
    base_margin: float
    trees: List[RegressionTree]
    best_iteration: int
    feature_names: List[str]
    config: TrainConfig

    @property
    def active_trees(self) -> List[RegressionTree]:
        """Trees used for prediction: up to best_iteration when keep_best."""
        if self.config.early_stopping.keep_best and self.best_iteration >= 0:
            return self.trees[:self.best_iteration + 1]
        return self.trees

    @property
    def base_score(self) -> float:
        return float(expit(self.base_margin))

    def feature_importance(self) -> np.ndarray:
        """Total split gain per feature over the active trees."""
        importance = np.zeros(len(self.feature_names))
        for tree in self.active_trees:
            internal = tree.feature >= 0
            np.add.at(importance, tree.feature[internal], tree.gain[internal])
        return importance

    def to_dict(self) -> Dict:
        return {
            "base_margin": self.base_margin,
            "best_iteration": self.best_iteration,
            "feature_names": list(self.feature_names),
            "config": self.config.to_dict(),
            "trees": [tree.to_dict() for tree in self.trees],
        }

    @classmethod
    def from_dict(cls, entry: Dict) -> "Ensemble":
        return cls(
            base_margin=float(entry["base_margin"]),
            trees=[RegressionTree.from_dict(tree) for tree in entry["trees"]],
            best_iteration=int(entry["best_iteration"]),
            feature_names=list(entry["feature_names"]),
            config=TrainConfig.from_dict(entry["config"]),
        )


@dataclass
class TrainingTrace:
    train_loss: List[float] = field(default_factory=list)
    eval_loss: List[float] = field(default_factory=list)
    best_iteration: int = -1
    stopped_early: bool = False

    @property
    def rounds(self) -> int:
        return len(self.train_loss)

    def to_dict(self) -> Dict:
        return {
            "rounds": self.rounds,
            "best_iteration": self.best_iteration,
            "stopped_early": self.stopped_early,
            "train_loss": self.train_loss,
            "eval_loss": self.eval_loss,
        }


def logloss(y: np.ndarray, p: np.ndarray) -> float:
    y = np.asarray(y, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if y.shape != p.shape:
        raise DataError(f"logloss length mismatch: {y.shape} vs {p.shape}")
    p = np.clip(p, LOGLOSS_CLIP, 1.0 - LOGLOSS_CLIP)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def gradients(y: np.ndarray, margin: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """First and second derivative of the per-row logloss with respect to the margin."""
    p = expit(margin)
    return p - y, p * (1.0 - p)


def design_matrix(feature_names: Sequence[str], data: Union[np.ndarray, Dataset]) -> np.ndarray:
    """Model matrix with columns in the model's feature order."""
    if isinstance(data, Dataset):
        missing = [name for name in feature_names if name not in data.feature_names]
        if missing:
            raise SchemaMismatchError(f"Missing feature column(s): {', '.join(missing)}", stage="predict")
        return data.matrix(feature_names)
    X = np.asarray(data, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != len(feature_names):
        raise SchemaMismatchError(f"Expected {len(feature_names)} feature columns, got shape {X.shape}",
                                  stage="predict")
    return X


def predict_margin(ensemble: Ensemble, X: Union[np.ndarray, Dataset]) -> np.ndarray:
    X = design_matrix(ensemble.feature_names, X)
    margin = np.full(X.shape[0], ensemble.base_margin)
    for tree in ensemble.active_trees:
        margin += tree.predict(X)
    return margin


def predict_proba(ensemble: Ensemble, X: Union[np.ndarray, Dataset]) -> np.ndarray:
    return expit(predict_margin(ensemble, X))


def _check_labels(y: np.ndarray, allow_single_class: bool) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if not np.all((y == 0) | (y == 1)):
        raise DataError("Labels must be 0/1", stage="train")
    if not allow_single_class and np.unique(y).size < 2:
        raise SingleClassError("Training labels contain a single class; boosting would degenerate", stage="train")
    return y


def _sample_rows(rng: np.random.Generator, n_rows: int, fraction: float) -> np.ndarray:
    counts = np.zeros(n_rows)
    if fraction >= 1.0:
        counts[:] = 1.0
        return counts
    size = max(1, int(round(fraction * n_rows)))
    counts[rng.choice(n_rows, size=size, replace=False)] = 1.0
    return counts


def _sample_features(rng: np.random.Generator, n_features: int, fraction: float) -> np.ndarray:
    if fraction >= 1.0:
        return np.arange(n_features)
    size = max(1, int(round(fraction * n_features)))
    return np.sort(rng.choice(n_features, size=size, replace=False))


def train(X: np.ndarray, y: np.ndarray, config: TrainConfig = TrainConfig(),
          eval_set: Optional[Tuple[np.ndarray, np.ndarray]] = None,
          feature_names: Optional[Sequence[str]] = None,
          allow_single_class: bool = False, logger=None) -> Tuple[Ensemble, TrainingTrace]:
    """
    Boost up to config.n_estimators trees.

    Row and column samples for round r come from a stream derived from
    (seed, r). With an eval_set, training stops once `patience` rounds pass
    without the eval logloss improving by at least min_delta; best_iteration is
    the round with the lowest eval logloss.
    """
    logger = logger or get_logger()
    config.validate()
    X = np.asarray(X, dtype=np.float64)
    y = _check_labels(y, allow_single_class)
    n_rows, n_features = X.shape
    if y.shape != (n_rows,):
        raise DataError(f"{y.shape[0]} labels for {n_rows} rows", stage="train")
    feature_names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(n_features)]

    grower = TreeGrower(X, config.growth_params())
    if config.base_score_from_prevalence:
        base_margin = float(logit(np.clip(y.mean(), LOGLOSS_CLIP, 1 - LOGLOSS_CLIP)))
    else:
        base_margin = float(logit(config.base_score))

    margin = np.full(n_rows, base_margin)
    trace = TrainingTrace()
    trees: List[RegressionTree] = []

    if eval_set is not None:
        X_eval = np.asarray(eval_set[0], dtype=np.float64)
        y_eval = np.asarray(eval_set[1], dtype=np.float64)
        eval_margin = np.full(X_eval.shape[0], base_margin)

    stopping = config.early_stopping
    reference_loss = np.inf
    reference_round = -1
    best_loss = np.inf

    for round_index in range(config.n_estimators):
        rng = derive_rng(config.seed, round_index)
        counts = _sample_rows(rng, n_rows, config.subsample)
        features = _sample_features(rng, n_features, config.colsample_bytree)

        g, h = gradients(y, margin)
        tree = grower.grow(g * counts, h * counts, counts, features=features)
        trees.append(tree)
        margin += tree.predict(X)
        trace.train_loss.append(logloss(y, expit(margin)))

        if eval_set is None:
            continue

        eval_margin += tree.predict(X_eval)
        loss = logloss(y_eval, expit(eval_margin))
        trace.eval_loss.append(loss)
        if loss < best_loss:
            best_loss = loss
            trace.best_iteration = round_index
        if loss < reference_loss - stopping.min_delta:
            reference_loss = loss
            reference_round = round_index
        if round_index - reference_round >= stopping.patience:
            trace.stopped_early = True
            logger.debug(f"[TRAIN] early stop at round {round_index}, best {trace.best_iteration} "
                         f"(eval logloss {best_loss:.6f})")
            break

    if eval_set is None:
        trace.best_iteration = len(trees) - 1

    ensemble = Ensemble(base_margin=base_margin, trees=trees, best_iteration=trace.best_iteration,
                        feature_names=feature_names, config=config)
    return ensemble, trace


@dataclass
class GridResult:
    best: TrainConfig
    scores: List[Dict]

    def to_dict(self) -> Dict:
        return {"best": self.best.to_dict(), "scores": self.scores}


def _cell_sort_key(cell: Dict, metric: str):
    # Best score first; ties go to fewer trees, shallower trees, then the larger learning rate.
    score = cell["mean_score"] if metric == "auroc" else -cell["mean_score"]
    return (-score, cell["n_estimators"], cell["max_depth"], -cell["eta"])


def _fold_scores(X: np.ndarray, y: np.ndarray, train_rows: np.ndarray, valid_rows: np.ndarray,
                 grid: GridSpec, eta: float, depth: int, logger) -> Dict[int, float]:
    """
    Score every n_estimators value of one (eta, depth) pair on one fold. Without
    early stopping the n-tree model is a prefix of the longest run, so one run
    serves all n values.
    """
    y_valid = y[valid_rows]
    if np.unique(y[train_rows]).size < 2 or np.unique(y_valid).size < 2:
        raise SingleClassError("A cross-validation fold contains a single class", stage="train")
    longest = max(grid.n_estimators)
    config = replace(grid.base, eta=eta, max_depth=depth, n_estimators=longest)
    ensemble, _ = train(X[train_rows], y[train_rows], config, logger=logger)

    wanted = set(grid.n_estimators)
    margin = np.full(valid_rows.size, ensemble.base_margin)
    scores = {}
    if 0 in wanted:
        scores[0] = _score(y_valid, margin, grid.metric)
    X_valid = X[valid_rows]
    for index, tree in enumerate(ensemble.trees):
        margin += tree.predict(X_valid)
        if index + 1 in wanted:
            scores[index + 1] = _score(y_valid, margin, grid.metric)
    return scores


def _score(y: np.ndarray, margin: np.ndarray, metric: str) -> float:
    if metric == "auroc":
        return auroc(margin, y)
    return logloss(y, expit(margin))


def grid_search(X: np.ndarray, y: np.ndarray, grid: GridSpec, seed: Optional[int] = None,
                threads: int = 1, logger=None) -> GridResult:
    """Stratified k-fold search over the eta x max_depth x n_estimators product."""
    logger = logger or get_logger()
    grid.validate()
    X = np.asarray(X, dtype=np.float64)
    y = _check_labels(y, allow_single_class=False)
    seed = grid.base.seed if seed is None else seed

    try:
        folds = list(StratifiedKFold(n_splits=grid.n_folds, shuffle=True, random_state=seed).split(X, y))
    except ValueError as e:
        raise SingleClassError(f"Cannot build {grid.n_folds} stratified folds: {e}", stage="train")
    pairs = list(itertools.product(grid.etas, grid.max_depths))
    jobs = [(eta, depth, fold) for eta, depth in pairs for fold in range(len(folds))]
    results = Parallel(n_jobs=threads, prefer="threads")(
        delayed(_fold_scores)(X, y, folds[fold][0], folds[fold][1], grid, eta, depth, logger)
        for eta, depth, fold in jobs
    )
    by_pair: Dict[Tuple[float, int], List[Dict[int, float]]] = {}
    for (eta, depth, _), fold_scores in zip(jobs, results):
        by_pair.setdefault((eta, depth), []).append(fold_scores)

    scores = []
    for eta, depth, n in itertools.product(grid.etas, grid.max_depths, grid.n_estimators):
        fold_values = [fold_scores[n] for fold_scores in by_pair[(eta, depth)]]
        scores.append({
            "eta": eta,
            "max_depth": depth,
            "n_estimators": n,
            "fold_scores": fold_values,
            "mean_score": float(np.mean(fold_values)),
        })

    winner = sorted(scores, key=lambda cell: _cell_sort_key(cell, grid.metric))[0]
    best = replace(grid.base, eta=winner["eta"], max_depth=winner["max_depth"], n_estimators=winner["n_estimators"])
    logger.info(f"[GRID] {len(scores)} cells x {grid.n_folds} folds; best eta={best.eta} "
                f"max_depth={best.max_depth} n_estimators={best.n_estimators} "
                f"({grid.metric} {winner['mean_score']:.4f})")
    return GridResult(best=best, scores=scores)
