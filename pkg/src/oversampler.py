"""
Minority-class oversampling: SMOTE and ADASYN over a shared nearest-neighbor index.

Every synthetic row is x_i + delta * (x_nn - x_i) for a minority base row x_i,
one of its minority nearest neighbors x_nn and delta ~ U[0, 1). The (base,
neighbor, delta) triple of each row is kept so a batch can be replayed.
"""

from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional

import numpy as np
from scipy.spatial.distance import cdist

from src.core import SYNTHETIC_ROW_PREFIX, Dataset, SplitIndices
from src.errors import ConfigError, DataError, NumericError, SingleClassError
from src.logger import get_logger

QUERY_CHUNK_ROWS = 256


class ResampleMethod(Enum):
    NONE = "none"
    SMOTE = "smote"
    ADASYN = "adasyn"


class NeighborIndex:
    """
    Exact k-nearest-neighbor search in z-scored space. Neighbor lists never
    contain the query row itself; equal distances keep the lower reference index.
    """

    def __init__(self, points: np.ndarray, k: int, means: Optional[np.ndarray] = None,
                 scales: Optional[np.ndarray] = None):
        points = np.asarray(points, dtype=np.float64)
        if k < 1:
            raise DataError(f"Neighbor count must be >= 1, got {k}", stage="resample")
        if means is None:
            means = points.mean(axis=0)
        if scales is None:
            scales = points.std(axis=0)
        scales = np.where(scales > 0, scales, 1.0)
        self.k = k
        self.means = means
        self.scales = scales
        self.reference = (points - means) / scales

    @property
    def size(self) -> int:
        return self.reference.shape[0]

    def query(self, points: np.ndarray, self_index: Optional[np.ndarray] = None) -> np.ndarray:
        """
        Indices (into the reference set) of the k nearest neighbors of each point.
        `self_index[i]` is the reference position of query i, excluded from its list.
        """
        queries = (np.asarray(points, dtype=np.float64) - self.means) / self.scales
        available = self.size - (1 if self_index is not None else 0)
        if self.k > available:
            raise DataError(f"k={self.k} exceeds the {available} candidate neighbors", stage="resample")

        neighbors = np.empty((queries.shape[0], self.k), dtype=np.int64)
        for start in range(0, queries.shape[0], QUERY_CHUNK_ROWS):
            stop = min(start + QUERY_CHUNK_ROWS, queries.shape[0])
            distances = cdist(queries[start:stop], self.reference, metric="sqeuclidean")
            if self_index is not None:
                distances[np.arange(stop - start), self_index[start:stop]] = np.inf
            order = np.argsort(distances, axis=1, kind="stable")
            neighbors[start:stop] = order[:, :self.k]
        return neighbors


@dataclass
class SyntheticBatch:
    rows: np.ndarray
    # Positions into the minority set used to build the batch.
    base: np.ndarray
    neighbor: np.ndarray
    deltas: np.ndarray
    label: int = 1
    method: str = ResampleMethod.SMOTE.value
    quotas: Optional[np.ndarray] = None
    density: Optional[np.ndarray] = None
    uniform_fallback: bool = False

    @property
    def size(self) -> int:
        return self.rows.shape[0]

    def row_ids(self) -> List[str]:
        return [f"{SYNTHETIC_ROW_PREFIX}{index + 1:06d}" for index in range(self.size)]

    def to_csv(self, minority_ids: Optional[List[str]] = None) -> str:
        """Audit log `row_id,base,neighbor,delta`; base/neighbor are source row ids when given."""
        lines = ["row_id,base,neighbor,delta"]
        for row_id, base, neighbor, delta in zip(self.row_ids(), self.base, self.neighbor, self.deltas):
            if minority_ids is not None:
                base, neighbor = minority_ids[base], minority_ids[neighbor]
            lines.append(f"{row_id},{base},{neighbor},{repr(float(delta))}")
        return "\n".join(lines) + "\n"


def interpolate(minority: np.ndarray, base: np.ndarray, neighbor: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    x_i = minority[base]
    x_nn = minority[neighbor]
    return x_i + deltas[:, None] * (x_nn - x_i)


def _check_minority(minority: np.ndarray, k: int):
    if k <= 0:
        raise DataError(f"k must be positive, got {k}", stage="resample")
    if minority.shape[0] < 2:
        raise DataError("Oversampling needs at least 2 minority rows", stage="resample")
    if k > minority.shape[0] - 1:
        raise DataError(f"k={k} exceeds the {minority.shape[0] - 1} available minority neighbors",
                        stage="resample")


def smote(minority: np.ndarray, *, rng: np.random.Generator, k: int = 5, count: int = 0,
          means: Optional[np.ndarray] = None, scales: Optional[np.ndarray] = None) -> SyntheticBatch:
    """Base rows cycle round-robin; the partner is uniform among the base row's k minority neighbors."""
    minority = np.asarray(minority, dtype=np.float64)
    _check_minority(minority, k)
    m = minority.shape[0]
    index = NeighborIndex(minority, k, means, scales)
    neighbors = index.query(minority, self_index=np.arange(m))

    base = np.arange(count, dtype=np.int64) % m
    choice = rng.integers(0, k, size=count)
    deltas = rng.random(count)
    partner = neighbors[base, choice]
    return SyntheticBatch(rows=interpolate(minority, base, partner, deltas), base=base, neighbor=partner,
                          deltas=deltas, method=ResampleMethod.SMOTE.value)


def largest_remainder(shares: np.ndarray, total: int) -> np.ndarray:
    """Integer quotas summing to `total`; leftover units go to the largest remainders, lower index first."""
    exact = shares * total
    quotas = np.floor(exact).astype(np.int64)
    leftover = int(total - quotas.sum())
    if not 0 <= leftover <= shares.size:
        raise NumericError(f"Quota shares do not sum to 1: {leftover} unit(s) left over for {shares.size} rows",
                           stage="resample", details={"share_sum": float(shares.sum()), "total": int(total)})
    if leftover > 0:
        remainders = exact - quotas
        order = np.argsort(-remainders, kind="stable")
        quotas[order[:leftover]] += 1
    return quotas


def adasyn(X: np.ndarray, y: np.ndarray, *, rng: np.random.Generator, k: int = 5,
           means: Optional[np.ndarray] = None, scales: Optional[np.ndarray] = None,
           logger=None) -> SyntheticBatch:
    """
    Density-weighted oversampling to full balance. r_i is the majority share among a
    minority row's k nearest neighbors in the whole set; quotas are proportional to r_i.
    """
    logger = logger or get_logger()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    counts = np.bincount(y.astype(np.int64), minlength=2)
    if counts[0] == 0 or counts[1] == 0:
        raise SingleClassError("ADASYN needs both classes present", stage="resample")
    if k > X.shape[0] - 1:
        raise DataError(f"k={k} exceeds the {X.shape[0] - 1} available neighbors", stage="resample")

    minority_label = int(np.argmin(counts)) if counts[0] != counts[1] else 1
    minority_rows = np.flatnonzero(y == minority_label)
    minority = X[minority_rows]
    _check_minority(minority, k)
    total = int(counts.max() - counts.min())

    whole = NeighborIndex(X, k, means, scales)
    overall = whole.query(minority, self_index=minority_rows)
    density = (y[overall] != minority_label).sum(axis=1) / k

    uniform = density.sum() == 0
    if uniform:
        logger.log_warning_event("adasyn_uniform_fallback",
                                 "no minority row has a majority neighbor; quotas are uniform",
                                 {"minority_rows": int(minority.shape[0]), "k": k})
        shares = np.full(minority.shape[0], 1.0 / minority.shape[0])
    else:
        shares = density / density.sum()
    quotas = largest_remainder(shares, total)

    local = NeighborIndex(minority, k, whole.means, whole.scales)
    neighbors = local.query(minority, self_index=np.arange(minority.shape[0]))
    base = np.repeat(np.arange(minority.shape[0]), quotas)
    choice = rng.integers(0, k, size=base.size)
    deltas = rng.random(base.size)
    partner = neighbors[base, choice]
    return SyntheticBatch(rows=interpolate(minority, base, partner, deltas), base=base, neighbor=partner,
                          deltas=deltas, label=minority_label, method=ResampleMethod.ADASYN.value,
                          quotas=quotas, density=density, uniform_fallback=bool(uniform))


@dataclass
class RebalanceOutcome:
    dataset: Dataset
    batch: Optional[SyntheticBatch]
    minority_ids: List[str]

    def audit_csv(self) -> str:
        if self.batch is None:
            return "row_id,base,neighbor,delta\n"
        return self.batch.to_csv(self.minority_ids)

    def summary(self) -> Dict:
        labels = self.dataset.labels
        return {
            "rows": self.dataset.n_rows,
            "synthetic_rows": 0 if self.batch is None else self.batch.size,
            "positives": int(labels.sum()),
            "negatives": int(labels.size - labels.sum()),
        }


def rebalance(dataset: Dataset, train: Optional[SplitIndices], method: ResampleMethod, rng: np.random.Generator,
              k: int = 5, logger=None) -> RebalanceOutcome:
    """
    Oversample the minority class of the training rows to parity. Test rows are
    never touched; synthetic rows carry row ids with the synthetic prefix.
    """
    logger = logger or get_logger()
    if not dataset.has_labels:
        raise DataError("Rebalancing needs labels", stage="resample")
    training = dataset.take(train.train_rows) if train is not None else dataset
    if method == ResampleMethod.NONE:
        return RebalanceOutcome(dataset=training, batch=None, minority_ids=[])

    if not training.is_complete:
        raise DataError("Rebalancing needs a complete (imputed) dataset", stage="resample")
    categorical = [feature.name for feature in training.schema if not feature.is_numeric]
    if categorical:
        raise DataError(f"Oversampling interpolates numeric features only; categorical: {', '.join(categorical)}",
                        stage="resample")
    labels = training.labels.astype(np.int64)
    counts = np.bincount(labels, minlength=2)
    if counts.min() == 0:
        raise SingleClassError("Training rows contain a single class; nothing to rebalance", stage="resample")

    X = training.matrix()
    means = X.mean(axis=0)
    scales = X.std(axis=0)
    minority_label = 1 if counts[1] <= counts[0] else 0
    minority_rows = np.flatnonzero(labels == minority_label)

    if method == ResampleMethod.SMOTE:
        batch = smote(X[minority_rows], k=k, count=int(abs(counts[0] - counts[1])), rng=rng,
                      means=means, scales=scales)
        batch.label = minority_label
    elif method == ResampleMethod.ADASYN:
        batch = adasyn(X, labels, k=k, rng=rng, means=means, scales=scales, logger=logger)
    else:
        raise ConfigError(f"Unknown resampling method: {method}", stage="resample")

    augmented = Dataset(
        schema=training.schema,
        values=np.vstack([X, batch.rows]),
        missing_mask=np.zeros((training.n_rows + batch.size, training.n_features), dtype=bool),
        labels=np.concatenate([labels, np.full(batch.size, batch.label)]),
        row_ids=training.row_ids + tuple(batch.row_ids()),
    )
    minority_ids = [training.row_ids[row] for row in minority_rows]
    logger.debug(f"[RESAMPLE] {method.value}: {batch.size} synthetic rows added to {training.n_rows} training rows")
    return RebalanceOutcome(dataset=augmented, batch=batch, minority_ids=minority_ids)
