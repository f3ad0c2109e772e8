"""
Exact greedy regression-tree learner driven by per-row gradients and hessians.

Trees grow level by level. For every feature the rows are visited in presorted
order, regrouped by current node, and every midpoint between consecutive distinct
values is scored with the regularized Newton gain

    gain = 1/2 [T(G_L)^2/(H_L+lambda) + T(G_R)^2/(H_R+lambda) - T(G)^2/(H+lambda)] - gamma

where T is soft-thresholding by alpha. Leaf weight is -T(G)/(H+lambda) times a
shrinkage factor. With g = -y, h = 1 and no regularization the gain is the Gini
decrease of a classification tree and the leaf weight is the positive-class
fraction, which is how the random forest baseline reuses this learner.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from src.errors import DataError


@dataclass(frozen=True)
class GrowthParams:
    max_depth: int = 6
    min_child_weight: float = 1.0
    reg_lambda: float = 1.0
    reg_alpha: float = 0.0
    gamma: float = 0.0
    shrinkage: float = 1.0
    # Features drawn per node (random forest); None uses every offered feature.
    features_per_split: Optional[int] = None


@dataclass
class RegressionTree:
    """Flat array tree. Internal nodes route x[feature] < threshold to the left child."""
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray
    gain: np.ndarray

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    def is_leaf(self, node: int) -> bool:
        return self.feature[node] < 0

    @property
    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=np.int64)
        for node in range(self.n_nodes):
            if self.feature[node] >= 0:
                depths[self.left[node]] = depths[node] + 1
                depths[self.right[node]] = depths[node] + 1
        return int(depths.max()) if self.n_nodes else 0

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            internal = self.feature[node] >= 0
            if not internal.any():
                return node
            active = rows[internal]
            current = node[active]
            goes_left = X[active, self.feature[current]] < self.threshold[current]
            node[active] = np.where(goes_left, self.left[current], self.right[current])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def used_features(self) -> List[int]:
        return sorted({int(f) for f in self.feature if f >= 0})

    def to_dict(self) -> Dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "cover": self.cover.tolist(),
            "gain": self.gain.tolist(),
        }

    @classmethod
    def from_dict(cls, entry: Dict) -> "RegressionTree":
        return cls(
            feature=np.asarray(entry["feature"], dtype=np.int64),
            threshold=np.asarray(entry["threshold"], dtype=np.float64),
            left=np.asarray(entry["left"], dtype=np.int64),
            right=np.asarray(entry["right"], dtype=np.int64),
            value=np.asarray(entry["value"], dtype=np.float64),
            # Older or hand-written files may lack covers; attribution refuses such trees.
            cover=np.asarray(entry.get("cover", [0.0] * len(entry["feature"])), dtype=np.float64),
            gain=np.asarray(entry.get("gain", [0.0] * len(entry["feature"])), dtype=np.float64),
        )

    @classmethod
    def leaf(cls, value: float, cover: float = 1.0) -> "RegressionTree":
        return cls(
            feature=np.array([-1]), threshold=np.array([0.0]), left=np.array([-1]), right=np.array([-1]),
            value=np.array([float(value)]), cover=np.array([float(cover)]), gain=np.array([0.0]),
        )


def soft_threshold(G, alpha: float):
    if alpha == 0.0:
        return G
    return np.sign(G) * np.maximum(np.abs(G) - alpha, 0.0)


def leaf_weight(G, H, params: GrowthParams):
    return -soft_threshold(G, params.reg_alpha) / (H + params.reg_lambda)


def node_score(G, H, params: GrowthParams):
    T = soft_threshold(G, params.reg_alpha)
    return T * T / (H + params.reg_lambda)


def split_gain(G_left, H_left, G_right, H_right, params: GrowthParams):
    G = G_left + G_right
    H = H_left + H_right
    return 0.5 * (node_score(G_left, H_left, params) + node_score(G_right, H_right, params)
                  - node_score(G, H, params)) - params.gamma


class _Builder:
    """Mutable node store used while a tree grows."""

    def __init__(self):
        self.feature: List[int] = []
        self.threshold: List[float] = []
        self.left: List[int] = []
        self.right: List[int] = []
        self.value: List[float] = []
        self.cover: List[float] = []
        self.gain: List[float] = []

    def add(self, value: float, cover: float) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        self.cover.append(cover)
        self.gain.append(0.0)
        return len(self.feature) - 1

    def build(self) -> RegressionTree:
        return RegressionTree(
            feature=np.asarray(self.feature, dtype=np.int64),
            threshold=np.asarray(self.threshold, dtype=np.float64),
            left=np.asarray(self.left, dtype=np.int64),
            right=np.asarray(self.right, dtype=np.int64),
            value=np.asarray(self.value, dtype=np.float64),
            cover=np.asarray(self.cover, dtype=np.float64),
            gain=np.asarray(self.gain, dtype=np.float64),
        )


class TreeGrower:
    """Grows trees on one training matrix; the per-feature sort order is computed once."""

    def __init__(self, X: np.ndarray, params: GrowthParams):
        X = np.ascontiguousarray(X, dtype=np.float64)
        if not np.all(np.isfinite(X)):
            rows, cols = np.nonzero(~np.isfinite(X))
            raise DataError(f"Non-finite feature value at row {int(rows[0])}, feature index {int(cols[0])}")
        self.X = X
        self.params = params
        self.sorted_index = [np.argsort(X[:, j], kind="stable") for j in range(X.shape[1])]

    def grow(self, g: np.ndarray, h: np.ndarray, counts: np.ndarray, features: Optional[np.ndarray] = None,
             rng: Optional[np.random.Generator] = None) -> RegressionTree:
        """
        Grow one tree. `g` and `h` are already multiplied by `counts`; rows with zero
        count are out of sample. `features` restricts the candidate columns (column
        subsampling per tree); node-level sampling uses `rng`.
        """
        params = self.params
        n_rows, n_features = self.X.shape
        features = np.arange(n_features) if features is None else np.sort(np.asarray(features, dtype=np.int64))

        builder = _Builder()
        in_sample = counts > 0
        G_root = float(g[in_sample].sum())
        H_root = float(h[in_sample].sum())
        root = builder.add(float(leaf_weight(G_root, H_root, params)) * params.shrinkage,
                           float(counts[in_sample].sum()))

        # Position of each row in the current level's node list; -1 when inactive.
        position = np.where(in_sample, 0, -1).astype(np.int64)
        level_nodes = [root]
        level_G = np.array([G_root])
        level_H = np.array([H_root])

        for depth in range(params.max_depth):
            n_level = len(level_nodes)
            if n_level == 0:
                break

            allowed = None
            if params.features_per_split is not None and params.features_per_split < features.size:
                allowed = np.zeros((n_level, n_features), dtype=bool)
                for slot in range(n_level):
                    picked = rng.choice(features, size=params.features_per_split, replace=False)
                    allowed[slot, picked] = True

            best_gain = np.full(n_level, -np.inf)
            best_feature = np.full(n_level, -1, dtype=np.int64)
            best_threshold = np.zeros(n_level)
            best_G_left = np.zeros(n_level)
            best_H_left = np.zeros(n_level)

            for f in features:
                order = self.sorted_index[f]
                slots = position[order]
                keep = slots >= 0
                order = order[keep]
                slots = slots[keep]
                if order.size < 2:
                    continue
                regroup = np.argsort(slots, kind="stable")
                order = order[regroup]
                slots = slots[regroup]

                xs = self.X[order, f]
                cum_g = np.cumsum(g[order])
                cum_h = np.cumsum(h[order])
                segment_start = np.searchsorted(slots, np.arange(n_level), side="left")
                base_g = np.where(segment_start > 0, cum_g[segment_start - 1], 0.0)
                base_h = np.where(segment_start > 0, cum_h[segment_start - 1], 0.0)

                slot_here = slots[:-1]
                valid = (slot_here == slots[1:]) & (xs[:-1] < xs[1:])
                if allowed is not None:
                    valid &= allowed[slot_here, f]
                candidates = np.flatnonzero(valid)
                if candidates.size == 0:
                    continue

                cand_slot = slot_here[candidates]
                G_left = cum_g[candidates] - base_g[cand_slot]
                H_left = cum_h[candidates] - base_h[cand_slot]
                G_right = level_G[cand_slot] - G_left
                H_right = level_H[cand_slot] - H_left

                ok = (H_left >= params.min_child_weight) & (H_right >= params.min_child_weight)
                if not ok.any():
                    continue
                candidates = candidates[ok]
                cand_slot = cand_slot[ok]
                G_left, H_left, G_right, H_right = G_left[ok], H_left[ok], G_right[ok], H_right[ok]
                gains = split_gain(G_left, H_left, G_right, H_right, params)

                # Best per node: highest gain, then lowest threshold (earliest position).
                rank = np.lexsort((candidates, -gains, cand_slot))
                first = np.unique(cand_slot[rank], return_index=True)[1]
                winners = rank[first]
                for w in winners:
                    slot = cand_slot[w]
                    if gains[w] > best_gain[slot]:
                        position_in_sorted = candidates[w]
                        best_gain[slot] = gains[w]
                        best_feature[slot] = f
                        best_threshold[slot] = 0.5 * (xs[position_in_sorted] + xs[position_in_sorted + 1])
                        best_G_left[slot] = G_left[w]
                        best_H_left[slot] = H_left[w]

            next_nodes, next_G, next_H = [], [], []
            next_position = np.full(n_rows, -1, dtype=np.int64)
            for slot, node in enumerate(level_nodes):
                if best_feature[slot] < 0 or not best_gain[slot] > 0.0:
                    continue
                f = int(best_feature[slot])
                threshold = float(best_threshold[slot])
                members = np.flatnonzero(position == slot)
                goes_left = self.X[members, f] < threshold
                left_rows, right_rows = members[goes_left], members[~goes_left]

                G_left, H_left = best_G_left[slot], best_H_left[slot]
                G_right, H_right = level_G[slot] - G_left, level_H[slot] - H_left
                left = builder.add(float(leaf_weight(G_left, H_left, params)) * params.shrinkage,
                                   float(counts[left_rows].sum()))
                right = builder.add(float(leaf_weight(G_right, H_right, params)) * params.shrinkage,
                                    float(counts[right_rows].sum()))
                builder.feature[node] = f
                builder.threshold[node] = threshold
                builder.left[node] = left
                builder.right[node] = right
                builder.value[node] = 0.0
                builder.gain[node] = float(best_gain[slot])

                next_position[left_rows] = len(next_nodes)
                next_nodes.append(left)
                next_G.append(G_left)
                next_H.append(H_left)
                next_position[right_rows] = len(next_nodes)
                next_nodes.append(right)
                next_G.append(G_right)
                next_H.append(H_right)

            position = next_position
            level_nodes = next_nodes
            level_G = np.asarray(next_G, dtype=np.float64)
            level_H = np.asarray(next_H, dtype=np.float64)

        return builder.build()
