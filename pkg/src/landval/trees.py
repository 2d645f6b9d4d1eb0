"""From-scratch decision-tree ensembles.

Binary classification forests (random_forest, extra_trees) with Gini splits
and impurity-decrease feature importances, plus a least-squares gradient
boosted regressor used as the direct price-prediction baseline. Trees are
stored as flat arrays; split search is vectorized per node.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

ENSEMBLE_KINDS = ("random_forest", "extra_trees")
_LEAF = -1


@dataclass
class TreeConfig:
    n_trees: int = 200
    max_depth: int = 12
    min_leaf: int = 5
    mtry: int | None = None  # None -> ceil(sqrt(n_features))
    seed: int = 0
    n_jobs: int = 1


@dataclass
class _Tree:
    """Flat-array binary tree. feature == -1 marks a leaf."""

    feature: np.ndarray  # int32
    threshold: np.ndarray  # float64
    left: np.ndarray  # int32
    right: np.ndarray  # int32
    value: np.ndarray  # float64, leaf payload (positive fraction / mean)
    n_samples: np.ndarray  # int64
    importance: np.ndarray  # float64, per-feature impurity decrease

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf value for every row, vectorized over depth levels."""
        nodes = np.zeros(X.shape[0], dtype=np.int64)
        active = self.feature[nodes] != _LEAF
        while active.any():
            idx = np.nonzero(active)[0]
            cur = nodes[idx]
            feat = self.feature[cur]
            go_left = X[idx, feat] <= self.threshold[cur]
            nodes[idx] = np.where(go_left, self.left[cur], self.right[cur])
            active[idx] = self.feature[nodes[idx]] != _LEAF
        return self.value[nodes]


def _gini(pos: float, n: int) -> float:
    if n == 0:
        return 0.0
    p = pos / n
    return 1.0 - p * p - (1.0 - p) * (1.0 - p)


def _best_split_exact(Xc: np.ndarray, y: np.ndarray, min_leaf: int):
    """Best Gini split over all thresholds of the candidate columns.

    Returns (col_index, threshold, weighted_child_gini) or None.
    """
    m, k = Xc.shape
    order = np.argsort(Xc, axis=0, kind="stable")
    xs = np.take_along_axis(Xc, order, axis=0)
    ys = np.take_along_axis(np.broadcast_to(y[:, None], (m, k)), order, axis=0)
    cum_pos = np.cumsum(ys, axis=0, dtype=np.float64)
    total_pos = cum_pos[-1, :]

    n_left = np.arange(1, m, dtype=np.float64)[:, None]
    n_right = m - n_left
    pos_left = cum_pos[:-1, :]
    pos_right = total_pos[None, :] - pos_left
    with np.errstate(invalid="ignore"):
        gini_left = 1.0 - (pos_left / n_left) ** 2 - (1.0 - pos_left / n_left) ** 2
        gini_right = 1.0 - (pos_right / n_right) ** 2 - (1.0 - pos_right / n_right) ** 2
    score = (n_left * gini_left + n_right * gini_right) / m

    valid = xs[1:, :] > xs[:-1, :]
    if min_leaf > 1:
        pos_ok = (n_left >= min_leaf) & (n_right >= min_leaf)
        valid = valid & pos_ok
    score = np.where(valid, score, np.inf)
    flat = np.argmin(score)
    i, j = np.unravel_index(flat, score.shape)
    if not np.isfinite(score[i, j]):
        return None
    threshold = 0.5 * (xs[i, j] + xs[i + 1, j])
    # Guard against midpoints that round onto the upper value.
    if threshold >= xs[i + 1, j]:
        threshold = xs[i, j]
    return int(j), float(threshold), float(score[i, j])


def _best_split_random(Xc: np.ndarray, y: np.ndarray, min_leaf: int, rng: np.random.Generator):
    """Extra-trees split: one uniform random threshold per candidate column."""
    m, k = Xc.shape
    lo = Xc.min(axis=0)
    hi = Xc.max(axis=0)
    spread = hi > lo
    if not spread.any():
        return None
    thresholds = rng.uniform(lo, hi)
    best = None
    for j in range(k):
        if not spread[j]:
            continue
        thr = thresholds[j]
        mask = Xc[:, j] <= thr
        n_left = int(mask.sum())
        n_right = m - n_left
        if n_left < min_leaf or n_right < min_leaf:
            continue
        pos_left = float(y[mask].sum())
        pos_right = float(y.sum()) - pos_left
        score = (n_left * _gini(pos_left, n_left) + n_right * _gini(pos_right, n_right)) / m
        if best is None or score < best[2]:
            best = (j, float(thr), score)
    return best


def _best_split_mse(Xc: np.ndarray, y: np.ndarray, min_leaf: int):
    """Best variance-reduction split for regression trees."""
    m, k = Xc.shape
    order = np.argsort(Xc, axis=0, kind="stable")
    xs = np.take_along_axis(Xc, order, axis=0)
    ys = np.take_along_axis(np.broadcast_to(y[:, None], (m, k)), order, axis=0)
    cum_y = np.cumsum(ys, axis=0)
    cum_y2 = np.cumsum(ys * ys, axis=0)
    tot_y = cum_y[-1, :]
    tot_y2 = cum_y2[-1, :]

    n_left = np.arange(1, m, dtype=np.float64)[:, None]
    n_right = m - n_left
    sse_left = cum_y2[:-1, :] - cum_y[:-1, :] ** 2 / n_left
    sse_right = (tot_y2 - cum_y2[:-1, :]) - (tot_y - cum_y[:-1, :]) ** 2 / n_right
    score = (sse_left + sse_right) / m

    valid = xs[1:, :] > xs[:-1, :]
    if min_leaf > 1:
        valid = valid & (n_left >= min_leaf) & (n_right >= min_leaf)
    score = np.where(valid, score, np.inf)
    flat = np.argmin(score)
    i, j = np.unravel_index(flat, score.shape)
    if not np.isfinite(score[i, j]):
        return None
    threshold = 0.5 * (xs[i, j] + xs[i + 1, j])
    if threshold >= xs[i + 1, j]:
        threshold = xs[i, j]
    return int(j), float(threshold), float(score[i, j])


def _node_impurity(y: np.ndarray, regression: bool) -> float:
    if regression:
        return float(np.var(y))
    return _gini(float(y.sum()), len(y))


def _grow_tree(
    X: np.ndarray,
    y: np.ndarray,
    rows: np.ndarray,
    cfg: TreeConfig,
    rng: np.random.Generator,
    splitter: str,
    regression: bool = False,
) -> _Tree:
    n_features = X.shape[1]
    mtry = cfg.mtry or math.ceil(math.sqrt(n_features))
    mtry = min(mtry, n_features)
    n_root = len(rows)

    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []
    n_samples: list[int] = []
    importance = np.zeros(n_features)

    def new_node() -> int:
        feature.append(_LEAF)
        threshold.append(0.0)
        left.append(_LEAF)
        right.append(_LEAF)
        value.append(0.0)
        n_samples.append(0)
        return len(feature) - 1

    root = new_node()
    stack: list[tuple[int, np.ndarray, int]] = [(root, rows, 0)]
    while stack:
        node, r, depth = stack.pop()
        yn = y[r]
        m = len(r)
        n_samples[node] = m
        value[node] = float(yn.mean())
        imp = _node_impurity(yn, regression)
        if depth >= cfg.max_depth or m < 2 * cfg.min_leaf or imp <= 0.0:
            continue
        cand = rng.choice(n_features, size=mtry, replace=False)
        Xc = X[np.ix_(r, cand)]
        if splitter == "exact":
            best = _best_split_mse(Xc, yn, cfg.min_leaf) if regression else _best_split_exact(Xc, yn, cfg.min_leaf)
        else:
            best = _best_split_random(Xc, yn, cfg.min_leaf, rng)
        if best is None:
            continue
        j, thr, child_score = best
        feat = int(cand[j])
        mask = Xc[:, j] <= thr
        r_left, r_right = r[mask], r[~mask]
        if len(r_left) == 0 or len(r_right) == 0:
            continue
        feature[node] = feat
        threshold[node] = thr
        importance[feat] += (m / n_root) * (imp - child_score)
        nl, nr = new_node(), new_node()
        left[node], right[node] = nl, nr
        stack.append((nr, r_right, depth + 1))
        stack.append((nl, r_left, depth + 1))

    return _Tree(
        feature=np.asarray(feature, dtype=np.int32),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        value=np.asarray(value, dtype=np.float64),
        n_samples=np.asarray(n_samples, dtype=np.int64),
        importance=importance,
    )


def _fit_one_classifier(X, y, kind, cfg, seed_state) -> _Tree:
    rng = np.random.default_rng(seed_state)
    n = X.shape[0]
    if kind == "random_forest":
        rows = rng.integers(0, n, size=n)
        return _grow_tree(X, y, rows, cfg, rng, splitter="exact")
    rows = np.arange(n)
    return _grow_tree(X, y, rows, cfg, rng, splitter="random")


@dataclass
class TreeEnsemble:
    """Forest of probability trees; score = mean leaf positive fraction."""

    kind: str
    n_features: int
    cfg: TreeConfig
    trees: list[_Tree] = field(repr=False, default_factory=list)

    def predict_score(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        acc = np.zeros(X.shape[0])
        for t in self.trees:
            acc += t.apply(X)
        return acc / len(self.trees)

    def importances(self) -> np.ndarray:
        """Per-feature mean impurity decrease, normalized to sum to 1."""
        total = np.zeros(self.n_features)
        for t in self.trees:
            total += t.importance
        s = total.sum()
        return total / s if s > 0 else total

    def to_json(self) -> dict:
        return {
            "format": "landval-tree-ensemble",
            "version": 1,
            "kind": self.kind,
            "n_features": self.n_features,
            "cfg": self.cfg.__dict__,
            "trees": [_tree_to_json(t) for t in self.trees],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TreeEnsemble":
        if obj.get("format") != "landval-tree-ensemble":
            raise ValueError("not a tree ensemble file")
        cfg = TreeConfig(**obj["cfg"])
        return cls(
            kind=obj["kind"],
            n_features=obj["n_features"],
            cfg=cfg,
            trees=[_tree_from_json(t, obj["n_features"]) for t in obj["trees"]],
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), separators=(",", ":")))

    @classmethod
    def load(cls, path: str | Path) -> "TreeEnsemble":
        return cls.from_json(json.loads(Path(path).read_text()))


def _tree_to_json(t: _Tree) -> dict:
    return {
        "feature": t.feature.tolist(),
        "threshold": t.threshold.tolist(),
        "left": t.left.tolist(),
        "right": t.right.tolist(),
        "value": t.value.tolist(),
        "n_samples": t.n_samples.tolist(),
        "importance": t.importance.tolist(),
    }


def _tree_from_json(obj: dict, n_features: int) -> _Tree:
    return _Tree(
        feature=np.asarray(obj["feature"], dtype=np.int32),
        threshold=np.asarray(obj["threshold"], dtype=np.float64),
        left=np.asarray(obj["left"], dtype=np.int32),
        right=np.asarray(obj["right"], dtype=np.int32),
        value=np.asarray(obj["value"], dtype=np.float64),
        n_samples=np.asarray(obj["n_samples"], dtype=np.int64),
        importance=np.asarray(obj["importance"], dtype=np.float64),
    )


def _validate_classification_input(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.size == 0 or len(y) == 0:
        raise ValueError("empty training data")
    if np.isnan(X).any() or np.isinf(X).any():
        raise ValueError("training features contain NaN or inf")
    classes = np.unique(y)
    if len(classes) < 2:
        raise ValueError("training labels contain a single class")
    if not set(classes.tolist()) <= {0.0, 1.0}:
        raise ValueError("labels must be binary {0, 1}")
    return X, y


def fit_ensemble(kind: str, X: np.ndarray, y: np.ndarray, cfg: TreeConfig | None = None) -> TreeEnsemble:
    """Fit a random_forest (bootstrap rows, best Gini splits) or extra_trees
    (full rows, uniform random thresholds) classifier. Deterministic given
    cfg.seed, regardless of n_jobs."""
    if kind not in ENSEMBLE_KINDS:
        raise ValueError(f"kind must be one of {ENSEMBLE_KINDS}")
    cfg = cfg or TreeConfig()
    X, y = _validate_classification_input(X, y)
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_trees)
    if cfg.n_jobs == 1:
        trees = [_fit_one_classifier(X, y, kind, cfg, s) for s in seeds]
    else:
        trees = Parallel(n_jobs=cfg.n_jobs)(
            delayed(_fit_one_classifier)(X, y, kind, cfg, s) for s in seeds
        )
    return TreeEnsemble(kind=kind, n_features=X.shape[1], cfg=cfg, trees=trees)


@dataclass
class GbtConfig:
    n_rounds: int = 200
    learning_rate: float = 0.05
    max_depth: int = 3
    min_leaf: int = 5
    seed: int = 0


@dataclass
class GbtRegressor:
    """Least-squares gradient boosting: prediction = base + sum of shrunken
    tree outputs."""

    base: float
    learning_rate: float
    n_features: int
    trees: list[_Tree] = field(repr=False, default_factory=list)
    train_mse_history: list[float] = field(default_factory=list)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        out = np.full(X.shape[0], self.base)
        for t in self.trees:
            out += self.learning_rate * t.apply(X)
        return out

    def save(self, path: str | Path) -> None:
        obj = {
            "format": "landval-gbt",
            "version": 1,
            "base": self.base,
            "learning_rate": self.learning_rate,
            "n_features": self.n_features,
            "trees": [_tree_to_json(t) for t in self.trees],
        }
        Path(path).write_text(json.dumps(obj, separators=(",", ":")))

    @classmethod
    def load(cls, path: str | Path) -> "GbtRegressor":
        obj = json.loads(Path(path).read_text())
        if obj.get("format") != "landval-gbt":
            raise ValueError("not a gbt file")
        return cls(
            base=obj["base"],
            learning_rate=obj["learning_rate"],
            n_features=obj["n_features"],
            trees=[_tree_from_json(t, obj["n_features"]) for t in obj["trees"]],
        )


def fit_gbt_regressor(X: np.ndarray, y: np.ndarray, cfg: GbtConfig | None = None) -> GbtRegressor:
    """Boosted regression trees on raw parcel features, predicting price."""
    cfg = cfg or GbtConfig()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.size == 0 or len(y) == 0:
        raise ValueError("empty training data")
    model = GbtRegressor(base=float(y.mean()), learning_rate=cfg.learning_rate, n_features=X.shape[1])
    rng = np.random.default_rng(cfg.seed)
    tree_cfg = TreeConfig(
        n_trees=1, max_depth=cfg.max_depth, min_leaf=cfg.min_leaf, mtry=X.shape[1], seed=cfg.seed
    )
    pred = np.full(len(y), model.base)
    rows = np.arange(len(y))
    for _ in range(cfg.n_rounds):
        residual = y - pred
        tree = _grow_tree(X, residual, rows, tree_cfg, rng, splitter="exact", regression=True)
        pred = pred + cfg.learning_rate * tree.apply(X)
        model.trees.append(tree)
        model.train_mse_history.append(float(np.mean((y - pred) ** 2)))
    return model
