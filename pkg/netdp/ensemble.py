'''MART ensemble over [unsupervised embedding, supervised score] features.

Every labeled node becomes a (d+1)-vector: its unsupervised embedding followed
by the supervised default probability. A logistic-loss gradient-boosted forest
is fit on the train split:

    margin_0 = log-odds of the train positive rate
    tree_t   fits the residuals y - s(margin_{t-1}) with exact greedy
             variance-reduction splits
    margin_t = margin_{t-1} + shrinkage * tree_t(x)

Leaf values are one Newton step sum(r) / sum(p(1-p)) per leaf, halved while
the leaf's loss under shrinkage would increase, so the training loss never
goes up when a tree is added.

The forest's probability can then be blended with an external benchmark score
using a weight picked on the train split.
'''
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import expit

from . import binio
from .errors import ConfigError, FeatureBuildError, LabelError
from .evaluation import ScoredSet, ks_statistic
from .log import kv
from .sup_embed import TRAIN, LabeledSet
from .unsup_embed import EmbeddingTable

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
_MODEL_MAGIC = b'NDPF'
MAX_DROP_RATE = 0.05
_MIN_GAIN = 1e-12
_MAX_HALVINGS = 40


@dataclass
class MartConfig:
    num_trees: int = 200
    max_depth: int = 4
    shrinkage: float = 0.1
    min_leaf: int = 20
    include_sup_emb: bool = False
    blend_step: float = 0.05

    def validate(self) -> None:
        if self.num_trees < 1:
            raise ConfigError(f"mart.num_trees must be >= 1, got {self.num_trees}")
        if self.max_depth < 0:
            raise ConfigError(f"mart.max_depth must be >= 0, got {self.max_depth}")
        if not 0 < self.shrinkage <= 1:
            raise ConfigError(f"mart.shrinkage must be in (0, 1], got {self.shrinkage}")
        if self.min_leaf < 1:
            raise ConfigError(f"mart.min_leaf must be >= 1, got {self.min_leaf}")
        if not 0 < self.blend_step <= 1:
            raise ConfigError(f"mart.blend_step must be in (0, 1], got {self.blend_step}")


# --- features ---

@dataclass
class FeatureRow:
    node: int
    x: np.ndarray
    y: int
    split: str


@dataclass
class FeatureSet:
    '''Design matrix of the labeled nodes that have every input.

    Attributes:
        nodes (np.ndarray): Dense node ids, one per row.
        X (np.ndarray): (rows, d + 1) features; the last column is the supervised score
            unless supervised representations were appended after it.
        y (np.ndarray): Binary labels.
        split (np.ndarray): 'train' / 'test' tags.
        period (np.ndarray): Month tags.
        dropped (int): Labeled nodes left out for a missing input.
    '''
    nodes: np.ndarray
    X: np.ndarray
    y: np.ndarray
    split: np.ndarray
    period: np.ndarray
    dropped: int = 0

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def num_features(self) -> int:
        return self.X.shape[1]

    def subset(self, mask: np.ndarray) -> 'FeatureSet':
        return FeatureSet(self.nodes[mask], self.X[mask], self.y[mask], self.split[mask],
                          self.period[mask])

    def train(self) -> 'FeatureSet':
        return self.subset(self.split == TRAIN)

    def test(self) -> 'FeatureSet':
        return self.subset(self.split != TRAIN)

    def rows(self) -> List[FeatureRow]:
        return [FeatureRow(int(v), self.X[i], int(self.y[i]), str(self.split[i]))
                for i, v in enumerate(self.nodes)]

    @classmethod
    def from_rows(cls, rows: Sequence[FeatureRow]) -> 'FeatureSet':
        if not rows:
            raise LabelError("no feature rows")
        return cls(np.array([r.node for r in rows], dtype=np.int64),
                   np.vstack([np.asarray(r.x, dtype=np.float64) for r in rows]),
                   np.array([r.y for r in rows], dtype=np.int8),
                   np.array([r.split for r in rows], dtype=object),
                   np.array([''] * len(rows), dtype=object))


def build_features(emb: EmbeddingTable, sup_scores: pd.Series, labels: LabeledSet,
                   sup_repr: Optional[np.ndarray] = None,
                   max_drop_rate: float = MAX_DROP_RATE) -> FeatureSet:
    """Concatenates embedding and supervised score for every labeled node.

    Args:
        emb: Unsupervised embedding table.
        sup_scores: y_hat indexed by dense node id.
        labels: The labeled set (both splits).
        sup_repr: Optional (N, k) supervised representations appended to each row.
        max_drop_rate: Largest tolerated fraction of labeled nodes without inputs.

    Raises:
        FeatureBuildError: If more than `max_drop_rate` of the labeled nodes are dropped.
    """
    nodes = labels.nodes
    score = sup_scores.reindex(nodes).to_numpy(dtype=np.float64)
    ok = (nodes < emb.num_nodes) & np.isfinite(score)
    if sup_repr is not None:
        ok &= nodes < len(sup_repr)
    dropped = int((~ok).sum())
    if len(nodes) and dropped / len(nodes) > max_drop_rate:
        raise FeatureBuildError(f"{dropped} of {len(nodes)} labeled nodes lack an embedding "
                                f"or a supervised score (> {max_drop_rate:.0%})")
    if dropped:
        logger.warning(kv(event='feature_rows_dropped', dropped=dropped, labeled=len(nodes)))
    kept = nodes[ok]
    parts = [emb.vectors[kept], score[ok][:, None]]
    if sup_repr is not None:
        parts.append(np.asarray(sup_repr, dtype=np.float64)[kept])
    return FeatureSet(kept, np.hstack(parts), labels.y[ok], labels.split[ok], labels.period[ok],
                      dropped=dropped)


# --- trees ---

@dataclass
class RegressionTree:
    '''Binary regression tree in flat-array form.

    Node 0 is the root. For internal nodes `feature >= 0` and rows with
    x[feature] <= threshold go to `left`; leaves have feature -1 and carry `value`.
    '''
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    max_depth: int = 0

    @property
    def num_nodes(self) -> int:
        return len(self.feature)

    def depth(self) -> int:
        def walk(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(walk(self.left[i]), walk(self.right[i]))
        return walk(0)

    def predict_one(self, x: np.ndarray) -> float:
        i = 0
        while self.feature[i] >= 0:
            i = self.left[i] if x[self.feature[i]] <= self.threshold[i] else self.right[i]
        return float(self.value[i])

    def predict(self, X: np.ndarray) -> np.ndarray:
        idx = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            feat = self.feature[idx]
            inner = feat >= 0
            if not inner.any():
                return self.value[idx]
            go_left = X[rows[inner], feat[inner]] <= self.threshold[idx[inner]]
            idx[inner] = np.where(go_left, self.left[idx[inner]], self.right[idx[inner]])


@dataclass
class SplitChoice:
    gain: float
    feature: int
    threshold: float


def best_split(X: np.ndarray, r: np.ndarray, rows: np.ndarray, min_leaf: int,
               sorted_idx: Optional[np.ndarray] = None) -> Optional[SplitChoice]:
    """Exact greedy split of `rows` maximizing the reduction of squared error of `r`.

    gain = S_L^2 / n_L + S_R^2 / n_R - S^2 / n, evaluated between consecutive
    distinct values of every feature; thresholds are the midpoints. Ties keep
    the lowest feature index, then the lowest threshold.

    Args:
        sorted_idx: Per-feature argsort of all of X's rows (computed if None).

    Returns:
        The best split, or None if no split leaves `min_leaf` rows on both
        sides with positive gain.
    """
    m = len(rows)
    if m < 2 * min_leaf:
        return None
    if sorted_idx is None:
        sorted_idx = np.argsort(X, axis=0, kind='stable')
    member = np.zeros(len(X), dtype=bool)
    member[rows] = True
    total = r[rows].sum()
    parent = total * total / m
    n_left = np.arange(1, m, dtype=np.float64)
    allowed = (n_left >= min_leaf) & (m - n_left >= min_leaf)
    best = None
    for j in range(X.shape[1]):
        col = sorted_idx[:, j]
        col = col[member[col]]
        xs = X[col, j]
        cs = np.cumsum(r[col])[:-1]
        ok = allowed & (xs[:-1] < xs[1:])
        if not ok.any():
            continue
        gain = cs ** 2 / n_left + (total - cs) ** 2 / (m - n_left) - parent
        gain = np.where(ok, gain, -np.inf)
        i = int(np.argmax(gain))
        if gain[i] > _MIN_GAIN and (best is None or gain[i] > best.gain):
            thr = 0.5 * (xs[i] + xs[i + 1])
            if thr >= xs[i + 1]:
                thr = xs[i]
            best = SplitChoice(float(gain[i]), j, float(thr))
    return best


def _logloss(margin: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, margin) - y * margin


def _leaf_value(margin: np.ndarray, y: np.ndarray, shrinkage: float) -> float:
    p = expit(margin)
    hess = (p * (1.0 - p)).sum()
    if hess <= 0:
        return 0.0
    value = (y - p).sum() / hess
    before = _logloss(margin, y).sum()
    for _ in range(_MAX_HALVINGS):
        if _logloss(margin + shrinkage * value, y).sum() <= before:
            return float(value)
        value *= 0.5
    return 0.0


def fit_tree(X: np.ndarray, y: np.ndarray, margin: np.ndarray, cfg: MartConfig,
             sorted_idx: Optional[np.ndarray] = None) -> RegressionTree:
    """Fits one tree to the logistic residuals at `margin`."""
    if sorted_idx is None:
        sorted_idx = np.argsort(X, axis=0, kind='stable')
    r = y - expit(margin)
    feature, threshold, left, right, value = [], [], [], [], []

    def grow(rows: np.ndarray, depth: int) -> int:
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        split = best_split(X, r, rows, cfg.min_leaf, sorted_idx) if depth < cfg.max_depth else None
        if split is None:
            value[node] = _leaf_value(margin[rows], y[rows], cfg.shrinkage)
            return node
        goes_left = X[rows, split.feature] <= split.threshold
        feature[node] = split.feature
        threshold[node] = split.threshold
        left[node] = grow(rows[goes_left], depth + 1)
        right[node] = grow(rows[~goes_left], depth + 1)
        return node

    grow(np.arange(len(X)), 0)
    return RegressionTree(np.array(feature, dtype=np.int32), np.array(threshold),
                          np.array(left, dtype=np.int32), np.array(right, dtype=np.int32),
                          np.array(value), max_depth=cfg.max_depth)


# --- forest ---

@dataclass
class Forest:
    '''Boosted trees: prediction = s(base_score + shrinkage * sum of tree outputs).

    Attributes:
        trees (List[RegressionTree]): In training order.
        shrinkage (float): Learning rate applied to every tree.
        base_score (float): Prior log-odds.
        num_features (int): Expected input width.
        blend_weight (float | None): Weight of the forest in the benchmark blend.
        include_sup_emb (bool): Whether the features carry supervised representations.
        loss_history (List[float]): Mean train logistic loss after 0, 1, ... trees.
    '''
    trees: List[RegressionTree]
    shrinkage: float
    base_score: float
    num_features: int
    blend_weight: Optional[float] = None
    include_sup_emb: bool = False
    loss_history: List[float] = field(default_factory=list)

    def save(self, path: str) -> None:
        """Version-tagged binary dump; loading it back predicts bit-identically."""
        with open(path, 'wb') as fh:
            binio.write_header(fh, _MODEL_MAGIC, FORMAT_VERSION)
            binio.write_f64(fh, self.shrinkage)
            binio.write_f64(fh, self.base_score)
            binio.write_u32(fh, self.num_features)
            binio.write_f64(fh, math.nan if self.blend_weight is None else self.blend_weight)
            binio.write_u32(fh, int(self.include_sup_emb))
            binio.write_u32(fh, len(self.trees))
            for tree in self.trees:
                binio.write_u32(fh, tree.max_depth)
                binio.write_array(fh, tree.feature, '<i4')
                binio.write_array(fh, tree.threshold, '<f8')
                binio.write_array(fh, tree.left, '<i4')
                binio.write_array(fh, tree.right, '<i4')
                binio.write_array(fh, tree.value, '<f8')

    @classmethod
    def load(cls, path: str) -> 'Forest':
        with open(path, 'rb') as fh:
            binio.read_header(fh, _MODEL_MAGIC, [FORMAT_VERSION])
            shrinkage = binio.read_f64(fh)
            base_score = binio.read_f64(fh)
            num_features = binio.read_u32(fh)
            weight = binio.read_f64(fh)
            include_sup_emb = bool(binio.read_u32(fh))
            trees = []
            for _ in range(binio.read_u32(fh)):
                max_depth = binio.read_u32(fh)
                trees.append(RegressionTree(
                    binio.read_array(fh, '<i4'), binio.read_array(fh, '<f8'),
                    binio.read_array(fh, '<i4'), binio.read_array(fh, '<i4'),
                    binio.read_array(fh, '<f8'), max_depth=max_depth))
        return cls(trees, shrinkage, base_score, num_features,
                   blend_weight=None if math.isnan(weight) else weight,
                   include_sup_emb=include_sup_emb)


def _as_matrix(rows: Union[FeatureSet, Sequence[FeatureRow]]) -> Tuple[np.ndarray, np.ndarray]:
    fs = rows if isinstance(rows, FeatureSet) else FeatureSet.from_rows(rows)
    return fs.X, fs.y.astype(np.float64)


def train_mart(rows: Union[FeatureSet, Sequence[FeatureRow]], cfg: MartConfig) -> Forest:
    """Fits `cfg.num_trees` logistic-loss boosting rounds on the given rows.

    Raises:
        LabelError: If the rows hold a single class.
    """
    cfg.validate()
    X, y = _as_matrix(rows)
    if not np.isfinite(X).all():
        raise ValueError("features must be finite")
    positives = y.sum()
    if positives == 0 or positives == len(y):
        raise LabelError("MART needs both classes in the training rows")
    base = float(np.log(positives / (len(y) - positives)))
    margin = np.full(len(y), base)
    sorted_idx = np.argsort(X, axis=0, kind='stable')
    forest = Forest([], cfg.shrinkage, base, X.shape[1], include_sup_emb=cfg.include_sup_emb)
    forest.loss_history.append(float(_logloss(margin, y).mean()))
    logger.info(kv(stage='train-ensemble', rows=len(y), features=X.shape[1], base_score=base,
                   loss=forest.loss_history[0]))
    for t in range(cfg.num_trees):
        tree = fit_tree(X, y, margin, cfg, sorted_idx)
        margin = margin + cfg.shrinkage * tree.predict(X)
        forest.trees.append(tree)
        forest.loss_history.append(float(_logloss(margin, y).mean()))
        if (t + 1) % 25 == 0 or t + 1 == cfg.num_trees:
            logger.info(kv(stage='train-ensemble', trees=t + 1, loss=forest.loss_history[-1]))
    return forest


def mart_predict(f: Forest, x) -> float:
    """Probability for one feature vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (f.num_features,):
        raise ValueError(f"expected a vector of {f.num_features} features, got shape {x.shape}")
    total = 0.0
    for tree in f.trees:
        total += tree.predict_one(x)
    return float(expit(f.base_score + f.shrinkage * total))


def predict_batch(f: Forest, X) -> np.ndarray:
    """Row-wise `mart_predict`, with the same summation order."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != f.num_features:
        raise ValueError(f"expected (rows, {f.num_features}) features, got shape {X.shape}")
    total = np.zeros(len(X))
    for tree in f.trees:
        total += tree.predict(X)
    return expit(f.base_score + f.shrinkage * total)


# --- benchmark blend ---

def blend(netdp_score, bench_score, w: float):
    """w * netdp_score + (1 - w) * bench_score; works on scalars and arrays.

    Raises:
        ValueError: If w is outside [0, 1].
    """
    if not 0.0 <= w <= 1.0:
        raise ValueError(f"blend weight must be in [0, 1], got {w}")
    return w * netdp_score + (1.0 - w) * bench_score


def blend_grid(step: float = 0.05) -> np.ndarray:
    n = int(round(1.0 / step))
    return np.round(np.linspace(0.0, 1.0, n + 1), 10)


def select_blend_weight(netdp_score: np.ndarray, bench_score: np.ndarray, y: np.ndarray,
                        step: float = 0.05) -> Tuple[float, float]:
    """Grid-searches the blend weight maximizing KS; ties keep the smallest weight.

    Returns:
        (weight, ks at that weight).
    """
    best_w, best_ks = 0.0, -1.0
    for w in blend_grid(step):
        ks = ks_statistic(ScoredSet(blend(netdp_score, bench_score, float(w)), y))
        if ks > best_ks:
            best_w, best_ks = float(w), ks
    logger.info(kv(stage='blend', weight=best_w, train_ks=best_ks))
    return best_w, best_ks
