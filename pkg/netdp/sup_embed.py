'''Supervised neighbor-aggregation classifier over the interaction graph.

Each node v carries a trainable base vector u(0)_v of size k. One aggregation
step replaces a node's vector with the transformed mean of its neighbors':

    u(t)_v = s(W1 . mean_{j in N(v)} u(t-1)_j)

and after `steps` applications the default probability is y_hat = s(w2 . u_v).
Training minimizes the summed cross-entropy over the labeled train nodes plus
lam * (|base|^2 + |W1|^2 + |w2|^2).

Mini-batches are processed like the unsupervised trainer: the batch's
`steps`-hop neighborhood is sampled top-down (at most `fanout` neighbors per
node and step), the touched base rows and the dense parameters are pulled,
gradients are backpropagated through the sampled layers, base rows are pushed
as values (async-overwrite) and W1 / w2 as deltas (async-add).

Inference uses the full (degree-capped) neighborhood of every node, so scores
do not depend on a random seed.
'''
import logging
import os
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.special import expit

from . import binio
from .errors import ConfigError, LabelError, NonFiniteUpdateError, TrainingDivergedError
from .graph_store import PartitionedGraph
from .log import kv
from .param_store import ASYNC_ADD, ASYNC_OVERWRITE, ParamStore
from .workers import WorkerHandle, assign_workers, run_epochs

logger = logging.getLogger(__name__)

BASE_TABLE = 'sup_base'
DENSE_TABLE = 'sup_dense'
CLAMP_EPS = 1e-7
TRAIN, TEST = 'train', 'test'
FORMAT_VERSION = 1
_PARAMS_MAGIC = b'NDPP'


@dataclass
class SupConfig:
    '''Hyperparameters of the supervised trainer.

    `init_scale=None` means 0.5 / k. With `warm_start` the base vectors are
    copied from the unsupervised table, which then must have dimension k.
    '''
    k: int = 32
    steps: int = 2
    epochs: int = 10
    learning_rate: float = 0.01
    lam: float = 1e-5
    fanout: int = 25
    batch_size: int = 256
    init_scale: Optional[float] = None
    zero_init_w2: bool = False
    warm_start: bool = False
    seed: int = 0
    workers: Optional[int] = 1

    def validate(self) -> None:
        for name in ('k', 'steps', 'fanout', 'batch_size'):
            if getattr(self, name) < 1:
                raise ConfigError(f"sup.{name} must be >= 1, got {getattr(self, name)}")
        if self.workers is not None and self.workers < 1:
            raise ConfigError(f"sup.workers must be >= 1 or empty, got {self.workers}")
        if self.epochs < 0:
            raise ConfigError(f"sup.epochs must be >= 0, got {self.epochs}")
        if self.learning_rate <= 0:
            raise ConfigError(f"sup.learning_rate must be > 0, got {self.learning_rate}")
        if self.lam < 0:
            raise ConfigError(f"sup.lam must be >= 0, got {self.lam}")
        if self.init_scale is not None and self.init_scale <= 0:
            raise ConfigError(f"sup.init_scale must be > 0, got {self.init_scale}")

    @property
    def effective_init_scale(self) -> float:
        return self.init_scale if self.init_scale is not None else 0.5 / self.k


@dataclass
class SupervisedParams:
    '''Trainable state of the supervised module.

    Attributes:
        base_table (np.ndarray): (N, k) base vectors u(0).
        W1 (np.ndarray): (k, k) aggregation matrix.
        w2 (np.ndarray): (k,) prediction vector.
        lam (float): L2 coefficient.
        steps (int): Number of aggregation applications.
    '''
    base_table: np.ndarray
    W1: np.ndarray
    w2: np.ndarray
    lam: float = 1e-5
    steps: int = 2

    def __post_init__(self):
        k = self.base_table.shape[1]
        if self.W1.shape != (k, k):
            raise ValueError(f"W1 must be ({k}, {k}) to match base vectors, got {self.W1.shape}")
        if self.w2.shape != (k,):
            raise ValueError(f"w2 must be ({k},), got {self.w2.shape}")

    @property
    def k(self) -> int:
        return self.base_table.shape[1]

    def copy(self) -> 'SupervisedParams':
        return SupervisedParams(self.base_table.copy(), self.W1.copy(), self.w2.copy(),
                                self.lam, self.steps)

    def reg_norm(self) -> float:
        return float((self.base_table ** 2).sum() + (self.W1 ** 2).sum() + (self.w2 ** 2).sum())

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.base_table).all() and np.isfinite(self.W1).all()
                    and np.isfinite(self.w2).all())

    def save(self, path: str) -> None:
        with open(path, 'wb') as fh:
            binio.write_header(fh, _PARAMS_MAGIC, FORMAT_VERSION)
            binio.write_u32(fh, self.steps)
            binio.write_f64(fh, self.lam)
            binio.write_u64(fh, self.base_table.shape[0])
            binio.write_u32(fh, self.k)
            binio.write_array(fh, self.base_table, '<f8')
            binio.write_array(fh, self.W1, '<f8')
            binio.write_array(fh, self.w2, '<f8')

    @classmethod
    def load(cls, path: str) -> 'SupervisedParams':
        with open(path, 'rb') as fh:
            binio.read_header(fh, _PARAMS_MAGIC, [FORMAT_VERSION])
            steps = binio.read_u32(fh)
            lam = binio.read_f64(fh)
            n = binio.read_u64(fh)
            k = binio.read_u32(fh)
            base = binio.read_array(fh, '<f8').reshape(n, k)
            W1 = binio.read_array(fh, '<f8').reshape(k, k)
            w2 = binio.read_array(fh, '<f8')
        return cls(base, W1, w2, lam=lam, steps=steps)


@dataclass
class LabeledSet:
    '''Labeled nodes with their split and period tags.

    Attributes:
        nodes (np.ndarray): Dense node ids.
        y (np.ndarray): Binary labels, 1 = defaulted.
        split (np.ndarray): 'train' or 'test' per record.
        period (np.ndarray): Month tag per record (may be empty strings).
    '''
    nodes: np.ndarray
    y: np.ndarray
    split: np.ndarray
    period: np.ndarray

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=np.int64)
        self.y = np.asarray(self.y)
        self.split = np.asarray(self.split, dtype=object)
        self.period = np.asarray(self.period, dtype=object)
        n = len(self.nodes)
        if not (len(self.y) == len(self.split) == len(self.period) == n):
            raise LabelError("labeled set columns have different lengths")
        if n and not np.isin(self.y, (0, 1)).all():
            raise LabelError(f"labels must be 0 or 1, found {sorted(set(np.unique(self.y)) - {0, 1})}")
        self.y = self.y.astype(np.int8)
        bad_split = set(np.unique(self.split)) - {TRAIN, TEST}
        if bad_split:
            raise LabelError(f"split must be 'train' or 'test', found {sorted(bad_split)}")
        if len(np.unique(self.nodes)) != n:
            raise LabelError("a node is labeled more than once")
        overlap = (set(self.period[self.split == TRAIN]) & set(self.period[self.split == TEST])) - {''}
        if overlap:
            raise LabelError(f"train and test periods overlap: {sorted(overlap)}")

    def __len__(self) -> int:
        return len(self.nodes)

    def subset(self, mask: np.ndarray) -> 'LabeledSet':
        return LabeledSet(self.nodes[mask], self.y[mask], self.split[mask], self.period[mask])

    def train(self) -> 'LabeledSet':
        return self.subset(self.split == TRAIN)

    def test(self) -> 'LabeledSet':
        return self.subset(self.split == TEST)

    @classmethod
    def from_frame(cls, df: pd.DataFrame, g: PartitionedGraph) -> 'LabeledSet':
        """Builds a labeled set from columns raw_node_id, label, split[, period].

        Raises:
            LabelError: On missing columns, unknown node ids or invalid values.
        """
        missing = {'raw_node_id', 'label', 'split'} - set(df.columns)
        if missing:
            raise LabelError(f"labels are missing columns {sorted(missing)}")
        raw = df['raw_node_id'].astype(str).str.strip()
        nodes = g.dense_ids(raw)
        if (nodes < 0).any():
            unknown = raw[nodes < 0].tolist()
            raise LabelError(f"{len(unknown)} labeled nodes are not in the graph, e.g. {unknown[:3]}")
        labels = pd.to_numeric(df['label'], errors='coerce')
        if labels.isna().any():
            raise LabelError("labels must be 0 or 1")
        period = df['period'].fillna('').astype(str) if 'period' in df.columns else pd.Series([''] * len(df))
        return cls(nodes, labels.to_numpy(), df['split'].astype(str).str.strip().to_numpy(),
                   period.to_numpy())

    @classmethod
    def from_csv(cls, path: str, g: PartitionedGraph) -> 'LabeledSet':
        return cls.from_frame(pd.read_csv(path, dtype={'raw_node_id': str, 'period': str}), g)

    def to_frame(self, raw_ids: Sequence[str]) -> pd.DataFrame:
        return pd.DataFrame({'raw_node_id': [raw_ids[v] for v in self.nodes], 'label': self.y,
                             'split': self.split, 'period': self.period})


@dataclass
class AggregationDiagnostics:
    '''Counters collected while aggregating and scoring.'''
    isolated_fallbacks: int = 0
    clamped: int = 0


# --- single-node operations ---

def aggregate_step(v: int, prev: np.ndarray, W1: np.ndarray, g: PartitionedGraph,
                   diagnostics: Optional[AggregationDiagnostics] = None) -> np.ndarray:
    """One aggregation step for node v: s(W1 . mean of prev over v's neighbors).

    A node without out-neighbors falls back to its own previous vector, which
    is counted in `diagnostics`.
    """
    nbrs = g.neighbors(v)
    if len(nbrs) == 0:
        if diagnostics is not None:
            diagnostics.isolated_fallbacks += 1
        nbrs = np.array([v], dtype=np.int64)
    mean = np.asarray(prev, dtype=np.float64)[nbrs].mean(axis=0)
    if W1.shape != (mean.shape[0], mean.shape[0]):
        raise ValueError(f"W1 shape {W1.shape} does not match vectors of size {mean.shape[0]}")
    return expit(W1 @ mean)


def predict_default(u, w2) -> float:
    """Default probability s(w2 . u)."""
    u = np.asarray(u, dtype=np.float64)
    w2 = np.asarray(w2, dtype=np.float64)
    if u.shape != w2.shape or u.ndim != 1:
        raise ValueError(f"u and w2 must be vectors of one length, got {u.shape} and {w2.shape}")
    return float(expit(u @ w2))


def cross_entropy(preds, labels, diagnostics: Optional[AggregationDiagnostics] = None) -> float:
    preds = np.asarray(preds, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if preds.shape != labels.shape:
        raise ValueError(f"preds and labels differ in length: {preds.shape} vs {labels.shape}")
    clipped = np.clip(preds, CLAMP_EPS, 1.0 - CLAMP_EPS)
    if diagnostics is not None:
        diagnostics.clamped += int((clipped != preds).sum())
    return float(-(labels * np.log(clipped) + (1.0 - labels) * np.log1p(-clipped)).sum())


def sup_loss(preds, labels, params: SupervisedParams,
             diagnostics: Optional[AggregationDiagnostics] = None) -> float:
    """Summed cross-entropy plus lam times the squared norm of every parameter.

    Predictions are clamped to [1e-7, 1 - 1e-7]; clamps are counted in `diagnostics`.
    """
    return cross_entropy(preds, labels, diagnostics) + params.lam * params.reg_norm()


# --- sampled computation graphs ---

@dataclass
class Neighborhood:
    '''Layered receptive field of a batch of target nodes.

    `layers[t]` holds the node ids whose vectors are needed after t aggregation
    steps; `layers[steps]` are the targets themselves and `layers[0]` the base
    rows. `mats[t - 1]` is the row-normalized (len(layers[t]), len(layers[t-1]))
    averaging matrix of step t.
    '''
    layers: List[np.ndarray]
    mats: List[sp.csr_matrix] = field(default_factory=list)
    isolated: int = 0


def _expand(g: PartitionedGraph, frontier: np.ndarray, fanout: Optional[int],
            rng: Optional[np.random.Generator]) -> Tuple[np.ndarray, np.ndarray]:
    if rng is None:
        indptr, indices = g.adjacency()
        starts = indptr[frontier]
        lengths = indptr[frontier + 1] - starts
        if fanout is not None:
            lengths = np.minimum(lengths, fanout)
        offsets = np.arange(int(lengths.sum())) - np.repeat(np.cumsum(lengths) - lengths, lengths)
        owners = np.repeat(frontier, lengths)
        return owners, indices[np.repeat(starts, lengths) + offsets]
    return g.sample_neighbors_batch(frontier, fanout, rng)


def build_neighborhood(g: PartitionedGraph, targets: np.ndarray, steps: int,
                       fanout: Optional[int] = None,
                       rng: Optional[np.random.Generator] = None) -> Neighborhood:
    """Builds the `steps`-hop receptive field of `targets` top-down.

    With an rng, at most `fanout` neighbors per node and step are sampled;
    without one the stored neighbor lists are used (first `fanout` if given).
    """
    targets = np.asarray(targets, dtype=np.int64)
    if len(np.unique(targets)) != len(targets):
        raise ValueError("targets of a neighborhood must be distinct")
    if rng is not None and fanout is None:
        fanout = g.max_degree
    layers = [targets]
    mats = []
    isolated = 0
    for _ in range(steps):
        frontier = layers[-1]
        owners, nbrs = _expand(g, frontier, fanout, rng)
        lonely = frontier[~np.isin(frontier, owners)]
        isolated += len(lonely)
        owners = np.concatenate([owners, lonely])
        nbrs = np.concatenate([nbrs, lonely])

        below = np.unique(nbrs)
        # batch-sized position lookup; frontier entries are distinct
        order = np.argsort(frontier, kind='stable')
        rows = order[np.searchsorted(frontier[order], owners)]
        cols = np.searchsorted(below, nbrs)
        counts = np.bincount(rows, minlength=len(frontier)).astype(np.float64)
        mat = sp.csr_matrix((1.0 / counts[rows], (rows, cols)), shape=(len(frontier), len(below)))
        mats.append(mat)
        layers.append(below)
    layers.reverse()
    mats.reverse()
    return Neighborhood(layers, mats, isolated)


def forward(base_rows: np.ndarray, W1: np.ndarray, w2: np.ndarray,
            nbhd: Neighborhood) -> Tuple[List[np.ndarray], np.ndarray]:
    """Returns the activations of every layer and y_hat for the targets."""
    hs = [base_rows]
    for mat in nbhd.mats:
        hs.append(expit((mat @ hs[-1]) @ W1.T))
    return hs, expit(hs[-1] @ w2)


def backward(hs: List[np.ndarray], y_hat: np.ndarray, y: np.ndarray, W1: np.ndarray,
             w2: np.ndarray, nbhd: Neighborhood) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of the summed cross-entropy w.r.t. base rows, W1 and w2."""
    dlogit = y_hat - y
    g_w2 = hs[-1].T @ dlogit
    g_W1 = np.zeros_like(W1)
    dh = np.outer(dlogit, w2)
    for t in range(len(nbhd.mats), 0, -1):
        h = hs[t]
        dpre = dh * h * (1.0 - h)
        z = nbhd.mats[t - 1] @ hs[t - 1]
        g_W1 += dpre.T @ z
        dh = nbhd.mats[t - 1].T @ (dpre @ W1)
    return dh, g_W1, g_w2


def sup_objective_and_grads(params: SupervisedParams, g: PartitionedGraph, nodes: np.ndarray,
                            y: np.ndarray) -> Tuple[float, SupervisedParams]:
    """Full-batch `sup_loss` over `nodes` and its gradient, on full neighborhoods.

    Returns:
        (loss, grads) with grads laid out as a SupervisedParams.
    """
    nbhd = build_neighborhood(g, nodes, params.steps)
    hs, y_hat = forward(params.base_table[nbhd.layers[0]], params.W1, params.w2, nbhd)
    loss = sup_loss(y_hat, y, params)
    d_rows, g_W1, g_w2 = backward(hs, y_hat, np.asarray(y, dtype=np.float64), params.W1, params.w2, nbhd)
    g_base = np.zeros_like(params.base_table)
    g_base[nbhd.layers[0]] = d_rows
    lam2 = 2.0 * params.lam
    grads = SupervisedParams(g_base + lam2 * params.base_table, g_W1 + lam2 * params.W1,
                             g_w2 + lam2 * params.w2, params.lam, params.steps)
    return loss, grads


# --- full-graph inference ---

def mean_operator(g: PartitionedGraph, diagnostics: Optional[AggregationDiagnostics] = None) -> sp.csr_matrix:
    """(N, N) row-normalized adjacency; sinks average over themselves."""
    indptr, indices = g.adjacency()
    deg = np.diff(indptr)
    n = g.num_nodes
    sinks = np.flatnonzero(deg == 0)
    if diagnostics is not None:
        diagnostics.isolated_fallbacks += len(sinks)
    rows = np.concatenate([np.repeat(np.arange(n), deg), sinks])
    cols = np.concatenate([indices, sinks])
    weights = 1.0 / np.maximum(deg, 1)
    return sp.csr_matrix((weights[rows], (rows, cols)), shape=(n, n))


def represent_all(params: SupervisedParams, g: PartitionedGraph,
                  op: Optional[sp.csr_matrix] = None) -> np.ndarray:
    """Supervised representation u(steps) of every node, (N, k)."""
    if op is None:
        op = mean_operator(g)
    h = params.base_table
    for _ in range(params.steps):
        h = expit((op @ h) @ params.W1.T)
    return h


def score_all(params: SupervisedParams, g: PartitionedGraph,
              op: Optional[sp.csr_matrix] = None) -> np.ndarray:
    """y_hat for every node on full neighborhoods."""
    return expit(represent_all(params, g, op) @ params.w2)


# --- training ---

def init_params(g: PartitionedGraph, cfg: SupConfig,
                warm_start: Optional[np.ndarray] = None) -> SupervisedParams:
    rng = np.random.default_rng([cfg.seed, 0x5C0])
    if warm_start is not None:
        warm_start = np.asarray(warm_start, dtype=np.float64)
        if warm_start.shape != (g.num_nodes, cfg.k):
            raise ConfigError(f"warm start needs a ({g.num_nodes}, {cfg.k}) table, "
                              f"got {warm_start.shape}; set sup.k to the unsupervised dim")
        base = warm_start.copy()
    else:
        scale = cfg.effective_init_scale
        base = rng.uniform(-scale, scale, size=(g.num_nodes, cfg.k))
    limit = np.sqrt(6.0 / (2 * cfg.k))
    W1 = rng.uniform(-limit, limit, size=(cfg.k, cfg.k))
    if cfg.zero_init_w2:
        w2 = np.zeros(cfg.k)
    else:
        limit2 = np.sqrt(6.0 / (cfg.k + 1))
        w2 = rng.uniform(-limit2, limit2, size=cfg.k)
    return SupervisedParams(base, W1, w2, lam=cfg.lam, steps=cfg.steps)


class SupTrainer:
    '''Mini-batch trainer of the supervised module on a ParamStore.

    Attributes:
        graph (PartitionedGraph): Training graph.
        labels (LabeledSet): Train split of the labeled set.
        store (ParamStore): Holds tables 'sup_base' and 'sup_dense'.
        cfg (SupConfig): Hyperparameters.
        history (List[float]): Train objective before training and after each epoch.
        diagnostics (AggregationDiagnostics): Isolated-node and clamp counters.
    '''

    def __init__(self, graph: PartitionedGraph, labels: LabeledSet, store: ParamStore,
                 cfg: SupConfig, warm_start: Optional[np.ndarray] = None):
        cfg.validate()
        if len(labels) == 0:
            raise LabelError("no labeled training nodes")
        if len(np.unique(labels.y)) < 2:
            raise LabelError(f"training labels contain a single class ({int(labels.y[0])})")
        self.graph = graph
        self.labels = labels
        self.store = store
        self.cfg = cfg
        self.history: List[float] = []
        self.diagnostics = AggregationDiagnostics()
        self._warm = warm_start
        self._label_of = np.full(graph.num_nodes, -1, dtype=np.int8)
        self._label_of[labels.nodes] = labels.y
        self.op = mean_operator(graph)

    def _pull_dense(self) -> Tuple[np.ndarray, np.ndarray]:
        k = self.cfg.k
        dense = self.store.pull(np.arange(k + 1), DENSE_TABLE)
        return dense[:k], dense[k]

    def current_params(self) -> SupervisedParams:
        W1, w2 = self._pull_dense()
        return SupervisedParams(self.store.snapshot(BASE_TABLE), W1, w2, self.cfg.lam, self.cfg.steps)

    def _step(self, worker: WorkerHandle, batch: np.ndarray,
              rng: np.random.Generator, epoch: int) -> None:
        cfg = self.cfg
        nbhd = build_neighborhood(self.graph, batch, cfg.steps, cfg.fanout, rng)
        keys = nbhd.layers[0]
        base = self.store.pull(keys, BASE_TABLE)
        W1, w2 = self._pull_dense()
        hs, y_hat = forward(base, W1, w2, nbhd)
        y = self._label_of[batch].astype(np.float64)
        d_rows, g_W1, g_w2 = backward(hs, y_hat, y, W1, w2, nbhd)

        lr, lam2 = cfg.learning_rate, 2.0 * cfg.lam
        base -= lr * (d_rows + lam2 * base)
        # dense parameters take the batch-mean gradient; their share of the
        # regularizer is |batch| / |train| of the full term
        share = 1.0 / len(self.labels)
        delta = np.vstack([-lr * (g_W1 / len(batch) + lam2 * share * W1),
                           -lr * (g_w2 / len(batch) + lam2 * share * w2)])
        if not (np.isfinite(base).all() and np.isfinite(delta).all()):
            raise NonFiniteUpdateError(f"sup step produced non-finite values at epoch {epoch}")
        self.store.push(keys, base, BASE_TABLE)
        self.store.push(np.arange(cfg.k + 1), delta, DENSE_TABLE)
        self.diagnostics.isolated_fallbacks += nbhd.isolated

    def objective(self) -> float:
        params = self.current_params()
        y_hat = score_all(params, self.graph, self.op)[self.labels.nodes]
        return sup_loss(y_hat, self.labels.y, params, self.diagnostics)

    def _end_epoch(self, epoch: int) -> bool:
        loss = self.objective()
        if not np.isfinite(loss):
            finite = [h for h in self.history if np.isfinite(h)]
            raise TrainingDivergedError('train-sup', epoch + 1, finite[-1] if finite else None)
        self.history.append(loss)
        logger.info(kv(stage='train-sup', epoch=epoch + 1, train_loss=loss,
                       mean_loss=loss / len(self.labels)))
        return False

    def train(self) -> SupervisedParams:
        cfg = self.cfg
        params = init_params(self.graph, cfg, self._warm if cfg.warm_start else None)
        self.store.create_table(BASE_TABLE, params.base_table, ASYNC_OVERWRITE)
        self.store.create_table(DENSE_TABLE, np.vstack([params.W1, params.w2]), ASYNC_ADD)
        self.history = [self.objective()]
        logger.info(kv(stage='train-sup', epoch=0, train_loss=self.history[0],
                       labeled=len(self.labels), k=cfg.k, steps=cfg.steps, workers=cfg.workers))

        workers = assign_workers(self.labels.nodes, cfg.workers, cfg.seed)
        run_epochs(self.store, workers, self._step, cfg.epochs, cfg.batch_size, self._end_epoch,
                   stage='train-sup')
        rejected = sum(w.rejected_batches for w in workers)
        if rejected:
            logger.warning(kv(stage='train-sup', rejected_batches=rejected))
        if self.diagnostics.clamped:
            logger.info(kv(stage='train-sup', clamped_predictions=self.diagnostics.clamped))
        return self.current_params()


def train_sup(g: PartitionedGraph, labels: LabeledSet, store: Optional[ParamStore],
              cfg: SupConfig, warm_start: Optional[np.ndarray] = None
              ) -> Tuple[SupervisedParams, pd.Series]:
    """Trains on the train split and scores every labeled node (train and test).

    Returns:
        (params, scores) where scores is a Series of y_hat indexed by dense node id.

    Raises:
        LabelError: If the train split is empty or holds a single class.
        TrainingDivergedError: If the train objective becomes NaN or infinite.
    """
    if store is None:
        store = ParamStore(num_shards=g.num_shards)
    trainer = SupTrainer(g, labels.train(), store, cfg, warm_start)
    params = trainer.train()
    y_hat = score_all(params, g, trainer.op)
    scores = pd.Series(y_hat[labels.nodes], index=pd.Index(labels.nodes, name='node'), name='y_hat')
    return params, scores


def write_scores(path: str, scores: pd.Series, raw_ids: Sequence[str]) -> None:
    """Writes `raw_node_id,y_hat` CSV rows for a Series indexed by dense id."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    frame = pd.DataFrame({'raw_node_id': [raw_ids[v] for v in scores.index],
                          'y_hat': scores.to_numpy()})
    frame.to_csv(path, index=False, float_format='%.10g')


def read_scores(path: str, g: PartitionedGraph, column: str = 'y_hat') -> pd.Series:
    """Reads a `raw_node_id,<column>` CSV into a Series indexed by dense id.

    Rows whose raw id is not in the graph are dropped with a warning.
    """
    df = pd.read_csv(path, dtype={'raw_node_id': str})
    if column not in df.columns:
        raise LabelError(f"{path} has no column {column!r}")
    nodes = g.dense_ids(df['raw_node_id'])
    known = nodes >= 0
    if not known.all():
        logger.warning(kv(event='unknown_score_rows', file=path, rows=int((~known).sum())))
    values = pd.to_numeric(df[column], errors='coerce').to_numpy()[known]
    return pd.Series(values, index=pd.Index(nodes[known], name='node'), name=column)
