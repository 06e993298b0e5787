'''Unsupervised first-order network embedding trained with negative sampling.

Every node has a single d-dimensional vector used both as target and as
context. For a target v_i, a few neighbors v_j are sampled and each observed
pair is contrasted against K nodes drawn from the negative-sampling table:

    loss(i, j) = -log s(u_i . u_j) - sum_k log s(-u_i . u_k)

where s is the logistic sigmoid. Training follows the parameter-server loop:
workers shuffle their node subsets, pull the rows a mini-batch touches,
apply one SGD step locally and push the updated rows back (async-overwrite),
with a barrier after each epoch. A fixed probe set of edges, held out of
training in both directions, is scored after every barrier to monitor
convergence.

With `flipped_neg_loss` the negative term is -log s(u_i . u_k), which rewards
large dot products for negatives too. It exists for comparison only.
'''
import logging
import os
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from . import binio
from .errors import ConfigError, FormatError, NonFiniteUpdateError, TrainingDivergedError
from .graph_store import PartitionedGraph
from .log import kv
from .param_store import ASYNC_OVERWRITE, ParamStore
from .workers import WorkerHandle, assign_workers, run_epochs

logger = logging.getLogger(__name__)

TABLE = 'unsup'
FORMAT_VERSION = 1
_EMB_MAGIC = b'NDPE'
PROBE_EDGE_FRACTION = 0.05


@dataclass
class UnsupConfig:
    '''Hyperparameters of the unsupervised trainer.

    `init_scale=None` means 0.5 / dim.
    '''
    dim: int = 64
    neighbors_per_step: int = 5
    negatives: int = 5
    learning_rate: float = 0.025
    max_epochs: int = 10
    batch_size: int = 512
    init_scale: Optional[float] = None
    seed: int = 0
    workers: Optional[int] = 1
    lr_decay: bool = False
    early_stop: bool = False
    patience: int = 3
    probe_pairs: int = 1024
    flipped_neg_loss: bool = False

    def validate(self) -> None:
        for name in ('dim', 'neighbors_per_step', 'negatives', 'batch_size', 'patience', 'probe_pairs'):
            if getattr(self, name) < 1:
                raise ConfigError(f"unsup.{name} must be >= 1, got {getattr(self, name)}")
        if self.workers is not None and self.workers < 1:
            raise ConfigError(f"unsup.workers must be >= 1 or empty, got {self.workers}")
        if self.learning_rate <= 0:
            raise ConfigError(f"unsup.learning_rate must be > 0, got {self.learning_rate}")
        if self.max_epochs < 0:
            raise ConfigError(f"unsup.max_epochs must be >= 0, got {self.max_epochs}")
        if self.init_scale is not None and self.init_scale <= 0:
            raise ConfigError(f"unsup.init_scale must be > 0, got {self.init_scale}")

    @property
    def effective_init_scale(self) -> float:
        return self.init_scale if self.init_scale is not None else 0.5 / self.dim


@dataclass
class EmbeddingTable:
    '''Dense embedding per node.

    Attributes:
        vectors (np.ndarray): (N, d) finite float64 matrix, row v is node v.
        probe_history (List[float]): Mean probe loss before training and after each epoch.
    '''
    vectors: np.ndarray
    probe_history: List[float] = field(default_factory=list)

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2:
            raise ValueError(f"embedding vectors must be 2-D, got shape {self.vectors.shape}")
        if not np.isfinite(self.vectors).all():
            raise NonFiniteUpdateError("embedding table contains non-finite values")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def num_nodes(self) -> int:
        return self.vectors.shape[0]

    def save(self, path: str, raw_ids: Optional[List[str]] = None) -> None:
        """Writes header (version, N, d) + N rows of little-endian float32.

        If `raw_ids` is given a sidecar `<path>.index` maps dense id to raw id.
        """
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, 'wb') as fh:
            binio.write_header(fh, _EMB_MAGIC, FORMAT_VERSION)
            binio.write_u64(fh, self.num_nodes)
            binio.write_u32(fh, self.dim)
            fh.write(self.vectors.astype('<f4').tobytes())
        if raw_ids is not None:
            with open(path + '.index', 'w', encoding='utf-8') as fh:
                for dense, raw in enumerate(raw_ids):
                    fh.write(f"{dense}\t{raw}\n")

    @classmethod
    def load(cls, path: str) -> 'EmbeddingTable':
        with open(path, 'rb') as fh:
            binio.read_header(fh, _EMB_MAGIC, [FORMAT_VERSION])
            n = binio.read_u64(fh)
            d = binio.read_u32(fh)
            data = fh.read(n * d * 4)
        if len(data) != n * d * 4:
            raise FormatError(f"{path}: expected {n}x{d} float32 rows")
        return cls(np.frombuffer(data, dtype='<f4').reshape(n, d).astype(np.float64))


def load_index(path: str) -> List[str]:
    """Reads the `<emb>.index` sidecar written by `EmbeddingTable.save`."""
    raw = []
    with open(path, 'r', encoding='utf-8') as fh:
        for line in fh:
            _, raw_id = line.rstrip('\n').split('\t', 1)
            raw.append(raw_id)
    return raw


class RawIdIndex:
    '''Raw id lookup backed by an embedding's `.index` sidecar.

    Offers the `dense_ids` / `raw_ids` interface of PartitionedGraph, so label
    and score files can be mapped without loading the graph store.
    '''

    def __init__(self, raw_ids: List[str]):
        self.raw_ids = list(raw_ids)
        self._ids = {raw: i for i, raw in enumerate(self.raw_ids)}

    @classmethod
    def for_embedding(cls, emb_path: str) -> 'RawIdIndex':
        return cls(load_index(emb_path + '.index'))

    @property
    def num_nodes(self) -> int:
        return len(self.raw_ids)

    def dense_ids(self, raw_ids) -> np.ndarray:
        return np.array([self._ids.get(str(r).strip(), -1) for r in raw_ids], dtype=np.int64)


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def batch_loss_and_grads(ui: np.ndarray, uj: np.ndarray, un: np.ndarray,
                         flipped_neg: bool = False
                         ) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Loss and gradients for P pairs at once.

    Args:
        ui: (P, d) target vectors.
        uj: (P, d) context vectors.
        un: (P, K, d) negative vectors.
        flipped_neg: Use -log s(u_i . u_k) for the negative term.

    Returns:
        (loss (P,), grad_i (P, d), grad_j (P, d), grad_negs (P, K, d)).
    """
    x_pos = np.einsum('pd,pd->p', ui, uj)
    x_neg = np.einsum('pd,pkd->pk', ui, un)
    c_pos = -_sigmoid(-x_pos)
    if flipped_neg:
        loss = _softplus(-x_pos) + _softplus(-x_neg).sum(axis=1)
        c_neg = -_sigmoid(-x_neg)
    else:
        loss = _softplus(-x_pos) + _softplus(x_neg).sum(axis=1)
        c_neg = _sigmoid(x_neg)
    grad_i = c_pos[:, None] * uj + np.einsum('pk,pkd->pd', c_neg, un)
    grad_j = c_pos[:, None] * ui
    grad_n = c_neg[:, :, None] * ui[:, None, :]
    return loss, grad_i, grad_j, grad_n


def _check_pair_inputs(u_i, u_j, negs) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    u_i = np.asarray(u_i, dtype=np.float64)
    u_j = np.asarray(u_j, dtype=np.float64)
    negs = np.asarray(negs, dtype=np.float64)
    if u_i.ndim != 1 or u_j.shape != u_i.shape:
        raise ValueError(f"u_i and u_j must be vectors of one length, got {u_i.shape} and {u_j.shape}")
    if negs.ndim == 1:
        negs = negs[None, :]
    if negs.shape[0] == 0 or negs.ndim != 2 or negs.shape[1] != u_i.shape[0]:
        raise ValueError(f"negs must be a non-empty list of {u_i.shape[0]}-vectors, got shape {negs.shape}")
    if not (np.isfinite(u_i).all() and np.isfinite(u_j).all() and np.isfinite(negs).all()):
        raise NonFiniteUpdateError("pair_loss inputs must be finite")
    return u_i, u_j, negs


def pair_loss(u_i, u_j, negs, flipped_neg: bool = False) -> float:
    """Negative-sampling loss of one observed pair against its negatives.

    Raises:
        ValueError: On a dimension mismatch or empty negatives.
        NonFiniteUpdateError: On NaN or infinite inputs.
    """
    u_i, u_j, negs = _check_pair_inputs(u_i, u_j, negs)
    loss, _, _, _ = batch_loss_and_grads(u_i[None], u_j[None], negs[None], flipped_neg)
    return float(loss[0])


def pair_grad(u_i, u_j, negs, flipped_neg: bool = False
              ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Analytic gradients of `pair_loss` w.r.t. u_i, u_j and each negative."""
    u_i, u_j, negs = _check_pair_inputs(u_i, u_j, negs)
    _, gi, gj, gn = batch_loss_and_grads(u_i[None], u_j[None], negs[None], flipped_neg)
    return gi[0], gj[0], gn[0]


def pair_keys(src: np.ndarray, ctx: np.ndarray, num_nodes: int) -> np.ndarray:
    """Direction-free int64 key of every (src, ctx) pair."""
    return np.minimum(src, ctx) * num_nodes + np.maximum(src, ctx)


@dataclass
class ProbeSet:
    '''Held-out (node, neighbor, negatives) triples scored after every epoch.

    `held` lists the direction-free keys of the probe edges; training never
    uses either direction of them as a positive pair.
    '''
    src: np.ndarray
    ctx: np.ndarray
    negs: np.ndarray
    held: np.ndarray

    @classmethod
    def draw(cls, g: PartitionedGraph, size: int, negatives: int, seed: int,
             max_fraction: float = PROBE_EDGE_FRACTION) -> 'ProbeSet':
        """Picks distinct edges, at most `max_fraction` of them (but at least one)."""
        rng = np.random.default_rng([seed, 0x5EED])
        indptr, indices = g.adjacency()
        count = min(size, max(1, int(len(indices) * max_fraction)), len(indices))
        ranks = np.sort(rng.choice(len(indices), size=count, replace=False))
        src = np.searchsorted(indptr, ranks, side='right') - 1
        ctx = indices[ranks]
        negs = g.sample_negative(count * negatives, rng).reshape(count, negatives)
        return cls(src, ctx, negs, np.unique(pair_keys(src, ctx, g.num_nodes)))

    def mean_loss(self, vectors: np.ndarray, flipped_neg: bool = False) -> float:
        loss, _, _, _ = batch_loss_and_grads(vectors[self.src], vectors[self.ctx],
                                             vectors[self.negs], flipped_neg)
        return float(loss.mean())


def init_embeddings(num_nodes: int, dim: int, scale: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.uniform(-scale, scale, size=(num_nodes, dim))


class UnsupTrainer:
    '''Runs the mini-batch loop of the unsupervised embedding on a ParamStore.

    Attributes:
        graph (PartitionedGraph): Training graph.
        store (ParamStore): Holds table 'unsup'.
        cfg (UnsupConfig): Hyperparameters.
        probe (ProbeSet): Held-out edges used for the per-epoch convergence signal.
        history (List[float]): Probe loss before training and after each epoch.
    '''

    def __init__(self, graph: PartitionedGraph, store: ParamStore, cfg: UnsupConfig):
        cfg.validate()
        self.graph = graph
        self.store = store
        self.cfg = cfg
        self.probe = ProbeSet.draw(graph, cfg.probe_pairs, cfg.negatives, cfg.seed)
        self.history: List[float] = []
        self._lr = cfg.learning_rate
        self._best = np.inf
        self._stale = 0

    def positive_pairs(self, batch: np.ndarray, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        """Samples (node, neighbor) training pairs for a batch, minus the held-out probe edges."""
        src, ctx = self.graph.sample_neighbors_batch(batch, self.cfg.neighbors_per_step, rng)
        keep = ~np.isin(pair_keys(src, ctx, self.graph.num_nodes), self.probe.held)
        return src[keep], ctx[keep]

    def _step(self, worker: WorkerHandle, batch: np.ndarray,
              rng: np.random.Generator, epoch: int) -> None:
        cfg = self.cfg
        src, ctx = self.positive_pairs(batch, rng)
        if len(src) == 0:
            return
        negs = self.graph.sample_negative(len(src) * cfg.negatives, rng).reshape(len(src), cfg.negatives)

        keys = np.unique(np.concatenate([src, ctx, negs.ravel()]))
        local = self.store.pull(keys, TABLE)
        ii = np.searchsorted(keys, src)
        jj = np.searchsorted(keys, ctx)
        nn = np.searchsorted(keys, negs)

        _, gi, gj, gn = batch_loss_and_grads(local[ii], local[jj], local[nn], cfg.flipped_neg_loss)
        grad = np.zeros_like(local)
        np.add.at(grad, ii, gi)
        np.add.at(grad, jj, gj)
        np.add.at(grad, nn.ravel(), gn.reshape(-1, local.shape[1]))
        local -= self._lr * grad
        self.store.push(keys, local, TABLE)

    def _end_epoch(self, epoch: int) -> bool:
        loss = self.probe.mean_loss(self.store.snapshot(TABLE), self.cfg.flipped_neg_loss)
        if not np.isfinite(loss):
            finite = [h for h in self.history if np.isfinite(h)]
            raise TrainingDivergedError('train-unsup', epoch + 1, finite[-1] if finite else None)
        self.history.append(loss)
        logger.info(kv(stage='train-unsup', epoch=epoch + 1, probe_loss=loss, lr=self._lr))
        if self.cfg.lr_decay:
            remaining = 1.0 - (epoch + 1) / max(self.cfg.max_epochs, 1)
            self._lr = self.cfg.learning_rate * max(remaining, 1e-4)
        if self.cfg.early_stop:
            if loss < self._best - 1e-6:
                self._best, self._stale = loss, 0
            else:
                self._stale += 1
                if self._stale >= self.cfg.patience:
                    logger.info(kv(stage='train-unsup', event='early_stop', epoch=epoch + 1))
                    return True
        return False

    def train(self) -> EmbeddingTable:
        cfg = self.cfg
        init = init_embeddings(self.graph.num_nodes, cfg.dim, cfg.effective_init_scale, cfg.seed)
        self.store.create_table(TABLE, init, ASYNC_OVERWRITE)
        initial = self.probe.mean_loss(init, cfg.flipped_neg_loss)
        self.history = [initial]
        self._best = initial
        logger.info(kv(stage='train-unsup', epoch=0, probe_loss=initial, nodes=self.graph.num_nodes,
                       dim=cfg.dim, workers=cfg.workers))

        workers = assign_workers(np.arange(self.graph.num_nodes), cfg.workers, cfg.seed)
        run_epochs(self.store, workers, self._step, cfg.max_epochs, cfg.batch_size, self._end_epoch,
                   stage='train-unsup')
        rejected = sum(w.rejected_batches for w in workers)
        if rejected:
            logger.warning(kv(stage='train-unsup', rejected_batches=rejected))
        return EmbeddingTable(self.store.snapshot(TABLE), probe_history=list(self.history))


def train_unsup(g: PartitionedGraph, store: Optional[ParamStore], cfg: UnsupConfig) -> EmbeddingTable:
    """Trains the unsupervised embedding table; see `UnsupTrainer`.

    Raises:
        TrainingDivergedError: If the probe loss becomes NaN or infinite.
    """
    if store is None:
        store = ParamStore(num_shards=g.num_shards)
    return UnsupTrainer(g, store, cfg).train()
