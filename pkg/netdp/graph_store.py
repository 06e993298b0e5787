'''Sharded adjacency-list store for directed interaction graphs.

Raw node ids (arbitrary strings or integers) are remapped at ingestion to dense
ids in [0, N), in order of first appearance. The cleaned edge set (no
self-loops, no duplicates, out-degree capped) is grouped into adjacency lists,
and each list is placed in exactly one shard chosen by `shard_of`. A node's
neighbor lookup therefore touches a single shard, which is the property the
trainers rely on when they pull the adjacency lists of a mini-batch.

Besides the shards the graph keeps an out-degree table and the cumulative
negative-sampling table (unigram^alpha over out-degrees).

On-disk layout of a serialized store directory:
    meta      N, num_shards, alpha, max_degree, edge count
    remap     dense id -> raw id strings
    shard_<i> node ids, CSR offsets and neighbor ids of shard i
All files use the `binio` codec and carry a format version.
'''
import logging
import os
from dataclasses import dataclass
from typing import Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import binio
from .errors import IngestError, NoNeighborsError, NotBuiltError
from .log import kv

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
_META_MAGIC = b'NDPM'
_REMAP_MAGIC = b'NDPR'
_SHARD_MAGIC = b'NDPS'

DEFAULT_ALPHA = 0.75
DEFAULT_MAX_DEGREE = 1000
DEFAULT_MAX_SKIP_RATE = 0.01

EdgeRecord = Union[str, Sequence]


def splitmix64(keys: np.ndarray) -> np.ndarray:
    """Vectorized splitmix64 finalizer over uint64 keys."""
    z = np.asarray(keys, dtype=np.uint64).copy()
    with np.errstate(over='ignore'):
        z += np.uint64(0x9E3779B97F4A7C15)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        z = z ^ (z >> np.uint64(31))
    return z


def shard_of(keys, num_shards: int):
    """Deterministic hash partition of dense ids into `num_shards` buckets.

    Used for graph shards, parameter-store shards and worker assignment alike.
    Returns an int for a scalar key and an int64 array otherwise.
    """
    if num_shards < 1:
        raise ValueError(f"num_shards must be >= 1, got {num_shards}")
    scalar = np.ndim(keys) == 0
    buckets = (splitmix64(np.atleast_1d(keys)) % np.uint64(num_shards)).astype(np.int64)
    return int(buckets[0]) if scalar else buckets


def _gather_segments(indptr: np.ndarray, indices: np.ndarray,
                     rows: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Concatenates the CSR rows `rows`, returning (new indptr, new indices)."""
    starts = indptr[rows]
    lengths = indptr[rows + 1] - starts
    new_indptr = np.zeros(len(rows) + 1, dtype=np.int64)
    np.cumsum(lengths, out=new_indptr[1:])
    total = int(new_indptr[-1])
    if total == 0:
        return new_indptr, np.zeros(0, dtype=np.int64)
    offsets = np.arange(total, dtype=np.int64) - np.repeat(new_indptr[:-1], lengths)
    return new_indptr, indices[np.repeat(starts, lengths) + offsets]


@dataclass
class IngestStats:
    '''Counters collected while ingesting an edge stream.'''
    records: int = 0
    skipped: int = 0
    self_loops: int = 0
    duplicates: int = 0
    capped_nodes: int = 0

    @property
    def skip_rate(self) -> float:
        total = self.records + self.skipped
        return self.skipped / total if total else 0.0


class GraphShard:
    '''One partition of the adjacency lists, stored in CSR form.

    Attributes:
        shard_id (int): Index of this shard.
        nodes (np.ndarray): Sorted dense ids of the targets stored here.
        indptr (np.ndarray): CSR offsets, `len(nodes) + 1` entries.
        indices (np.ndarray): Concatenated neighbor lists.
        reads (int): Number of lookups served, for locality checks.
    '''

    def __init__(self, shard_id: int, nodes: np.ndarray, indptr: np.ndarray, indices: np.ndarray):
        self.shard_id = shard_id
        self.nodes = nodes
        self.indptr = indptr
        self.indices = indices
        self.reads = 0

    def __len__(self) -> int:
        return len(self.nodes)

    def _rows(self, targets: np.ndarray) -> np.ndarray:
        if len(self.nodes) == 0:
            return np.full(len(targets), -1, dtype=np.int64)
        pos = np.minimum(np.searchsorted(self.nodes, targets), len(self.nodes) - 1)
        return np.where(self.nodes[pos] == targets, pos, -1)

    def lookup(self, v: int) -> np.ndarray:
        self.reads += 1
        row = self._rows(np.array([v], dtype=np.int64))[0]
        if row < 0:
            return np.zeros(0, dtype=np.int64)
        return self.indices[self.indptr[row]:self.indptr[row + 1]].copy()

    def sample_batch(self, targets: np.ndarray, s: int,
                     rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        """Samples up to `s` neighbors without replacement for each target.

        Targets missing from the shard (sinks) contribute nothing.

        Returns:
            (owners, neighbors): parallel arrays, `owners[i]` is the target that
            `neighbors[i]` was sampled for.
        """
        self.reads += 1
        rows = self._rows(targets)
        keep = rows >= 0
        targets, rows = targets[keep], rows[keep]
        if len(rows) == 0:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty
        seg_indptr, flat = _gather_segments(self.indptr, self.indices, rows)
        lengths = np.diff(seg_indptr)
        seg = np.repeat(np.arange(len(rows)), lengths)
        # Random keys sorted within each segment give a uniform draw without replacement.
        order = np.lexsort((rng.random(len(flat)), seg))
        rank = np.arange(len(flat)) - np.repeat(seg_indptr[:-1], lengths)
        take = order[rank < s]
        return targets[seg[take]], flat[take]


class PartitionedGraph:
    '''Hash-partitioned adjacency lists with degree and negative-sampling tables.

    Attributes:
        shards (List[GraphShard]): The partitions; node v lives in shard `shard_of(v)`.
        num_shards (int): Number of shards.
        num_nodes (int): N, the number of dense ids.
        raw_ids (List[str]): Raw id of every dense id.
        degree_table (np.ndarray): Out-degree per node after cleanup and capping.
        neg_table (np.ndarray | None): Cumulative unigram^alpha distribution.
        alpha (float): Exponent of the negative-sampling distribution.
        max_degree (int): Adjacency lists were truncated to this length.
        stats (IngestStats | None): Counters from ingestion, None after loading.
    '''

    def __init__(self, shards: List[GraphShard], num_nodes: int, raw_ids: List[str],
                 alpha: float = DEFAULT_ALPHA, max_degree: int = DEFAULT_MAX_DEGREE,
                 stats: Optional[IngestStats] = None):
        self.shards = shards
        self.num_shards = len(shards)
        self.num_nodes = num_nodes
        self.raw_ids = raw_ids
        self.alpha = alpha
        self.max_degree = max_degree
        self.stats = stats
        self._dense_ids: Optional[dict] = None

        self.degree_table = np.zeros(num_nodes, dtype=np.int64)
        for shard in shards:
            self.degree_table[shard.nodes] = np.diff(shard.indptr)
        self.neg_table: Optional[np.ndarray] = None
        self._indptr: Optional[np.ndarray] = None
        self._indices: Optional[np.ndarray] = None

    # --- lookups ---

    def shard_for(self, v: int) -> GraphShard:
        return self.shards[shard_of(v, self.num_shards)]

    def _check_node(self, v: int) -> None:
        if not 0 <= v < self.num_nodes:
            raise KeyError(f"node {v} is not in the graph (N={self.num_nodes})")

    def neighbors(self, v: int) -> np.ndarray:
        """Full out-neighbor list of v; empty for sinks. Reads exactly one shard."""
        self._check_node(v)
        return self.shard_for(v).lookup(v)

    def degree(self, v: int) -> int:
        return int(self.degree_table[v])

    def sample_neighbors(self, v: int, s: int, rng: np.random.Generator) -> np.ndarray:
        """Samples min(s, degree(v)) distinct neighbors uniformly.

        Raises:
            NoNeighborsError: If v is a sink; callers skip the node.
        """
        if s < 1:
            raise ValueError(f"s must be positive, got {s}")
        nbrs = self.neighbors(v)
        if len(nbrs) == 0:
            raise NoNeighborsError(v)
        return rng.choice(nbrs, size=min(s, len(nbrs)), replace=False)

    def sample_neighbors_batch(self, targets: np.ndarray, s: int,
                               rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        """Vectorized `sample_neighbors` over a mini-batch, grouped by shard.

        Sinks are skipped silently. Output order is by shard, then by target
        position within the shard, so it is deterministic for a given rng.
        """
        targets = np.asarray(targets, dtype=np.int64)
        owner = shard_of(targets, self.num_shards)
        owners, nbrs = [], []
        for sid in np.unique(owner):
            o, n = self.shards[sid].sample_batch(targets[owner == sid], s, rng)
            owners.append(o)
            nbrs.append(n)
        if not owners:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty
        return np.concatenate(owners), np.concatenate(nbrs)

    def build_neg_table(self, alpha: Optional[float] = None) -> np.ndarray:
        """Builds the cumulative unigram^alpha table over out-degrees.

        With alpha=0 every node, sinks included, gets the same weight.
        """
        if alpha is not None:
            self.alpha = alpha
        weights = np.power(self.degree_table.astype(np.float64), self.alpha)
        total = weights.sum()
        if total <= 0:
            raise IngestError("cannot build a negative-sampling table for a graph without edges")
        cum = np.cumsum(weights) / total
        cum[-1] = 1.0
        self.neg_table = cum
        return cum

    def neg_probabilities(self) -> np.ndarray:
        if self.neg_table is None:
            raise NotBuiltError("negative-sampling table has not been built")
        return np.diff(self.neg_table, prepend=0.0)

    def sample_negative(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """Draws `count` node ids i.i.d. from the negative-sampling distribution."""
        if self.neg_table is None:
            raise NotBuiltError("negative-sampling table has not been built")
        if count < 1:
            raise ValueError(f"count must be positive, got {count}")
        idx = np.searchsorted(self.neg_table, rng.random(count), side='right')
        return np.minimum(idx, self.num_nodes - 1)

    def adjacency(self) -> Tuple[np.ndarray, np.ndarray]:
        """Global CSR (indptr, indices) over dense ids, assembled from the shards once."""
        if self._indptr is None:
            indptr = np.zeros(self.num_nodes + 1, dtype=np.int64)
            np.cumsum(self.degree_table, out=indptr[1:])
            indices = np.zeros(int(indptr[-1]), dtype=np.int64)
            for shard in self.shards:
                lengths = np.diff(shard.indptr)
                if len(shard.indices) == 0:
                    continue
                dest = np.repeat(indptr[shard.nodes], lengths) + (
                    np.arange(len(shard.indices)) - np.repeat(shard.indptr[:-1], lengths))
                indices[dest] = shard.indices
            self._indptr, self._indices = indptr, indices
        return self._indptr, self._indices

    def shard_sizes(self) -> List[int]:
        return [len(shard) for shard in self.shards]

    def _id_map(self) -> dict:
        if self._dense_ids is None:
            self._dense_ids = {raw: i for i, raw in enumerate(self.raw_ids)}
        return self._dense_ids

    def dense_id(self, raw_id) -> int:
        try:
            return self._id_map()[str(raw_id).strip()]
        except KeyError:
            raise KeyError(f"raw id {raw_id!r} is not in the graph") from None

    def dense_ids(self, raw_ids: Iterable) -> np.ndarray:
        """Vector form of `dense_id`; unknown raw ids map to -1."""
        id_map = self._id_map()
        return np.array([id_map.get(str(r).strip(), -1) for r in raw_ids], dtype=np.int64)

    def num_edges(self) -> int:
        return int(self.degree_table.sum())

    # --- persistence ---

    def save(self, out_dir: str) -> None:
        """Serializes the store into `out_dir` (created if missing)."""
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, 'meta'), 'wb') as fh:
            binio.write_header(fh, _META_MAGIC, FORMAT_VERSION)
            binio.write_u64(fh, self.num_nodes)
            binio.write_u32(fh, self.num_shards)
            binio.write_f64(fh, self.alpha)
            binio.write_u64(fh, self.max_degree)
            binio.write_u64(fh, self.num_edges())
        with open(os.path.join(out_dir, 'remap'), 'wb') as fh:
            binio.write_header(fh, _REMAP_MAGIC, FORMAT_VERSION)
            binio.write_strings(fh, self.raw_ids)
        for shard in self.shards:
            with open(os.path.join(out_dir, f'shard_{shard.shard_id}'), 'wb') as fh:
                binio.write_header(fh, _SHARD_MAGIC, FORMAT_VERSION)
                binio.write_u32(fh, shard.shard_id)
                binio.write_array(fh, shard.nodes, '<u8')
                binio.write_array(fh, shard.indptr, '<u8')
                binio.write_array(fh, shard.indices, '<u8')
        logger.info(kv(event='graph_saved', dir=out_dir, nodes=self.num_nodes,
                       edges=self.num_edges(), shards=self.num_shards))

    @classmethod
    def load(cls, store_dir: str) -> 'PartitionedGraph':
        """Loads a store written by `save` and rebuilds the degree and negative tables.

        Raises:
            IngestError: If the directory is missing files.
            FormatError: If a file has the wrong magic or version.
        """
        meta_path = os.path.join(store_dir, 'meta')
        if not os.path.exists(meta_path):
            raise IngestError(f"{store_dir} is not a graph store (no meta file)")
        with open(meta_path, 'rb') as fh:
            binio.read_header(fh, _META_MAGIC, [FORMAT_VERSION])
            num_nodes = binio.read_u64(fh)
            num_shards = binio.read_u32(fh)
            alpha = binio.read_f64(fh)
            max_degree = binio.read_u64(fh)
            num_edges = binio.read_u64(fh)
        with open(os.path.join(store_dir, 'remap'), 'rb') as fh:
            binio.read_header(fh, _REMAP_MAGIC, [FORMAT_VERSION])
            raw_ids = binio.read_strings(fh)
        shards = []
        for sid in range(num_shards):
            path = os.path.join(store_dir, f'shard_{sid}')
            if not os.path.exists(path):
                raise IngestError(f"graph store {store_dir} is missing {path}")
            with open(path, 'rb') as fh:
                binio.read_header(fh, _SHARD_MAGIC, [FORMAT_VERSION])
                stored_id = binio.read_u32(fh)
                nodes = binio.read_array(fh, '<u8').astype(np.int64)
                indptr = binio.read_array(fh, '<u8').astype(np.int64)
                indices = binio.read_array(fh, '<u8').astype(np.int64)
            shards.append(GraphShard(stored_id, nodes, indptr, indices))
        graph = cls(shards, num_nodes, raw_ids, alpha=alpha, max_degree=max_degree)
        if graph.num_edges() != num_edges:
            raise IngestError(f"graph store {store_dir} is inconsistent: meta says {num_edges} "
                              f"edges, shards hold {graph.num_edges()}")
        graph.build_neg_table()
        return graph


# --- ingestion ---

def read_edge_lines(path: str) -> Iterator[str]:
    """Yields the lines of a UTF-8 edge file without their trailing newline."""
    with open(path, 'r', encoding='utf-8') as fh:
        for line in fh:
            yield line.rstrip('\r\n')


def _parse_record(record: EdgeRecord) -> Optional[Tuple[str, str]]:
    """Returns (src, dst) raw ids, None for comments/blank lines; raises ValueError if malformed."""
    if isinstance(record, str):
        if not record.strip() or record.lstrip().startswith('#'):
            return None
        fields = record.split('\t')
    else:
        fields = list(record)
    if len(fields) not in (2, 3):
        raise ValueError(f"expected 2 or 3 fields, got {len(fields)}")
    src, dst = str(fields[0]).strip(), str(fields[1]).strip()
    if not src or not dst:
        raise ValueError("empty node id")
    if len(fields) == 3:
        float(fields[2])  # weight column is validated, then ignored
    return src, dst


def ingest_edges(edge_stream: Iterable[EdgeRecord], num_shards: int = 1,
                 alpha: float = DEFAULT_ALPHA, max_degree: int = DEFAULT_MAX_DEGREE,
                 max_skip_rate: float = DEFAULT_MAX_SKIP_RATE, seed: int = 0,
                 reverse: bool = False, symmetrize: bool = False) -> PartitionedGraph:
    """Builds a PartitionedGraph from an edge stream.

    Args:
        edge_stream: Lines `src<TAB>dst[<TAB>weight]` (comments starting with '#'
            are ignored) or (src, dst[, weight]) tuples.
        num_shards: Number of adjacency-list shards.
        alpha: Exponent of the unigram negative-sampling distribution.
        max_degree: Adjacency lists longer than this are cut to a uniform random subset.
        max_skip_rate: Fraction of malformed records tolerated before failing.
        seed: Seed for the degree-cap subsets.
        reverse: Ingest every edge reversed (train on in-adjacency).
        symmetrize: Add the reverse of every edge.

    Returns:
        The graph, with `stats` holding the ingestion counters.

    Raises:
        IngestError: On empty input, a skip rate above `max_skip_rate`, or no
            edge left after cleanup.
    """
    if num_shards < 1:
        raise ValueError(f"num_shards must be >= 1, got {num_shards}")
    if max_degree < 1:
        raise ValueError(f"max_degree must be >= 1, got {max_degree}")
    stats = IngestStats()
    dense: dict = {}
    raw_ids: List[str] = []
    src_list: List[int] = []
    dst_list: List[int] = []

    for record in edge_stream:
        try:
            parsed = _parse_record(record)
        except (ValueError, TypeError) as e:
            stats.skipped += 1
            if stats.skipped <= 10:
                logger.warning(kv(event='malformed_edge', reason=str(e).replace(' ', '_')))
            continue
        if parsed is None:
            continue
        stats.records += 1
        ids = []
        for raw in parsed:
            idx = dense.get(raw)
            if idx is None:
                idx = len(raw_ids)
                dense[raw] = idx
                raw_ids.append(raw)
            ids.append(idx)
        src_list.append(ids[0])
        dst_list.append(ids[1])

    if stats.records == 0:
        raise IngestError("edge input is empty")
    if stats.skip_rate > max_skip_rate:
        raise IngestError(f"skipped {stats.skipped} malformed records "
                          f"({stats.skip_rate:.2%} > {max_skip_rate:.2%})")

    n = len(raw_ids)
    src = np.array(src_list, dtype=np.int64)
    dst = np.array(dst_list, dtype=np.int64)
    if reverse:
        src, dst = dst, src
    if symmetrize:
        src, dst = np.concatenate([src, dst]), np.concatenate([dst, src])

    loops = src == dst
    stats.self_loops = int(loops.sum())
    src, dst = src[~loops], dst[~loops]

    # Drop duplicates but keep first-appearance order of the survivors.
    _, first = np.unique(src * n + dst, return_index=True)
    first.sort()
    stats.duplicates = len(src) - len(first)
    src, dst = src[first], dst[first]
    if len(src) == 0:
        raise IngestError("no edges left after dropping self-loops and duplicates")

    # Grouping pass: stable sort by source keeps neighbor order.
    perm = np.argsort(src, kind='stable')
    indices = dst[perm]
    counts = np.bincount(src, minlength=n)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])

    over = np.flatnonzero(counts > max_degree)
    if len(over):
        rng = np.random.default_rng(seed)
        keep = np.ones(len(indices), dtype=bool)
        for v in over:
            start, deg = indptr[v], counts[v]
            dropped = np.ones(deg, dtype=bool)
            dropped[rng.choice(deg, size=max_degree, replace=False)] = False
            keep[start:start + deg] = ~dropped
        indices = indices[keep]
        counts = np.minimum(counts, max_degree)
        np.cumsum(counts, out=indptr[1:])
        stats.capped_nodes = len(over)

    owner = shard_of(np.arange(n, dtype=np.int64), num_shards)
    shards = []
    for sid in range(num_shards):
        nodes = np.flatnonzero((owner == sid) & (counts > 0)).astype(np.int64)
        shard_indptr, shard_indices = _gather_segments(indptr, indices, nodes)
        shards.append(GraphShard(sid, nodes, shard_indptr, shard_indices))

    graph = PartitionedGraph(shards, n, raw_ids, alpha=alpha, max_degree=max_degree, stats=stats)
    graph._indptr, graph._indices = indptr, indices
    graph.build_neg_table()
    logger.info(kv(event='ingested', nodes=n, edges=graph.num_edges(), shards=num_shards,
                   skipped=stats.skipped, self_loops=stats.self_loops,
                   duplicates=stats.duplicates, capped_nodes=stats.capped_nodes))
    return graph


def ingest_edge_file(path: str, num_shards: int = 1, **kwargs) -> PartitionedGraph:
    return ingest_edges(read_edge_lines(path), num_shards=num_shards, **kwargs)


# Functional aliases of the PartitionedGraph operations.

def neighbors(g: PartitionedGraph, v: int) -> np.ndarray:
    return g.neighbors(v)


def sample_neighbors(g: PartitionedGraph, v: int, s: int, rng: np.random.Generator) -> np.ndarray:
    return g.sample_neighbors(v, s, rng)


def sample_negative(g: PartitionedGraph, count: int, rng: np.random.Generator) -> np.ndarray:
    return g.sample_negative(count, rng)
