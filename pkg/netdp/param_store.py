'''In-process sharded parameter store with pull / push / barrier semantics.

The store holds named tables of dense row vectors. Row keys are dense ids and
are assigned to shards with the same `shard_of` hash the graph store uses, so
node v's embedding and node v's adjacency list live in shards with the same
index. Each shard has its own lock; a pull or push holds the lock of every
shard it touches while copying, which makes each row update atomic (a reader
never sees half of one push and half of another). Different rows in one push
may become visible at different times.

Two update modes exist per table:
    async-overwrite  the pushed vector replaces the stored one (last write wins)
    async-add        the pushed vector is added to the stored one

`barrier(epoch)` is a rendezvous over the registered workers. The last worker
to arrive advances `version`; since pushes complete before a worker calls the
barrier, nothing pushed during epoch e is still in flight once epoch e + 1
starts.
'''
import logging
import threading
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from .errors import BarrierTimeoutError, NonFiniteUpdateError, UnknownKeyError
from .graph_store import shard_of
from .log import kv

logger = logging.getLogger(__name__)

ASYNC_OVERWRITE = 'async-overwrite'
ASYNC_ADD = 'async-add'
UPDATE_MODES = (ASYNC_OVERWRITE, ASYNC_ADD)


class ParamTable:
    '''One named table split across the store's shards.

    Attributes:
        name (str): Table name.
        num_rows (int): Keys are 0 .. num_rows - 1.
        dim (int): Length of every row vector.
        update_mode (str): 'async-overwrite' or 'async-add'.
    '''

    def __init__(self, name: str, init: np.ndarray, update_mode: str, num_shards: int):
        if update_mode not in UPDATE_MODES:
            raise ValueError(f"unknown update_mode {update_mode!r}; choose one of {UPDATE_MODES}")
        init = np.asarray(init, dtype=np.float64)
        if init.ndim != 2:
            raise ValueError(f"table init must be 2-D (rows, dim), got shape {init.shape}")
        if not np.isfinite(init).all():
            raise NonFiniteUpdateError(f"initial values of table {name!r} are not finite")
        self.name = name
        self.num_rows, self.dim = init.shape
        self.update_mode = update_mode
        self.owner = shard_of(np.arange(self.num_rows, dtype=np.int64), num_shards)
        self.local = np.zeros(self.num_rows, dtype=np.int64)
        self.shards: List[np.ndarray] = []
        self.locks = [threading.Lock() for _ in range(num_shards)]
        for sid in range(num_shards):
            rows = np.flatnonzero(self.owner == sid)
            self.local[rows] = np.arange(len(rows))
            self.shards.append(init[rows].copy())

    def _check_keys(self, keys: np.ndarray) -> None:
        if len(keys) and (keys.min() < 0 or keys.max() >= self.num_rows):
            bad = keys[(keys < 0) | (keys >= self.num_rows)][0]
            raise UnknownKeyError(f"key {int(bad)} is not in table {self.name!r} "
                                  f"(rows 0..{self.num_rows - 1})")

    def _by_shard(self, keys: np.ndarray) -> Iterable[Tuple[int, np.ndarray]]:
        owner = self.owner[keys]
        for sid in np.unique(owner):
            yield int(sid), np.flatnonzero(owner == sid)

    def pull(self, keys: np.ndarray) -> np.ndarray:
        self._check_keys(keys)
        out = np.empty((len(keys), self.dim), dtype=np.float64)
        for sid, pos in self._by_shard(keys):
            with self.locks[sid]:
                out[pos] = self.shards[sid][self.local[keys[pos]]]
        return out

    def push(self, keys: np.ndarray, values: np.ndarray) -> None:
        self._check_keys(keys)
        if values.shape != (len(keys), self.dim):
            raise ValueError(f"push to {self.name!r} expects values of shape "
                             f"({len(keys)}, {self.dim}), got {values.shape}")
        if not np.isfinite(values).all():
            raise NonFiniteUpdateError(f"push to {self.name!r} rejected: non-finite values")
        if self.update_mode == ASYNC_OVERWRITE and len(np.unique(keys)) != len(keys):
            # keep only the last occurrence of a repeated key
            _, last_rev = np.unique(keys[::-1], return_index=True)
            keep = np.sort(len(keys) - 1 - last_rev)
            keys, values = keys[keep], values[keep]
        for sid, pos in self._by_shard(keys):
            rows = self.local[keys[pos]]
            with self.locks[sid]:
                if self.update_mode == ASYNC_OVERWRITE:
                    self.shards[sid][rows] = values[pos]
                else:
                    np.add.at(self.shards[sid], rows, values[pos])

    def snapshot(self) -> np.ndarray:
        out = np.empty((self.num_rows, self.dim), dtype=np.float64)
        for sid in range(len(self.shards)):
            with self.locks[sid]:
                out[self.owner == sid] = self.shards[sid]
        return out


class ParamStore:
    '''Sharded parameter tables shared by all training workers.

    Attributes:
        num_shards (int): Shards per table.
        version (int): Number of completed barriers (epochs).
        barrier_timeout (float): Seconds a worker waits at the barrier before failing.
    '''

    def __init__(self, num_shards: int = 1, barrier_timeout: float = 600.0):
        if num_shards < 1:
            raise ValueError(f"num_shards must be >= 1, got {num_shards}")
        self.num_shards = num_shards
        self.barrier_timeout = barrier_timeout
        self.version = 0
        self.tables: Dict[str, ParamTable] = {}
        self._barrier = threading.Barrier(1, action=self._advance, timeout=barrier_timeout)
        self._num_workers = 1

    def create_table(self, name: str, init: np.ndarray,
                     update_mode: str = ASYNC_OVERWRITE) -> ParamTable:
        """Creates (or replaces) a table initialized with the rows of `init`."""
        table = ParamTable(name, init, update_mode, self.num_shards)
        self.tables[name] = table
        logger.debug(kv(event='table_created', table=name, rows=table.num_rows,
                        dim=table.dim, mode=update_mode))
        return table

    def table(self, name: str) -> ParamTable:
        try:
            return self.tables[name]
        except KeyError:
            raise UnknownKeyError(f"no table named {name!r}") from None

    def pull(self, keys: Sequence[int], table: str) -> np.ndarray:
        """Returns a point-in-time copy of the requested rows, one per key.

        Raises:
            UnknownKeyError: If a key or the table does not exist.
        """
        return self.table(table).pull(np.asarray(keys, dtype=np.int64).reshape(-1))

    def push(self, keys: Sequence[int], values: np.ndarray, table: str) -> None:
        """Writes rows according to the table's update mode.

        Raises:
            NonFiniteUpdateError: If any value is NaN or infinite; nothing is written.
            UnknownKeyError: If a key or the table does not exist.
            ValueError: If the value shape does not match the keys and the table width.
        """
        self.table(table).push(np.asarray(keys, dtype=np.int64).reshape(-1),
                               np.asarray(values, dtype=np.float64))

    def snapshot(self, table: str) -> np.ndarray:
        """Full copy of a table in key order."""
        return self.table(table).snapshot()

    def register_workers(self, num_workers: int) -> None:
        """Starts a training round: sets the barrier parties and resets `version` to 0.

        Tables survive, so a second trainer can share the store with the first.
        """
        if num_workers < 1:
            raise ValueError(f"num_workers must be >= 1, got {num_workers}")
        self._num_workers = num_workers
        self.version = 0
        self._barrier = threading.Barrier(num_workers, action=self._advance,
                                          timeout=self.barrier_timeout)

    def _advance(self) -> None:
        self.version += 1

    def barrier(self, epoch: int) -> None:
        """Blocks until every registered worker has called barrier for `epoch`.

        Raises:
            ValueError: If `epoch` does not match the store's current version.
            BarrierTimeoutError: If the deadline passes or another worker aborted.
        """
        if epoch != self.version:
            raise ValueError(f"barrier called for epoch {epoch} but store is at version {self.version}")
        try:
            self._barrier.wait()
        except threading.BrokenBarrierError:
            raise BarrierTimeoutError(
                f"barrier for epoch {epoch} broken: a worker failed or the "
                f"{self.barrier_timeout}s deadline passed") from None

    def abort(self) -> None:
        """Breaks the barrier so that workers waiting on it fail fast."""
        self._barrier.abort()


# Functional forms of the store operations.

def pull(store: ParamStore, keys: Sequence[int], table: str) -> np.ndarray:
    return store.pull(keys, table)


def push(store: ParamStore, updates: Sequence[Tuple[int, np.ndarray]], table: str) -> None:
    """Pushes (key, vector) pairs."""
    if not updates:
        return
    keys = [k for k, _ in updates]
    values = np.stack([np.asarray(v, dtype=np.float64) for _, v in updates])
    store.push(keys, values, table)


def barrier(store: ParamStore, epoch: int) -> None:
    store.barrier(epoch)
