'''Worker handles and the epoch loop shared by both trainers.

Each epoch, every worker shuffles its own node subset with an rng seeded by
(global seed, worker id, epoch), walks it in mini-batches calling the
trainer's step function, and finally waits at the store barrier. With one
worker everything runs on the calling thread, which is the deterministic mode.
'''
import logging
import os
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from .errors import BarrierTimeoutError, NonFiniteUpdateError, TrainingDivergedError
from .graph_store import shard_of
from .log import kv
from .param_store import ParamStore

logger = logging.getLogger(__name__)

StepFn = Callable[['WorkerHandle', np.ndarray, np.random.Generator, int], None]
EpochEndFn = Callable[[int], bool]


@dataclass
class WorkerHandle:
    '''State of one training worker.

    Attributes:
        worker_id (int): Index of the worker.
        nodes (np.ndarray): The node subset V_k assigned to this worker.
        seed (int): Global seed; the epoch rng is derived from (seed, worker_id, epoch).
        cursor (int): Number of batches processed in the current epoch.
        rejected_batches (int): Batches whose push was refused as non-finite.
        epoch_rejected (int): The same count for the current epoch only.
    '''
    worker_id: int
    nodes: np.ndarray
    seed: int
    cursor: int = 0
    rejected_batches: int = 0
    epoch_rejected: int = 0

    def rng_for_epoch(self, epoch: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, self.worker_id, epoch])

    def batches(self, epoch: int, batch_size: int, rng: np.random.Generator):
        order = rng.permutation(self.nodes)
        for start in range(0, len(order), batch_size):
            yield order[start:start + batch_size]


def assign_workers(nodes: np.ndarray, num_workers: Optional[int], seed: int) -> List[WorkerHandle]:
    """Partitions `nodes` across workers by hashing node ids.

    `num_workers=None` uses one worker per CPU.
    """
    if num_workers is None:
        num_workers = os.cpu_count() or 1
    nodes = np.asarray(nodes, dtype=np.int64)
    owner = shard_of(nodes, num_workers) if len(nodes) else np.zeros(0, dtype=np.int64)
    return [WorkerHandle(k, nodes[owner == k], seed) for k in range(num_workers)]


def _run_worker_epoch(store: ParamStore, worker: WorkerHandle, step: StepFn,
                      epoch: int, batch_size: int) -> None:
    rng = worker.rng_for_epoch(epoch)
    worker.cursor = 0
    worker.epoch_rejected = 0
    for batch in worker.batches(epoch, batch_size, rng):
        try:
            step(worker, batch, rng, epoch)
        except NonFiniteUpdateError as e:
            worker.rejected_batches += 1
            worker.epoch_rejected += 1
            logger.warning(kv(event='batch_rejected', worker=worker.worker_id,
                              epoch=epoch, batch=worker.cursor, reason=str(e).replace(' ', '_')))
        worker.cursor += 1
    store.barrier(epoch)


def run_epochs(store: ParamStore, workers: List[WorkerHandle], step: StepFn,
               num_epochs: int, batch_size: int,
               on_epoch_end: Optional[EpochEndFn] = None, stage: str = 'train') -> int:
    """Runs up to `num_epochs` epochs of `step` over all workers.

    Args:
        store: The shared parameter store; its barrier separates epochs.
        workers: Worker handles from `assign_workers`.
        step: Called as step(worker, batch, rng, epoch) for every mini-batch.
        num_epochs: Maximum number of epochs.
        batch_size: Nodes per mini-batch.
        on_epoch_end: Called with the epoch index after the barrier; returning
            True stops training early.
        stage: Stage name for errors.

    Returns:
        The number of epochs completed.

    Raises:
        TrainingDivergedError: If every batch of an epoch was rejected.
    """
    store.register_workers(len(workers))
    completed = 0
    pool = ThreadPoolExecutor(max_workers=len(workers)) if len(workers) > 1 else None
    try:
        for epoch in range(num_epochs):
            if pool is None:
                _run_worker_epoch(store, workers[0], step, epoch, batch_size)
            else:
                futures = [pool.submit(_run_worker_epoch, store, w, step, epoch, batch_size)
                           for w in workers]
                done, _ = wait(futures, return_when=FIRST_EXCEPTION)
                if any(f.exception() is not None for f in done):
                    # unblock the workers still waiting at the barrier
                    store.abort()
                wait(futures)
                errors = [f.exception() for f in futures if f.exception() is not None]
                if errors:
                    # prefer the root cause over the barrier breakage it triggered
                    primary = [e for e in errors if not isinstance(e, BarrierTimeoutError)]
                    raise (primary or errors)[0]
            batches = sum(w.cursor for w in workers)
            if batches and sum(w.epoch_rejected for w in workers) == batches:
                raise TrainingDivergedError(stage, epoch + 1, None)
            completed += 1
            if on_epoch_end is not None and on_epoch_end(epoch):
                break
    finally:
        if pool is not None:
            pool.shutdown(wait=True)
    return completed
