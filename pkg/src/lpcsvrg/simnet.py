"""In-process cluster: worker replicas, barrier steps and random streams.

Every random draw comes from a counter-based Philox stream. A stream is keyed
by ``(master_seed, purpose, worker)`` and positioned by an iteration counter,
so the draws for a given step never depend on what ran before it or on how
the workers were scheduled. Worker slot 0 is reserved for the shared stream
that all workers read identically.
"""

from __future__ import annotations

import copy
import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .comm import BitLedger, CommScheme
from .errors import ConsistencyError, WorkerPanic

SHARED = -1


class Purpose(enum.IntEnum):
    QUANT = 1
    BATCH = 2
    SHARED_BATCH = 3
    REQUANT = 4
    OUTPUT = 5
    PROBE = 6


@dataclass(frozen=True)
class Stream:
    """Philox stream; ``at(k)`` returns a generator positioned at counter ``k``."""

    key: tuple

    @classmethod
    def derive(cls, master_seed, purpose, worker=SHARED):
        seq = np.random.SeedSequence([int(master_seed) & (2**64 - 1), int(purpose), worker + 1])
        return cls(tuple(int(k) for k in seq.generate_state(2, np.uint64)))

    def at(self, counter: int) -> np.random.Generator:
        bg = np.random.Philox(key=np.array(self.key, dtype=np.uint64), counter=[0, int(counter), 0, 0])
        return np.random.Generator(bg)


@dataclass
class WorkerState:
    id: int
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    x_tilde: np.ndarray
    quant: Stream
    batch: Stream
    shared: Stream


@dataclass
class ClusterState:
    workers: list
    scheme: CommScheme
    ledger: BitLedger
    master_seed: int
    server: Stream
    output: Stream
    execution: str = "serial"
    _pool: ThreadPoolExecutor | None = field(default=None, repr=False, compare=False)

    @property
    def N(self) -> int:
        return len(self.workers)

    @property
    def d(self) -> int:
        return self.workers[0].x.size

    def reset(self, x0):
        """Put every replica at ``x0`` (x, y, z and the reference point)."""
        x0 = np.asarray(x0, dtype=np.float64)
        for w in self.workers:
            w.x, w.y, w.z, w.x_tilde = (x0.copy() for _ in range(4))

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __deepcopy__(self, memo):
        clone = copy.copy(self)
        clone.workers = copy.deepcopy(self.workers, memo)
        clone.ledger = copy.deepcopy(self.ledger, memo)
        clone._pool = None
        return clone


def spawn_cluster(N, d, scheme=CommScheme.BROADCAST, master_seed=0, x0=None,
                  ledger_mode="nominal", execution="serial") -> ClusterState:
    if N < 1:
        raise ValueError("N must be >= 1")
    if execution not in ("serial", "threads"):
        raise ValueError(f"unknown execution mode {execution!r}")
    x0 = np.zeros(d) if x0 is None else np.asarray(x0, dtype=np.float64)
    shared = Stream.derive(master_seed, Purpose.SHARED_BATCH)
    workers = [
        WorkerState(
            id=i, x=x0.copy(), y=x0.copy(), z=x0.copy(), x_tilde=x0.copy(),
            quant=Stream.derive(master_seed, Purpose.QUANT, i),
            batch=Stream.derive(master_seed, Purpose.BATCH, i),
            shared=shared,
        )
        for i in range(N)
    ]
    return ClusterState(
        workers=workers,
        scheme=CommScheme.parse(scheme),
        ledger=BitLedger(mode=ledger_mode),
        master_seed=int(master_seed),
        server=Stream.derive(master_seed, Purpose.REQUANT),
        output=Stream.derive(master_seed, Purpose.OUTPUT),
        execution=execution,
    )


def barrier_step(cluster: ClusterState, fn, order=None) -> list:
    """Run ``fn(worker)`` on every worker and wait for all of them.

    Results come back in worker-id order whatever the execution order, so
    downstream aggregation is schedule independent. If any worker raises,
    the lowest failing id is reported as :class:`WorkerPanic`.
    """
    workers = cluster.workers
    order = range(len(workers)) if order is None else order
    results = [None] * len(workers)
    errors = {}
    if cluster.execution == "threads" and len(workers) > 1:
        if cluster._pool is None:
            cluster._pool = ThreadPoolExecutor(max_workers=len(workers), thread_name_prefix="worker")
        futures = {i: cluster._pool.submit(fn, workers[i]) for i in order}
        for i, fut in futures.items():
            try:
                results[i] = fut.result()
            except Exception as exc:  # noqa: BLE001 - re-raised as WorkerPanic
                errors[i] = exc
    else:
        for i in order:
            try:
                results[i] = fn(workers[i])
            except Exception as exc:  # noqa: BLE001
                errors[i] = exc
    if errors:
        wid = min(errors)
        raise WorkerPanic(wid, errors[wid]) from errors[wid]
    return results


def check_consistent(cluster: ClusterState, fields=("x", "y", "z", "x_tilde")):
    ref = cluster.workers[0]
    for w in cluster.workers[1:]:
        for name in fields:
            if not np.array_equal(getattr(w, name), getattr(ref, name)):
                raise ConsistencyError(f"worker {w.id} diverged from worker 0 in {name}")
