"""In-process simulated cluster with an exact communication ledger.

Workers are isolated: a task only ever sees a :class:`WorkerView` holding its
own shard, a private scratch store, and the most recent broadcast payload.
Worker 1 (index 0) doubles as the coordinator.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, NamedTuple

import numpy as np

from .records import DataError, Sample, concat


@dataclass(frozen=True)
class CommLedger:
    messages_up: int = 0
    messages_down: int = 0
    scalars_up: int = 0
    scalars_down: int = 0
    scalars_down_fanout: int = 0
    rounds: int = 0

    @property
    def scalars_transferred(self) -> int:
        return self.scalars_up + self.scalars_down_fanout

    def as_dict(self) -> dict[str, int]:
        return {
            "messages_up": self.messages_up,
            "messages_down": self.messages_down,
            "scalars_up": self.scalars_up,
            "scalars_down": self.scalars_down,
            "scalars_down_fanout": self.scalars_down_fanout,
            "scalars_transferred": self.scalars_transferred,
            "rounds": self.rounds,
        }


@dataclass(frozen=True)
class ShardedDataset:
    shards: tuple[Sample, ...]
    dropped: int = 0

    def __post_init__(self):
        if not self.shards:
            raise ValueError("at least one shard is required")
        sizes = {len(s) for s in self.shards}
        if len(sizes) != 1:
            raise ValueError(f"shards must have equal length, got sizes {sorted(sizes)}")

    @property
    def m(self) -> int:
        return len(self.shards)

    @property
    def n(self) -> int:
        return len(self.shards[0])

    @property
    def N(self) -> int:
        return self.m * self.n

    @property
    def dim(self) -> int:
        return self.shards[0].dim

    def pooled(self) -> Sample:
        return concat(self.shards)

    def relabel(self, order) -> "ShardedDataset":
        return ShardedDataset(tuple(self.shards[i] for i in order), self.dropped)


def partition_even(
    sample: Sample,
    m: int,
    truncate: bool = False,
    rng: np.random.Generator | None = None,
) -> ShardedDataset:
    """Split ``sample`` into ``m`` contiguous equal shards.

    With ``rng`` the records are shuffled first. With ``truncate`` the trailing
    ``N mod m`` records are dropped and reported in ``dropped``.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    if rng is not None:
        sample = sample.take(rng.permutation(len(sample)))
    N = len(sample)
    rem = N % m
    if rem and not truncate:
        raise ValueError(f"N={N} is not divisible by m={m}; pass truncate=True to drop {rem}")
    n = N // m
    if n == 0:
        raise ValueError(f"m={m} exceeds the number of records {N}")
    shards = tuple(sample.slice(l * n, (l + 1) * n) for l in range(m))
    return ShardedDataset(shards, dropped=rem)


class Reply(NamedTuple):
    """Worker reply: ``value`` is transmitted; ``info`` is local instrumentation."""

    value: Any
    info: dict | None = None


class WorkerError(RuntimeError):
    def __init__(self, index: int, cause: BaseException):
        self.index = index
        self.cause = cause
        super().__init__(f"worker {index + 1} failed: {cause}")


@dataclass
class WorkerView:
    index: int
    data: Sample
    store: dict = field(default_factory=dict)
    payload: Any = None


def _scalar_count(value) -> int:
    return int(np.size(value))


class Cluster:
    """Coordinator plus ``m`` isolated workers over a sharded dataset."""

    def __init__(self, sharded: ShardedDataset):
        self.sharded = sharded
        self._workers = [WorkerView(l, s) for l, s in enumerate(sharded.shards)]
        self._counts = dict.fromkeys(CommLedger().as_dict(), 0)
        del self._counts["scalars_transferred"]
        self._payload = None
        self.worker_info: list[list[dict]] = [[] for _ in self._workers]

    @property
    def m(self) -> int:
        return self.sharded.m

    @property
    def N(self) -> int:
        return self.sharded.N

    @property
    def ledger(self) -> CommLedger:
        return CommLedger(**self._counts)

    def coordinator(self) -> WorkerView:
        """Worker 1's local view, available to the coordinator without messages."""
        return self._workers[0]

    def map_workers(self, task: Callable[[WorkerView], Any]) -> list:
        """Run ``task`` on every worker; each reply is one upward message."""
        values = []
        scalars = 0
        for w in self._workers:
            w.payload = self._payload
            try:
                out = task(w)
            except Exception as exc:  # noqa: BLE001 - reported with the worker index
                raise WorkerError(w.index, exc) from exc
            if isinstance(out, Reply):
                if out.info:
                    self.worker_info[w.index].append(out.info)
                out = out.value
            values.append(out)
            scalars += _scalar_count(out)
        self._counts["messages_up"] += len(values)
        self._counts["scalars_up"] += scalars
        self._counts["rounds"] += 1
        return values

    def broadcast(self, payload) -> None:
        """Send ``payload`` to every worker; read by the next ``map_workers``."""
        if payload is not None:
            payload = np.array(payload, dtype=np.float64, copy=True)
            payload.setflags(write=False)
        size = 0 if payload is None else _scalar_count(payload)
        self._payload = payload
        self._counts["messages_down"] += 1
        self._counts["scalars_down"] += size
        self._counts["scalars_down_fanout"] += size * self.m
        self._counts["rounds"] += 1


def reduce_sum(results) -> np.ndarray | float:
    """Element-wise sum accumulated in worker-index order."""
    if len(results) == 0:
        raise ValueError("nothing to reduce")
    shapes = {np.shape(r) for r in results}
    if len(shapes) != 1:
        raise ValueError(f"length mismatch among worker results: {sorted(shapes)}")
    stacked = np.asarray(results, dtype=np.float64)
    total = np.cumsum(stacked, axis=0)[-1]
    if stacked.ndim == 1:
        return float(total)
    return total


def check_observed(sharded: ShardedDataset) -> None:
    for l, s in enumerate(sharded.shards):
        if s.n_observed == 0:
            raise DataError(f"shard {l + 1} has no observed responses")
