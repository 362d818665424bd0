"""Batch-parallel execution: replicated weights, feature shards per worker,
per-layer load balancing, and a root-side gather.

Workers are real threads exchanging typed messages (count-exchange,
row-transfer, gather) through per-worker mailboxes, with barriers separating
the collective phases; the compute kernels release the GIL, so shards run
concurrently. Results are bitwise independent of scheduling: every feature
column is computed by exactly one worker with the same kernels the
single-worker engine uses, and merges are re-sorted by category.
"""

from __future__ import annotations

import math
import threading
import time
from dataclasses import dataclass, field
from queue import Empty, Queue
from typing import Callable, Sequence

import numpy as np

from .engine import (
    InferenceResult,
    LayerOutcome,
    Mode,
    PreparedLayer,
    prepare_model,
    run_layer_step,
)
from .model import (
    FeatureBatch,
    InferenceConfig,
    ModelError,
    NetworkModel,
    count_edges,
)

TransferPlan = list[tuple[int, int, int]]  # (source worker, dest worker, rows)


@dataclass(frozen=True)
class Partition:
    """Per-worker feature shards with pairwise-disjoint categories."""

    shards: tuple[FeatureBatch, ...]

    @property
    def worker_count(self) -> int:
        return len(self.shards)

    def counts(self) -> list[int]:
        return [s.active_count for s in self.shards]


@dataclass
class CommMatrix:
    """W x W counts of feature rows moved between workers while balancing."""

    matrix: np.ndarray  # int64, (W, W)

    @classmethod
    def zeros(cls, workers: int) -> "CommMatrix":
        return cls(np.zeros((workers, workers), dtype=np.int64))

    def add(self, delta: np.ndarray) -> None:
        self.matrix += delta

    @property
    def total_moved(self) -> int:
        return int(self.matrix.sum())

    def rows_sent(self) -> np.ndarray:
        return self.matrix.sum(axis=1)

    def rows_received(self) -> np.ndarray:
        return self.matrix.sum(axis=0)


@dataclass(frozen=True)
class BalanceEntry:
    layer: int
    before_counts: tuple[int, ...]
    after_counts: tuple[int, ...]
    imbalance_before: float
    imbalance_after: float
    moved_rows: int
    rebalanced: bool


@dataclass
class BalanceReport:
    entries: list[BalanceEntry] = field(default_factory=list)

    @property
    def total_moved(self) -> int:
        return sum(e.moved_rows for e in self.entries)


# --- messages ---------------------------------------------------------------

@dataclass(frozen=True)
class CountMsg:
    src: int
    layer: int
    count: int


@dataclass(frozen=True)
class RowsMsg:
    src: int
    dst: int
    layer: int
    data: np.ndarray
    categories: np.ndarray


@dataclass(frozen=True)
class GatherMsg:
    src: int
    data: np.ndarray
    categories: np.ndarray


LatencyHook = Callable[[object], None]


def imbalance_ratio(counts: Sequence[int]) -> float:
    """max/min shard-size ratio; empty-vs-nonempty maps to +inf, all-empty to 1."""
    counts = list(counts)
    if any(c < 0 for c in counts):
        raise ModelError("counts must be nonnegative")
    hi = max(counts)
    lo = min(counts)
    if hi == 0:
        return 1.0
    if lo == 0:
        return math.inf
    return hi / lo


def partition_even(features: FeatureBatch, workers: int) -> Partition:
    """Split columns into contiguous category ranges, sizes differing by <= 1."""
    if workers < 1:
        raise ModelError("workers must be positive")
    m = features.active_count
    base, rem = divmod(m, workers)
    shards = []
    start = 0
    for w in range(workers):
        size = base + (1 if w < rem else 0)
        shards.append(FeatureBatch(
            neurons=features.neurons,
            data=np.asfortranarray(features.data[:, start:start + size]),
            categories=features.categories[start:start + size],
            total_inputs=features.total_inputs))
        start += size
    return Partition(shards=tuple(shards))


def balance_step(counts: Sequence[int]) -> TransferPlan:
    """Plan transfers that even out shard sizes (max - min <= 1 afterwards).

    Targets are the even split of the total, with the remainder slots granted
    to the currently largest shards (ties to the lower index) to minimize
    movement; surplus is then paired greedily, largest donor with largest
    receiver. Deterministic for a given input.
    """
    counts = [int(c) for c in counts]
    if any(c < 0 for c in counts):
        raise ModelError("counts must be nonnegative")
    w = len(counts)
    if w == 0:
        return []
    total = sum(counts)
    base, rem = divmod(total, w)
    plus_one = sorted(range(w), key=lambda i: (-counts[i], i))[:rem]
    targets = [base + (1 if i in set(plus_one) else 0) for i in range(w)]
    donors = {i: counts[i] - targets[i] for i in range(w) if counts[i] > targets[i]}
    receivers = {i: targets[i] - counts[i] for i in range(w) if counts[i] < targets[i]}
    plan: TransferPlan = []
    while donors:
        d = max(donors, key=lambda i: (donors[i], -i))
        r = max(receivers, key=lambda i: (receivers[i], -i))
        amount = min(donors[d], receivers[r])
        plan.append((d, r, amount))
        donors[d] -= amount
        receivers[r] -= amount
        if donors[d] == 0:
            del donors[d]
        if receivers[r] == 0:
            del receivers[r]
    return plan


def apply_transfers(plan: TransferPlan,
                    partition: Partition) -> tuple[Partition, np.ndarray]:
    """Move feature rows (columns) with their categories per the plan.

    Donors give up their highest-category rows first, in plan order; receivers
    re-sort by category afterwards, preserving the global multiset of
    (category, column) pairs. Returns the new partition and the W x W count
    delta for the communication matrix.
    """
    w = partition.worker_count
    datas = [s.data for s in partition.shards]
    cats = [s.categories for s in partition.shards]
    pending: list[list[tuple[np.ndarray, np.ndarray]]] = [[] for _ in range(w)]
    delta = np.zeros((w, w), dtype=np.int64)
    for src, dst, k in plan:
        if not (0 <= src < w and 0 <= dst < w) or k < 0:
            raise ModelError("transfer plan does not fit this partition")
        if k > datas[src].shape[1]:
            raise ModelError("transfer plan exceeds donor size")
        if k == 0:
            continue
        cut = datas[src].shape[1] - k
        pending[dst].append((datas[src][:, cut:], cats[src][cut:]))
        datas[src] = datas[src][:, :cut]
        cats[src] = cats[src][:cut]
        delta[src, dst] += k
    shards = []
    for i, shard in enumerate(partition.shards):
        if pending[i]:
            data = np.concatenate([datas[i]] + [d for d, _ in pending[i]], axis=1)
            cat = np.concatenate([cats[i]] + [c for _, c in pending[i]])
            order = np.argsort(cat)
            data, cat = data[:, order], cat[order]
        else:
            data, cat = datas[i], cats[i]
        shards.append(FeatureBatch(neurons=shard.neurons,
                                   data=np.asfortranarray(data),
                                   categories=cat,
                                   total_inputs=shard.total_inputs))
    return Partition(shards=tuple(shards)), delta


def gather_categories(partition: Partition) -> list[int]:
    """Sorted union of shard categories; duplicates are an invariant breach."""
    merged = np.concatenate([s.categories for s in partition.shards]) \
        if partition.shards else np.empty(0, dtype=np.int64)
    merged = np.sort(merged)
    if len(merged) > 1 and np.any(np.diff(merged) == 0):
        raise ModelError("duplicate category across shards")
    return [int(c) for c in merged]


class _WorkerError(Exception):
    pass


class _Exchange:
    """Mailboxes plus barriers implementing the collective steps."""

    def __init__(self, workers: int, latency_hook: LatencyHook | None):
        self.workers = workers
        self.inboxes = [Queue() for _ in range(workers)]
        self.barrier = threading.Barrier(workers)
        self.failed = threading.Event()
        self.errors: list[BaseException] = []
        self.hook = latency_hook

    def send(self, dst: int, msg) -> None:
        if self.hook is not None:
            self.hook(msg)
        self.inboxes[dst].put(msg)

    def recv(self, me: int):
        while True:
            try:
                return self.inboxes[me].get(timeout=0.1)
            except Empty:
                if self.failed.is_set():
                    raise _WorkerError() from None

    def sync(self) -> None:
        try:
            self.barrier.wait()
        except threading.BrokenBarrierError:
            raise _WorkerError() from None

    def fail(self, exc: BaseException) -> None:
        self.errors.append(exc)
        self.failed.set()
        self.barrier.abort()


@dataclass
class _WorkerRecord:
    outcomes: list[LayerOutcome] = field(default_factory=list)
    final: FeatureBatch | None = None


def _worker_loop(me: int, shard: FeatureBatch, model: NetworkModel,
                 prepared: Sequence[PreparedLayer], config: InferenceConfig,
                 mode: Mode, ex: _Exchange, record: _WorkerRecord,
                 comm: CommMatrix, balance: BalanceReport) -> None:
    w = ex.workers
    feats = shard
    try:
        for l in range(model.num_layers):
            outcome = run_layer_step(feats, prepared[l], model.bias, config, mode)
            feats = outcome.features
            record.outcomes.append(outcome.summary())

            # count-exchange collective (everyone learns every shard size)
            counts = [0] * w
            counts[me] = feats.active_count
            for other in range(w):
                if other != me:
                    ex.send(other, CountMsg(src=me, layer=l, count=counts[me]))
            for _ in range(w - 1):
                msg = ex.recv(me)
                counts[msg.src] = msg.count
            ex.sync()

            ratio = imbalance_ratio(counts)
            plan = balance_step(counts) if ratio > config.rebalance_threshold else []
            moved = sum(k for _, _, k in plan)
            if plan:
                outgoing = [(dst, k) for src, dst, k in plan if src == me]
                incoming = sum(1 for src, dst, k in plan if dst == me and k > 0)
                for dst, k in outgoing:
                    if k > feats.active_count:
                        raise ModelError("transfer plan exceeds donor size")
                    if k == 0:
                        continue
                    cut = feats.active_count - k
                    ex.send(dst, RowsMsg(src=me, dst=dst, layer=l,
                                         data=np.asfortranarray(feats.data[:, cut:]),
                                         categories=feats.categories[cut:].copy()))
                    feats = FeatureBatch(neurons=feats.neurons,
                                         data=feats.data[:, :cut],
                                         categories=feats.categories[:cut],
                                         total_inputs=feats.total_inputs)
                if incoming:
                    parts_d = [feats.data]
                    parts_c = [feats.categories]
                    for _ in range(incoming):
                        msg = ex.recv(me)
                        parts_d.append(msg.data)
                        parts_c.append(msg.categories)
                    data = np.concatenate(parts_d, axis=1)
                    cat = np.concatenate(parts_c)
                    order = np.argsort(cat)
                    feats = FeatureBatch(neurons=feats.neurons,
                                         data=np.asfortranarray(data[:, order]),
                                         categories=cat[order],
                                         total_inputs=feats.total_inputs)
            if me == 0:
                after = counts.copy()
                if plan:
                    for src, dst, k in plan:
                        after[src] -= k
                        after[dst] += k
                    delta = np.zeros((w, w), dtype=np.int64)
                    for src, dst, k in plan:
                        delta[src, dst] += k
                    comm.add(delta)
                balance.entries.append(BalanceEntry(
                    layer=l, before_counts=tuple(counts),
                    after_counts=tuple(after),
                    imbalance_before=ratio,
                    imbalance_after=imbalance_ratio(after),
                    moved_rows=moved, rebalanced=bool(plan)))
            ex.sync()
            if sum(counts) == 0:
                break
        record.final = feats
        if me != 0:
            ex.send(0, GatherMsg(src=me, data=feats.data,
                                 categories=feats.categories))
    except _WorkerError:
        pass
    except BaseException as exc:
        ex.fail(exc)


def run_batch_parallel(model: NetworkModel, inputs: FeatureBatch,
                       config: InferenceConfig, mode: Mode = "optimized",
                       prepared: Sequence[PreparedLayer] | None = None,
                       latency_hook: LatencyHook | None = None,
                       ) -> tuple[InferenceResult, CommMatrix, BalanceReport]:
    """Run inference across config.workers shards with per-layer balancing.

    Every worker shares the read-only prepared weight structures (the
    in-process analogue of weight replication). The final categories and
    values are identical to the single-worker engine for any worker count and
    threshold. Streaming is a single-worker engine feature; the parallel path
    always prepares weights eagerly.
    """
    w = config.workers
    if inputs.neurons != model.neurons:
        raise ModelError("inputs do not match model width")
    if prepared is None:
        prepared = prepare_model(model, config, mode)
    partition = partition_even(inputs, w)
    comm = CommMatrix.zeros(w)
    balance = BalanceReport()
    records = [_WorkerRecord() for _ in range(w)]
    ex = _Exchange(w, latency_hook)

    start = time.perf_counter()
    threads = [threading.Thread(target=_worker_loop,
                                args=(i, partition.shards[i], model, prepared,
                                      config, mode, ex, records[i], comm, balance),
                                daemon=True)
               for i in range(w)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    elapsed = time.perf_counter() - start
    if ex.errors:
        raise ex.errors[0]

    # Assemble the final batch at worker 0's side: its shard plus everyone's
    # gather messages (the only mail left in inbox 0), re-sorted by category.
    parts_d = [records[0].final.data]
    parts_c = [records[0].final.categories]
    for _ in range(w - 1):
        msg = ex.inboxes[0].get_nowait()
        parts_d.append(msg.data)
        parts_c.append(msg.categories)
    data = np.concatenate(parts_d, axis=1)
    cat = np.concatenate(parts_c)
    order = np.argsort(cat)
    final = FeatureBatch(neurons=model.neurons,
                         data=np.asfortranarray(data[:, order]),
                         categories=cat[order],
                         total_inputs=inputs.total_inputs)
    if len(cat) > 1 and np.any(np.diff(final.categories) == 0):
        raise ModelError("duplicate category across shards")

    # Aggregate per-layer outcomes across workers; layers skipped after a
    # global die-off count as zero everywhere.
    per_layer: list[LayerOutcome] = []
    depth = max((len(r.outcomes) for r in records), default=0)
    for l in range(model.num_layers):
        if l < depth:
            outs = [r.outcomes[l] for r in records if l < len(r.outcomes)]
            per_layer.append(LayerOutcome(
                active_before=sum(o.active_before for o in outs),
                active_after=sum(o.active_after for o in outs),
                weight_element_reads=sum(o.weight_element_reads for o in outs),
                feature_element_reads=sum(o.feature_element_reads for o in outs)))
        else:
            per_layer.append(LayerOutcome(0, 0, 0, 0))
    result = InferenceResult(final=final,
                             categories=final.categories.copy(),
                             per_layer=per_layer,
                             elapsed_seconds=elapsed,
                             edges_processed=inputs.total_inputs * count_edges(model))
    return result, comm, balance
