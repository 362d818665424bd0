"""Single-worker inference: fused baseline layer, staged/sliced-ELL layer with
minibatch weight reuse, active-feature pruning, and double-buffered weight
streaming.

Both execution paths produce bitwise-identical outputs (see kernels); they
differ in memory behavior, which the read counters make observable: the
baseline re-reads every weight nonzero once per active feature, the staged
path reads every (possibly padded) weight slot once per minibatch group.
"""

from __future__ import annotations

import queue
import threading
import time
from dataclasses import dataclass, replace
from typing import Literal, Sequence

import numpy as np

from . import kernels
from .model import (
    FeatureBatch,
    InferenceConfig,
    LayerCSR,
    ModelError,
    NetworkModel,
    count_edges,
)
from .preprocess import (
    PaddingStats,
    SlicedEllLayer,
    build_staging_plan,
    csr_to_sliced_ell,
    padding_stats,
)

Mode = Literal["baseline", "optimized"]


@dataclass
class LayerOutcome:
    """Per-layer pruning and instrumentation record.

    ``features`` carries the compacted batch between layers; the summaries
    stored on an InferenceResult drop it (set to None) to bound memory.
    """

    active_before: int
    active_after: int
    weight_element_reads: int
    feature_element_reads: int
    features: FeatureBatch | None = None

    def summary(self) -> "LayerOutcome":
        return replace(self, features=None)


@dataclass
class InferenceResult:
    final: FeatureBatch
    categories: np.ndarray  # sorted int64
    per_layer: list[LayerOutcome]
    elapsed_seconds: float
    edges_processed: int


@dataclass(frozen=True)
class PreparedLayer:
    """Execution-ready structures for one layer in one mode."""

    csr: LayerCSR
    ell: SlicedEllLayer | None = None
    padding: PaddingStats | None = None


def prepare_layer(layer: LayerCSR, config: InferenceConfig,
                  mode: Mode) -> PreparedLayer:
    if mode == "baseline":
        return PreparedLayer(csr=layer)
    plan, remapped = build_staging_plan(layer, config.block_size,
                                        config.buffer_capacity)
    ell = csr_to_sliced_ell(remapped, plan, config.warp_size)
    return PreparedLayer(csr=layer, ell=ell,
                         padding=padding_stats(layer, plan, config.warp_size))


def prepare_model(model: NetworkModel, config: InferenceConfig,
                  mode: Mode) -> list[PreparedLayer]:
    return [prepare_layer(layer, config, mode) for layer in model.layers]


def baseline_layer(features: FeatureBatch, layer: LayerCSR,
                   bias: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Fused gather/accumulate/ReLU over CSR weights.

    Returns the dense (N, M_active) output and per-column activity flags
    (true iff the column has any positive entry).
    """
    n = layer.neurons
    if features.neurons != n or len(bias) != n:
        raise ModelError("dimension mismatch in baseline_layer")
    out = np.empty((n, features.active_count), dtype=np.float32, order="F")
    kernels.baseline_fused_relu(features.data, layer.row_ptr, layer.col_idx,
                                layer.values, bias, out)
    return out, (out > 0).any(axis=0)


def optimized_layer(features: FeatureBatch, ell: SlicedEllLayer,
                    bias: np.ndarray, minibatch: int) -> tuple[np.ndarray, np.ndarray]:
    """Staged sliced-ELL evaluation with minibatch weight reuse.

    Equivalent to baseline_layer on the same layer; column groups of
    ``minibatch`` features share each weight-slot read.
    """
    n = ell.neurons
    if features.neurons != n or len(bias) != n:
        raise ModelError("dimension mismatch in optimized_layer")
    if minibatch < 1:
        raise ModelError("minibatch must be positive")
    plan = ell.plan
    out = np.empty((n, features.active_count), dtype=np.float32, order="F")
    kernels.staged_fused_relu(features.data, bias, plan.buffdispl,
                              plan.mapdispl, plan.map, ell.wdispl, ell.windex,
                              ell.wvalue, plan.block_size, ell.warp_size,
                              plan.buffer_capacity, minibatch, out)
    return out, (out > 0).any(axis=0)


def compact_active(out: np.ndarray, active: np.ndarray,
                   categories: np.ndarray,
                   total_inputs: int | None = None) -> FeatureBatch:
    """Keep only active columns, filtering categories in lockstep."""
    if len(active) != out.shape[1] or len(categories) != out.shape[1]:
        raise ModelError("flag/category length must match column count")
    categories = np.asarray(categories, dtype=np.int64)
    if total_inputs is None:
        total_inputs = int(categories.max()) + 1 if len(categories) else 0
    return FeatureBatch(neurons=out.shape[0],
                        data=np.asfortranarray(out[:, active]),
                        categories=categories[active],
                        total_inputs=total_inputs)


def run_layer_step(features: FeatureBatch, prepared: PreparedLayer,
                   bias: np.ndarray, config: InferenceConfig,
                   mode: Mode) -> LayerOutcome:
    """One evaluate-then-compact step with read instrumentation."""
    before = features.active_count
    if before == 0:
        return LayerOutcome(0, 0, 0, 0, features=features)
    if mode == "baseline":
        out, active = baseline_layer(features, prepared.csr, bias)
        weight_reads = prepared.csr.nnz * before
        feature_reads = prepared.csr.nnz * before
    else:
        ell = prepared.ell
        if ell is None:
            raise ModelError("prepared structures are for baseline mode")
        out, active = optimized_layer(features, ell, bias, config.minibatch)
        groups = -(-before // config.minibatch)
        weight_reads = ell.total_slots * groups
        feature_reads = len(ell.plan.map) * before
    compacted = compact_active(out, active, features.categories,
                               total_inputs=features.total_inputs)
    return LayerOutcome(active_before=before,
                        active_after=compacted.active_count,
                        weight_element_reads=weight_reads,
                        feature_element_reads=feature_reads,
                        features=compacted)


class WeightStreamer:
    """Double-buffered out-of-core stand-in: at most two layers' prepared
    structures are resident at once; layer l+1 is materialized in the
    background while layer l computes.

    Consumers call :meth:`next_layer` per layer and :meth:`release` when done
    with the structures; :meth:`stop` abandons the remaining layers.
    """

    def __init__(self, model: NetworkModel, config: InferenceConfig,
                 mode: Mode = "optimized"):
        self._slots = threading.Semaphore(2)
        self._ready: queue.Queue = queue.Queue()
        self._stopped = threading.Event()
        self._gauge_lock = threading.Lock()
        self._resident = 0
        self.peak_resident = 0
        self.materialized_count = 0
        self._thread = threading.Thread(
            target=self._produce, args=(model, config, mode), daemon=True)
        self._thread.start()

    def _produce(self, model: NetworkModel, config: InferenceConfig,
                 mode: Mode) -> None:
        try:
            for layer in model.layers:
                while not self._slots.acquire(timeout=0.05):
                    if self._stopped.is_set():
                        return
                if self._stopped.is_set():
                    return
                prep = prepare_layer(layer, config, mode)
                with self._gauge_lock:
                    self._resident += 1
                    self.materialized_count += 1
                    self.peak_resident = max(self.peak_resident, self._resident)
                self._ready.put(prep)
            self._ready.put(None)
        except BaseException as exc:  # propagate into the consumer
            self._ready.put(exc)

    def next_layer(self) -> PreparedLayer:
        item = self._ready.get()
        if isinstance(item, BaseException):
            raise item
        if item is None:
            raise ModelError("weight streamer exhausted")
        return item

    def release(self) -> None:
        with self._gauge_lock:
            self._resident -= 1
        self._slots.release()

    def stop(self) -> None:
        self._stopped.set()
        self._thread.join()

    def join(self) -> None:
        self._thread.join()


def infer(model: NetworkModel, inputs: FeatureBatch, config: InferenceConfig,
          mode: Mode = "optimized",
          prepared: Sequence[PreparedLayer] | None = None) -> InferenceResult:
    """Run all layers with compaction after each.

    With streaming enabled, each layer's structures are materialized by a
    background producer while the previous layer computes (numerically
    identical; at most two layers resident). Otherwise all structures are
    materialized up front, outside the timed region, unless ``prepared`` is
    supplied. Once no features remain active, remaining layers are skipped
    and perform zero reads.
    """
    if inputs.neurons != model.neurons:
        raise ModelError("inputs do not match model width")
    if mode not in ("baseline", "optimized"):
        raise ModelError(f"unknown mode {mode!r}")
    streamer: WeightStreamer | None = None
    if config.streaming:
        if prepared is not None:
            raise ModelError("prepared structures cannot be combined with streaming")
    elif prepared is None:
        prepared = prepare_model(model, config, mode)

    outcomes: list[LayerOutcome] = []
    feats = inputs
    start = time.perf_counter()
    if config.streaming:
        streamer = WeightStreamer(model, config, mode)
    try:
        for l in range(model.num_layers):
            if feats.active_count == 0:
                if streamer is not None:
                    streamer.stop()
                    streamer = None
                outcomes.append(LayerOutcome(0, 0, 0, 0))
                continue
            if streamer is not None:
                prep = streamer.next_layer()
            else:
                prep = prepared[l]
            try:
                outcome = run_layer_step(feats, prep, model.bias, config, mode)
            finally:
                if streamer is not None:
                    streamer.release()
            feats = outcome.features
            outcomes.append(outcome.summary())
    finally:
        if streamer is not None:
            streamer.stop()
    elapsed = time.perf_counter() - start
    return InferenceResult(final=feats,
                           categories=feats.categories.copy(),
                           per_layer=outcomes,
                           elapsed_seconds=elapsed,
                           edges_processed=inputs.total_inputs * count_edges(model))
