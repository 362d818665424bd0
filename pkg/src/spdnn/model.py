"""Core model types: CSR weight layers, feature batches, and the clamped activation.

Value discipline: weights, biases, and features are float32 everywhere, and
every accumulator in the compute paths is a single float32 scalar, so results
are reproducible bit-for-bit across runs and worker counts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

CLAMP = np.float32(32.0)


class ModelError(ValueError):
    """Raised for malformed models, features, or configuration."""


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


def relu_clamped(x):
    """Clamped rectifier max(0, min(x, 32)); works on scalars and arrays.

    NaN propagates (upstream validation is expected to reject it).
    """
    return np.minimum(np.maximum(x, np.float32(0.0)), CLAMP)


@dataclass(frozen=True)
class LayerCSR:
    """One N x N sparse weight matrix in canonical CSR form.

    Canonical means: row_ptr nondecreasing with row_ptr[0] == 0, and column
    indices strictly increasing (hence duplicate-free) within each row.
    """

    row_ptr: np.ndarray  # int64, length N+1
    col_idx: np.ndarray  # int32, length nnz
    values: np.ndarray   # float32, length nnz

    def __post_init__(self):
        object.__setattr__(self, "row_ptr", _readonly(np.ascontiguousarray(self.row_ptr, dtype=np.int64)))
        object.__setattr__(self, "col_idx", _readonly(np.ascontiguousarray(self.col_idx, dtype=np.int32)))
        object.__setattr__(self, "values", _readonly(np.ascontiguousarray(self.values, dtype=np.float32)))

    @property
    def neurons(self) -> int:
        return len(self.row_ptr) - 1

    @property
    def nnz(self) -> int:
        return len(self.col_idx)


@dataclass(frozen=True)
class NetworkModel:
    """A stack of N x N sparse layers plus one constant bias per neuron.

    The bias is a vector: the same per-neuron constant is broadcast across all
    feature columns when a layer is evaluated.
    """

    neurons: int
    layers: tuple[LayerCSR, ...]
    bias: np.ndarray  # float32, length N

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "bias", _readonly(np.ascontiguousarray(self.bias, dtype=np.float32)))

    @property
    def num_layers(self) -> int:
        return len(self.layers)


@dataclass(frozen=True)
class FeatureBatch:
    """Dense column-major feature matrix with surviving global input indices.

    ``data`` holds one column per still-active feature; ``categories[j]`` is
    the global input index of column j (strictly increasing). ``total_inputs``
    remembers how many inputs the run started with.
    """

    neurons: int
    data: np.ndarray        # float32, (N, M_active), Fortran order
    categories: np.ndarray  # int64, (M_active,)
    total_inputs: int

    def __post_init__(self):
        object.__setattr__(self, "data", _readonly(np.asfortranarray(self.data, dtype=np.float32)))
        object.__setattr__(self, "categories", _readonly(np.ascontiguousarray(self.categories, dtype=np.int64)))
        if self.data.ndim != 2 or self.data.shape[0] != self.neurons:
            raise ModelError(f"feature data must be ({self.neurons}, M), got {self.data.shape}")
        if self.data.shape[1] != len(self.categories):
            raise ModelError("categories length must match feature column count")
        cats = self.categories
        if len(cats):
            if np.any(np.diff(cats) <= 0):
                raise ModelError("categories must be strictly increasing")
            if cats[0] < 0 or cats[-1] >= self.total_inputs:
                raise ModelError("categories must lie in [0, total_inputs)")
        if len(cats) > self.total_inputs:
            raise ModelError("active count cannot exceed total_inputs")

    @property
    def active_count(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class InferenceConfig:
    """Execution knobs for the engine and the batch-parallel runner."""

    minibatch: int = 12
    block_size: int = 256
    warp_size: int = 32
    buffer_capacity: int = 1024
    workers: int = 1
    rebalance_threshold: float = 1.25
    streaming: bool = False

    def __post_init__(self):
        if self.minibatch < 1:
            raise ModelError("minibatch must be positive")
        if self.block_size < 1 or self.warp_size < 1:
            raise ModelError("block_size and warp_size must be positive")
        if self.block_size % self.warp_size != 0:
            raise ModelError("block_size must be divisible by warp_size")
        if self.buffer_capacity < 1:
            raise ModelError("buffer_capacity must be at least 1")
        if self.workers < 1:
            raise ModelError("workers must be positive")
        if not self.rebalance_threshold > 1.0:
            raise ModelError("rebalance_threshold must exceed 1.0")


def count_edges(model: NetworkModel) -> int:
    """Total weight nonzeros across all layers (the per-input edge count)."""
    return sum(layer.nnz for layer in model.layers)


def _validate_layer(layer: LayerCSR, neurons: int, where: str, out: list[str]) -> None:
    rp, ci, vals = layer.row_ptr, layer.col_idx, layer.values
    if len(rp) != neurons + 1:
        out.append(f"{where}: row_ptr length {len(rp)} != {neurons + 1}")
        return
    if rp[0] != 0:
        out.append(f"{where}: row_ptr[0] is {rp[0]}, expected 0")
    if np.any(np.diff(rp) < 0):
        out.append(f"{where}: row_ptr not monotone")
        return
    if rp[-1] != len(ci) or len(ci) != len(vals):
        out.append(f"{where}: row_ptr[-1]={rp[-1]} but nnz arrays have "
                   f"{len(ci)} indices / {len(vals)} values")
        return
    bad = np.nonzero((ci < 0) | (ci >= neurons))[0]
    for j in bad:
        row = int(np.searchsorted(rp, j, side="right") - 1)
        out.append(f"{where}, row {row}: index out of range ({int(ci[j])})")
    if len(bad) == 0 and len(ci) > 1:
        nondec = np.nonzero(np.diff(ci) <= 0)[0]
        row_of = np.searchsorted(rp, nondec, side="right") - 1
        row_of_next = np.searchsorted(rp, nondec + 1, side="right") - 1
        for j, r0, r1 in zip(nondec, row_of, row_of_next):
            if r0 == r1:  # a decrease across a row boundary is fine
                out.append(f"{where}, row {int(r0)}: columns not strictly increasing")
    nonfin = np.nonzero(~np.isfinite(vals))[0]
    for j in nonfin:
        row = int(np.searchsorted(rp, j, side="right") - 1)
        out.append(f"{where}, row {row}: non-finite value")


def validate_model(model: NetworkModel) -> list[str]:
    """Return every invariant violation with its location; empty list means ok."""
    violations: list[str] = []
    if model.neurons < 1:
        violations.append("model: neurons must be positive")
        return violations
    for l, layer in enumerate(model.layers):
        _validate_layer(layer, model.neurons, f"layer {l}", violations)
    if len(model.bias) != model.neurons:
        violations.append(f"bias: length {len(model.bias)} != {model.neurons}")
    elif not np.all(np.isfinite(model.bias)):
        violations.append("bias: non-finite entry")
    return violations


def make_layer_csr(neurons: int, rows: np.ndarray, cols: np.ndarray,
                   values: np.ndarray) -> LayerCSR:
    """Build a canonical LayerCSR from 0-indexed COO triplets.

    Entries are sorted by (row, col); duplicate coordinates raise ModelError.
    """
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    values = np.asarray(values, dtype=np.float32)
    order = np.lexsort((cols, rows))
    rows, cols, values = rows[order], cols[order], values[order]
    if len(rows) > 1:
        dup = (np.diff(rows) == 0) & (np.diff(cols) == 0)
        if np.any(dup):
            j = int(np.nonzero(dup)[0][0])
            raise ModelError(f"duplicate entry at row {int(rows[j])}, col {int(cols[j])}")
    row_ptr = np.zeros(neurons + 1, dtype=np.int64)
    np.add.at(row_ptr, rows + 1, 1)
    np.cumsum(row_ptr, out=row_ptr)
    return LayerCSR(row_ptr=row_ptr, col_idx=cols.astype(np.int32), values=values)


def make_feature_batch(neurons: int, data: np.ndarray,
                       categories: Sequence[int] | np.ndarray | None = None,
                       total_inputs: int | None = None) -> FeatureBatch:
    """Wrap a dense (N, M) array as a FeatureBatch; categories default to 0..M-1."""
    data = np.asfortranarray(data, dtype=np.float32)
    m = data.shape[1]
    if categories is None:
        categories = np.arange(m, dtype=np.int64)
    if total_inputs is None:
        total_inputs = m
    return FeatureBatch(neurons=neurons, data=data,
                        categories=np.asarray(categories, dtype=np.int64),
                        total_inputs=total_inputs)
