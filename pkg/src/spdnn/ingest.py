"""Dataset ingestion: challenge-style TSV files, a binary cache, and synthetic data.

TSV conventions follow the Sparse DNN Challenge: indices are 1-based on disk
and 0-based in memory. The binary cache is fixed little-endian with explicit
magic/version headers so cached artifacts are bit-exact across platforms.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import BinaryIO, Union

import numpy as np

from .model import (
    FeatureBatch,
    LayerCSR,
    ModelError,
    NetworkModel,
    make_feature_batch,
    make_layer_csr,
)

MODEL_MAGIC = b"SPDN"
FEATURES_MAGIC = b"SPDF"
FORMAT_VERSION = 1

WEIGHT_VALUE = np.float32(1.0 / 16.0)


class IngestError(ValueError):
    """Raised for malformed TSV or binary input."""


@dataclass(frozen=True)
class GeneratorSpec:
    """Parameters for the synthetic fixed-fan-in network generator."""

    neurons: int
    layers: int
    connections_per_neuron: int = 32
    bias_value: float = -0.3
    seed: int = 0
    input_count: int = 0
    input_density: float = 0.3

    def __post_init__(self):
        if self.connections_per_neuron > self.neurons:
            raise ModelError("connections_per_neuron cannot exceed neurons")
        if not 0.0 < self.input_density <= 1.0:
            raise ModelError("input_density must be in (0, 1]")


def _lines(source: Union[bytes, BinaryIO]) -> io.TextIOBase:
    if isinstance(source, bytes):
        source = io.BytesIO(source)
    return io.TextIOWrapper(source, encoding="ascii")


def _parse_triplet(line: str, lineno: int) -> tuple[int, int, float]:
    parts = line.split("\t")
    if len(parts) != 3:
        raise IngestError(f"parse error, line {lineno}: expected 3 tab-separated fields")
    try:
        return int(parts[0]), int(parts[1]), float(parts[2])
    except ValueError:
        raise IngestError(f"parse error, line {lineno}: bad integer or float") from None


def load_layer_tsv(source: Union[bytes, BinaryIO], neurons: int) -> LayerCSR:
    """Load one weight layer from `row<TAB>col<TAB>value` lines (1-indexed).

    Line order does not matter; duplicates of the same (row, col) are an error.
    """
    rows, cols, vals = [], [], []
    for lineno, line in enumerate(_lines(source), start=1):
        line = line.strip()
        if not line:
            continue
        r, c, v = _parse_triplet(line, lineno)
        if not 1 <= r <= neurons:
            raise IngestError(f"row index out of range, line {lineno}")
        if not 1 <= c <= neurons:
            raise IngestError(f"column index out of range, line {lineno}")
        rows.append(r - 1)
        cols.append(c - 1)
        vals.append(v)
    try:
        return make_layer_csr(neurons, np.array(rows, dtype=np.int64),
                              np.array(cols, dtype=np.int64),
                              np.array(vals, dtype=np.float32))
    except ModelError as exc:
        raise IngestError(str(exc)) from None


def load_features_tsv(source: Union[bytes, BinaryIO], neurons: int,
                      max_inputs: int) -> FeatureBatch:
    """Load input features from `image<TAB>neuron<TAB>value` lines (1-indexed).

    Produces a dense column-major batch with max_inputs columns; images that
    never appear are all-zero columns.
    """
    data = np.zeros((neurons, max_inputs), dtype=np.float32, order="F")
    for lineno, line in enumerate(_lines(source), start=1):
        line = line.strip()
        if not line:
            continue
        img, neuron, v = _parse_triplet(line, lineno)
        if not 1 <= img <= max_inputs:
            raise IngestError(f"image index out of range, line {lineno}")
        if not 1 <= neuron <= neurons:
            raise IngestError(f"neuron index out of range, line {lineno}")
        data[neuron - 1, img - 1] = np.float32(v)
    return make_feature_batch(neurons, data)


def load_truth_categories(source: Union[bytes, BinaryIO]) -> list[int]:
    """Load ground-truth categories, one 1-indexed integer per line.

    Returns a sorted 0-indexed list; duplicates are rejected.
    """
    cats = []
    for lineno, line in enumerate(_lines(source), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            cats.append(int(line))
        except ValueError:
            raise IngestError(f"parse error, line {lineno}: bad integer") from None
    cats.sort()
    for a, b in zip(cats, cats[1:]):
        if a == b:
            raise IngestError(f"duplicate category {a}")
    return [c - 1 for c in cats]


def _coprime_stride(n: int, rng: np.random.Generator) -> int:
    if n == 1:
        return 1
    while True:
        s = int(rng.integers(1, n))
        if math.gcd(s, n) == 1:
            return s


def generate_synthetic_network(spec: GeneratorSpec) -> NetworkModel:
    """Deterministic fixed-fan-in stand-in for the challenge's synthetic nets.

    Row r of layer l connects to columns {(r*offset + i*stride) mod N for
    i in 0..K-1} with a per-layer seed-derived offset and a stride coprime to
    N, so every row has exactly K distinct connections and layers mix
    differently. All weights are 1/16; the bias vector is a single constant.
    """
    n, k = spec.neurons, spec.connections_per_neuron
    rng = np.random.default_rng(spec.seed)
    layers = []
    i = np.arange(k, dtype=np.int64)
    for _ in range(spec.layers):
        offset = int(rng.integers(1, n)) if n > 1 else 0
        stride = _coprime_stride(n, rng)
        r = np.arange(n, dtype=np.int64)[:, None]
        cols = (r * offset + i[None, :] * stride) % n
        cols.sort(axis=1)
        row_ptr = np.arange(0, n * k + 1, k, dtype=np.int64)
        layers.append(LayerCSR(row_ptr=row_ptr,
                               col_idx=cols.reshape(-1).astype(np.int32),
                               values=np.full(n * k, WEIGHT_VALUE, dtype=np.float32)))
    bias = np.full(n, np.float32(spec.bias_value), dtype=np.float32)
    return NetworkModel(neurons=n, layers=tuple(layers), bias=bias)


def generate_synthetic_inputs(neurons: int, count: int, density: float,
                              seed: int) -> FeatureBatch:
    """Binary feature matrix: each entry is 1 with probability `density`."""
    rng = np.random.default_rng(seed)
    data = (rng.random((neurons, count)) < density).astype(np.float32)
    return make_feature_batch(neurons, data)


# --- binary cache -----------------------------------------------------------
#
# Model:    "SPDN" | u32 version | u32 N | u32 L
#           then per layer: u64 nnz | u64 row_ptr[N+1] | u32 col_idx[nnz]
#           | f32 values[nnz]; then f32 bias[N].
# Features: "SPDF" | u32 version | u32 N | u32 M | u64 nnz
#           then nnz records of (u32 image, u32 neuron, f32 value), 0-indexed.
# All fields little-endian.

def _write_array(out: BinaryIO, arr: np.ndarray, dtype: str) -> None:
    out.write(np.ascontiguousarray(arr).astype(dtype).tobytes())


class _Reader:
    def __init__(self, src: BinaryIO):
        self._src = src

    def take(self, nbytes: int) -> bytes:
        buf = self._src.read(nbytes)
        if len(buf) != nbytes:
            raise IngestError("truncated file")
        return buf

    def scalar(self, dtype: str) -> int:
        dt = np.dtype(dtype)
        return int(np.frombuffer(self.take(dt.itemsize), dtype=dt)[0])

    def array(self, count: int, dtype: str) -> np.ndarray:
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(dt.itemsize * count), dtype=dt)


def write_binary(obj: Union[NetworkModel, FeatureBatch], dest: BinaryIO) -> None:
    """Serialize a model or an input feature batch to the binary cache format."""
    if isinstance(obj, NetworkModel):
        dest.write(MODEL_MAGIC)
        _write_array(dest, np.array([FORMAT_VERSION, obj.neurons, obj.num_layers]), "<u4")
        for layer in obj.layers:
            _write_array(dest, np.array([layer.nnz]), "<u8")
            _write_array(dest, layer.row_ptr, "<u8")
            _write_array(dest, layer.col_idx, "<u4")
            _write_array(dest, layer.values, "<f4")
        _write_array(dest, obj.bias, "<f4")
    elif isinstance(obj, FeatureBatch):
        if not np.array_equal(obj.categories, np.arange(obj.total_inputs)):
            raise IngestError("only full input batches can be cached")
        dest.write(FEATURES_MAGIC)
        image_idx, neuron_idx = np.nonzero(obj.data.T)  # image-major record order
        _write_array(dest, np.array([FORMAT_VERSION, obj.neurons, obj.active_count]), "<u4")
        _write_array(dest, np.array([len(image_idx)]), "<u8")
        rec = np.empty(len(image_idx), dtype=np.dtype([("img", "<u4"), ("neu", "<u4"), ("val", "<f4")]))
        rec["img"] = image_idx
        rec["neu"] = neuron_idx
        rec["val"] = obj.data[neuron_idx, image_idx]
        dest.write(rec.tobytes())
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


def read_binary(src: BinaryIO) -> Union[NetworkModel, FeatureBatch]:
    """Read back whatever write_binary produced; dispatches on the magic."""
    rd = _Reader(src)
    magic = rd.take(4)
    if magic not in (MODEL_MAGIC, FEATURES_MAGIC):
        raise IngestError("bad magic")
    version = rd.scalar("<u4")
    if version != FORMAT_VERSION:
        raise IngestError(f"unsupported format version {version}")
    if magic == MODEL_MAGIC:
        n = rd.scalar("<u4")
        num_layers = rd.scalar("<u4")
        layers = []
        for _ in range(num_layers):
            nnz = rd.scalar("<u8")
            row_ptr = rd.array(n + 1, "<u8").astype(np.int64)
            col_idx = rd.array(nnz, "<u4").astype(np.int32)
            values = rd.array(nnz, "<f4").astype(np.float32)
            layers.append(LayerCSR(row_ptr=row_ptr, col_idx=col_idx, values=values))
        bias = rd.array(n, "<f4").astype(np.float32)
        return NetworkModel(neurons=n, layers=tuple(layers), bias=bias)
    n = rd.scalar("<u4")
    m = rd.scalar("<u4")
    nnz = rd.scalar("<u8")
    rec = np.frombuffer(rd.take(12 * nnz),
                        dtype=np.dtype([("img", "<u4"), ("neu", "<u4"), ("val", "<f4")]))
    data = np.zeros((n, m), dtype=np.float32, order="F")
    data[rec["neu"], rec["img"]] = rec["val"]
    return make_feature_batch(n, data)
