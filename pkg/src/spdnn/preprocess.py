"""Execution-structure preprocessing for the staged sparse kernel.

Three transformations happen here, once per layer, before any inference:

* staging plan: per output block, the deduplicated sorted set of input rows
  the block touches (its footprint), split into stages of at most
  ``buffer_capacity`` entries, plus the preload list that fills the staging
  buffer for each stage;
* index remap: every stored column index is rewritten to its buffer slot
  within its stage, so the kernel gathers from the staging buffer instead of
  from the full feature column;
* sliced-ELL: the remapped indices/values are transposed into fixed-width
  slices per (warp, stage), zero-padded at warp granularity, so lanes of a
  warp read consecutive elements.

Index-bearing arrays (`map`, `windex`) are stored as two-byte unsigned ints,
which is lossless up to 65536 rows/slots and halves their footprint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import LayerCSR, ModelError


def narrow_indices(values: np.ndarray) -> np.ndarray:
    """Compact an index array to two-byte unsigned ints, losslessly."""
    values = np.asarray(values)
    if values.size and (int(values.min()) < 0 or int(values.max()) >= 65536):
        raise ModelError("neuron count exceeds compact index range")
    return values.astype(np.uint16)


@dataclass(frozen=True)
class StagingPlan:
    """Preload lists and displacements for one layer's staging buffers.

    ``buffdispl[b]..buffdispl[b+1]`` are block b's global stage ids;
    ``map[mapdispl[s]:mapdispl[s+1]]`` are the global input rows stage s
    preloads, sorted and deduplicated, at most ``buffer_capacity`` of them.
    """

    block_size: int
    buffer_capacity: int
    buffdispl: np.ndarray  # int64, num_blocks + 1
    mapdispl: np.ndarray   # int64, total_stages + 1
    map: np.ndarray        # uint16, total preload entries

    @property
    def num_blocks(self) -> int:
        return len(self.buffdispl) - 1

    @property
    def total_stages(self) -> int:
        return int(self.buffdispl[-1])

    def stage_occupancy(self, stage: int) -> int:
        return int(self.mapdispl[stage + 1] - self.mapdispl[stage])


@dataclass(frozen=True)
class RemappedCsr:
    """CSR with buffer-relative column slots plus each entry's global stage id.

    Slots reset at stage boundaries, so they are not globally increasing along
    a row; the explicit ``stages`` array keeps the (stage, slot) -> original
    column mapping recoverable. Within one (row, stage) segment slots are
    strictly increasing.
    """

    neurons: int
    row_ptr: np.ndarray  # int64
    slots: np.ndarray    # uint16, buffer slot per nonzero
    stages: np.ndarray   # int64, global stage id per nonzero
    values: np.ndarray   # float32

    @property
    def nnz(self) -> int:
        return len(self.slots)


@dataclass(frozen=True)
class SlicedEllLayer:
    """Transposed sliced-ELL weights with zero padding at warp granularity.

    Slice m holds one entry per lane: ``windex[m*warp_size + lane]`` /
    ``wvalue[...]``. ``wdispl`` is indexed by ``stage*warps_per_block + warp``
    (stage ids are global, matching the staging plan), and its consecutive
    entries delimit each warp's slices for that stage. Padded slots carry
    (index 0, value 0): accumulating 0 * buffer[0] is harmless.
    """

    neurons: int
    warp_size: int
    wdispl: np.ndarray  # int64, total_stages * warps_per_block + 1
    windex: np.ndarray  # uint16
    wvalue: np.ndarray  # float32
    num_blocks: int
    plan: StagingPlan

    @property
    def warps_per_block(self) -> int:
        return self.plan.block_size // self.warp_size

    @property
    def total_slots(self) -> int:
        """Stored weight slots including padding."""
        return int(self.wdispl[-1]) * self.warp_size


@dataclass(frozen=True)
class PaddingStats:
    """Zero-padding cost of fixed-width storage at three granularities.

    Granularity fixes the slice count shared by a group of rows per stage:
    its own warp, its whole block (tile), or every block in the layer. Warp
    padding is what the sliced-ELL layout actually stores; the coarser two are
    reported for comparison. Overheads are padded slots divided by nnz.
    """

    nnz: int
    warp_padded_slots: int
    tile_padded_slots: int
    layer_padded_slots: int
    warp_overhead: float
    tile_overhead: float
    layer_overhead: float
    empty: bool = False


@dataclass(frozen=True)
class CompactIndexReport:
    """Byte footprint of the index-bearing structures, four-byte vs two-byte."""

    wide_bytes: int
    narrow_bytes: int
    reduction: float


def _entry_rows(layer_row_ptr: np.ndarray) -> np.ndarray:
    return np.repeat(np.arange(len(layer_row_ptr) - 1, dtype=np.int64),
                     np.diff(layer_row_ptr))


def build_staging_plan(layer: LayerCSR, block_size: int,
                       buffer_capacity: int) -> tuple[StagingPlan, RemappedCsr]:
    """Build the per-block preload plan and rewrite indices as buffer slots.

    Each block's footprint is sorted, deduplicated, and split greedily into
    stages of at most buffer_capacity entries; buffer slots within a stage are
    assigned in ascending global-row order. Gathering through (map, slot)
    reproduces gathering through the original column indices exactly.
    """
    if buffer_capacity < 1:
        raise ModelError("buffer_capacity must be at least 1")
    if block_size < 1:
        raise ModelError("block_size must be positive")
    n = layer.neurons
    num_blocks = -(-n // block_size)
    buffdispl = np.zeros(num_blocks + 1, dtype=np.int64)
    mapdispl = [0]
    map_parts: list[np.ndarray] = []
    slots = np.zeros(layer.nnz, dtype=np.int64)
    stages = np.zeros(layer.nnz, dtype=np.int64)
    for b in range(num_blocks):
        lo = int(layer.row_ptr[b * block_size])
        hi = int(layer.row_ptr[min((b + 1) * block_size, n)])
        block_cols = layer.col_idx[lo:hi]
        footprint = np.unique(block_cols)
        nstages = -(-len(footprint) // buffer_capacity)
        pos = np.searchsorted(footprint, block_cols)
        stages[lo:hi] = buffdispl[b] + pos // buffer_capacity
        slots[lo:hi] = pos % buffer_capacity
        for s in range(nstages):
            part = footprint[s * buffer_capacity:(s + 1) * buffer_capacity]
            map_parts.append(part)
            mapdispl.append(mapdispl[-1] + len(part))
        buffdispl[b + 1] = buffdispl[b] + nstages
    full_map = np.concatenate(map_parts) if map_parts else np.empty(0, dtype=np.int64)
    plan = StagingPlan(block_size=block_size, buffer_capacity=buffer_capacity,
                       buffdispl=buffdispl,
                       mapdispl=np.asarray(mapdispl, dtype=np.int64),
                       map=narrow_indices(full_map))
    remapped = RemappedCsr(neurons=n, row_ptr=layer.row_ptr,
                           slots=narrow_indices(slots), stages=stages,
                           values=layer.values)
    return plan, remapped


def _stage_segments(remapped: RemappedCsr):
    """Per-entry (row, lane, warp-slot, index-within-segment) for the ELL layout.

    A segment is one row's run of entries belonging to one stage; runs are
    contiguous because stages are monotone along a row.
    """
    rows = _entry_rows(remapped.row_ptr)
    nnz = remapped.nnz
    if nnz == 0:
        z = np.empty(0, dtype=np.int64)
        return rows, z, z, z
    new_seg = np.ones(nnz, dtype=bool)
    new_seg[1:] = (rows[1:] != rows[:-1]) | (remapped.stages[1:] != remapped.stages[:-1])
    seg_start = np.where(new_seg, np.arange(nnz, dtype=np.int64), 0)
    np.maximum.accumulate(seg_start, out=seg_start)
    within = np.arange(nnz, dtype=np.int64) - seg_start
    return rows, within, new_seg, seg_start


def csr_to_sliced_ell(remapped: RemappedCsr, plan: StagingPlan,
                      warp_size: int) -> SlicedEllLayer:
    """Transpose remapped CSR into warp-granularity padded slices.

    Per (warp, stage) the slice count is the largest per-stage entry count of
    any row in the warp; shorter rows are padded with (0, 0). A partial final
    block keeps full warps, with missing rows acting as empty rows.
    """
    if plan.block_size % warp_size != 0:
        raise ModelError("block_size must be divisible by warp_size")
    wpb = plan.block_size // warp_size
    total_stages = plan.total_stages
    rows, within, _, _ = _stage_segments(remapped)
    row_local = rows % plan.block_size
    lane = row_local % warp_size
    warp_slot = remapped.stages * wpb + row_local // warp_size

    slice_counts = np.zeros(total_stages * wpb, dtype=np.int64)
    if remapped.nnz:
        np.maximum.at(slice_counts, warp_slot, within + 1)
    wdispl = np.zeros(len(slice_counts) + 1, dtype=np.int64)
    np.cumsum(slice_counts, out=wdispl[1:])

    total = int(wdispl[-1]) * warp_size
    windex = np.zeros(total, dtype=np.uint16)
    wvalue = np.zeros(total, dtype=np.float32)
    if remapped.nnz:
        dest = (wdispl[warp_slot] + within) * warp_size + lane
        windex[dest] = remapped.slots
        wvalue[dest] = remapped.values
    return SlicedEllLayer(neurons=remapped.neurons, warp_size=warp_size,
                          wdispl=wdispl, windex=windex, wvalue=wvalue,
                          num_blocks=plan.num_blocks, plan=plan)


def expand_sliced_ell(ell: SlicedEllLayer) -> RemappedCsr:
    """Invert csr_to_sliced_ell: drop padded slots, restore stage-relative CSR.

    Padding is recognized by its zero value, so layers with explicitly stored
    zero weights do not round-trip (the synthetic and challenge layers never
    store zeros).
    """
    plan = ell.plan
    ws = ell.warp_size
    wpb = ell.warps_per_block
    n_slices = int(ell.wdispl[-1])
    if n_slices == 0:
        return RemappedCsr(neurons=ell.neurons,
                           row_ptr=np.zeros(ell.neurons + 1, dtype=np.int64),
                           slots=np.empty(0, dtype=np.uint16),
                           stages=np.empty(0, dtype=np.int64),
                           values=np.empty(0, dtype=np.float32))
    idx = np.arange(n_slices * ws, dtype=np.int64)
    m = idx // ws
    lane = idx % ws
    warp_slot = np.searchsorted(ell.wdispl, m, side="right") - 1
    stage = warp_slot // wpb
    warp_in_block = warp_slot % wpb
    block = np.searchsorted(plan.buffdispl, stage, side="right") - 1
    row = block * plan.block_size + warp_in_block * ws + lane

    keep = ell.wvalue != 0
    row, m, stage = row[keep], m[keep], stage[keep]
    order = np.lexsort((m, row))
    row = row[order]
    row_ptr = np.zeros(ell.neurons + 1, dtype=np.int64)
    np.add.at(row_ptr, row + 1, 1)
    np.cumsum(row_ptr, out=row_ptr)
    return RemappedCsr(neurons=ell.neurons, row_ptr=row_ptr,
                       slots=ell.windex[keep][order],
                       stages=stage[order],
                       values=ell.wvalue[keep][order])


def padding_stats(layer: LayerCSR, plan: StagingPlan,
                  warp_size: int) -> PaddingStats:
    """Padded-slot counts if slice widths were fixed per warp, block, or layer."""
    if plan.block_size % warp_size != 0:
        raise ModelError("block_size must be divisible by warp_size")
    nnz = layer.nnz
    if nnz == 0:
        return PaddingStats(nnz=0, warp_padded_slots=0, tile_padded_slots=0,
                            layer_padded_slots=0, warp_overhead=0.0,
                            tile_overhead=0.0, layer_overhead=0.0, empty=True)
    _, remapped = build_staging_plan(layer, plan.block_size, plan.buffer_capacity)
    wpb = plan.block_size // warp_size
    total_stages = plan.total_stages
    rows, within, _, _ = _stage_segments(remapped)
    row_local = rows % plan.block_size
    warp_slot = remapped.stages * wpb + row_local // warp_size

    warp_max = np.zeros(total_stages * wpb, dtype=np.int64)
    np.maximum.at(warp_max, warp_slot, within + 1)
    stage_max = np.zeros(total_stages, dtype=np.int64)
    np.maximum.at(stage_max, remapped.stages, within + 1)
    global_max = int(stage_max.max(initial=0))

    warp_slots = int(warp_max.sum()) * warp_size
    tile_slots = int(stage_max.sum()) * plan.block_size
    layer_slots = global_max * plan.block_size * total_stages
    return PaddingStats(
        nnz=nnz,
        warp_padded_slots=warp_slots - nnz,
        tile_padded_slots=tile_slots - nnz,
        layer_padded_slots=layer_slots - nnz,
        warp_overhead=(warp_slots - nnz) / nnz,
        tile_overhead=(tile_slots - nnz) / nnz,
        layer_overhead=(layer_slots - nnz) / nnz,
    )


def combine_padding_stats(stats: list[PaddingStats]) -> PaddingStats:
    """Aggregate per-layer padding stats into whole-model totals."""
    nnz = sum(s.nnz for s in stats)
    warp = sum(s.warp_padded_slots for s in stats)
    tile = sum(s.tile_padded_slots for s in stats)
    layer = sum(s.layer_padded_slots for s in stats)
    if nnz == 0:
        return PaddingStats(0, warp, tile, layer, 0.0, 0.0, 0.0, empty=True)
    return PaddingStats(nnz, warp, tile, layer,
                        warp / nnz, tile / nnz, layer / nnz)


def index_memory_report(ell: SlicedEllLayer) -> CompactIndexReport:
    """Compare the index-bearing footprint with four-byte vs two-byte indices.

    Displacement arrays stay four-byte in both scenarios; only windex and the
    preload map switch width, so their own footprint exactly halves.
    """
    plan = ell.plan
    elements = len(ell.windex) + len(plan.map)
    displ = len(ell.wdispl) + len(plan.mapdispl) + len(plan.buffdispl)
    wide = 4 * elements + 4 * displ
    narrow = 2 * elements + 4 * displ
    reduction = 0.0 if wide == 0 else 1.0 - narrow / wide
    return CompactIndexReport(wide_bytes=wide, narrow_bytes=narrow,
                              reduction=reduction)
