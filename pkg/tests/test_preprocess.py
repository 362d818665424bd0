import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_layer
from spdnn.model import ModelError, make_layer_csr
from spdnn.preprocess import (
    build_staging_plan,
    combine_padding_stats,
    csr_to_sliced_ell,
    expand_sliced_ell,
    index_memory_report,
    narrow_indices,
    padding_stats,
)


def _block_example_layer():
    """One 4-row block whose footprint is the 11-element preload list."""
    entries = {
        0: [0, 4, 7, 13],
        1: [1, 3, 5, 8],
        2: [4, 10, 11, 14],
        3: [0, 7, 13],
    }
    rows, cols = [], []
    for r, cs in entries.items():
        rows.extend([r] * len(cs))
        cols.extend(cs)
    return make_layer_csr(16, np.array(rows), np.array(cols),
                          np.full(len(rows), 0.5, dtype=np.float32))


def test_preload_list_single_stage():
    layer = _block_example_layer()
    plan, remapped = build_staging_plan(layer, block_size=4, buffer_capacity=64)
    assert plan.buffdispl[1] - plan.buffdispl[0] == 1  # one stage for block 0
    stage0 = plan.map[plan.mapdispl[0]:plan.mapdispl[1]]
    assert stage0.tolist() == [0, 1, 3, 4, 5, 7, 8, 10, 11, 13, 14]
    # row 0's index prefix [0, 4, 7] remaps to buffer slots [0, 3, 5]
    assert remapped.slots[:3].tolist() == [0, 3, 5]


def test_preload_two_stages_with_capacity_six():
    layer = _block_example_layer()
    plan, remapped = build_staging_plan(layer, block_size=4, buffer_capacity=6)
    assert plan.buffdispl[1] - plan.buffdispl[0] == 2
    assert plan.map[plan.mapdispl[0]:plan.mapdispl[1]].tolist() == [0, 1, 3, 4, 5, 7]
    assert plan.map[plan.mapdispl[1]:plan.mapdispl[2]].tolist() == [8, 10, 11, 13, 14]
    # second-stage slot assignment: rows 8, 10, 13 land in buffer 0, 1, 3
    cols = layer.col_idx
    for col, slot in ((8, 0), (10, 1), (13, 3)):
        for e in np.nonzero(cols == col)[0]:
            assert remapped.stages[e] == 1
            assert remapped.slots[e] == slot


def _gather_matches(layer, plan, remapped):
    gathered = plan.map[plan.mapdispl[remapped.stages] + remapped.slots]
    return np.array_equal(gathered.astype(np.int64), layer.col_idx.astype(np.int64))


@given(st.data())
def test_gather_equivalence_property(data):
    rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
    n = int(rng.integers(1, 64))
    layer = random_layer(rng, n, max_row_nnz=min(n, 9))
    block = int(rng.integers(1, n + 2))
    cap = int(rng.integers(1, n + 3))
    plan, remapped = build_staging_plan(layer, block, cap)
    assert _gather_matches(layer, plan, remapped)
    # stage sizing: no stage exceeds capacity
    assert (np.diff(plan.mapdispl) <= cap).all()


def test_map_equals_footprint_when_capacity_unlimited():
    rng = np.random.default_rng(11)
    layer = random_layer(rng, 32, max_row_nnz=6)
    plan, _ = build_staging_plan(layer, block_size=8, buffer_capacity=10**6)
    for b in range(plan.num_blocks):
        lo, hi = layer.row_ptr[b * 8], layer.row_ptr[min((b + 1) * 8, 32)]
        footprint = np.unique(layer.col_idx[lo:hi])
        s0, s1 = plan.buffdispl[b], plan.buffdispl[b + 1]
        got = plan.map[plan.mapdispl[s0]:plan.mapdispl[s1]]
        assert got.tolist() == footprint.tolist()


def test_zero_capacity_rejected():
    layer = _block_example_layer()
    with pytest.raises(ModelError):
        build_staging_plan(layer, block_size=4, buffer_capacity=0)


def _roundtrip_equal(a, b):
    return (np.array_equal(a.row_ptr, b.row_ptr)
            and np.array_equal(a.slots, b.slots)
            and np.array_equal(a.stages, b.stages)
            and np.array_equal(a.values, b.values))


def test_sliced_ell_example_padding():
    # two rows in one warp with per-stage nnz (3, 1): 3 slices, 2 padded slots
    layer = make_layer_csr(4, np.array([0, 0, 0, 1]), np.array([0, 1, 2, 0]),
                           np.array([1, 2, 3, 4], dtype=np.float32))
    plan, remapped = build_staging_plan(layer, block_size=2, buffer_capacity=16)
    ell = csr_to_sliced_ell(remapped, plan, warp_size=2)
    assert int(ell.wdispl[-1]) == 3
    assert ell.total_slots - layer.nnz == 2
    assert _roundtrip_equal(expand_sliced_ell(ell), remapped)


def test_sliced_ell_uniform_rows_no_padding():
    rng = np.random.default_rng(3)
    cols = np.stack([rng.choice(8, size=3, replace=False) for _ in range(8)])
    cols.sort(axis=1)
    layer = make_layer_csr(8, np.repeat(np.arange(8), 3), cols.reshape(-1),
                           rng.uniform(0.1, 1, 24).astype(np.float32))
    plan, remapped = build_staging_plan(layer, block_size=4, buffer_capacity=64)
    ell = csr_to_sliced_ell(remapped, plan, warp_size=2)
    assert ell.total_slots == layer.nnz
    stats = padding_stats(layer, plan, warp_size=2)
    assert (stats.warp_overhead, stats.tile_overhead, stats.layer_overhead) == (0, 0, 0)


def test_sliced_ell_empty_layer():
    layer = make_layer_csr(6, np.empty(0), np.empty(0), np.empty(0, dtype=np.float32))
    plan, remapped = build_staging_plan(layer, block_size=4, buffer_capacity=8)
    ell = csr_to_sliced_ell(remapped, plan, warp_size=2)
    assert ell.total_slots == 0
    back = expand_sliced_ell(ell)
    assert back.nnz == 0
    assert back.row_ptr.tolist() == [0] * 7


@given(st.data())
def test_sliced_ell_roundtrip_property(data):
    rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
    n = int(rng.integers(1, 80))
    layer = random_layer(rng, n, max_row_nnz=min(n, 8))
    warp = int(rng.choice([1, 2, 4, 8]))
    wpb = int(rng.choice([1, 2, 4]))
    cap = int(rng.integers(1, n + 4))
    plan, remapped = build_staging_plan(layer, warp * wpb, cap)
    ell = csr_to_sliced_ell(remapped, plan, warp)
    assert len(ell.windex) == len(ell.wvalue) == ell.total_slots
    assert _roundtrip_equal(expand_sliced_ell(ell), remapped)
    stats = padding_stats(layer, plan, warp)
    assert stats.warp_padded_slots <= stats.tile_padded_slots <= stats.layer_padded_slots


def test_padding_example_three_to_one():
    layer = make_layer_csr(4, np.array([0, 0, 0, 1]), np.array([0, 1, 2, 0]),
                           np.ones(4, dtype=np.float32))
    plan, _ = build_staging_plan(layer, block_size=2, buffer_capacity=16)
    stats = padding_stats(layer, plan, warp_size=2)
    assert stats.warp_padded_slots == 2
    assert stats.warp_overhead == 0.5


def test_padding_empty_layer_flagged():
    layer = make_layer_csr(4, np.empty(0), np.empty(0), np.empty(0, dtype=np.float32))
    plan, _ = build_staging_plan(layer, block_size=2, buffer_capacity=4)
    stats = padding_stats(layer, plan, warp_size=2)
    assert stats.empty
    assert stats.warp_overhead == 0.0


def test_combine_padding_stats():
    layer = _block_example_layer()
    plan, _ = build_staging_plan(layer, 4, 6)
    s = padding_stats(layer, plan, 2)
    total = combine_padding_stats([s, s])
    assert total.nnz == 2 * s.nnz
    assert total.warp_padded_slots == 2 * s.warp_padded_slots
    assert total.warp_overhead == pytest.approx(s.warp_overhead)


def test_narrow_indices_boundaries():
    arr = narrow_indices(np.array([0, 65535]))
    assert arr.dtype == np.uint16
    assert arr.tolist() == [0, 65535]
    with pytest.raises(ModelError, match="compact index range"):
        narrow_indices(np.array([65536]))
    with pytest.raises(ModelError, match="compact index range"):
        narrow_indices(np.array([-1]))


def test_narrow_indices_halves_bytes():
    idx = np.arange(1000, dtype=np.int64)
    narrow = narrow_indices(idx)
    assert narrow.nbytes * 2 == idx.astype(np.uint32).nbytes


def test_index_memory_report_reduction():
    rng = np.random.default_rng(5)
    layer = random_layer(rng, 64, max_row_nnz=12)
    plan, remapped = build_staging_plan(layer, 16, 32)
    ell = csr_to_sliced_ell(remapped, plan, 4)
    rep = index_memory_report(ell)
    assert rep.narrow_bytes < rep.wide_bytes
    assert rep.reduction >= 0.25
