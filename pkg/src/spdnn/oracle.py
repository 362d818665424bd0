"""Brute-force dense reference used as ground truth by every other path.

Deliberately simple: materialize each layer as a dense matrix, run a fixed
triple loop, apply the same drop-all-zero-columns compaction the engine uses.
Capped at 4096 neurons to keep dense materialization tractable; performance
is a non-goal.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .model import FeatureBatch, LayerCSR, ModelError, NetworkModel

MAX_NEURONS = 4096


def _densify(layer: LayerCSR) -> np.ndarray:
    n = layer.neurons
    dense = np.zeros((n, n), dtype=np.float32)
    rows = np.repeat(np.arange(n), np.diff(layer.row_ptr))
    dense[rows, layer.col_idx] = layer.values
    return dense


def reference_layer(features: FeatureBatch, layer: LayerCSR,
                    bias: np.ndarray) -> np.ndarray:
    """Dense clamped-ReLU layer evaluation; returns the (N, M) output array."""
    n = layer.neurons
    if n > MAX_NEURONS:
        raise ModelError(f"reference path is capped at {MAX_NEURONS} neurons")
    if features.neurons != n or len(bias) != n:
        raise ModelError("dimension mismatch between features, layer, and bias")
    out = np.empty((n, features.active_count), dtype=np.float32, order="F")
    kernels.dense_fused_relu(_densify(layer), features.data,
                             np.ascontiguousarray(bias, dtype=np.float32), out)
    return out


def reference_infer(model: NetworkModel,
                    inputs: FeatureBatch) -> tuple[FeatureBatch, list[int]]:
    """Run all layers, dropping all-zero feature columns after each.

    Returns the final compacted batch plus its sorted category list. The
    compaction rule matches the engine exactly, so the comparison is valid for
    either bias sign.
    """
    if inputs.neurons != model.neurons:
        raise ModelError("inputs do not match model width")
    feats = inputs
    for layer in model.layers:
        if feats.active_count == 0:
            break
        out = reference_layer(feats, layer, model.bias)
        alive = (out > 0).any(axis=0)
        feats = FeatureBatch(neurons=model.neurons,
                             data=np.asfortranarray(out[:, alive]),
                             categories=feats.categories[alive],
                             total_inputs=feats.total_inputs)
    return feats, [int(c) for c in feats.categories]
