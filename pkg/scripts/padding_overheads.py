#!/usr/bin/env python3
"""Zero-padding overhead of the sliced-ELL layout across geometries.

Fixed-fan-in synthetic layers pad only when staging splits rows unevenly, so
this sweep uses a ragged random layer to show the warp <= tile <= layer
ordering and how buffer capacity changes the picture.
"""

import argparse
import sys

import numpy as np

from spdnn.model import make_layer_csr
from spdnn.preprocess import build_staging_plan, padding_stats


def ragged_layer(n: int, max_row_nnz: int, seed: int):
    rng = np.random.default_rng(seed)
    rows, cols = [], []
    for r in range(n):
        k = int(rng.integers(0, max_row_nnz + 1))
        c = rng.choice(n, size=k, replace=False)
        rows.extend([r] * k)
        cols.extend(c.tolist())
    values = rng.uniform(0.01, 1.0, len(rows)).astype(np.float32)
    return make_layer_csr(n, np.array(rows), np.array(cols), values)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--neurons", type=int, default=2048)
    ap.add_argument("--max-row-nnz", type=int, default=48)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--block-sizes", default="64,128,256")
    ap.add_argument("--warp-sizes", default="8,16,32")
    ap.add_argument("--capacities", default="128,512,2048")
    args = ap.parse_args()

    layer = ragged_layer(args.neurons, args.max_row_nnz, args.seed)
    print(f"layer: {args.neurons} neurons, nnz={layer.nnz}")
    print("block warp capacity warp_ovh tile_ovh layer_ovh")
    for block in (int(x) for x in args.block_sizes.split(",")):
        for warp in (int(x) for x in args.warp_sizes.split(",")):
            if block % warp:
                continue
            for cap in (int(x) for x in args.capacities.split(",")):
                plan, _ = build_staging_plan(layer, block, cap)
                s = padding_stats(layer, plan, warp)
                print(f"{block} {warp} {cap} "
                      f"{s.warp_overhead:.4f} {s.tile_overhead:.4f} "
                      f"{s.layer_overhead:.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
