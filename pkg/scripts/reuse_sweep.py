#!/usr/bin/env python3
"""Sweep the minibatch width and measure weight-read reuse vs wall clock.

Each weight slot is read once per minibatch group in the staged path, so the
read counter should scale ~1/minibatch while the baseline rereads every
nonzero per feature. Prints one row per sweep point.
"""

import argparse
import sys

from spdnn import engine, ingest
from spdnn.model import InferenceConfig
from spdnn.preprocess import combine_padding_stats


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--neurons", type=int, default=1024)
    ap.add_argument("--layers", type=int, default=40)
    ap.add_argument("--inputs", type=int, default=2400)
    ap.add_argument("--connections", type=int, default=32)
    ap.add_argument("--density", type=float, default=0.3)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--minibatches", default="1,2,4,8,12,24")
    args = ap.parse_args()

    spec = ingest.GeneratorSpec(neurons=args.neurons, layers=args.layers,
                                connections_per_neuron=args.connections,
                                seed=args.seed, input_count=args.inputs,
                                input_density=args.density)
    model = ingest.generate_synthetic_network(spec)
    inputs = ingest.generate_synthetic_inputs(args.neurons, args.inputs,
                                              args.density, seed=args.seed + 1)
    cfg = InferenceConfig()
    prepared = engine.prepare_model(model, cfg, "optimized")
    overhead = combine_padding_stats([p.padding for p in prepared]).warp_overhead
    warm = ingest.generate_synthetic_inputs(args.neurons, 2, 0.5, seed=0)
    for mode in ("baseline", "optimized"):  # load jitted kernels off the clock
        engine.infer(model, warm, cfg, mode=mode,
                     prepared=prepared if mode == "optimized" else None)

    base = engine.infer(model, inputs, cfg, mode="baseline")
    base_reads = sum(o.weight_element_reads for o in base.per_layer)
    print(f"baseline: {base.elapsed_seconds:.3f}s reads={base_reads}")
    print(f"warp padding overhead: {overhead:.4f}")
    print("minibatch elapsed_s weight_reads reuse_ratio ideal_ratio")
    for mb in (int(x) for x in args.minibatches.split(",")):
        run = engine.infer(model, inputs, InferenceConfig(minibatch=mb),
                           mode="optimized", prepared=prepared)
        reads = sum(o.weight_element_reads for o in run.per_layer)
        print(f"{mb} {run.elapsed_seconds:.3f} {reads} "
              f"{base_reads / reads:.3f} {mb / (1 + overhead):.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
