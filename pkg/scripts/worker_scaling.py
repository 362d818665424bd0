#!/usr/bin/env python3
"""Worker-count scaling with per-layer load balancing.

Runs the batch-parallel engine for each worker count, optionally injecting a
fixed per-message latency to mimic a slow interconnect, and prints elapsed
time, moved rows, and the communication matrix of the largest sweep point.
"""

import argparse
import sys
import time

from spdnn import engine, ingest, parallel
from spdnn.model import InferenceConfig


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--neurons", type=int, default=1024)
    ap.add_argument("--layers", type=int, default=60)
    ap.add_argument("--inputs", type=int, default=3000)
    ap.add_argument("--connections", type=int, default=32)
    ap.add_argument("--density", type=float, default=0.3)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--workers", default="1,2,4,6")
    ap.add_argument("--rebalance-threshold", type=float, default=1.25)
    ap.add_argument("--message-latency", type=float, default=0.0,
                    help="seconds of sleep per exchanged message")
    args = ap.parse_args()

    spec = ingest.GeneratorSpec(neurons=args.neurons, layers=args.layers,
                                connections_per_neuron=args.connections,
                                seed=args.seed, input_count=args.inputs,
                                input_density=args.density)
    model = ingest.generate_synthetic_network(spec)
    inputs = ingest.generate_synthetic_inputs(args.neurons, args.inputs,
                                              args.density, seed=args.seed + 1)
    prepared = engine.prepare_model(model, InferenceConfig(), "optimized")
    warm = ingest.generate_synthetic_inputs(args.neurons, 2, 0.5, seed=0)
    engine.infer(model, warm, InferenceConfig(), mode="optimized", prepared=prepared)

    hook = None
    if args.message_latency > 0:
        hook = lambda msg: time.sleep(args.message_latency)

    reference = None
    last = None
    print("workers elapsed_s survivors moved_rows rebalances")
    for w in (int(x) for x in args.workers.split(",")):
        cfg = InferenceConfig(workers=w,
                              rebalance_threshold=args.rebalance_threshold)
        res, comm, balance = parallel.run_batch_parallel(
            model, inputs, cfg, prepared=prepared, latency_hook=hook)
        if reference is None:
            reference = list(res.categories)
        assert list(res.categories) == reference, "worker-count invariance broke"
        rebalances = sum(1 for e in balance.entries if e.rebalanced)
        print(f"{w} {res.elapsed_seconds:.3f} {len(res.categories)} "
              f"{comm.total_moved} {rebalances}")
        last = comm
    if last is not None and last.matrix.shape[0] > 1:
        print("communication matrix (last sweep point):")
        for row in last.matrix:
            print("  " + " ".join(f"{int(v):6d}" for v in row))
    return 0


if __name__ == "__main__":
    sys.exit(main())
