"""Command-line front end: generate datasets, run inference, verify, benchmark.

Exit codes: 0 ok, 1 verification mismatch, 2 usage or I/O or validation error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import engine, oracle, parallel
from .ingest import (
    GeneratorSpec,
    IngestError,
    generate_synthetic_inputs,
    generate_synthetic_network,
    load_features_tsv,
    load_layer_tsv,
    load_truth_categories,
    read_binary,
    write_binary,
)
from .model import (
    FeatureBatch,
    InferenceConfig,
    ModelError,
    NetworkModel,
    validate_model,
)
from .preprocess import (
    CompactIndexReport,
    combine_padding_stats,
    index_memory_report,
    narrow_indices,
)
from .report import RunReport, render_report

EXIT_OK = 0
EXIT_MISMATCH = 1
EXIT_ERROR = 2


def _gen_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--neurons", type=int, required=True)
    p.add_argument("--layers", type=int, required=True)
    p.add_argument("--inputs", type=int, required=True)
    p.add_argument("--connections", type=int, default=32)
    p.add_argument("--bias", type=float, default=-0.3)
    p.add_argument("--density", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=0)


def _engine_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=("baseline", "optimized"), default="optimized")
    p.add_argument("--workers", default="1",
                   help="worker count; bench accepts a comma-separated list")
    p.add_argument("--minibatch", type=int, default=12)
    p.add_argument("--block-size", type=int, default=256)
    p.add_argument("--warp-size", type=int, default=32)
    p.add_argument("--buffer-capacity", type=int, default=1024)
    p.add_argument("--rebalance-threshold", type=float, default=1.25)
    p.add_argument("--streaming", choices=("on", "off"), default="off")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spdnn",
                                     description="sparse DNN inference engine")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic model, inputs, and truth")
    _gen_args(g)
    g.add_argument("--format", choices=("bin", "tsv"), default="bin")
    g.add_argument("--out", required=True)
    g.add_argument("--skip-truth", action="store_true",
                   help="skip the reference-path ground truth (required beyond "
                        "its 4096-neuron cap)")

    r = sub.add_parser("run", help="run inference on a dataset and print a report")
    r.add_argument("--data", required=True)
    r.add_argument("--format", choices=("auto", "bin", "tsv"), default="auto")
    _engine_args(r)
    r.add_argument("--truth", help="ground-truth categories to verify against")
    r.add_argument("--categories-out", help="write resulting categories (1-indexed)")

    v = sub.add_parser("verify", help="compare a category file against ground truth")
    v.add_argument("--result", required=True)
    v.add_argument("--truth", required=True)

    b = sub.add_parser("bench", help="sweep modes/workers and print a summary")
    b.add_argument("--data", help="dataset directory; omit to generate in memory")
    b.add_argument("--format", choices=("auto", "bin", "tsv"), default="auto")
    b.add_argument("--modes", default="baseline,optimized")
    _engine_args(b)
    b.add_argument("--truth", help="ground-truth categories to verify against")
    b.add_argument("--neurons", type=int)
    b.add_argument("--layers", type=int)
    b.add_argument("--inputs", type=int)
    b.add_argument("--connections", type=int, default=32)
    b.add_argument("--bias", type=float, default=-0.3)
    b.add_argument("--density", type=float, default=0.3)
    b.add_argument("--seed", type=int, default=0)
    return parser


def _format_value(v: np.float32) -> str:
    return f"{float(v):.9g}"


def _write_tsv_dataset(model: NetworkModel, inputs: FeatureBatch, out: Path) -> None:
    for l, layer in enumerate(model.layers):
        rows = np.repeat(np.arange(model.neurons), np.diff(layer.row_ptr))
        with open(out / f"layer-{l:03d}.tsv", "w") as f:
            for r, c, v in zip(rows, layer.col_idx, layer.values):
                f.write(f"{r + 1}\t{c + 1}\t{_format_value(v)}\n")
    with open(out / "inputs.tsv", "w") as f:
        image_idx, neuron_idx = np.nonzero(inputs.data.T)
        for img, neu in zip(image_idx, neuron_idx):
            f.write(f"{img + 1}\t{neu + 1}\t{_format_value(inputs.data[neu, img])}\n")
    with open(out / "bias.tsv", "w") as f:
        for v in model.bias:
            f.write(f"{_format_value(v)}\n")
    with open(out / "meta.tsv", "w") as f:
        f.write(f"neurons\t{model.neurons}\n")
        f.write(f"layers\t{model.num_layers}\n")
        f.write(f"inputs\t{inputs.total_inputs}\n")


def _write_categories(path: Path, categories) -> None:
    with open(path, "w") as f:
        for c in categories:
            f.write(f"{int(c) + 1}\n")


def cmd_generate(args) -> int:
    # the execution structures index rows with two-byte ints; reject models
    # they could never run
    narrow_indices(np.array([args.neurons - 1]))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = GeneratorSpec(neurons=args.neurons, layers=args.layers,
                         connections_per_neuron=args.connections,
                         bias_value=args.bias, seed=args.seed,
                         input_count=args.inputs, input_density=args.density)
    model = generate_synthetic_network(spec)
    inputs = generate_synthetic_inputs(args.neurons, args.inputs,
                                       args.density, seed=args.seed + 1)
    if args.format == "bin":
        with open(out / "model.bin", "wb") as f:
            write_binary(model, f)
        with open(out / "inputs.bin", "wb") as f:
            write_binary(inputs, f)
    else:
        _write_tsv_dataset(model, inputs, out)
    if not args.skip_truth:
        if args.neurons > oracle.MAX_NEURONS:
            raise ModelError(
                f"reference-path truth is capped at {oracle.MAX_NEURONS} neurons; "
                "pass --skip-truth for larger models")
        _, cats = oracle.reference_infer(model, inputs)
        _write_categories(out / "truth.tsv", cats)
    print(f"wrote dataset to {out}", file=sys.stderr)
    return EXIT_OK


def _load_dataset(data: Path, fmt: str) -> tuple[NetworkModel, FeatureBatch]:
    if fmt == "auto":
        fmt = "bin" if (data / "model.bin").exists() else "tsv"
    if fmt == "bin":
        with open(data / "model.bin", "rb") as f:
            model = read_binary(f)
        with open(data / "inputs.bin", "rb") as f:
            inputs = read_binary(f)
        if not isinstance(model, NetworkModel) or not isinstance(inputs, FeatureBatch):
            raise IngestError("model.bin/inputs.bin hold the wrong payload types")
        return model, inputs
    meta = {}
    with open(data / "meta.tsv") as f:
        for line in f:
            key, value = line.split("\t")
            meta[key] = int(value)
    n, num_layers, m = meta["neurons"], meta["layers"], meta["inputs"]
    layers = []
    for l in range(num_layers):
        with open(data / f"layer-{l:03d}.tsv", "rb") as f:
            layers.append(load_layer_tsv(f, n))
    bias = np.loadtxt(data / "bias.tsv", dtype=np.float32, ndmin=1)
    model = NetworkModel(neurons=n, layers=tuple(layers), bias=bias)
    with open(data / "inputs.tsv", "rb") as f:
        inputs = load_features_tsv(f, n, m)
    return model, inputs


def _run_once(model: NetworkModel, inputs: FeatureBatch, config: InferenceConfig,
              mode: str, prepared_opt) -> tuple[RunReport, object]:
    """Run one inference and assemble its report (verified left unset)."""
    if config.workers > 1:
        if config.streaming:
            print("note: streaming applies to single-worker runs; "
                  "running the parallel path with eager weights", file=sys.stderr)
        run_prepared = prepared_opt if mode == "optimized" else None
        result, comm, balance = parallel.run_batch_parallel(
            model, inputs, config, mode=mode, prepared=run_prepared)
    else:
        comm, balance = None, None
        run_prepared = None
        if mode == "optimized" and not config.streaming:
            run_prepared = prepared_opt
        result = engine.infer(model, inputs, config, mode=mode,
                              prepared=run_prepared)
    padding = combine_padding_stats([p.padding for p in prepared_opt])
    idx_reports = [index_memory_report(p.ell) for p in prepared_opt]
    wide = sum(r.wide_bytes for r in idx_reports)
    narrow = sum(r.narrow_bytes for r in idx_reports)
    index_report = CompactIndexReport(
        wide_bytes=wide, narrow_bytes=narrow,
        reduction=0.0 if wide == 0 else 1.0 - narrow / wide)
    report = RunReport(
        neurons=model.neurons, layers=model.num_layers,
        inputs=inputs.total_inputs, mode=mode, workers=config.workers,
        minibatch=config.minibatch, block_size=config.block_size,
        warp_size=config.warp_size, buffer_capacity=config.buffer_capacity,
        streaming=config.streaming,
        rebalance_threshold=config.rebalance_threshold,
        elapsed_seconds=result.elapsed_seconds,
        edges_processed=result.edges_processed,
        weight_element_reads=sum(o.weight_element_reads for o in result.per_layer),
        feature_element_reads=sum(o.feature_element_reads for o in result.per_layer),
        per_layer_active_counts=[(o.active_before, o.active_after)
                                 for o in result.per_layer],
        padding_stats=padding,
        index_report=index_report,
        comm_matrix=comm,
        balance_report=balance)
    return report, result


def _config_from_args(args, workers: int) -> InferenceConfig:
    return InferenceConfig(minibatch=args.minibatch, block_size=args.block_size,
                           warp_size=args.warp_size,
                           buffer_capacity=args.buffer_capacity,
                           workers=workers,
                           rebalance_threshold=args.rebalance_threshold,
                           streaming=args.streaming == "on")


def cmd_run(args) -> int:
    model, inputs = _load_dataset(Path(args.data), args.format)
    violations = validate_model(model)
    if violations:
        for v in violations:
            print(f"invalid model: {v}", file=sys.stderr)
        return EXIT_ERROR
    config = _config_from_args(args, int(args.workers))
    prepared_opt = engine.prepare_model(model, config, "optimized")
    report, result = _run_once(model, inputs, config, args.mode, prepared_opt)
    mismatch = False
    if args.truth:
        with open(args.truth, "rb") as f:
            truth = load_truth_categories(f)
        report.verified = list(result.categories) == truth
        mismatch = not report.verified
    if args.categories_out:
        _write_categories(Path(args.categories_out), result.categories)
    sys.stdout.write(render_report(report))
    return EXIT_MISMATCH if mismatch else EXIT_OK


def cmd_verify(args) -> int:
    with open(args.result, "rb") as f:
        result = load_truth_categories(f)
    with open(args.truth, "rb") as f:
        truth = load_truth_categories(f)
    if result == truth:
        print(f"verified: {len(result)} categories match")
        return EXIT_OK
    for i in range(min(len(result), len(truth))):
        if result[i] != truth[i]:
            print(f"mismatch at position {i}: result {result[i] + 1}, "
                  f"truth {truth[i] + 1}")
            return EXIT_MISMATCH
    longer, name = (result, "result") if len(result) > len(truth) else (truth, "truth")
    i = min(len(result), len(truth))
    print(f"mismatch at position {i}: {name} has extra category {longer[i] + 1}")
    return EXIT_MISMATCH


def cmd_bench(args) -> int:
    if args.data:
        model, inputs = _load_dataset(Path(args.data), args.format)
        truth_path = Path(args.truth) if args.truth else Path(args.data) / "truth.tsv"
    else:
        if args.neurons is None or args.layers is None or args.inputs is None:
            raise ModelError("bench needs either --data or --neurons/--layers/--inputs")
        spec = GeneratorSpec(neurons=args.neurons, layers=args.layers,
                             connections_per_neuron=args.connections,
                             bias_value=args.bias, seed=args.seed,
                             input_count=args.inputs, input_density=args.density)
        model = generate_synthetic_network(spec)
        inputs = generate_synthetic_inputs(args.neurons, args.inputs,
                                           args.density, seed=args.seed + 1)
        truth_path = Path(args.truth) if args.truth else None
    truth = None
    if truth_path is not None and truth_path.exists():
        with open(truth_path, "rb") as f:
            truth = load_truth_categories(f)

    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    workers = [int(w) for w in str(args.workers).split(",")]
    base_config = _config_from_args(args, 1)
    prepared_opt = engine.prepare_model(model, base_config, "optimized")
    summary = []
    reads_by_mode: dict[str, int] = {}
    for mode in modes:
        for w in workers:
            config = _config_from_args(args, w)
            report, result = _run_once(model, inputs, config, mode, prepared_opt)
            if truth is not None:
                report.verified = list(result.categories) == truth
            sys.stdout.write(render_report(report))
            sys.stdout.write("\n")
            summary.append((mode, w, report))
            if w == workers[0]:
                reads_by_mode[mode] = report.weight_element_reads
    print("bench summary:")
    print("  mode workers elapsed_seconds edges_per_second weight_reads verified")
    for mode, w, rep in summary:
        verified = "-" if rep.verified is None else ("yes" if rep.verified else "no")
        print(f"  {mode} {w} {rep.elapsed_seconds:.3f} {rep.edges_per_second:.3e} "
              f"{rep.weight_element_reads} {verified}")
    if "baseline" in reads_by_mode and "optimized" in reads_by_mode:
        ratio = reads_by_mode["baseline"] / reads_by_mode["optimized"]
        print(f"  weight_read_ratio_baseline_over_optimized: {ratio:.3f}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_ERROR if exc.code not in (0, None) else EXIT_OK
    try:
        if args.command == "generate":
            return cmd_generate(args)
        if args.command == "run":
            return cmd_run(args)
        if args.command == "verify":
            return cmd_verify(args)
        if args.command == "bench":
            return cmd_bench(args)
        raise ModelError(f"unknown command {args.command}")
    except (ModelError, IngestError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
