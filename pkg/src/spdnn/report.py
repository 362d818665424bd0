"""Structured-text run reports: render and parse.

The format is line-oriented for diffability: `key: value` scalars first, then
named tables bracketed by `table NAME: <columns>` and `end`. Reruns with a
fixed seed reproduce every line except elapsed_seconds and edges_per_second.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .parallel import BalanceReport, CommMatrix
from .preprocess import CompactIndexReport, PaddingStats

SCHEMA_VERSION = 1


@dataclass
class RunReport:
    neurons: int
    layers: int
    inputs: int
    mode: str
    workers: int
    minibatch: int
    block_size: int
    warp_size: int
    buffer_capacity: int
    streaming: bool
    rebalance_threshold: float
    elapsed_seconds: float
    edges_processed: int
    weight_element_reads: int
    feature_element_reads: int
    per_layer_active_counts: list[tuple[int, int]]
    padding_stats: PaddingStats
    index_report: CompactIndexReport
    comm_matrix: CommMatrix | None = None
    balance_report: BalanceReport | None = None
    verified: bool | None = None

    @property
    def edges_per_second(self) -> float:
        return self.edges_processed / self.elapsed_seconds


def render_report(r: RunReport) -> str:
    lines = [
        f"spdnn_report: {SCHEMA_VERSION}",
        f"neurons: {r.neurons}",
        f"layers: {r.layers}",
        f"inputs: {r.inputs}",
        f"mode: {r.mode}",
        f"workers: {r.workers}",
        f"minibatch: {r.minibatch}",
        f"block_size: {r.block_size}",
        f"warp_size: {r.warp_size}",
        f"buffer_capacity: {r.buffer_capacity}",
        f"streaming: {'on' if r.streaming else 'off'}",
        f"rebalance_threshold: {r.rebalance_threshold!r}",
        f"elapsed_seconds: {r.elapsed_seconds!r}",
        f"edges_processed: {r.edges_processed}",
        f"edges_per_second: {r.edges_per_second!r}",
        f"weight_element_reads: {r.weight_element_reads}",
        f"feature_element_reads: {r.feature_element_reads}",
        f"index_bytes_wide: {r.index_report.wide_bytes}",
        f"index_bytes_narrow: {r.index_report.narrow_bytes}",
        f"index_reduction: {r.index_report.reduction!r}",
    ]
    if r.verified is not None:
        lines.append(f"verified: {'yes' if r.verified else 'no'}")
    lines.append("table per_layer_active: layer before after")
    for l, (before, after) in enumerate(r.per_layer_active_counts):
        lines.append(f"  {l} {before} {after}")
    lines.append("end")
    p = r.padding_stats
    lines.append("table padding_stats: nnz warp_padded tile_padded layer_padded"
                 " warp_overhead tile_overhead layer_overhead")
    lines.append(f"  {p.nnz} {p.warp_padded_slots} {p.tile_padded_slots}"
                 f" {p.layer_padded_slots} {p.warp_overhead!r} {p.tile_overhead!r}"
                 f" {p.layer_overhead!r}")
    lines.append("end")
    if r.comm_matrix is not None:
        lines.append("table comm_matrix: rows_sent_by_worker_i_to_worker_j")
        for row in r.comm_matrix.matrix:
            lines.append("  " + " ".join(str(int(v)) for v in row))
        lines.append("end")
    if r.balance_report is not None:
        lines.append("table balance: layer moved imbalance_before"
                     " imbalance_after rebalanced before_counts after_counts")
        for e in r.balance_report.entries:
            before = "|".join(str(c) for c in e.before_counts)
            after = "|".join(str(c) for c in e.after_counts)
            lines.append(f"  {e.layer} {e.moved_rows} {e.imbalance_before!r}"
                         f" {e.imbalance_after!r} {int(e.rebalanced)} {before} {after}")
        lines.append("end")
    return "\n".join(lines) + "\n"


@dataclass
class ParsedReport:
    scalars: dict[str, str] = field(default_factory=dict)
    tables: dict[str, list[list[str]]] = field(default_factory=dict)

    def number(self, key: str) -> float:
        return float(self.scalars[key])


def parse_report(text: str) -> ParsedReport:
    """Parse a rendered report back into scalars and raw table rows."""
    parsed = ParsedReport()
    table: list[list[str]] | None = None
    for raw in text.splitlines():
        line = raw.rstrip()
        if not line:
            continue
        if table is not None:
            if line == "end":
                table = None
            else:
                table.append(line.split())
            continue
        if line.startswith("table "):
            name = line[len("table "):].split(":", 1)[0]
            table = []
            parsed.tables[name] = table
            continue
        if ": " in line:
            key, value = line.split(": ", 1)
            parsed.scalars[key] = value
    if parsed.scalars.get("spdnn_report") != str(SCHEMA_VERSION):
        raise ValueError("not a spdnn report (bad or missing schema line)")
    return parsed


def strip_timing(text: str) -> str:
    """Drop the lines that legitimately differ between identical reruns."""
    keep = [l for l in text.splitlines()
            if not l.startswith(("elapsed_seconds:", "edges_per_second:"))]
    return "\n".join(keep) + "\n"
