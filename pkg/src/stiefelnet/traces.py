"""Trace persistence: CSV and JSONL emitters with lossless round-trips.

Both formats carry the same seven fields per iteration. Floats are written
with ``repr`` so reading them back reproduces the exact double. Timing is
zeroed by default so that identical runs produce byte-identical files;
pass ``timing=True`` to keep measured wall times (at the cost of
reproducible bytes).
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .optim import RunTrace, TraceRecord

TRACE_FIELDS = ("iter", "loss", "dist_sq", "output_err_sq", "contraction_ratio",
                "grad_norm_total", "wall_ms")

CSV_FORMAT = "csv"
JSONL_FORMAT = "jsonl"


class TraceIOError(RuntimeError):
    """A trace file could not be written or parsed; message names the path."""


def _record_row(rec: TraceRecord, timing: bool) -> dict:
    return {
        "iter": rec.iter,
        "loss": rec.loss,
        "dist_sq": rec.dist_sq,
        "output_err_sq": rec.output_err_sq,
        "contraction_ratio": rec.contraction_ratio,
        "grad_norm_total": rec.grad_norm_total,
        "wall_ms": rec.wall_ms if timing else 0.0,
    }


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, int):
        return str(value)
    return repr(float(value))


def emit_traces(trace: RunTrace, fmt: str, path, timing: bool = False) -> None:
    """Write a run trace to ``path`` in the chosen format."""
    path = Path(path)
    rows = [_record_row(r, timing) for r in trace.records]
    try:
        if fmt == CSV_FORMAT:
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(TRACE_FIELDS)
                for row in rows:
                    writer.writerow([_fmt(row[k]) for k in TRACE_FIELDS])
        elif fmt == JSONL_FORMAT:
            with open(path, "w") as fh:
                for row in rows:
                    fh.write(json.dumps(row) + "\n")
        else:
            raise ValueError(f"unknown trace format {fmt!r}")
    except OSError as exc:
        raise TraceIOError(f"cannot write trace to {path}: {exc}") from exc


def read_traces(path, fmt: str | None = None) -> list:
    """Read trace records back as dicts keyed by ``TRACE_FIELDS``."""
    path = Path(path)
    if fmt is None:
        fmt = JSONL_FORMAT if path.suffix == ".jsonl" else CSV_FORMAT
    try:
        if fmt == CSV_FORMAT:
            with open(path, newline="") as fh:
                reader = csv.DictReader(fh)
                if reader.fieldnames is None or tuple(reader.fieldnames) != TRACE_FIELDS:
                    raise TraceIOError(f"bad trace header in {path}: {reader.fieldnames}")
                out = []
                for row in reader:
                    out.append(
                        {
                            "iter": int(row["iter"]),
                            **{
                                k: (None if row[k] == "" else float(row[k]))
                                for k in TRACE_FIELDS
                                if k != "iter"
                            },
                        }
                    )
                return out
        if fmt == JSONL_FORMAT:
            with open(path) as fh:
                return [json.loads(line) for line in fh if line.strip()]
        raise ValueError(f"unknown trace format {fmt!r}")
    except OSError as exc:
        raise TraceIOError(f"cannot read trace from {path}: {exc}") from exc
