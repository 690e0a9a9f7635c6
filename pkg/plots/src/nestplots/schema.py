"""Readers for the documented nestbox CSV schemas.

Only the published column layouts are consumed; any mismatch raises
SchemaError naming the offending column.  Values parse to exactly the
floats the CSV carries (repr round-trip), so downstream data exports can
be compared for exact equality with the inputs.
"""

from __future__ import annotations

import csv
from pathlib import Path

SCHEMAS = {
    "normalized_curves": ["n", "replicate", "level", "s", "value"],
    "marginals": [
        "n", "level", "s", "mean", "variance", "theo_variance", "ks_stat", "ks_p", "note",
    ],
    "pairs": [
        "n", "level_a", "s_a", "level_b", "s_b",
        "emp_cov", "emp_corr", "theo_cov", "theo_corr", "abs_dev",
    ],
    "consistency": ["n", "level", "median_normalized_gap"],
    "covariance": ["level_a", "s_a", "level_b", "s_b", "value"],
    "paths": ["path", "level", "s", "value"],
}

__all__ = ["SchemaError", "SCHEMAS", "read_table", "infer_role"]


class SchemaError(Exception):
    """Input file does not conform to a documented CSV schema."""


def read_table(path: str | Path, role: str) -> list[dict]:
    expected = SCHEMAS[role]
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"input file {path} does not exist")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file, expected header {expected}")
        if header != expected:
            for pos, want in enumerate(expected):
                got = header[pos] if pos < len(header) else "<missing>"
                if got != want:
                    raise SchemaError(
                        f"{path}: column {pos} must be {want!r}, found {got!r} "
                        f"(expected header {expected})"
                    )
            raise SchemaError(
                f"{path}: {len(header)} columns, expected {len(expected)} ({expected})"
            )
        rows = []
        for row in reader:
            rec = {}
            for key, raw in zip(expected, row):
                if key == "note":
                    rec[key] = raw
                elif key in ("n", "replicate", "level", "level_a", "level_b", "path"):
                    rec[key] = int(raw)
                else:
                    rec[key] = float(raw)
            rows.append(rec)
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return rows


def infer_role(path: str | Path) -> str | None:
    stem = Path(path).stem.lower()
    return stem if stem in SCHEMAS else None
