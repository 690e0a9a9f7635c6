"""CSV serialization with documented schemas and deterministic layout.

All files are UTF-8 with a single header row, '\n' line endings, rows in
a fixed sort order, and floats rendered by ``repr`` (shortest exact
round-trip, no locale dependence).

Schemas (columns in order):

* cumulative.csv / threshold_counts.csv: replicate,level,s,value
  - K_{n,j}(s) respectively rho_j(n^s) per replicate and grid point.
* histogram.csv: replicate,level,r,count
  - number of level-j boxes holding exactly r balls.
* normalized_curves.csv: n,replicate,level,s,value
  - theorem-normalized curves per schedule entry and replicate.
* marginals.csv: n,level,s,mean,variance,theo_variance,ks_stat,ks_p,note
* pairs.csv: n,level_a,s_a,level_b,s_b,emp_cov,emp_corr,theo_cov,theo_corr,abs_dev
* consistency.csv: n,level,median_normalized_gap
* covariance.csv: level_a,s_a,level_b,s_b,value
  - limit-process covariance E[R_a(s_a) R_b(s_b)].
* paths.csv: path,level,s,value
  - sampled limit paths on the grid.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

__all__ = [
    "fmt",
    "write_rows",
    "read_rows",
    "write_occupancy_csvs",
    "write_report_csvs",
    "write_covariance_csv",
    "write_paths_csv",
]


def fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_rows(path: Path, header: list[str], rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def read_rows(path: Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        return header, [row for row in reader]


def write_occupancy_csvs(out_dir: Path, results: list) -> list[Path]:
    """One file per statistic for a list of replicate OccupancyResults."""
    out_dir = Path(out_dir)
    cum_rows, rho_rows, hist_rows = [], [], []
    for rep, res in enumerate(results):
        for li, j in enumerate(res.levels):
            for gi, s in enumerate(res.s_grid):
                cum_rows.append((rep, j, s, int(res.cumulative.values[li, gi])))
                rho_rows.append((rep, j, s, int(res.threshold_counts.values[li, gi])))
            for r, c in sorted(res.histograms[li].items()):
                hist_rows.append((rep, j, int(r), int(c)))
    paths = []
    for name, header, rows in (
        ("cumulative.csv", ["replicate", "level", "s", "value"], cum_rows),
        ("threshold_counts.csv", ["replicate", "level", "s", "value"], rho_rows),
        ("histogram.csv", ["replicate", "level", "r", "count"], hist_rows),
    ):
        p = out_dir / name
        write_rows(p, header, rows)
        paths.append(p)
    return paths


def write_report_csvs(out_dir: Path, report) -> list[Path]:
    out_dir = Path(out_dir)
    paths = []

    marg = out_dir / "marginals.csv"
    write_rows(
        marg,
        ["n", "level", "s", "mean", "variance", "theo_variance", "ks_stat", "ks_p", "note"],
        [
            (m.n, m.level, m.s, m.mean, m.variance, m.theo_variance, m.ks_stat, m.ks_p, m.note)
            for m in report.marginals
        ],
    )
    paths.append(marg)

    pairs = out_dir / "pairs.csv"
    write_rows(
        pairs,
        [
            "n", "level_a", "s_a", "level_b", "s_b",
            "emp_cov", "emp_corr", "theo_cov", "theo_corr", "abs_dev",
        ],
        [
            (p.n, p.level_a, p.s_a, p.level_b, p.s_b,
             p.emp_cov, p.emp_corr, p.theo_cov, p.theo_corr, p.abs_dev)
            for p in report.pairs
        ],
    )
    paths.append(pairs)

    if report.consistency:
        cons = out_dir / "consistency.csv"
        rows = []
        for j in sorted(report.consistency):
            for n, v in report.consistency[j]:
                rows.append((n, j, v))
        rows.sort(key=lambda r: (r[0], r[1]))
        write_rows(cons, ["n", "level", "median_normalized_gap"], rows)
        paths.append(cons)

    curves = out_dir / "normalized_curves.csv"
    rows = []
    for n in report.n_schedule:
        values = report.normalized.get(n)
        if values is None:
            continue
        for rep in range(values.shape[0]):
            for li, j in enumerate(report.levels):
                for gi, s in enumerate(report.s_grid):
                    rows.append((n, rep, j, s, values[rep, li, gi]))
    write_rows(curves, ["n", "replicate", "level", "s", "value"], rows)
    paths.append(curves)
    return paths


def write_covariance_csv(path: Path, labels, matrix) -> None:
    rows = []
    for a, (ja, sa) in enumerate(labels):
        for b, (jb, sb) in enumerate(labels):
            rows.append((ja, sa, jb, sb, matrix[a, b]))
    write_rows(path, ["level_a", "s_a", "level_b", "s_b", "value"], rows)


def write_paths_csv(path: Path, curve_list) -> None:
    rows = []
    for pi, cm in enumerate(curve_list):
        for li, j in enumerate(cm.levels):
            for gi, s in enumerate(cm.s_grid):
                rows.append((pi, j, s, cm.values[li, gi]))
    write_rows(path, ["path", "level", "s", "value"], rows)
