"""Figure rendering with machine-readable sidecar exports.

Each render writes the image plus ``<image>.data.json`` holding exactly
the values drawn, parsed straight from the input CSVs.  Writes are
atomic (temp file + rename) and inputs are never modified.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .schema import SchemaError, read_table

__all__ = ["FigureKind", "FigureJob", "render"]

plt.rcParams.update({"figure.dpi": 110, "font.size": 9, "svg.hashsalt": "nestplots"})

_PNG_META = {"Software": "nestbox-plot"}


class FigureKind(Enum):
    OVERLAY = "overlay"
    QQ = "qq"
    COV_HEATMAP = "covheatmap"
    TREND = "trend"


@dataclass
class FigureJob:
    kind: FigureKind
    inputs: dict[str, Path]
    out: Path
    options: dict = field(default_factory=dict)


def _atomic_write_bytes(path: Path, data: bytes):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _save(fig, out: Path, sidecar: dict):
    import io

    buf = io.BytesIO()
    fig.savefig(buf, format=out.suffix.lstrip(".") or "png", metadata=_PNG_META)
    plt.close(fig)
    _atomic_write_bytes(out, buf.getvalue())
    payload = json.dumps(sidecar, indent=1, sort_keys=True).encode() + b"\n"
    _atomic_write_bytes(out.with_suffix(out.suffix + ".data.json"), payload)


def _need_input(job: FigureJob, role: str) -> Path:
    if role not in job.inputs:
        raise SchemaError(f"{job.kind.value} figure requires an input for role {role!r}")
    return job.inputs[role]


def _pick_n(rows, requested):
    ns = sorted({r["n"] for r in rows})
    if requested is None:
        return ns[-1]
    if int(requested) not in ns:
        raise SchemaError(f"n={requested} not present in input (has {ns})")
    return int(requested)


def _render_overlay(job: FigureJob):
    curves = read_table(_need_input(job, "normalized_curves"), "normalized_curves")
    n = _pick_n(curves, job.options.get("n"))
    level = int(job.options.get("level") or max(r["level"] for r in curves))
    sel = [r for r in curves if r["n"] == n and r["level"] == level]
    if not sel:
        raise SchemaError(f"no rows for n={n}, level={level}")
    grid = sorted({r["s"] for r in sel})
    by_rep: dict[int, dict] = {}
    for r in sel:
        by_rep.setdefault(r["replicate"], {})[r["s"]] = r["value"]
    emp = [[by_rep[rep][s] for s in grid] for rep in sorted(by_rep)]

    limit = []
    if "paths" in job.inputs:
        praw = read_table(job.inputs["paths"], "paths")
        psel = [r for r in praw if r["level"] == level and r["s"] in set(grid)]
        by_path: dict[int, dict] = {}
        for r in psel:
            by_path.setdefault(r["path"], {})[r["s"]] = r["value"]
        limit = [
            [by_path[p][s] for s in grid] for p in sorted(by_path) if len(by_path[p]) == len(grid)
        ]

    fig, ax = plt.subplots(figsize=(6, 4))
    for row in limit:
        ax.plot(grid, row, color="0.8", lw=0.6, zorder=1)
    for row in emp:
        ax.plot(grid, row, color="tab:blue", alpha=0.35, lw=0.9, zorder=2)
    ax.axhline(0.0, color="k", lw=0.5)
    ax.set_xlabel("s")
    ax.set_ylabel("normalized count")
    ax.set_title(f"normalized occupancy curves vs limit paths (n={n}, level {level})")
    sidecar = {
        "kind": "overlay",
        "n": n,
        "level": level,
        "s_grid": grid,
        "empirical": emp,
        "limit_paths": limit,
    }
    _save(fig, job.out, sidecar)


def _norm_quantile(p: np.ndarray) -> np.ndarray:
    # Acklam/Wichura-style rational approximation of the probit, accurate
    # to ~1e-9; avoids a scipy dependency for one function
    a = [-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
         1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00]
    b = [-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
         6.680131188771972e01, -1.328068155288572e01]
    c = [-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
         -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00]
    d = [7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
         3.754408661907416e00]
    p = np.asarray(p, dtype=float)
    out = np.empty_like(p)
    lo = p < 0.02425
    hi = p > 1 - 0.02425
    mid = ~(lo | hi)
    if lo.any():
        q = np.sqrt(-2 * np.log(p[lo]))
        out[lo] = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / (
            (((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1
        )
    if hi.any():
        q = np.sqrt(-2 * np.log(1 - p[hi]))
        out[hi] = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / (
            (((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1
        )
    if mid.any():
        q = p[mid] - 0.5
        r = q * q
        out[mid] = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q / (
            ((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1
        )
    return out


def _render_qq(job: FigureJob):
    curves = read_table(_need_input(job, "normalized_curves"), "normalized_curves")
    n = _pick_n(curves, job.options.get("n"))
    level = int(job.options.get("level") or max(r["level"] for r in curves))
    s_opt = job.options.get("s")
    s_vals = sorted({r["s"] for r in curves if r["s"] > 0})
    s = float(s_opt) if s_opt is not None else s_vals[-1]
    sel = sorted(
        r["value"] for r in curves if r["n"] == n and r["level"] == level and r["s"] == s
    )
    if not sel:
        raise SchemaError(f"no rows for n={n}, level={level}, s={s}")
    scale = 1.0
    if "marginals" in job.inputs:
        marg = read_table(job.inputs["marginals"], "marginals")
        match = [
            m for m in marg if m["n"] == n and m["level"] == level and m["s"] == s
        ]
        if match and match[0]["theo_variance"] > 0:
            scale = math.sqrt(match[0]["theo_variance"])
    m = len(sel)
    theo = (_norm_quantile((np.arange(1, m + 1) - 0.5) / m) * scale).tolist()

    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.plot(theo, sel, "o", ms=2.5, color="tab:blue")
    lim = [min(theo[0], sel[0]), max(theo[-1], sel[-1])]
    ax.plot(lim, lim, "k-", lw=0.8)
    ax.set_xlabel("theoretical quantile")
    ax.set_ylabel("sample quantile")
    ax.set_title(f"QQ: normalized count vs limit marginal (n={n}, j={level}, s={s:g})")
    sidecar = {
        "kind": "qq",
        "n": n,
        "level": level,
        "s": s,
        "scale": scale,
        "sample_quantiles": sel,
        "theoretical_quantiles": theo,
    }
    _save(fig, job.out, sidecar)


def _corr_matrix_from_pairs(rows, n):
    labels = sorted(
        {(r["level_a"], r["s_a"]) for r in rows} | {(r["level_b"], r["s_b"]) for r in rows}
    )
    idx = {lab: i for i, lab in enumerate(labels)}
    mat = np.eye(len(labels))
    for r in rows:
        if r["n"] != n:
            continue
        a, b = idx[(r["level_a"], r["s_a"])], idx[(r["level_b"], r["s_b"])]
        mat[a, b] = mat[b, a] = r["emp_corr"]
    return labels, mat


def _corr_matrix_from_cov(rows):
    labels = sorted(
        {(r["level_a"], r["s_a"]) for r in rows} | {(r["level_b"], r["s_b"]) for r in rows}
    )
    idx = {lab: i for i, lab in enumerate(labels)}
    cov = np.zeros((len(labels), len(labels)))
    for r in rows:
        a, b = idx[(r["level_a"], r["s_a"])], idx[(r["level_b"], r["s_b"])]
        cov[a, b] = r["value"]
    sd = np.sqrt(np.diag(cov))
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = cov / np.outer(sd, sd)
    corr[~np.isfinite(corr)] = 0.0
    return labels, corr


def _render_covheatmap(job: FigureJob):
    pairs = read_table(_need_input(job, "pairs"), "pairs")
    covrows = read_table(_need_input(job, "covariance"), "covariance")
    n = _pick_n(pairs, job.options.get("n"))
    emp_labels, emp = _corr_matrix_from_pairs([r for r in pairs if r["n"] == n], n)
    theo_labels, theo = _corr_matrix_from_cov(covrows)
    if emp_labels != theo_labels:
        raise SchemaError(
            "empirical and theoretical grids differ: "
            f"pairs grid {emp_labels} vs covariance grid {theo_labels}"
        )
    ticks = [f"j{j},s{s:g}" for j, s in emp_labels]
    fig, axes = plt.subplots(1, 2, figsize=(9, 4.2))
    for ax, mat, title in ((axes[0], emp, f"empirical corr (n={n})"), (axes[1], theo, "limit corr")):
        im = ax.imshow(mat, vmin=-1, vmax=1, cmap="RdBu_r")
        ax.set_xticks(range(len(ticks)), ticks, rotation=90)
        ax.set_yticks(range(len(ticks)), ticks)
        ax.set_title(title)
    fig.colorbar(im, ax=axes, shrink=0.8)
    sidecar = {
        "kind": "covheatmap",
        "n": n,
        "labels": [[j, s] for j, s in emp_labels],
        "empirical_corr": emp.tolist(),
        "theoretical_corr": theo.tolist(),
    }
    _save(fig, job.out, sidecar)


def _render_trend(job: FigureJob):
    rows = read_table(_need_input(job, "consistency"), "consistency")
    levels = sorted({r["level"] for r in rows})
    series = {
        j: sorted(
            ((r["n"], r["median_normalized_gap"]) for r in rows if r["level"] == j)
        )
        for j in levels
    }
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for j in levels:
        ns = [p[0] for p in series[j]]
        vals = [p[1] for p in series[j]]
        ax.plot(ns, vals, "o-", label=f"level {j}")
    ax.set_xscale("log")
    ax.set_xlabel("n")
    ax.set_ylabel("median normalized sup gap")
    ax.set_title("two-way box-count consistency")
    ax.legend()
    sidecar = {
        "kind": "trend",
        "series": {str(j): [[n, v] for n, v in series[j]] for j in levels},
    }
    _save(fig, job.out, sidecar)


_RENDERERS = {
    FigureKind.OVERLAY: _render_overlay,
    FigureKind.QQ: _render_qq,
    FigureKind.COV_HEATMAP: _render_covheatmap,
    FigureKind.TREND: _render_trend,
}


def render(job: FigureJob) -> Path:
    """Render the figure and its sidecar data export; returns the image path."""
    _RENDERERS[job.kind](job)
    return job.out
