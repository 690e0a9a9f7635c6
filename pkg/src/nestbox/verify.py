"""Replicated experiments comparing occupancy statistics with their limits.

Convergence of the normalized curves is logarithmic in n, so the
verdicts combine tight oracle checks on means, loose tolerance bands at
the largest ball count (correlation within +-0.15, variance ratio in
[0.8, 1.2]), and monotone-improvement trend checks across the ball-count
schedule.  Replicate seeds derive bit-exactly from the master seed (see
``rng``), so reports are identical no matter how replicates are batched
across workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .errors import NestboxError
from .laws import FragmentationLaw, LawKind, limit_spec_for, sample_prefix
from .limits import LimitSpec, cov_limit, normalize_curves
from .occupancy import CountMode, OccupancyConfig, simulate
from .rng import replicate_seed, substream_seed

__all__ = [
    "ToleranceProfile",
    "ExperimentConfig",
    "MarginalStat",
    "PairStat",
    "Verdict",
    "ExperimentReport",
    "run_experiment",
    "consistency_series",
    "sup_moment_diagnostic",
]


@dataclass(frozen=True)
class ToleranceProfile:
    correlation: float = 0.15
    variance_band: tuple[float, float] = (0.8, 1.2)
    ks_alpha: float = 0.01
    ks_mode: str = "strict"  # strict | advisory | skip
    se_mult: float = 3.0
    trend_fraction: float = 0.75
    error_budget_cap: float = 1e-3

    def __post_init__(self):
        if self.ks_mode not in ("strict", "advisory", "skip"):
            raise ValueError(f"ks_mode must be strict/advisory/skip, got {self.ks_mode!r}")
        lo, hi = self.variance_band
        if not (0 < lo < 1 < hi):
            raise ValueError(f"variance_band must bracket 1, got {self.variance_band}")


@dataclass(frozen=True)
class ExperimentConfig:
    law: FragmentationLaw
    replicates: int
    n_schedule: tuple[int, ...]
    master_seed: int
    levels: tuple[int, ...] = (1,)
    s_points: tuple[float, ...] = (0.5, 1.0)
    spec: LimitSpec | None = None
    mode: CountMode = CountMode.EXACT
    tolerances: ToleranceProfile = field(default_factory=ToleranceProfile)
    variance_marginals: tuple[tuple[int, float], ...] = ((1, 1.0),)
    consistency: bool = True
    consistency_binding: bool = False
    threads: int = 1
    replicate_offset: int = 0

    def __post_init__(self):
        if self.replicates < 2:
            raise ValueError(f"need at least 2 replicates, got {self.replicates}")
        ns = tuple(int(v) for v in self.n_schedule)
        if any(b <= a for a, b in zip(ns, ns[1:])):
            raise ValueError(f"n_schedule must be strictly increasing, got {ns}")
        object.__setattr__(self, "n_schedule", ns)
        object.__setattr__(self, "levels", tuple(int(j) for j in self.levels))
        if any(j < 1 for j in self.levels):
            raise ValueError("levels must be >= 1")
        for s in self.s_points:
            if not 0 < s <= 1:
                raise ValueError(f"s_points must lie in (0, 1], got {s}")

    @property
    def depth(self) -> int:
        return max(self.levels)

    @property
    def s_grid(self) -> np.ndarray:
        return np.array(sorted({0.0, 1.0, *(float(s) for s in self.s_points)}))


@dataclass
class MarginalStat:
    n: int
    level: int
    s: float
    mean: float
    variance: float
    theo_variance: float
    ks_stat: float
    ks_p: float
    note: str = ""


@dataclass
class PairStat:
    n: int
    level_a: int
    s_a: float
    level_b: int
    s_b: float
    emp_cov: float
    emp_corr: float
    theo_cov: float
    theo_corr: float

    @property
    def abs_dev(self) -> float:
        return abs(self.emp_corr - self.theo_corr)


@dataclass
class Verdict:
    name: str
    passed: bool | None  # None = skipped / not applicable
    binding: bool
    detail: str


@dataclass
class ExperimentReport:
    law_label: str
    spec: LimitSpec
    degenerate: bool
    n_schedule: tuple[int, ...]
    replicates: int
    master_seed: int
    s_grid: np.ndarray
    levels: tuple[int, ...]
    marginals: list[MarginalStat]
    pairs: list[PairStat]
    consistency: dict[int, list[tuple[int, float]]]
    max_error_budget: float
    verdicts: list[Verdict]
    normalized: dict[int, np.ndarray] = field(repr=False, default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts if v.binding and v.passed is not None)

    def to_json_dict(self) -> dict:
        return {
            "law": self.law_label,
            "spec": {
                "omega": self.spec.omega,
                "gamma": self.spec.gamma_exp,
                "c": self.spec.c,
                "a": self.spec.a,
                "base": self.spec.base.label,
            },
            "degenerate": self.degenerate,
            "n_schedule": list(self.n_schedule),
            "replicates": self.replicates,
            "master_seed": self.master_seed,
            "levels": list(self.levels),
            "s_grid": [float(s) for s in self.s_grid],
            "max_error_budget": self.max_error_budget,
            "marginals": [
                {
                    "n": m.n,
                    "level": m.level,
                    "s": m.s,
                    "mean": m.mean,
                    "variance": m.variance,
                    "theo_variance": m.theo_variance,
                    "ks_stat": m.ks_stat,
                    "ks_p": m.ks_p,
                    "note": m.note,
                }
                for m in self.marginals
            ],
            "pairs": [
                {
                    "n": p.n,
                    "level_a": p.level_a,
                    "s_a": p.s_a,
                    "level_b": p.level_b,
                    "s_b": p.s_b,
                    "emp_cov": p.emp_cov,
                    "emp_corr": p.emp_corr,
                    "theo_cov": p.theo_cov,
                    "theo_corr": p.theo_corr,
                    "abs_dev": p.abs_dev,
                }
                for p in self.pairs
            ],
            "consistency": {
                str(j): [[n, v] for n, v in series]
                for j, series in sorted(self.consistency.items())
            },
            "verdicts": [
                {
                    "name": v.name,
                    "passed": v.passed,
                    "binding": v.binding,
                    "detail": v.detail,
                }
                for v in self.verdicts
            ],
            "passed": self.passed,
        }


# ---------------------------------------------------------------------------

def _replicate_task(args):
    law, occ_cfg, norm_spec, n, seed = args
    rng = np.random.default_rng(seed)
    result = simulate(law, occ_cfg, rng)
    norm = normalize_curves(result, norm_spec, n)
    gaps = np.array([result.sup_gap(j) for j in result.levels])
    return norm.values, gaps, result.error_budget


def _run_batch(law, occ_cfg, norm_spec, n, seeds, threads):
    tasks = [(law, occ_cfg, norm_spec, n, s) for s in seeds]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(_replicate_task, tasks, chunksize=max(1, len(tasks) // (8 * threads))))
    else:
        out = [_replicate_task(t) for t in tasks]
    values = np.stack([v for v, _, _ in out])
    gaps = np.stack([g for _, g, _ in out])
    budgets = np.array([b for _, _, b in out])
    return values, gaps, budgets


def run_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Simulate the schedule, normalize, and test against the limit law.

    Replicate i of schedule entry k uses the seed
    replicate_seed(substream_seed(master_seed, k), i + replicate_offset).
    """
    law = cfg.law
    spec = cfg.spec if cfg.spec is not None else limit_spec_for(law)
    tol = cfg.tolerances
    degenerate = spec.a == 0.0
    norm_spec = replace(spec, a=1.0) if degenerate else spec
    grid = cfg.s_grid
    labels = [(j, float(s)) for j in cfg.levels for s in grid if s > 0]
    col = {
        (j, float(s)): (cfg.levels.index(j), gi)
        for j in cfg.levels
        for gi, s in enumerate(grid)
    }

    theo_var: dict[tuple[int, float], float] = {}
    theo_cov: dict[tuple, float] = {}
    if not degenerate:
        for a in range(len(labels)):
            ja, sa = labels[a]
            theo_var[labels[a]] = cov_limit(spec, ja, sa, ja, sa)
        for a in range(len(labels)):
            for b in range(a + 1, len(labels)):
                ja, sa = labels[a]
                jb, sb = labels[b]
                theo_cov[(labels[a], labels[b])] = cov_limit(spec, ja, sa, jb, sb)

    consistency_ok = (
        cfg.consistency
        and cfg.mode is CountMode.EXACT
        and law.kind is LawKind.STICK_BREAKING
    )
    marginals: list[MarginalStat] = []
    pair_stats: list[PairStat] = []
    consistency: dict[int, list[tuple[int, float]]] = {j: [] for j in cfg.levels}
    normalized: dict[int, np.ndarray] = {}
    max_budget = 0.0
    dev_by_n: dict[int, dict[tuple, float]] = {}

    for n_idx, n in enumerate(cfg.n_schedule):
        occ_cfg = OccupancyConfig(
            n=n,
            depth=cfg.depth,
            s_grid=grid,
            mode=cfg.mode,
            error_budget_cap=tol.error_budget_cap,
        )
        base = substream_seed(cfg.master_seed, n_idx)
        seeds = [
            replicate_seed(base, cfg.replicate_offset + i) for i in range(cfg.replicates)
        ]
        values, gaps, budgets = _run_batch(law, occ_cfg, norm_spec, n, seeds, cfg.threads)
        normalized[n] = values
        max_budget = max(max_budget, float(budgets.max()))

        flat = np.stack([values[:, col[lab][0], col[lab][1]] for lab in labels], axis=1)
        means = flat.mean(axis=0)
        variances = flat.var(axis=0, ddof=1)
        ks_count = sum(
            1 for lab in labels if not degenerate and theo_var.get(lab, 0.0) > 1e-12
        )
        for li, lab in enumerate(labels):
            tv = theo_var.get(lab, float("nan"))
            note = ""
            ks_stat = ks_p = float("nan")
            if degenerate:
                note = "ks-skipped-degenerate"
            elif not tv > 1e-12:
                note = "ks-skipped-zero-variance"
            elif tol.ks_mode == "skip":
                note = "ks-skipped"
            else:
                res = stats.kstest(flat[:, li], "norm", args=(0.0, math.sqrt(tv)))
                ks_stat, ks_p = float(res.statistic), float(res.pvalue)
            marginals.append(
                MarginalStat(
                    n, lab[0], lab[1], float(means[li]), float(variances[li]), tv,
                    ks_stat, ks_p, note,
                )
            )
        if len(labels) > 1 and cfg.replicates > 1:
            emp_cov = np.cov(flat, rowvar=False, ddof=1)
            sd = np.sqrt(np.diag(emp_cov))
            devs: dict[tuple, float] = {}
            for a in range(len(labels)):
                for b in range(a + 1, len(labels)):
                    ec = float(emp_cov[a, b])
                    denom = sd[a] * sd[b]
                    ecorr = ec / denom if denom > 0 else float("nan")
                    tc = theo_cov.get((labels[a], labels[b]), float("nan"))
                    tva, tvb = theo_var.get(labels[a]), theo_var.get(labels[b])
                    tcorr = (
                        tc / math.sqrt(tva * tvb)
                        if tva and tvb and tva > 0 and tvb > 0
                        else float("nan")
                    )
                    ps = PairStat(
                        n, labels[a][0], labels[a][1], labels[b][0], labels[b][1],
                        ec, ecorr, tc, tcorr,
                    )
                    pair_stats.append(ps)
                    if not math.isnan(ps.abs_dev):
                        devs[(labels[a], labels[b])] = ps.abs_dev
            dev_by_n[n] = devs
        if consistency_ok:
            norm_pow = {
                j: math.log(n) ** (spec.gamma_exp + spec.omega * (j - 1))
                for j in cfg.levels
            }
            for li, j in enumerate(cfg.levels):
                med = float(np.median(gaps[:, cfg.levels.index(j)]))
                consistency[j].append((n, med / norm_pow[j]))

    verdicts = _build_verdicts(
        cfg, spec, degenerate, labels, marginals, pair_stats, consistency, max_budget, dev_by_n
    )
    return ExperimentReport(
        law_label=law.label,
        spec=spec,
        degenerate=degenerate,
        n_schedule=cfg.n_schedule,
        replicates=cfg.replicates,
        master_seed=cfg.master_seed,
        s_grid=grid,
        levels=cfg.levels,
        marginals=marginals,
        pairs=pair_stats,
        consistency={j: v for j, v in consistency.items() if v},
        max_error_budget=max_budget,
        verdicts=verdicts,
        normalized=normalized,
    )


def _build_verdicts(
    cfg, spec, degenerate, labels, marginals, pair_stats, consistency, max_budget, dev_by_n
) -> list[Verdict]:
    tol = cfg.tolerances
    n_max = cfg.n_schedule[-1]
    verdicts: list[Verdict] = []

    verdicts.append(
        Verdict(
            "error_budget",
            max_budget <= tol.error_budget_cap,
            True,
            f"max replicate error budget {max_budget:.3e} vs cap {tol.error_budget_cap:.3e}",
        )
    )

    if degenerate:
        verdicts.append(
            Verdict(
                "variance_band",
                None,
                False,
                "degenerate environment: variances reflect multinomial sampling only",
            )
        )
    else:
        fails = []
        lo, hi = tol.variance_band
        for (j, s) in cfg.variance_marginals:
            m = next(
                (x for x in marginals if x.n == n_max and x.level == j and x.s == s), None
            )
            if m is None or not m.theo_variance > 0:
                continue
            ratio = m.variance / m.theo_variance
            if not lo <= ratio <= hi:
                fails.append(f"(j={j},s={s}): ratio {ratio:.3f}")
        verdicts.append(
            Verdict(
                "variance_band",
                not fails,
                True,
                "; ".join(fails) if fails else f"all ratios within [{lo}, {hi}] at n={n_max}",
            )
        )

    last_pairs = [p for p in pair_stats if p.n == n_max]
    if degenerate or not last_pairs:
        verdicts.append(
            Verdict("correlation", None, False, "skipped (degenerate or single marginal)")
        )
    else:
        fails = [
            f"(j={p.level_a},s={p.s_a})x(j={p.level_b},s={p.s_b}): dev {p.abs_dev:.3f}"
            for p in last_pairs
            if not (p.abs_dev <= tol.correlation)
        ]
        verdicts.append(
            Verdict(
                "correlation",
                not fails,
                True,
                "; ".join(fails)
                if fails
                else f"all {len(last_pairs)} correlations within {tol.correlation} at n={n_max}",
            )
        )

    if len(cfg.n_schedule) >= 2 and dev_by_n and not degenerate:
        first, last = cfg.n_schedule[0], cfg.n_schedule[-1]
        cross = [
            key
            for key in dev_by_n.get(first, {})
            if key[0][0] != key[1][0] and key in dev_by_n.get(last, {})
        ]
        if cross:
            improved = sum(
                1 for key in cross if dev_by_n[last][key] <= dev_by_n[first][key] + 1e-12
            )
            frac = improved / len(cross)
            verdicts.append(
                Verdict(
                    "correlation_trend",
                    frac >= tol.trend_fraction,
                    True,
                    f"{improved}/{len(cross)} cross-level deviations no larger at "
                    f"n={last} than at n={first}",
                )
            )

    ks_stats = [
        m
        for m in marginals
        if m.n == n_max and m.note == "" and not math.isnan(m.ks_p)
    ]
    if tol.ks_mode == "skip" or degenerate or not ks_stats:
        verdicts.append(Verdict("ks", None, False, "skipped"))
    else:
        k = len(ks_stats)
        alpha = tol.ks_alpha / k
        fails = [
            f"(j={m.level},s={m.s}): p={m.ks_p:.2e}" for m in ks_stats if m.ks_p < alpha
        ]
        verdicts.append(
            Verdict(
                "ks",
                not fails,
                tol.ks_mode == "strict",
                f"Bonferroni alpha={alpha:.2e} over {k} marginals"
                + ("; failing: " + "; ".join(fails) if fails else ""),
            )
        )

    series = {j: v for j, v in consistency.items() if len(v) >= 2}
    if series:
        fails = []
        for j, vals in series.items():
            seq = [v for _, v in vals]
            if any(b > a + 1e-12 for a, b in zip(seq, seq[1:])):
                fails.append(f"level {j}: {['%.4f' % v for v in seq]}")
        verdicts.append(
            Verdict(
                "consistency_trend",
                not fails,
                cfg.consistency_binding,
                "; ".join(fails) if fails else "median normalized sup-gaps nonincreasing",
            )
        )
    return verdicts


# ---------------------------------------------------------------------------

def consistency_series(
    law: FragmentationLaw,
    spec: LimitSpec,
    j: int,
    n_schedule,
    M: int,
    seed: int,
    s_grid=None,
) -> list[float]:
    """Median over M replicates of the normalized sup gap, per n.

    The gap is sup over the grid of |K_{n,j}(s) - rho_j(n^s)|, normalized
    by (log n)^(gamma + omega (j-1)); the limit theorem drives it to 0.
    """
    if law.kind is not LawKind.STICK_BREAKING:
        raise NestboxError("consistency series requires an exact-mode stick law")
    out = []
    power = spec.gamma_exp + spec.omega * (j - 1)
    if s_grid is None:
        s_grid = np.round(np.linspace(0.0, 1.0, 21), 10)
    for idx, n in enumerate(n_schedule):
        cfg = OccupancyConfig(n=int(n), depth=j, s_grid=s_grid)
        base = substream_seed(seed, idx)
        gaps = []
        for i in range(M):
            rng = np.random.default_rng(replicate_seed(base, i))
            result = simulate(law, cfg, rng)
            gaps.append(result.sup_gap(j))
        out.append(float(np.median(gaps)) / math.log(n) ** power)
    return out


def sup_moment_diagnostic(
    law: FragmentationLaw,
    spec: LimitSpec,
    t_grid,
    M: int,
    seed: int,
) -> list[float]:
    """Monte Carlo estimate of E sup_{s<=t} (N(s) - V(s))^2 / t^(2 gamma).

    V is estimated by the replicate mean of N.  Reported for manual
    inspection of boundedness; no hard pass/fail (the bound is
    asymptotic).
    """
    if law.kind is not LawKind.STICK_BREAKING:
        raise NestboxError("sup-moment diagnostic requires a stick-breaking law")
    t_grid = sorted(float(t) for t in t_grid)
    if not t_grid or t_grid[0] <= 0:
        raise ValueError("t_grid must contain positive values")
    t_max = t_grid[-1]
    threshold = 0.5 * math.exp(-t_max)
    grid = np.union1d(np.linspace(0.0, t_max, 257), np.array(t_grid))
    counts = np.empty((M, len(grid)))
    for i in range(M):
        rng = np.random.default_rng(replicate_seed(seed, i))
        prefix = sample_prefix(law, threshold, rng)
        t_k = np.sort(-np.log(prefix.probs))
        counts[i] = np.searchsorted(t_k, grid, side="right")
    v_hat = counts.mean(axis=0)
    dev2 = np.maximum.accumulate((counts - v_hat) ** 2, axis=1)
    out = []
    for t in t_grid:
        gi = int(np.searchsorted(grid, t))
        gi = min(gi, len(grid) - 1)
        out.append(float(dev2[:, gi].mean()) / t ** (2 * spec.gamma_exp))
    return out
