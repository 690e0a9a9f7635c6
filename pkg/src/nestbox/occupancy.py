"""Ball allocation through the nested box hierarchy and occupancy statistics.

Balls are never simulated individually: each expanded node splits its
ball count among the materialized child boxes and the tail bucket by a
sequential conditional-binomial cascade (jointly multinomial), so the
cost scales with the number of occupied boxes rather than with n.

In exact counting mode every box of probability at least 1/n is
materialized, which makes the threshold counts rho_j(n^s) exact for all
s in [0, 1]: any unmaterialized box has probability below 1/n <= n^-s.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache

import mpmath
import numpy as np

from .errors import (
    ExactnessError,
    LawPrecisionError,
    NumericError,
    PrefixMassError,
)
from .laws import FragmentationLaw, LawKind, Prefix, expand_tail, sample_prefix
from .limits import CurveMatrix

__all__ = [
    "CountMode",
    "OccupancyConfig",
    "OccupancyResult",
    "ceil_power",
    "allocate_children",
    "simulate",
    "counting_function",
]

# relative slack that makes threshold comparisons robust to the rounding
# of exp(-s log n) while provably never admitting a spurious extra box
_THRESHOLD_SLACK = 1.0 - 1e-12


class CountMode(Enum):
    EXACT = "exact"
    OCCUPIED_ONLY = "occupied_only"


def default_s_grid() -> np.ndarray:
    return np.round(np.linspace(0.0, 1.0, 21), 10)


@dataclass(frozen=True)
class OccupancyConfig:
    n: int
    depth: int
    s_grid: np.ndarray = field(default_factory=default_s_grid)
    mode: CountMode = CountMode.EXACT
    error_budget_cap: float = 1e-3
    placement_ratio: float = 0.25
    tail_shrink: float = 1e-3
    hard_cap: int = 10_000_000
    max_tail_rounds: int = 200

    def __post_init__(self):
        object.__setattr__(self, "s_grid", np.asarray(self.s_grid, dtype=float))
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        g = self.s_grid
        if g[0] != 0.0 or g[-1] != 1.0:
            raise ValueError("s_grid must start at 0 and end at 1")
        if np.any(np.diff(g) <= 0):
            raise ValueError("s_grid must be strictly increasing")
        if not 0 < self.error_budget_cap <= 1:
            raise ValueError(f"error_budget_cap must be in (0, 1], got {self.error_budget_cap}")


@lru_cache(maxsize=65536)
def ceil_power(n: int, e: float) -> int:
    """Smallest integer k with k >= n**e, for e in [0, 1], bit-exact.

    Candidates around exp(e log n) are screened by a float comparison of
    logarithms with an interval guard; ambiguous cases are settled at
    60 (then 120) decimal digits, and an exact tie means k equals n**e
    and is therefore included.
    """
    if not 0.0 <= e <= 1.0:
        raise ValueError(f"exponent must lie in [0, 1], got {e}")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if e == 0.0 or n == 1:
        return 1
    if e == 1.0:
        return n
    x = e * math.log(n)
    k = max(1, math.floor(math.exp(x)) - 1)
    while True:
        if _at_least_pow(k, n, e, x):
            return k
        k += 1


def _at_least_pow(k: int, n: int, e: float, x: float) -> bool:
    """Whether k >= n**e, deciding near-ties in high precision."""
    if k <= 0:
        return False
    d = math.log(k) - x
    if abs(d) > 1e-12 * max(1.0, abs(x)):
        return d > 0
    for dps in (60, 120):
        with mpmath.workdps(dps):
            dm = mpmath.log(k) - mpmath.mpf(e) * mpmath.log(n)
            if abs(dm) > mpmath.mpf(10) ** (-(dps - 10)):
                return dm > 0
    # exact tie: k equals n**e as a real number
    return True


# ---------------------------------------------------------------------------
# Conditional-binomial allocation

def _allocate_cascade(
    count: int, probs: np.ndarray, tail_mass: float, rng: np.random.Generator
) -> tuple[np.ndarray, int]:
    if count < 0:
        raise ValueError(f"count must be >= 0, got {count}")
    out = np.zeros(len(probs), dtype=np.int64)
    if count == 0:
        return out, 0
    if np.any(probs < 0) or tail_mass < -1e-12:
        raise PrefixMassError("negative mass in prefix")
    # suffix[i] = probs[i] + ... + probs[-1] + tail; the conditional
    # probability probs[i]/suffix[i] is scale invariant, so no global
    # normalization is needed and the last box of a tail-free prefix
    # absorbs the remainder exactly.
    suffix = np.cumsum(probs[::-1])[::-1] + max(tail_mass, 0.0)
    remaining = count
    for i in range(len(probs)):
        if remaining == 0:
            break
        denom = suffix[i]
        if denom <= 0.0:
            raise PrefixMassError(
                f"residual probability {denom} is not positive with {remaining} balls left"
            )
        p = probs[i] / denom
        if p >= 1.0:
            out[i] = remaining
            remaining = 0
            break
        if p > 0.0:
            k = int(rng.binomial(remaining, p))
            out[i] = k
            remaining -= k
    return out, remaining


def allocate_children(
    count: int, prefix: Prefix, rng: np.random.Generator
) -> tuple[np.ndarray, int]:
    """Split ``count`` balls among prefix boxes plus the tail bucket.

    The joint law is multinomial with probabilities (probs..., tail),
    realized by sequential conditional binomials.
    """
    return _allocate_cascade(count, prefix.probs, prefix.tail_mass, rng)


# ---------------------------------------------------------------------------
# Results

@dataclass
class OccupancyResult:
    """Per-level occupancy statistics of one simulated replicate.

    box_masses / box_counts list every materialized box by level;
    histograms map occupancy r to the number of boxes holding exactly r
    balls; cumulative holds K_{n,j}(s) and threshold_counts holds
    rho_j(n^s) on the configured grid; error_budget bounds the
    probability that any ball was misallocated by law truncation.
    """

    n: int
    depth: int
    mode: CountMode
    s_grid: np.ndarray
    levels: tuple[int, ...]
    box_masses: list[np.ndarray]
    box_counts: list[np.ndarray]
    histograms: list[dict[int, int]]
    cumulative: CurveMatrix
    threshold_counts: CurveMatrix
    error_budget: float

    @property
    def exact_counts(self) -> bool:
        return self.mode is CountMode.EXACT

    def sup_gap(self, level: int) -> float:
        """max over the grid of |K_{n,j}(s) - rho_j(n^s)| at this level."""
        i = self.levels.index(level)
        return float(
            np.max(np.abs(self.cumulative.values[i] - self.threshold_counts.values[i]))
        )

    def validate(self):
        ln = math.log(self.n)
        for i, j in enumerate(self.levels):
            counts = self.box_counts[i]
            if int(counts.sum()) != self.n:
                raise NumericError(
                    f"ball conservation violated at level {j}: {counts.sum()} != {self.n}"
                )
            hist_total = sum(r * c for r, c in self.histograms[i].items())
            if hist_total != self.n:
                raise NumericError(f"histogram mass {hist_total} != n at level {j}")
            krow = self.cumulative.values[i]
            if np.any(np.diff(krow) < 0):
                raise NumericError(f"K_n,{j}(s) is not nondecreasing in s")
            if krow[-1] > self.n:
                raise NumericError(f"K_n,{j}(1) exceeds n")
            rrow = self.threshold_counts.values[i]
            bound = np.exp(self.s_grid * ln) * (1 + 1e-9) + 1e-9
            if np.any(rrow > bound):
                raise NumericError(f"rho_{j}(n^s) exceeds n^s")
        k1 = self.cumulative.values[:, -1]
        if np.any(np.diff(k1) < 0):
            raise NumericError("K_n,j(1) is not nondecreasing in j")


# ---------------------------------------------------------------------------
# Simulation

def _ms_threshold_for(levy, per_ball_target: float) -> float:
    """Threshold whose predicted thinning misallocation is below target.

    The per-ball bound is roughly small_mass(eps) * log(1/tau) / m with
    eps ~ tau; monotone on tau < 0.1, solved by bisection.
    """

    def est(tau: float) -> float:
        eps = -math.log1p(-tau)
        return float(levy.small_mass(eps)) * (-math.log(tau)) / levy.mean_m

    hi = 0.1
    if est(hi) <= per_ball_target:
        return hi
    lo = 1e-280
    for _ in range(100):
        mid = math.sqrt(lo * hi)
        if est(mid) <= per_ball_target:
            lo = mid
        else:
            hi = mid
    return lo


def simulate(
    law: FragmentationLaw, cfg: OccupancyConfig, rng: np.random.Generator
) -> OccupancyResult:
    """Drop n balls through the hierarchy and collect all statistics.

    A node is expanded if it holds at least one ball or, in exact mode,
    if its probability is at least 1/n.  Child prefixes are independent
    fresh copies of the law; balls falling in a tail bucket trigger
    recursive tail refinement until every ball sits in a concrete box.
    """
    n = cfg.n
    inv_n = (1.0 / n) * _THRESHOLD_SLACK
    exact = cfg.mode is CountMode.EXACT
    ln = math.log(n)
    levy_like = law.kind in (LawKind.POISSON_KINGMAN, LawKind.MULT_SUBORDINATOR)
    budget_target = cfg.error_budget_cap / (4.0 * n * cfg.depth) if levy_like else None

    budget = 0.0
    parents: list[tuple[float, int]] = [(1.0, n)]
    levels = tuple(range(1, cfg.depth + 1))
    box_masses: list[np.ndarray] = []
    box_counts: list[np.ndarray] = []
    histograms: list[dict[int, int]] = []
    k_rows = np.zeros((cfg.depth, len(cfg.s_grid)))
    rho_rows = np.zeros((cfg.depth, len(cfg.s_grid)))

    r_mins = [ceil_power(n, float(1.0 - s)) for s in cfg.s_grid]
    rho_thresholds = np.exp(-cfg.s_grid * ln) * _THRESHOLD_SLACK

    for li, j in enumerate(levels):
        masses_parts: list[np.ndarray] = []
        counts_parts: list[np.ndarray] = []
        for mass, count in parents:
            materialize = exact and mass >= inv_n
            if count == 0 and not materialize:
                continue
            thr = 0.5
            if materialize:
                thr = min(thr, 1.0 / (n * mass))
            if count > 0:
                thr = min(thr, cfg.placement_ratio / count)
                if law.kind is LawKind.POISSON_KINGMAN:
                    thr = min(thr, budget_target)
                elif law.kind is LawKind.MULT_SUBORDINATOR:
                    thr = min(thr, _ms_threshold_for(law.levy, budget_target))
            prefix = sample_prefix(law, thr, rng, cfg.hard_cap)
            budget += count * prefix.misallocation
            child_counts, tail_count = allocate_children(count, prefix, rng)
            counts_acc = [child_counts]
            rounds = 0
            while tail_count > 0:
                rounds += 1
                if rounds > cfg.max_tail_rounds:
                    raise NumericError(
                        f"tail refinement did not terminate in {cfg.max_tail_rounds} rounds"
                    )
                old_len = len(prefix.probs)
                old_tail = prefix.tail_mass
                old_misalloc = prefix.misallocation
                thr2 = old_tail * cfg.tail_shrink
                prefix = expand_tail(law, prefix, thr2, rng, cfg.hard_cap)
                budget += tail_count * max(0.0, prefix.misallocation - old_misalloc)
                new_probs = prefix.probs[old_len:]
                extra, tail_count = _allocate_cascade(
                    tail_count, new_probs, prefix.tail_mass, rng
                )
                counts_acc.append(extra)
            if budget > cfg.error_budget_cap:
                raise LawPrecisionError(
                    f"misallocation error budget {budget:.3e} exceeds cap "
                    f"{cfg.error_budget_cap:.3e}; lower the law threshold"
                )
            all_counts = np.concatenate(counts_acc)
            masses_parts.append(mass * prefix.probs)
            counts_parts.append(all_counts)
        masses = (
            np.concatenate(masses_parts) if masses_parts else np.zeros(0)
        )
        counts = (
            np.concatenate(counts_parts) if counts_parts else np.zeros(0, dtype=np.int64)
        )
        if int(counts.sum()) != n:
            raise NumericError(
                f"ball conservation violated at level {j}: {counts.sum()} != {n}"
            )
        counts_sorted = np.sort(counts)
        masses_sorted = np.sort(masses)
        size = len(counts_sorted)
        for gi in range(len(cfg.s_grid)):
            k_rows[li, gi] = size - np.searchsorted(counts_sorted, r_mins[gi], side="left")
            rho_rows[li, gi] = size - np.searchsorted(
                masses_sorted, rho_thresholds[gi], side="left"
            )
        occupied = counts[counts > 0]
        histograms.append(dict(sorted(Counter(occupied.tolist()).items())))
        box_masses.append(masses)
        box_counts.append(counts)
        parents = list(zip(masses.tolist(), counts.tolist()))

    result = OccupancyResult(
        n=n,
        depth=cfg.depth,
        mode=cfg.mode,
        s_grid=cfg.s_grid.copy(),
        levels=levels,
        box_masses=box_masses,
        box_counts=box_counts,
        histograms=histograms,
        cumulative=CurveMatrix(cfg.s_grid.copy(), levels, k_rows),
        threshold_counts=CurveMatrix(cfg.s_grid.copy(), levels, rho_rows),
        error_budget=budget,
    )
    result.validate()
    return result


def counting_function(result: OccupancyResult, j: int, t: float) -> int:
    """N_j(t): number of level-j boxes with probability at least e^-t.

    Exact only for exact-mode results and e^t <= n, because every
    unmaterialized box then has probability below 1/n <= e^-t.
    """
    if result.mode is not CountMode.EXACT:
        raise ExactnessError("counting_function requires an exact-mode result")
    if t > math.log(result.n) * (1 + 1e-12) + 1e-12:
        raise ExactnessError(
            f"t={t} exceeds log n = {math.log(result.n):.6f}; "
            "counts above the materialization threshold are not exact"
        )
    if t < 0:
        return 0
    masses = result.box_masses[result.levels.index(j)]
    thr = math.exp(-t) * _THRESHOLD_SLACK
    return int(np.count_nonzero(masses >= thr))
