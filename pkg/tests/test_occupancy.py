"""Allocation cascade, hierarchy simulation, and counting functions."""

import math
from itertools import combinations_with_replacement

import mpmath
import numpy as np
import pytest
from scipy import stats

import nestbox as nb
from nestbox.errors import ExactnessError, LawPrecisionError
from nestbox.occupancy import _allocate_cascade, ceil_power
from nestbox.rng import replicate_seed

GRID01 = np.array([0.0, 1.0])


def _prefix(probs, tail):
    return nb.Prefix(np.asarray(probs, dtype=float), tail, None)


# -- allocate_children -------------------------------------------------------

def test_allocate_zero_balls():
    counts, tail = nb.allocate_children(0, _prefix([0.5, 0.25], 0.25), np.random.default_rng(0))
    assert np.array_equal(counts, [0, 0]) and tail == 0


def test_allocate_single_box():
    counts, tail = nb.allocate_children(7, _prefix([1.0], 0.0), np.random.default_rng(0))
    assert np.array_equal(counts, [7]) and tail == 0


def test_allocate_category_means():
    probs = [0.5, 0.25, 0.125, 0.0625]
    tail = 0.0625
    count, seeds = 1_000_000, 10_000
    totals = np.zeros(5)
    sq = np.zeros(5)
    for i in range(seeds):
        rng = np.random.default_rng(replicate_seed(910000, i))
        c, t = nb.allocate_children(count, _prefix(probs, tail), rng)
        full = np.append(c, t)
        totals += full
        sq += full.astype(float) ** 2
    means = totals / seeds
    p_all = np.array(probs + [tail])
    se = np.sqrt(count * p_all * (1 - p_all) / seeds)
    assert np.all(np.abs(means - count * p_all) <= 3 * se)


def test_allocate_exact_multinomial_chisquare():
    # exact multinomial pmf over all compositions of 5 balls into the
    # 4 boxes plus tail is the brute-force oracle
    probs = [0.5, 0.25, 0.125, 0.0625]
    tail = 0.0625
    p_all = np.array(probs + [tail])
    count, seeds = 5, 100_000
    cells = list(combinations_with_replacement(range(5), count))
    pmf = {}
    for balls in cells:
        occ = np.bincount(balls, minlength=5)
        coef = math.factorial(count)
        for o in occ:
            coef //= math.factorial(int(o))
        pmf[tuple(occ)] = coef * float(np.prod(p_all ** occ))
    assert abs(sum(pmf.values()) - 1.0) < 1e-12

    observed = {}
    for i in range(seeds):
        rng = np.random.default_rng(replicate_seed(920000, i))
        c, t = nb.allocate_children(count, _prefix(probs, tail), rng)
        key = tuple(int(v) for v in c) + (int(t),)
        observed[key] = observed.get(key, 0) + 1

    # merge cells with expected count below 5 into one bucket
    keys = [k for k, p in pmf.items() if p * seeds >= 5.0]
    exp = np.array([pmf[k] * seeds for k in keys])
    obs = np.array([observed.get(k, 0) for k in keys], dtype=float)
    rest_exp = seeds - exp.sum()
    rest_obs = seeds - obs.sum()
    exp = np.append(exp, rest_exp)
    obs = np.append(obs, rest_obs)
    res = stats.chisquare(obs, exp)
    assert res.pvalue > 0.01


def test_allocate_negative_mass_rejected():
    with pytest.raises(nb.PrefixMassError):
        nb.allocate_children(3, _prefix([0.5, -0.1], 0.6), np.random.default_rng(0))


# -- simulate ----------------------------------------------------------------

def _distinct_geometric_pmf(balls=4, top=45):
    """P(#distinct boxes = d) for iid geometric(1/2) box assignments."""
    pmf = np.zeros(balls + 1)
    rng_b = np.arange(1, top + 1)
    b2, b3, b4 = np.meshgrid(rng_b, rng_b, rng_b, indexing="ij")
    for b1 in rng_b:
        weight = 0.5 ** (b1 + b2 + b3 + b4)
        stacked = np.stack([np.full_like(b2, b1), b2, b3, b4])
        srt = np.sort(stacked, axis=0)
        distinct = 1 + (np.diff(srt, axis=0) > 0).sum(axis=0)
        for d in range(1, balls + 1):
            pmf[d] += float(weight[distinct == d].sum())
    return pmf[1:]


def test_simulate_enumeration_oracle_n4():
    pmf = _distinct_geometric_pmf()
    assert abs(pmf.sum() - 1.0) < 1e-9
    law = nb.stick_constant(0.5)
    cfg = nb.OccupancyConfig(n=4, depth=1, s_grid=GRID01)
    seeds = 100_000
    observed = np.zeros(4)
    for i in range(seeds):
        rng = np.random.default_rng(replicate_seed(930000, i))
        res = nb.simulate(law, cfg, rng)
        observed[int(res.cumulative.values[0, -1]) - 1] += 1
    res = stats.chisquare(observed, pmf * seeds / pmf.sum())
    assert res.pvalue > 0.01


@pytest.mark.parametrize(
    "law",
    [nb.gem(1.0), nb.poisson_kingman_gamma(), nb.mult_subordinator_gamma()],
    ids=["gem", "pk", "ms"],
)
def test_single_ball_occupies_one_chain(law):
    cfg = nb.OccupancyConfig(n=1, depth=3, s_grid=np.array([0.0, 0.5, 1.0]))
    res = nb.simulate(law, cfg, np.random.default_rng(123))
    assert np.all(res.cumulative.values == 1.0)


def test_gem_mean_occupied_small():
    # scaled-down version of the Ewens mean check (the full n=1e6 case is
    # an acceptance criterion)
    n, reps = 10_000, 400
    law = nb.gem(1.0)
    cfg = nb.OccupancyConfig(n=n, depth=1, s_grid=GRID01)
    vals = np.empty(reps)
    for i in range(reps):
        rng = np.random.default_rng(replicate_seed(940000, i))
        vals[i] = nb.simulate(law, cfg, rng).cumulative.values[0, -1]
    oracle = np.sum(1.0 / (1.0 + np.arange(n)))
    se = vals.std(ddof=1) / math.sqrt(reps)
    assert abs(vals.mean() - oracle) <= 3 * se


def test_structure_invariants_deep():
    law = nb.gem(2.0)
    cfg = nb.OccupancyConfig(n=100_000, depth=3)
    res = nb.simulate(law, cfg, np.random.default_rng(5))
    res.validate()
    for li in range(3):
        assert res.box_counts[li].sum() == cfg.n
        assert np.all(np.diff(res.cumulative.values[li]) >= 0)
    k1 = res.cumulative.values[:, -1]
    assert np.all(np.diff(k1) >= 0)
    ln = math.log(cfg.n)
    assert np.all(res.threshold_counts.values <= np.exp(res.s_grid * ln) * (1 + 1e-9))


def test_simulate_determinism():
    law = nb.poisson_kingman_gamma()
    cfg = nb.OccupancyConfig(n=5000, depth=2)
    a = nb.simulate(law, cfg, np.random.default_rng(42))
    b = nb.simulate(law, cfg, np.random.default_rng(42))
    assert np.array_equal(a.cumulative.values, b.cumulative.values)
    assert np.array_equal(a.threshold_counts.values, b.threshold_counts.values)
    for x, y in zip(a.box_masses, b.box_masses):
        assert np.array_equal(x, y)
    assert a.error_budget == b.error_budget


def test_error_budget_abort(monkeypatch):
    import nestbox.occupancy as occ

    law = nb.poisson_kingman_gamma()
    real = occ.sample_prefix

    def lossy(law_, thr, rng, cap):
        p = real(law_, thr, rng, cap)
        return nb.Prefix(p.probs, p.tail_mass, p.tail_state, misallocation=0.5)

    monkeypatch.setattr(occ, "sample_prefix", lossy)
    cfg = nb.OccupancyConfig(n=100, depth=1, s_grid=GRID01, error_budget_cap=1e-3)
    with pytest.raises(LawPrecisionError):
        nb.simulate(law, cfg, np.random.default_rng(0))


# -- counting_function -------------------------------------------------------

def test_counting_negative_t():
    law = nb.stick_constant(0.5)
    res = nb.simulate(law, nb.OccupancyConfig(n=64, depth=1, s_grid=GRID01), np.random.default_rng(0))
    assert nb.counting_function(res, 1, -0.5) == 0


def test_counting_deterministic_law():
    law = nb.stick_constant(0.5)
    res = nb.simulate(law, nb.OccupancyConfig(n=1024, depth=1, s_grid=GRID01), np.random.default_rng(0))
    # boxes 2^-k >= 1/5: k <= log2(5) = 2.32, so exactly 2 boxes
    assert nb.counting_function(res, 1, math.log(5)) == 2


def test_counting_matches_direct_scan():
    law = nb.gem(1.0)
    n = 1000
    res = nb.simulate(law, nb.OccupancyConfig(n=n, depth=1, s_grid=GRID01), np.random.default_rng(17))
    direct = int(np.count_nonzero(res.box_masses[0] >= (1.0 / n) * (1 - 1e-12)))
    assert nb.counting_function(res, 1, math.log(n)) == direct


def test_counting_exactness_errors():
    law = nb.gem(1.0)
    res = nb.simulate(law, nb.OccupancyConfig(n=100, depth=1, s_grid=GRID01), np.random.default_rng(1))
    with pytest.raises(ExactnessError):
        nb.counting_function(res, 1, math.log(100) + 0.5)
    res2 = nb.simulate(
        law,
        nb.OccupancyConfig(n=100, depth=1, s_grid=GRID01, mode=nb.CountMode.OCCUPIED_ONLY),
        np.random.default_rng(1),
    )
    with pytest.raises(ExactnessError):
        nb.counting_function(res2, 1, 1.0)


# -- ceil_power --------------------------------------------------------------

def test_ceil_power_exact_boundaries():
    assert ceil_power(10**6, 0.5) == 1000
    assert ceil_power(2**30, 0.5) == 2**15
    assert ceil_power(10**9, 1.0) == 10**9
    assert ceil_power(123456789, 0.0) == 1
    assert ceil_power(1, 0.7) == 1


def test_ceil_power_against_mpmath_oracle():
    rng = np.random.default_rng(2024)
    cases = [(int(rng.integers(2, 10**9)), float(rng.random())) for _ in range(300)]
    cases += [(10**6, 0.5), (10**8, 0.25), (2**40, 0.5), (3**12, 1.0 / 3.0)]
    for n, e in cases:
        with mpmath.workdps(80):
            expected = int(mpmath.ceil(mpmath.power(n, mpmath.mpf(e))))
        assert ceil_power(n, e) == expected, (n, e)


def test_cascade_scale_invariance():
    # conditional cascade only uses mass ratios
    rng1 = np.random.default_rng(7)
    rng2 = np.random.default_rng(7)
    a, ta = _allocate_cascade(50, np.array([0.4, 0.2, 0.1]), 0.3, rng1)
    b, tb = _allocate_cascade(50, np.array([4.0, 2.0, 1.0]), 3.0, rng2)
    assert np.array_equal(a, b) and ta == tb
