"""Fragmentation-law sampling: exactness, tails, and limit constants."""

import math

import numpy as np
import pytest
from scipy import stats

import nestbox as nb
from nestbox.errors import NoLimitTheoremError, PrefixCapError, TailError
from nestbox.rng import replicate_seed

# deep-truncation oracle for the gamma(1,1) Poisson-Kingman entropy
# E[-sum p log p]: threshold 1e-10, 4000 seeds (master 424242), frozen:
PK_ENTROPY_ORACLE = 0.991556
PK_ENTROPY_ORACLE_SE = 0.006620


def test_constant_stick_geometric_prefix():
    law = nb.stick_constant(0.5)
    p = nb.sample_prefix(law, 0.1, np.random.default_rng(0))
    assert np.allclose(p.probs, [0.5, 0.25, 0.125, 0.0625], rtol=0, atol=0)
    assert p.tail_mass == 0.0625


def test_stick_normalization_identity():
    law = nb.gem(1.0)
    p = nb.sample_prefix(law, 1e-6, np.random.default_rng(42))
    assert np.all(p.probs > 0)
    total = math.fsum(p.probs.tolist()) + p.tail_mass
    assert abs(total - 1.0) <= 1e-12


def test_stick_residuals_strictly_decreasing():
    law = nb.gem(0.5)
    p = nb.sample_prefix(law, 1e-8, np.random.default_rng(3))
    residuals = 1.0 - np.cumsum(p.probs)
    assert np.all(np.diff(residuals) < 0)


@pytest.mark.parametrize("seed", range(5))
def test_mass_identity_across_laws(seed):
    rng = np.random.default_rng(seed)
    for law in (nb.gem(2.0), nb.stick_beta(1.5, 2.0), nb.mult_subordinator_gamma()):
        p = nb.sample_prefix(law, 10.0 ** -int(rng.integers(2, 8)), rng)
        total = math.fsum(p.probs.tolist()) + p.tail_mass
        assert abs(total - 1.0) <= 1e-12, law.label
    p = nb.sample_prefix(nb.poisson_kingman_gamma(), 1e-6, rng)
    assert p.tail_mass == 0.0
    assert abs(math.fsum(p.probs.tolist()) - 1.0) <= 1e-12


def test_pk_probs_nonincreasing():
    p = nb.sample_prefix(nb.poisson_kingman_gamma(), 1e-8, np.random.default_rng(11))
    assert np.all(np.diff(p.probs) <= 0)


def test_pk_entropy_matches_deep_truncation_oracle():
    law = nb.poisson_kingman_gamma(1.0, 1.0)
    vals = np.empty(10_000)
    for i in range(len(vals)):
        rng = np.random.default_rng(replicate_seed(500100, i))
        p = nb.sample_prefix(law, 1e-4, rng).probs
        vals[i] = -np.sum(p * np.log(p))
    se = math.hypot(vals.std(ddof=1) / math.sqrt(len(vals)), PK_ENTROPY_ORACLE_SE)
    assert abs(vals.mean() - PK_ENTROPY_ORACLE) <= 3 * se


def test_gem_first_stick_mean():
    # E P_1 = E(1 - U) = 1/(theta+1) for beta(theta, 1) factors
    theta = 2.0
    law = nb.gem(theta)
    first = np.empty(100_000)
    for i in range(len(first)):
        rng = np.random.default_rng(replicate_seed(600100, i))
        first[i] = nb.sample_prefix(law, 0.2, rng).probs[0]
    target = 1.0 / (theta + 1.0)
    se = first.std(ddof=1) / math.sqrt(len(first))
    assert abs(first.mean() - target) <= 3 * se


def test_determinism():
    law = nb.gem(1.5)
    a = nb.sample_prefix(law, 1e-5, np.random.default_rng(77))
    b = nb.sample_prefix(law, 1e-5, np.random.default_rng(77))
    assert np.array_equal(a.probs, b.probs)
    assert a.tail_mass == b.tail_mass


def test_threshold_validation():
    with pytest.raises(ValueError):
        nb.sample_prefix(nb.gem(1.0), 0.0, np.random.default_rng(0))
    with pytest.raises(ValueError):
        nb.sample_prefix(nb.gem(1.0), 1.5, np.random.default_rng(0))


def test_hard_cap():
    with pytest.raises(PrefixCapError):
        nb.sample_prefix(nb.gem(1.0), 1e-9, np.random.default_rng(0), hard_cap=3)


# -- tail expansion ----------------------------------------------------------

def test_expand_tail_constant_stick():
    # continuation of the residual chain below the absolute threshold:
    # from tail 1/16, boxes are appended until the residual < 0.01
    law = nb.stick_constant(0.5)
    p = nb.sample_prefix(law, 0.1, np.random.default_rng(0))
    q = nb.expand_tail(law, p, 0.01, np.random.default_rng(1))
    assert np.allclose(q.probs[4:], [1 / 32, 1 / 64, 1 / 128], rtol=0, atol=0)
    assert q.tail_mass == 1 / 128
    assert math.fsum(q.probs.tolist()) + q.tail_mass == pytest.approx(1.0, abs=1e-12)


def test_expand_tail_empty_error():
    law = nb.gem(1.0)
    p = nb.sample_prefix(law, 1e-4, np.random.default_rng(5))
    empty = nb.Prefix(p.probs, 0.0, p.tail_state)
    with pytest.raises(TailError):
        nb.expand_tail(law, empty, 1e-6, np.random.default_rng(6))


def test_expand_tail_self_similarity_ks():
    # normalized tail refinement of an iid stick law is a fresh prefix
    theta = 2.0
    law = nb.gem(theta)
    n_seeds = 10_000
    expanded_first = np.empty(n_seeds)
    fresh_first = np.empty(n_seeds)
    for i in range(n_seeds):
        rng = np.random.default_rng(replicate_seed(700100, i))
        p = nb.sample_prefix(law, 0.3, rng)
        q = nb.expand_tail(law, p, p.tail_mass * 0.3, rng)
        expanded_first[i] = q.probs[len(p.probs)] / p.tail_mass
        rng2 = np.random.default_rng(replicate_seed(800100, i))
        fresh_first[i] = nb.sample_prefix(law, 0.3, rng2).probs[0]
    res = stats.ks_2samp(expanded_first, fresh_first)
    assert res.pvalue > 0.01


def test_expand_tail_pk_resumes_ranked_atoms():
    law = nb.poisson_kingman_gamma()
    rng = np.random.default_rng(8)
    p = nb.sample_prefix(law, 1e-3, rng)
    q = nb.expand_tail(law, p, 1e-6, rng)
    assert len(q.probs) > len(p.probs)
    assert np.all(np.diff(q.probs) <= 0)
    assert q.misallocation < p.misallocation
    assert abs(math.fsum(q.probs.tolist()) - 1.0) <= 1e-12


def test_expand_tail_ms():
    law = nb.mult_subordinator_gamma()
    rng = np.random.default_rng(9)
    p = nb.sample_prefix(law, 1e-3, rng)
    q = nb.expand_tail(law, p, p.tail_mass * 1e-3, rng)
    assert q.tail_mass < p.tail_mass * 1e-3
    assert math.fsum(q.probs.tolist()) + q.tail_mass == pytest.approx(1.0, abs=1e-12)


# -- limit constants ---------------------------------------------------------

def test_limit_spec_gem():
    spec = nb.limit_spec_for(nb.gem(2.0))
    assert spec.omega == 1.0
    assert spec.gamma_exp == 0.5
    assert spec.c == pytest.approx(2.0)
    assert spec.a == pytest.approx(math.sqrt(2.0))
    assert spec.base.kind == "bm"


def test_limit_spec_pk_gamma():
    spec = nb.limit_spec_for(nb.poisson_kingman_gamma(1.0, 1.0))
    assert (spec.omega, spec.gamma_exp, spec.c, spec.a) == (1.0, 0.5, 1.0, 1.0)
    assert spec.base.kind == "tcbm" and spec.base.q == 1.0


def test_limit_spec_ms_gamma():
    spec = nb.limit_spec_for(nb.mult_subordinator_gamma(1.0, 1.0))
    assert spec.omega == 2.0
    assert spec.gamma_exp == 1.5
    assert spec.c == pytest.approx(0.5)
    assert spec.a == pytest.approx(1.0)
    assert spec.base.kind == "rl" and spec.base.q == 1.0


def test_limit_spec_rejects_pitman_yor():
    with pytest.raises(NoLimitTheoremError, match="no limit theorem applies"):
        nb.limit_spec_for(nb.pitman_yor(1.0, 0.5))


def test_limit_spec_requires_declared_moments():
    law = nb.stick_custom(lambda u: u, label="uniform-undeclared")
    with pytest.raises(NoLimitTheoremError):
        nb.limit_spec_for(law)


def test_general_beta_moments():
    # -log U for U ~ beta(a, b): mean psi(a+b) - psi(a)
    from scipy.special import digamma

    law = nb.stick_beta(2.0, 3.0)
    assert law.stick.mu == pytest.approx(float(digamma(5) - digamma(2)))
    draws = law.stick.factors(1, np.random.default_rng(1).random(200_000))
    assert -np.log(draws).mean() == pytest.approx(law.stick.mu, rel=0.02)
    assert np.log(draws).var() == pytest.approx(law.stick.sigma2, rel=0.05)


def test_levy_params_validates_inverse():
    bad = dict(
        tail=lambda x: math.exp(-x),
        tail_inverse=lambda g: -math.log(g) * 1.001,
        small_mass=lambda x: x,
        mean_m=1.0,
        var_s2=1.0,
        q=1.0,
        c0=1.0,
    )
    with pytest.raises(ValueError, match="tail_inverse"):
        nb.LevyParams(**bad)


def test_pitman_yor_prefix_samples():
    law = nb.pitman_yor(1.0, 0.5)
    p = nb.sample_prefix(law, 1e-4, np.random.default_rng(4))
    assert np.all(p.probs > 0)
    assert math.fsum(p.probs.tolist()) + p.tail_mass == pytest.approx(1.0, abs=1e-12)
