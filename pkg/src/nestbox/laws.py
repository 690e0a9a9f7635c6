"""Fragmentation laws and lazy sampling of their box-probability sequences.

Three families of random probability vectors (P_k) with sum 1 are
supported:

* stick breaking: P_k = U_1 ... U_{k-1} (1 - U_k) with independent
  factors U_i on (0, 1), sampled by evaluating a quantile function at
  uniform variates (one sampling interface for all stick laws);
* Poisson-Kingman: normalized ranked atoms of a Poisson random measure
  with an infinite Levy intensity, atoms generated in decreasing order
  as tail_inverse(arrival times of a unit-rate Poisson process);
* multiplicative subordinator: the jumps of F(t) = 1 - exp(-X(t)) for a
  drift-free subordinator X, emitted in time order with small jumps
  deferred to the regenerative remainder.

A sampled ``Prefix`` is a finite materialization: the leading box masses
plus an explicitly tracked tail, refinable exactly (stick breaking,
subordinator remainder) or by resuming ranked-atom generation
(Poisson-Kingman).  Misallocation error introduced by truncation is
bounded per ball and recorded on the prefix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import partial

import numpy as np
from scipy import optimize, special

from .errors import NoLimitTheoremError, PrefixCapError, TailError
from .limits import CovBase, LimitSpec

__all__ = [
    "LawKind",
    "StickParams",
    "LevyParams",
    "FragmentationLaw",
    "Prefix",
    "sample_prefix",
    "expand_tail",
    "limit_spec_for",
    "gem",
    "stick_beta",
    "stick_constant",
    "stick_custom",
    "pitman_yor",
    "gamma_levy",
    "poisson_kingman_gamma",
    "poisson_kingman",
    "mult_subordinator_gamma",
    "mult_subordinator",
]

DEFAULT_HARD_CAP = 10_000_000
_CHUNK = 64


class LawKind(Enum):
    STICK_BREAKING = "stick_breaking"
    POISSON_KINGMAN = "poisson_kingman"
    MULT_SUBORDINATOR = "mult_subordinator"


# ---------------------------------------------------------------------------
# Quantile functions (module-level so laws pickle for worker processes)

def _pow_quantile(inv_theta: float, u):
    return np.power(u, inv_theta)


def _beta_quantile(a: float, b: float, u):
    return special.betaincinv(a, b, u)


def _const_quantile(value: float, u):
    return np.full_like(np.asarray(u, dtype=float), value)


def _pitman_yor_quantile(theta: float, alpha: float, idx, u):
    # factor i has a beta(theta + alpha*i, 1 - alpha) distribution
    return special.betaincinv(theta + alpha * np.asarray(idx, dtype=float), 1.0 - alpha, u)


@dataclass(frozen=True)
class StickParams:
    """Distribution of the stick factors U_i.

    ``quantile`` maps uniform variates to factors for iid laws;
    ``quantile_indexed(i, u)`` replaces it when factors depend on the
    1-based index i (then the law is not homogeneous and no limit
    theorem is attached).  ``mu`` = E|log U| and ``sigma2`` = Var(log U)
    feed the limit constants when declared.
    """

    quantile: object | None = None
    quantile_indexed: object | None = None
    mu: float | None = None
    sigma2: float | None = None
    label: str = "custom"

    def __post_init__(self):
        if (self.quantile is None) == (self.quantile_indexed is None):
            raise ValueError("exactly one of quantile / quantile_indexed is required")
        if self.mu is not None and not self.mu > 0:
            raise ValueError(f"mu must be > 0, got {self.mu}")
        if self.sigma2 is not None and self.sigma2 < 0:
            raise ValueError(f"sigma2 must be >= 0, got {self.sigma2}")

    @property
    def iid(self) -> bool:
        return self.quantile is not None

    def factors(self, start_index: int, u: np.ndarray) -> np.ndarray:
        """Factors U_{start_index}, U_{start_index+1}, ... from uniforms u."""
        if self.iid:
            vals = np.asarray(self.quantile(u), dtype=float)
        else:
            idx = start_index + np.arange(len(u))
            vals = np.asarray(self.quantile_indexed(idx, u), dtype=float)
        # keep factors strictly inside (0, 1) so residuals strictly decrease
        return np.clip(vals, 1e-300, 1.0 - 1e-16)


@dataclass(frozen=True)
class LevyParams:
    """Levy measure of a subordinator via its tail ``x -> nu([x, inf))``.

    The tail must be strictly decreasing and continuous on (0, inf) with
    total mass infinity.  ``small_mass(x)`` is the partial mean
    integral_0^x y nu(dy); ``mean_m`` and ``var_s2`` are the first two
    moments of X(1); (q, c0) describe the logarithmic tail growth
    nu([x, inf)) ~ c0 |log x|^q as x -> 0.
    """

    tail: object
    tail_inverse: object
    small_mass: object
    mean_m: float
    var_s2: float
    q: float
    c0: float
    label: str = "custom"

    def __post_init__(self):
        if not (self.mean_m > 0 and self.var_s2 > 0 and self.q > 0 and self.c0 > 0):
            raise ValueError("mean_m, var_s2, q, c0 must all be positive")
        probe = np.array([1e-8, 1e-6, 1e-4, 1e-2, 0.1, 0.5, 1.0, 2.0])
        tails = np.array([self.tail(x) for x in probe])
        if not np.all(np.diff(tails) < 0):
            raise ValueError("levy tail must be strictly decreasing")
        for x, t in zip(probe, tails):
            back = self.tail_inverse(t)
            if not abs(back - x) <= 1e-9 * x:
                raise ValueError(
                    f"tail_inverse(tail({x})) = {back}, off by more than 1e-9 relative"
                )


@dataclass(frozen=True)
class FragmentationLaw:
    kind: LawKind
    stick: StickParams | None = None
    levy: LevyParams | None = None
    limit_override: LimitSpec | None = None
    label: str = ""

    def __post_init__(self):
        if self.kind is LawKind.STICK_BREAKING:
            if self.stick is None:
                raise ValueError("stick-breaking law requires StickParams")
        elif self.levy is None:
            raise ValueError(f"{self.kind.value} law requires LevyParams")


# -- tail continuation records ----------------------------------------------

@dataclass(frozen=True)
class _StickTail:
    next_index: int


@dataclass(frozen=True)
class _PKTail:
    next_gamma: float
    atoms_raw: np.ndarray
    sum_raw: float
    deficit: float


@dataclass(frozen=True)
class _MSTail:
    pass


@dataclass(frozen=True)
class Prefix:
    """Finite materialization of an infinite box-probability sequence.

    ``probs`` are the leading box masses; ``tail_mass`` the unallocated
    remainder (0 for Poisson-Kingman, whose probs are normalized to sum
    1 exactly); ``misallocation`` bounds the probability that a single
    ball allocated by this prefix lands in a different box than it would
    under the exact law.
    """

    probs: np.ndarray
    tail_mass: float
    tail_state: object
    misallocation: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "probs", np.asarray(self.probs, dtype=float))


# ---------------------------------------------------------------------------
# Law constructors

def gem(theta: float) -> FragmentationLaw:
    """GEM(theta): iid beta(theta, 1) stick factors."""
    if not theta > 0:
        raise ValueError(f"theta must be > 0, got {theta}")
    params = StickParams(
        quantile=partial(_pow_quantile, 1.0 / theta),
        mu=1.0 / theta,
        sigma2=1.0 / theta**2,
        label=f"beta_theta1({theta:g})",
    )
    return FragmentationLaw(LawKind.STICK_BREAKING, stick=params, label=f"gem({theta:g})")


def stick_beta(alpha: float, beta: float) -> FragmentationLaw:
    """Stick breaking with iid beta(alpha, beta) factors."""
    if not (alpha > 0 and beta > 0):
        raise ValueError(f"alpha, beta must be > 0, got {(alpha, beta)}")
    mu = float(special.digamma(alpha + beta) - special.digamma(alpha))
    sigma2 = float(special.polygamma(1, alpha) - special.polygamma(1, alpha + beta))
    params = StickParams(
        quantile=partial(_beta_quantile, alpha, beta),
        mu=mu,
        sigma2=sigma2,
        label=f"beta({alpha:g},{beta:g})",
    )
    return FragmentationLaw(
        LawKind.STICK_BREAKING, stick=params, label=f"stick_beta({alpha:g},{beta:g})"
    )


def stick_constant(u: float) -> FragmentationLaw:
    """Deterministic environment: every factor equals u."""
    if not 0 < u < 1:
        raise ValueError(f"u must be in (0, 1), got {u}")
    params = StickParams(
        quantile=partial(_const_quantile, u),
        mu=-math.log(u),
        sigma2=0.0,
        label=f"constant({u:g})",
    )
    return FragmentationLaw(LawKind.STICK_BREAKING, stick=params, label=f"stick_constant({u:g})")


def stick_custom(
    quantile, mu: float | None = None, sigma2: float | None = None, label: str = "custom"
) -> FragmentationLaw:
    """Stick breaking with a user-supplied (vectorized) quantile function."""
    params = StickParams(quantile=quantile, mu=mu, sigma2=sigma2, label=label)
    return FragmentationLaw(LawKind.STICK_BREAKING, stick=params, label=f"stick_{label}")


def pitman_yor(theta: float, alpha: float) -> FragmentationLaw:
    """Two-parameter residual allocation; sampler only, no limit theorem."""
    if not (0 < alpha < 1 and theta > -alpha):
        raise ValueError(f"require 0 < alpha < 1 and theta > -alpha, got {(theta, alpha)}")
    params = StickParams(
        quantile_indexed=partial(_pitman_yor_quantile, theta, alpha),
        label=f"pitman_yor({theta:g},{alpha:g})",
    )
    return FragmentationLaw(
        LawKind.STICK_BREAKING, stick=params, label=f"pitman_yor({theta:g},{alpha:g})"
    )


# -- gamma-subordinator Levy measure: nu(dx) = theta x^-1 exp(-lam x) dx ----

_EULER = np.euler_gamma


def _gamma_tail(theta: float, lam: float, x: float) -> float:
    return theta * float(special.exp1(lam * x))


def _exp1_inverse(g: float) -> float:
    """Solve exp1(x) = g for x > 0."""
    if g <= 0:
        raise ValueError(f"exp1 inverse needs a positive argument, got {g}")
    if g >= 46.0:
        # exp1(x) = -gamma - log x + O(x); the O(x) term is < 1e-20 here
        return math.exp(-_EULER - g)

    def h(t):
        return float(special.exp1(math.exp(t))) - g

    return math.exp(optimize.brentq(h, -709.0, 7.0, xtol=1e-13, rtol=8.9e-16))


def _gamma_tail_inverse(theta: float, lam: float, g: float) -> float:
    return _exp1_inverse(g / theta) / lam


def _gamma_small_mass(theta: float, lam: float, x: float) -> float:
    return theta * -math.expm1(-lam * x) / lam


def gamma_levy(theta: float = 1.0, lam: float = 1.0) -> LevyParams:
    """Gamma-subordinator Levy measure with tail theta * E1(lam x).

    The logarithmic tail constant is c0 = theta and q = 1; the scale lam
    only shifts the bounded remainder term.
    """
    if not (theta > 0 and lam > 0):
        raise ValueError(f"theta, lam must be > 0, got {(theta, lam)}")
    return LevyParams(
        tail=partial(_gamma_tail, theta, lam),
        tail_inverse=partial(_gamma_tail_inverse, theta, lam),
        small_mass=partial(_gamma_small_mass, theta, lam),
        mean_m=theta / lam,
        var_s2=theta / lam**2,
        q=1.0,
        c0=theta,
        label=f"gamma({theta:g},{lam:g})",
    )


def poisson_kingman(levy: LevyParams) -> FragmentationLaw:
    return FragmentationLaw(LawKind.POISSON_KINGMAN, levy=levy, label=f"pk_{levy.label}")


def poisson_kingman_gamma(theta: float = 1.0, lam: float = 1.0) -> FragmentationLaw:
    return poisson_kingman(gamma_levy(theta, lam))


def mult_subordinator(levy: LevyParams) -> FragmentationLaw:
    return FragmentationLaw(LawKind.MULT_SUBORDINATOR, levy=levy, label=f"ms_{levy.label}")


def mult_subordinator_gamma(theta: float = 1.0, lam: float = 1.0) -> FragmentationLaw:
    return mult_subordinator(gamma_levy(theta, lam))


# ---------------------------------------------------------------------------
# Sampling

def _check_threshold(threshold: float):
    if not (0.0 < threshold < 1.0):
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")


def _sample_stick(
    stick: StickParams,
    threshold: float,
    rng: np.random.Generator,
    hard_cap: int,
    start_residual: float = 1.0,
    start_index: int = 0,
):
    """Boxes until the residual drops below ``threshold`` (absolute).

    Returns (probs, tail_mass, next_index).  Box k is the one whose
    residual first falls below the threshold, so the tail always
    satisfies tail_mass < threshold.
    """
    parts = []
    residual = start_residual
    index = start_index
    total = 0
    while True:
        u = rng.random(_CHUNK)
        factors = stick.factors(index + 1, u)
        chain = residual * np.cumprod(factors)
        prev = np.concatenate(([residual], chain[:-1]))
        probs = prev - chain
        hits = np.nonzero(chain < threshold)[0]
        if hits.size:
            k = int(hits[0])
            if total + k + 1 > hard_cap:
                raise PrefixCapError(
                    f"stick prefix needs more than {hard_cap} boxes at threshold {threshold}"
                )
            parts.append(probs[: k + 1])
            return np.concatenate(parts), float(chain[k]), index + k + 1
        parts.append(probs)
        residual = float(chain[-1])
        index += _CHUNK
        total += _CHUNK
        if total > hard_cap:
            raise PrefixCapError(
                f"stick prefix exceeded {hard_cap} boxes at threshold {threshold}"
            )


def _sample_pk(levy: LevyParams, threshold: float, rng: np.random.Generator, hard_cap: int):
    """Ranked atoms until both the expected unsampled mass and the last
    atom fall below threshold * (sampled mass)."""
    gamma_t = 0.0
    atoms: list[float] = []
    total = 0.0
    last = math.inf
    while True:
        gamma_t += rng.exponential()
        x = float(levy.tail_inverse(gamma_t))
        x = min(x, last)  # ranked atoms are nonincreasing by construction
        last = x
        atoms.append(x)
        total += x
        deficit = float(levy.small_mass(x))
        if deficit < threshold * total and x < threshold * total:
            break
        if len(atoms) > hard_cap:
            raise PrefixCapError(
                f"poisson-kingman prefix exceeded {hard_cap} atoms at threshold {threshold}"
            )
    raw = np.array(atoms)
    return raw, total, gamma_t, deficit


def _sample_ms_unit(levy: LevyParams, rel_threshold: float, rng: np.random.Generator, hard_cap: int):
    """Thinned subordinator jumps on a unit mass.

    Jumps below eps = -log(1 - rel_threshold) are deferred, so every
    deferred box has mass below rel_threshold.  Stops when the remainder
    exp(-X) drops below rel_threshold.  Returns (probs, tail, misalloc)
    where misalloc bounds the per-ball misallocation caused by thinning.
    """
    eps = -math.log1p(-rel_threshold)
    rate = float(levy.tail(eps))
    m_eps = float(levy.small_mass(eps))
    w = 1.0
    t = 0.0
    probs: list[float] = []
    while w >= rel_threshold:
        t += rng.exponential() / rate
        g = rng.random() * rate
        dx = float(levy.tail_inverse(g))
        w_next = w * math.exp(-dx)
        probs.append(w - w_next)
        w = w_next
        if len(probs) > hard_cap:
            raise PrefixCapError(
                f"subordinator prefix exceeded {hard_cap} jumps at threshold {rel_threshold}"
            )
    misalloc = -math.expm1(-m_eps * t)
    return np.array(probs), w, misalloc


def sample_prefix(
    law: FragmentationLaw,
    threshold: float,
    rng: np.random.Generator,
    hard_cap: int = DEFAULT_HARD_CAP,
) -> Prefix:
    """Materialize the leading boxes of the law down to ``threshold``.

    Stick breaking: boxes until the residual U_1...U_k < threshold; the
    tail is exactly tail_mass times an independent copy of the law.
    Poisson-Kingman: ranked atoms until the expected unsampled mass is
    below threshold times the sampled mass; probs normalized to sum 1.
    Multiplicative subordinator: thinned jumps until the regenerative
    remainder exp(-X) < threshold.
    """
    _check_threshold(threshold)
    if law.kind is LawKind.STICK_BREAKING:
        probs, tail, nxt = _sample_stick(law.stick, threshold, rng, hard_cap)
        return Prefix(probs, tail, _StickTail(nxt))
    if law.kind is LawKind.POISSON_KINGMAN:
        raw, total, gamma_t, deficit = _sample_pk(law.levy, threshold, rng, hard_cap)
        return Prefix(
            raw / total,
            0.0,
            _PKTail(gamma_t, raw, total, deficit),
            misallocation=deficit / total,
        )
    probs, tail, misalloc = _sample_ms_unit(law.levy, threshold, rng, hard_cap)
    return Prefix(probs, tail, _MSTail(), misallocation=misalloc)


def expand_tail(
    law: FragmentationLaw,
    prefix: Prefix,
    threshold: float,
    rng: np.random.Generator,
    hard_cap: int = DEFAULT_HARD_CAP,
) -> Prefix:
    """Refine the tail bucket of ``prefix`` into further boxes.

    For stick breaking the refinement continues the factor sequence, so
    it is exact in distribution (the tail is tail_mass times a fresh
    copy for iid factors).  For the subordinator the regenerative
    remainder restarts the thinned law.  For Poisson-Kingman the ranked
    atoms resume from the recorded arrival time and all probabilities
    are renormalized.
    """
    _check_threshold(threshold)
    if law.kind is LawKind.POISSON_KINGMAN:
        state = prefix.tail_state
        if not isinstance(state, _PKTail):
            raise TailError("prefix does not carry a resumable ranked-atom state")
        gamma_t = state.next_gamma
        atoms = list(state.atoms_raw)
        total = state.sum_raw
        last = atoms[-1] if atoms else math.inf
        while True:
            gamma_t += rng.exponential()
            x = float(law.levy.tail_inverse(gamma_t))
            x = min(x, last)
            last = x
            atoms.append(x)
            total += x
            deficit = float(law.levy.small_mass(x))
            if deficit < threshold * total and x < threshold * total:
                break
            if len(atoms) > hard_cap:
                raise PrefixCapError(f"ranked-atom expansion exceeded {hard_cap} atoms")
        raw = np.array(atoms)
        return Prefix(
            raw / total,
            0.0,
            _PKTail(gamma_t, raw, total, deficit),
            misallocation=deficit / total,
        )
    if prefix.tail_mass <= 0.0:
        raise TailError("prefix has an empty tail; nothing to expand")
    if threshold >= prefix.tail_mass:
        raise ValueError(
            f"threshold {threshold} does not refine the tail of mass {prefix.tail_mass}"
        )
    if law.kind is LawKind.STICK_BREAKING:
        state = prefix.tail_state
        if not isinstance(state, _StickTail):
            raise TailError("prefix does not carry a stick continuation state")
        new, tail, nxt = _sample_stick(
            law.stick,
            threshold,
            rng,
            hard_cap,
            start_residual=prefix.tail_mass,
            start_index=state.next_index,
        )
        return Prefix(
            np.concatenate([prefix.probs, new]),
            tail,
            _StickTail(nxt),
            misallocation=prefix.misallocation,
        )
    # multiplicative subordinator: remainder is memoryless
    rel = threshold / prefix.tail_mass
    unit_probs, unit_tail, misalloc = _sample_ms_unit(law.levy, rel, rng, hard_cap)
    return Prefix(
        np.concatenate([prefix.probs, prefix.tail_mass * unit_probs]),
        prefix.tail_mass * unit_tail,
        _MSTail(),
        misallocation=prefix.misallocation + misalloc,
    )


# ---------------------------------------------------------------------------
# Limit constants

def limit_spec_for(law: FragmentationLaw) -> LimitSpec:
    """The limit theorem's (omega, gamma, c, a) and base covariance.

    Stick breaking with iid factors and declared (mu, sigma2) maps to
    the Brownian base with omega = 1, gamma = 1/2, c = 1/mu,
    a = sqrt(sigma2 / mu^3).  The subordinator model maps to the
    Riemann-Liouville base of order q with omega = q + 1,
    gamma = q + 1/2, c = c0 / (m (q+1)), a = s m^(-3/2).  The
    Poisson-Kingman model maps to time-changed Brownian motion with
    omega = q, gamma = q/2, c = c0, a = sqrt(c0).
    """
    if law.limit_override is not None:
        return law.limit_override
    if law.kind is LawKind.STICK_BREAKING:
        stick = law.stick
        if not stick.iid:
            raise NoLimitTheoremError(
                f"no limit theorem applies to {law.label or 'this law'}: "
                "stick factors are not identically distributed"
            )
        if stick.mu is None or stick.sigma2 is None:
            raise NoLimitTheoremError(
                f"no limit theorem applies to {law.label or 'this law'}: "
                "declare mu = E|log U| and sigma2 = Var(log U)"
            )
        mu, sigma2 = stick.mu, stick.sigma2
        return LimitSpec(
            omega=1.0,
            gamma_exp=0.5,
            c=1.0 / mu,
            a=math.sqrt(sigma2 / mu**3),
            base=CovBase.brownian(),
            eps1=1.0,
            eps2=1.0,
        )
    levy = law.levy
    if law.kind is LawKind.POISSON_KINGMAN:
        return LimitSpec(
            omega=levy.q,
            gamma_exp=levy.q / 2.0,
            c=levy.c0,
            a=math.sqrt(levy.c0),
            base=CovBase.time_changed_bm(levy.q),
        )
    m = levy.mean_m
    return LimitSpec(
        omega=levy.q + 1.0,
        gamma_exp=levy.q + 0.5,
        c=levy.c0 / (m * (levy.q + 1.0)),
        a=math.sqrt(levy.var_s2) * m**-1.5,
        base=CovBase.riemann_liouville(levy.q),
    )
