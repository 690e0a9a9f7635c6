"""Limit-theorem constants, normalizations, and Gaussian limit processes.

The occupancy counts of a fragmentation law with counting-function
growth V(t) ~ c t^omega and fluctuation scale t^gamma converge, after
centering by c_j (s log n)^(omega j) and scaling by
a c_{j-1} (log n)^(gamma + omega (j-1)), to the processes

    R_1(s) = W(s),   R_j(s) = integral_0^s (s-y)^(omega (j-1)) dW(y),

where W is the base Gaussian process with covariance r(x, y).  This
module computes the coefficients c_j, the covariances E[R_k(s) R_j(u)]
by adaptive quadrature, the normalized empirical curves, and exact joint
Gaussian samples of the limit paths.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate, special

from .errors import (
    CoefficientRangeError,
    CovarianceNotPSDError,
    DegenerateScaleError,
    QuadratureError,
)

__all__ = [
    "CovBase",
    "LimitSpec",
    "CurveMatrix",
    "c_coeff",
    "cstar_coeff",
    "normalize_curves",
    "cov_limit",
    "rl_identity_check",
    "sample_limit_paths",
]

_LOG_FLOAT_MAX = math.log(np.finfo(np.float64).max)


# ---------------------------------------------------------------------------
# Base covariances of the level-1 limit process W

@dataclass(frozen=True)
class CovBase:
    """Covariance r(x, y) = E[W(x) W(y)] of the base Gaussian process.

    kind "bm":   standard Brownian motion, r = min(x, y).
    kind "tcbm": time-changed Brownian motion B(s^q), r = min(x, y)^q.
    kind "rl":   Riemann-Liouville process of order q (fractionally
                 integrated BM), r = integral_0^min (x-v)^q (y-v)^q dv.
    """

    kind: str
    q: float = 0.0

    def __post_init__(self):
        if self.kind not in ("bm", "tcbm", "rl"):
            raise ValueError(f"unknown base covariance kind {self.kind!r}")
        if self.kind in ("tcbm", "rl") and not self.q > 0:
            raise ValueError(f"base covariance {self.kind!r} requires q > 0, got {self.q}")

    @classmethod
    def brownian(cls) -> "CovBase":
        return cls("bm")

    @classmethod
    def time_changed_bm(cls, q: float) -> "CovBase":
        return cls("tcbm", q)

    @classmethod
    def riemann_liouville(cls, q: float) -> "CovBase":
        return cls("rl", q)

    def cov(self, x, y):
        """Vectorized r(x, y); arguments clipped below at 0."""
        x = np.maximum(np.asarray(x, dtype=float), 0.0)
        y = np.maximum(np.asarray(y, dtype=float), 0.0)
        if self.kind == "bm":
            return np.minimum(x, y)
        if self.kind == "tcbm":
            return np.minimum(x, y) ** self.q
        return _rl_cov(x, y, self.q)

    @property
    def label(self) -> str:
        if self.kind == "bm":
            return "bm"
        return f"{self.kind}(q={self.q:g})"


def _rl_cov(x, y, q: float):
    """Covariance of the Riemann-Liouville process of order q.

    With m = min(x, y) and d = |x - y|,

        r = integral_0^m w^q (d + w)^q dw
          = m^(q+1) d^q / (q+1) * 2F1(-q, q+1; q+2; -m/d)

    by the Euler integral.  Near d = 0 the hypergeometric form loses
    precision, so a two-term expansion in d/m is used there.
    """
    m = np.minimum(x, y)
    d = np.abs(x - y)
    out = np.zeros(np.broadcast(m, d).shape)
    pos = m > 0
    if not np.any(pos):
        return out if out.shape else float(out)
    mm, dd = np.broadcast_arrays(m, d)
    mp, dp = mm[pos], dd[pos]
    near = dp <= 1e-8 * mp
    res = np.empty_like(mp)
    if np.any(near):
        mn, dn = mp[near], dp[near]
        res[near] = mn ** (2 * q + 1) / (2 * q + 1) + q * dn * mn ** (2 * q) / (2 * q)
    far = ~near
    if np.any(far):
        mf, df = mp[far], dp[far]
        res[far] = (
            mf ** (q + 1) * df**q / (q + 1) * special.hyp2f1(-q, q + 1, q + 2, -mf / df)
        )
    out[pos] = res
    return out if out.shape else float(out)


# ---------------------------------------------------------------------------
# Spec of a limit theorem and the curve container

@dataclass(frozen=True)
class LimitSpec:
    """Quadruple (omega, gamma, c, a) plus the base covariance of W.

    a may be 0 for a degenerate (zero-variance) environment; operations
    that divide by a raise DegenerateScaleError in that case.  When the
    growth-bound exponents eps1/eps2 are not supplied, gamma is only
    required to lie in (omega - 1, omega).
    """

    omega: float
    gamma_exp: float
    c: float
    a: float
    base: CovBase
    eps1: float | None = None
    eps2: float | None = None

    def __post_init__(self):
        if not self.omega > 0:
            raise ValueError(f"omega must be > 0, got {self.omega}")
        if not self.c > 0:
            raise ValueError(f"c must be > 0, got {self.c}")
        if self.a < 0:
            raise ValueError(f"a must be >= 0, got {self.a}")
        lo = self.omega - min(1.0, self.eps1 or 1.0, self.eps2 or 1.0)
        if not (lo < self.gamma_exp < self.omega):
            raise ValueError(
                f"gamma must lie in ({lo}, {self.omega}), got {self.gamma_exp}"
            )

    @property
    def base_cov(self):
        return self.base.cov


@dataclass
class CurveMatrix:
    """Values of a curve family indexed by (level j, grid point s)."""

    s_grid: np.ndarray
    levels: tuple[int, ...]
    values: np.ndarray

    def __post_init__(self):
        self.s_grid = np.asarray(self.s_grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.levels), len(self.s_grid)):
            raise ValueError(
                f"values shape {self.values.shape} does not match "
                f"{len(self.levels)} levels x {len(self.s_grid)} grid points"
            )

    def row(self, level: int) -> np.ndarray:
        return self.values[self.levels.index(level)]

    def at(self, level: int, s: float) -> float:
        i = self.levels.index(level)
        k = int(np.argmin(np.abs(self.s_grid - s)))
        if abs(self.s_grid[k] - s) > 1e-12:
            raise KeyError(f"s={s} not on grid")
        return float(self.values[i, k])


# ---------------------------------------------------------------------------
# Centering coefficients

def _c_coeff_raw(omega: float, c: float, j: int) -> float:
    if j < 0:
        raise ValueError(f"level index must be >= 0, got {j}")
    if j == 0:
        return 1.0
    log_cj = j * (math.log(c) + special.gammaln(omega + 1)) - special.gammaln(
        omega * j + 1
    )
    if log_cj > _LOG_FLOAT_MAX:
        raise CoefficientRangeError(
            f"c_j overflows for omega={omega}, c={c}, j={j} (log c_j = {log_cj:.1f})"
        )
    return math.exp(log_cj)


def c_coeff(spec: LimitSpec, j: int) -> float:
    """Leading coefficient c_j = (c Gamma(omega+1))^j / Gamma(omega j + 1)."""
    return _c_coeff_raw(spec.omega, spec.c, j)


def cstar_coeff(c0: float, m: float, q: float, j: int) -> float:
    """Subordinator-model coefficient c_j^*.

    Equals c_j of the spec with omega = q+1 and c = c0/(m(q+1)), i.e.
    (c0 Gamma(q+2) / (m(q+1)))^j / Gamma((q+1) j + 1).
    """
    if not (c0 > 0 and m > 0 and q > 0):
        raise ValueError(f"c0, m, q must be positive, got {(c0, m, q)}")
    if j < 0:
        raise ValueError(f"level index must be >= 0, got {j}")
    return _c_coeff_raw(q + 1.0, c0 / (m * (q + 1.0)), j)


# ---------------------------------------------------------------------------
# Normalized empirical curves

def normalize_curves(result, spec: LimitSpec, n: int) -> CurveMatrix:
    """Center and scale the cumulative occupancy curves of ``result``.

    Row j holds (K_{n,j}(s) - c_j (s log n)^(omega j)) divided by
    a c_{j-1} (log n)^(gamma + omega (j-1)).  For omega = 1 the
    equivalent iid-stick form (factorials and mu = 1/c explicit) is also
    evaluated and both must agree to 1e-9 relative.
    """
    if n < 3:
        raise ValueError(f"n must be >= 3 so that log n > 1, got {n}")
    if spec.a <= 0:
        raise DegenerateScaleError(
            "normalization scale a = 0 (degenerate environment)"
        )
    curves = result.cumulative
    ln = math.log(n)
    out = np.empty_like(curves.values)
    for row, j in enumerate(curves.levels):
        cj = _c_coeff_raw(spec.omega, spec.c, j)
        cjm1 = _c_coeff_raw(spec.omega, spec.c, j - 1)
        denom = spec.a * cjm1 * ln ** (spec.gamma_exp + spec.omega * (j - 1))
        center = cj * (curves.s_grid * ln) ** (spec.omega * j)
        out[row] = (curves.values[row] - center) / denom
        if spec.omega == 1.0:
            mu = 1.0 / spec.c
            sigma2 = spec.a**2 * mu**3
            alt_center = (curves.s_grid * ln / mu) ** j / math.factorial(j)
            alt = (
                math.factorial(j - 1)
                * (curves.values[row] - alt_center)
                / math.sqrt(sigma2 * mu ** (-2 * j - 1) * ln ** (2 * j - 1))
            )
            scale = np.maximum(np.abs(out[row]), 1.0)
            if not np.all(np.abs(alt - out[row]) <= 1e-9 * scale):
                raise AssertionError(
                    "generic and iid-stick normalizations disagree beyond 1e-9"
                )
    return CurveMatrix(curves.s_grid.copy(), tuple(curves.levels), out)


# ---------------------------------------------------------------------------
# Adaptive quadrature (vectorized composite Gauss rules)

_GL_HI = np.polynomial.legendre.leggauss(8)
_GL_LO = np.polynomial.legendre.leggauss(4)

# |I_hi - I_lo| under-reports the true error of I_hi on integrands with
# derivative kinks; per-cell estimates are scaled by this factor
_SAFETY = 3.0
# cells split together per refinement round (amortizes evaluation cost)
_SPLIT_BATCH = 16


def _cells_integral(f, cells: np.ndarray):
    """Batched (I_hi, err_est, evals) on rectangles cells[:, (x0,x1,y0,y1)]."""
    hx = 0.5 * (cells[:, 1] - cells[:, 0])
    hy = 0.5 * (cells[:, 3] - cells[:, 2])
    cx = 0.5 * (cells[:, 1] + cells[:, 0])
    cy = 0.5 * (cells[:, 3] + cells[:, 2])
    nh, wh = _GL_HI
    nl, wl = _GL_LO
    xh = cx[:, None, None] + hx[:, None, None] * nh[None, :, None]
    yh = cy[:, None, None] + hy[:, None, None] * nh[None, None, :]
    i_hi = hx * hy * np.einsum("i,kij,j->k", wh, f(xh, yh), wh)
    xl = cx[:, None, None] + hx[:, None, None] * nl[None, :, None]
    yl = cy[:, None, None] + hy[:, None, None] * nl[None, None, :]
    i_lo = hx * hy * np.einsum("i,kij,j->k", wl, f(xl, yl), wl)
    evals = len(cells) * (len(nh) ** 2 + len(nl) ** 2)
    return i_hi, _SAFETY * np.abs(i_hi - i_lo), evals


def _adaptive_2d(f, x1: float, y1: float, tol: float, max_evals: int = 2**20) -> float:
    """Integrate f over [0,x1] x [0,y1] to absolute tolerance ``tol``.

    Composite tensor-Gauss rule: the cells with the largest error
    estimates are split in four (batched) until the summed estimate is
    below tol or the evaluation cap is reached.
    """
    if x1 <= 0 or y1 <= 0:
        return 0.0
    cells0 = np.array([[0.0, x1, 0.0, y1]])
    i0, e0, n0 = _cells_integral(f, cells0)
    heap = [(-float(e0[0]), 0, (0.0, x1, 0.0, y1), float(i0[0]))]
    total_i, total_err, evals, counter = float(i0[0]), float(e0[0]), n0, 1
    floor = 1e-15 * max(1.0, abs(total_i))
    while total_err > max(tol, floor) and heap:
        if evals >= max_evals:
            raise QuadratureError(
                f"2d quadrature: error {total_err:.3e} > tol {tol:.3e} "
                f"after {evals} evaluations"
            )
        children = []
        for _ in range(min(_SPLIT_BATCH, len(heap))):
            if total_err <= max(tol, floor):
                break
            neg_err, _, (cx0, cx1, cy0, cy1), ci = heapq.heappop(heap)
            total_i -= ci
            total_err += neg_err  # removes this cell's error
            xm, ym = 0.5 * (cx0 + cx1), 0.5 * (cy0 + cy1)
            children += [
                (cx0, xm, cy0, ym),
                (cx0, xm, ym, cy1),
                (xm, cx1, cy0, ym),
                (xm, cx1, ym, cy1),
            ]
        if not children:
            break
        ii, ee, ne = _cells_integral(f, np.array(children))
        evals += ne
        for c, cell in enumerate(children):
            counter += 1
            total_i += float(ii[c])
            total_err += float(ee[c])
            heapq.heappush(heap, (-float(ee[c]), counter, cell, float(ii[c])))
        floor = 1e-15 * max(1.0, abs(total_i))
    return total_i


def _adaptive_1d(f, b: float, tol: float) -> float:
    """Integrate the vectorized f over [0, b] to absolute tolerance tol."""
    if b <= 0:
        return 0.0
    val, abserr, info = integrate.quad(
        f, 0.0, b, epsabs=tol, epsrel=0.0, limit=500, full_output=True
    )[:3]
    if abserr > max(tol * 10, 1e-14 * max(1.0, abs(val))):
        raise QuadratureError(f"1d quadrature error {abserr:.3e} exceeds tol {tol:.3e}")
    return val


# ---------------------------------------------------------------------------
# Limit-process covariances

def _power_measure_dim(p: float, limit: float):
    """Integration recipe for integral_0^limit g(y) d(y^p) over tau in [0,1].

    For p < 1 the weight p y^(p-1) is singular at 0 and the substitution
    t = y^p removes it; for p >= 1 original coordinates keep the weight
    smooth.  A quintic smootherstep map is composed on top so that node
    density concentrates at both endpoints, which tames the Hoelder edge
    behavior of base covariances like min(x, y)^q with q < 1.
    Returns (y_of_tau, weight_of_tau) with vectorized callables.
    """
    if p < 1.0:
        inv = 1.0 / p
        upper = limit**p
        y_of = lambda x: np.power(x, inv)
        wgt = lambda x: 1.0
    else:
        upper = limit
        y_of = lambda x: x
        wgt = (lambda x: 1.0) if p == 1.0 else (lambda x: p * np.power(x, p - 1.0))

    def y_of_tau(tau):
        return y_of(upper * _smootherstep(tau))

    def weight_of_tau(tau):
        return wgt(upper * _smootherstep(tau)) * upper * _smootherstep_d(tau)

    return y_of_tau, weight_of_tau


def _smootherstep(t):
    return t * t * t * (t * (6.0 * t - 15.0) + 10.0)


def _smootherstep_d(t):
    return 30.0 * t * t * (1.0 - t) ** 2


def cov_limit(
    spec: LimitSpec, k: int, s: float, j: int, u: float, tol: float = 1e-8
) -> float:
    """E[R_k(s) R_j(u)] for the limit processes of ``spec``.

    For k, j >= 2 this is the double integral of r(s-y, u-z) against
    d(y^(omega(k-1))) d(z^(omega(j-1))).  Where the exponent is below 1
    the substitution t = y^(omega(k-1)) removes the endpoint singularity
    of the measure; an adaptive composite rule then integrates to
    absolute tolerance ``tol``.
    """
    if k < 1 or j < 1:
        raise ValueError(f"levels must be >= 1, got k={k}, j={j}")
    if s < 0 or u < 0:
        raise ValueError(f"arguments must be >= 0, got s={s}, u={u}")
    if k > j:
        k, s, j, u = j, u, k, s
    if s == 0 or u == 0:
        return 0.0
    r = spec.base_cov
    if j == 1:
        return float(r(s, u))
    pj = spec.omega * (j - 1)
    z_of, wz = _power_measure_dim(pj, u)
    if k == 1:

        def f1(w):
            z = u - z_of(w)
            return r(s, np.maximum(z, 0.0)) * wz(w)

        return _adaptive_1d(f1, 1.0, tol)
    pk = spec.omega * (k - 1)
    y_of, wy = _power_measure_dim(pk, s)

    def f2(t, w):
        yy = s - y_of(t)
        zz = u - z_of(w)
        return r(np.maximum(yy, 0.0), np.maximum(zz, 0.0)) * wy(t) * wz(w)

    return _adaptive_2d(f2, 1.0, 1.0, tol)


def rl_identity_check(q: float, alpha: float, u: float) -> tuple[float, float]:
    """Variances of both sides of the fractional-integration identity

        integral_0^u (u-y)^alpha dB_q(y)
            = q B(q, alpha+1) integral_0^u (u-y)^(q+alpha) dB(y).

    Left side via the covariance quadrature over the Riemann-Liouville
    base process; right side in closed form by the Ito isometry.
    """
    if q <= 0 or alpha < 0 or u < 0:
        raise ValueError(f"require q > 0, alpha >= 0, u >= 0; got {(q, alpha, u)}")
    if u == 0:
        return 0.0, 0.0
    coef = q * math.exp(special.betaln(q, alpha + 1))
    rhs = coef**2 * u ** (2 * (q + alpha) + 1) / (2 * (q + alpha) + 1)
    base = CovBase.riemann_liouville(q)
    if alpha == 0:
        lhs = float(base.cov(u, u))
        return lhs, rhs
    y_of, wgt = _power_measure_dim(alpha, u)

    def f2(t, w):
        yy = u - y_of(t)
        zz = u - y_of(w)
        return base.cov(np.maximum(yy, 0.0), np.maximum(zz, 0.0)) * wgt(t) * wgt(w)

    lhs = _adaptive_2d(f2, 1.0, 1.0, tol=1e-9 * max(1.0, rhs))
    return lhs, rhs


# ---------------------------------------------------------------------------
# Joint Gaussian sampling of limit paths

def assemble_covariance(
    spec: LimitSpec, s_grid, J: int, tol: float = 1e-8
) -> tuple[np.ndarray, list[tuple[int, float]]]:
    """Full covariance matrix over the (level, grid point) index set.

    Grid points equal to 0 are excluded (the processes vanish there).
    Returns the matrix and the index labels [(j, s), ...].
    """
    s_grid = np.asarray(s_grid, dtype=float)
    labels = [(j, float(s)) for j in range(1, J + 1) for s in s_grid if s > 0]
    dim = len(labels)
    cov = np.empty((dim, dim))
    for a in range(dim):
        ja, sa = labels[a]
        for b in range(a, dim):
            jb, sb = labels[b]
            cov[a, b] = cov[b, a] = cov_limit(spec, ja, sa, jb, sb, tol)
    return cov, labels


def _psd_factor(cov: np.ndarray) -> np.ndarray:
    dim = cov.shape[0]
    trace = float(np.trace(cov))
    jitter = 1e-12 * trace / max(dim, 1)
    for boost in (1.0, 100.0):
        try:
            return np.linalg.cholesky(cov + boost * jitter * np.eye(dim))
        except np.linalg.LinAlgError:
            continue
    eigval, eigvec = np.linalg.eigh(cov)
    if eigval.min() < -1e-8 * max(trace, 1e-300):
        raise CovarianceNotPSDError(
            f"covariance matrix is not PSD: min eigenvalue {eigval.min():.3e} "
            f"vs trace {trace:.3e}"
        )
    return eigvec * np.sqrt(np.clip(eigval, 0.0, None))


def sample_limit_paths(
    spec: LimitSpec,
    s_grid,
    J: int,
    count: int,
    rng: np.random.Generator,
    tol: float = 1e-8,
) -> list[CurveMatrix]:
    """Draw ``count`` joint samples of (R_1, ..., R_J) on the grid.

    Sampling is from the exact joint covariance assembled via the
    covariance quadrature (no Euler discretization of the stochastic
    integral); R_j(0) = 0 exactly.
    """
    s_grid = np.asarray(s_grid, dtype=float)
    if J < 1:
        raise ValueError(f"J must be >= 1, got {J}")
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if np.any(s_grid < 0) or np.any(s_grid > 1):
        raise ValueError("grid points must lie in [0, 1]")
    labels: list[tuple[int, float]]
    if np.all(s_grid == 0):
        draws = np.zeros((count, 0))
        labels = []
    else:
        cov, labels = assemble_covariance(spec, s_grid, J, tol)
        factor = _psd_factor(cov)
        draws = rng.standard_normal((count, len(labels))) @ factor.T
    col = {lab: i for i, lab in enumerate(labels)}
    levels = tuple(range(1, J + 1))
    out = []
    for i in range(count):
        vals = np.zeros((J, len(s_grid)))
        for row, j in enumerate(levels):
            for gi, s in enumerate(s_grid):
                if s > 0:
                    vals[row, gi] = draws[i, col[(j, float(s))]]
        out.append(CurveMatrix(s_grid.copy(), levels, vals))
    return out


def sample_limit_matrix(
    spec: LimitSpec,
    s_grid,
    J: int,
    count: int,
    rng: np.random.Generator,
    tol: float = 1e-8,
) -> tuple[np.ndarray, list[tuple[int, float]]]:
    """Like sample_limit_paths but returns the raw (count, dim) draw matrix."""
    cov, labels = assemble_covariance(spec, s_grid, J, tol)
    factor = _psd_factor(cov)
    return rng.standard_normal((count, len(labels))) @ factor.T, labels
