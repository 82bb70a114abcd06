"""Closed-form and quadrature reference distributions, KS statistic, and
Monte Carlo integration estimators used to validate the samplers.

For the quadratic energy 0.5||X||_F^2 the norm D = ||X||_F satisfies
beta D^2 ~ chi^2(N) under the embedded metric and chi^2(N/2) under the
Bures-Wasserstein metric, where N = np - p(p-1)/2 is the manifold dimension.
For the entropy energy Tr(X log X) the norm CDF is a p-fold eigenvalue
integral evaluated by deterministic quadrature. For the shifted quadratic
energy 0.5||X - A||_F^2 with dominant target spectrum, the distance
D = ||X - A||_F approximately satisfies beta D^2 ~ chi^2(N) under both
metrics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import special

from .errors import (
    EmptyTraceError,
    GridMismatchError,
    InsufficientDataError,
    IntegralDomainError,
    IntegralOverflowError,
    InvalidMetricError,
    QuadratureUnconvergedError,
    UnsupportedRankError,
)


class Metric(str, Enum):
    EMBEDDED = "E"
    BURES_WASSERSTEIN = "BW"


def _coerce_metric(metric) -> Metric:
    try:
        return Metric(metric)
    except ValueError:
        raise InvalidMetricError(f"unknown metric {metric!r}; expected 'E' or 'BW'") from None


@dataclass(frozen=True)
class ManifoldDims:
    """Ambient size n, rank p, and the manifold dimension N = np - p(p-1)/2."""

    n: int
    p: int

    def __post_init__(self):
        if not 1 <= self.p <= self.n:
            raise ValueError(f"need 1 <= p <= n, got n={self.n}, p={self.p}")

    @property
    def dim(self) -> int:
        return self.n * self.p - self.p * (self.p - 1) // 2

    def dof(self, metric) -> float:
        """Degrees of freedom of beta D^2 for the pure-norm law: N or N/2."""
        metric = _coerce_metric(metric)
        return float(self.dim) if metric is Metric.EMBEDDED else self.dim / 2.0


@dataclass(frozen=True)
class ReferenceCdf:
    """A CDF tabulated on an ascending grid; values nondecreasing in [0, 1]."""

    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if grid.ndim != 1 or grid.shape != values.shape:
            raise ValueError("grid and values must be 1-d arrays of equal length")
        if np.any(np.diff(grid) <= 0):
            raise ValueError("grid must be strictly ascending")
        if np.any(np.diff(values) < -1e-12):
            raise ValueError("CDF values must be nondecreasing")
        if values[0] < -1e-12 or values[-1] > 1.0 + 1e-9:
            raise ValueError("CDF values must lie in [0, 1]")
        grid = grid.copy()
        values = values.copy()
        grid.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    def quantile(self, q: float) -> float:
        """Smallest grid-interpolated t with CDF(t) >= q."""
        return float(np.interp(q, self.values, self.grid))


def uniform_grid(t_max: float, points: int = 100) -> np.ndarray:
    """The standard evaluation grid: equally spaced points on [0, t_max]."""
    if t_max <= 0 or points < 2:
        raise ValueError("need t_max > 0 and at least two points")
    return np.linspace(0.0, t_max, points)


def chi2_norm_cdf(dims: ManifoldDims, beta: float, metric, t):
    """CDF of D = ||X||_F under the 0.5||X||_F^2 energy: chi^2(dof) at beta t^2.

    dof is the manifold dimension N for the embedded metric and N/2 for the
    Bures-Wasserstein metric; evaluated through the regularized lower
    incomplete gamma function.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    k = dims.dof(metric)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be nonnegative")
    out = special.gammainc(k / 2.0, beta * t**2 / 2.0)
    return float(out) if out.ndim == 0 else out


def chi2_norm_reference(dims: ManifoldDims, beta: float, metric,
                        grid: np.ndarray) -> ReferenceCdf:
    return ReferenceCdf(grid, chi2_norm_cdf(dims, beta, metric, grid))


def target_distance_cdf(dims: ManifoldDims, beta: float, t):
    """Approximate CDF of D = ||X - A||_F for a dominant target spectrum.

    Valid for targets with eigenvalues much larger than 1, where the manifold
    is locally flat and the ball volume grows like r^N; the same law applies
    under both metrics.
    """
    return chi2_norm_cdf(dims, beta, Metric.EMBEDDED, t)


def target_distance_reference(dims: ManifoldDims, beta: float,
                              grid: np.ndarray) -> ReferenceCdf:
    return ReferenceCdf(grid, target_distance_cdf(dims, beta, grid))


# ---------------------------------------------------------------------------
# Quadrature CDF for the entropy energy Tr(X log X)

def spectral_density_exponent(dims: ManifoldDims, metric) -> float:
    """Power of each eigenvalue in the stationary spectral density.

    n - p for the embedded metric. For the Bures-Wasserstein metric the
    correct power is (n - p - 1)/2: it is the one consistent with the
    chi^2(N/2) norm law of the pure-norm energy and with the pushforward of
    the factor-side stationary density through Y -> Y Y^T. (The alternative
    (n - p)/2, read off the raw volume-form determinant, fails both checks;
    pass ``bw_exponent`` explicitly to experiment with it.)
    """
    metric = _coerce_metric(metric)
    if metric is Metric.EMBEDDED:
        return float(dims.n - dims.p)
    return (dims.n - dims.p - 1) / 2.0


def eigenvalue_density_cdf(dims: ManifoldDims, beta: float, metric,
                           grid: np.ndarray, *,
                           bw_exponent: float | None = None,
                           radial_points: int = 2001,
                           angular_points: int = 160,
                           check_convergence: bool = True,
                           drift_tol: float = 1e-4) -> ReferenceCdf:
    """CDF of D = ||X||_F under the energy Tr(X log X), by quadrature.

    Integrates the eigenvalue density
    ``prod_{i<j} |l_i - l_j| * prod_i l_i^(a - beta l_i)`` (embedded) or the
    same with an extra ``1/sqrt(l_i + l_j)`` repulsion factor (BW) over the
    ball ``sum l_i^2 < t^2`` in the positive orthant, normalized by the value
    at t_max. Radial direction: composite Simpson on ``radial_points`` nodes;
    angular direction: Gauss-Legendre over the sorted sector (exploiting
    permutation symmetry, which keeps the integrand smooth). Supports
    p in {2, 3}.

    When ``check_convergence`` is set the rule is re-evaluated at doubled
    resolution; a drift above ``drift_tol`` at any grid point raises
    QuadratureUnconvergedError, otherwise the finer result is returned.
    """
    metric = _coerce_metric(metric)
    if dims.p not in (2, 3):
        raise UnsupportedRankError(f"quadrature CDF supports p in {{2, 3}}, got p={dims.p}")
    if beta <= 0:
        raise ValueError("beta must be positive")
    grid = np.asarray(grid, dtype=float)
    if grid[0] < 0:
        raise ValueError("grid must start at t >= 0")
    if bw_exponent is not None and metric is not Metric.BURES_WASSERSTEIN:
        raise ValueError("bw_exponent only applies to the BW metric")
    a = spectral_density_exponent(dims, metric) if metric is Metric.EMBEDDED or bw_exponent is None else float(bw_exponent)
    bw = metric is Metric.BURES_WASSERSTEIN

    coarse = _quadrature_cdf_values(grid, beta, a, bw, dims.p,
                                    radial_points, angular_points)
    if not check_convergence:
        return ReferenceCdf(grid, np.clip(coarse, 0.0, 1.0))
    fine = _quadrature_cdf_values(grid, beta, a, bw, dims.p,
                                  2 * radial_points - 1, 2 * angular_points)
    drift = float(np.max(np.abs(fine - coarse)))
    if drift > drift_tol:
        raise QuadratureUnconvergedError(
            f"doubling the quadrature resolution moved grid values by {drift:.2e} "
            f"(tolerance {drift_tol:.1e})"
        )
    return ReferenceCdf(grid, np.clip(fine, 0.0, 1.0))


def _quadrature_cdf_values(grid, beta, a, bw, p, radial_points, angular_points):
    t_max = float(grid[-1])
    rho = np.linspace(0.0, t_max, radial_points)
    radial = _radial_profile(rho, beta, a, bw, p, angular_points)
    cum = _cumulative_simpson(radial, rho)
    if cum[-1] <= 0:
        raise ValueError("quadrature mass vanished; check parameters")
    cum = cum / cum[-1]
    return np.interp(grid, rho, cum)


def _radial_profile(rho, beta, a, bw, p, angular_points):
    """rho^{p-1} times the angular integral of the density over the sorted sector."""
    omega, weights = _sorted_sector_rule(p, angular_points)
    profile = np.empty(rho.size)
    profile[0] = 0.0
    # Vandermonde and repulsion factors in angular coordinates; the radial
    # scaling of prod |l_i - l_j| and 1/sqrt(l_i + l_j) is pulled out exactly.
    pairs = [(i, j) for i in range(p) for j in range(i + 1, p)]
    vander = np.prod([np.abs(omega[:, i] - omega[:, j]) for i, j in pairs], axis=0)
    if bw:
        vander = vander / np.prod(
            [np.sqrt(omega[:, i] + omega[:, j]) for i, j in pairs], axis=0
        )
    npairs = len(pairs)
    radial_power = p - 1 + npairs + (p * a) + (-0.5 * npairs if bw else 0.0)
    log_omega_sum = np.sum(np.log(omega), axis=1)
    omega_sum = np.sum(omega, axis=1)

    r = rho[1:]
    log_r = np.log(r)
    # density at l = r * omega: prod l^a * exp(-beta sum l log l)
    # = r^{pa} exp(a sum log w) * exp(-beta r [sum w log w + log r sum w])
    w_log_w = np.sum(omega * np.log(omega), axis=1)
    expo = (
        a * log_omega_sum[None, :]
        - beta * (r[:, None] * (w_log_w[None, :] + log_r[:, None] * omega_sum[None, :]))
    )
    integrand = vander[None, :] * np.exp(expo)
    profile[1:] = (integrand * weights[None, :]).sum(axis=1) * np.exp(radial_power * log_r)
    return profile


def _sorted_sector_rule(p, angular_points):
    """Quadrature nodes (unit vectors, positive entries) and weights on the
    sorted sector of the unit sphere, scaled by the p! symmetry factor."""
    x, w = np.polynomial.legendre.leggauss(angular_points)
    if p == 2:
        # theta in (0, pi/4): omega = (cos t, sin t), omega_1 > omega_2.
        theta = (x + 1.0) * (math.pi / 8.0)
        weights = w * (math.pi / 8.0) * 2.0
        omega = np.column_stack([np.cos(theta), np.sin(theta)])
        return omega, weights
    # p == 3: map the planar sorted simplex {x1 >= x2 >= x3 >= 0, sum = 1}
    # onto the sphere octant; the solid-angle element of the radial projection
    # of a patch on the plane sum(x) = 1 is (1/sqrt(3)) |x|^{-3} dA.
    va = np.array([1.0, 0.0, 0.0])
    vb = np.array([0.5, 0.5, 0.0])
    vc = np.array([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0])
    s = (x + 1.0) / 2.0
    ws = w / 2.0
    s_nodes, t_nodes = np.meshgrid(s, s, indexing="ij")
    w2 = np.outer(ws, ws).ravel()
    s_nodes = s_nodes.ravel()
    t_nodes = t_nodes.ravel()
    # T(s, t) = A + s (B - A) + s t (C - B); area element = s |(B-A) x (C-B)| ds dt
    e1 = vb - va
    e2 = vc - vb
    pts = va[None, :] + s_nodes[:, None] * e1[None, :] + (s_nodes * t_nodes)[:, None] * e2[None, :]
    patch = np.linalg.norm(np.cross(e1, e2))
    norms = np.linalg.norm(pts, axis=1)
    omega = pts / norms[:, None]
    weights = w2 * s_nodes * patch * (1.0 / math.sqrt(3.0)) * 3.0**1.5 / norms**3
    # Factor 3^{3/2}/sqrt(3) = 3: distance of the plane from the origin is
    # 1/sqrt(3), so dOmega = (1/sqrt(3)) dA / |x|^3; times 3! symmetry copies.
    weights = w2 * s_nodes * patch / (math.sqrt(3.0) * norms**3) * 6.0
    return omega, weights


def _cumulative_simpson(y, x):
    """Cumulative integral of samples on a uniform grid, Simpson-accurate."""
    from scipy.integrate import cumulative_simpson

    out = np.empty_like(y)
    out[0] = 0.0
    out[1:] = cumulative_simpson(y, x=x)
    return np.maximum.accumulate(out)


# ---------------------------------------------------------------------------
# Empirical CDF and KS statistic

def empirical_cdf(values, grid: np.ndarray) -> ReferenceCdf:
    """F_hat(t) = fraction of samples <= t at each grid point."""
    arr = np.asarray(getattr(values, "values", values), dtype=float)
    if arr.size == 0:
        raise EmptyTraceError("cannot build an empirical CDF from an empty trace")
    sorted_vals = np.sort(arr)
    counts = np.searchsorted(sorted_vals, np.asarray(grid, dtype=float), side="right")
    return ReferenceCdf(grid, counts / arr.size)


def ks_statistic(reference: ReferenceCdf, empirical: ReferenceCdf) -> float:
    """Maximum absolute CDF difference over the shared grid."""
    if reference.grid.shape != empirical.grid.shape or not np.array_equal(
        reference.grid, empirical.grid
    ):
        raise GridMismatchError("CDFs are tabulated on different grids")
    return float(np.max(np.abs(reference.values - empirical.values)))


# ---------------------------------------------------------------------------
# Monte Carlo integration on the manifold

_EXP_LIMIT = 700.0  # ln(max double) ~ 709.78; leave headroom


def gibbs_integral_estimate(energy_values, f_values, beta: float) -> float:
    """Estimator (1/m) sum f(X_i) exp(beta E(X_i)) of (1/Z) int f dV.

    Raises IntegralOverflowError when any weight exponent exceeds the
    representable range (a sign of a mis-scaled experiment).
    """
    e = np.asarray(getattr(energy_values, "values", energy_values), dtype=float)
    f = np.asarray(getattr(f_values, "values", f_values), dtype=float)
    if e.shape != f.shape:
        raise GridMismatchError("energy and integrand traces are not aligned")
    if e.size == 0:
        raise EmptyTraceError("cannot integrate over an empty trace")
    expo = beta * e
    if np.max(expo) > _EXP_LIMIT:
        raise IntegralOverflowError(
            f"importance exponent {np.max(expo):.3g} exceeds the representable range"
        )
    return float(np.mean(f * np.exp(expo)))


def norm_moment_integrand(d_values, k: float, m_exp: float, alpha: float) -> np.ndarray:
    """f(X) = ||X||^k exp(-(alpha/m) ||X||^m) evaluated from a norm trace."""
    d = np.asarray(getattr(d_values, "values", d_values), dtype=float)
    with np.errstate(divide="ignore"):
        log_d = np.where(d > 0, np.log(d), -np.inf)
    out = np.exp(k * log_d - (alpha / m_exp) * d**m_exp)
    if k == 0:
        out = np.exp(-(alpha / m_exp) * d**m_exp)
    return out


def gamma_ratio_integral(k: float, m_exp: float, alpha: float, beta: float,
                         dims: ManifoldDims, metric) -> float:
    """Closed form of (1/Z) int ||X||^k exp(-(alpha/m)||X||^m) dV for the
    0.5||X||^2 energy:

        [ (1/m) (alpha/m)^{-(k+Ne)/m} Gamma((k+Ne)/m) ]
        / [ (1/2) (beta/2)^{-Ne/2} Gamma(Ne/2) ]

    with Ne = N (embedded) or N/2 (Bures-Wasserstein). Defined for k > -Ne
    and m > 2, plus the Gaussian special case m = 2 with alpha > beta, where
    the ratio collapses to (beta/alpha)^{Ne/2}.
    """
    n_eff = dims.dof(metric)
    if k <= -n_eff:
        raise IntegralDomainError(f"need k > -{n_eff}, got k={k}")
    if m_exp < 2 or (m_exp == 2 and alpha <= beta):
        raise IntegralDomainError(
            "need m > 2, or m = 2 with alpha > beta for the Gaussian case"
        )
    if alpha <= 0 or beta <= 0:
        raise IntegralDomainError("alpha and beta must be positive")
    log_num = (
        -math.log(m_exp)
        - ((k + n_eff) / m_exp) * math.log(alpha / m_exp)
        + math.lgamma((k + n_eff) / m_exp)
    )
    log_den = -math.log(2.0) - (n_eff / 2.0) * math.log(beta / 2.0) + math.lgamma(n_eff / 2.0)
    return math.exp(log_num - log_den)


def error_decay_slope(points) -> float:
    """Least-squares slope of log(error) against log(m).

    ``points`` is a sequence of (m, relative_error) pairs with strictly
    increasing m; at least four points are required.
    """
    pts = [(float(m), float(e)) for m, e in points]
    if len(pts) < 4:
        raise InsufficientDataError(f"need at least 4 points, got {len(pts)}")
    ms = np.array([m for m, _ in pts])
    errs = np.array([e for _, e in pts])
    if np.any(np.diff(ms) <= 0):
        raise ValueError("m values must be strictly increasing")
    if np.any(errs <= 0):
        raise ValueError("errors must be positive to fit a log-log slope")
    slope, _ = np.polyfit(np.log(ms), np.log(errs), 1)
    return float(slope)
