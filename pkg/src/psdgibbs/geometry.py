"""Geometry of the manifold of rank-p positive semi-definite n x n matrices.

Points are stored through their compact spectral data: a PSD matrix of rank p
is ``X = U diag(lam) U^T`` with column-orthonormal ``U`` (n x p) and positive
eigenvalues ``lam``; a quotient-side point is a full-rank factor ``Y`` (n x p)
with ``X = Y Y^T``. The operations here supply the tangent-space projection,
the projection retraction, the mean-curvature term of the embedded metric and
the orbit-entropy gradient of the quotient metric.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    ConvergenceFailureError,
    DimensionMismatchError,
    NonSymmetricInputError,
    NotOrthonormalError,
    RankDeficientError,
)

# Structural tolerances for double precision.
ORTHO_TOL = 1e-10
SYM_TOL = 1e-10
# A point counts as rank deficient when its smallest spectral value falls at or
# below this floor (relative; see rank checks below).
RANK_FLOOR = 1e-12


def _as_float_array(a, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def _require_symmetric(m: np.ndarray, what: str) -> np.ndarray:
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatchError(f"{what} must be square, got shape {m.shape}")
    dev = np.linalg.norm(m - m.T)
    tol = SYM_TOL * max(1.0, np.linalg.norm(m))
    if dev > tol:
        raise NonSymmetricInputError(f"{what} deviates from symmetry by {dev:.3e} (tol {tol:.3e})")
    return 0.5 * (m + m.T)


def _fix_column_signs(v: np.ndarray) -> np.ndarray:
    """Flip columns so the first non-negligible entry of each is positive."""
    if v.size == 0:
        return v
    mags = np.abs(v)
    thresh = 1e-12 * mags.max(axis=0, keepdims=True)
    significant = mags > thresh
    first = np.argmax(significant, axis=0)
    lead = v[first, np.arange(v.shape[1])]
    return v * np.where(lead < 0, -1.0, 1.0)


@dataclass(frozen=True)
class PsdPoint:
    """Rank-p PSD matrix stored as its compact eigendecomposition (U, lam)."""

    u: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        u = _as_float_array(self.u, "u")
        lam = _as_float_array(self.lam, "lam")
        if u.ndim != 2 or lam.ndim != 1 or u.shape[1] != lam.shape[0]:
            raise DimensionMismatchError(
                f"u must be n x p and lam length p, got {u.shape} and {lam.shape}"
            )
        n, p = u.shape
        if not 1 <= p <= n:
            raise DimensionMismatchError(f"need 1 <= p <= n, got n={n}, p={p}")
        gram_dev = np.linalg.norm(u.T @ u - np.eye(p))
        if gram_dev > ORTHO_TOL:
            raise NotOrthonormalError(f"u^T u deviates from identity by {gram_dev:.3e}")
        if np.any(np.diff(lam) > 0):
            raise ValueError("eigenvalues must be sorted descending")
        if lam[-1] <= RANK_FLOOR * max(1.0, lam[0]):
            raise RankDeficientError(
                f"smallest eigenvalue {lam[-1]:.3e} at or below rank floor"
            )
        u = u.copy()
        lam = lam.copy()
        u.setflags(write=False)
        lam.setflags(write=False)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "lam", lam)

    @property
    def n(self) -> int:
        return self.u.shape[0]

    @property
    def p(self) -> int:
        return self.u.shape[1]

    def dense(self) -> np.ndarray:
        """Materialize the represented matrix U diag(lam) U^T."""
        x = (self.u * self.lam) @ self.u.T
        return 0.5 * (x + x.T)

    @classmethod
    def from_dense(cls, m, p: int) -> "PsdPoint":
        """Build a point from a symmetric matrix by keeping its top-p eigenpairs."""
        u, lam, _ = symmetric_eig_descending(np.asarray(m, dtype=float), p)
        return cls(u, lam)


@dataclass(frozen=True)
class FactorPoint:
    """Full-column-rank n x p factor Y representing the class [Y] with X = Y Y^T."""

    y: np.ndarray

    def __post_init__(self):
        y = _as_float_array(self.y, "y")
        if y.ndim != 2 or y.shape[0] < y.shape[1] or y.shape[1] < 1:
            raise DimensionMismatchError(f"y must be n x p with n >= p >= 1, got {y.shape}")
        sigma = np.linalg.svd(y, compute_uv=False)
        if sigma[-1] <= RANK_FLOOR * sigma[0]:
            raise RankDeficientError(
                f"smallest singular value {sigma[-1]:.3e} at or below rank floor"
            )
        y = y.copy()
        y.setflags(write=False)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.y.shape[1]

    def dense(self) -> np.ndarray:
        return self.y @ self.y.T

    def singular_values(self) -> np.ndarray:
        return np.linalg.svd(self.y, compute_uv=False)


@dataclass(frozen=True)
class OrthoComplement:
    """Column-orthonormal basis U_perp of the orthogonal complement of range(U)."""

    u_perp: np.ndarray

    def __post_init__(self):
        up = _as_float_array(self.u_perp, "u_perp")
        if up.ndim != 2:
            raise DimensionMismatchError("u_perp must be 2-d")
        if up.shape[1] > 0:
            dev = np.linalg.norm(up.T @ up - np.eye(up.shape[1]))
            if dev > ORTHO_TOL:
                raise NotOrthonormalError(f"u_perp columns deviate from orthonormality by {dev:.3e}")
        up = up.copy()
        up.setflags(write=False)
        object.__setattr__(self, "u_perp", up)


@dataclass(frozen=True)
class TangentEmbedded:
    """Tangent vector at a PsdPoint, stored compactly.

    In the [U U_perp] basis a tangent vector has the block form
    ``[[H, K^T], [K, 0]]`` with symmetric H. We store H together with the
    ambient factor ``U_p = U_perp K`` (n x p, orthogonal to U), so the
    materialized vector is ``U H U^T + U_p U^T + U U_p^T`` without ever
    forming U_perp.
    """

    base: PsdPoint
    h: np.ndarray
    u_p: np.ndarray

    def __post_init__(self):
        h = _as_float_array(self.h, "h")
        u_p = _as_float_array(self.u_p, "u_p")
        p, n = self.base.p, self.base.n
        if h.shape != (p, p) or u_p.shape != (n, p):
            raise DimensionMismatchError(
                f"expected h {p}x{p} and u_p {n}x{p}, got {h.shape} and {u_p.shape}"
            )
        h = 0.5 * (h + h.T)
        ortho_dev = np.linalg.norm(self.base.u.T @ u_p)
        if ortho_dev > ORTHO_TOL * max(1.0, np.linalg.norm(u_p)):
            raise NotOrthonormalError(f"u_p is not orthogonal to u (deviation {ortho_dev:.3e})")
        h = h.copy()
        u_p = u_p.copy()
        h.setflags(write=False)
        u_p.setflags(write=False)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "u_p", u_p)

    def k_matrix(self, complement: OrthoComplement) -> np.ndarray:
        """Coordinates K = U_perp^T U_p of the normal-interaction block."""
        return complement.u_perp.T @ self.u_p

    def materialize(self) -> np.ndarray:
        u = self.base.u
        m = u @ self.h @ u.T + self.u_p @ u.T + u @ self.u_p.T
        return 0.5 * (m + m.T)


def symmetric_eig_descending(m, p: int):
    """Eigendecompose a symmetric matrix; return descending eigenpairs.

    Returns ``(u, lam, u_full)`` where ``u_full`` holds all n eigenvectors in
    descending eigenvalue order, ``u`` its leading p columns, and ``lam`` the
    leading p eigenvalues. Column signs follow the first-nonzero-positive
    convention so the output is deterministic for simple spectra.
    """
    m = _as_float_array(m, "m")
    m = _require_symmetric(m, "input matrix")
    n = m.shape[0]
    if not 1 <= p <= n:
        raise DimensionMismatchError(f"need 1 <= p <= n, got n={n}, p={p}")
    try:
        w, v = np.linalg.eigh(m)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailureError(f"eigendecomposition failed: {exc}") from exc
    order = np.argsort(w, kind="stable")[::-1]
    w = w[order]
    v = _fix_column_signs(v[:, order])
    return v[:, :p].copy(), w[:p].copy(), v


def ortho_complement(u) -> OrthoComplement:
    """Complete column-orthonormal ``u`` to an orthogonal basis; return the new columns.

    Any completion is valid: downstream quantities depend on U_perp only
    through U_perp U_perp^T = I - U U^T.
    """
    u = _as_float_array(u, "u")
    if u.ndim != 2 or u.shape[0] < u.shape[1]:
        raise DimensionMismatchError(f"u must be n x p with n >= p, got {u.shape}")
    n, p = u.shape
    dev = np.linalg.norm(u.T @ u - np.eye(p))
    if dev > ORTHO_TOL:
        raise NotOrthonormalError(f"u^T u deviates from identity by {dev:.3e}")
    q, _ = np.linalg.qr(u, mode="complete")
    u_perp = q[:, p:]
    # QR may flip the leading block's signs; the trailing columns still span
    # the complement, which is all that matters. Guard against lost
    # orthogonality for nearly-dependent inputs.
    residual = np.linalg.norm(u.T @ u_perp)
    if residual > ORTHO_TOL:
        raise NotOrthonormalError(f"completion failed, residual {residual:.3e}")
    return OrthoComplement(u_perp)


def riemannian_gradient_embedded(point: PsdPoint, egrad) -> TangentEmbedded:
    """Project a symmetric ambient gradient onto the tangent space at ``point``.

    Compact form: with T = egrad U, H = U^T T and U_p = T - U H, the tangent
    vector is U H U^T + U_p U^T + U U_p^T.
    """
    egrad = _as_float_array(egrad, "egrad")
    if egrad.shape != (point.n, point.n):
        raise DimensionMismatchError(
            f"egrad must be {point.n}x{point.n}, got {egrad.shape}"
        )
    egrad = _require_symmetric(egrad, "egrad")
    t = egrad @ point.u
    h = point.u.T @ t
    h = 0.5 * (h + h.T)
    u_p = t - point.u @ h
    # Remove any residual component along U so the stored factor is exactly normal.
    u_p = u_p - point.u @ (point.u.T @ u_p)
    return TangentEmbedded(point, h, u_p)


def retract_projection(point: PsdPoint, z) -> PsdPoint:
    """Euclidean projection of X + Z back onto the rank-p PSD manifold.

    Eigendecomposes X + Z and keeps the p algebraically largest eigenpairs.
    Raises RankDeficientError when the p-th eigenvalue falls at or below the
    rank floor, signalling a step onto the manifold boundary.
    """
    z = _as_float_array(z, "z")
    if z.shape != (point.n, point.n):
        raise DimensionMismatchError(f"z must be {point.n}x{point.n}, got {z.shape}")
    c = point.dense() + z
    u, lam, _ = symmetric_eig_descending(c, point.p)
    if lam[-1] <= RANK_FLOOR * max(1.0, lam[0]):
        raise RankDeficientError(
            f"projection dropped rank: lambda_p = {lam[-1]:.3e}"
        )
    return PsdPoint(u, lam)


def mean_curvature_embedded(point: PsdPoint, complement: OrthoComplement) -> np.ndarray:
    """Mean-curvature vector of the embedding: (sum_i 1/lam_i) U_perp U_perp^T."""
    up = complement.u_perp
    if up.shape[0] != point.n or up.shape[1] != point.n - point.p:
        raise DimensionMismatchError(
            f"complement must be {point.n}x{point.n - point.p}, got {up.shape}"
        )
    if up.shape[1] == 0:
        return np.zeros((point.n, point.n))
    return float(np.sum(1.0 / point.lam)) * (up @ up.T)


def compact_svd(y, rank_floor: float = RANK_FLOOR):
    """Compact SVD of a full-rank n x p factor via QR followed by a p x p SVD.

    Returns ``(q, sigma, p_mat)`` with ``y = q diag(sigma) p_mat^T``, sigma
    descending and positive. Column signs of q follow the
    first-nonzero-positive convention (p_mat flipped jointly).
    """
    y = _as_float_array(y, "y")
    if y.ndim != 2 or y.shape[0] < y.shape[1]:
        raise DimensionMismatchError(f"y must be n x p with n >= p, got {y.shape}")
    q0, r = np.linalg.qr(y, mode="reduced")
    try:
        u_small, sigma, vt = np.linalg.svd(r)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailureError(f"small SVD failed: {exc}") from exc
    if sigma[0] == 0.0 or sigma[-1] <= rank_floor * sigma[0]:
        raise RankDeficientError(f"smallest singular value {sigma[-1]:.3e} at or below rank floor")
    q = q0 @ u_small
    p_mat = vt.T
    mags = np.abs(q)
    thresh = 1e-12 * mags.max(axis=0, keepdims=True)
    first = np.argmax(mags > thresh, axis=0)
    lead = q[first, np.arange(q.shape[1])]
    signs = np.where(lead < 0, -1.0, 1.0)
    return q * signs, sigma, p_mat * signs


def entropy_S(point: FactorPoint) -> float:
    """Log-volume of the orthogonal-group orbit of Y: 0.5 sum_{i<j} log(s_i^2 + s_j^2)."""
    _, sigma, _ = compact_svd(point.y)
    if sigma.size < 2:
        return 0.0
    s2 = sigma**2
    i, j = np.triu_indices(sigma.size, k=1)
    return 0.5 * float(np.sum(np.log(s2[i] + s2[j])))


def grad_entropy(point: FactorPoint) -> np.ndarray:
    """Gradient of the orbit entropy: Q diag(d) P^T with d_i = sum_{j != i} s_i/(s_i^2+s_j^2).

    Well-defined also for repeated singular values; vanishes identically for p = 1.
    """
    q, sigma, p_mat = compact_svd(point.y)
    d = _entropy_diag(sigma)
    return (q * d) @ p_mat.T


def _entropy_diag(sigma: np.ndarray) -> np.ndarray:
    s2 = sigma**2
    denom = s2[:, None] + s2[None, :]
    ratio = sigma[:, None] / denom
    np.fill_diagonal(ratio, 0.0)
    return ratio.sum(axis=1)


def random_psd_point(n: int, p: int, rng: np.random.Generator,
                     eig_range: tuple[float, float] = (0.5, 1.5)) -> PsdPoint:
    """Seeded random point: eigenvalues uniform in ``eig_range``, random orthonormal basis."""
    lam = np.sort(rng.uniform(*eig_range, size=p))[::-1]
    q, _ = np.linalg.qr(rng.standard_normal((n, p)))
    return PsdPoint(q, lam)


def psd_point_with_spectrum(n: int, eigenvalues, rng: np.random.Generator) -> PsdPoint:
    """Random-basis point with the given eigenvalues (sorted descending internally)."""
    lam = np.sort(np.asarray(eigenvalues, dtype=float))[::-1]
    q, _ = np.linalg.qr(rng.standard_normal((n, lam.size)))
    return PsdPoint(q, lam)


def random_factor_point(n: int, p: int, rng: np.random.Generator,
                        eig_range: tuple[float, float] = (0.5, 1.5)) -> FactorPoint:
    """Seeded random factor whose squared singular values are uniform in ``eig_range``."""
    point = random_psd_point(n, p, rng, eig_range)
    return FactorPoint(point.u * np.sqrt(point.lam))


def factor_from_psd(point: PsdPoint) -> FactorPoint:
    """Canonical factor Y = U diag(sqrt(lam)) of a PSD point."""
    return FactorPoint(point.u * np.sqrt(point.lam))
