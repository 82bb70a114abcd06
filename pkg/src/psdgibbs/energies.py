"""Energy functions on the rank-p PSD manifold and their Euclidean gradients.

Every energy exposes ``value(x)`` and ``euclidean_grad(x)`` where ``x`` is a
``PsdPoint`` or a dense symmetric array, and the gradient is the symmetric
matrix of entrywise partials. The factor-side (quotient) gradient used by the
Bures-Wasserstein sampler is ``2 grad(Y Y^T) Y`` for any energy.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from .errors import DimensionMismatchError, RankDeficientError
from .geometry import RANK_FLOOR, FactorPoint, PsdPoint, compact_svd


@runtime_checkable
class EnergyFn(Protocol):
    """Pluggable energy: scalar value and symmetric Euclidean gradient."""

    def value(self, x) -> float: ...

    def euclidean_grad(self, x) -> np.ndarray: ...


def _as_dense(x) -> np.ndarray:
    if isinstance(x, PsdPoint):
        return x.dense()
    if isinstance(x, FactorPoint):
        return x.dense()
    return np.asarray(x, dtype=float)


@dataclass(frozen=True)
class FrobeniusEnergy:
    """E(X) = 0.5 ||X||_F^2 with gradient X."""

    def value(self, x) -> float:
        if isinstance(x, PsdPoint):
            return 0.5 * float(np.sum(x.lam**2))
        return 0.5 * float(np.sum(_as_dense(x) ** 2))

    def euclidean_grad(self, x) -> np.ndarray:
        return _as_dense(x)


@dataclass(frozen=True)
class VonNeumannEnergy:
    """E(X) = Tr(X log X) = sum_i lam_i log lam_i over the nonzero spectrum.

    The ambient gradient log X + I is defined only on the range of X; we take
    its restriction U (diag(log lam) + I) U^T, which determines every
    projection the samplers consume.
    """

    def value(self, x) -> float:
        lam = self._spectrum(x)
        return float(np.sum(lam * np.log(lam)))

    def euclidean_grad(self, x) -> np.ndarray:
        point = self._as_point(x)
        core = np.log(point.lam) + 1.0
        g = (point.u * core) @ point.u.T
        return 0.5 * (g + g.T)

    @staticmethod
    def _as_point(x) -> PsdPoint:
        if isinstance(x, PsdPoint):
            return x
        raise TypeError(
            "VonNeumannEnergy needs the compact eigendecomposition; pass a PsdPoint"
        )

    @classmethod
    def _spectrum(cls, x) -> np.ndarray:
        lam = cls._as_point(x).lam
        if lam[-1] <= RANK_FLOOR * max(1.0, lam[0]):
            raise RankDeficientError("eigenvalue at or below rank floor in Tr(X log X)")
        return lam


@dataclass(frozen=True)
class TargetMatrix:
    """Rank-p PSD target A of the quadratic distance energy."""

    point: PsdPoint

    def dense(self) -> np.ndarray:
        return self.point.dense()

    @classmethod
    def with_spaced_eigenvalues(cls, n: int, p: int, lo: float, hi: float,
                                rng: np.random.Generator) -> "TargetMatrix":
        """Target with eigenvalues equally spaced in [lo, hi] and a random basis."""
        lam = np.linspace(hi, lo, p)
        q, _ = np.linalg.qr(rng.standard_normal((n, p)))
        return cls(PsdPoint(q, lam))


@dataclass(frozen=True)
class QuadraticTargetEnergy:
    """E(X) = 0.5 ||X - A||_F^2 with gradient X - A."""

    target: TargetMatrix

    def value(self, x) -> float:
        d = self._dense_checked(x) - self.target.dense()
        return 0.5 * float(np.sum(d**2))

    def euclidean_grad(self, x) -> np.ndarray:
        return self._dense_checked(x) - self.target.dense()

    def _dense_checked(self, x) -> np.ndarray:
        dense = _as_dense(x)
        n = self.target.point.n
        if dense.shape != (n, n):
            raise DimensionMismatchError(
                f"operand shape {dense.shape} does not match target {n}x{n}"
            )
        return dense


def factor_gradient(energy: EnergyFn, point: FactorPoint) -> np.ndarray:
    """Gradient of F(Y) = E(Y Y^T) in factor space: 2 grad E(Y Y^T) Y."""
    q, sigma, _ = compact_svd(point.y)
    x = PsdPoint(q, sigma**2)
    return 2.0 * energy.euclidean_grad(x) @ point.y


ENERGY_KEYS = ("frobenius", "von_neumann", "quadratic_target")
