"""Euler-Maruyama Langevin Monte Carlo chains on the rank-p PSD manifold.

Two schemes are provided. The embedded-metric chain updates the compact
eigendecomposition of X by assembling the drift, the structured tangent noise
and the mean-curvature correction in the [U U_perp] basis and retracting by
eigenvalue projection. The Bures-Wasserstein chain updates the factor Y with
isotropic noise, the factor gradient 2 grad E(YY^T) Y and the orbit-entropy
drift -(dt/beta) grad S(Y).

With beta = inf both chains reduce to their deterministic Riemannian gradient
descent counterparts (projected descent and Burer-Monteiro descent).

Noise accounting, per step (one extra batch per rejected boundary attempt,
zero when beta = inf):

* embedded: p*p standard normals (row-major, symmetrized in place), then
  p*(n-p) standard normals for the off-diagonal block;
* Bures-Wasserstein: n*p standard normals (row-major).
"""

from __future__ import annotations

import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from . import backend as _backend
from .energies import (
    EnergyFn,
    FrobeniusEnergy,
    QuadraticTargetEnergy,
    VonNeumannEnergy,
    factor_gradient,
)
from .errors import (
    BoundaryHitError,
    ChainAbortedError,
    EnsembleError,
    RankDeficientError,
)
from .geometry import (
    RANK_FLOOR,
    FactorPoint,
    PsdPoint,
    ortho_complement,
    random_factor_point,
    random_psd_point,
    retract_projection,
    riemannian_gradient_embedded,
)

logger = logging.getLogger(__name__)

MAX_NOISE_REDRAWS = 10
PROGRESS_EVERY = 100_000


class Metric(str, Enum):
    EMBEDDED = "E"
    BURES_WASSERSTEIN = "BW"


class BoundaryPolicy(str, Enum):
    REJECT = "reject"
    ABORT = "abort"


@dataclass(frozen=True)
class ChainConfig:
    """Step size, inverse temperature and bookkeeping for one chain.

    ``beta = math.inf`` selects deterministic gradient descent. ``burn_in``
    defaults to ``total_iters // 6`` when not given.
    """

    dt: float
    beta: float
    total_iters: int
    burn_in: int | None = None
    thinning: int = 1
    seed: int = 0
    boundary_policy: BoundaryPolicy = BoundaryPolicy.REJECT

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not (self.beta > 0 or math.isinf(self.beta)):
            raise ValueError("beta must be positive or inf")
        if self.total_iters < 1:
            raise ValueError("total_iters must be at least 1")
        if self.burn_in is None:
            object.__setattr__(self, "burn_in", self.total_iters // 6)
        if not 0 <= self.burn_in < self.total_iters:
            raise ValueError("need 0 <= burn_in < total_iters")
        if self.thinning < 1:
            raise ValueError("thinning must be >= 1")
        object.__setattr__(self, "boundary_policy", BoundaryPolicy(self.boundary_policy))

    @property
    def retained(self) -> int:
        span = self.total_iters - self.burn_in
        return (span + self.thinning - 1) // self.thinning

    @property
    def deterministic(self) -> bool:
        return math.isinf(self.beta)


@dataclass(frozen=True)
class TangentNoise:
    """Structured tangent-space noise of the embedded chain.

    ``b11`` is symmetric with N(0,1) diagonal and N(0, 1/2) off-diagonal
    entries; ``b12`` has i.i.d. N(0, 1/2) entries.
    """

    b11: np.ndarray
    b12: np.ndarray


def sample_tangent_noise(rng: np.random.Generator, n: int, p: int) -> TangentNoise:
    """Draw the structured noise block; consumes p*p + p*(n-p) variates."""
    if not 1 <= p <= n:
        raise ValueError(f"need 1 <= p <= n, got n={n}, p={p}")
    g = rng.standard_normal((p, p))
    b11 = 0.5 * (g + g.T)
    b12 = np.sqrt(0.5) * rng.standard_normal((p, n - p))
    return TangentNoise(b11, b12)


@dataclass
class EmbeddedState:
    """Mutable chain state for the embedded scheme: full basis plus spectrum."""

    u: np.ndarray
    lam: np.ndarray
    u_perp: np.ndarray
    iteration: int = 0
    boundary_hits: int = 0

    @classmethod
    def from_point(cls, point: PsdPoint) -> "EmbeddedState":
        return cls(point.u.copy(), point.lam.copy(), ortho_complement(point.u).u_perp.copy())

    def to_point(self) -> PsdPoint:
        return PsdPoint(self.u, self.lam)

    def dense(self) -> np.ndarray:
        x = (self.u * self.lam) @ self.u.T
        return 0.5 * (x + x.T)


@dataclass
class FactorState:
    """Mutable chain state for the Bures-Wasserstein scheme."""

    y: np.ndarray
    iteration: int = 0
    boundary_hits: int = 0

    @classmethod
    def from_point(cls, point: FactorPoint) -> "FactorState":
        return cls(point.y.copy())

    def to_point(self) -> FactorPoint:
        return FactorPoint(self.y)

    def dense(self) -> np.ndarray:
        return self.y @ self.y.T


ChainState = EmbeddedState | FactorState


def _projected_gradient_blocks(energy: EnergyFn, u, lam, u_perp):
    """G11 = U^T grad U and G12 = U^T grad U_perp without forming grad twice."""
    egrad = energy.euclidean_grad(PsdPoint(u, lam))
    t = egrad @ u
    return u.T @ t, t.T @ u_perp


def step_embedded(state: EmbeddedState, energy: EnergyFn, config: ChainConfig,
                  rng: np.random.Generator, *, noise: TangentNoise | None = None) -> EmbeddedState:
    """One embedded-metric step: block assembly in [U U_perp], then projection.

    Raises BoundaryHitError when the retraction keeps dropping rank after the
    redraw budget (REJECT policy) or immediately (ABORT policy).
    """
    n, p = state.u.shape
    u, lam, u_perp = state.u, state.lam, state.u_perp
    dt, beta = config.dt, config.beta
    g11, g12 = _projected_gradient_blocks(energy, u, lam, u_perp)
    q = np.concatenate([u, u_perp], axis=1)
    if config.deterministic:
        curvature = 0.0
        noise_scale = 0.0
    else:
        curvature = (dt / beta) * float(np.sum(1.0 / lam))
        noise_scale = math.sqrt(2.0 * dt / beta)

    attempts = 0
    while True:
        if config.deterministic:
            b11 = np.zeros((p, p))
            b12 = np.zeros((p, n - p))
        elif noise is not None and attempts == 0:
            b11, b12 = noise.b11, noise.b12
        else:
            drawn = sample_tangent_noise(rng, n, p)
            b11, b12 = drawn.b11, drawn.b12

        mid = np.zeros((n, n))
        mid[:p, :p] = -dt * g11 + noise_scale * b11
        mid[:p, :p][np.diag_indices(p)] += lam
        mid[:p, p:] = -dt * g12 + noise_scale * b12
        mid[p:, :p] = mid[:p, p:].T
        mid[p:, p:][np.diag_indices(n - p)] = curvature
        c = q @ mid @ q.T
        c = 0.5 * (c + c.T)

        w, v = np.linalg.eigh(c)
        order = np.argsort(w, kind="stable")[::-1]
        w = w[order]
        if w[p - 1] > RANK_FLOOR * max(1.0, w[0]):
            v = v[:, order]
            return EmbeddedState(
                u=np.ascontiguousarray(v[:, :p]),
                lam=w[:p].copy(),
                u_perp=np.ascontiguousarray(v[:, p:]),
                iteration=state.iteration + 1,
                boundary_hits=state.boundary_hits + attempts,
            )

        attempts += 1
        if config.boundary_policy is BoundaryPolicy.ABORT or config.deterministic:
            raise BoundaryHitError(
                f"retraction dropped rank at iteration {state.iteration}", attempts
            )
        if attempts > MAX_NOISE_REDRAWS:
            raise BoundaryHitError(
                f"rank still deficient after {MAX_NOISE_REDRAWS} redraws "
                f"at iteration {state.iteration}",
                attempts,
            )


def step_bures_wasserstein(state: FactorState, energy: EnergyFn, config: ChainConfig,
                           rng: np.random.Generator, *,
                           noise: np.ndarray | None = None) -> FactorState:
    """One Bures-Wasserstein step on the factor Y.

    Y' = Y - dt * 2 grad E(YY^T) Y + sqrt(2 dt / beta) B - (dt/beta) grad S(Y),
    with B i.i.d. standard normal. The entropy drift enters with a minus sign:
    the stationary factor density must carry e^{-S} so that pushing forward
    through Y -> YY^T reproduces the quotient-metric volume form.
    """
    n, p = state.y.shape
    y = state.y
    dt, beta = config.dt, config.beta

    q_y, sigma, pt_y = _thin_svd(y)
    lam = sigma**2
    grad_f = _factor_gradient_fast(energy, y, q_y, sigma, pt_y)
    drift = y - dt * grad_f
    if not config.deterministic:
        d = _entropy_coeffs(sigma)
        drift -= (dt / beta) * ((q_y * d) @ pt_y)
        noise_scale = math.sqrt(2.0 * dt / beta)

    attempts = 0
    while True:
        if config.deterministic:
            candidate = drift
        else:
            if noise is not None and attempts == 0:
                b = noise
            else:
                b = rng.standard_normal((n, p))
            candidate = drift + noise_scale * b

        sig_new = np.linalg.svd(candidate, compute_uv=False)
        if sig_new[-1] > RANK_FLOOR * sig_new[0]:
            return FactorState(
                y=candidate,
                iteration=state.iteration + 1,
                boundary_hits=state.boundary_hits + attempts,
            )

        attempts += 1
        if config.boundary_policy is BoundaryPolicy.ABORT or config.deterministic:
            raise BoundaryHitError(
                f"factor dropped rank at iteration {state.iteration}", attempts
            )
        if attempts > MAX_NOISE_REDRAWS:
            raise BoundaryHitError(
                f"rank still deficient after {MAX_NOISE_REDRAWS} redraws "
                f"at iteration {state.iteration}",
                attempts,
            )


def _thin_svd(y: np.ndarray):
    q0, r = np.linalg.qr(y, mode="reduced")
    u_small, sigma, vt = np.linalg.svd(r)
    if sigma[-1] <= RANK_FLOOR * sigma[0]:
        raise RankDeficientError("factor rank-deficient before stepping")
    return q0 @ u_small, sigma, vt


def _entropy_coeffs(sigma: np.ndarray) -> np.ndarray:
    s2 = sigma**2
    ratio = sigma[:, None] / (s2[:, None] + s2[None, :])
    np.fill_diagonal(ratio, 0.0)
    return ratio.sum(axis=1)


def _factor_gradient_fast(energy: EnergyFn, y, q_y, sigma, pt_y) -> np.ndarray:
    """2 grad E(YY^T) Y, reusing the step's SVD for the spectral energies."""
    if isinstance(energy, FrobeniusEnergy):
        return 2.0 * y @ (y.T @ y)
    if isinstance(energy, VonNeumannEnergy):
        lam = sigma**2
        core = (np.log(lam) + 1.0) * sigma
        return 2.0 * (q_y * core) @ pt_y
    if isinstance(energy, QuadraticTargetEnergy):
        return 2.0 * (y @ (y.T @ y) - energy.target.dense() @ y)
    return factor_gradient(energy, FactorPoint(y))


class SampleView:
    """What an observable sees of the current state: spectrum plus lazy dense X."""

    __slots__ = ("eigenvalues", "_dense", "_dense_fn")

    def __init__(self, eigenvalues: np.ndarray, dense_fn: Callable[[], np.ndarray]):
        self.eigenvalues = eigenvalues
        self._dense = None
        self._dense_fn = dense_fn

    @property
    def dense(self) -> np.ndarray:
        if self._dense is None:
            self._dense = self._dense_fn()
        return self._dense


@dataclass(frozen=True)
class Observable:
    """Named scalar observable evaluated on each retained sample."""

    key: str
    fn: Callable[[SampleView], float]


OBSERVABLE_KEYS = ("frob_norm", "frob_dist_to_A", "energy")


def make_observable(key: str, *, energy: EnergyFn | None = None,
                    target: np.ndarray | None = None) -> Observable:
    """Build a standard observable by key.

    ``frob_dist_to_A`` needs ``target`` (dense); ``energy`` needs the energy.
    """
    if key == "frob_norm":
        return Observable(key, lambda v: float(np.sqrt(np.sum(v.eigenvalues**2))))
    if key == "frob_dist_to_A":
        if target is None:
            raise ValueError("frob_dist_to_A requires a target matrix")
        a = np.asarray(target, dtype=float)
        return Observable(key, lambda v: float(np.linalg.norm(v.dense - a)))
    if key == "energy":
        if energy is None:
            raise ValueError("the energy observable requires the energy")
        if isinstance(energy, FrobeniusEnergy):
            return Observable(key, lambda v: 0.5 * float(np.sum(v.eigenvalues**2)))
        if isinstance(energy, VonNeumannEnergy):
            return Observable(
                key, lambda v: float(np.sum(v.eigenvalues * np.log(v.eigenvalues)))
            )
        return Observable(key, lambda v: float(energy.value(v.dense)))
    raise ValueError(f"unknown observable key {key!r}; known: {OBSERVABLE_KEYS}")


@dataclass(frozen=True)
class ScalarTrace:
    """Retained values of one scalar observable, with chain metadata."""

    values: np.ndarray
    observable: str
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True)
class ChainResult:
    """Traces plus chain metadata returned by run_chain."""

    traces: tuple[ScalarTrace, ...]
    boundary_hits: int
    wall_clock_s: float
    final_state: PsdPoint | FactorPoint
    iterations: int

    def trace(self, key: str) -> ScalarTrace:
        for t in self.traces:
            if t.observable == key:
                return t
        raise KeyError(f"no trace for observable {key!r}")


def _default_initial(metric: Metric, n: int, p: int, rng: np.random.Generator):
    if metric is Metric.EMBEDDED:
        return random_psd_point(n, p, rng)
    return random_factor_point(n, p, rng)


def _coerce_state(initial) -> tuple[Metric, ChainState]:
    if isinstance(initial, PsdPoint):
        return Metric.EMBEDDED, EmbeddedState.from_point(initial)
    if isinstance(initial, FactorPoint):
        return Metric.BURES_WASSERSTEIN, FactorState.from_point(initial)
    if isinstance(initial, EmbeddedState):
        return Metric.EMBEDDED, initial
    if isinstance(initial, FactorState):
        return Metric.BURES_WASSERSTEIN, initial
    raise TypeError(f"cannot start a chain from {type(initial).__name__}")


def run_chain(initial, energy: EnergyFn, config: ChainConfig,
              observables: Sequence[Observable], *,
              scheme: Metric | None = None,
              dims: tuple[int, int] | None = None,
              backend: str = "auto") -> ChainResult:
    """Run one chain and record every observable on the retained iterates.

    ``initial`` may be a PsdPoint / FactorPoint (or chain state), or None to
    draw the default seeded initial point, in which case ``scheme`` and
    ``dims`` must be given. Retention starts after ``config.burn_in`` and
    keeps every ``config.thinning``-th iterate. The chain is deterministic in
    (seed, config, initial).
    """
    rng = np.random.default_rng(config.seed)
    if initial is None:
        if scheme is None or dims is None:
            raise ValueError("initial=None requires scheme and dims")
        scheme = Metric(scheme)
        initial = _default_initial(scheme, dims[0], dims[1], rng)
    inferred, state = _coerce_state(initial)
    if scheme is not None and Metric(scheme) is not inferred:
        raise ValueError(f"initial point implies scheme {inferred}, got {scheme}")
    scheme = inferred

    observables = list(observables)
    if not observables:
        raise ValueError("at least one observable is required")

    start = time.perf_counter()
    use_compiled = _backend.supports(backend, energy, observables)
    if use_compiled:
        keys = [o.key for o in observables]

        def _progress(k, row, hits):
            logger.info("iteration %d/%d: retained %d, boundary hits %d",
                        k, config.total_iters, row, hits)

        cb = _progress if config.total_iters > PROGRESS_EVERY else None
        if scheme is Metric.EMBEDDED:
            values, hits = _backend.run_embedded_chain(
                state.u, state.lam, state.u_perp, energy, config, keys, rng, cb)
        else:
            values, hits = _backend.run_factor_chain(
                state.y, energy, config, keys, rng, cb)
    else:
        values, hits = _run_python(scheme, state, energy, config, observables, rng)
    elapsed = time.perf_counter() - start

    final = state.to_point()
    meta = {
        "scheme": scheme.value,
        "n": final.n,
        "p": final.p,
        "dt": config.dt,
        "beta": config.beta,
        "total_iters": config.total_iters,
        "burn_in": config.burn_in,
        "thinning": config.thinning,
        "seed": config.seed,
        "boundary_hits": hits,
        "backend": "compiled" if use_compiled else "python",
    }
    traces = tuple(
        ScalarTrace(values[:, j].copy(), obs.key, dict(meta))
        for j, obs in enumerate(observables)
    )
    return ChainResult(traces, hits, elapsed, final, config.total_iters)


def _run_python(scheme: Metric, state: ChainState, energy: EnergyFn,
                config: ChainConfig, observables: Sequence[Observable],
                rng: np.random.Generator):
    retained = config.retained
    values = np.empty((retained, len(observables)))
    row = 0
    step = step_embedded if scheme is Metric.EMBEDDED else step_bures_wasserstein
    for k in range(config.total_iters):
        try:
            state = step(state, energy, config, rng)
        except BoundaryHitError as exc:
            raise ChainAbortedError(
                f"chain aborted at iteration {k}: {exc}", iteration=k, cause=exc
            ) from exc
        if k >= config.burn_in and (k - config.burn_in) % config.thinning == 0:
            view = _view_of(state)
            for j, obs in enumerate(observables):
                values[row, j] = obs.fn(view)
            row += 1
        if (k + 1) % PROGRESS_EVERY == 0:
            logger.info(
                "iteration %d/%d: retained %d, boundary hits %d",
                k + 1, config.total_iters, row, state.boundary_hits,
            )
    return values[:row], state.boundary_hits


def _view_of(state: ChainState) -> SampleView:
    if isinstance(state, EmbeddedState):
        return SampleView(state.lam, state.dense)
    sigma = np.linalg.svd(state.y, compute_uv=False)
    return SampleView(sigma**2, state.dense)


def run_ensemble(configs: Sequence[ChainConfig], energy: EnergyFn,
                 observables: Sequence[Observable], *,
                 scheme: Metric, dims: tuple[int, int] | None = None,
                 initial=None, max_workers: int | None = None,
                 parallel: bool = True) -> list[ChainResult]:
    """Run independent chains (one per config), preserving input order.

    Configs must carry distinct seeds. Chains run in separate processes when
    ``parallel``; per-chain failures are collected and raised together after
    every sibling has finished.
    """
    seeds = [c.seed for c in configs]
    if len(set(seeds)) != len(seeds):
        raise ValueError("ensemble configs must have distinct seeds")
    jobs = [
        (initial, energy, config, list(observables), Metric(scheme), dims)
        for config in configs
    ]
    results: list[ChainResult | None] = [None] * len(jobs)
    errors: dict[int, Exception] = {}
    if parallel and len(jobs) > 1:
        workers = max_workers or min(len(jobs), os.cpu_count() or 1)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_ensemble_worker, job) for job in jobs]
            for i, fut in enumerate(futures):
                try:
                    results[i] = fut.result()
                except Exception as exc:  # noqa: BLE001 - aggregated below
                    errors[i] = exc
    else:
        for i, job in enumerate(jobs):
            try:
                results[i] = _ensemble_worker(job)
            except Exception as exc:  # noqa: BLE001
                errors[i] = exc
    if errors:
        raise EnsembleError(errors)
    return results  # type: ignore[return-value]


def _ensemble_worker(job) -> ChainResult:
    initial, energy, config, observables, scheme, dims = job
    return run_chain(initial, energy, config, observables, scheme=scheme, dims=dims)


def projected_gradient_descent(point: PsdPoint, energy: EnergyFn, dt: float,
                               iters: int) -> PsdPoint:
    """Plain projected Riemannian gradient descent (the beta = inf embedded chain)."""
    for _ in range(iters):
        grad = riemannian_gradient_embedded(point, energy.euclidean_grad(point))
        point = retract_projection(point, -dt * grad.materialize())
    return point


def burer_monteiro_descent(point: FactorPoint, energy: EnergyFn, dt: float,
                           iters: int) -> FactorPoint:
    """Plain factor-space gradient descent (the beta = inf Bures-Wasserstein chain)."""
    y = point.y
    for _ in range(iters):
        y = y - dt * factor_gradient(energy, FactorPoint(y))
    return FactorPoint(y)
