"""Selection between the compiled chain kernels and the pure-numpy loops.

The Cython extension implements the per-step hot path (tiny eigendecomposition
or QR+SVD plus block assembly) for the three built-in energies and the
standard observables. Custom energies or observables, or the environment
variable ``PSDGIBBS_FORCE_PYTHON=1``, select the numpy fallback in
``chains``. Both paths consume the identical noise stream, so traces agree
up to floating-point reassociation.
"""

from __future__ import annotations

import math
import os

import numpy as np

from .energies import FrobeniusEnergy, QuadraticTargetEnergy, VonNeumannEnergy
from .errors import ChainAbortedError

try:
    from . import _speedups
except ImportError:  # pragma: no cover - build-dependent
    _speedups = None

HAVE_SPEEDUPS = _speedups is not None

_ENERGY_IDS = {FrobeniusEnergy: 0, VonNeumannEnergy: 1, QuadraticTargetEnergy: 2}
_OBS_IDS = {"frob_norm": 0, "frob_dist_to_A": 1, "energy": 2}

_CHUNK_STEPS = 100_000
_REDRAW_MARGIN = 16


def available() -> bool:
    return HAVE_SPEEDUPS and os.environ.get("PSDGIBBS_FORCE_PYTHON", "") != "1"


def active_backend() -> str:
    return "compiled" if available() else "python"


def supports(selector: str, energy, observables) -> bool:
    """Decide whether the compiled path can serve this run."""
    if selector == "python":
        return False
    ok = (
        type(energy) in _ENERGY_IDS
        and all(o.key in _OBS_IDS for o in observables)
        and all(
            o.key != "frob_dist_to_A" or isinstance(energy, QuadraticTargetEnergy)
            for o in observables
        )
    )
    if selector == "compiled":
        if not HAVE_SPEEDUPS:
            raise RuntimeError("compiled backend requested but the extension is not built")
        if not ok:
            raise RuntimeError("compiled backend cannot serve this energy/observable set")
        return True
    if selector != "auto":
        raise ValueError(f"unknown backend selector {selector!r}")
    return available() and ok


def _energy_payload(energy):
    eid = _ENERGY_IDS[type(energy)]
    if eid == 2:
        a = np.ascontiguousarray(energy.target.dense())
    else:
        a = np.zeros((0, 0))
    return eid, a


def _run_kernel(kernel, state_arrays, noise_width, energy, config, obs_keys, rng,
                progress_cb=None):
    eid, a_dense = _energy_payload(energy)
    obs_ids = np.array([_OBS_IDS[k] for k in obs_keys], dtype=np.int32)
    retained_total = config.retained
    out = np.empty((retained_total, len(obs_keys)))
    deterministic = math.isinf(config.beta)
    beta = 0.0 if deterministic else float(config.beta)
    abort_policy = 1 if config.boundary_policy.value == "abort" else 0

    k = 0
    row = 0
    hits = 0
    buf = np.empty((0, noise_width))
    while k < config.total_iters:
        steps_target = min(_CHUNK_STEPS, config.total_iters - k)
        if not deterministic:
            need = steps_target + _REDRAW_MARGIN - buf.shape[0]
            if need > 0:
                fresh = rng.standard_normal((need, noise_width))
                buf = np.vstack([buf, fresh]) if buf.size else fresh
        result = kernel(
            *state_arrays, a_dense, eid,
            float(config.dt), beta, int(deterministic),
            np.ascontiguousarray(buf),
            k, steps_target,
            int(config.total_iters), int(config.burn_in), int(config.thinning),
            out, row, obs_ids,
            abort_policy,
        )
        steps_done, rows_used, row, block_hits, status = result
        hits += block_hits
        k += steps_done
        if not deterministic:
            buf = buf[rows_used:]
        if status == 1:
            raise ChainAbortedError(
                f"chain aborted at iteration {k}: retraction kept dropping rank",
                iteration=k,
            )
        if steps_done == 0 and k < config.total_iters:
            # A single step exhausted the redraw margin; widen the buffer.
            extra = rng.standard_normal((_REDRAW_MARGIN * 4, noise_width))
            buf = np.vstack([buf, extra]) if buf.size else extra
            continue
        if progress_cb is not None:
            progress_cb(k, row, hits)
    return out[:row], hits


def run_embedded_chain(u, lam, u_perp, energy, config, obs_keys, rng, progress_cb=None):
    """Drive the compiled embedded-metric kernel; mutates the state arrays."""
    n, p = u.shape
    width = p * p + p * (n - p)
    return _run_kernel(_speedups.run_embedded, (u, lam, u_perp), width,
                       energy, config, obs_keys, rng, progress_cb)


def run_factor_chain(y, energy, config, obs_keys, rng, progress_cb=None):
    """Drive the compiled Bures-Wasserstein kernel; mutates ``y``."""
    n, p = y.shape
    return _run_kernel(_speedups.run_factor, (y,), n * p,
                       energy, config, obs_keys, rng, progress_cb)
