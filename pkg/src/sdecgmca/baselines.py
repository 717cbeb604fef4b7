"""Comparison methods without deconvolution, run on data brought to the
worst common resolution: sparse GMCA and HALS non-negative factorization."""

import warnings
from dataclasses import dataclass, replace

import numpy as np

from . import model, solver
from .errors import InvalidArgumentError


@dataclass
class BaselineResult:
    A: np.ndarray
    S: np.ndarray
    iterations: int
    converged: bool
    objective: list = None


def gmca_config(config):
    """Solver settings for plain sparse GMCA: no Tikhonov term."""
    return replace(config, c_wu=0.0, c_ref=0.0, warmup_strategy=1, refine_strategy=1)


def run_gmca(degraded, config):
    """GMCA on a common-resolution dataset (see :func:`model.degrade_to_worst`).

    Uses the SDecGMCA driver; with identical kernels the normalized transfer
    functions are all ones and the source update is plain least squares.
    """
    ks = degraded.kernels.kernels
    if not np.allclose(ks, ks[0]):
        raise InvalidArgumentError("GMCA expects data at a common resolution")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", solver.ConvergenceWarning)
        result = solver.run_sdecgmca(degraded, gmca_config(config))
    n_iter = len(result.diagnostics) + len(result.final_trace)
    return BaselineResult(result.A, result.S, n_iter, not result.warning)


def _objective(R):
    return float(np.sum(R**2))


def run_hals(X, n_s, max_iters=500, seed=0, tol=1e-6):
    """Hierarchical alternating least squares for ``X ~ A S`` with ``A, S >= 0``.

    Each sweep updates every row of ``S`` then every column of ``A`` by exact
    non-negative coordinate minimization. A component whose norm vanishes is
    re-seeded from the positive part of the residual. Stops when the relative
    objective decrease falls below ``tol``. Returned columns of ``A`` have
    unit norm, the scale moving into ``S``.
    """
    X = np.asarray(X, dtype=float)
    if n_s < 1 or n_s > min(X.shape):
        raise InvalidArgumentError(f"n_s must lie in [1, {min(X.shape)}]")
    if np.any(X < 0):
        warnings.warn("negative pixels clipped to zero before HALS", UserWarning)
        X = np.clip(X, 0.0, None)
    rng = np.random.default_rng(seed)
    A = rng.random((X.shape[0], n_s))
    A /= np.linalg.norm(A, axis=0)
    S = np.clip(np.linalg.lstsq(A, X, rcond=None)[0], 0.0, None)
    R = X - A @ S
    history = [_objective(R)]
    converged = False
    sweeps = 0
    for sweeps in range(1, max_iters + 1):
        for n in range(n_s):
            a = A[:, n]
            na = a @ a
            if na == 0:
                a = A[:, n] = _reseed(R.sum(axis=1), rng)
                na = a @ a
                R = X - A @ S
            new = np.clip(S[n] + (a @ R) / na, 0.0, None)
            R -= np.outer(a, new - S[n])
            S[n] = new
        for n in range(n_s):
            s = S[n]
            ns = s @ s
            if ns == 0:
                s = S[n] = _reseed(R.sum(axis=0), rng)
                ns = s @ s
                R = X - A @ S
            new = np.clip(A[:, n] + (R @ s) / ns, 0.0, None)
            R -= np.outer(new - A[:, n], s)
            A[:, n] = new
        history.append(_objective(R))
        if history[-2] - history[-1] <= tol * max(history[-2], np.finfo(float).tiny):
            converged = True
            break
    norms = np.linalg.norm(A, axis=0)
    norms[norms == 0] = 1.0
    return BaselineResult(A / norms, S * norms[:, None], sweeps, converged, history)


def _reseed(residual_profile, rng):
    v = np.clip(residual_profile, 0.0, None)
    if not np.any(v > 0):
        v = rng.random(v.shape)
    return v / np.linalg.norm(v)


def run_hals_dataset(dataset, n_s, max_iters=500, seed=0):
    """HALS on the maps of ``dataset`` degraded to the worst resolution."""
    degraded = model.degrade_to_worst(dataset)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        return run_hals(degraded.X, n_s, max_iters, seed)
