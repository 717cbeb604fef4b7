"""Separation quality metrics with permutation and sign alignment."""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import sphere
from .errors import InvalidArgumentError


@dataclass(frozen=True)
class MetricReport:
    c_a_db: float
    nmse_db: float
    nmse_w_db: Optional[float]
    permutation: tuple
    sign_flips: tuple

    def row(self):
        return {"c_a_db": self.c_a_db, "nmse_db": self.nmse_db, "nmse_w_db": self.nmse_w_db}


def align(A_star, A, S=None):
    """Greedy matching of estimated columns to reference columns by largest
    absolute correlation, then sign correction.

    Returns ``(A, S, permutation, signs)`` where ``A[:, i]`` (and ``S[i]``)
    now estimate reference component ``i``; ``permutation[i]`` is the
    original estimated index.
    """
    A_star = np.asarray(A_star, dtype=float)
    A = np.asarray(A, dtype=float)
    if A.shape != A_star.shape:
        raise InvalidArgumentError(f"shapes differ: {A.shape} vs {A_star.shape}")
    n = A.shape[1]
    ref = A_star / np.maximum(np.linalg.norm(A_star, axis=0), np.finfo(float).tiny)
    est = A / np.maximum(np.linalg.norm(A, axis=0), np.finfo(float).tiny)
    corr = ref.T @ est
    score = np.abs(corr)
    perm = np.full(n, -1)
    for _ in range(n):
        i, j = np.unravel_index(np.argmax(score), score.shape)
        perm[i] = j
        score[i, :] = -np.inf
        score[:, j] = -np.inf
    signs = np.where(corr[np.arange(n), perm] < 0, -1.0, 1.0)
    A_out = A[:, perm] * signs
    S_out = None if S is None else np.asarray(S)[perm] * signs[:, None]
    return A_out, S_out, tuple(int(p) for p in perm), tuple(int(s) for s in signs)


def _nmse(reference, estimate):
    reference = np.asarray(reference, dtype=float)
    estimate = np.asarray(estimate, dtype=float)
    if reference.shape != estimate.shape:
        raise InvalidArgumentError(f"shapes differ: {estimate.shape} vs {reference.shape}")
    power = np.sum(reference**2)
    if power == 0:
        raise InvalidArgumentError("reference has zero energy")
    err = np.sum((reference - estimate) ** 2)
    if err == 0:
        return np.inf
    return float(-10.0 * np.log10(err / power))


def nmse(S_star, S):
    """``-10 log10(||S* - S||^2 / ||S*||^2)`` in dB, ``inf`` for a perfect match."""
    return _nmse(S_star, S)


def nmse_w(S_star_hat, S, worst_kernel, grid):
    """NMSE against the references blurred by the worst-resolved kernel.

    ``S_star_hat`` are reference coefficients; ``S`` are maps already at the
    worst resolution.
    """
    reference = sphere.synthesize(sphere.convolve(S_star_hat, worst_kernel), grid)
    return _nmse(reference, S)


def c_a(A_star, A):
    """``-10 log10(mean |A^+ A* - I|)`` in dB, with ``A^+`` the pseudo-inverse
    of the estimate; ``inf`` when the estimate equals the reference."""
    A = np.asarray(A, dtype=float)
    A_star = np.asarray(A_star, dtype=float)
    if np.linalg.matrix_rank(A) < A.shape[1]:
        raise InvalidArgumentError("estimated mixing matrix is rank deficient")
    if np.array_equal(A, A_star):
        # the pseudo-inverse would leave rounding residue of order 1e-16
        return np.inf
    gap = np.mean(np.abs(np.linalg.pinv(A) @ A_star - np.eye(A.shape[1])))
    if gap == 0:
        return np.inf
    return float(-10.0 * np.log10(gap))


def evaluate(dataset, A, S, resolution):
    """Align an estimate with the dataset's ground truth and compute all metrics.

    ``resolution`` states the resolution ``S`` is expressed at: ``"best"``
    (deconvolving methods) or ``"worst"`` (methods run on degraded data).
    NMSE compares with the ground truth blurred to the best channel and
    NMSE_w with the ground truth blurred to the worst channel; estimates at
    the best resolution are degraded before NMSE_w.
    """
    truth = dataset.truth
    if truth is None:
        raise InvalidArgumentError("dataset has no ground truth")
    ks = dataset.kernels
    best = ks.kernels[ks.best_channel()]
    worst = ks.kernels[ks.worst_channel()]
    A_al, S_al, perm, signs = align(truth.A, A, S)
    grid = dataset.grid
    if resolution == "best":
        n_db = _nmse(sphere.synthesize(sphere.convolve(truth.S_hat, best), grid), S_al)
        degraded = sphere.synthesize(sphere.convolve(sphere.analyze(S_al, grid), worst / best), grid)
        w_db = nmse_w(truth.S_hat, degraded, worst, grid)
    elif resolution == "worst":
        n_db = _nmse(sphere.synthesize(sphere.convolve(truth.S_hat, best), grid), S_al)
        w_db = nmse_w(truth.S_hat, S_al, worst, grid)
    else:
        raise InvalidArgumentError(f"unknown resolution {resolution!r}")
    return MetricReport(c_a(truth.A, A_al), n_db, w_db, perm, signs)
