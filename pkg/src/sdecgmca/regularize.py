"""Tikhonov coefficients ``eps[n, l]`` for the regularized source update."""

import numpy as np

from .errors import InvalidArgumentError, SDecError

SPECTRUM_FLOOR = 1e-12
STRATEGY3_EPSILON = 1e-2


def build_normal_matrices(A, kernels):
    """``M[l] = A^T diag(H[:, l])^2 A`` for every degree, shape ``(L, N_s, N_s)``.

    ``kernels`` is the ``(N_c, L)`` transfer array (or a ``KernelSet``).
    """
    A = np.asarray(A, dtype=float)
    H = np.asarray(getattr(kernels, "kernels", kernels), dtype=float)
    if H.ndim != 2 or H.shape[0] != A.shape[0]:
        raise InvalidArgumentError(f"kernels {H.shape} do not match mixing matrix {A.shape}")
    return np.einsum("vn,vl,vk->lnk", A, H**2, A)


def _eigvalsh(M):
    try:
        return np.linalg.eigvalsh(M)
    except np.linalg.LinAlgError as exc:
        raise SDecError(f"symmetric eigen-solve failed: {exc}") from exc


def _check_c(c):
    if c < 0 or not np.isfinite(c):
        raise InvalidArgumentError(f"regularization hyperparameter must be finite and >= 0, got {c}")


def strategy1(c, shape):
    """Constant ``eps = c``."""
    _check_c(c)
    return np.full(shape, float(c))


def strategy2(c, M):
    """``eps[n, l] = c * lambda_max(M[l])``."""
    _check_c(c)
    lam_max = _eigvalsh(M)[:, -1]
    return np.tile(c * lam_max, (M.shape[1], 1))


def strategy3(c, M, A):
    """Noise-amplification cap:
    ``eps[n, l] = max(0, c - lambda_min(M[l]) / (lambda_min(A^T A) + 0.01))``."""
    _check_c(c)
    A = np.asarray(A, dtype=float)
    lam_min = _eigvalsh(M)[:, 0]
    lam_ata = _eigvalsh(A.T @ A)[0]
    eps = np.maximum(0.0, c - lam_min / (lam_ata + STRATEGY3_EPSILON))
    return np.tile(eps, (M.shape[1], 1))


def strategy4(c, source_spectra, noise_spectrum):
    """Wiener-like ``eps[n, l] = c * c_N(l) / c_S_n(l)``.

    Source spectra are floored at ``1e-12`` times their maximum so degrees
    without source power get a huge but finite penalty.
    """
    _check_c(c)
    spectra = np.atleast_2d(np.asarray(source_spectra, dtype=float))
    noise = np.asarray(noise_spectrum, dtype=float)
    peak = spectra.max(axis=1, keepdims=True)
    floor = np.where(peak > 0, SPECTRUM_FLOOR * peak, np.finfo(float).tiny)
    return c * noise[None, :] / np.maximum(spectra, floor)


def compute(strategy, c, A, kernels, source_spectra=None, noise_spectrum=None):
    """Dispatch on the strategy number (1 to 4)."""
    H = np.asarray(getattr(kernels, "kernels", kernels), dtype=float)
    shape = (np.shape(A)[1], H.shape[1])
    if strategy == 1:
        return strategy1(c, shape)
    if strategy in (2, 3):
        M = build_normal_matrices(A, H)
        return strategy2(c, M) if strategy == 2 else strategy3(c, M, A)
    if strategy == 4:
        if source_spectra is None or noise_spectrum is None:
            raise InvalidArgumentError("strategy 4 needs source and noise spectra")
        return strategy4(c, source_spectra, noise_spectrum)
    raise InvalidArgumentError(f"unknown regularization strategy {strategy!r}")
