"""Joint deconvolution and sparse blind source separation on the sphere.

The engine alternates a Tikhonov-regularized least-squares update of the
source coefficients with a least-squares update of the mixing matrix. Each
source update is followed by soft-thresholding in the starlet domain, with
thresholds derived from the noise propagated through the update. A warm-up
stage (noise-capping regularization, decreasing ``c``, growing support) is
followed by a refinement stage (spectrum-based regularization, reweighted
thresholds, non-negativity), and a last pass re-estimates the sources with
the mixing matrix fixed.

Source estimates are expressed at the resolution of the best-resolved
channel; kernels are normalized to it internally.
"""

import logging
import warnings
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from . import model, regularize, sphere, starlet
from .errors import (
    ConvergenceWarning,
    DegenerateColumnWarning,
    InitializationError,
    InvalidArgumentError,
    SDecError,
    SingularSystemError,
    SolverError,
)

log = logging.getLogger(__name__)

MAD_SCALE = 0.6745
WARMUP = "warmup"
REFINEMENT = "refinement"
FINAL = "final"


@dataclass
class SolverConfig:
    n_s: int = 3
    c_wu: float = 0.7
    c_ref: float = 2.0
    k: float = 3.0
    K_max: float = 0.5
    J: int = starlet.DEFAULT_SCALES
    N_wu: int = 100
    eps_wu: float = 1e-2
    eps_ref: float = 1e-5
    max_iter_wu: Optional[int] = None
    max_iter_ref: int = 500
    max_iter_final: int = 500
    nonneg_S: bool = True
    nonneg_A: bool = True
    sigma2: Optional[float] = None
    use_mad: bool = False
    warmup_strategy: int = 3
    refine_strategy: int = 4
    refine_iters: int = 0

    def __post_init__(self):
        if self.k <= 0:
            raise InvalidArgumentError("k must be positive")
        if not 0 < self.K_max <= 1:
            raise InvalidArgumentError("K_max must lie in (0, 1]")
        if self.eps_wu <= 0 or self.eps_ref <= 0:
            raise InvalidArgumentError("stopping tolerances must be positive")
        if self.n_s < 1 or self.N_wu < 1:
            raise InvalidArgumentError("n_s and N_wu must be >= 1")

    @property
    def warmup_cap(self):
        return 2 * self.N_wu if self.max_iter_wu is None else self.max_iter_wu

    @classmethod
    def from_mapping(cls, mapping):
        known = {f.name: f for f in fields(cls)}
        unknown = set(mapping) - set(known)
        if unknown:
            raise InvalidArgumentError(f"unknown solver config keys: {sorted(unknown)}")
        return cls(**mapping)


@dataclass
class SolverResult:
    A: np.ndarray
    S: np.ndarray
    S_hat: np.ndarray
    diagnostics: list = field(default_factory=list)
    final_trace: list = field(default_factory=list)
    converged: dict = field(default_factory=dict)

    @property
    def warning(self):
        return not all(self.converged.values())


# --- least-squares updates -------------------------------------------------


def update_S_ls(X_hat, kernels, A, eps):
    """Regularized least-squares sources, independently for every ``(l, m)``:
    ``S = (M[l] + diag(eps[:, l]))^-1 A^T diag(H[:, l]) X``."""
    H = np.asarray(getattr(kernels, "kernels", kernels), dtype=float)
    A = np.asarray(A, dtype=float)
    eps = np.asarray(eps, dtype=float)
    l_max = sphere.lmax_from_size(X_hat.shape[-1])
    n_s = A.shape[1]
    if eps.shape != (n_s, l_max + 1) or H.shape != (A.shape[0], l_max + 1):
        raise InvalidArgumentError(
            f"shape mismatch: eps {eps.shape}, kernels {H.shape}, A {A.shape}, l_max {l_max}"
        )
    system = regularize.build_normal_matrices(A, H)
    idx = np.arange(n_s)
    system[:, idx, idx] += eps.T
    _check_invertible(system)
    ell, _ = sphere.alm_lm(l_max)
    rhs = A.T @ (H[:, ell] * X_hat)
    return _solve_per_degree(system, rhs, ell)


def _solve_per_degree(system, rhs, ell):
    # solve once per degree on the (n_s, n_m) block of coefficients sharing it
    out = np.empty_like(rhs)
    order = np.argsort(ell, kind="stable")
    bounds = np.searchsorted(ell[order], np.arange(system.shape[0] + 1))
    for l in range(system.shape[0]):
        cols = order[bounds[l] : bounds[l + 1]]
        out[:, cols] = np.linalg.solve(system[l], rhs[:, cols])
    return out


def _check_invertible(system):
    lam = np.linalg.eigvalsh(system)
    scale = np.maximum(np.abs(lam[:, -1]), np.finfo(float).tiny)
    bad = np.flatnonzero(lam[:, 0] <= 1e-13 * scale)
    if bad.size:
        l = int(bad[0])
        raise SingularSystemError(f"regularized normal matrix is singular at degree l={l}", degree=l)


def update_A(X_hat, kernels, S_hat, nonneg=False, fallback=None):
    """Per-channel least squares for the mixing matrix followed by projection
    (non-negative clip, then unit-norm columns).

    Sources that are identically zero cannot be fitted; their columns are
    taken from ``fallback`` when given, otherwise the Gram matrix is singular.
    """
    H = np.asarray(getattr(kernels, "kernels", kernels), dtype=float)
    l_max = sphere.lmax_from_size(X_hat.shape[-1])
    ell, _ = sphere.alm_lm(l_max)
    w = sphere.alm_weights(l_max)
    n_s = S_hat.shape[0]
    active = np.flatnonzero(np.any(S_hat != 0, axis=1))
    if active.size < n_s and fallback is None:
        raise SingularSystemError("a source is identically zero; mixing-matrix Gram matrix is singular")
    S_act = S_hat[active]
    # real parts of the Hermitian sums over -l <= m <= l
    outer = np.einsum("na,ka->nka", S_act, S_act.conj()).real * w
    per_degree = np.stack([np.bincount(ell, weights=o, minlength=l_max + 1) for o in outer.reshape(-1, w.size)])
    per_degree = per_degree.reshape(active.size, active.size, l_max + 1)
    gram = np.einsum("vl,nkl->vnk", H**2, per_degree)
    num = ((H[:, ell] * X_hat * w) @ S_act.conj().T).real
    try:
        sol = np.linalg.solve(gram, num[..., None])[..., 0]
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"mixing-matrix Gram matrix is singular: {exc}") from exc
    A = np.array(fallback, dtype=float, copy=True) if fallback is not None else np.zeros((H.shape[0], n_s))
    A[:, active] = sol
    return project_mixing(A, nonneg, fallback)


def project_mixing(A, nonneg=False, fallback=None):
    A = np.array(A, dtype=float, copy=True)
    if nonneg:
        A = np.clip(A, 0.0, None)
    norms = np.linalg.norm(A, axis=0)
    dead = norms == 0
    if dead.any():
        warnings.warn(f"mixing-matrix columns {np.flatnonzero(dead).tolist()} vanished", DegenerateColumnWarning)
        if fallback is not None:
            A[:, dead] = fallback[:, dead]
            norms[dead] = np.linalg.norm(A[:, dead], axis=0)
        norms[norms == 0] = 1.0
    return A / norms


# --- noise and thresholds --------------------------------------------------


def noise_std_per_scale(A, kernels, eps, sigma2, filters, n_pix, noise_transfer=None):
    """Standard deviation ``(N_s, J)`` of the data noise propagated through
    the regularized update into each starlet detail band.

    The noise is white with pixel variance ``sigma2``, optionally filtered
    per channel by ``noise_transfer`` (``(N_c, L)``, power gain per degree).
    Off-diagonal source covariances are ignored.
    """
    if sigma2 < 0:
        raise InvalidArgumentError("sigma2 must be non-negative")
    H = np.asarray(getattr(kernels, "kernels", kernels), dtype=float)
    M = regularize.build_normal_matrices(A, H)
    colored = M if noise_transfer is None else regularize.build_normal_matrices(A, H * np.sqrt(noise_transfer))
    system = M.copy()
    idx = np.arange(M.shape[1])
    system[:, idx, idx] += np.asarray(eps, dtype=float).T
    _check_invertible(system)
    inv = np.linalg.inv(system)
    cov = np.einsum("lij,ljk,lki->li", inv, colored, inv)
    ell = np.arange(H.shape[1])
    var = sigma2 / n_pix * np.einsum("l,ln,jl->nj", 2.0 * ell + 1.0, cov, filters.detail**2)
    return np.sqrt(np.maximum(var, 0.0))


def estimate_sigma_mad(bands, ratios=None):
    """Robust noise level from the finest detail band, ``MAD / 0.6745``.

    ``bands`` is ``(..., J, N_p)``. With ``ratios`` (``(..., J)``, the
    analytic per-scale noise profile) the finest-scale estimate is carried to
    the other scales; otherwise every scale gets its own MAD estimate.
    """
    bands = np.asarray(bands, dtype=float)
    if bands.shape[-1] == 0:
        raise InvalidArgumentError("empty band")
    if ratios is None:
        med = np.median(bands, axis=-1, keepdims=True)
        return np.median(np.abs(bands - med), axis=-1) / MAD_SCALE
    finest = bands[..., 0, :]
    med = np.median(finest, axis=-1, keepdims=True)
    sigma1 = np.median(np.abs(finest - med), axis=-1) / MAD_SCALE
    ratios = np.asarray(ratios, dtype=float)
    base = np.where(ratios[..., :1] > 0, ratios[..., :1], 1.0)
    return sigma1[..., None] * ratios / base


def compute_thresholds(bands, sigma, k, K, prev=None, reweight=False):
    """Per-coefficient thresholds for detail bands ``(N_s, J, N_p)``.

    The base threshold of each (source, scale) is the ``p0``-th largest
    coefficient magnitude, ``p0 = floor(K * C)`` (at least 1), where ``C``
    counts coefficients above ``k * sigma``; it falls back to ``k * sigma``
    when ``C = 0``. With ``K=None`` the base is ``k * sigma``. Reweighting
    shrinks it to ``base / (1 + |prev| / base)``.
    """
    bands = np.asarray(bands, dtype=float)
    if bands.size == 0 or bands.shape[-1] == 0:
        raise InvalidArgumentError("empty bands")
    if k <= 0:
        raise InvalidArgumentError("k must be positive")
    mag = np.abs(bands)
    noise_level = k * np.broadcast_to(np.asarray(sigma, dtype=float), bands.shape[:-1])
    if K is None:
        base = noise_level
    else:
        if not 0 <= K <= 1:
            raise InvalidArgumentError("K must lie in [0, 1]")
        count = np.sum(mag >= noise_level[..., None], axis=-1)
        p0 = np.maximum(np.floor(K * count).astype(int), 1)
        ranked = -np.sort(-mag, axis=-1)
        picked = np.take_along_axis(ranked, (np.minimum(p0, mag.shape[-1]) - 1)[..., None], axis=-1)[..., 0]
        base = np.where(count > 0, picked, noise_level)
    base = np.broadcast_to(base[..., None], bands.shape)
    if not reweight or prev is None:
        return np.array(base)
    prev = np.abs(np.asarray(prev, dtype=float))
    with np.errstate(divide="ignore", invalid="ignore"):
        weighted = base / (1.0 + prev / base)
    return np.where(base > 0, weighted, 0.0)


def soft_threshold(x, thresholds):
    return np.sign(x) * np.maximum(np.abs(x) - thresholds, 0.0)


def threshold_S(S_bands, thresholds, nonneg=False):
    """Soft-threshold the detail bands, add the untouched coarse band back and
    optionally project on the non-negative orthant.

    ``S_bands`` is a direct-domain :class:`starlet.StarletDecomposition`.
    Returns ``(S, thresholded_details)``.
    """
    details = soft_threshold(S_bands.details, thresholds)
    S = details.sum(axis=-2) + S_bands.coarse
    if nonneg:
        S = np.clip(S, 0.0, None)
    return S, details


# --- initialization --------------------------------------------------------


def pca_init(dataset, n_s, filters=None, nonneg=False):
    """Leading principal directions of the channel covariance of the
    coarse-free data brought to the worst resolution."""
    if dataset.n_channels < n_s:
        raise InitializationError(f"{dataset.n_channels} channels cannot initialize {n_s} sources")
    l_max = dataset.grid.l_max
    filters = filters or starlet.build_filters(l_max)
    degraded = model.degrade_to_worst(dataset)
    X = sphere.convolve(degraded.X_hat, 1.0 - filters.coarse)
    w = sphere.alm_weights(l_max)
    cov = ((X * w) @ X.conj().T).real
    vals, vecs = np.linalg.eigh(cov)
    vals, vecs = vals[::-1], vecs[:, ::-1]
    if vals[n_s - 1] <= 1e-12 * max(vals[0], np.finfo(float).tiny):
        raise InitializationError(f"data covariance has rank below {n_s}")
    A = vecs[:, :n_s].copy()
    lead = A[np.argmax(np.abs(A), axis=0), np.arange(n_s)]
    A *= np.where(lead < 0, -1.0, 1.0)
    if nonneg:
        A = np.clip(A, 0.0, None)
        dead = np.linalg.norm(A, axis=0) == 0
        if dead.any():
            raise InitializationError("PCA column has no positive entry")
    return A / np.linalg.norm(A, axis=0)


# --- driver ----------------------------------------------------------------


class _Problem:
    """Quantities shared by every iteration of one run."""

    def __init__(self, dataset, config, kernels=None):
        self.dataset = dataset
        self.config = config
        self.grid = dataset.grid
        self.l_max = dataset.grid.l_max
        ks = model.normalize_to_best(dataset.kernels) if kernels is None else kernels
        self.kernels = ks
        self.H = ks.kernels
        self.filters = starlet.build_filters(self.l_max, config.J)
        self.X_hat = dataset.X_hat
        self.detail_pass = 1.0 - self.filters.coarse
        self.X_sep = sphere.convolve(self.X_hat, self.detail_pass)
        if config.sigma2 is not None:
            self.sigma2 = float(config.sigma2)
        elif config.use_mad:
            self.sigma2 = estimate_noise_variance(dataset, self.filters)
        else:
            self.sigma2 = dataset.sigma2
        self.noise_spectrum = np.full(self.l_max + 1, self.grid.pixel_area * self.sigma2)
        self.noise_transfer = dataset.noise_transfer
        self.last_ls = None

    def separated(self, S_hat):
        return sphere.convolve(S_hat, self.detail_pass)

    def regularization(self, strategy, c, A, S_hat=None, spectra=None):
        if strategy == 4 and spectra is None:
            spectra = sphere.power_spectrum(S_hat)
        return regularize.compute(strategy, c, A, self.H, spectra, self.noise_spectrum)

    def update_sources(self, A, eps, K, prev=None, reweight=False, nonneg=False):
        """One regularized LS + thresholding step; returns ``(S, S_hat, details)``."""
        S_ls = update_S_ls(self.X_hat, self.H, A, eps)
        self.last_ls = S_ls
        bands = starlet.forward(S_ls, self.filters, self.grid, to_direct=True)
        if self.config.use_mad:
            ratios = noise_std_per_scale(A, self.H, eps, 1.0, self.filters, self.grid.n_pix, self.noise_transfer)
            sigma = estimate_sigma_mad(bands.details, ratios)
        else:
            sigma = noise_std_per_scale(
                A, self.H, eps, self.sigma2, self.filters, self.grid.n_pix, self.noise_transfer
            )
        thresholds = compute_thresholds(bands.details, sigma, self.config.k, K, prev, reweight)
        S, details = threshold_S(bands, thresholds, nonneg)
        S_hat = sphere.analyze(S, self.grid, self.config.refine_iters)
        return S, S_hat, details


def estimate_noise_variance(dataset, filters):
    """Pixel noise variance from the MAD of the finest starlet band of the data."""
    band = sphere.synthesize(sphere.convolve(dataset.X_hat, filters.detail[0]), dataset.grid)
    sigma_band = estimate_sigma_mad(band[:, None, :])[:, 0]
    ell = np.arange(dataset.grid.l_max + 1)
    gain = np.sum((2 * ell + 1) * filters.detail[0] ** 2) / dataset.grid.n_pix
    return float(np.median(sigma_band) ** 2 / gain)


def _spectra_basis(prob, S_hat):
    # strategy-4 spectra come from the latest unthresholded estimate
    return S_hat if prob.last_ls is None else prob.last_ls


def relative_change(new, old):
    norm = np.linalg.norm(new)
    if norm == 0:
        return 0.0 if np.linalg.norm(old) == 0 else np.inf
    return float(np.linalg.norm(new - old) / norm)


def warmup_schedule(i, config):
    """``(c, K)`` at warm-up iteration ``i`` (1-based): ``c`` decays
    log-linearly from ``10 c_wu`` to ``c_wu`` and ``K`` grows linearly from 0
    to ``K_max`` over ``N_wu`` iterations, then both are held."""
    n = config.N_wu
    t = 1.0 if n == 1 else min(i - 1, n - 1) / (n - 1)
    c = config.c_wu * 10.0 ** (1.0 - t)
    K = config.K_max * t
    if i >= n:
        c, K = config.c_wu, config.K_max
    return c, K


def run_sdecgmca(dataset, config, A_init=None, kernels=None):
    """Full blind pipeline: PCA start, warm-up, refinement, final estimate."""
    prob = _Problem(dataset, config, kernels)
    A = pca_init(dataset, config.n_s, prob.filters, config.nonneg_A) if A_init is None else np.array(A_init)
    S_hat = np.zeros((config.n_s, prob.X_hat.shape[-1]), dtype=complex)
    details = None
    diagnostics = []
    converged = {}
    it = 0

    def step(stage, strategy, c, K, reweight, nonneg):
        nonlocal A, S_hat, details, it
        it += 1
        try:
            eps = prob.regularization(strategy, c, A, _spectra_basis(prob, S_hat))
            S, S_new, details = prob.update_sources(A, eps, K, details, reweight, nonneg)
            A = update_A(prob.X_sep, prob.H, prob.separated(S_new), config.nonneg_A, fallback=A)
        except SDecError as exc:
            raise SolverError(f"{stage} iteration {it}: {exc}", stage, it) from exc
        change = relative_change(prob.separated(S_new), prob.separated(S_hat))
        S_hat = S_new
        diagnostics.append({"iter": it, "stage": stage, "c": c, "K": K, "rel_change": change})
        return change

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DegenerateColumnWarning)
        for i in range(1, config.warmup_cap + 1):
            c, K = warmup_schedule(i, config)
            change = step(WARMUP, config.warmup_strategy, c, K, False, False)
            if i >= config.N_wu and change <= config.eps_wu:
                converged[WARMUP] = True
                break
        else:
            converged[WARMUP] = False

        for _ in range(config.max_iter_ref):
            change = step(REFINEMENT, config.refine_strategy, config.c_ref, config.K_max, True, config.nonneg_S)
            if change <= config.eps_ref:
                converged[REFINEMENT] = True
                break
        else:
            converged[REFINEMENT] = False

    S, S_hat, trace, ok = _fixed_mixing_loop(
        prob, A, config.refine_strategy, config.c_ref, S_hat, details, config.max_iter_final
    )
    converged[FINAL] = ok
    result = SolverResult(A, S, S_hat, diagnostics, trace, converged)
    if result.warning:
        warnings.warn(f"SDecGMCA stopped at an iteration cap: {converged}", ConvergenceWarning)
    return result


def _fixed_mixing_loop(prob, A, strategy, c, S_hat, details, max_iter, spectra=None):
    """Iterate the source update with ``A`` fixed, ``K = 1``, reweighting and
    the configured non-negativity until the relative change drops below
    ``eps_ref``. ``spectra`` pins the strategy-4 spectra (non-blind oracle);
    otherwise they are taken from the current iterate."""
    config = prob.config
    trace = []
    fixed_eps = None
    if strategy != 4 or spectra is not None:
        fixed_eps = prob.regularization(strategy, c, A, spectra=spectra)
    S = sphere.synthesize(S_hat, prob.grid)
    for i in range(1, max_iter + 1):
        eps = fixed_eps if fixed_eps is not None else prob.regularization(strategy, c, A, _spectra_basis(prob, S_hat))
        try:
            S, S_new, details = prob.update_sources(A, eps, 1.0, details, True, config.nonneg_S)
        except SDecError as exc:
            raise SolverError(f"final iteration {i}: {exc}", FINAL, i) from exc
        change = relative_change(S_new, S_hat)
        S_hat = S_new
        trace.append({"iter": i, "stage": FINAL, "c": c, "K": 1.0, "rel_change": change})
        if change <= config.eps_ref:
            return S, S_hat, trace, True
    return S, S_hat, trace, False


def final_refine(dataset, A, config, S_hat=None, kernels=None):
    """Re-estimate the sources on the full data (coarse scales included) with
    ``A`` fixed and full support, starting from ``S_hat`` when given.

    Without a starting point, the first spectra come from a warm-up-style
    least-squares estimate so low degrees are not penalized to zero.
    """
    prob = _Problem(dataset, config, kernels)
    A = np.asarray(A, dtype=float)
    if S_hat is None:
        eps = prob.regularization(config.warmup_strategy, config.c_wu, A)
        S_hat = update_S_ls(prob.X_hat, prob.H, A, eps)
    S, S_hat, _, _ = _fixed_mixing_loop(
        prob, A, config.refine_strategy, config.c_ref, S_hat, None, config.max_iter_final
    )
    return S


def run_nonblind(dataset, A_star, strategy, c, config, spectra=None, kernels=None, return_trace=False):
    """Sources for a known mixing matrix with a fixed regularization strategy.

    Strategy 4 uses ``spectra`` (``(N_s, L)``) or, by default, the spectra of
    the ground-truth sources at the target resolution.
    """
    if strategy not in (1, 2, 3, 4):
        raise InvalidArgumentError(f"unknown regularization strategy {strategy!r}")
    prob = _Problem(dataset, config, kernels)
    A_star = np.asarray(A_star, dtype=float)
    if strategy == 4 and spectra is None:
        if dataset.truth is None:
            raise InvalidArgumentError("strategy 4 needs source spectra or a ground truth")
        spectra = sphere.power_spectrum(sphere.convolve(dataset.truth.S_hat, prob.kernels.reference))
    S_hat = np.zeros((A_star.shape[1], prob.X_hat.shape[-1]), dtype=complex)
    S, S_hat, trace, _ = _fixed_mixing_loop(prob, A_star, strategy, c, S_hat, None, config.max_iter_final, spectra)
    if return_trace:
        return S, trace
    return S
