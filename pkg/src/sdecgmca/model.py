"""Forward mixture model on the sphere and the synthetic toy-data generator."""

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import sphere, starlet
from .errors import DegenerateKernelError, GenerationError, InvalidArgumentError

DATA_REFINE_ITERS = 3


@dataclass(frozen=True, eq=False)
class KernelSet:
    """Per-channel isotropic transfer functions ``H[nu, l]``.

    ``resolutions`` holds the FWHM (in degrees ``l``) of each channel when the
    kernels are Gaussian. ``reference`` is the transfer function the kernels
    are expressed relative to (all ones for raw kernels); after
    :func:`normalize_to_best` it is the best channel's kernel, which is the
    resolution deconvolved sources come out at.
    """

    kernels: np.ndarray
    resolutions: Optional[np.ndarray] = None
    reference: Optional[np.ndarray] = None

    def __post_init__(self):
        kernels = np.atleast_2d(np.asarray(self.kernels, dtype=float))
        object.__setattr__(self, "kernels", kernels)
        if self.reference is None:
            object.__setattr__(self, "reference", np.ones(kernels.shape[1]))
        if self.resolutions is not None:
            object.__setattr__(self, "resolutions", np.asarray(self.resolutions, dtype=float))

    @property
    def n_channels(self):
        return self.kernels.shape[0]

    @property
    def l_max(self):
        return self.kernels.shape[1] - 1

    def best_channel(self):
        if self.resolutions is not None:
            return int(np.argmax(self.resolutions))
        return int(np.argmax(self.kernels.sum(axis=1)))

    def worst_channel(self):
        if self.resolutions is not None:
            return int(np.argmin(self.resolutions))
        return int(np.argmin(self.kernels.sum(axis=1)))


@dataclass(frozen=True, eq=False)
class GroundTruth:
    A: np.ndarray
    S: np.ndarray
    S_hat: np.ndarray

    @property
    def spectra(self):
        return sphere.power_spectrum(self.S_hat)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Observations ``X`` (maps), their coefficients ``X_hat``, the raw
    kernels and the pixel noise variance ``sigma2``.

    ``noise_transfer`` (``(N_c, L)``) is the per-degree power gain applied to
    the originally white noise, set when the data are re-convolved.
    """

    grid: sphere.SphereGrid
    X: np.ndarray
    X_hat: np.ndarray
    kernels: KernelSet
    sigma2: float
    truth: Optional[GroundTruth] = None
    params: dict = field(default_factory=dict)
    noise_transfer: Optional[np.ndarray] = None

    @property
    def n_channels(self):
        return self.X.shape[0]

    @property
    def noise_spectrum(self):
        """Per-degree spectrum of white pixel noise, ``4 pi sigma2 / N_p``."""
        return np.full(self.grid.l_max + 1, self.grid.pixel_area * self.sigma2)

    @classmethod
    def from_maps(cls, grid, X, kernels, sigma2, truth=None, params=None, refine_iters=DATA_REFINE_ITERS):
        X = np.asarray(X, dtype=float)
        if sigma2 < 0:
            raise InvalidArgumentError("sigma2 must be non-negative")
        if kernels.n_channels != X.shape[0]:
            raise InvalidArgumentError(f"{kernels.n_channels} kernels for {X.shape[0]} channels")
        X_hat = sphere.analyze(X, grid, refine_iters)
        return cls(grid, X, X_hat, kernels, float(sigma2), truth, dict(params or {}))


def gaussian_kernel(r, l_max):
    """``H(l) = exp(-l (l + 1) log 2 / (r (r + 1)))``, equal to 1/2 at ``l = r``."""
    if r <= 0:
        raise InvalidArgumentError(f"resolution must be positive, got {r}")
    ell = np.arange(l_max + 1)
    return np.exp(-ell * (ell + 1.0) / (r * (r + 1.0)) * np.log(2.0))


def gaussian_kernels(resolutions, l_max):
    resolutions = np.asarray(resolutions, dtype=float)
    return KernelSet(np.array([gaussian_kernel(r, l_max) for r in resolutions]), resolutions)


def normalize_to_best(kernels):
    """Divide every channel by the best-resolved one, which becomes all ones."""
    best = kernels.kernels[kernels.best_channel()]
    if np.any(best <= 0):
        bad = int(np.flatnonzero(best <= 0)[0])
        raise DegenerateKernelError(f"best-resolved kernel vanishes at l={bad}")
    return KernelSet(kernels.kernels / best, kernels.resolutions, kernels.reference * best)


def degrade_to_worst(dataset):
    """Bring every channel to the resolution of the worst-resolved one."""
    ks = dataset.kernels
    worst = ks.kernels[ks.worst_channel()]
    support = worst > 0
    if np.any(ks.kernels[:, support] <= 0):
        raise DegenerateKernelError("a channel vanishes where the worst kernel does not")
    ratio = np.zeros_like(ks.kernels)
    ratio[:, support] = worst[support] / ks.kernels[:, support]
    X_hat = sphere.convolve(dataset.X_hat, ratio)
    res = None
    if ks.resolutions is not None:
        res = np.full(ks.n_channels, ks.resolutions[ks.worst_channel()])
    degraded = KernelSet(np.tile(worst, (ks.n_channels, 1)), res, ks.reference)
    transfer = ratio**2 if dataset.noise_transfer is None else dataset.noise_transfer * ratio**2
    return replace(
        dataset,
        X=sphere.synthesize(X_hat, dataset.grid),
        X_hat=X_hat,
        kernels=degraded,
        noise_transfer=transfer,
    )


def random_sources(n_s, grid, cutoff, sparsity=0.01, seed=None, n_scales=starlet.DEFAULT_SCALES, coarse_level=0.2):
    """Non-negative, band-limited sources that are sparse in the starlet domain.

    Each detail scale receives Bernoulli(``sparsity``) spikes with half-normal
    amplitudes, spread by the scale's filter into unit-peak atoms. A smooth
    non-negative coarse scale is added, then the map is clipped at zero,
    band-limited to ``cutoff`` and clipped again. Returns ``(S, S_hat)``, where
    ``S = synthesize(S_hat)`` is the exact ground truth in the model space
    (tiny negative ripples may remain) and each source has unit l2 norm.
    """
    if not 0 < cutoff <= grid.l_max:
        raise InvalidArgumentError(f"cutoff must lie in (0, {grid.l_max}]")
    if not 0 <= sparsity <= 1:
        raise InvalidArgumentError("sparsity must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    filters = starlet.build_filters(grid.l_max, n_scales)
    ell, _ = sphere.alm_lm(grid.l_max)
    weights = (2.0 * np.arange(grid.l_max + 1) + 1.0) / grid.n_pix
    peaks = filters.detail @ weights
    # one octave below the coarsest starlet band, so the background stays out of the detail scales
    low_pass = starlet.scaling_profile(2.0 ** (n_scales + 1) * ell / (grid.l_max + 1.0))

    S = np.empty((n_s, grid.n_pix))
    for n in range(n_s):
        spikes = (rng.random((n_scales, grid.n_pix)) < sparsity) * np.abs(rng.standard_normal((n_scales, grid.n_pix)))
        atoms = sphere.convolve(sphere.analyze(spikes, grid), filters.detail) / peaks[:, None]
        field_alm = rng.standard_normal(ell.size) + 1j * rng.standard_normal(ell.size)
        field_alm[: grid.l_max + 1].imag = 0.0
        smooth = sphere.synthesize(field_alm * low_pass, grid)
        smooth /= max(np.std(smooth), 1e-300)
        coarse = coarse_level * np.clip(1.0 + 0.5 * smooth, 0.0, None)
        s = np.clip(sphere.synthesize(atoms.sum(axis=0), grid) + coarse, 0.0, None)
        s_hat = sphere.analyze(s, grid, DATA_REFINE_ITERS) * (ell <= cutoff)
        S[n] = np.clip(sphere.synthesize(s_hat, grid), 0.0, None)
    S_hat = sphere.analyze(S, grid, DATA_REFINE_ITERS)
    S = sphere.synthesize(S_hat, grid)
    norms = np.linalg.norm(S, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise GenerationError("a generated source is identically zero")
    return S / norms, S_hat / norms


def random_mixing(n_c, n_s, cond=2.0, seed=None, max_attempts=100, max_iter=300, rtol=0.05):
    """Non-negative mixing matrix with unit-norm columns and a target
    condition number.

    Alternates between imposing a geometric singular-value ramp from 1 to
    ``1 / cond`` and projecting back onto non-negative, column-normalized
    matrices.
    """
    if n_c < n_s:
        raise InvalidArgumentError("need at least as many channels as sources")
    if cond < 1:
        raise InvalidArgumentError("condition number must be >= 1")
    rng = np.random.default_rng(seed)
    target = np.geomspace(1.0, 1.0 / cond, n_s)
    for _ in range(max_attempts):
        A = _normalize_columns(rng.random((n_c, n_s)))
        for _ in range(max_iter):
            got = np.linalg.cond(A)
            if abs(got - cond) <= rtol * cond:
                return A
            U, _, Vt = np.linalg.svd(A, full_matrices=False)
            A = np.clip((U * target) @ Vt, 0.0, None)
            if np.any(np.linalg.norm(A, axis=0) == 0):
                break
            A = _normalize_columns(A)
    raise GenerationError(f"could not reach condition number {cond} after {max_attempts} attempts")


def _normalize_columns(A):
    return A / np.linalg.norm(A, axis=0, keepdims=True)


@dataclass(frozen=True)
class SimulationParams:
    """Toy-problem parameters.

    ``r_min`` and ``cutoff`` default to ``3 n_side / 8`` and ``3 n_side / 6``,
    the same fractions of the harmonic band as the reference setup. Channel
    resolutions are spread linearly on ``[r_min, 3 n_side]``.
    """

    n_s: int = 4
    n_c: int = 8
    cond: float = 2.0
    r_min: Optional[float] = None
    snr_db: float = 10.0
    n_side: int = 16
    cutoff: Optional[int] = None
    sparsity: float = 0.01
    n_scales: int = starlet.DEFAULT_SCALES
    coarse_level: float = 0.2
    seed: int = 0

    @property
    def band(self):
        return 3 * self.n_side

    def resolved_r_min(self):
        return self.band / 8.0 if self.r_min is None else float(self.r_min)

    def resolved_cutoff(self):
        return self.band // 6 if self.cutoff is None else int(self.cutoff)


def simulate(params=SimulationParams()):
    """Draw sources, mixing and noise; return a :class:`Dataset`."""
    if params.n_c < params.n_s:
        raise InvalidArgumentError("need at least as many channels as sources")
    grid = sphere.build_grid(params.n_side)
    seeds = np.random.SeedSequence(params.seed).spawn(3)
    S, S_hat = random_sources(
        params.n_s, grid, params.resolved_cutoff(), params.sparsity, seeds[0], params.n_scales, params.coarse_level
    )
    A = random_mixing(params.n_c, params.n_s, params.cond, seeds[1])
    resolutions = np.linspace(params.resolved_r_min(), params.band, params.n_c)
    kernels = gaussian_kernels(resolutions, grid.l_max)
    clean = sphere.synthesize(sphere.convolve(A @ S_hat, kernels.kernels), grid)
    if np.isinf(params.snr_db) and params.snr_db > 0:
        sigma2 = 0.0
        X = clean
    else:
        sigma2 = float(np.sum(clean**2) / (clean.size * 10.0 ** (params.snr_db / 10.0)))
        noise = np.random.default_rng(seeds[2]).standard_normal(clean.shape)
        # realized noise power matches sigma2 exactly, so the requested SNR holds per draw
        noise *= np.sqrt(sigma2 / np.mean(noise**2))
        X = clean + noise
    meta = {k: getattr(params, k) for k in params.__dataclass_fields__}
    meta.update(r_min=params.resolved_r_min(), cutoff=params.resolved_cutoff())
    return Dataset.from_maps(grid, X, kernels, sigma2, GroundTruth(A, S, S_hat), meta)


def empirical_snr_db(dataset):
    """SNR recomputed from the stored arrays and the noiseless mixture."""
    truth = dataset.truth
    clean = sphere.synthesize(sphere.convolve(truth.A @ truth.S_hat, dataset.kernels.kernels), dataset.grid)
    noise = dataset.X - clean
    return 10.0 * np.log10(np.sum(clean**2) / np.sum(noise**2))
