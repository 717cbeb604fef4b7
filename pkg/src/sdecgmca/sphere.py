"""HEALPix ring-scheme grid and spherical harmonic transforms.

Harmonic coefficients of real maps are stored as complex arrays whose last
axis holds the ``m >= 0`` half of the ``(l, m)`` triangle in m-major order
(the usual HEALPix ``alm`` layout)::

    index(l, m) = m * (2 * l_max + 1 - m) // 2 + l

Leading axes are batch axes, so a stack of maps ``(n, n_pix)`` transforms
into ``(n, n_alm)`` and back.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import InvalidArgumentError

__all__ = [
    "SphereGrid",
    "build_grid",
    "pixel_center",
    "n_alm",
    "lmax_from_size",
    "alm_index",
    "alm_lm",
    "analyze",
    "synthesize",
    "power_spectrum",
    "convolve",
    "alm_weights",
]

MAX_NSIDE = 1024


def n_alm(l_max):
    """Number of stored coefficients for a real map band-limited to ``l_max``."""
    return (l_max + 1) * (l_max + 2) // 2


def lmax_from_size(size):
    l_max = int(round((np.sqrt(8 * size + 1) - 3) / 2))
    if n_alm(l_max) != size:
        raise InvalidArgumentError(f"{size} is not a valid coefficient count")
    return l_max


def alm_index(l, m, l_max):
    return m * (2 * l_max + 1 - m) // 2 + l


def _block(m, l_max):
    start = m * (2 * l_max + 1 - m) // 2
    return slice(start + m, start + l_max + 1)


def alm_lm(l_max):
    """Return ``(ell, emm)`` integer arrays giving the degree and order of every
    stored coefficient."""
    return _alm_lm_cached(l_max)


_LM_CACHE = {}


def _alm_lm_cached(l_max):
    if l_max not in _LM_CACHE:
        ell = np.concatenate([np.arange(m, l_max + 1) for m in range(l_max + 1)])
        emm = np.concatenate([np.full(l_max + 1 - m, m) for m in range(l_max + 1)])
        ell.setflags(write=False)
        emm.setflags(write=False)
        _LM_CACHE[l_max] = (ell, emm)
    return _LM_CACHE[l_max]


def alm_weights(l_max):
    """Multiplicity of each stored coefficient in sums over ``-l <= m <= l``:
    1 for ``m = 0``, 2 otherwise."""
    _, emm = alm_lm(l_max)
    return np.where(emm == 0, 1.0, 2.0)


@dataclass(frozen=True, eq=False)
class SphereGrid:
    """Ring-scheme HEALPix geometry.

    Rings are numbered from the north pole. ``ring_z`` is the cosine of the
    ring colatitude, ``ring_phi0`` the longitude of its first pixel and
    ``ring_npix`` its pixel count.
    """

    n_side: int
    ring_z: np.ndarray = field(repr=False)
    ring_phi0: np.ndarray = field(repr=False)
    ring_npix: np.ndarray = field(repr=False)

    @property
    def n_pix(self):
        return 12 * self.n_side**2

    @property
    def l_max(self):
        # the spherical harmonics sampled on the grid are linearly independent
        # only up to this degree; a count of 3 * n_side degrees
        return 3 * self.n_side - 1

    @property
    def n_rings(self):
        return 4 * self.n_side - 1

    @property
    def pixel_area(self):
        return 4.0 * np.pi / self.n_pix

    @cached_property
    def ring_start(self):
        return np.concatenate([[0], np.cumsum(self.ring_npix)[:-1]])

    @cached_property
    def ring_of_pixel(self):
        return np.repeat(np.arange(self.n_rings), self.ring_npix)

    @cached_property
    def theta(self):
        return np.arccos(self.ring_z)[self.ring_of_pixel]

    @cached_property
    def phi(self):
        k = np.arange(self.n_pix) - self.ring_start[self.ring_of_pixel]
        npix = self.ring_npix[self.ring_of_pixel]
        return self.ring_phi0[self.ring_of_pixel] + 2.0 * np.pi * k / npix

    @cached_property
    def _ring_groups(self):
        # rings sharing a pixel count are transformed together
        groups = []
        for npix in np.unique(self.ring_npix):
            rings = np.flatnonzero(self.ring_npix == npix)
            pix = self.ring_start[rings][:, None] + np.arange(npix)[None, :]
            groups.append((int(npix), rings, pix))
        return groups

    def legendre_table(self, l_max=None):
        """Normalized associated Legendre functions on every ring.

        Returns a real array ``(n_rings, n_alm(l_max))`` with
        ``Y_lm(theta_r, phi) = table[r, index(l, m)] * exp(i m phi)``.
        """
        l_max = self.l_max if l_max is None else l_max
        cache = self.__dict__.setdefault("_legendre_cache", {})
        if l_max not in cache:
            table = normalized_legendre(self.ring_z, l_max)
            table.setflags(write=False)
            cache[l_max] = table
        return cache[l_max]


def build_grid(n_side):
    """Build the ring-scheme grid for ``n_side`` (a power of two up to 1024)."""
    if (
        isinstance(n_side, bool)
        or not isinstance(n_side, (int, np.integer))
        or n_side < 1
        or n_side > MAX_NSIDE
        or n_side & (n_side - 1)
    ):
        raise InvalidArgumentError(f"n_side must be a power of two in [1, {MAX_NSIDE}], got {n_side!r}")
    n_side = int(n_side)
    z, phi0, npix = [], [], []
    for i in range(1, 4 * n_side):
        if i < n_side:
            z.append(1.0 - i * i / (3.0 * n_side**2))
            npix.append(4 * i)
            phi0.append(np.pi / (4.0 * i))
        elif i <= 3 * n_side:
            z.append(4.0 / 3.0 - 2.0 * i / (3.0 * n_side))
            npix.append(4 * n_side)
            # alternate rings are shifted by half a pixel
            shifted = (i - n_side + 1) % 2
            phi0.append(np.pi / (4.0 * n_side) * shifted)
        else:
            j = 4 * n_side - i
            z.append(-(1.0 - j * j / (3.0 * n_side**2)))
            npix.append(4 * j)
            phi0.append(np.pi / (4.0 * j))
    return SphereGrid(
        n_side=n_side,
        ring_z=np.array(z),
        ring_phi0=np.array(phi0),
        ring_npix=np.array(npix, dtype=np.int64),
    )


def pixel_center(grid, p):
    """Colatitude and longitude (radians) of pixel ``p``."""
    if not 0 <= p < grid.n_pix:
        raise InvalidArgumentError(f"pixel index {p} out of range [0, {grid.n_pix})")
    return float(grid.theta[p]), float(grid.phi[p])


_RESCALE = 1e150
_LOG_RESCALE = np.log(_RESCALE)


def normalized_legendre(z, l_max):
    """Orthonormal associated Legendre functions ``lambda_lm(z)``.

    Includes the ``1/sqrt(4 pi)`` factor and the Condon-Shortley phase, so that
    ``Y_lm = lambda_lm(cos theta) exp(i m phi)``. The sectoral seed
    ``lambda_mm`` is built in log space and the upward recurrence in ``l``
    carries a per-point exponent, which keeps everything finite for large
    ``m`` near the poles.
    """
    z = np.asarray(z, dtype=float)
    sin_t = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    with np.errstate(divide="ignore"):
        log_sin = np.log(sin_t)
    out = np.zeros((z.size, n_alm(l_max)))
    log_fact = 0.0  # 0.5 * sum_{k<=m} log((2k-1)/(2k))
    for m in range(l_max + 1):
        if m > 0:
            log_fact += 0.5 * np.log((2.0 * m - 1.0) / (2.0 * m))
        log_mm = 0.5 * np.log((2.0 * m + 1.0) / (4.0 * np.pi)) + log_fact
        if m > 0:
            log_mm = log_mm + m * log_sin
        scale = np.broadcast_to(log_mm, z.shape).copy()
        base = m * (2 * l_max + 1 - m) // 2
        p_prev = np.zeros_like(z)
        p_cur = np.full_like(z, -1.0 if m % 2 else 1.0)
        out[:, base + m] = p_cur * np.exp(scale)
        for l in range(m + 1, l_max + 1):
            a = np.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
            b = np.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
            p_next = a * (z * p_cur - b * p_prev)
            p_prev, p_cur = p_cur, p_next
            big = np.abs(p_cur) > _RESCALE
            if big.any():
                p_cur = np.where(big, p_cur / _RESCALE, p_cur)
                p_prev = np.where(big, p_prev / _RESCALE, p_prev)
                scale = np.where(big, scale + _LOG_RESCALE, scale)
            with np.errstate(under="ignore"):
                out[:, base + l] = p_cur * np.exp(scale)
    return out


def _check_lmax(grid, l_max):
    if l_max > grid.l_max:
        raise InvalidArgumentError(f"l_max={l_max} exceeds the grid limit {grid.l_max}")


def synthesize(alm, grid):
    """Real map(s) ``x_p = sum_lm a_lm Y_lm(theta_p, phi_p)`` from ``m >= 0``
    coefficients."""
    alm = np.asarray(alm)
    l_max = lmax_from_size(alm.shape[-1])
    _check_lmax(grid, l_max)
    batch = alm.shape[:-1]
    alm = alm.reshape(-1, alm.shape[-1])
    table = grid.legendre_table(l_max)
    # per-ring Fourier coefficients F[b, ring, m]
    four = np.empty((alm.shape[0], grid.n_rings, l_max + 1), dtype=complex)
    for m in range(l_max + 1):
        blk = _block(m, l_max)
        four[:, :, m] = alm[:, blk] @ table[:, blk].T
    four[:, :, 1:] *= 2.0
    emm = np.arange(l_max + 1)
    out = np.empty((alm.shape[0], grid.n_pix))
    for npix, rings, pix in grid._ring_groups:
        g = four[:, rings, :] * np.exp(1j * np.outer(grid.ring_phi0[rings], emm))
        width = -(-(l_max + 1) // npix) * npix
        if width > l_max + 1:
            g = np.concatenate([g, np.zeros(g.shape[:-1] + (width - l_max - 1,))], axis=-1)
        folded = g.reshape(g.shape[:-1] + (width // npix, npix)).sum(axis=-2)
        out[:, pix] = np.fft.ifft(folded, axis=-1).real * npix
    return out.reshape(batch + (grid.n_pix,))


def _analyze_once(maps, grid, l_max):
    table = grid.legendre_table(l_max)
    emm = np.arange(l_max + 1)
    gm = np.empty((maps.shape[0], grid.n_rings, l_max + 1), dtype=complex)
    for npix, rings, pix in grid._ring_groups:
        spec = np.fft.fft(maps[:, pix], axis=-1)
        g = spec[..., emm % npix]
        gm[:, rings, :] = g * np.exp(-1j * np.outer(grid.ring_phi0[rings], emm))
    out = np.empty((maps.shape[0], n_alm(l_max)), dtype=complex)
    for m in range(l_max + 1):
        blk = _block(m, l_max)
        out[:, blk] = gm[:, :, m] @ table[:, blk]
    out *= grid.pixel_area
    out[:, : l_max + 1].imag = 0.0
    return out


def analyze(maps, grid, refine_iters=0, l_max=None):
    """Harmonic coefficients of real map(s) by equal-weight quadrature.

    ``refine_iters`` Jacobi steps ``a <- a + analyze(x - synthesize(a))``
    reduce the quadrature error for band-limited inputs.
    """
    maps = np.asarray(maps, dtype=float)
    if maps.shape[-1] != grid.n_pix:
        raise InvalidArgumentError(f"map length {maps.shape[-1]} does not match n_pix={grid.n_pix}")
    if refine_iters < 0:
        raise InvalidArgumentError("refine_iters must be >= 0")
    l_max = grid.l_max if l_max is None else l_max
    _check_lmax(grid, l_max)
    batch = maps.shape[:-1]
    flat = maps.reshape(-1, grid.n_pix)
    alm = _analyze_once(flat, grid, l_max)
    for _ in range(refine_iters):
        alm += _analyze_once(flat - synthesize(alm, grid), grid, l_max)
    return alm.reshape(batch + (alm.shape[-1],))


def power_spectrum(alm):
    """Angular power spectrum ``c_l = sum_m |a_lm|^2 / (2l + 1)``."""
    alm = np.asarray(alm)
    l_max = lmax_from_size(alm.shape[-1])
    ell, _ = alm_lm(l_max)
    power = np.abs(alm) ** 2 * alm_weights(l_max)
    flat = power.reshape(-1, power.shape[-1])
    cl = np.stack([np.bincount(ell, weights=row, minlength=l_max + 1) for row in flat])
    cl /= 2.0 * np.arange(l_max + 1) + 1.0
    return cl.reshape(alm.shape[:-1] + (l_max + 1,))


def convolve(alm, kernel):
    """Apply isotropic per-degree transfer function(s) ``kernel[..., l]``.

    ``kernel`` may carry leading axes that broadcast against those of ``alm``.
    """
    alm = np.asarray(alm)
    kernel = np.asarray(kernel, dtype=float)
    l_max = lmax_from_size(alm.shape[-1])
    if kernel.shape[-1] < l_max + 1:
        raise InvalidArgumentError(f"kernel covers {kernel.shape[-1]} degrees, need {l_max + 1}")
    ell, _ = alm_lm(l_max)
    return alm * kernel[..., ell]
