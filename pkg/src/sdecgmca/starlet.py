"""Spherical starlet transform built from harmonic-domain B3-spline filters.

The scaling function at scale ``j`` is ``Phi_j(l) = phi(2**j * l / (l_max + 1))``
with ``phi(t) = B3(2 t) / B3(0)``; details are differences of consecutive
scaling functions, so the detail bands plus the coarse band add up to the
input exactly.
"""

from dataclasses import dataclass

import numpy as np

from . import sphere
from .errors import InvalidArgumentError

DEFAULT_SCALES = 3


def b3_spline(t):
    t = np.abs(np.asarray(t, dtype=float))
    return (
        np.abs(t - 2) ** 3 - 4 * np.abs(t - 1) ** 3 + 6 * t**3 - 4 * np.abs(t + 1) ** 3 + (t + 2) ** 3
    ) / 12.0


def scaling_profile(t):
    """Low-pass profile, 1 at the origin and 0 for ``|t| >= 1``."""
    t = np.asarray(t, dtype=float)
    return np.where(np.abs(t) <= 1.0, b3_spline(2.0 * t) / b3_spline(0.0), 0.0)


@dataclass(frozen=True, eq=False)
class StarletFilters:
    """Detail filters ``h_j(l)`` for ``j = 1..J`` (row ``j - 1``, finest
    first) and the coarse filter ``Phi_J(l)``."""

    detail: np.ndarray
    coarse: np.ndarray

    @property
    def n_scales(self):
        return self.detail.shape[0]

    @property
    def l_max(self):
        return self.detail.shape[1] - 1

    @property
    def bands(self):
        """All ``J + 1`` filters stacked, coarse last."""
        return np.vstack([self.detail, self.coarse[None, :]])


@dataclass(frozen=True, eq=False)
class StarletDecomposition:
    """Detail bands ``(..., J, n)`` and coarse band ``(..., n)``, either as
    harmonic coefficients or as maps."""

    details: np.ndarray
    coarse: np.ndarray


def build_filters(l_max, n_scales=DEFAULT_SCALES):
    if n_scales < 1:
        raise InvalidArgumentError("need at least one detail scale")
    if 2**n_scales > l_max:
        raise InvalidArgumentError(f"{n_scales} scales is too many for l_max={l_max}")
    ell = np.arange(l_max + 1)
    phis = [np.ones(l_max + 1)]
    for j in range(1, n_scales + 1):
        phis.append(scaling_profile(2.0**j * ell / (l_max + 1.0)))
    detail = np.array([phis[j - 1] - phis[j] for j in range(1, n_scales + 1)])
    return StarletFilters(detail=detail, coarse=phis[-1])


def forward(alm, filters, grid=None, to_direct=False):
    """Split coefficients ``(..., n_alm)`` into starlet bands.

    With ``to_direct`` the bands are synthesized on ``grid``.
    """
    alm = np.asarray(alm)
    l_max = sphere.lmax_from_size(alm.shape[-1])
    if l_max != filters.l_max:
        raise InvalidArgumentError(f"coefficients have l_max={l_max}, filters {filters.l_max}")
    details = sphere.convolve(alm[..., None, :], filters.detail)
    coarse = sphere.convolve(alm, filters.coarse)
    if to_direct:
        if grid is None:
            raise InvalidArgumentError("a grid is required to synthesize the bands")
        details = sphere.synthesize(details, grid)
        coarse = sphere.synthesize(coarse, grid)
    return StarletDecomposition(details=details, coarse=coarse)


def inverse(decomp):
    """Additive reconstruction: sum of the detail bands and the coarse band."""
    if decomp.details.shape[:-2] + decomp.details.shape[-1:] != decomp.coarse.shape:
        raise InvalidArgumentError(
            f"detail bands {decomp.details.shape} do not match coarse band {decomp.coarse.shape}"
        )
    return decomp.details.sum(axis=-2) + decomp.coarse
