"""Discrete 2D Gabor filters and zero-mean unit-norm Morlet wavelets.

Both are generated on pixel grids. The Morlet wavelet is the zero-mean,
normalized variant of the Gabor filter; its correction constant and
normalization are computed on the discrete grid itself so that the discrete
mean is exactly zero and the discrete L2 norm exactly one, not just their
continuous-integral approximations. That matters downstream: any residual DC
component would leak into every sampling pattern built from the wavelet.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .imgcore import complex_grid


@dataclass(frozen=True)
class GaborParams:
    """Gabor filter parameters.

    x0, y0 : center, pixels
    a      : envelope scale, inverse pixels
    u0, v0 : modulation frequency, cycles/pixel (sub-Nyquist: |.| < 0.5)
    """

    x0: float
    y0: float
    a: float
    u0: float
    v0: float

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"envelope scale a must be > 0, got {self.a}")
        if abs(self.u0) >= 0.5 or abs(self.v0) >= 0.5:
            raise ValueError(f"modulation ({self.u0}, {self.v0}) at or above Nyquist")


@dataclass(frozen=True)
class MorletParams:
    """Morlet wavelet parameters.

    sigma : Gaussian envelope std, pixels
    n_p   : number of modulation periods within the envelope (dimensionless)
    theta : modulation orientation, radians in [0, pi)

    The modulation frequency is pi*n_p/(2*sigma) rad/pixel along theta; the
    sub-Nyquist guard n_p <= 2*sigma keeps it at or below pi rad/pixel.
    """

    sigma: float
    n_p: float
    theta: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if not self.n_p > 0:
            raise ValueError(f"n_p must be > 0, got {self.n_p}")
        if not 0.0 <= self.theta < np.pi:
            raise ValueError(f"theta must be in [0, pi), got {self.theta}")
        if self.n_p > 2.0 * self.sigma:
            raise ValueError(
                f"aliasing guard violated: n_p={self.n_p} > 2*sigma={2.0 * self.sigma}"
            )


def gabor_filter(p: GaborParams, width: int, height: int):
    """Complex Gabor filter sampled at integer pixel centers, unit L2 norm."""
    if width < 1 or height < 1:
        raise ValueError(f"grid must be at least 1x1, got {width}x{height}")
    x = np.arange(width, dtype=np.float64) - p.x0
    y = np.arange(height, dtype=np.float64) - p.y0
    dx, dy = np.meshgrid(x, y)  # row-major: [y, x]
    env = np.exp(-np.pi * (dx * dx + dy * dy) * (p.a * p.a))
    phase = -2.0 * np.pi * (p.u0 * dx + p.v0 * dy)
    g = env * np.exp(1j * phase)
    norm = np.linalg.norm(g)
    if norm == 0.0:
        raise ValueError("Gabor envelope underflowed to zero on this grid")
    return complex_grid(g / norm)


def morlet_wavelet(p: MorletParams, width: int, height: int):
    """Morlet wavelet centered at the grid center ((w-1)/2, (h-1)/2).

    The zero-mean constant is solved on the discrete grid (mean of the
    windowed carrier over mean of the envelope), then the result is scaled
    to unit discrete L2 norm. Warns when the grid is smaller than ~8*sigma
    per side, i.e. when the envelope is visibly truncated at the border.
    """
    if width < 1 or height < 1:
        raise ValueError(f"grid must be at least 1x1, got {width}x{height}")
    cx = (width - 1) / 2.0
    cy = (height - 1) / 2.0
    dx, dy = np.meshgrid(np.arange(width) - cx, np.arange(height) - cy)
    s2 = 2.0 * p.sigma * p.sigma
    env = np.exp(-(dx * dx + dy * dy) / s2)

    if min(width, height) < 8.0 * p.sigma:
        warnings.warn(
            f"grid {width}x{height} is below 8*sigma={8.0 * p.sigma:g}; "
            f"the envelope is truncated at the border",
            stacklevel=2,
        )

    freq = np.pi * p.n_p / (2.0 * p.sigma)
    carrier = np.exp(1j * freq * (dx * np.cos(p.theta) + dy * np.sin(p.theta)))
    kappa = (env * carrier).sum() / env.sum()
    g = env * (carrier - kappa)
    norm = np.linalg.norm(g)
    if norm == 0.0:
        raise ValueError("degenerate Morlet wavelet (zero norm) on this grid")
    return complex_grid(g / norm)


def morlet_zero_mean_constant(p: MorletParams, width: int, height: int) -> complex:
    """The discrete zero-mean constant used by morlet_wavelet.

    Converges to exp(-(pi*n_p/2)**2 / 2) as the grid grows.
    """
    cx = (width - 1) / 2.0
    cy = (height - 1) / 2.0
    dx, dy = np.meshgrid(np.arange(width) - cx, np.arange(height) - cy)
    env = np.exp(-(dx * dx + dy * dy) / (2.0 * p.sigma * p.sigma))
    freq = np.pi * p.n_p / (2.0 * p.sigma)
    carrier = np.exp(1j * freq * (dx * np.cos(p.theta) + dy * np.sin(p.theta)))
    return complex((env * carrier).sum() / env.sum())
