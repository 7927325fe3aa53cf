"""Multimode two-mode squeezed light from a seeded phase-insensitive amplifier.

The amplifier is a multimode two-mode squeezer

    a_p -> cosh(R) a_p + sinh(R) a_c^dag,   a_c -> cosh(R) a_c + sinh(R) a_p^dag

with a real symmetric squeeze matrix R = D K D. ``K`` is a circulant Gaussian
kernel with unit response to a uniform field and FWHM equal to the coherence
length; ``D = diag(sqrt(r(x)))`` carries the local squeeze parameter
r(x) = arccosh(sqrt(G(x))) set by the pump profile. Because any real
symmetric R gives a symplectic map, the output is pure for every gain profile.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError
from .lattice import FieldState, Grid1D

FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))


@dataclass(frozen=True)
class SourceParams:
    """Amplifier and seed parameters. Lengths in micrometres, waists are 1/e^2 intensity radii.

    ``pump_waist`` and ``seed_waist`` accept ``math.inf`` for a uniform pump or
    a plane-wave seed.
    """

    gain_peak: float = 1.5
    pump_waist: float = 1000.0
    coherence_length: float = 120.0
    seed_waist: float = 750.0
    seed_power: float = 1.0e6
    wavelength: float = 795.0

    def validate(self, grid: Grid1D | None = None) -> None:
        if not self.gain_peak > 1.0:
            raise ConfigError(f"source.gain_peak must be > 1, got {self.gain_peak}")
        if not self.pump_waist > 0:
            raise ConfigError("source.pump_waist must be > 0")
        if not self.coherence_length > 0:
            raise ConfigError("source.coherence_length must be > 0")
        if not self.seed_waist > self.coherence_length:
            raise ConfigError("source.seed_waist must exceed source.coherence_length")
        if not self.seed_power > 0:
            raise ConfigError("source.seed_power must be > 0")
        if grid is not None and self.coherence_length < 2.0 * grid.pitch:
            raise ConfigError(
                f"source.coherence_length ({self.coherence_length} um) must span at least two "
                f"pixels of pitch {grid.pitch} um"
            )

    @property
    def seed_diameter(self) -> float:
        return 2.0 * self.seed_waist


def gain_profile(x, gain_peak: float, pump_waist: float) -> np.ndarray:
    """Local single-pass gain G(x) = 1 + (G0 - 1) exp(-2 x^2 / w_pump^2)."""
    x = np.asarray(x, dtype=float)
    if math.isinf(pump_waist):
        return np.full_like(x, gain_peak)
    return 1.0 + (gain_peak - 1.0) * np.exp(-2.0 * x**2 / pump_waist**2)


def seed_amplitude(grid: Grid1D, p: SourceParams) -> np.ndarray:
    """Real seed amplitude per pixel, normalised to total flux ``seed_power``."""
    x = grid.x
    if math.isinf(p.seed_waist):
        shape = np.ones_like(x)
    else:
        shape = np.exp(-(x**2) / p.seed_waist**2)
    return shape * math.sqrt(p.seed_power / np.sum(shape**2))


def coherence_kernel(grid: Grid1D, coherence_length: float) -> np.ndarray:
    """Circulant Gaussian kernel of FWHM ``coherence_length``; eigenvalue 1 on the uniform mode."""
    n = grid.pixel_count
    sigma = coherence_length / FWHM_PER_SIGMA
    q = 2.0 * np.pi * np.fft.fftfreq(n, d=grid.pitch)
    first_row = np.fft.ifft(np.exp(-0.5 * (q * sigma) ** 2)).real
    idx = (np.arange(n)[None, :] - np.arange(n)[:, None]) % n
    return first_row[idx]


def squeeze_matrix(grid: Grid1D, p: SourceParams) -> np.ndarray:
    gain = gain_profile(grid.x, p.gain_peak, p.pump_waist)
    root = np.sqrt(np.arccosh(np.sqrt(gain)))
    return root[:, None] * coherence_kernel(grid, p.coherence_length) * root[None, :]


def _hyperbolic(r: np.ndarray, scale: float = 1.0):
    vals, vecs = np.linalg.eigh(0.5 * (r + r.T))
    ch = (vecs * np.cosh(scale * vals)) @ vecs.T
    sh = (vecs * np.sinh(scale * vals)) @ vecs.T
    return ch, sh


def build_twin_beams(grid: Grid1D, p: SourceParams) -> FieldState:
    """Seeded multimode twin beams; the conjugate seed input is vacuum."""
    p.validate(grid)
    r = squeeze_matrix(grid, p)
    seed = seed_amplitude(grid, p)
    ch, sh = _hyperbolic(r)
    ch2, sh2 = _hyperbolic(r, 2.0)

    n = grid.pixel_count
    cov = np.zeros((4 * n, 4 * n))
    xp, pp, xc, pc = (slice(k * n, (k + 1) * n) for k in range(4))
    for s in (xp, pp, xc, pc):
        cov[s, s] = ch2
    cov[xp, xc] = sh2
    cov[xc, xp] = sh2
    cov[pp, pc] = -sh2
    cov[pc, pp] = -sh2
    return FieldState(grid, ch @ seed, sh @ seed, 0.5 * (cov + cov.T))


def closed_form_noise(gain: float, eta_p: float, eta_c: float) -> float:
    """Intensity-difference variance relative to the QNL for a seeded single-mode amplifier.

    Probe and conjugate see total transmissions ``eta_p`` and ``eta_c``.
    """
    g = float(gain)
    if not g > 1.0:
        raise DomainError(f"gain must be > 1, got {gain}")
    for eta in (eta_p, eta_c):
        if not 0.0 < eta <= 1.0:
            raise DomainError(f"transmission must lie in (0, 1], got {eta}")
    num = (
        eta_p**2 * g * (2 * g - 1)
        + eta_c**2 * (g - 1) * (2 * g - 1)
        - 4 * eta_p * eta_c * g * (g - 1)
        + eta_p * (1 - eta_p) * g
        + eta_c * (1 - eta_c) * (g - 1)
    )
    return num / (eta_p * g + eta_c * (g - 1))


def to_db(v) -> np.ndarray | float:
    return 10.0 * np.log10(v)
