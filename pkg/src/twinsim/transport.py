"""Everything between the amplifier and the slits.

Conjugate attenuator, fibre-bundle conduit (fill/facet loss, per-fibre phase
screen, boundary cross-talk), imperfect imaging blur and detector efficiency.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, PhysicalityError
from .lattice import (
    FieldState,
    Grid1D,
    apply_beamsplitters,
    apply_loss,
    apply_passive,
    apply_phase,
    check_physicality,
)


@dataclass(frozen=True)
class ConduitParams:
    fiber_pitch: float = 12.0
    fill_transmission: float = 0.35
    facet_transmission: float = 0.857
    crosstalk_angle: float = 0.15
    phase_seed: int = 20180101
    output_na: float = 0.55

    def validate(self) -> None:
        if not self.fiber_pitch > 0:
            raise ConfigError("conduit.fiber_pitch must be > 0")
        for name in ("fill_transmission", "facet_transmission"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ConfigError(f"conduit.{name} must lie in (0, 1], got {v}")
        if not 0.0 <= self.crosstalk_angle <= math.pi / 2:
            raise ConfigError("conduit.crosstalk_angle must lie in [0, pi/2]")
        if not 0 <= int(self.phase_seed) < 2**64:
            raise ConfigError("conduit.phase_seed must be an unsigned 64-bit integer")

    @property
    def transmission(self) -> float:
        return self.fill_transmission * self.facet_transmission


@dataclass(frozen=True)
class AttenuatorSetting:
    transmission: float

    def __post_init__(self):
        if not 0.0 <= self.transmission <= 1.0:
            raise DomainError(f"attenuator transmission must lie in [0, 1], got {self.transmission}")


@dataclass(frozen=True)
class PhaseScreen:
    fiber_index: np.ndarray
    theta: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["fiber_index", "theta_radians"])
        for f, t in zip(self.fiber_index, self.theta):
            writer.writerow([int(f), repr(float(t))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "PhaseScreen":
        body = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
        rows = list(csv.DictReader(body))
        return cls(np.array([int(r["fiber_index"]) for r in rows]),
                   np.array([float(r["theta_radians"]) for r in rows]))


def apply_attenuator(state: FieldState, beam: str, a: AttenuatorSetting | float) -> FieldState:
    t = a.transmission if isinstance(a, AttenuatorSetting) else AttenuatorSetting(float(a)).transmission
    return apply_loss(state, beam, t)


def apply_detector_efficiency(state: FieldState, qe: float) -> FieldState:
    return apply_loss(state, "both", qe)


def fiber_assignment(grid: Grid1D, fiber_pitch: float) -> np.ndarray:
    """Fibre index of every pixel (nearest fibre centre; centres at multiples of the pitch)."""
    return np.floor(grid.x / fiber_pitch + 0.5).astype(np.int64)


def phase_screen(grid: Grid1D, p: ConduitParams) -> PhaseScreen:
    """Uniform random phase per fibre, drawn in ascending fibre order from ``phase_seed``."""
    fibers = np.unique(fiber_assignment(grid, p.fiber_pitch))
    rng = np.random.default_rng(int(p.phase_seed))
    return PhaseScreen(fibers, rng.uniform(0.0, 2.0 * np.pi, fibers.size))


def _check_pitch(grid: Grid1D, p: ConduitParams) -> None:
    if grid.pitch > p.fiber_pitch / 3.0 * (1 + 1e-12):
        raise ConfigError(
            f"grid pitch {grid.pitch} um is too coarse for fibre pitch {p.fiber_pitch} um "
            "(need at least 3 pixels per fibre)"
        )


def apply_conduit(state: FieldState, p: ConduitParams, beam: str = "probe",
                  screen: PhaseScreen | None = None, monitor=None) -> FieldState:
    """Fill/facet loss, then a random phase per fibre, then boundary-pixel cross-talk.

    ``screen`` overrides the phase screen drawn from ``p.phase_seed``; fibres
    missing from it get zero phase. ``monitor(stage_name, state)`` is called
    after every sub-channel.
    """
    p.validate()
    _check_pitch(state.grid, p)
    fibers = fiber_assignment(state.grid, p.fiber_pitch)
    if screen is None:
        screen = phase_screen(state.grid, p)

    out = apply_loss(state, beam, p.transmission)
    if monitor:
        monitor("conduit.loss", out)

    lookup = dict(zip(screen.fiber_index.tolist(), screen.theta.tolist()))
    theta = np.array([lookup.get(int(f), 0.0) for f in fibers])
    out = apply_phase(out, beam, theta)
    if monitor:
        monitor("conduit.phase", out)

    if p.crosstalk_angle > 0:
        boundary = np.flatnonzero(np.diff(fibers) != 0)
        out = apply_beamsplitters(out, beam, boundary, boundary + 1, p.crosstalk_angle)
        if monitor:
            monitor("conduit.crosstalk", out)
    return out


def blur_matrix(grid: Grid1D, kernel_sigma: float) -> np.ndarray:
    """Gaussian convolution matrix; the kernel sums to one before truncation at the grid edge."""
    x = grid.x
    d = x[:, None] - x[None, :]
    half = int(np.ceil(8.0 * kernel_sigma / grid.pitch))
    offsets = np.arange(-half, half + 1) * grid.pitch
    norm = np.exp(-0.5 * (offsets / kernel_sigma) ** 2).sum()
    return np.exp(-0.5 * (d / kernel_sigma) ** 2) / norm


def apply_imaging_blur(state: FieldState, beam: str, kernel_sigma: float) -> FieldState:
    """Imperfect imaging as a Gaussian blur of the field, with vacuum filling the lost modes.

    Raises PhysicalityError if the result fails the uncertainty check.
    """
    if not kernel_sigma >= 0:
        raise DomainError(f"kernel_sigma must be >= 0, got {kernel_sigma}")
    if kernel_sigma == 0:
        return state
    out = apply_passive(state, beam, blur_matrix(state.grid, kernel_sigma))
    report = check_physicality(out)
    if not report.ok:
        raise PhysicalityError(
            f"imaging blur produced nu_min = {report.min_symplectic_eigenvalue:.3e}"
        )
    return out
