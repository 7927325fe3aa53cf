"""End-to-end runs assembled from a validated :class:`ExperimentConfig`."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import analysis
from .config import ExperimentConfig
from .detection import ScanResult, run_scan
from .errors import FitError, NoDipError, PhysicalityError
from .lattice import FieldState, check_physicality
from .montecarlo import (
    fiber_phases,
    gaussian_intensity,
    nearfield_field,
    render_farfield,
    render_nearfield,
)
from .source import build_twin_beams
from .transport import (
    ConduitParams,
    apply_attenuator,
    apply_conduit,
    apply_detector_efficiency,
    apply_imaging_blur,
)


@dataclass
class PhysicalityMonitor:
    """Records the minimum symplectic eigenvalue after every channel."""

    tol: float = 1e-9
    records: list = field(default_factory=list)

    def __call__(self, stage: str, state: FieldState) -> None:
        report = check_physicality(state, self.tol)
        self.records.append((stage, report.min_symplectic_eigenvalue))
        if not report.ok:
            raise PhysicalityError(
                f"after {stage}: minimum symplectic eigenvalue {report.min_symplectic_eigenvalue:.12f}"
            )

    @property
    def worst(self) -> float:
        return min(v for _, v in self.records)


def probe_transmission(cfg: ExperimentConfig) -> float:
    t = cfg.detector_qe
    if cfg.conduit is not None:
        t *= cfg.conduit.transmission
    return t


def resolve_attenuator(cfg: ExperimentConfig) -> float:
    if cfg.attenuator != "optimal":
        return float(cfg.attenuator)
    opt = analysis.optimize_attenuation(cfg.source.gain_peak, probe_transmission(cfg), cfg.detector_qe)
    return opt.a_star


def build_state(cfg: ExperimentConfig, monitor=None) -> FieldState:
    """Source, conjugate attenuator, probe imaging blur and conduit, detector efficiency.

    The blur models imperfect imaging onto the conduit input, so it acts before
    the fibre phase screen.
    """
    state = build_twin_beams(cfg.grid, cfg.source)
    if monitor:
        monitor("source", state)
    a = resolve_attenuator(cfg)
    if a != 1.0:
        state = apply_attenuator(state, "conj", a)
        if monitor:
            monitor("attenuator", state)
    if cfg.imaging_blur > 0:
        state = apply_imaging_blur(state, "probe", cfg.imaging_blur)
        if monitor:
            monitor("imaging_blur", state)
    if cfg.conduit is not None:
        state = apply_conduit(state, cfg.conduit, monitor=monitor)
    state = apply_detector_efficiency(state, cfg.detector_qe)
    if monitor:
        monitor("detector", state)
    return state


@dataclass
class TraceFit:
    probe_center: float
    fit: analysis.DipFit | None
    kappa: analysis.KappaResult | None
    status: str


def fit_scan(scan: ScanResult, profile_x, conj_intensity) -> list[TraceFit]:
    """Dip fit and kappa for every probe row; failures are recorded, not raised."""
    out = []
    for i, xp in enumerate(scan.probe_positions):
        x, y = scan.trace(i)
        try:
            fit = analysis.fit_dip(x, y)
            kappa = analysis.compute_kappa(fit, profile_x, conj_intensity)
            out.append(TraceFit(float(xp), fit, kappa, "ok"))
        except NoDipError:
            out.append(TraceFit(float(xp), None, None, "no dip"))
        except FitError as exc:
            out.append(TraceFit(float(xp), None, None, f"fit failed: {exc}"))
    return out


def mean_kappa(fits: list[TraceFit]) -> float:
    vals = [f.kappa.kappa for f in fits if f.kappa is not None]
    return float(np.mean(vals)) if vals else float("nan")


@dataclass
class ScanRun:
    state: FieldState
    scan: ScanResult
    fits: list
    attenuator: float

    @property
    def kappa(self) -> float:
        return mean_kappa(self.fits)


def run_scan_pipeline(cfg: ExperimentConfig, threads: int = 1, monitor=None) -> ScanRun:
    state = build_state(cfg, monitor)
    a = resolve_attenuator(cfg)
    meta = {
        "slit_width_um": cfg.slit_width,
        "attenuator_transmission": a,
        "beam_diameter_convention": "1/e^2 intensity diameter",
        "config": cfg.raw | {"output": None},
    }
    scan = run_scan(state, cfg.slit_width, cfg.probe_centers, cfg.conj_centers, threads=threads,
                    metadata=meta, config_hash=cfg.config_hash)
    fits = fit_scan(scan, cfg.grid.x, state.intensity("conj"))
    return ScanRun(state, scan, fits, a)


def profile_csv(state: FieldState, config_hash: str) -> str:
    lines = [f"# config_hash={config_hash}", "x_um,probe_intensity,conj_intensity"]
    for x, ip, ic in zip(state.grid.x, state.intensity("probe"), state.intensity("conj")):
        lines.append(f"{float(x)!r},{float(ip)!r},{float(ic)!r}")
    return "\n".join(lines) + "\n"


def read_profile_csv(text: str):
    rows = [ln for ln in text.splitlines() if ln and not ln.startswith("#")][1:]
    arr = np.array([[float(v) for v in ln.split(",")] for ln in rows])
    return arr[:, 0], arr[:, 1], arr[:, 2]


@dataclass
class FarfieldRun:
    nearfield: object
    random_image: np.ndarray
    random_stats: object
    zero_image: np.ndarray
    zero_stats: object
    power_in: float
    power_out: float


def run_farfield(cfg: ExperimentConfig) -> FarfieldRun:
    conduit = cfg.conduit or ConduitParams()
    grid2d = cfg.mc.grid2d
    illum = gaussian_intensity(grid2d, cfg.nearfield_waist)
    nf = render_nearfield(illum, grid2d, conduit, rng_seed=cfg.mc.rng_seed)
    field_rand = nearfield_field(nf, fiber_phases(nf.fiber_count, conduit.phase_seed))
    field_zero = nearfield_field(nf, fiber_phases(nf.fiber_count, conduit.phase_seed, zero=True))
    img_r, st_r = render_farfield(field_rand)
    img_z, st_z = render_farfield(field_zero)
    return FarfieldRun(nf, img_r, st_r, img_z, st_z,
                       float(np.sum(np.abs(field_rand) ** 2)), float(img_r.sum()))
