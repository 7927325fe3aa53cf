"""Spatially resolved twin-beam squeezing: Gaussian-state engine, transport, detection and analysis."""

from .analysis import DipFit, KappaResult, compute_kappa, fit_dip, optimize_attenuation
from .config import ExperimentConfig, build_config, load_config
from .detection import ScanResult, SlitParams, measure_noise, run_scan, slit_width_sweep
from .errors import (
    ConfigError,
    ContractError,
    DomainError,
    FitError,
    MeasurementError,
    NoDipError,
    PhysicalityError,
    TwinSimError,
)
from .lattice import FieldState, Grid1D, Grid2D, check_physicality, make_vacuum
from .montecarlo import McConfig, mc_noise, render_farfield, render_nearfield
from .pipeline import build_state, run_farfield, run_scan_pipeline
from .source import SourceParams, build_twin_beams, closed_form_noise
from .transport import ConduitParams, apply_attenuator, apply_conduit, apply_imaging_blur

__version__ = "0.1.0"

__all__ = [
    "ConduitParams", "ConfigError", "ContractError", "DipFit", "DomainError", "ExperimentConfig",
    "FieldState", "FitError", "Grid1D", "Grid2D", "KappaResult", "McConfig", "MeasurementError",
    "NoDipError", "PhysicalityError", "ScanResult", "SlitParams", "SourceParams", "TwinSimError",
    "apply_attenuator", "apply_conduit", "apply_imaging_blur", "build_config", "build_state",
    "build_twin_beams",
    "check_physicality", "closed_form_noise", "compute_kappa", "fit_dip", "load_config",
    "make_vacuum", "mc_noise", "measure_noise", "optimize_attenuation", "render_farfield",
    "render_nearfield", "run_farfield", "run_scan", "run_scan_pipeline", "slit_width_sweep",
]
