"""Release-gate checks run by ``twinsim selftest``.

Each check returns a named :class:`Check`; a fault hook lets tests prove that a
corrupted covariance is caught and reported under the right invariant.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace

import numpy as np

from .detection import SlitParams, measure_noise, run_scan
from .errors import PhysicalityError
from .lattice import Grid1D, apply_beamsplitters, apply_loss, apply_phase, check_physicality
from .montecarlo import McConfig, mc_noise
from .source import SourceParams, build_twin_beams, closed_form_noise
from .transport import ConduitParams, apply_conduit, apply_imaging_blur

FAULTS = ("cov", "asymmetric", "phase")

GRID = Grid1D.centered(64, 4.0)
UNIFORM = SourceParams(gain_peak=1.5, pump_waist=math.inf, coherence_length=16.0,
                       seed_waist=math.inf, seed_power=1.0e4)
GAINS = (1.2, 1.5, 2.0)
ETAS = (0.3, 0.7, 1.0)


@dataclass(frozen=True)
class Check:
    name: str
    ok: bool
    detail: str


def full_slit(grid: Grid1D) -> SlitParams:
    return SlitParams(float(grid.x.mean()), grid.span + grid.pitch)


def _corrupt(state, fault):
    if fault == "cov":
        return state.replace(cov=0.5 * state.cov)
    if fault == "asymmetric":
        cov = state.cov.copy()
        cov[0, 1] += 1e-3
        return state.replace(cov=cov)
    return state


def lossy_uniform_state(gain: float, eta_p: float, eta_c: float, grid: Grid1D = GRID):
    s = build_twin_beams(grid, replace(UNIFORM, gain_peak=gain))
    return apply_loss(apply_loss(s, "probe", eta_p), "conj", eta_c)


def check_closed_form(fault=None) -> Check:
    worst = 0.0
    slit = full_slit(GRID)
    for g, ep, ec in itertools.product(GAINS, ETAS, ETAS):
        state = _corrupt(lossy_uniform_state(g, ep, ec), fault)
        v = measure_noise(state, slit, slit).v_rel
        worst = max(worst, abs(v - closed_form_noise(g, ep, ec)))
    return Check("closed_form_vs_engine", worst < 1e-6, f"max |dV| = {worst:.2e} (tol 1e-6)")


def check_monte_carlo(n_samples: int = 200_000, threads: int = 1, fault=None) -> Check:
    worst = 0.0
    slit = full_slit(GRID)
    for k, (g, ep, ec) in enumerate([(1.5, 1.0, 1.0), (2.0, 0.3, 0.7), (1.2, 0.7, 0.3)]):
        state = _corrupt(lossy_uniform_state(g, ep, ec), fault)
        est = mc_noise(state, slit, slit, McConfig(n_samples, 1000 + k), threads=threads)
        worst = max(worst, abs(est.v_rel_estimate - closed_form_noise(g, ep, ec)) / est.std_error)
    return Check("monte_carlo_vs_closed_form", worst < 4.0, f"max deviation = {worst:.2f} s.e. (tol 4)")


def check_channel_physicality(fault=None) -> Check:
    """Chain of every channel type on a non-uniform source; nu_min after each step."""
    rng = np.random.default_rng(7)
    grid = Grid1D.centered(48, 4.0)
    src = SourceParams(gain_peak=1.8, pump_waist=80.0, coherence_length=12.0, seed_waist=60.0)
    state = _corrupt(build_twin_beams(grid, src), fault)
    steps = [
        ("source", lambda s: s),
        ("loss", lambda s: apply_loss(s, "conj", rng.uniform(0.1, 1.0, grid.pixel_count))),
        ("phase", lambda s: apply_phase(s, "probe", rng.uniform(0, 2 * np.pi, grid.pixel_count))),
        ("beamsplitters", lambda s: apply_beamsplitters(s, "probe", np.arange(0, 46, 2),
                                                         np.arange(1, 47, 2), 0.4)),
        ("blur", lambda s: apply_imaging_blur(s, "probe", 6.0)),
    ]
    nu = []
    try:
        for stage, op in steps:
            state = op(state)
            nu.append((stage, check_physicality(state).min_symplectic_eigenvalue))
            if nu[-1][1] < 1 - 1e-9:
                break
    except PhysicalityError as exc:
        return Check("physicality", False, str(exc))
    except Exception as exc:  # contract violations are reported by name
        return Check("physicality", False, f"{type(exc).__name__}: {exc}")
    stage, low = min(nu, key=lambda t: t[1])
    return Check("physicality", low >= 1 - 1e-9, f"min nu = {low:.12f} after {stage} (tol 1 - 1e-9)")


def check_phase_invariance(n_seeds: int = 10, fault=None) -> Check:
    grid = Grid1D.centered(96, 4.0)
    src = SourceParams(gain_peak=1.5, pump_waist=200.0, coherence_length=16.0, seed_waist=150.0)
    base = build_twin_beams(grid, src)
    centers = np.arange(-120.0, 121.0, 24.0)

    def noise_map(seed):
        p = ConduitParams(crosstalk_angle=0.0, phase_seed=seed)
        st = apply_conduit(base, p)
        if fault == "phase" and seed % 2:
            st = apply_phase(st, "probe", np.linspace(0, np.pi, grid.pixel_count))
            st = apply_beamsplitters(st, "probe", np.arange(0, 94, 2), np.arange(1, 95, 2), 0.3)
        return run_scan(st, 24.0, centers, centers).noise_db

    ref = noise_map(0)
    worst = max(float(np.max(np.abs(noise_map(s) - ref))) for s in range(1, n_seeds + 1))
    return Check("phase_screen_invariance", worst < 1e-9,
                 f"{n_seeds} seeds, max |d noise| = {worst:.2e} dB (tol 1e-9)")


def run_selftest(threads: int = 1, fault: str | None = None) -> list[Check]:
    if fault is not None and fault not in FAULTS:
        raise ValueError(f"unknown fault {fault!r}; choose from {FAULTS}")
    return [
        check_closed_form(fault),
        check_monte_carlo(threads=threads, fault=fault),
        check_channel_physicality(fault),
        check_phase_invariance(fault=fault),
    ]
