"""Dip fitting, trough width relative to the beam, and conjugate attenuation balancing."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import DomainError, FitError, NoDipError
from .source import FWHM_PER_SIGMA, closed_form_noise

DIP_THRESHOLD_DB = 0.05
MAX_ITER = 200
STEP_TOL = 1e-9


@dataclass(frozen=True)
class DipFit:
    center: float
    sigma: float
    depth_db: float
    baseline_db: float
    rms_residual: float

    @property
    def fwhm(self) -> float:
        return FWHM_PER_SIGMA * self.sigma


@dataclass(frozen=True)
class KappaResult:
    kappa: float
    dip_fwhm: float
    beam_diameter: float


@dataclass(frozen=True)
class AttenuationResult:
    a_star: float
    v_min: float
    eta_c_star: float

    @property
    def attenuation(self) -> float:
        return 1.0 - self.a_star

    @property
    def v_min_db(self) -> float:
        return 10.0 * math.log10(self.v_min)


def _gauss(x, c, s):
    return np.exp(-0.5 * ((x - c) / s) ** 2)


def levenberg_marquardt(residual, jacobian, p0, max_iter=MAX_ITER, step_tol=STEP_TOL):
    """Damped Gauss-Newton minimisation of sum(residual(p)**2).

    Returns (p, rms). Raises FitError carrying the best iterate on non-convergence.
    """
    p = np.asarray(p0, dtype=float)
    r = residual(p)
    cost = r @ r
    lam = 1e-3
    for _ in range(max_iter):
        jac = jacobian(p)
        jtj = jac.T @ jac
        grad = jac.T @ r
        while True:
            damped = jtj + lam * np.diag(np.diag(jtj) + 1e-12)
            try:
                step = -np.linalg.solve(damped, grad)
            except np.linalg.LinAlgError:
                step = -np.linalg.lstsq(damped, grad, rcond=None)[0]
            trial = p + step
            r_trial = residual(trial)
            cost_trial = r_trial @ r_trial
            if np.isfinite(cost_trial) and cost_trial <= cost:
                p, r, cost = trial, r_trial, cost_trial
                lam = max(lam / 3.0, 1e-12)
                break
            lam *= 4.0
            if lam > 1e12:
                break
        if np.linalg.norm(step) < step_tol * (1.0 + np.linalg.norm(p)) or lam > 1e12:
            return p, math.sqrt(cost / r.size)
    raise FitError("Gauss-Newton did not converge", best=(p, math.sqrt(cost / r.size)))


def _linear_amplitudes(x, y, c, s):
    basis = np.column_stack([np.ones_like(x), _gauss(x, c, s)])
    coef, *_ = np.linalg.lstsq(basis, y, rcond=None)
    res = basis @ coef - y
    return coef, res @ res


def fit_dip(positions, noise_db) -> DipFit:
    """Fit baseline + depth * exp(-(x - c)^2 / 2 sigma^2) to a noise trace.

    A coarse grid over (c, sigma), with the linear parameters solved exactly,
    seeds a damped Gauss-Newton refinement of all four parameters.
    """
    x = np.asarray(positions, dtype=float)
    y = np.asarray(noise_db, dtype=float)
    ok = np.isfinite(y)
    x, y = x[ok], y[ok]
    if x.size < 5:
        raise DomainError("fit_dip needs at least 5 points")
    if y.min() > np.median(y) - DIP_THRESHOLD_DB:
        raise NoDipError("no dip detected")

    span = x.max() - x.min()
    spacing = np.min(np.diff(np.sort(x)))
    best = None
    for c in np.linspace(x.min(), x.max(), 41):
        for s in np.geomspace(max(spacing / 2, span / 400), span / 2, 30):
            coef, sse = _linear_amplitudes(x, y, c, s)
            if coef[1] < 0 and (best is None or sse < best[0]):
                best = (sse, coef[0], coef[1], c, s)
    if best is None:
        raise NoDipError("no dip detected")
    _, b0, d0, c0, s0 = best

    def residual(p):
        b, d, c, s = p
        return b + d * _gauss(x, c, s) - y

    def jacobian(p):
        b, d, c, s = p
        g = _gauss(x, c, s)
        u = (x - c) / s
        return np.column_stack([np.ones_like(x), g, d * g * u / s, d * g * u**2 / s])

    (b, d, c, s), rms = levenberg_marquardt(residual, jacobian, [b0, d0, c0, s0])
    s = abs(s)
    if d >= 0:
        raise NoDipError("fitted depth is not negative")
    return DipFit(float(c), float(s), float(d), float(b), float(rms))


def fit_beam_profile(positions, intensity):
    """Gaussian fit I = A exp(-2 (x - x0)^2 / w^2); returns (amplitude, x0, w)."""
    x = np.asarray(positions, dtype=float)
    y = np.asarray(intensity, dtype=float)
    if x.size < 4 or not np.any(y > 0):
        raise FitError("beam profile has no light")
    scale = y.max()
    yn = y / scale
    total = yn.sum()
    x0 = (x * yn).sum() / total
    w0 = 2.0 * math.sqrt(max(((x - x0) ** 2 * yn).sum() / total, (x[1] - x[0]) ** 2))

    def residual(p):
        a, c, w = p
        return a * np.exp(-2.0 * (x - c) ** 2 / w**2) - yn

    def jacobian(p):
        a, c, w = p
        e = np.exp(-2.0 * (x - c) ** 2 / w**2)
        return np.column_stack([e, a * e * 4.0 * (x - c) / w**2, a * e * 4.0 * (x - c) ** 2 / w**3])

    try:
        (a, c, w), _ = levenberg_marquardt(residual, jacobian, [1.0, x0, w0])
    except FitError as exc:
        raise FitError(f"beam profile fit failed: {exc}", best=exc.best) from exc
    return float(a * scale), float(c), float(abs(w))


def kappa_from_diameter(fit: DipFit, beam_diameter: float) -> KappaResult:
    if not beam_diameter > 0:
        raise DomainError("beam diameter must be > 0")
    return KappaResult(float(fit.fwhm / beam_diameter), float(fit.fwhm), float(beam_diameter))


def compute_kappa(fit: DipFit, positions, conj_intensity) -> KappaResult:
    """Dip FWHM over the 1/e^2 intensity diameter of the fitted conjugate profile."""
    _, _, w = fit_beam_profile(positions, conj_intensity)
    return kappa_from_diameter(fit, 2.0 * w)


def _stationary_eta_c(gain: float, eta_p: float) -> np.ndarray:
    """Real roots of dV/d(eta_c) = 0 for the closed-form noise (a quadratic in eta_c)."""
    g = gain
    a2 = 2.0 * (g - 1.0) ** 2
    a1 = (g - 1.0) * (1.0 - 4.0 * eta_p * g)
    a0 = eta_p**2 * g * (2 * g - 1) + eta_p * (1 - eta_p) * g
    d0, d1 = eta_p * g, g - 1.0
    roots = np.roots([a2 * d1, 2.0 * a2 * d0, a1 * d0 - a0 * d1])
    return roots[np.isreal(roots)].real


def optimize_attenuation(gain: float, eta_p: float, eta_c_max: float) -> AttenuationResult:
    """Conjugate transmission a in [0, 1] minimising closed_form_noise(G, eta_p, a * eta_c_max)."""
    if not gain > 1.0:
        raise DomainError(f"gain must be > 1, got {gain}")
    for eta in (eta_p, eta_c_max):
        if not 0.0 < eta <= 1.0:
            raise DomainError(f"transmission must lie in (0, 1], got {eta}")

    def v(a):
        # a = 0 removes the conjugate entirely; the formula's limit there is the probe alone.
        return closed_form_noise(gain, eta_p, max(a, 1e-300) * eta_c_max)

    inside = [r / eta_c_max for r in _stationary_eta_c(gain, eta_p) if 0.0 < r < eta_c_max]
    if inside:
        candidates = inside + [0.0, 1.0]
    else:
        res = minimize_scalar(v, bounds=(0.0, 1.0), method="bounded",
                              options={"xatol": 1e-12})
        candidates = [float(res.x), 0.0, 1.0]
    a_star = min(candidates, key=v)
    return AttenuationResult(float(a_star), float(v(a_star)), float(a_star * eta_c_max))


def attenuation_curve(gain: float, eta_p: float, eta_c_max: float, points: int = 101):
    a = np.linspace(0.0, 1.0, points)[1:]
    return a, np.array([closed_form_noise(gain, eta_p, ai * eta_c_max) for ai in a])


def fit_report_csv(rows, config_hash: str = "") -> str:
    """One row per trace: probe position, centre, sigma, depth, baseline, rms, kappa."""
    buf = io.StringIO()
    buf.write(f"# config_hash={config_hash}\n")
    buf.write("# kappa = dip FWHM / conjugate 1/e^2 intensity diameter\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["probe_center_um", "center_um", "sigma_um", "depth_db", "baseline_db",
                     "rms_db", "kappa", "status"])
    for probe_center, fit, kappa, status in rows:
        if fit is None:
            writer.writerow([repr(float(probe_center)), "nan", "nan", "nan", "nan", "nan", "nan", status])
            continue
        values = [probe_center, fit.center, fit.sigma, fit.depth_db, fit.baseline_db, fit.rms_residual]
        writer.writerow([repr(float(v)) for v in values]
                        + ["nan" if kappa is None else repr(float(kappa.kappa)), status])
    return buf.getvalue()
