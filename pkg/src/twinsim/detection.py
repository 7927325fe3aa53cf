"""Slit selection and balanced detection of the intensity difference."""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, MeasurementError
from .lattice import FieldState


@dataclass(frozen=True)
class SlitParams:
    """Hard-edged slit transmitting pixels with centre in [center - width/2, center + width/2)."""

    center: float
    width: float

    def mask(self, x: np.ndarray) -> np.ndarray:
        if not self.width > 0:
            raise DomainError(f"slit width must be > 0, got {self.width}")
        lo = self.center - 0.5 * self.width
        m = (x >= lo) & (x < lo + self.width)
        if not m.any():
            raise DomainError(f"slit at {self.center} um (width {self.width} um) misses the grid")
        return m


@dataclass(frozen=True)
class NoiseReading:
    v_rel: float
    db: float
    qnl_flux: float


def detection_weights(state: FieldState, slit_p: SlitParams, slit_c: SlitParams) -> np.ndarray:
    """Linearised photocurrent-difference weights on the quadrature vector.

    Each pixel contributes Re(alpha) dX + Im(alpha) dP, i.e. the quadrature
    along its local mean-field phase, weighted by |alpha|.
    """
    x = state.grid.x
    w = np.zeros(4 * state.n)
    for beam, slit, sign in (("probe", slit_p, 1.0), ("conj", slit_c, -1.0)):
        m = slit.mask(x)
        mean = state.mean(beam)
        w[state.block(beam, "X")][m] = sign * mean.real[m]
        w[state.block(beam, "P")][m] = sign * mean.imag[m]
    return w


def measure_noise(state: FieldState, slit_p: SlitParams, slit_c: SlitParams) -> NoiseReading:
    """Photocurrent-difference variance relative to the shot noise of the detected flux.

    The state is assumed physical; this is not re-checked here.
    """
    w = detection_weights(state, slit_p, slit_c)
    support = np.flatnonzero(w)
    qnl = float(w @ w)
    if support.size == 0 or qnl <= 0.0:
        raise MeasurementError("no light on detector")
    ws = w[support]
    v = float(ws @ state.cov[np.ix_(support, support)] @ ws) / qnl
    return NoiseReading(v, 10.0 * np.log10(v), qnl)


@dataclass(eq=False)
class ScanResult:
    probe_positions: np.ndarray
    conj_positions: np.ndarray
    noise_db: np.ndarray
    qnl_flux: np.ndarray
    metadata: dict = field(default_factory=dict)
    config_hash: str = ""

    def trace(self, i: int):
        """(conjugate positions, noise in dB) for probe position ``i``, dark points dropped."""
        row = self.noise_db[i]
        ok = np.isfinite(row)
        return self.conj_positions[ok], row[ok]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# config_hash={self.config_hash}\n")
        buf.write("# metadata=" + json.dumps(self.metadata, sort_keys=True, separators=(",", ":")) + "\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["probe_center_um", "conj_center_um", "noise_db", "qnl_flux"])
        for i, xp in enumerate(self.probe_positions):
            for j, xc in enumerate(self.conj_positions):
                writer.writerow([_fmt(xp), _fmt(xc), _fmt(self.noise_db[i, j]), _fmt(self.qnl_flux[i, j])])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ScanResult":
        config_hash, metadata, rows = "", {}, []
        for line in text.splitlines():
            if line.startswith("# config_hash="):
                config_hash = line.split("=", 1)[1]
            elif line.startswith("# metadata="):
                metadata = json.loads(line.split("=", 1)[1])
            elif line and not line.startswith("#"):
                rows.append(line)
        reader = csv.DictReader(rows)
        data = [(float(r["probe_center_um"]), float(r["conj_center_um"]),
                 float(r["noise_db"]), float(r["qnl_flux"])) for r in reader]
        arr = np.array(data, dtype=float).reshape(-1, 4)
        probe = np.unique(arr[:, 0])
        conj = np.unique(arr[:, 1])
        noise = np.full((probe.size, conj.size), np.nan)
        flux = np.zeros_like(noise)
        i = np.searchsorted(probe, arr[:, 0])
        j = np.searchsorted(conj, arr[:, 1])
        noise[i, j] = arr[:, 2]
        flux[i, j] = arr[:, 3]
        return cls(probe, conj, noise, flux, metadata, config_hash)


def _fmt(v: float) -> str:
    if not np.isfinite(v):
        return "nan"
    return repr(float(v))


def _check_monotone(values, name):
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise DomainError(f"{name} must be a non-empty list")
    d = np.diff(arr)
    if arr.size > 1 and not (np.all(d > 0) or np.all(d < 0)):
        raise DomainError(f"{name} must be strictly monotone")
    return arr


def run_scan(state: FieldState, slit_width: float, probe_centers, conj_centers,
             threads: int = 1, metadata: dict | None = None, config_hash: str = "") -> ScanResult:
    """Noise map over all (probe, conjugate) slit positions.

    Points where both slits are dark are stored as NaN. Rows are evaluated
    independently and may run on ``threads`` workers; the output order does not
    depend on the thread count.
    """
    probe = _check_monotone(probe_centers, "probe_centers")
    conj = _check_monotone(conj_centers, "conj_centers")

    def row(xp):
        out_db = np.full(conj.size, np.nan)
        out_flux = np.zeros(conj.size)
        for j, xc in enumerate(conj):
            try:
                r = measure_noise(state, SlitParams(xp, slit_width), SlitParams(xc, slit_width))
            except MeasurementError:
                continue
            out_db[j], out_flux[j] = r.db, r.qnl_flux
        return out_db, out_flux

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(row, probe))
    else:
        rows = [row(xp) for xp in probe]
    noise = np.array([r[0] for r in rows])
    flux = np.array([r[1] for r in rows])
    return ScanResult(probe, conj, noise, flux, dict(metadata or {}), config_hash)


def slit_width_sweep(state: FieldState, widths, probe_center: float = 0.0,
                     conj_center: float | None = None) -> list[float]:
    """Noise in dB at matched slits for each width (widths positive, descending)."""
    widths = [float(w) for w in widths]
    if any(w <= 0 for w in widths) or any(b >= a for a, b in zip(widths, widths[1:])):
        raise DomainError("widths must be positive and strictly descending")
    xc = probe_center if conj_center is None else conj_center
    return [measure_noise(state, SlitParams(probe_center, w), SlitParams(xc, w)).db for w in widths]
