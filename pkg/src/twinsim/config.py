"""Experiment configuration: JSON loading, validation, seed overrides and hashing.

Lengths are micrometres. ``null`` for a waist means infinite (uniform pump or
plane-wave seed). Unknown keys are rejected at every level.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import os
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError
from .lattice import Grid1D, Grid2D
from .montecarlo import McConfig
from .source import SourceParams
from .transport import ConduitParams

SEED_ENV = "TWINSIM_SEED"

DEFAULTS = {
    "grid": {"pixel_count": 512, "pitch": 4.0},
    "source": {
        "gain_peak": 1.5,
        "pump_waist": 1000.0,
        "coherence_length": 120.0,
        "seed_waist": 750.0,
        "seed_power": 1.0e6,
        "wavelength": 795.0,
    },
    "conduit": None,
    "imaging_blur": 0.0,
    "attenuator": 1.0,
    "detector_qe": 0.95,
    "slit_width": 225.0,
    "scan": {
        "probe_centers": {"start": -300.0, "stop": 300.0, "step": 150.0},
        "conj_centers": {"start": -900.0, "stop": 900.0, "step": 20.0},
    },
    "mc": {
        "n_samples": 1000000,
        "rng_seed": 12345,
        "grid2d": {"nx": 512, "ny": 512, "pitch": 1.5},
        "nearfield_waist": 200.0,
    },
    "output": {"dir": "out", "figures": True},
}

CONDUIT_DEFAULTS = {
    "fiber_pitch": 12.0,
    "fill_transmission": 0.35,
    "facet_transmission": 0.857,
    "crosstalk_angle": 0.15,
    "phase_seed": 20180101,
    "output_na": 0.55,
}

BUNDLED = ("freespace.json", "conduit.json")


@dataclass(frozen=True)
class ExperimentConfig:
    grid: Grid1D
    source: SourceParams
    conduit: ConduitParams | None
    imaging_blur: float
    attenuator: float | str
    detector_qe: float
    slit_width: float
    probe_centers: np.ndarray
    conj_centers: np.ndarray
    mc: McConfig
    nearfield_waist: float
    output_dir: str
    figures: bool
    raw: dict

    @property
    def config_hash(self) -> str:
        return config_hash(self.raw)


def _merge(defaults, given, path):
    if given is None:
        return copy.deepcopy(defaults)
    if not isinstance(given, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    unknown = set(given) - set(defaults)
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown key(s) {sorted(unknown)}")
    out = {}
    for key, default in defaults.items():
        sub = f"{path}.{key}" if path else key
        if key not in given:
            out[key] = copy.deepcopy(default)
        elif isinstance(default, dict) and key not in ("probe_centers", "conj_centers"):
            out[key] = _merge(default, given[key], sub)
        else:
            out[key] = copy.deepcopy(given[key])
    return out


def _number(value, path, lo=None, hi=None, allow_inf=False):
    if value is None and allow_inf:
        return math.inf
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    v = float(value)
    if not math.isfinite(v):
        raise ConfigError(f"{path}: must be finite")
    if (lo is not None and v < lo) or (hi is not None and v > hi):
        raise ConfigError(f"{path}: {v} outside [{lo}, {hi}]")
    return v


def _integer(value, path, lo=None, hi=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    if (lo is not None and value < lo) or (hi is not None and value > hi):
        raise ConfigError(f"{path}: {value} outside [{lo}, {hi}]")
    return value


def _positions(value, path):
    if isinstance(value, dict):
        unknown = set(value) - {"start", "stop", "step"}
        if unknown or len(value) != 3:
            raise ConfigError(f"{path}: range needs exactly start, stop, step")
        start = _number(value["start"], f"{path}.start")
        stop = _number(value["stop"], f"{path}.stop")
        step = _number(value["step"], f"{path}.step", lo=1e-9)
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        if n < 1:
            raise ConfigError(f"{path}: empty range")
        return start + step * np.arange(n)
    if isinstance(value, list) and value:
        arr = np.array([_number(v, f"{path}[{i}]") for i, v in enumerate(value)])
        if arr.size > 1 and not np.all(np.diff(arr) > 0):
            raise ConfigError(f"{path}: positions must be strictly increasing")
        return arr
    raise ConfigError(f"{path}: expected a non-empty list or a start/stop/step range")


def resolve_seed(cli_seed: int | None = None) -> int | None:
    if cli_seed is not None:
        return int(cli_seed)
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return int(env)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an unsigned integer, got {env!r}") from exc
    return None


def build_config(data: dict, seed: int | None = None, output_dir: str | None = None) -> ExperimentConfig:
    """Validate a parsed JSON document and apply seed/output overrides."""
    raw = _merge(DEFAULTS, data, "")
    if raw["conduit"] is not None:
        raw["conduit"] = _merge(CONDUIT_DEFAULTS, raw["conduit"], "conduit")
    if seed is not None:
        _integer(seed, "seed", 0, 2**64 - 1)
        raw["mc"]["rng_seed"] = seed
        if raw["conduit"] is not None:
            raw["conduit"]["phase_seed"] = seed
    if output_dir is not None:
        raw["output"]["dir"] = str(output_dir)

    try:
        g = raw["grid"]
        grid = Grid1D.centered(_integer(g["pixel_count"], "grid.pixel_count", 2, 4096),
                               _number(g["pitch"], "grid.pitch", lo=1e-6))
        s = raw["source"]
        source = SourceParams(
            gain_peak=_number(s["gain_peak"], "source.gain_peak"),
            pump_waist=_number(s["pump_waist"], "source.pump_waist", lo=1e-9, allow_inf=True),
            coherence_length=_number(s["coherence_length"], "source.coherence_length", lo=1e-9),
            seed_waist=_number(s["seed_waist"], "source.seed_waist", lo=1e-9, allow_inf=True),
            seed_power=_number(s["seed_power"], "source.seed_power", lo=1e-300),
            wavelength=_number(s["wavelength"], "source.wavelength", lo=1e-9),
        )
        source.validate(grid)

        conduit = None
        if raw["conduit"] is not None:
            c = raw["conduit"]
            conduit = ConduitParams(
                fiber_pitch=_number(c["fiber_pitch"], "conduit.fiber_pitch", lo=1e-9),
                fill_transmission=_number(c["fill_transmission"], "conduit.fill_transmission"),
                facet_transmission=_number(c["facet_transmission"], "conduit.facet_transmission"),
                crosstalk_angle=_number(c["crosstalk_angle"], "conduit.crosstalk_angle"),
                phase_seed=_integer(c["phase_seed"], "conduit.phase_seed", 0, 2**64 - 1),
                output_na=_number(c["output_na"], "conduit.output_na", 0.0, 1.0),
            )
            conduit.validate()
            if grid.pitch > conduit.fiber_pitch / 3.0:
                raise ConfigError("grid.pitch: need at least 3 pixels per fibre (pitch <= fiber_pitch / 3)")

        slit_width = _number(raw["slit_width"], "slit_width", lo=1e-9)
        probe_centers = _positions(raw["scan"]["probe_centers"], "scan.probe_centers")
        conj_centers = _positions(raw["scan"]["conj_centers"], "scan.conj_centers")
        lo, hi = grid.x[0] - 0.5 * slit_width, grid.x[-1] + 0.5 * slit_width
        for name, pos in (("scan.probe_centers", probe_centers), ("scan.conj_centers", conj_centers)):
            if pos.min() <= lo or pos.max() > hi:
                raise ConfigError(f"{name}: slits at [{pos.min()}, {pos.max()}] um fall off the grid "
                                  f"[{grid.x[0]}, {grid.x[-1]}] um")

        att = raw["attenuator"]
        if att != "optimal":
            att = _number(att, "attenuator", 0.0, 1.0)
        m = raw["mc"]
        g2 = m["grid2d"]
        grid2d = Grid2D(_integer(g2["nx"], "mc.grid2d.nx", 1), _integer(g2["ny"], "mc.grid2d.ny", 1),
                        _number(g2["pitch"], "mc.grid2d.pitch", lo=1e-9))
        fiber_pitch = (conduit or ConduitParams()).fiber_pitch
        if grid2d.pitch > fiber_pitch / 4.0:
            raise ConfigError("mc.grid2d.pitch: need at least 4 pixels per fibre (pitch <= fiber_pitch / 4)")
        mc = McConfig(_integer(m["n_samples"], "mc.n_samples", 1000, 10**8),
                      _integer(m["rng_seed"], "mc.rng_seed", 0, 2**64 - 1), grid2d)
        out = raw["output"]
        if not isinstance(out["dir"], str) or not out["dir"]:
            raise ConfigError("output.dir: expected a non-empty string")
        if not isinstance(out["figures"], bool):
            raise ConfigError("output.figures: expected true or false")
        return ExperimentConfig(
            grid=grid,
            source=source,
            conduit=conduit,
            imaging_blur=_number(raw["imaging_blur"], "imaging_blur", lo=0.0),
            attenuator=att,
            detector_qe=_number(raw["detector_qe"], "detector_qe", 1e-9, 1.0),
            slit_width=slit_width,
            probe_centers=probe_centers,
            conj_centers=conj_centers,
            mc=mc,
            nearfield_waist=_number(m["nearfield_waist"], "mc.nearfield_waist", lo=1e-9),
            output_dir=out["dir"],
            figures=out["figures"],
            raw=raw,
        )
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc


def bundled_config_path(name: str) -> Path:
    return Path(str(resources.files("twinsim") / "configs" / name))


def load_config(path, seed: int | None = None, output_dir: str | None = None) -> ExperimentConfig:
    """Load a JSON config from ``path``; bare bundled names ('freespace.json') also resolve."""
    p = Path(path)
    if not p.exists() and p.name in BUNDLED and str(p) == p.name:
        p = bundled_config_path(p.name)
    try:
        data = json.loads(p.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return build_config(data, resolve_seed(seed), output_dir)


def canonical_json(raw: dict) -> str:
    def clean(v):
        if isinstance(v, float) and math.isinf(v):
            return None
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items()}
        if isinstance(v, list):
            return [clean(x) for x in v]
        return v

    return json.dumps(clean(raw), sort_keys=True, separators=(",", ":"))


def config_hash(raw: dict) -> str:
    """SHA-256 of the canonical config, excluding the output section."""
    body = {k: v for k, v in raw.items() if k != "output"}
    return hashlib.sha256(canonical_json(body).encode()).hexdigest()[:16]
