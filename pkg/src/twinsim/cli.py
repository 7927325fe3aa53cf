"""Command-line front end: ``twinsim {scan,optimize,farfield,fit,selftest}``.

Every command computes all of its outputs in memory and only then writes them,
so a failing run leaves the output directory untouched. Exit codes: 0 success,
1 selftest failure, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import io
import os
import sys
import traceback
from pathlib import Path

import numpy as np

from . import __version__, analysis, pipeline, plotting
from .config import SEED_ENV, ExperimentConfig, load_config
from .detection import ScanResult
from .errors import ConfigError, TwinSimError
from .montecarlo import pgm_bytes
from .selftest import FAULTS, run_selftest
from .transport import phase_screen

EXIT_SELFTEST = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _png(draw, config_hash: str, *args) -> bytes:
    buf = io.BytesIO()
    draw(buf, *args, meta={"Description": f"config_hash={config_hash}"})
    return buf.getvalue()


def _out_dir(args, cfg: ExperimentConfig | None) -> Path:
    if args.out:
        return Path(args.out)
    return Path(cfg.output_dir if cfg is not None else "out")


def write_outputs(out_dir: Path, files: dict[str, bytes]) -> list[Path]:
    """Write ``files`` (bare names only) into ``out_dir`` via temp file + rename."""
    root = out_dir.resolve()
    targets = []
    for name in files:
        target = (root / name).resolve()
        if Path(name).name != name or target.parent != root:
            raise ValueError(f"refusing to write {name!r} outside {root}")
        targets.append(target)
    root.mkdir(parents=True, exist_ok=True)
    for target, data in zip(targets, files.values()):
        tmp = target.with_name(target.name + ".tmp")
        tmp.write_bytes(data)
        os.replace(tmp, target)
    return targets


def _load(args) -> ExperimentConfig:
    return load_config(args.config, seed=args.seed, output_dir=args.out)


def _fit_table(fits) -> str:
    lines = [f"{'probe_um':>9} {'dip_um':>8} {'fwhm_um':>8} {'depth_dB':>9} {'kappa':>7}  status"]
    for f in fits:
        if f.fit is None:
            lines.append(f"{f.probe_center:9.1f} {'-':>8} {'-':>8} {'-':>9} {'-':>7}  {f.status}")
        else:
            lines.append(f"{f.probe_center:9.1f} {f.fit.center:8.1f} {f.fit.fwhm:8.1f} "
                         f"{f.fit.depth_db:9.3f} {f.kappa.kappa:7.4f}  {f.status}")
    return "\n".join(lines)


def cmd_scan(args) -> int:
    cfg = _load(args)
    monitor = pipeline.PhysicalityMonitor()
    run = pipeline.run_scan_pipeline(cfg, threads=args.threads, monitor=monitor)
    h = cfg.config_hash
    files = {
        "scan.csv": run.scan.to_csv().encode(),
        "profile.csv": pipeline.profile_csv(run.state, h).encode(),
        "fits.csv": analysis.fit_report_csv(
            [(f.probe_center, f.fit, f.kappa, f.status) for f in run.fits], h).encode(),
    }
    if cfg.conduit is not None:
        screen = phase_screen(cfg.grid, cfg.conduit)
        files["phase_screen.csv"] = (f"# config_hash={h}\n" + screen.to_csv()).encode()
    if cfg.figures:
        files["scan.png"] = _png(plotting.plot_scan, h, run.scan, cfg.grid.x, run.state.intensity("conj"),
                                 run.fits, cfg.slit_width)
    out = _out_dir(args, cfg)
    write_outputs(out, files)
    print(f"config_hash {h}")
    print(f"conjugate attenuator transmission {run.attenuator:.6f}")
    print(f"minimum symplectic eigenvalue {monitor.worst:.12f}")
    print(_fit_table(run.fits))
    print(f"mean kappa {run.kappa:.4f}")
    print(f"wrote {', '.join(files)} to {out}")
    return 0


def cmd_optimize(args) -> int:
    cfg = _load(args)
    eta_p = pipeline.probe_transmission(cfg)
    res = analysis.optimize_attenuation(cfg.source.gain_peak, eta_p, cfg.detector_qe)
    a, v = analysis.attenuation_curve(cfg.source.gain_peak, eta_p, cfg.detector_qe)
    h = cfg.config_hash
    rows = [f"# config_hash={h}",
            f"# gain={cfg.source.gain_peak!r} eta_p={eta_p!r} eta_c_max={cfg.detector_qe!r}",
            "transmission,attenuation,v_rel,noise_db"]
    rows += [f"{ai!r},{1.0 - ai!r},{vi!r},{10.0 * np.log10(vi)!r}" for ai, vi in zip(a.tolist(), v.tolist())]
    files = {"attenuation.csv": ("\n".join(rows) + "\n").encode()}
    if cfg.figures:
        files["attenuation.png"] = _png(plotting.plot_attenuation, h, a, v, res)
    out = _out_dir(args, cfg)
    write_outputs(out, files)
    print(f"config_hash {h}")
    print(f"probe transmission eta_p {eta_p:.6f}, conjugate ceiling {cfg.detector_qe:.6f}")
    print(f"a* {res.a_star:.6f} (attenuation {100 * res.attenuation:.2f} %)")
    print(f"v_min {res.v_min:.6f} ({res.v_min_db:.4f} dB)")
    print(f"wrote {', '.join(files)} to {out}")
    return 0


def cmd_farfield(args) -> int:
    cfg = _load(args)
    ff = pipeline.run_farfield(cfg)
    h = cfg.config_hash
    tag = f"config_hash={h}"
    rows = [f"# config_hash={h}",
            "case,contrast,raw_contrast,threshold_fraction,illuminated_pixels,envelope_sigma_px,"
            "power_in,power_out"]
    for case, st in (("random_phase", ff.random_stats), ("zero_phase", ff.zero_stats)):
        rows.append(f"{case},{st.contrast!r},{st.raw_contrast!r},{st.threshold_fraction!r},"
                    f"{st.illuminated_pixels},{st.envelope_sigma_px!r},{ff.power_in!r},{ff.power_out!r}")
    files = {
        "speckle.csv": ("\n".join(rows) + "\n").encode(),
        "nearfield.pgm": pgm_bytes(ff.nearfield.intensity, tag),
        "farfield.pgm": pgm_bytes(ff.random_image, tag),
        "farfield_zero.pgm": pgm_bytes(ff.zero_image, tag),
    }
    if cfg.figures:
        files["farfield.png"] = _png(plotting.plot_farfield, h, ff.nearfield.intensity, ff.random_image,
                                     ff.zero_image, cfg.mc.grid2d.pitch)
    out = _out_dir(args, cfg)
    write_outputs(out, files)
    print(f"config_hash {h}")
    print(f"fibres rendered {ff.nearfield.fiber_count}, core fraction {ff.nearfield.core_fraction:.4f}")
    print(f"speckle contrast, random phases {ff.random_stats.contrast:.4f} "
          f"(raw {ff.random_stats.raw_contrast:.4f})")
    print(f"speckle contrast, zero phases   {ff.zero_stats.contrast:.4f} "
          f"(raw {ff.zero_stats.raw_contrast:.4f})")
    print(f"power in {ff.power_in:.12g}, out {ff.power_out:.12g}")
    print(f"wrote {', '.join(files)} to {out}")
    return 0


def _read(path: Path, what: str) -> str:
    try:
        return path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {what} {path}: {exc.strerror}") from exc


def cmd_fit(args) -> int:
    cfg = _load(args) if args.config else None
    out = _out_dir(args, cfg)
    scan_path = Path(args.scan) if args.scan else out / "scan.csv"
    profile_path = Path(args.profile) if args.profile else out / "profile.csv"
    scan_text = _read(scan_path, "scan file")
    profile_text = _read(profile_path, "profile file")
    try:
        scan = ScanResult.from_csv(scan_text)
        x, _, conj = pipeline.read_profile_csv(profile_text)
    except (KeyError, ValueError, IndexError) as exc:
        raise ConfigError(f"malformed scan/profile CSV: {exc}") from exc
    fits = pipeline.fit_scan(scan, x, conj)
    h = scan.config_hash
    files = {"fits.csv": analysis.fit_report_csv(
        [(f.probe_center, f.fit, f.kappa, f.status) for f in fits], h).encode()}
    figures = cfg.figures if cfg is not None else True
    if figures:
        width = float(scan.metadata.get("slit_width_um", 0.0))
        files["scan.png"] = _png(plotting.plot_scan, h, scan, x, conj, fits, width)
    write_outputs(out, files)
    print(f"config_hash {h}")
    print(_fit_table(fits))
    print(f"mean kappa {pipeline.mean_kappa(fits):.4f}")
    print(f"wrote {', '.join(files)} to {out}")
    return 0


def cmd_selftest(args) -> int:
    checks = run_selftest(threads=args.threads, fault=args.inject_fault)
    for c in checks:
        print(f"{'PASS' if c.ok else 'FAIL'} {c.name}: {c.detail}")
    failed = [c.name for c in checks if not c.ok]
    if failed:
        print(f"selftest failed: {', '.join(failed)}")
        return EXIT_SELFTEST
    print("selftest passed")
    return 0


def _common(config_default: str | None) -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=config_default,
                        help="JSON config file; bundled names freespace.json and conduit.json also work")
    common.add_argument("--out", help="output directory (overrides output.dir)")
    common.add_argument("--threads", type=_positive_int, default=1, help="worker threads")
    common.add_argument("--seed", type=_u64, help=f"seed for all RNG streams (overrides {SEED_ENV})")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twinsim", description="Twin-beam spatial squeezing simulator.")
    parser.add_argument("--version", action="version", version=f"twinsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, func, text in (
        ("scan", cmd_scan, "noise maps over probe and conjugate slit positions, dip fits and kappa"),
        ("optimize", cmd_optimize, "conjugate attenuation that minimises the detected noise"),
        ("farfield", cmd_farfield, "near- and far-field conduit images with speckle statistics"),
    ):
        p = sub.add_parser(name, parents=[_common("freespace.json")], help=text, description=text)
        p.set_defaults(func=func)

    p = sub.add_parser("fit", parents=[_common(None)], help="refit dips from an existing scan.csv/profile.csv")
    p.set_defaults(func=cmd_fit)
    p.add_argument("--scan", help="scan CSV (default: <out>/scan.csv)")
    p.add_argument("--profile", help="profile CSV (default: <out>/profile.csv)")

    p = sub.add_parser("selftest", help="engine, Monte Carlo and physicality release checks")
    p.add_argument("--threads", type=_positive_int, default=1)
    p.add_argument("--inject-fault", choices=FAULTS, default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_selftest)
    return parser


def _origin(exc: BaseException) -> str:
    frames = traceback.extract_tb(exc.__traceback__)
    return Path(frames[-1].filename).stem if frames else "twinsim"


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"twinsim: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TwinSimError, FloatingPointError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"twinsim: numerical failure in {_origin(exc)} ({type(exc).__name__}): {exc}",
              file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"twinsim: cannot write outputs: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
