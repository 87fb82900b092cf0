"""Batch front end: optigrover {pulse,scan,twomode,mask}."""
from __future__ import annotations

import argparse
import configparser
import io
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis, twomode
from .config import ConfigError, RunManifest, _read, header_text, parse_config
from .engine import Cavity, ConvergenceError, run_pulsed, run_scan, steady_field, white_light_summary
from .field import disc_mask
from .io import ingest_mask, write_error, write_pgm, write_record, write_summary

log = logging.getLogger("optigrover")

EXIT_OK, EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_IO = 0, 2, 3, 4

PRESETS = {
    # two-mode spectra at chi = 0.05
    "fig2a": ("twomode", """
[twomode]
chi = 0.05
t = 0.15
"""),
    "fig2b": ("twomode", """
[twomode]
chi = 0.05
t = 0.5
"""),
    # lossy pulsed search, a few round trips with images
    "fig4": ("pulse", """
[beam]
channels = 400
[loss]
power_loss = 0.5
[run]
round_trips = 4
snapshot_stride = 1
"""),
    # three-dot raster oracle
    "fig5": ("mask", """
[beam]
channels = 400
[oracle]
spots = 2 0; -1 1.7320508075688772; -1 -1.7320508075688772
[run]
round_trips = 20
snapshot_stride = 3
"""),
    # cw scan with on/off-solution apertures, finesse about 9
    "fig6": ("scan", """
[beam]
channels = 400
[loss]
reflectivity = 0.9
finesse = 9
[run]
geometry = linear
probes = 0 0 1; 3 0 1
"""),
}


def build_manifest(kind: str, config_text: str = "", preset: str | None = None,
                   out_dir: str = ".", snapshots: int | None = None,
                   parallel: int | None = None, mask: str | None = None) -> RunManifest:
    over: dict[str, dict[str, str]] = {}
    if snapshots is not None:
        over.setdefault("run", {})["snapshot_stride"] = str(snapshots)
    if parallel is not None:
        over.setdefault("run", {})["parallel"] = str(parallel)
    if mask is not None:
        over.setdefault("oracle", {})["mask"] = mask
    base = ""
    if preset:
        pkind, base = PRESETS[preset]
        if pkind != kind:
            raise ConfigError(f"preset {preset} is a '{pkind}' experiment, not '{kind}'")
    text = _combine(base, config_text)
    return parse_config(text, kind, out_dir, over)


def _combine(base: str, user: str) -> str:
    """Overlay ``user`` sections/keys on ``base`` (both INI text)."""
    if not base:
        return user
    if not user:
        return base
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    cp.optionxform = str
    cp.read_string(base)
    parsed = _read(user)
    for sec in parsed.sections():
        if not cp.has_section(sec):
            cp.add_section(sec)
        for k, v in parsed.items(sec):
            cp.set(sec, k, v)
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


# ------------------------------------------------------------------ runs

def _mask_plate(man: RunManifest, out: Path):
    o = man.config["oracle"]
    n = man.config["grid"]["n"]
    path = o["mask"]
    if not path:
        # render the configured spots as a binary graymap, then read it back
        plate = man.oracle()
        level = np.zeros((n, n))
        for s in plate.spots:
            level = np.maximum(level, disc_mask(n, man.config["grid"]["dx"], s.radius, s.center))
        path = out / "oracle_mask.pgm"
        write_pgm(path, level, ["binary oracle mask rendered from [oracle] spots"])
    return ingest_mask(path, n, o["phase_min"], o["phase_max"], o["resample"], o["passes"]).raster


def run_pulse_kind(man: RunManifest, out: Path) -> dict:
    raster = _mask_plate(man, out) if man.kind == "mask" else None
    cfg = man.pulsed(raster)
    cav = Cavity(cfg.cavity)
    traj, snaps = run_pulsed(cfg, cav)
    hdr = header_text(man)
    write_record(out / "trajectory.csv", traj, hdr)
    for tau, img in snaps.items():
        write_pgm(out / f"snapshot_tau{tau:04d}.pgm", img, [f"tau = {tau}", *hdr.replace("# ", "").splitlines()])
    summ = {"chi": cav.chi, "channels": 1 / cav.chi**2 if cav.chi else float("inf"),
            "items": len(cav.regions),
            "peak_round_trip": int(traj.values[int(np.argmax(traj["solution_power"]))]),
            "max_solution_power": float(traj["solution_power"].max()),
            "max_rho11": float(traj["rho11"].max()),
            "total_power_drift": float(np.ptp(traj["total_power"])),
            "imaging_offset_round_trips": 0.5}
    if "contrast" in traj.columns:
        summ["contrast_at_peak"] = float(traj["contrast"][int(np.argmax(traj["solution_power"]))])
    try:
        summ["search_period"] = analysis.search_period(traj)
    except (analysis.NoOscillation, RuntimeError) as e:
        summ["search_period"] = f"undetermined ({e})"
    return summ


def run_scan_kind(man: RunManifest, out: Path) -> dict:
    cfg = man.scan()
    cav = Cavity(cfg.cavity)
    spec, _ = run_scan(cfg, cav)
    snaps = {}
    if man.config["run"]["snapshot_stride"]:
        ch = cfg.probe_names()[0] if cfg.probes else "transmitted"
        a_res = float(spec.values[int(np.argmax(spec[ch]))])
        f, _ = steady_field(cav, cfg, a_res)
        snaps[a_res] = cfg.cavity.loss.t**2 * f.intensity
    hdr = header_text(man)
    write_record(out / "spectrum.csv", spec, hdr)
    for a, img in snaps.items():
        write_pgm(out / "snapshot_resonance.pgm", img, [f"alpha = {a!r}", *hdr.replace("# ", "").splitlines()])
    summ = {"chi": cav.chi, "finesse_expected": spec.meta["finesse"], "series_terms": spec.meta.get("series_terms", 0),
            "max_residual": float(spec["residual"].max())}
    peaks = analysis.find_peaks(spec, "transmitted", 0.1)
    summ["transmitted_peaks"] = list(peaks.locations)
    try:
        summ["finesse_fit"] = analysis.fit_finesse(peaks)
    except analysis.PeakResolutionError as e:
        summ["finesse_fit"] = f"unresolved ({e})"
    names = cfg.probe_names()
    if len(names) >= 2:
        on, off = spec[names[0]], spec[names[1]]
        i = int(np.argmax(on))
        summ["on_off_ratio"] = float(on[i] / off[i])
        summ["on_peak_over_off_max"] = float(on.max() / off.max())
        try:
            summ.update({f"white_light_{k}": v for k, v in white_light_summary(spec, names[0], names[1]).items()})
        except ValueError as e:
            summ["white_light"] = f"unavailable ({e})"
    if cav.chi:
        summ["doublet_resolved"] = analysis.doublet_resolved(spec, names[0] if names else "p1")
    return summ


def run_twomode_kind(man: RunManifest, out: Path) -> dict:
    tm = man.config["twomode"]
    r = man.config["run"]
    p = twomode.TwoModeParams(tm["chi"], tm["t"], 0.0, tm["excess_amplitude"])
    step = r["alpha_step"]
    count = int(np.floor((r["alpha_max"] - r["alpha_min"]) / step + 1e-9)) + 1
    alphas = r["alpha_min"] + step * np.arange(count)
    spec = twomode.spectrum(p, alphas, tm["exact"])
    write_record(out / "spectrum.csv", spec, header_text(man))
    peaks = analysis.find_peaks(spec, "total", 0.1)
    summ = {"chi": p.chi, "t": p.t, "finesse": p.finesse, "alpha_step": step,
            "peaks": list(peaks.locations),
            "solution_fraction_at_peaks": list(np.interp(peaks.locations, spec.values, spec["fraction1"])),
            "doublet_splitting_expected": twomode.doublet_splitting(p.chi) if p.chi < 0.5 else float("nan"),
            "doublet_resolved": analysis.doublet_resolved(spec, "p1"),
            "peak_contrast": twomode.peak_contrast(p, tm["exact"])}
    if len(peaks) == 2:
        summ["doublet_splitting"] = float(np.diff(peaks.locations)[0])
    return summ


RUNNERS = {"pulse": run_pulse_kind, "mask": run_pulse_kind, "scan": run_scan_kind, "twomode": run_twomode_kind}


def run(man: RunManifest) -> int:
    out = Path(man.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        print(f"error: cannot create output directory: {e}", file=sys.stderr)
        return EXIT_IO
    try:
        summ = RUNNERS[man.kind](man, out)
        write_summary(out / "summary.txt", summ, header_text(man))
        (out / "manifest.ini").write_text(man.serialize())
    except ConvergenceError as e:
        _fail(out, EXIT_CONVERGENCE, "convergence", str(e), alpha=e.alpha, residual=e.residual)
        return EXIT_CONVERGENCE
    except FloatingPointError as e:
        _fail(out, EXIT_CONVERGENCE, "non-finite", str(e))
        return EXIT_CONVERGENCE
    except OSError as e:
        _fail(out, EXIT_IO, "io", str(e))
        return EXIT_IO
    except ValueError as e:
        _fail(out, EXIT_CONFIG, "config", str(e))
        return EXIT_CONFIG
    return EXIT_OK


def _fail(out: Path, status: int, kind: str, msg: str, **extra) -> None:
    print(f"error ({kind}): {msg}", file=sys.stderr)
    try:
        write_error(out / "error.json", status, kind, msg, **extra)
    except OSError:
        pass


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="optigrover", description=__doc__)
    ap.add_argument("kind", choices=sorted(RUNNERS), help="experiment to run")
    ap.add_argument("--config", type=Path, help="sectioned key-value configuration file")
    ap.add_argument("--out", default="out", help="output directory (default: %(default)s)")
    ap.add_argument("--preset", choices=sorted(PRESETS))
    ap.add_argument("--snapshots", type=int, metavar="STRIDE",
                    help="snapshot stride in round trips (scan: any positive value saves the resonant image)")
    ap.add_argument("--parallel", type=int, metavar="N", help="worker threads for scan points")
    ap.add_argument("--mask", help="raster oracle (graymap or comma-separated grid) for 'mask'")
    ap.add_argument("--print-manifest", action="store_true", help="print the resolved manifest and exit")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        text = args.config.read_text() if args.config else ""
    except OSError as e:
        print(f"error (io): {e}", file=sys.stderr)
        return EXIT_IO
    try:
        man = build_manifest(args.kind, text, args.preset, args.out, args.snapshots, args.parallel, args.mask)
    except ConfigError as e:
        print(f"error (config): {e}", file=sys.stderr)
        return EXIT_CONFIG
    if args.print_manifest:
        print(man.serialize())
        return EXIT_OK
    return run(man)


if __name__ == "__main__":
    sys.exit(main())
