"""Sectioned key-value run configuration and the resolved run manifest.

Transverse positions and radii of spots, probes and the Gaussian waist are
given in units of the beam spot radius r_s; beam lengths are in metres.
"""
from __future__ import annotations

import configparser
import io
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .engine import CavityConfig, Probe, PulsedRunConfig, ScanRunConfig
from .field import BeamParams, GridSpec
from .optics import LossModel, PlateSpec, Spot

KINDS = ("pulse", "scan", "twomode", "mask")
HALF_PI = math.pi / 2


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


# section -> key -> default (None: optional / derived)
SCHEMA: dict[str, dict[str, object]] = {
    "grid": {"n": 1024, "dx": None},
    "beam": {"wavelength": 656e-9, "focal_length": 0.34, "spot_radius": None, "channels": None},
    "input": {"beam": "airy", "waist": 0.0},
    "oracle": {"spots": "0 0", "radius": 1.0, "phase": HALF_PI, "passes": 2, "mask": "",
               "phase_min": 0.0, "phase_max": HALF_PI, "resample": False},
    "focus": {"enabled": True, "center": "0 0", "radius": 1.0, "phase": HALF_PI, "passes": 2},
    "loss": {"reflectivity": 1.0, "excess": 0.0, "finesse": None, "power_loss": None},
    "run": {"round_trips": 40, "snapshot_stride": 0, "initial": "input",
            "alpha_min": -math.pi, "alpha_max": math.pi, "alpha_step": None,
            "tolerance": 1e-10, "max_iterations": 0, "solver": "series", "relaxation": 0.7,
            "parallel": 1, "geometry": "ring", "probes": "0 0 1; 3 0 1"},
    "twomode": {"chi": None, "t": 0.15, "exact": False, "excess_amplitude": 1.0},
}
# recomputed on every parse; echoed for readers
DERIVED = "derived"


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _line_of(text: str, section: str, key: str | None = None) -> int | None:
    cur = None
    for i, raw in enumerate(text.splitlines(), 1):
        s = raw.strip()
        m = re.match(r"\[([^]]+)\]", s)
        if m:
            cur = m.group(1).strip()
            if key is None and cur == section:
                return i
            continue
        if key is not None and cur == section and re.match(rf"{re.escape(key)}\s*[=:]", s):
            return i
    return None


def _convert(text, section, key, raw: str, default):
    kind = type(default) if default is not None else float
    if key in ("spot_radius", "channels", "dx", "finesse", "power_loss", "alpha_step", "chi"):
        kind = float
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot read {raw!r} as {kind.__name__}",
                          _line_of(text, section, key)) from None


def parse_pairs(raw: str, width: int, what: str) -> list[tuple[float, ...]]:
    """'x y; x y' style lists (``none`` or blank for an empty list)."""
    raw = raw.strip()
    if raw.lower() in ("", "none"):
        return []
    out = []
    for chunk in raw.split(";"):
        vals = chunk.split()
        if len(vals) != width:
            raise ValueError(f"{what} entries need {width} numbers, got {chunk.strip()!r}")
        out.append(tuple(float(v) for v in vals))
    return out


@dataclass
class RunManifest:
    kind: str
    config: dict[str, dict[str, object]]
    out_dir: str = "."
    deterministic: bool = True
    derived: dict[str, object] = field(default_factory=dict, compare=False)

    def serialize(self) -> str:
        lines = ["[manifest]", f"kind = {self.kind}", f"out = {self.out_dir}",
                 f"deterministic = {_fmt(self.deterministic)}", ""]
        for sec, keys in self.config.items():
            lines.append(f"[{sec}]")
            lines += [f"{k} = {_fmt(v)}" for k, v in keys.items()]
            lines.append("")
        if self.derived:
            lines.append(f"[{DERIVED}]")
            lines += [f"{k} = {_fmt(v)}" for k, v in self.derived.items()]
            lines.append("")
        return "\n".join(lines)

    # ------------------------------------------------------------ builders
    def beam(self) -> BeamParams:
        b = self.config["beam"]
        return BeamParams(b["wavelength"], b["focal_length"], b["spot_radius"])

    def grid(self) -> GridSpec:
        g = self.config["grid"]
        return GridSpec(g["n"], g["dx"])

    def loss(self) -> LossModel:
        lo = self.config["loss"]
        return LossModel(lo["reflectivity"], lo["excess"])

    def oracle(self, raster: np.ndarray | None = None) -> PlateSpec:
        o = self.config["oracle"]
        rs = self.config["beam"]["spot_radius"]
        if raster is not None:
            return PlateSpec(plane="image", passes_per_round_trip=o["passes"], raster=raster)
        spots = [Spot((x * rs, y * rs), o["radius"] * rs, o["phase"])
                 for x, y in parse_pairs(o["spots"], 2, "oracle spot")]
        return PlateSpec(tuple(spots), "image", o["passes"])

    def focus(self) -> PlateSpec:
        f = self.config["focus"]
        rs = self.config["beam"]["spot_radius"]
        if not f["enabled"]:
            return PlateSpec((), "focal", f["passes"])
        (x, y), = parse_pairs(f["center"], 2, "focus center")
        return PlateSpec((Spot((x * rs, y * rs), f["radius"] * rs, f["phase"]),), "focal", f["passes"])

    def cavity(self, raster: np.ndarray | None = None) -> CavityConfig:
        i = self.config["input"]
        rs = self.config["beam"]["spot_radius"]
        return CavityConfig(self.grid(), self.beam(), self.oracle(raster), self.focus(), self.loss(),
                            i["beam"], i["waist"] * rs if i["waist"] else None)

    def pulsed(self, raster=None) -> PulsedRunConfig:
        r = self.config["run"]
        return PulsedRunConfig(self.cavity(raster), r["round_trips"], r["snapshot_stride"] or None,
                               r["initial"])

    def probes(self) -> tuple[Probe, ...]:
        rs = self.config["beam"]["spot_radius"]
        names = ["on", "off"]
        pr = parse_pairs(self.config["run"]["probes"], 3, "probe")
        return tuple(Probe((x * rs, y * rs), r * rs, names[i] if len(pr) == 2 else f"probe_{i}")
                     for i, (x, y, r) in enumerate(pr))

    def scan(self, raster=None) -> ScanRunConfig:
        r = self.config["run"]
        return ScanRunConfig(self.cavity(raster), r["alpha_min"], r["alpha_max"], r["alpha_step"],
                             r["tolerance"], r["max_iterations"] or None, self.probes(), r["solver"],
                             r["relaxation"], r["parallel"], r["geometry"])


def _read(text: str) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"),
                                   strict=True)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.MissingSectionHeaderError as e:
        raise ConfigError("key outside of any [section]", e.lineno) from None
    except configparser.ParsingError as e:
        line = e.errors[0][0] if e.errors else None
        raise ConfigError(f"syntax error: {e.errors[0][1].strip() if e.errors else e}", line) from None
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as e:
        raise ConfigError(e.message.split(":")[-1].strip() if hasattr(e, "message") else str(e),
                          e.lineno) from None
    return cp


def parse_config(text: str, kind: str | None = None, out_dir: str | None = None,
                 overrides: dict[str, dict[str, str]] | None = None) -> RunManifest:
    """Parse, validate and resolve a configuration into a manifest.

    Every default is materialized; derived quantities (channel count, chi,
    finesse) are echoed in a ``[derived]`` section that is recomputed, not read.
    """
    cp = _read(text)
    man_kind, man_out, det = kind, out_dir, True
    raw: dict[str, dict[str, str]] = {}
    for sec in cp.sections():
        if sec == DERIVED:
            continue
        if sec == "manifest":
            for k, v in cp.items(sec):
                if k == "kind":
                    man_kind = man_kind or v.strip()
                elif k == "out":
                    man_out = man_out or v.strip()
                elif k == "deterministic":
                    det = _convert(text, sec, k, v, True)
                else:
                    raise ConfigError(f"unknown key {k!r} in [manifest]", _line_of(text, sec, k))
            continue
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]", _line_of(text, sec))
        for k, v in cp.items(sec):
            if k not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {k!r} in [{sec}]", _line_of(text, sec, k))
            raw.setdefault(sec, {})[k] = v
    for sec, keys in (overrides or {}).items():
        for k, v in keys.items():
            raw.setdefault(sec, {})[k] = v
    man_kind = man_kind or "pulse"
    if man_kind not in KINDS:
        raise ConfigError(f"unknown experiment kind {man_kind!r}; choose from {KINDS}")

    cfg: dict[str, dict[str, object]] = {}
    for sec, keys in SCHEMA.items():
        cfg[sec] = {}
        for k, default in keys.items():
            if k in raw.get(sec, {}) and raw[sec][k].strip() != "":
                cfg[sec][k] = _convert(text, sec, k, raw[sec][k], default)
            else:
                cfg[sec][k] = default
    derived = _resolve(cfg, text, man_kind)
    man = RunManifest(man_kind, cfg, man_out or ".", det, derived)
    _validate(man, text)
    return man


def _resolve(cfg, text, kind) -> dict:
    b = cfg["beam"]
    if b["spot_radius"] is not None and b["channels"] is not None:
        raise ConfigError("[beam] give either spot_radius or channels, not both",
                          _line_of(text, "beam", "channels"))
    try:
        if b["spot_radius"] is None:
            beam = BeamParams.from_channel_count(b["channels"] or 400.0, b["wavelength"], b["focal_length"])
        else:
            beam = BeamParams(b["wavelength"], b["focal_length"], b["spot_radius"])
    except ValueError as e:
        raise ConfigError(f"[beam] {e}") from None
    b["spot_radius"] = float(beam.spot_radius)
    b["channels"] = None
    del b["channels"]

    g = cfg["grid"]
    if g["dx"] is None:
        try:
            g["dx"] = float(GridSpec.for_beam(beam, int(g["n"])).dx)
        except ValueError as e:
            raise ConfigError(f"[grid] {e}") from None

    lo = cfg["loss"]
    try:
        if lo["finesse"] is not None and lo["power_loss"] is not None:
            raise ValueError("give either finesse or power_loss, not both")
        if lo["finesse"] is not None:
            m = LossModel.for_finesse(lo["finesse"], lo["reflectivity"])
        elif lo["power_loss"] is not None:
            m = LossModel.for_power_loss(lo["power_loss"], lo["reflectivity"])
        else:
            m = LossModel(lo["reflectivity"], lo["excess"])
    except ValueError as e:
        raise ConfigError(f"[loss] {e}") from None
    cfg["loss"] = {"reflectivity": float(m.reflectivity), "excess": float(m.excess)}

    r = cfg["run"]
    tm = cfg["twomode"]
    gval = m.g
    if kind == "twomode":
        gval = (1 - tm["t"] ** 2) * tm["excess_amplitude"]
        if not 0 < gval < 1:
            raise ConfigError("[twomode] t and excess_amplitude must give 0 < g < 1")
    f_exp = math.pi * math.sqrt(gval) / (1 - gval) if gval < 1 else math.inf
    if r["alpha_step"] is None:
        per = max(400, int(math.ceil(20 * f_exp))) if math.isfinite(f_exp) else 400
        r["alpha_step"] = 2 * math.pi / per

    if tm["chi"] is None:
        tm["chi"] = float(beam.chi)

    derived = {"channels": float(beam.channel_count), "chi": float(beam.chi),
               "dark_ring_radius": float(beam.dark_ring_radius),
               "round_trip_amplitude": float(gval),
               "finesse": float(f_exp) if math.isfinite(f_exp) else "inf"}
    return derived


def _validate(man: RunManifest, text: str) -> None:
    """Build every object the run needs so invariant violations surface now."""
    try:
        if man.config["oracle"]["mask"] and man.kind != "mask":
            raise ValueError("[oracle] mask is only used by the 'mask' experiment")
        cav = man.cavity(raster=None if man.kind != "mask" else np.zeros((man.config["grid"]["n"],) * 2))
        r = man.config["run"]
        if man.kind in ("pulse", "mask"):
            PulsedRunConfig(cav, r["round_trips"], r["snapshot_stride"] or None, r["initial"])
            if r["snapshot_stride"] < 0:
                raise ValueError("snapshot_stride must be >= 0")
        elif man.kind == "scan":
            man.scan()
        else:
            from .twomode import TwoModeParams
            tm = man.config["twomode"]
            TwoModeParams(tm["chi"], tm["t"], 0.0, tm["excess_amplitude"])
    except ConfigError:
        raise
    except ValueError as e:
        raise ConfigError(str(e)) from None


def manifest_from_text(text: str) -> RunManifest:
    """Re-parse a serialized manifest (or any output header with the '# ' prefix stripped)."""
    return parse_config(text)


def header_text(man: RunManifest) -> str:
    return "\n".join("# " + line if line else "#" for line in man.serialize().splitlines())


def strip_header(text: str) -> str:
    buf = io.StringIO()
    for line in text.splitlines():
        if not line.startswith("#"):
            break
        buf.write(line[2:] if line.startswith("# ") else line[1:])
        buf.write("\n")
    return buf.getvalue()
