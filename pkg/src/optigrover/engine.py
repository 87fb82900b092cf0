"""Pulsed (time-domain) and scanned steady-state (frequency-domain) drivers.

Both drivers iterate the full 2D round-trip operator.  Fields are kept in FFT
layout internally; images handed out are centred.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import ndimage

from .field import (BeamParams, Field, GridSpec, check_inside, disc_mask, make_airy_input, make_gaussian_input,
                    orthonormalize, overlap)
from .optics import GroverIterator, LossModel, PlateSpec, from_fft_layout, to_fft_layout
from .records import Spectrum, Trajectory

log = logging.getLogger(__name__)

SOLUTION_DISC_FACTOR = 1.5


class ConvergenceError(RuntimeError):
    def __init__(self, alpha: float, residual: float, iterations: int):
        super().__init__(f"steady state not reached at alpha={alpha:.6g}: "
                         f"residual {residual:.3g} after {iterations} iterations")
        self.alpha = alpha
        self.residual = residual


@dataclass(frozen=True)
class CavityConfig:
    grid: GridSpec
    beam: BeamParams
    oracle: PlateSpec
    focus: PlateSpec
    loss: LossModel = LossModel()
    input_beam: str = "airy"
    gaussian_waist: float | None = None
    input_power: float = 1.0

    def __post_init__(self):
        self.grid.check(self.beam)
        if self.oracle.plane != "image" or self.focus.plane != "focal":
            raise ValueError("oracle must be an image-plane plate and focus a focal-plane plate")
        self.oracle.check_fits(self.grid, self.grid.dx)
        self.focus.check_fits(self.grid, self.grid.focal_pitch(self.beam))
        if self.input_beam not in ("airy", "airy-analytic", "gaussian"):
            raise ValueError(f"unknown input beam {self.input_beam!r}")
        if not self.input_power > 0:
            raise ValueError("input power must be positive")
        if self.input_beam == "gaussian" and not (self.gaussian_waist or 0) > 0:
            raise ValueError("gaussian input needs a positive waist")


@dataclass(frozen=True)
class Region:
    """One tagged item: its pixel support and the disc used to meter it."""
    center: tuple[float, float]
    radius: float
    support: np.ndarray


class Cavity:
    """Precomputed operators, modes and metering masks for one configuration."""

    def __init__(self, config: CavityConfig):
        self.config = config
        g = config.grid
        self.n = g.n
        self.dx = g.dx
        self.iterator = GroverIterator(g, config.beam, config.oracle, config.focus)

    @cached_property
    def input_field(self) -> Field:
        c = self.config
        if c.input_beam == "gaussian":
            return make_gaussian_input(c.grid, c.gaussian_waist)
        method = "analytic" if c.input_beam == "airy-analytic" else "bandlimited"
        return make_airy_input(c.grid, c.beam, method)

    @property
    def drive_field(self) -> Field:
        """The input beam carrying the configured power."""
        return self.input_field * np.sqrt(self.config.input_power)

    @cached_property
    def regions(self) -> list[Region]:
        o = self.config.oracle
        if o.raster is None:
            return [Region(s.center, s.radius, disc_mask(self.n, self.dx, s.radius, s.center) > 0)
                    for s in o.spots if s.phase != 0]
        labels, count = ndimage.label(o.raster != 0)
        x = (np.arange(self.n) - self.n // 2) * self.dx
        out = []
        for lab in range(1, count + 1):
            sup = labels == lab
            iy, ix = np.nonzero(sup)
            center = (float(x[ix].mean()), float(x[iy].mean()))
            out.append(Region(center, float(np.sqrt(sup.sum() / np.pi)) * self.dx, sup))
        return out

    @cached_property
    def solution_mode(self) -> Field | None:
        """psi1: flat-top spot modes, weighted by their overlap with the input."""
        if not self.regions:
            return None
        psi0 = self.input_field
        acc = np.zeros((self.n, self.n), complex)
        weights = []
        for r in self.regions:
            m = Field(r.support.astype(float), self.dx).normalized()
            w = overlap(m, psi0)
            weights.append(w)
            acc += w * m.amps
        if all(abs(w) < 1e-12 for w in weights):
            acc = sum(r.support.astype(float) for r in self.regions)
        return Field(acc, self.dx).normalized()

    @cached_property
    def modes(self) -> tuple[Field, Field | None, float]:
        """(psi0~, psi1, chi); psi0~ is the bare input when there is no oracle."""
        psi1 = self.solution_mode
        if psi1 is None:
            return self.input_field, None, 0.0
        psi0t, chi = orthonormalize(self.input_field, psi1)
        return psi0t, psi1, chi

    @property
    def chi(self) -> float:
        return self.modes[2]

    def solution_discs(self) -> list[np.ndarray]:
        return [disc_mask(self.n, self.dx, SOLUTION_DISC_FACTOR * r.radius, r.center) > 0
                for r in self.regions]

    def background_mask(self) -> np.ndarray:
        x, y = self.config.grid.coords()
        m = np.hypot(x, y) < self.config.beam.dark_ring_radius
        for d in self.solution_discs():
            m &= ~d
        return m

    def round_trip(self, u: np.ndarray) -> np.ndarray:
        return self.iterator(u)


# ---------------------------------------------------------------- pulsed

@dataclass(frozen=True)
class PulsedRunConfig:
    cavity: CavityConfig
    round_trips: int = 40
    snapshot_stride: int | None = None
    initial: str = "input"

    def __post_init__(self):
        if self.round_trips < 1:
            raise ValueError("round_trips must be >= 1")
        if self.snapshot_stride is not None and self.snapshot_stride < 1:
            raise ValueError("snapshot stride must be >= 1")
        if self.initial not in ("input", "orthonormal"):
            raise ValueError("initial must be 'input' or 'orthonormal'")


class _Meter:
    """Evaluates the recorded metrics on FFT-layout fields."""

    def __init__(self, cav: Cavity):
        self.dx2 = cav.dx**2
        psi0t, psi1, _ = cav.modes
        self.p0 = to_fft_layout(psi0t.amps).ravel()
        self.p1 = None if psi1 is None else to_fft_layout(psi1.amps).ravel()
        self.discs = [np.flatnonzero(to_fft_layout(d)) for d in cav.solution_discs()]
        self.areas = [d.size * self.dx2 for d in self.discs]
        self.bg = np.flatnonzero(to_fft_layout(cav.background_mask()))

    def __call__(self, u: np.ndarray) -> dict:
        flat = u.ravel()
        inten = flat.real**2 + flat.imag**2
        total = inten.sum() * self.dx2
        out = {"total_power": total}
        sols = [inten[d].sum() * self.dx2 for d in self.discs]
        for i, s in enumerate(sols):
            out[f"solution_power_{i}"] = s
        out["solution_power"] = sum(sols)
        out["background"] = inten[self.bg].mean() if self.bg.size else 0.0
        if sols and out["background"] > 0:
            out["contrast"] = max(s / a for s, a in zip(sols, self.areas)) / out["background"]
        out["p0"] = abs(np.vdot(self.p0, flat) * self.dx2) ** 2
        out["p1"] = abs(np.vdot(self.p1, flat) * self.dx2) ** 2 if self.p1 is not None else 0.0
        out["rho00"] = out["p0"] / total
        out["rho11"] = out["p1"] / total
        return out


def run_pulsed(config: PulsedRunConfig, cavity: Cavity | None = None):
    """Iterate the lossy round trip; returns (Trajectory, {tau: intensity image})."""
    cav = cavity or Cavity(config.cavity)
    start = cav.input_field if config.initial == "input" else cav.modes[0]
    start = start * np.sqrt(config.cavity.input_power)
    u = np.array(to_fft_layout(start.amps))
    g = config.cavity.loss.g
    meter = _Meter(cav)
    rows = []
    snaps = {}
    stride = config.snapshot_stride
    if stride:
        snaps[0] = np.abs(start.amps) ** 2
    for tau in range(1, config.round_trips + 1):
        u = cav.round_trip(u)
        if g != 1.0:
            u *= g
        m = meter(u)
        if not np.isfinite(m["total_power"]):
            raise FloatingPointError(f"non-finite field after round trip {tau}")
        rows.append(m)
        if stride and tau % stride == 0:
            snaps[tau] = np.abs(from_fft_layout(u)) ** 2
    cols = {k: np.array([r[k] for r in rows]) for k in rows[0]}
    traj = Trajectory(np.arange(1, config.round_trips + 1), cols, {
        "chi": cav.chi, "g": g, "initial": config.initial,
        "imaging_offset_round_trips": 0.5,
        "n_items": len(cav.regions),
    })
    return traj, snaps


# ---------------------------------------------------------------- scan

@dataclass(frozen=True)
class Probe:
    center: tuple[float, float]
    radius: float
    name: str = ""


GEOMETRIES = ("ring", "linear")


@dataclass(frozen=True)
class ScanRunConfig:
    """Scan settings.

    ``geometry="ring"`` adds the input at the oracle plane and reads the probes
    there, i.e. E = t E_in + g e^{i alpha} G E with G applied focus plate first.
    ``geometry="linear"`` follows a two-mirror layout: the input enters through
    the mirror beside the oracle plate and the probes image the far mirror, one
    focus-plate pass later.  Both share the same round-trip spectrum.
    """
    cavity: CavityConfig
    alpha_min: float = -np.pi
    alpha_max: float = np.pi
    alpha_step: float = 0.005
    tolerance: float = 1e-10
    max_iterations: int | None = None
    probes: tuple[Probe, ...] = ()
    solver: str = "series"
    relaxation: float = 0.7
    parallel: int = 1
    geometry: str = "ring"

    def __post_init__(self):
        object.__setattr__(self, "probes", tuple(self.probes))
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if not self.alpha_max > self.alpha_min:
            raise ValueError("alpha range is empty")
        g = self.cavity.loss.g
        if g >= 1:
            raise ValueError("a scan needs a lossy cavity (reflectivity < 1)")
        f_exp = np.pi * np.sqrt(g) / (1 - g)
        if self.alpha_step > 2 * np.pi / (10 * f_exp) * (1 + 1e-9):
            raise ValueError(f"alpha step {self.alpha_step:.4g} too coarse for finesse "
                             f"{f_exp:.1f}; need <= {2 * np.pi / (10 * f_exp):.4g}")
        if self.solver not in ("series", "fixed_point"):
            raise ValueError("solver must be 'series' or 'fixed_point'")
        if not 0 < self.relaxation <= 1:
            raise ValueError("relaxation must lie in (0, 1]")
        if self.geometry not in GEOMETRIES:
            raise ValueError(f"geometry must be one of {GEOMETRIES}")
        if self.parallel < 1:
            raise ValueError("parallel must be >= 1")
        for p in self.probes:
            check_inside(self.cavity.grid, self.cavity.grid.dx, p.radius, p.center)

    @property
    def alphas(self) -> np.ndarray:
        count = int(np.floor((self.alpha_max - self.alpha_min) / self.alpha_step + 1e-9)) + 1
        return self.alpha_min + self.alpha_step * np.arange(count)

    def probe_names(self) -> list[str]:
        return [p.name or f"probe_{i}" for i, p in enumerate(self.probes)]


def series_length(g: float, tolerance: float) -> int:
    """Round trips K so that the truncated series meets the relative residual bound.

    Residual of the K-term sum is t g^K |E_in|, and |E(alpha)| >= t |E_in|/(1+g).
    """
    return int(np.ceil(np.log(tolerance / (1 + g)) / np.log(g)))


def _drive(cav: Cavity, config: ScanRunConfig) -> np.ndarray:
    u = np.array(to_fft_layout(cav.drive_field.amps))
    return cav.iterator.oracle_pass(u) if config.geometry == "linear" else u


def _readout(cav: Cavity, config: ScanRunConfig):
    if config.geometry == "linear":
        return cav.iterator.focus_pass
    return lambda u: u


class _ScanData:
    def __init__(self, cav: Cavity, config: ScanRunConfig):
        self.cav = cav
        self.config = config
        self.masks = [np.flatnonzero(to_fft_layout(disc_mask(cav.n, cav.dx, p.radius, p.center) > 0))
                      for p in config.probes]


def _series_scan(cav: Cavity, config: ScanRunConfig, alphas: np.ndarray):
    loss = config.cavity.loss
    g, t = loss.g, loss.t
    K = series_length(g, config.tolerance)
    dx2 = cav.dx**2
    psi0t, psi1, _ = cav.modes
    p0 = to_fft_layout(psi0t.amps).ravel()
    p1 = None if psi1 is None else to_fft_layout(psi1.amps).ravel()
    masks = _ScanData(cav, config).masks
    u = _drive(cav, config)
    e0 = u.ravel().copy()
    readout = _readout(cav, config)
    corr = np.empty(K, complex)
    proj0 = np.empty(K, complex)
    proj1 = np.zeros(K, complex)
    samples = [np.empty((K, m.size), complex) for m in masks]
    log.info("series scan: %d round trips", K)
    for k in range(K):
        if k and not np.isfinite(u.flat[0]):
            raise FloatingPointError(f"non-finite field at round trip {k}")
        corr[k] = np.vdot(e0, u.ravel()) * dx2
        flat = readout(u).ravel()
        proj0[k] = np.vdot(p0, flat) * dx2
        if p1 is not None:
            proj1[k] = np.vdot(p1, flat) * dx2
        for s, m in zip(samples, masks):
            s[k] = flat[m]
        if k < K - 1:
            u = cav.round_trip(u)

    ks = np.arange(K)
    z = np.exp(1j * np.outer(alphas, ks)) * g**ks
    cols = {}
    # |E|^2 from the Toeplitz correlation of the unitary trajectory
    w = g**ks * (1 - g ** (2 * (K - ks))) / (1 - g**2)
    ph = np.exp(1j * np.outer(alphas, ks))
    circ = t**2 * (w[0] * corr[0].real + 2 * np.real(ph[:, 1:] @ (w[1:] * corr[1:])))
    cols["transmitted"] = t**2 * circ
    for name, s in zip(config.probe_names(), samples):
        a = t * (z @ s)
        cols[name] = t**2 * np.sum(np.abs(a) ** 2, axis=1) * dx2
    cols["p0"] = np.abs(t * (z @ proj0)) ** 2
    cols["p1"] = np.abs(t * (z @ proj1)) ** 2
    e_in = np.sqrt(corr[0].real)
    cols["residual"] = t * g**K * e_in / np.sqrt(circ)
    return cols, {"series_terms": K}


def _fixed_point(cav: Cavity, config: ScanRunConfig, alpha: float, e_in: np.ndarray):
    loss = config.cavity.loss
    g, t = loss.g, loss.t
    z = g * np.exp(1j * alpha)
    beta = config.relaxation
    cap = config.max_iterations or int(10 * np.pi * np.sqrt(g) / (1 - g) ** 2) + 200
    drive = t * e_in
    e = drive.copy()
    res = np.inf
    for it in range(1, cap + 1):
        r = drive + z * cav.round_trip(e) - e
        res = np.linalg.norm(r) / np.linalg.norm(e)
        if not np.isfinite(res):
            raise FloatingPointError(f"non-finite field at alpha={alpha}")
        if res < config.tolerance:
            return e, res, it
        e = e + beta * r
    raise ConvergenceError(alpha, res, cap)


def steady_field(cav: Cavity, config: ScanRunConfig, alpha: float) -> tuple[Field, float]:
    """Intracavity steady state at one round-trip phase via damped fixed-point iteration."""
    e, res, _ = _fixed_point(cav, config, float(alpha), _drive(cav, config))
    return Field(from_fft_layout(_readout(cav, config)(e)), cav.dx), res


def _fixed_point_scan(cav: Cavity, config: ScanRunConfig, alphas: np.ndarray):
    loss = config.cavity.loss
    t = loss.t
    dx2 = cav.dx**2
    psi0t, psi1, _ = cav.modes
    p0 = to_fft_layout(psi0t.amps)
    p1 = None if psi1 is None else to_fft_layout(psi1.amps)
    masks = _ScanData(cav, config).masks
    e_in = _drive(cav, config)
    readout = _readout(cav, config)

    def one(alpha):
        e, res, it = _fixed_point(cav, config, float(alpha), e_in)
        e = readout(e)
        flat = e.ravel()
        inten = flat.real**2 + flat.imag**2
        row = {"transmitted": t**2 * inten.sum() * dx2}
        for name, m in zip(config.probe_names(), masks):
            row[name] = t**2 * inten[m].sum() * dx2
        row["p0"] = abs(np.vdot(p0, e) * dx2) ** 2
        row["p1"] = abs(np.vdot(p1, e) * dx2) ** 2 if p1 is not None else 0.0
        row["residual"] = res
        row["iterations"] = it
        return row

    if config.parallel > 1:
        with ThreadPoolExecutor(max_workers=config.parallel) as ex:
            rows = list(ex.map(one, alphas))
    else:
        rows = [one(a) for a in alphas]
    cols = {k: np.array([r[k] for r in rows]) for k in rows[0]}
    return cols, {}


def run_scan(config: ScanRunConfig, cavity: Cavity | None = None, snapshot_alphas=()):
    """Steady-state spectrum over alpha; returns (Spectrum, {alpha: intensity image}).

    ``series`` resums one stored trajectory G^k E_in for every alpha at once
    (the truncated Neumann series, with an exact residual bound);
    ``fixed_point`` solves each alpha by damped iteration.
    """
    cav = cavity or Cavity(config.cavity)
    alphas = config.alphas
    if config.solver == "series":
        cols, extra = _series_scan(cav, config, alphas)
    else:
        cols, extra = _fixed_point_scan(cav, config, alphas)
    bad = np.flatnonzero(~(cols["residual"] < config.tolerance))
    if bad.size:
        i = int(bad[0])
        raise ConvergenceError(float(alphas[i]), float(cols["residual"][i]), extra.get("series_terms", 0))
    spec = Spectrum(alphas, cols, {
        "chi": cav.chi, "g": config.cavity.loss.g, "t": config.cavity.loss.t,
        "finesse": np.pi * np.sqrt(config.cavity.loss.g) / (1 - config.cavity.loss.g),
        "solver": config.solver, "geometry": config.geometry, **extra,
    })
    spec.check_finite()
    snaps = {}
    for a in snapshot_alphas:
        f, _ = steady_field(cav, config, a)
        snaps[float(a)] = config.cavity.loss.t**2 * f.intensity
    return spec, snaps


def white_light_summary(spectrum: Spectrum, solution: str, background: str) -> dict:
    """Alpha-integrated solution/background enhancement and its ratio to the resonant value.

    The resonant enhancement is the solution/background ratio at the alpha
    where the solution channel peaks.
    """
    a = spectrum.values
    if a.size < 3 or a[-1] - a[0] < 2 * np.pi * (1 - 1e-6) - (a[1] - a[0]):
        raise ValueError("white-light summary needs a spectrum spanning a full free spectral range")
    sol = spectrum[solution]
    bg = spectrum[background]
    integrated = np.trapezoid(sol, a) / np.trapezoid(bg, a)
    i = int(np.argmax(sol))
    resonant = sol[i] / bg[i]
    return {"integrated": float(integrated), "resonant": float(resonant),
            "ratio": float(integrated / resonant), "resonant_alpha": float(a[i])}
