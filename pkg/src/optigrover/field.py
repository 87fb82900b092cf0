"""Transverse fields on a square grid, canonical input beams and mode overlaps.

Amplitudes are stored so that the physical power of a field is
``sum(|amps|**2) * dx**2`` where ``dx`` is the pixel pitch of the plane the
samples live in.  The image plane uses the grid pitch; the focal plane uses
the conjugate pitch ``wavelength * f / (n * dx)`` set by the lens transform.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft as sfft
from scipy.special import j1

AIRY_FIRST_ZERO = 3.8317059702075125
MIN_SPOT_PIXELS = 4.0
PLANES = ("image", "focal")


class SamplingError(ValueError):
    """Grid and beam are incompatible (undersampled spot or guard band)."""


class PlaneMismatch(ValueError):
    pass


@dataclass(frozen=True)
class BeamParams:
    wavelength: float
    focal_length: float
    spot_radius: float

    def __post_init__(self):
        for name in ("wavelength", "focal_length", "spot_radius"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if not self.channel_count > 1:
            raise ValueError(f"channel count N={self.channel_count:.3g} must exceed 1")

    @property
    def k(self) -> float:
        return 2 * np.pi / self.wavelength

    @property
    def channel_count(self) -> float:
        """Search-space size N = 4 f^2 / (k^2 r_s^4)."""
        return 4 * self.focal_length**2 / (self.k**2 * self.spot_radius**4)

    @property
    def chi(self) -> float:
        return 1 / np.sqrt(self.channel_count)

    @property
    def dark_ring_radius(self) -> float:
        """First zero of the Airy input, also used as the effective beam radius."""
        return AIRY_FIRST_ZERO * self.focal_length / (self.k * self.spot_radius)

    def normalized_radius(self, r):
        return self.k * self.spot_radius * np.asarray(r) / self.focal_length

    @classmethod
    def from_channel_count(cls, n_channels: float, wavelength: float = 656e-9,
                           focal_length: float = 0.34) -> "BeamParams":
        k = 2 * np.pi / wavelength
        r_s = np.sqrt(2 * focal_length / (k * np.sqrt(n_channels)))
        return cls(wavelength, focal_length, float(r_s))


def lattice_disc_count(radius_px: float) -> int:
    """Number of pixel centres within ``radius_px`` of a pixel centre."""
    m = int(np.ceil(radius_px)) + 1
    i = np.arange(-m, m + 1)
    return int(np.count_nonzero(i[:, None] ** 2 + i[None, :] ** 2 <= radius_px**2 * (1 + 1e-12)))


@dataclass(frozen=True)
class GridSpec:
    n: int
    dx: float

    def __post_init__(self):
        if self.n < 64 or self.n % 2:
            raise ValueError(f"grid size n={self.n} must be even and >= 64")
        if not self.dx > 0:
            raise ValueError("pixel pitch dx must be positive")

    @property
    def extent(self) -> float:
        return self.n * self.dx

    def focal_pitch(self, beam: BeamParams) -> float:
        return beam.wavelength * beam.focal_length / (self.n * self.dx)

    def pitch(self, plane: str, beam: BeamParams | None = None) -> float:
        if plane == "image":
            return self.dx
        if beam is None:
            raise ValueError("focal-plane pitch needs the beam parameters")
        return self.focal_pitch(beam)

    def coords(self, pitch: float | None = None):
        d = self.dx if pitch is None else pitch
        x = (np.arange(self.n) - self.n // 2) * d
        return np.meshgrid(x, x, indexing="xy")

    def check(self, beam: BeamParams, spot_radius: float | None = None) -> None:
        r_s = beam.spot_radius if spot_radius is None else spot_radius
        if r_s < MIN_SPOT_PIXELS * self.dx * (1 - 1e-9):
            raise SamplingError(
                f"spot radius {r_s:.4g} m is {r_s / self.dx:.2f} px; sampling needs >= "
                f"{MIN_SPOT_PIXELS:g} px (r_s >= 4 dx)")
        if beam.dark_ring_radius >= self.extent / 4:
            raise SamplingError(
                f"first dark ring {beam.dark_ring_radius:.4g} m violates guard band "
                f"< L/4 = {self.extent / 4:.4g} m")

    def discretization_error(self, beam: BeamParams) -> float:
        """Relative error of the discrete overlap sqrt(K_img K_foc)/n against 1/sqrt(N)."""
        s_i = beam.spot_radius / self.dx
        s_f = beam.spot_radius / self.focal_pitch(beam)
        k_i, k_f = lattice_disc_count(s_i), lattice_disc_count(s_f)
        return float(np.sqrt(k_i * k_f) / (np.pi * s_i * s_f) - 1)

    @classmethod
    def for_beam(cls, beam: BeamParams, n: int = 1024, min_focal_pixels: float = 2.5) -> "GridSpec":
        """Pick the pitch for ``n`` pixels that best preserves the channel count.

        Spots are pixel-centre discs in both conjugate planes, so the realized
        overlap is set by lattice counts.  The pitch is chosen to minimise the
        worst-case count error over a +-0.3% neighbourhood, among pitches that
        satisfy the sampling and guard-band checks.
        """
        product = beam.spot_radius**2 * n / (beam.wavelength * beam.focal_length)
        lo = MIN_SPOT_PIXELS
        hi = min(n * beam.spot_radius / (4 * beam.dark_ring_radius) * (1 - 1e-6),
                 product / min_focal_pixels)
        if hi <= lo:
            raise SamplingError(
                f"n={n} cannot resolve N={beam.channel_count:.0f}: need r_s >= 4 px with "
                f"the dark ring inside L/4; use a larger grid")
        best = None
        for s_i in np.linspace(lo, hi, 2000):
            errs = []
            for d in (-0.003, -0.0015, 0.0, 0.0015, 0.003):
                si = s_i * (1 + d)
                sf = product / si
                errs.append(np.sqrt(lattice_disc_count(si) * lattice_disc_count(sf))
                            / (np.pi * si * sf) - 1)
            score = max(abs(e) for e in errs)
            key = (round(score, 3), -min(s_i, product / s_i))
            if best is None or key < best[0]:
                best = (key, s_i)
        return cls(n, float(beam.spot_radius / best[1]))


@dataclass(frozen=True, eq=False)
class Field:
    amps: np.ndarray
    dx: float
    plane: str = "image"

    def __post_init__(self):
        if self.plane not in PLANES:
            raise ValueError(f"plane must be one of {PLANES}")
        a = np.asarray(self.amps)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("amplitudes must be a square 2D array")
        a = a.astype(np.complex128, copy=True)
        a.flags.writeable = False
        object.__setattr__(self, "amps", a)

    @property
    def n(self) -> int:
        return self.amps.shape[0]

    @property
    def intensity(self) -> np.ndarray:
        return np.abs(self.amps) ** 2

    @property
    def power(self) -> float:
        return float(np.sum(self.intensity) * self.dx**2)

    def replace(self, amps, plane: str | None = None, dx: float | None = None) -> "Field":
        return Field(amps, self.dx if dx is None else dx, self.plane if plane is None else plane)

    def __mul__(self, c):
        return self.replace(self.amps * c)

    __rmul__ = __mul__

    def __add__(self, other: "Field") -> "Field":
        _check_compatible(self, other)
        return self.replace(self.amps + other.amps)

    def __sub__(self, other: "Field") -> "Field":
        _check_compatible(self, other)
        return self.replace(self.amps - other.amps)

    def normalized(self) -> "Field":
        return self * (1 / np.sqrt(self.power))


def _check_compatible(a: Field, b: Field) -> None:
    if a.amps.shape != b.amps.shape or not np.isclose(a.dx, b.dx, rtol=1e-12, atol=0):
        raise ValueError("fields live on different grids")
    if a.plane != b.plane:
        raise PlaneMismatch(f"fields on different planes ({a.plane} vs {b.plane})")


def snap(center, pitch: float) -> tuple[float, float]:
    """Nearest pixel centre to ``center`` (metres)."""
    c = np.round(np.asarray(center, dtype=float) / pitch) * pitch
    return float(c[0]), float(c[1])


@lru_cache(maxsize=64)
def _disc_mask_cached(n, pitch, radius, cx, cy, supersample):
    x = (np.arange(n) - n // 2) * pitch
    if supersample <= 1:
        dx2 = (x - cx) ** 2
        dy2 = (x - cy) ** 2
        m = (dy2[:, None] + dx2[None, :]) <= radius**2 * (1 + 1e-12)
        out = m.astype(float)
    else:
        off = ((np.arange(supersample) + 0.5) / supersample - 0.5) * pitch
        out = np.zeros((n, n))
        for oy in off:
            for ox in off:
                out += ((x[:, None] + oy - cy) ** 2 + (x[None, :] + ox - cx) ** 2) <= radius**2
        out /= supersample**2
    out.flags.writeable = False
    return out


def disc_mask(n: int, pitch: float, radius: float, center=(0.0, 0.0), supersample: int = 1) -> np.ndarray:
    """Disc of pixels around the pixel centre nearest ``center``.

    With ``supersample == 1`` the mask is 0/1 (pixel centres inside the
    radius); otherwise edge pixels carry their covered area fraction.
    """
    cx, cy = snap(center, pitch)
    return _disc_mask_cached(int(n), float(pitch), float(radius), cx, cy, int(supersample))


def check_inside(grid: GridSpec, pitch: float, radius: float, center) -> None:
    half = (grid.n // 2 - 1) * pitch
    cx, cy = snap(center, pitch)
    if max(abs(cx), abs(cy)) + radius > half:
        raise SamplingError(f"disc at ({cx:.4g}, {cy:.4g}) m, radius {radius:.4g} m is clipped by the grid")


def make_airy_input(grid: GridSpec, beam: BeamParams, method: str = "bandlimited") -> Field:
    """Airy-disc input amplitude 2 J1(rho)/rho with unit power.

    ``bandlimited`` builds the beam as the inverse lens transform of the pixel
    disc of radius r_s in the focal plane, which is the exact discrete
    conjugate of the focus spot.  ``analytic`` samples 2 J1(rho)/rho directly
    (truncated at the grid edge, then renormalized).
    """
    grid.check(beam)
    if method == "analytic":
        x, y = grid.coords()
        rho = beam.normalized_radius(np.hypot(x, y))
        with np.errstate(invalid="ignore", divide="ignore"):
            amp = np.where(rho == 0, 1.0, 2 * j1(rho) / np.where(rho == 0, 1.0, rho))
        return Field(amp, grid.dx, "image").normalized()
    if method != "bandlimited":
        raise ValueError(f"unknown Airy method {method!r}")
    focal = disc_mask(grid.n, grid.focal_pitch(beam), beam.spot_radius)
    amp = sfft.fftshift(sfft.ifft2(sfft.ifftshift(focal), norm="ortho"))
    return Field(amp.real, grid.dx, "image").normalized()


def make_gaussian_input(grid: GridSpec, waist: float) -> Field:
    """Gaussian amplitude exp(-r^2/w0^2) with unit power."""
    if not waist > 0:
        raise ValueError("waist must be positive")
    x, y = grid.coords()
    return Field(np.exp(-(x**2 + y**2) / waist**2), grid.dx, "image").normalized()


def make_spot_mode(grid: GridSpec, r_s: float, center=(0.0, 0.0), *, pitch: float | None = None,
                   plane: str = "image", supersample: int = 1) -> Field:
    """Flat-top disc amplitude of radius ``r_s`` with unit power (the solution mode)."""
    d = grid.dx if pitch is None else pitch
    if r_s < MIN_SPOT_PIXELS * d * (1 - 1e-9) and plane == "image":
        raise SamplingError(f"spot radius is {r_s / d:.2f} px; need >= {MIN_SPOT_PIXELS:g} px")
    check_inside(grid, d, r_s, center)
    m = disc_mask(grid.n, d, r_s, center, supersample)
    return Field(m, d, plane).normalized()


def overlap(a: Field, b: Field) -> complex:
    """Inner product sum(conj(a) b) dx^2."""
    _check_compatible(a, b)
    return complex(np.vdot(a.amps, b.amps) * a.dx**2)


def orthonormalize(psi0: Field, psi1: Field) -> tuple[Field, float]:
    """Remove the psi1 component from psi0; returns (psi0_tilde, chi)."""
    chi_c = overlap(psi1, psi0)
    chi = abs(chi_c)
    if chi >= 1:
        raise ValueError(f"degenerate modes: |chi| = {chi:.6g} >= 1")
    if chi_c == 0:
        return psi0, 0.0
    t = (psi0 - psi1 * chi_c) * (1 / np.sqrt(1 - chi**2))
    if abs(chi_c.imag) < 1e-14 * max(chi, 1e-300):
        chi = chi_c.real
    return t, float(chi)
