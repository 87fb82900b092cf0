"""Phase plates, the lens Fourier transform and the composed Grover round trip."""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.fft as sfft

from .field import (BeamParams, Field, GridSpec, PlaneMismatch, check_inside, disc_mask)


@dataclass(frozen=True)
class Spot:
    center: tuple[float, float]
    radius: float
    phase: float = np.pi / 2

    def __post_init__(self):
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        if not self.radius > 0:
            raise ValueError("spot radius must be positive")
        if not -np.pi < self.phase <= np.pi:
            raise ValueError(f"spot phase {self.phase} outside (-pi, pi]")


@dataclass(frozen=True, eq=False)
class PlateSpec:
    """Phase plate: disc spots or a raster phase mask, on one conjugate plane.

    ``phase`` values are per pass; the plate is traversed
    ``passes_per_round_trip`` times per cavity round trip.
    """
    spots: tuple[Spot, ...] = ()
    plane: str = "image"
    passes_per_round_trip: int = 2
    raster: np.ndarray | None = None
    _cache: dict = dc_field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "spots", tuple(self.spots))
        if self.plane not in ("image", "focal"):
            raise ValueError("plate plane must be 'image' or 'focal'")
        if self.passes_per_round_trip < 1:
            raise ValueError("passes_per_round_trip must be >= 1")
        if self.raster is not None:
            if self.spots:
                raise ValueError("raster mask and spots are mutually exclusive")
            r = np.array(self.raster, dtype=float)
            if r.ndim != 2 or r.shape[0] != r.shape[1]:
                raise ValueError("raster mask must be square")
            if not np.all(np.isfinite(r)):
                raise ValueError("raster mask contains non-finite phases")
            r.flags.writeable = False
            object.__setattr__(self, "raster", r)

    @property
    def count(self) -> int:
        return len(self.spots)

    @property
    def is_empty(self) -> bool:
        if self.raster is not None:
            return not np.any(self.raster)
        return not self.spots or all(s.phase == 0 for s in self.spots)

    def phase_map(self, n: int, pitch: float) -> np.ndarray:
        """Per-pass phase (radians) on an n x n grid of the given pitch."""
        key = (n, float(pitch))
        if key not in self._cache:
            if self.raster is not None:
                if self.raster.shape != (n, n):
                    raise ValueError(f"raster mask is {self.raster.shape}, grid is {(n, n)}")
                phi = self.raster
            else:
                phi = np.zeros((n, n))
                for s in self.spots:
                    phi = phi + s.phase * disc_mask(n, pitch, s.radius, s.center)
            phi = np.array(phi, dtype=float)
            phi.flags.writeable = False
            self._cache[key] = phi
        return self._cache[key]

    def transmission(self, n: int, pitch: float, passes: int | None = None) -> np.ndarray:
        p = self.passes_per_round_trip if passes is None else passes
        key = ("t", n, float(pitch), p)
        if key not in self._cache:
            t = np.exp(1j * p * self.phase_map(n, pitch))
            t.flags.writeable = False
            self._cache[key] = t
        return self._cache[key]

    def check_fits(self, grid: GridSpec, pitch: float) -> None:
        for s in self.spots:
            check_inside(grid, pitch, s.radius, s.center)


@dataclass(frozen=True)
class LossModel:
    """Mirror reflectivity R (power, per mirror) and excess round-trip power loss."""
    reflectivity: float = 1.0
    excess: float = 0.0

    def __post_init__(self):
        if not 0 < self.reflectivity <= 1:
            raise ValueError("reflectivity must lie in (0, 1]")
        if not 0 <= self.excess < 1:
            raise ValueError("excess loss must lie in [0, 1)")

    @property
    def t(self) -> float:
        """Mirror amplitude transmission."""
        return float(np.sqrt(1 - self.reflectivity))

    @property
    def g(self) -> float:
        """Round-trip amplitude factor (1 - t^2) sqrt(1 - excess)."""
        return float(self.reflectivity * np.sqrt(1 - self.excess))

    @property
    def round_trip_power_loss(self) -> float:
        return 1 - self.g**2

    @classmethod
    def for_finesse(cls, finesse: float, reflectivity: float) -> "LossModel":
        """Excess loss that brings mirrors of ``reflectivity`` down to ``finesse``."""
        g = amplitude_factor_for_finesse(finesse)
        if g > reflectivity:
            raise ValueError(f"finesse {finesse} needs g={g:.4f} > R={reflectivity}")
        return cls(reflectivity, 1 - (g / reflectivity) ** 2)

    @classmethod
    def for_power_loss(cls, loss: float, reflectivity: float = 1.0) -> "LossModel":
        """Total round-trip power loss ``loss`` (mirrors plus excess)."""
        g = np.sqrt(1 - loss)
        if g > reflectivity:
            raise ValueError("mirror loss alone already exceeds the requested loss")
        return cls(reflectivity, 1 - (g / reflectivity) ** 2)


def amplitude_factor_for_finesse(finesse: float) -> float:
    """Inverse of F = pi sqrt(g) / (1 - g)."""
    if not finesse > 0:
        raise ValueError("finesse must be positive")
    x = (-np.pi + np.sqrt(np.pi**2 + 4 * finesse**2)) / (2 * finesse)
    return float(x * x)


def apply_plate(field: Field, plate: PlateSpec, passes: int | None = None) -> Field:
    if field.plane != plate.plane:
        raise PlaneMismatch(f"{plate.plane}-plane plate applied to a {field.plane}-plane field")
    if plate.is_empty:
        return field
    return field.replace(field.amps * plate.transmission(field.n, field.dx, passes))


def lens_fourier(field: Field, beam: BeamParams, direction: str = "forward") -> Field:
    """Unitary, centred 2D DFT between conjugate planes (x_focal = wavelength f u)."""
    if direction not in ("forward", "inverse"):
        raise ValueError("direction must be 'forward' or 'inverse'")
    new_dx = beam.wavelength * beam.focal_length / (field.n * field.dx)
    op = sfft.fft2 if direction == "forward" else sfft.ifft2
    out = sfft.fftshift(op(sfft.ifftshift(field.amps), norm="ortho")) * (field.dx / new_dx)
    plane = "focal" if field.plane == "image" else "image"
    return Field(out, new_dx, plane)


def grover_round_trip(field: Field, oracle: PlateSpec, focus: PlateSpec, beam: BeamParams,
                      loss: LossModel | None = None) -> Field:
    """g * Phi0^p * F^-1 * Phi_f^p * F applied to an image-plane field."""
    if field.plane != "image" or oracle.plane != "image" or focus.plane != "focal":
        raise PlaneMismatch("round trip needs an image-plane field, image oracle and focal focus plate")
    out = lens_fourier(field, beam, "forward")
    out = apply_plate(out, focus)
    out = lens_fourier(out, beam, "inverse")
    out = apply_plate(out, oracle)
    g = 1.0 if loss is None else loss.g
    return out if g == 1.0 else out * g


class GroverIterator:
    """Round-trip operator on raw arrays in FFT (unshifted) layout.

    Equivalent to :func:`grover_round_trip` without the per-call Field
    bookkeeping; the pulsed and scan drivers iterate this.  Losses are not
    included; the drivers apply the scalar round-trip factor themselves.
    """

    def __init__(self, grid: GridSpec, beam: BeamParams, oracle: PlateSpec, focus: PlateSpec):
        if oracle.plane != "image" or focus.plane != "focal":
            raise PlaneMismatch("oracle must sit on the image plane and focus plate on the focal plane")
        self.n = grid.n
        self.focal_dx = grid.focal_pitch(beam)
        self.t_oracle = sfft.ifftshift(oracle.transmission(grid.n, grid.dx))
        self.t_focus = sfft.ifftshift(focus.transmission(grid.n, self.focal_dx))
        self.t_oracle_pass = sfft.ifftshift(oracle.transmission(grid.n, grid.dx, passes=1))
        self.t_focus_pass = sfft.ifftshift(focus.transmission(grid.n, self.focal_dx, passes=1))

    def oracle_pass(self, u: np.ndarray) -> np.ndarray:
        """A single pass through the oracle plate."""
        return u * self.t_oracle_pass

    def focus_pass(self, u: np.ndarray) -> np.ndarray:
        """Image plane to image plane through one pass of the focus plate."""
        v = sfft.fft2(u, norm="ortho")
        v *= self.t_focus_pass
        return sfft.ifft2(v, norm="ortho", overwrite_x=True)

    def __call__(self, u: np.ndarray) -> np.ndarray:
        v = sfft.fft2(u, norm="ortho")
        v *= self.t_focus
        v = sfft.ifft2(v, norm="ortho", overwrite_x=True)
        v *= self.t_oracle
        return v


def to_fft_layout(a: np.ndarray) -> np.ndarray:
    return sfft.ifftshift(a)


def from_fft_layout(a: np.ndarray) -> np.ndarray:
    return sfft.fftshift(a)
