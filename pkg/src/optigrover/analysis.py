"""Peak finding, finesse, contrast and search-period extraction."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import signal
from scipy.optimize import OptimizeWarning, curve_fit

from .records import Record, Trajectory

FSR = 2 * np.pi
# Dip depth of two equal lines at the Rayleigh separation
RAYLEIGH_PROMINENCE = 1 - 8 / np.pi**2


class PeakResolutionError(ValueError):
    """Peaks too narrow for the sampling, or overlapping at half height."""


class NoOscillation(ValueError):
    pass


@dataclass
class PeakSet:
    locations: np.ndarray
    heights: np.ndarray
    fwhm: np.ndarray
    prominences: np.ndarray
    step: float
    residual: float = np.nan
    flags: list[str] = field(default_factory=list)

    def __len__(self):
        return self.locations.size

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.fwhm) & (self.fwhm > self.step)


def _uniform_step(a: np.ndarray) -> float | None:
    d = np.diff(a)
    if d.size and np.allclose(d, d[0], rtol=1e-6, atol=0):
        return float(d[0])
    return None


def _period_samples(a: np.ndarray) -> int | None:
    """Samples per FSR if the sweep is uniform and covers at least one FSR."""
    step = _uniform_step(a)
    if step is None:
        return None
    p = int(round(FSR / step))
    if abs(p * step - FSR) > 1e-6 * FSR or a.size < p:
        return None
    return p


def _raw_peaks(a: np.ndarray, y: np.ndarray):
    """Maxima with prominences; wraps one FSR around when the sweep is periodic.

    Returns (indices into y, prominences, padded y, pad offset, period or None).
    """
    p = _period_samples(a)
    if p is None:
        idx, props = signal.find_peaks(y, prominence=0)
        return idx, props["prominences"], y, 0, None
    # periodic extension: y[i] == y[i + p]
    ext = np.concatenate([y[:p], y, y[y.size - p:]])
    off = p
    idx, props = signal.find_peaks(ext, prominence=0)
    keep_to = p * (y.size // p)
    sel = (idx >= off) & (idx < off + keep_to)
    return idx[sel] - off, props["prominences"][sel], ext, off, p


def _half_width(ext: np.ndarray, i: int, h: float, step: float) -> float:
    half = h / 2
    left = i
    while left > 0 and ext[left] > half:
        left -= 1
    right = i
    while right < ext.size - 1 and ext[right] > half:
        right += 1
    if ext[left] > half or ext[right] > half:
        return np.nan
    xl = left + (half - ext[left]) / (ext[left + 1] - ext[left])
    xr = right - 1 + (ext[right - 1] - half) / (ext[right - 1] - ext[right])
    return (xr - xl) * step


def find_peaks(spectrum: Record, channel: str, prominence: float = 0.1) -> PeakSet:
    """Local maxima of ``channel`` whose prominence exceeds ``prominence`` times the maximum.

    Locations are refined by a parabola through the top three samples; the
    FWHM comes from linearly interpolated half-height crossings.  A sweep that
    covers whole free spectral ranges on a uniform grid is treated as periodic.
    """
    if not 0 < prominence < 1:
        raise ValueError("prominence must lie in (0, 1)")
    a = spectrum.values
    if a.size < 3:
        raise ValueError("spectrum too short for peak finding")
    if np.any(np.diff(a) <= 0):
        raise ValueError("sweep must be strictly increasing")
    y = np.asarray(spectrum[channel], dtype=float)
    step = _uniform_step(a) or float(np.min(np.diff(a)))
    empty = PeakSet(np.empty(0), np.empty(0), np.empty(0), np.empty(0), step)
    ymax = y.max()
    if not ymax > 0:
        return empty
    idx, prom, ext, off, period = _raw_peaks(a, y)
    sel = prom > prominence * ymax
    idx, prom = idx[sel], prom[sel]
    if idx.size == 0:
        return empty

    locs, heights, widths, flags = [], [], [], []
    for i in idx:
        j = i + off
        y0, y1, y2 = ext[j - 1] if j > 0 else ext[j], ext[j], ext[j + 1] if j + 1 < ext.size else ext[j]
        den = y0 - 2 * y1 + y2
        shift = 0.5 * (y0 - y2) / den if den < 0 else 0.0
        shift = float(np.clip(shift, -0.5, 0.5))
        locs.append(a[0] + (i + shift) * step if period else a[i] + shift * step)
        heights.append(y1 - 0.25 * (y0 - y2) * shift)
        w = _half_width(ext, j, y1, step)
        widths.append(w)
        if not np.isfinite(w):
            flags.append(f"overlapping peak near {a[i]:.4g}")
        elif w <= step:
            flags.append(f"unresolved peak near {a[i]:.4g}")
    order = np.argsort(locs)
    ps = PeakSet(np.asarray(locs)[order], np.asarray(heights)[order], np.asarray(widths)[order],
                 prom[order], step, flags=flags)
    ps.residual = _lorentz_residual(a, y, ps, period is not None)
    return ps


def _lorentz_residual(a, y, ps: PeakSet, periodic: bool) -> float:
    ok = ps.valid
    if not ok.any():
        return np.nan
    model = np.zeros_like(y)
    for x0, h, w in zip(ps.locations[ok], ps.heights[ok], ps.fwhm[ok]):
        d = a - x0
        if periodic:
            d = (d + np.pi) % FSR - np.pi
        model += h / (1 + (2 * d / w) ** 2)
    return float(np.sqrt(np.mean((y - model) ** 2)) / y.max())


def fit_finesse(peaks: PeakSet) -> float:
    """FSR/FWHM averaged over the peaks (FSR = 2 pi in alpha)."""
    if len(peaks) == 0:
        raise PeakResolutionError("no peaks")
    if peaks.flags or not peaks.valid.all():
        raise PeakResolutionError("; ".join(peaks.flags) or "invalid peak widths")
    return float(np.mean(FSR / peaks.fwhm))


def airy_transmission(alpha, finesse_value, center=0.0, peak=1.0):
    """Fabry-Perot line shape peak / (1 + (2F/pi)^2 sin^2((alpha - center)/2))."""
    return peak / (1 + (2 * finesse_value / np.pi) ** 2 * np.sin((np.asarray(alpha) - center) / 2) ** 2)


def fit_airy_finesse(spectrum: Record, channel: str) -> float:
    """Secondary estimator: least-squares Airy line shape fit of a single-line comb."""
    a = spectrum.values
    y = np.asarray(spectrum[channel], dtype=float)
    i = int(np.argmax(y))
    ps = find_peaks(spectrum, channel, 0.5)
    f0 = float(FSR / ps.fwhm[0]) if len(ps) and ps.valid[0] else 10.0
    with warnings.catch_warnings():
        # an exact line shape leaves the covariance undefined, which is harmless here
        warnings.simplefilter("ignore", OptimizeWarning)
        popt, _ = curve_fit(airy_transmission, a, y, p0=(f0, a[i], y[i]))
    return float(abs(popt[0]))


def _vertex(y: np.ndarray, k: int, pick) -> float:
    """Extremum of the parabola through y[k-1:k+2] (falls back to the sample)."""
    if k <= 0 or k >= y.size - 1:
        return float(y[k])
    y0, y1, y2 = y[k - 1], y[k], y[k + 1]
    den = y0 - 2 * y1 + y2
    if den == 0:
        return float(y1)
    v = y1 - (y0 - y2) ** 2 / (8 * den)
    return float(pick([v, y1]))


def doublet_resolved(spectrum: Record, channel: str, dip: float = RAYLEIGH_PROMINENCE,
                     floor: float = 0.05) -> bool:
    """True when each FSR holds at least two separated lines.

    Two neighbouring maxima count as separate lines when the valley between
    them falls below (1 - dip) times the lower of the two.  The default dip is
    that of two equal lines at the Rayleigh separation.  Maxima below
    ``floor`` times the global maximum are ignored.
    """
    a = spectrum.values
    y = np.asarray(spectrum[channel], dtype=float)
    idx, _, ext, off, period = _raw_peaks(a, y)
    idx = idx[y[idx] >= floor * y.max()]
    if idx.size < 2:
        return False
    j = idx + off
    heights = [_vertex(ext, k, np.max) for k in j]
    if period:
        # close the ring with the first line one FSR later
        j = np.append(j, j[0] + period)
        heights.append(heights[0])
    separated = 0
    for k in range(len(j) - 1):
        seg = ext[j[k]:j[k + 1] + 1]
        m = int(np.argmin(seg)) + j[k]
        if _vertex(ext, m, np.min) <= (1 - dip) * min(heights[k], heights[k + 1]):
            separated += 1
    n_fsr = (a.size // period) if period else max(1, int(round((a[-1] - a[0]) / FSR)))
    lines = separated if period else separated + 1
    return lines >= 2 * n_fsr


def image_contrast(image: np.ndarray, solution_discs, background: np.ndarray) -> float:
    """Highest mean intensity over the solution discs over the mean background intensity."""
    image = np.asarray(image, dtype=float)
    bg = np.asarray(background, dtype=bool)
    if bg.shape != image.shape:
        raise ValueError("background mask does not match the image")
    if not bg.any():
        raise ValueError("empty background mask")
    means = []
    for d in solution_discs:
        d = np.asarray(d, dtype=bool)
        if d.shape != image.shape:
            raise ValueError("solution disc does not match the image")
        if not d.any():
            raise ValueError("empty solution disc")
        means.append(image[d].mean())
    if not means:
        raise ValueError("no solution discs")
    b = image[bg].mean()
    if not b > 0:
        raise ZeroDivisionError("background intensity is zero")
    return float(max(means) / b)


def _sin2_fit(tau: np.ndarray, y: np.ndarray):
    """Fit y = c - a cos(2 w tau) - b sin(2 w tau); returns (w, amplitude, phase, rms)."""
    def lsq(w):
        basis = np.column_stack([np.ones_like(tau), np.cos(2 * w * tau), np.sin(2 * w * tau)])
        coef, *_ = np.linalg.lstsq(basis, y, rcond=None)
        return coef, float(np.sqrt(np.mean((basis @ coef - y) ** 2)))

    span = tau[-1] - tau[0]
    ws = np.linspace(np.pi / (4 * span), np.pi / 2, 4000)
    errs = [lsq(w)[1] for w in ws]
    w0 = ws[int(np.argmin(errs))]
    coef, _ = lsq(w0)
    amp0 = np.hypot(coef[1], coef[2])
    ph0 = np.arctan2(coef[2], -coef[1]) / 2

    def model(t, w, amp, ph, c):
        return c - amp * np.cos(2 * (w * t + ph))

    popt, _ = curve_fit(model, tau, y, p0=(w0, amp0, ph0, coef[0]))
    rms = float(np.sqrt(np.mean((model(tau, *popt) - y) ** 2)))
    return abs(popt[0]), abs(popt[1]), popt[2], rms


def search_period(trajectory: Trajectory, channel: str | None = None, lossless: bool | None = None) -> float:
    """Search period in round trips.

    Lossless runs: least-squares fit of rho11(tau) to an offset sin^2(w tau + phi)
    oscillation, period pi/w.  Lossy runs: the round trip of maximum solution power.
    """
    tau = trajectory.values
    if lossless is None:
        lossless = trajectory.meta.get("g", 1.0) == 1.0
    if not lossless:
        y = trajectory[channel or "solution_power"]
        i = int(np.argmax(y))
        if i == y.size - 1:
            raise NoOscillation("solution power still rising at the end of the run")
        return float(tau[i])
    y = trajectory[channel or "rho11"]
    if np.ptp(y) < 1e-6:
        raise NoOscillation("no oscillation in the trajectory")
    w, amp, _, _ = _sin2_fit(tau.astype(float), np.asarray(y, dtype=float))
    period = np.pi / w
    if period > tau[-1] - tau[0] + 1:
        raise NoOscillation(f"fitted period {period:.1f} exceeds the trajectory span")
    return float(period)


def oscillation_amplitude(trajectory: Trajectory, channel: str = "rho11") -> float:
    """Peak-to-peak amplitude of the fitted sin^2 oscillation."""
    tau = trajectory.values.astype(float)
    _, amp, _, _ = _sin2_fit(tau, np.asarray(trajectory[channel], dtype=float))
    return float(2 * amp)
