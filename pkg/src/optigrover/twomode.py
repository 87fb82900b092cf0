"""Closed-form two-mode model of the searching cavity.

Basis: the orthonormalized input mode psi0~ (index 0) and the solution mode
psi1 (index 1).  One lossless round trip acts on the amplitudes (a0, a1) as

    a0 -> c a0 - s a1,   a1 -> s a0 + c a1,   c = 1 - 2 chi^2.

The second-order model uses s = 2 chi.  The exact projected map of two
reflections is a rotation, s = 2 chi sqrt(1 - chi^2); select it with
``exact=True``.  Both differ at O(chi^3).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .records import Spectrum


def rotation_angle(chi: float) -> float:
    """Exact per-round-trip rotation angle, arccos(1 - 2 chi^2)."""
    return float(np.arccos(1 - 2 * chi**2))


def round_trip_matrix(chi: float, exact: bool = False) -> np.ndarray:
    c = 1 - 2 * chi**2
    s = 2 * chi * np.sqrt(1 - chi**2) if exact else 2 * chi
    return np.array([[c, -s], [s, c]])


def rabi_populations(chi: float, tau, exact: bool = False):
    """(rho00, rho11) after ``tau`` round trips starting in psi0~.

    Default is cos^2(2 chi tau); ``exact`` uses the rotation angle
    arccos(1 - 2 chi^2) instead of 2 chi.
    """
    if not 0 < chi < 1:
        raise ValueError("chi must lie in (0, 1)")
    w = rotation_angle(chi) if exact else 2 * chi
    ph = w * np.asarray(tau, dtype=float)
    return np.cos(ph) ** 2, np.sin(ph) ** 2


@dataclass(frozen=True)
class TwoModeParams:
    chi: float
    t: float
    alpha: float | np.ndarray = 0.0
    excess_amplitude: float = 1.0

    def __post_init__(self):
        if not 0 < self.chi < 1:
            raise ValueError("chi must lie in (0, 1)")
        if not 0 < self.t < 1:
            raise ValueError("mirror transmission t must lie in (0, 1)")
        if not 0 < self.excess_amplitude <= 1:
            raise ValueError("excess amplitude factor must lie in (0, 1]")

    @property
    def g(self) -> float:
        return (1 - self.t**2) * self.excess_amplitude

    @property
    def finesse(self) -> float:
        return float(np.pi * np.sqrt(self.g) / (1 - self.g))

    @classmethod
    def from_finesse(cls, chi: float, finesse_value: float, alpha=0.0) -> "TwoModeParams":
        """Mirror-limited cavity (no excess loss) of the given finesse."""
        from .optics import amplitude_factor_for_finesse
        g = amplitude_factor_for_finesse(finesse_value)
        return cls(chi, float(np.sqrt(1 - g)), alpha)


@dataclass(frozen=True)
class TwoModeState:
    a0: complex | np.ndarray
    a1: complex | np.ndarray

    @property
    def p0(self):
        return np.abs(self.a0) ** 2

    @property
    def p1(self):
        return np.abs(self.a1) ** 2

    @property
    def rho00(self):
        return self.p0 / (self.p0 + self.p1)

    @property
    def rho11(self):
        return self.p1 / (self.p0 + self.p1)


def steady_state(params: TwoModeParams, exact: bool = False, drive=(1.0, 0.0)) -> TwoModeState:
    """Solve a = z M a + t b with z = g exp(i alpha) (vectorized over alpha).

    ``drive`` is the input amplitude vector b in the (psi0~, psi1) basis; the
    default feeds psi0~ only, as in the steady-state equations.
    """
    (c, ms), (s, _) = round_trip_matrix(params.chi, exact)
    z = params.g * np.exp(1j * np.asarray(params.alpha, dtype=float))
    b0, b1 = drive
    d = 1 - z * c
    det = d * d + (z * s) ** 2
    if np.any(np.abs(det) < 1e-300):
        raise ZeroDivisionError("singular steady-state system")
    a0 = params.t * (d * b0 - z * s * b1) / det
    a1 = params.t * (z * s * b0 + d * b1) / det
    return TwoModeState(a0, a1)


def steady_state_series(params: TwoModeParams, exact: bool = False, drive=(1.0, 0.0),
                        tol: float = 1e-14, max_terms: int = 10_000_000) -> TwoModeState:
    """Geometric-series buildup sum_k (z M)^k t b, truncated when a term < tol."""
    m = round_trip_matrix(params.chi, exact)
    z = params.g * np.exp(1j * float(params.alpha))
    term = params.t * np.asarray(drive, dtype=complex)
    acc = term.copy()
    for _ in range(max_terms):
        term = z * (m @ term)
        acc += term
        nrm = np.linalg.norm(term)
        if nrm < tol:
            break
        if not nrm < 1e100:
            raise RuntimeError("series diverges")
    else:
        raise RuntimeError("series did not converge")
    return TwoModeState(complex(acc[0]), complex(acc[1]))


def energy_balance(params: TwoModeParams, exact: bool = True, drive=(1.0, 0.0)) -> dict:
    """Power bookkeeping for a symmetric two-mirror cavity in steady state.

    Mirror amplitude reflectivity r = sqrt(1 - t^2); the excess amplitude
    factor acts on the return leg.  Returns input, transmitted, reflected and
    excess powers; they balance exactly when the round-trip map is unitary.
    """
    st = steady_state(params, exact, drive)
    a = np.array([st.a0, st.a1])
    b = np.asarray(drive, dtype=complex)
    r = np.sqrt(1 - params.t**2)
    z = np.exp(1j * float(params.alpha))
    back = r * params.excess_amplitude * z * (round_trip_matrix(params.chi, exact) @ a)
    refl = -r * b + params.t * back
    circ = float(np.vdot(a, a).real)
    return {
        "input": float(np.vdot(b, b).real),
        "transmitted": params.t**2 * circ,
        "reflected": float(np.vdot(refl, refl).real),
        "excess": (1 - params.excess_amplitude**2) * r**2 * circ,
    }


def finesse(reflectivity: float) -> float:
    """F = pi sqrt(R) / (1 - R)."""
    if not 0 < reflectivity < 1:
        raise ValueError("reflectivity must lie in (0, 1)")
    return float(np.pi * np.sqrt(reflectivity) / (1 - reflectivity))


def doublet_splitting(chi: float) -> float:
    """Separation in alpha of the two eigen-resonances, 2 arccos(1 - 2 chi^2)."""
    if not 0 < chi < 0.5:
        raise ValueError("chi must lie in (0, 0.5)")
    return 2 * rotation_angle(chi)


def spectrum(params: TwoModeParams, alphas, exact: bool = False, drive=(1.0, 0.0)) -> Spectrum:
    """Intracavity mode powers versus round-trip phase."""
    alphas = np.asarray(alphas, dtype=float)
    st = steady_state(TwoModeParams(params.chi, params.t, alphas, params.excess_amplitude), exact, drive)
    p0, p1 = st.p0, st.p1
    return Spectrum(alphas, {
        "p0": p0, "p1": p1, "total": p0 + p1, "fraction1": p1 / (p0 + p1),
    }, {"chi": params.chi, "t": params.t, "g": params.g, "finesse": params.finesse, "exact": exact})


def contrast(chi: float, state: TwoModeState):
    """Solution-spot intensity over background intensity, N |a1|^2 / |a0|^2."""
    return np.abs(state.a1) ** 2 / (chi**2 * np.abs(state.a0) ** 2)


def peak_contrast(params: TwoModeParams, exact: bool = False) -> float:
    """Contrast at the round-trip phase where the solution power peaks."""
    def neg_p1(a):
        return -steady_state(TwoModeParams(params.chi, params.t, a, params.excess_amplitude), exact).p1
    grid = np.linspace(-np.pi, np.pi, 4001)
    i = int(np.argmin(neg_p1(grid)))
    step = grid[1] - grid[0]
    res = minimize_scalar(neg_p1, bounds=(grid[i] - step, grid[i] + step), method="bounded",
                          options={"xatol": 1e-12})
    st = steady_state(TwoModeParams(params.chi, params.t, res.x, params.excess_amplitude), exact)
    return float(contrast(params.chi, st))
