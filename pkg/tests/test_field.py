import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from optigrover.field import (AIRY_FIRST_ZERO, BeamParams, Field, GridSpec, PlaneMismatch,
                              SamplingError, disc_mask, lattice_disc_count, make_airy_input,
                              make_gaussian_input, make_spot_mode, orthonormalize, overlap, snap)
from optigrover.optics import lens_fourier


def test_channel_count_formula():
    b = BeamParams(656e-9, 0.34, 50e-6)
    k = 2 * np.pi / 656e-9
    assert b.channel_count == pytest.approx(4 * 0.34**2 / (k**2 * 50e-6**4), rel=1e-14)
    assert b.channel_count == pytest.approx(806, abs=1)
    assert b.chi == pytest.approx(b.channel_count**-0.5)


@given(st.floats(10, 5000))
def test_from_channel_count_round_trip(n_ch):
    b = BeamParams.from_channel_count(n_ch)
    assert b.channel_count == pytest.approx(n_ch, rel=1e-12)
    # dark ring in units of r_s grows like sqrt(N)
    assert b.dark_ring_radius / b.spot_radius == pytest.approx(AIRY_FIRST_ZERO * np.sqrt(n_ch) / 2)


@pytest.mark.parametrize("kw", [dict(wavelength=0), dict(focal_length=-1), dict(spot_radius=0)])
def test_beam_rejects_nonpositive(kw):
    args = dict(wavelength=656e-9, focal_length=0.34, spot_radius=50e-6) | kw
    with pytest.raises(ValueError):
        BeamParams(**args)


def test_grid_validation():
    with pytest.raises(ValueError):
        GridSpec(63, 1e-5)
    with pytest.raises(ValueError):
        GridSpec(100, 0.0)
    b = BeamParams.from_channel_count(400)
    with pytest.raises(SamplingError, match="4 dx"):
        GridSpec(1024, b.spot_radius / 3).check(b)
    with pytest.raises(SamplingError, match="guard band"):
        GridSpec(256, b.spot_radius / 5).check(b)


@pytest.mark.parametrize("channels,n", [(100, 512), (400, 1024), (1000, 2048)])
def test_grid_chooser_preserves_channel_count(channels, n):
    b = BeamParams.from_channel_count(channels)
    g = GridSpec.for_beam(b, n)
    g.check(b)
    assert abs(g.discretization_error(b)) < 0.02


def test_grid_chooser_refuses_small_grid():
    with pytest.raises(SamplingError):
        GridSpec.for_beam(BeamParams.from_channel_count(1000), 256)


def test_lattice_count_small_radii():
    assert lattice_disc_count(0.5) == 1
    assert lattice_disc_count(1.0) == 5
    assert lattice_disc_count(2**0.5) == 9


def test_disc_mask_snaps_and_counts():
    n, d = 128, 1.0
    a = disc_mask(n, d, 4.3, (0.0, 0.0))
    b = disc_mask(n, d, 4.3, (10.4, -7.6))
    assert a.sum() == b.sum() == lattice_disc_count(4.3)
    assert snap((10.4, -7.6), d) == (10.0, -8.0)
    soft = disc_mask(n, d, 10.0, supersample=8)
    assert soft.sum() == pytest.approx(np.pi * 100, rel=0.01)


def test_field_arithmetic_and_planes():
    f = Field(np.ones((64, 64)), 1e-5)
    g = Field(np.ones((64, 64)), 1e-5, "focal")
    assert f.power == pytest.approx(64 * 64 * 1e-10)
    with pytest.raises(PlaneMismatch):
        f + g
    with pytest.raises(ValueError):
        Field(np.ones((4, 5)), 1.0)
    assert not f.amps.flags.writeable


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_lens_transform_unitary(seed):
    rng = np.random.default_rng(seed)
    b = BeamParams.from_channel_count(100)
    a = rng.normal(size=(64, 64)) + 1j * rng.normal(size=(64, 64))
    f = Field(a, 3e-6)
    F = lens_fourier(f, b)
    assert F.plane == "focal"
    assert F.power == pytest.approx(f.power, rel=1e-12)
    back = lens_fourier(F, b, "inverse")
    assert back.dx == pytest.approx(f.dx, rel=1e-14)
    assert np.max(np.abs(back.amps - f.amps)) < 1e-12 * np.max(np.abs(a))


def test_airy_input_is_band_limited(small_cavity):
    g, b = small_cavity.config.grid, small_cavity.config.beam
    psi0 = make_airy_input(g, b)
    assert psi0.power == pytest.approx(1.0, rel=1e-12)
    F = lens_fourier(psi0, b)
    inside = disc_mask(g.n, g.focal_pitch(b), b.spot_radius) > 0
    assert np.sum(F.intensity[~inside]) < 1e-24 * np.sum(F.intensity[inside])


def test_airy_input_methods_agree_on_shape(small_cavity):
    g, b = small_cavity.config.grid, small_cavity.config.beam
    band = make_airy_input(g, b)
    ana = make_airy_input(g, b, "analytic")
    assert abs(overlap(band, ana)) > 0.9
    x, y = g.coords()
    r = np.hypot(x, y)
    ring = np.abs(r - b.dark_ring_radius) < g.dx
    assert ana.intensity[ring].max() < 1e-3 * ana.intensity.max()


def test_gaussian_input():
    g = GridSpec(128, 1.0)
    f = make_gaussian_input(g, 10.0)
    assert f.power == pytest.approx(1.0)
    with pytest.raises(ValueError):
        make_gaussian_input(g, 0)


def test_spot_mode_and_overlap(small_cavity):
    g, b = small_cavity.config.grid, small_cavity.config.beam
    s = make_spot_mode(g, b.spot_radius)
    assert s.power == pytest.approx(1.0)
    with pytest.raises(SamplingError):
        make_spot_mode(g, 2 * g.dx)
    with pytest.raises(SamplingError):
        make_spot_mode(g, b.spot_radius, (g.extent / 2, 0))
    psi0 = make_airy_input(g, b)
    c = overlap(psi0, s)
    assert overlap(s, psi0) == pytest.approx(np.conj(c))
    assert abs(c) == pytest.approx(b.chi, rel=0.02)


def test_orthonormalize(small_cavity):
    g, b = small_cavity.config.grid, small_cavity.config.beam
    psi0 = make_airy_input(g, b)
    s = make_spot_mode(g, b.spot_radius)
    t, chi = orthonormalize(psi0, s)
    assert abs(overlap(t, s)) < 1e-14
    assert t.power == pytest.approx(1.0, rel=1e-12)
    assert chi == pytest.approx(abs(overlap(s, psi0)))
    far = make_spot_mode(g, b.spot_radius, (0.45 * g.extent, 0))
    far_amp = Field(np.where(far.amps != 0, 0, psi0.amps), g.dx)
    same, zero = orthonormalize(far_amp.normalized(), far)
    assert zero == 0.0
