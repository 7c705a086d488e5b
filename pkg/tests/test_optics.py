import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dllo_sat import optics
from dllo_sat.optics import ComplexField, PropagationError

LAM = 1550e-9


def _intensity_radius(field):
    """1/e^2 intensity radius along the x axis through the centre, by
    linear interpolation between samples."""
    c = field.N // 2
    I = np.abs(field.E[c, c:]) ** 2
    target = I[0] * math.exp(-2)
    i = int(np.argmax(I < target))
    x0, x1 = (i - 1) * field.delta, i * field.delta
    return x0 + (I[i - 1] - target) / (I[i - 1] - I[i]) * (x1 - x0)


def test_source_normalized_and_flat():
    f = optics.gaussian_source(0.15, LAM, 128, 0.15 / 16)
    assert f.power() == pytest.approx(1.0, abs=1e-6)
    assert abs(_intensity_radius(f) - 0.15) < f.delta
    mask = np.abs(f.E) > 1e-3 * np.abs(f.E).max()
    assert np.std(np.angle(f.E[mask])) < 1e-12


def test_source_sampling_errors():
    with pytest.raises(PropagationError):
        optics.gaussian_source(0.15, LAM, 128, 0.15 / 4)   # 4 px across w0
    with pytest.raises(PropagationError):
        optics.gaussian_source(0.15, LAM, 32, 0.15 / 16)   # grid too narrow


def test_far_field_divergence_and_power():
    src = optics.gaussian_source(0.15, LAM, 128, 0.15 / 16)
    L = 480e3
    out = optics.far_field_to_atmosphere(src, 500e3, 20e3, 0.0, 512, 8.0 / 512)
    w = optics.second_moment_radius(out)
    assert w == pytest.approx(LAM * L / (math.pi * 0.15), rel=0.01)
    assert out.power() == pytest.approx(src.power(), rel=1e-6)


def test_far_field_slant_path():
    src = optics.gaussian_source(0.15, LAM, 128, 0.15 / 16)
    # wide grid: the beam is ~3 m across here
    out = optics.far_field_to_atmosphere(src, 500e3, 20e3, 60.0, 512, 32.0 / 512)
    w = optics.second_moment_radius(out)
    assert w == pytest.approx(optics.gaussian_beam_radius(0.15, LAM, 960e3), rel=0.01)


def _numerical_gaussian(w0=0.04, N=1024, delta=4e-3):
    return optics.gaussian_field(N, delta, LAM, w0)


def test_angular_spectrum_width_at_two_rayleigh_ranges():
    f = _numerical_gaussian()
    zR = math.pi * 0.04**2 / LAM
    out = optics.angular_spectrum_step(f, 2 * zR)
    w = optics.second_moment_radius(out)
    assert w == pytest.approx(0.04 * math.sqrt(5), rel=0.01)
    assert out.power() == pytest.approx(f.power(), rel=1e-6)


def test_width_over_turbulent_layer():
    # beam arriving from orbit, then 17.6 km through the layer on the receiver grid
    src = optics.gaussian_source(0.15, LAM, 128, 0.15 / 16)
    top = optics.far_field_to_atmosphere(src, 500e3, 20e3, 0.0, 512, 8.0 / 512)
    out = optics.angular_spectrum_step(top, 17.6e3)
    assert optics.second_moment_radius(out) == pytest.approx(
        optics.gaussian_beam_radius(0.15, LAM, 497.6e3), rel=0.01)
    assert out.power() == pytest.approx(top.power(), rel=1e-6)


def test_curvature_sign_matches_propagation():
    # a waist propagated numerically equals the analytic diverging beam
    f = optics.gaussian_field(512, 4e-3, LAM, 0.05)
    z = 2000.0
    out = optics.angular_spectrum_step(f, z)
    zR = math.pi * 0.05**2 / LAM
    ref = optics.gaussian_field(512, 4e-3, LAM, optics.gaussian_beam_radius(0.05, LAM, z),
                                R=z * (1 + (zR / z) ** 2))
    ov = abs(np.vdot(ref.E, out.E)) ** 2 / (np.vdot(ref.E, ref.E).real * np.vdot(out.E, out.E).real)
    assert ov > 0.9999


def test_zero_step_identity():
    f = _numerical_gaussian(N=128, delta=1e-3, w0=0.01)
    out = optics.angular_spectrum_step(f, 0.0)
    assert np.array_equal(out.E, f.E) and out.E is not f.E


@settings(max_examples=25, deadline=None)
@given(dz=st.floats(0.0, 2000.0), seed=st.integers(0, 1000))
def test_power_conserved(dz, seed):
    rng = np.random.default_rng(seed)
    E = np.zeros((128, 128), complex)
    E[32:96, 32:96] = rng.standard_normal((64, 64)) + 1j * rng.standard_normal((64, 64))
    f = ComplexField(E, 5e-3, LAM)
    out = optics.angular_spectrum_step(f, dz)
    assert out.power() == pytest.approx(f.power(), rel=1e-6)


def test_plane_wave_stays_plane():
    f = ComplexField(np.full((128, 128), 1.0 + 0j), 1e-2, LAM)
    out = optics.angular_spectrum_step(f, 5000.0)
    assert np.ptp(np.abs(out.E)) < 1e-9


def test_step_too_long_rejected():
    f = _numerical_gaussian(N=128, delta=1e-3, w0=0.01)
    with pytest.raises(PropagationError):
        optics.angular_spectrum_step(f, 1e6)
    with pytest.raises(ValueError):
        optics.angular_spectrum_step(f, -1.0)


def test_apply_screen():
    f = _numerical_gaussian(N=128, delta=1e-3, w0=0.01)
    zero = np.zeros((128, 128))
    assert np.array_equal(optics.apply_screen(f, zero).E, f.E)
    rng = np.random.default_rng(1)
    out = optics.apply_screen(f, rng.standard_normal((128, 128)) * 3)
    assert out.power() == pytest.approx(f.power(), rel=1e-12)
    c = optics.apply_screen(f, np.full((128, 128), 0.7))
    np.testing.assert_allclose(c.E, f.E * np.exp(0.7j), rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        optics.apply_screen(f, np.zeros((64, 64)))


def test_aperture_fractions():
    w, N, d = 0.3, 512, 4e-3
    f = optics.gaussian_field(N, d, LAM, w)
    for a in (0.1, 0.2, 0.3, 0.5):
        _, frac = optics.apply_aperture(f, 2 * a)
        assert frac == pytest.approx(1 - math.exp(-2 * a**2 / w**2), rel=0.01)
    _, frac = optics.apply_aperture(f, N * d)
    assert frac == pytest.approx(1.0, abs=1e-6)
    _, frac = optics.apply_aperture(f, 1e-6)
    assert frac < 1e-3
    with pytest.raises(ValueError):
        optics.apply_aperture(f, 2 * N * d)


def test_encircled_power_masks_outside():
    f = optics.gaussian_field(128, 0.01, LAM, 0.3)
    out, _ = optics.apply_aperture(f, 0.5)
    mask = optics.aperture_mask(128, 0.01, 0.5)
    assert not out.E[~mask].any()
    assert np.array_equal(out.E[mask], f.E[mask])
