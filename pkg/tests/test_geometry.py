import numpy as np
import pytest

from hfce.geometry import (ArrayConfig, element_offsets, element_positions, far_steering, near_steering,
                           rayleigh_distance)


def test_default_spacing_is_half_wavelength():
    cfg = ArrayConfig(8, 0.02)
    assert cfg.spacing == 0.01


@pytest.mark.parametrize("kw", [dict(n_antennas=1, wavelength=0.01), dict(n_antennas=8, wavelength=0.0),
                                dict(n_antennas=8, wavelength=0.01, spacing=-1.0),
                                dict(n_antennas=2.5, wavelength=0.01)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        ArrayConfig(**kw)


def test_positions_two_elements():
    pos = element_positions(ArrayConfig(2, 0.01, 0.005))
    np.testing.assert_allclose(pos[:, 1], [-0.0025, 0.0025])
    np.testing.assert_array_equal(pos[:, 0], 0)


def test_positions_three_unit_spacing():
    pos = element_positions(ArrayConfig(3, 1.0, 1.0))
    np.testing.assert_allclose(pos[:, 1], [-1, 0, 1])


def test_aperture_30ghz(cfg200):
    assert cfg200.aperture == pytest.approx(0.995)
    gaps = np.diff(element_positions(cfg200)[:, 1])
    np.testing.assert_allclose(gaps, cfg200.spacing, rtol=0, atol=1e-15)


def test_offsets_symmetric():
    t = element_offsets(ArrayConfig(7, 1.0))
    np.testing.assert_array_equal(t, -t[::-1])


def test_far_broadside_constant(cfg200):
    a = far_steering(cfg200, 0.0)
    np.testing.assert_allclose(a, np.full(200, 1 / np.sqrt(200)))


def test_far_phases():
    cfg = ArrayConfig(4, 1.0)
    a = far_steering(cfg, 0.2)
    np.testing.assert_allclose(np.angle(a * 2), np.angle(np.exp(1j * np.pi * np.arange(4) * np.sin(0.2))))


def test_far_matrix_shape(cfg200):
    A = far_steering(cfg200, np.linspace(-1, 1, 7))
    assert A.shape == (200, 7)
    np.testing.assert_allclose(np.linalg.norm(A, axis=0), 1, atol=1e-12)


def test_far_conjugate_symmetry(cfg200):
    np.testing.assert_allclose(far_steering(cfg200, 0.4), far_steering(cfg200, -0.4).conj(), atol=1e-15)


def test_near_rejects_bad_distance(cfg200):
    with pytest.raises(ValueError):
        near_steering(cfg200, 0.1, 0.0)
    with pytest.raises(ValueError):
        near_steering(cfg200, 0.1, -3.0)


def test_near_hand_evaluation(backend):
    cfg = ArrayConfig(3, 1.0, 1.0)
    b = near_steering(cfg, 0.0, 2.0)
    ph = -2 * np.pi * (np.sqrt(5) - 2)
    expect = np.exp(1j * np.array([ph, 0.0, ph])) / np.sqrt(3)
    np.testing.assert_allclose(b, expect, atol=1e-14)


def test_near_odd_center_phase_zero(backend):
    b = near_steering(ArrayConfig(9, 0.01), 0.7, 12.0)
    assert np.angle(b[4]) == pytest.approx(0.0, abs=1e-14)


def test_near_far_limit(cfg200, backend):
    a = far_steering(cfg200, 0.3)
    vals = [abs(np.vdot(a, near_steering(cfg200, 0.3, r))) for r in (1e3, 1e4, 1e5, 1e6)]
    assert vals[-1] > 0.9999
    assert all(np.diff(vals) >= -1e-12)


def test_near_matches_exact_distance_formula(backend):
    # direct sqrt form at moderate range where cancellation is harmless
    cfg = ArrayConfig(16, 0.01)
    th, r = -0.4, 3.0
    y = element_offsets(cfg) * cfg.spacing
    rn = np.sqrt(r**2 + y**2 - 2 * r * y * np.sin(th))
    expect = np.exp(-1j * cfg.wavenumber * (rn - r)) / 4
    np.testing.assert_allclose(near_steering(cfg, th, r), expect, atol=1e-11)


def test_rayleigh(cfg200):
    assert rayleigh_distance(cfg200) == pytest.approx(2 * 0.995**2 / 0.01)
    assert rayleigh_distance(ArrayConfig(2, 0.01)) == pytest.approx(0.005)
    ratio = rayleigh_distance(ArrayConfig(4000, 0.01)) / rayleigh_distance(ArrayConfig(2000, 0.01))
    assert ratio == pytest.approx(4, rel=1e-3)


def test_from_frequency():
    cfg = ArrayConfig.from_frequency(200, 30e9)
    assert cfg.wavelength == pytest.approx(0.00999308, rel=1e-6)
