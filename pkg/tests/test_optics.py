from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from psfinv import optics as O
from psfinv.errors import AliasingError, InvalidDimensionError, InvalidParameterError
from psfinv.psf import impulse_psf


@pytest.fixture(scope="module")
def p64():
    return O.OpticalParams.for_side(64)


def test_noll_ordering():
    expected = [(0, 0), (1, 1), (1, -1), (2, 0), (2, -2), (2, 2), (3, -1), (3, 1), (3, -3), (3, 3), (4, 0)]
    assert [O.noll_to_nm(j) for j in range(1, 12)] == expected


def test_zernike_basis_examples():
    b = O.zernike_basis(15, 32)
    inside = O.aperture(32) > 0
    np.testing.assert_allclose(b.grids[0][inside], 1.0, atol=1e-12)
    assert not b.grids[:, ~inside].any()
    z2, z3 = b.grids[1], b.grids[2]
    assert abs(np.vdot(z2, z3)) <= 0.02 * np.linalg.norm(z2) * np.linalg.norm(z3)
    z4 = b.grids[3]
    np.testing.assert_allclose(z4, z4.T, atol=1e-12)
    np.testing.assert_allclose(z4, np.rot90(z4), atol=1e-12)
    with pytest.raises(InvalidDimensionError):
        O.zernike_basis(3, 8)


@pytest.mark.parametrize("side", [16, 32, 64])
def test_zernike_orthogonality(side):
    g = O.zernike_basis(15, side).grids.reshape(15, -1)
    gram = g @ g.T
    norms = np.sqrt(np.diag(gram))
    off = gram / np.outer(norms, norms) - np.eye(15)
    assert np.abs(off).max() <= 0.02


def test_heightmap_is_linear_combination():
    b = O.zernike_basis(6, 16)
    a = np.array([0.1, -0.2, 0.3, 0.0, 0.5, -0.05])
    np.testing.assert_array_equal(O.Heightmap(a, b).phi, np.tensordot(a, b.grids, axes=1))


def test_params_validation():
    with pytest.raises(InvalidParameterError):
        O.OpticalParams(z=-1.0)
    with pytest.raises(InvalidParameterError):
        O.OpticalParams(sensitivity=((0.5, 0.6, 0.0),) * 3)
    with pytest.raises(AliasingError, match="lambda\\*z/side"):
        O.render_phase(np.zeros((64, 64)), O.OpticalParams(pitch=1e-4), 1)


def test_flat_phase_symmetric(p64):
    d = O.render_phase(np.zeros((64, 64)), p64, 1).data
    # point symmetry about the center pixel (periodic grid)
    flipped = np.roll(d[::-1, ::-1], (1, 1), axis=(0, 1))
    np.testing.assert_allclose(d, flipped, atol=1e-15)
    np.testing.assert_allclose(d, d.T, atol=1e-15)


def test_fresnel_lens_focuses(p64):
    psf = O.render_phase(O.fresnel_lens_phase(p64, p64.z), p64, 1)
    assert O.encircled_energy(psf) >= 0.5
    ee = {f: O.encircled_energy(O.render_phase(O.fresnel_lens_phase(p64, f * p64.z), p64, 1)) for f in (0.5, 1.0, 2.0)}
    assert max(ee, key=ee.get) == 1.0


def test_doubling_z_widens_flat_psf(p64):
    p2 = replace(p64, z=2 * p64.z)
    flat = np.zeros((64, 64))
    r1 = O.second_moment_radius(O.render_phase(flat, p64, 1), p64.sensor_pitch(1))
    r2 = O.second_moment_radius(O.render_phase(flat, p2, 1), p2.sensor_pitch(1))
    assert r2 > r1


def test_spiral_examples(p64):
    ph = O.spiral_phase(1, 64)
    c = 31.5
    # walk a circle of radius 10 around the pupil center and unwrap
    t = np.linspace(0, 2 * np.pi, 400, endpoint=False)
    rows = np.rint(c + 10 * np.sin(t)).astype(int)
    cols = np.rint(c + 10 * np.cos(t)).astype(int)
    samples = ph[rows, cols]
    winding = np.sum(np.angle(np.exp(1j * np.diff(np.r_[samples, samples[0]]))))
    assert winding == pytest.approx(2 * np.pi, abs=1e-9)
    assert ph.min() >= 0 and ph.max() < 2 * np.pi
    s = O.render_phase(ph, p64, 1).data
    assert s[32, 32] < 0.01 * s.max()
    with pytest.raises(InvalidParameterError):
        O.spiral_phase(0, 16)
    with pytest.raises(InvalidParameterError):
        O.fresnel_lens_phase(p64, 0.0)


def test_energy_bookkeeping(p64):
    rng = np.random.default_rng(0)
    masses = [O.sensor_intensity(rng.uniform(0, 6, (64, 64)), p64, 1)[0].sum() for _ in range(4)]
    np.testing.assert_allclose(masses, O.aperture(64).sum(), rtol=1e-8)


@given(st.integers(0, 2**16))
@settings(max_examples=10, deadline=None)
def test_rendered_psf_invariants(seed):
    p = O.OpticalParams.for_side(32)
    a = np.random.default_rng(seed).normal(0, 0.3, 10)
    psf = O.render_psf(O.Heightmap(a, O.zernike_basis(10, 32)), p, seed % 3)
    assert psf.data.min() >= 0 and abs(psf.data.sum() - 1) <= 1e-12


@pytest.mark.parametrize("seed", range(5))
def test_jacobian_matches_finite_differences(seed):
    p = O.OpticalParams.for_side(16)
    basis = O.zernike_basis(6, 16)
    rng = np.random.default_rng(seed)
    a = rng.normal(0, 0.2, 6)
    psf, jac = O.render_psf_jacobian(O.Heightmap(a, basis), p, 1)
    np.testing.assert_allclose(psf, O.render_psf(O.Heightmap(a, basis), p, 1).data, atol=1e-15)
    v = rng.normal(size=6)
    h = 1e-6
    fd = (O.render_psf(O.Heightmap(a + h * v, basis), p, 1).data - O.render_psf(O.Heightmap(a - h * v, basis), p, 1).data) / (2 * h)
    an = np.tensordot(v, jac, axes=1)
    assert np.linalg.norm(fd - an) / np.linalg.norm(an) <= 1e-3


def test_jacobian_aliasing_carries_coeffs():
    basis = O.zernike_basis(4, 16)
    bad = O.OpticalParams(aperture_side=16, pitch=1e-3)
    with pytest.raises(AliasingError) as exc:
        O.render_psf_jacobian(O.Heightmap(np.ones(4), basis), bad, 0)
    assert np.array_equal(exc.value.coeffs, np.ones(4))


def test_sensor_image(p64):
    rng = np.random.default_rng(1)
    focus = O.Heightmap(np.zeros(15), O.zernike_basis(15, 64))
    const = np.full((3, 64, 64), 0.4)
    np.testing.assert_allclose(O.sensor_image(const, focus, p64), const, atol=1e-12)
    x, z = rng.random((2, 3, 64, 64))
    np.testing.assert_allclose(
        O.sensor_image(2 * x - 3 * z, focus, p64), 2 * O.sensor_image(x, focus, p64) - 3 * O.sensor_image(z, focus, p64), atol=1e-10
    )
    with pytest.raises(InvalidDimensionError):
        O.sensor_image(np.zeros((2, 64, 64)), focus, p64)


def test_sensor_image_focused_lens_preserves_scene(p64):
    from psfinv.deconv import psnr
    from psfinv.scenes import synthetic_scene

    # a per-wavelength ideal lens: the quadratic phase cancels the Fresnel term exactly
    h = [O.phase_to_height(O.fresnel_lens_phase(p64, p64.z, w), p64, w) for w in range(3)]
    x = np.stack([synthetic_scene("smooth", 64, s) for s in range(3)])
    y = np.stack([O.sensor_image(x, hw, p64)[w] for w, hw in enumerate(h)])
    assert psnr(y, x) >= 40


def test_psf_presets_ids():
    assert O.fresnel_psf(32).id == "fresnel_df0"
    assert O.spiral_psf(32, 2).id == "spiral_c2_df0"
    assert O.encircled_energy(impulse_psf(5)) == 1.0
