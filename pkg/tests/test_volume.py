import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from embreg import (
    BodyMask,
    NoBodyFoundError,
    Volume,
    compute_body_mask,
    crop_volume,
    resample_isotropic,
    window_normalize,
)


def test_volume_basic_invariants():
    v = Volume(np.zeros((2, 3, 4)), spacing=(2, 2, 2), origin=(1, 2, 3))
    assert v.dims == (2, 3, 4)
    assert v.data.dtype == np.float32
    assert not v.data.flags.writeable


def test_volume_rejects_bad_inputs():
    with pytest.raises(ValueError):
        Volume(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        Volume(np.zeros((2, 2, 2)), spacing=(1, 0, 1))


def test_window_endpoints_and_midpoint():
    v = Volume(np.array([[[-800.0, 400.0, -200.0, -2000.0, 3000.0]]]))
    w = window_normalize(v, -800, 400)
    np.testing.assert_allclose(w.data.ravel(), [-1.0, 1.0, 0.0, -1.0, 1.0], atol=1e-7)


def test_window_rejects_bad_window():
    v = Volume(np.zeros((1, 1, 1)))
    with pytest.raises(ValueError):
        window_normalize(v, 400, -800)
    with pytest.raises(ValueError):
        window_normalize(v, 10, 10)


@settings(max_examples=50, deadline=None)
@given(
    a=st.floats(-2000, 2000),
    b=st.floats(-2000, 2000),
    lo=st.floats(-1000, 0),
    width=st.floats(1, 2000),
)
def test_window_monotone(a, b, lo, width):
    v = Volume(np.array([[[a, b]]], dtype=np.float32))
    w = window_normalize(v, lo, lo + width)
    out_a, out_b = w.data.ravel()
    if a <= b:
        assert out_a <= out_b
    else:
        assert out_a >= out_b
    assert -1.0 <= out_a <= 1.0 and -1.0 <= out_b <= 1.0


def test_resample_identity(rng):
    v = Volume(rng.uniform(-1, 1, (6, 7, 8)).astype(np.float32), spacing=(2, 2, 2))
    out = resample_isotropic(v, 2.0)
    assert out.dims == v.dims
    np.testing.assert_allclose(out.data, v.data, atol=1e-6)


def test_resample_halves_dims():
    v = Volume(np.zeros((8, 8, 8), dtype=np.float32), spacing=(1, 1, 1))
    out = resample_isotropic(v, 2.0)
    assert out.dims == (4, 4, 4)
    assert out.spacing == (2.0, 2.0, 2.0)


def test_resample_ramp_matches_analytic():
    # f(x) = x in voxel units at 1mm; downsampled voxel i sits at x = 2i
    W = 16
    ramp = np.tile(np.arange(W, dtype=np.float32), (4, 4, 1))
    v = Volume(ramp / W, spacing=(1, 1, 1))
    out = resample_isotropic(v, 2.0)
    expected = np.arange(out.dims[2]) * 2.0 / W
    np.testing.assert_allclose(out.data[1, 1, :], expected, atol=1e-5)


def test_resample_rejects_nonpositive():
    v = Volume(np.zeros((2, 2, 2)))
    with pytest.raises(ValueError):
        resample_isotropic(v, 0.0)


def _cube_volume(outer=16, inner=8, value=0.5, cavity=0):
    data = np.full((outer,) * 3, -1.0, dtype=np.float32)
    lo = (outer - inner) // 2
    hi = lo + inner
    data[lo:hi, lo:hi, lo:hi] = value
    if cavity:
        clo = (outer - cavity) // 2
        chi = clo + cavity
        data[clo:chi, clo:chi, clo:chi] = -1.0
    return Volume(data)


def test_body_mask_empty_candidate_set():
    v = Volume(np.full((4, 4, 4), -1.0, dtype=np.float32))
    with pytest.raises(NoBodyFoundError):
        compute_body_mask(v, -0.5)


def test_body_mask_solid_cube():
    v = _cube_volume()
    mask = compute_body_mask(v, -0.5)
    assert mask.voxel_count == 8**3
    expected = v.data > -0.5
    np.testing.assert_array_equal(mask.data, expected)


def test_body_mask_fills_cavity():
    v = _cube_volume(cavity=2)
    mask = compute_body_mask(v, -0.5)
    # the 2^3 cavity is enclosed in every axial slice it touches
    assert mask.voxel_count == 8**3


def test_body_mask_keeps_largest_component():
    v = _cube_volume()
    data = v.data.copy()
    data[0, 0, 0] = 0.5  # far-away speck
    mask = compute_body_mask(Volume(data), -0.5)
    assert mask.voxel_count == 8**3
    assert not mask.data[0, 0, 0]


def test_body_mask_invariant_to_subthreshold_noise(rng):
    v = _cube_volume()
    mask_a = compute_body_mask(v, -0.5)
    noisy = v.data.copy()
    outside = ~mask_a.data
    noisy[outside] = rng.uniform(-1.0, -0.6, size=int(outside.sum())).astype(np.float32)
    mask_b = compute_body_mask(Volume(noisy), -0.5)
    np.testing.assert_array_equal(mask_a.data, mask_b.data)


def test_crop_volume_bounds():
    v = Volume(np.arange(27, dtype=np.float32).reshape(3, 3, 3))
    c = crop_volume(v, (0, 1, 1), (2, 3, 3))
    assert c.dims == (2, 2, 2)
    assert c.data[0, 0, 0] == v.data[0, 1, 1]
    with pytest.raises(ValueError):
        crop_volume(v, (0, 0, 0), (4, 3, 3))


def test_body_mask_type_checks():
    m = BodyMask(np.ones((2, 2, 2), dtype=bool))
    assert m.voxel_count == 8
    assert m.dims == (2, 2, 2)
