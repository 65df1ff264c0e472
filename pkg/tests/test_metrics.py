import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acfusion.metrics import align_to, dip_contrast, fwhm, line_profile, mse, ncc_after_alignment
from acfusion.volume import Volume, flip


@pytest.fixture
def vol(rng):
    d = np.zeros((12, 10, 12))
    d[3:6, 2:5, 4:9] = rng.random((3, 3, 5)) + 0.5
    d[7, 6, 2] = 2.0
    return Volume(d)


def test_ncc_examples(vol):
    assert ncc_after_alignment(vol, vol) == pytest.approx(1.0, abs=1e-12)
    moved = vol.like(np.roll(vol.data, (2, -1, 3), axis=(0, 1, 2)))
    assert ncc_after_alignment(vol, moved) == pytest.approx(1.0, abs=1e-6)
    assert ncc_after_alignment(vol, flip(vol)) == pytest.approx(1.0, abs=1e-6)
    assert ncc_after_alignment(vol, flip(vol), allow_flip=False) < 0.99
    with pytest.raises(ValueError):
        ncc_after_alignment(vol, vol.like(np.ones(vol.dims)))


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31), scale=st.floats(0.1, 10.0))
def test_ncc_symmetric_and_scale_invariant(seed, scale):
    rng = np.random.default_rng(seed)
    a = Volume(rng.random((6, 5, 7)))
    b = Volume(rng.random((6, 5, 7)))
    ab = ncc_after_alignment(a, b)
    assert ab == pytest.approx(ncc_after_alignment(b, a), abs=1e-6)
    assert ab == pytest.approx(ncc_after_alignment(a, b.like(b.data * scale)), abs=1e-6)
    assert -1 <= ab <= 1


def test_align_to_returns_aligned_copy(vol):
    moved = vol.like(np.roll(vol.data, (1, 2, -2), axis=(0, 1, 2)))
    out, score = align_to(vol, moved)
    assert out == vol and score == pytest.approx(1.0)


def test_mse_examples(rng):
    a = Volume(rng.random((4, 4, 4)))
    assert mse(a, a) == 0
    assert mse(a.like(np.zeros(a.dims)), a.like(np.ones(a.dims))) == 1
    b = Volume(rng.random((4, 4, 4)))
    ref = 0.0
    for idx in np.ndindex(*a.dims):
        ref += (float(a.data[idx]) - float(b.data[idx])) ** 2
    assert mse(a, b) == pytest.approx(ref / 64, abs=1e-12)
    with pytest.raises(ValueError):
        mse(a, Volume(np.zeros((3, 4, 4))))


@pytest.mark.parametrize("sigma", [1.5, 2.0, 3.0])
def test_gaussian_profile_fwhm(sigma):
    n = 41
    x = np.arange(n) - 20
    X, Y, Z = np.meshgrid(x, x[:5], x[:5], indexing="ij")
    g = Volume(np.exp(-(X**2) / (2 * sigma**2)) * np.ones_like(Y + Z), voxel_size=(0.5, 1, 1))
    rep = line_profile(g, (0, 2, 2), (20, 2, 2), samples=161)
    assert rep.dip_contrast is None
    assert rep.fwhm == pytest.approx(2.3548 * sigma * 0.5, rel=0.05)
    assert np.all(np.diff(rep.positions) > 0)


def test_constant_profile():
    rep = line_profile(Volume(np.full((5, 5, 5), 3.0)), (0, 0, 0), (4, 4, 4), 11)
    assert rep.fwhm is None and rep.dip_contrast is None
    assert np.allclose(rep.values, 3.0)


def test_two_beads_full_dip():
    d = np.zeros((12, 3, 3))
    d[3, 1, 1] = d[8, 1, 1] = 1.0
    rep = line_profile(Volume(d), (0, 1, 1), (11, 1, 1), 12)
    assert rep.dip_contrast == pytest.approx(1.0)


def test_profile_bounds():
    with pytest.raises(ValueError):
        line_profile(Volume(np.zeros((4, 4, 4))), (0, 0, 0), (5, 0, 0))


def test_fwhm_linear_and_cubic():
    y = np.array([0, 1, 2, 1, 0], dtype=float)
    assert fwhm(y) == pytest.approx(2.0)
    assert fwhm(y, method="cubic") == pytest.approx(2.0, rel=0.1)
    assert fwhm([1, 2, 3]) is None
    assert dip_contrast([0, 1, 0.5, 1, 0]) == pytest.approx(0.5)
    assert dip_contrast([0, 1, 0]) is None
