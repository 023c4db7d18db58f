import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from morphosim.errors import DegenerateInputError, DimensionError, InvalidArgumentError
from morphosim.morphometry import VbmMap, intensity_distance, vbm_distance
from morphosim.volume import Grid3, Mask3, Volume3
from oracles import masked_msd_loop, minmax_loop


def _maps(rng, shape=(4, 4, 4)):
    g = Grid3(shape)
    return VbmMap(g, rng.normal(1, 0.1, shape)), VbmMap(g, rng.normal(1, 0.1, shape)), \
        Mask3(g, rng.random(shape) < 0.5)


def test_vbm_identity(rng):
    a, _, m = _maps(rng)
    assert vbm_distance(a, a, m) == 0.0


def test_vbm_constant_offset(rng):
    a, _, m = _maps(rng)
    b = VbmMap(a.grid, a.data + 0.25)
    assert vbm_distance(a, b, m) == pytest.approx(0.0625, abs=1e-15)


def test_vbm_matches_loop(rng):
    for _ in range(20):
        a, b, m = _maps(rng)
        if not m.data.any():
            continue
        assert abs(vbm_distance(a, b, m) - masked_msd_loop(a.data, b.data, m.data)) < 1e-12


def test_vbm_symmetric_and_mask_local(rng):
    a, b, m = _maps(rng, (5, 5, 5))
    assert vbm_distance(a, b, m) == vbm_distance(b, a, m)
    c = b.data.copy()
    c[~m.data] += rng.normal(size=(~m.data).sum())
    assert vbm_distance(a, VbmMap(b.grid, c), m) == vbm_distance(a, b, m)


def test_vbm_full_mask_is_global_msd(rng):
    a, b, _ = _maps(rng)
    full = Mask3(a.grid, np.ones((4, 4, 4), bool))
    assert vbm_distance(a, b, full) == pytest.approx(np.mean((a.data - b.data) ** 2), rel=1e-14)


def test_vbm_errors(rng):
    a, b, m = _maps(rng)
    with pytest.raises(InvalidArgumentError):
        vbm_distance(a, b, Mask3(a.grid, np.zeros((4, 4, 4), bool)))
    with pytest.raises(DimensionError):
        vbm_distance(a, VbmMap(Grid3((4, 4, 5)), np.ones((4, 4, 5))), m)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_vbm_zero_iff_equal_on_mask(seed):
    r = np.random.default_rng(seed)
    a, b, m = _maps(r)
    m = Mask3(m.grid, m.data | (np.arange(64).reshape(4, 4, 4) == 0))
    d = vbm_distance(a, b, m)
    assert d >= 0
    assert (d == 0) == bool(np.all(a.data[m.data] == b.data[m.data]))


def test_intensity_identity(rng):
    v = Volume3.from_array(rng.random((4, 4, 4)))
    assert intensity_distance(v, v, Mask3(v.grid, np.ones((4, 4, 4), bool))) == 0.0


def test_intensity_binary_complement(rng):
    a = (rng.random((4, 4, 4)) < 0.5).astype(float)
    a[0, 0, 0], a[0, 0, 1] = 0.0, 1.0
    va, vb = Volume3.from_array(a), Volume3.from_array(1.0 - a)
    assert intensity_distance(va, vb, Mask3(va.grid, np.ones((4, 4, 4), bool))) == 1.0


def test_intensity_is_scale_invariant(rng):
    a = Volume3.from_array(rng.random((4, 4, 4)))
    b = Volume3.from_array(rng.random((4, 4, 4)))
    m = Mask3(a.grid, rng.random((4, 4, 4)) < 0.7)
    assert intensity_distance(a, b, m) == pytest.approx(
        intensity_distance(a.with_data(3 * a.data + 7), b, m), abs=1e-14)


def test_intensity_matches_loop(rng):
    for _ in range(20):
        a = Volume3.from_array(rng.random((5, 4, 6)))
        b = Volume3.from_array(rng.random((5, 4, 6)))
        m = rng.random((5, 4, 6)) < 0.5
        want = masked_msd_loop(minmax_loop(a.data, m), minmax_loop(b.data, m), m)
        assert abs(intensity_distance(a, b, Mask3(a.grid, m)) - want) < 1e-12


def test_intensity_constant_volume_is_degenerate(rng):
    a = Volume3.from_array(np.full((4, 4, 4), 3.0))
    b = Volume3.from_array(rng.random((4, 4, 4)))
    with pytest.raises(DegenerateInputError):
        intensity_distance(a, b, Mask3(a.grid, np.ones((4, 4, 4), bool)))
