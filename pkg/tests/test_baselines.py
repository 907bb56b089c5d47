import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from mvmtwin.baselines import (
    FlowField, flow_warp_interpolate, horn_schunck, interpolate_series_baseline,
    linear_interpolate, linear_interpolate_mask, warp,
)
from mvmtwin.core import DownsampleSpec, drop_frames
from oracles import centroid, gaussian_blob, integer_shift_oracle


def test_linear_examples(rng):
    a, b = rng.uniform(-1, 1, (2, 6, 6))
    assert np.allclose(linear_interpolate(a, b, 1, 1), 0.5 * (a + b))
    assert np.allclose(linear_interpolate(a, a, 2, 5), a)
    out = linear_interpolate(np.zeros((3, 3)), np.ones((3, 3)), 1, 3)
    assert np.allclose(out, 0.25)
    with pytest.raises(ValueError):
        linear_interpolate(a, b, 0, 3)
    with pytest.raises(ValueError):
        linear_interpolate(a, b, 4, 3)


@given(arrays(np.float64, (4, 4), elements=st.floats(-1, 1)),
       arrays(np.float64, (4, 4), elements=st.floats(-1, 1)),
       st.integers(1, 6), st.data())
def test_linear_is_convex(a, b, K, data):
    k = data.draw(st.integers(1, K))
    out = linear_interpolate(a, b, k, K)
    assert (out >= np.minimum(a, b) - 1e-12).all() and (out <= np.maximum(a, b) + 1e-12).all()


def test_linear_mask_binary():
    a = np.array([[1, 1, 0, 0]], np.uint8)
    b = np.array([[1, 0, 1, 0]], np.uint8)
    assert linear_interpolate_mask(a, b, 1, 3).tolist() == [[1, 1, 0, 0]]
    assert linear_interpolate_mask(a, b, 3, 3).tolist() == [[1, 0, 1, 0]]


def test_hs_zero_cases(rng):
    a = rng.uniform(0, 1, (16, 16))
    f = horn_schunck(a, a)
    assert not f.u.any() and not f.v.any()
    c = np.full((16, 16), 3.0)
    f = horn_schunck(c, c + 0.0)
    assert not f.u.any() and not f.v.any()


def test_hs_translated_blob():
    i1 = gaussian_blob(cx=15.0)
    i2 = gaussian_blob(cx=16.0)
    assert integer_shift_oracle(i1, i2) == (1, 0)
    f = horn_schunck(i1, i2, 1.0, 200)
    gy, gx = np.gradient(0.5 * (i1 + i2))
    g = np.hypot(gx, gy)
    sel = g >= np.quantile(g, 0.75)
    assert abs(np.median(f.u[sel]) - 1.0) <= 0.2
    assert abs(np.median(f.v[sel])) <= 0.2


def test_hs_constant_offset_invariance(rng):
    i1 = gaussian_blob(cx=15.0)
    i2 = gaussian_blob(cx=16.0)
    f, g = horn_schunck(i1, i2), horn_schunck(i1 + 7.0, i2 + 7.0)
    assert np.allclose(f.u, g.u) and np.allclose(f.v, g.v)


def test_flow_warp_zero_cases(rng):
    a, b = rng.uniform(-1, 1, (2, 12, 12))
    sa = (a > 0).astype(np.uint8)
    sb = (b > 0).astype(np.uint8)
    m, s = flow_warp_interpolate(a, b, sa, sb, 0, 3)
    assert np.array_equal(m, a) and np.array_equal(s, sa)
    m, s = flow_warp_interpolate(a, b, sa, sb, 1, 1, flow=FlowField.zeros(a.shape))
    assert np.allclose(m, a) and np.array_equal(s, sa)


def test_flow_warp_blob_midpoint():
    i1, i2 = gaussian_blob(cx=14.0), gaussian_blob(cx=16.0)
    s1, s2 = (i1 > 60).astype(np.uint8), (i2 > 60).astype(np.uint8)
    m, s = flow_warp_interpolate(i1, i2, s1, s2, 1, 1)
    cx, cy = centroid(m)
    assert abs(cx - 15.0) <= 0.5 and abs(cy - 15.5) <= 0.5
    assert set(np.unique(s)) <= {0, 1}


def test_warp_integer_shift():
    img = np.zeros((8, 8))
    img[3, 3] = 1.0
    f = FlowField(np.ones((8, 8)), np.zeros((8, 8)))
    out = warp(img, f, 1.0, order=0)
    assert out[3, 4] == 1.0 and out.sum() == 1.0


def test_flow_field_finite():
    with pytest.raises(ValueError):
        FlowField(np.array([[np.nan]]), np.zeros((1, 1)))


def test_warped_phantom_mask_area(phantom_study):
    s = phantom_study
    for t in (3, 20, 40):
        _, m = flow_warp_interpolate(s.magnitude[t], s.magnitude[t + 2], s.seg[t], s.seg[t + 2], 1, 1)
        a0 = s.seg[t].sum()
        assert abs(int(m.sum()) - int(a0)) < 0.2 * a0


@pytest.mark.parametrize("method", ["linear", "flow"])
@pytest.mark.parametrize("K", [1, 3, 6])
def test_series_baseline_keeps_existing_frames(phantom_study, method, K):
    spec = DownsampleSpec(K)
    down = drop_frames(phantom_study, spec)
    out = interpolate_series_baseline(down, spec, method)
    kept = spec.kept(50)
    assert out.present_frames().all()
    assert np.array_equal(out.magnitude[kept], down.magnitude[kept])
    assert np.array_equal(out.seg[kept], down.seg[kept])


def test_series_baseline_wrap_gap(phantom_study):
    # K=3 on T=50 leaves a one-frame gap between 48 and 0.
    spec = DownsampleSpec(3)
    out = interpolate_series_baseline(drop_frames(phantom_study, spec), spec, "linear")
    s = phantom_study
    assert np.allclose(out.magnitude[49], 0.5 * (s.magnitude[48] + s.magnitude[0]), atol=1e-6)


def test_series_baseline_rejects_mismatched_spec(phantom_study):
    down = drop_frames(phantom_study, DownsampleSpec(2))
    with pytest.raises(ValueError):
        interpolate_series_baseline(down, DownsampleSpec(3))
