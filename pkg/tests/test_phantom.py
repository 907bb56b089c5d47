import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mvmtwin import phantom as P
from mvmtwin.core import PHASE_STEP
from mvmtwin.metrics import BACKGROUND_THRESHOLD
from mvmtwin.velocity import decode_stored_phase


def test_radius_examples():
    p = P.PhantomParams(T=40)
    assert P.analytic_radius(p, 0) == (p.r_inner0, p.r_outer0)
    r = P.analytic_radius(p, 20)
    assert r[0] == pytest.approx(p.r_inner0) and r[1] == pytest.approx(p.r_outer0)
    r = P.analytic_radius(p, 10)
    assert r[0] == pytest.approx(p.r_inner0 + p.amp) and r[1] == pytest.approx(p.r_outer0 + p.amp)


@given(st.integers(0, 49))
def test_periodic(t):
    p = P.PhantomParams()
    assert np.allclose(P.analytic_radius(p, t), P.analytic_radius(p, t + p.T))
    assert np.allclose(P.velocity_field(p, t, 40.0, 30.0), P.velocity_field(p, t + p.T, 40.0, 30.0))
    assert P.twist_angle(p, t) == pytest.approx(P.twist_angle(p, t + p.T), abs=1e-12)


def test_params_invariants():
    with pytest.raises(ValueError):
        P.PhantomParams(r_inner0=20, r_outer0=12)
    with pytest.raises(ValueError):
        P.PhantomParams(amp=12.0)
    with pytest.raises(ValueError):
        P.PhantomParams(r_outer0=40)


def _point(p, t):
    cx, cy = p.center
    r_in, r_out = P.analytic_radius(p, t)
    return cx + 0.5 * (r_in + r_out), cy


def test_velocity_examples():
    p = P.PhantomParams()
    vx, vy, vz = P.analytic_velocity(p, p.T / 4, *_point(p, p.T / 4))
    assert abs(vx) < 1e-12  # radial direction is +x at this point
    assert vz == pytest.approx(p.z_amp * math.cos(math.pi / 2), abs=1e-12)
    vx, vy, vz = P.analytic_velocity(p, 0, *_point(p, 0))
    assert vz == pytest.approx(p.z_amp)
    assert vy == pytest.approx(0.0)  # no twist rate at t=0
    flat = P.PhantomParams(twist_amp=0.0)
    for t in range(0, 50, 7):
        x, y = _point(flat, t)
        _, vy, _ = P.analytic_velocity(flat, t, x, y)
        assert vy == 0.0
    with pytest.raises(P.NotInMyocardiumError):
        P.analytic_velocity(p, 0, *p.center)


def test_radial_speed_is_radius_derivative():
    p = P.PhantomParams()
    h = 1e-5
    for t in np.linspace(0, 49, 13):
        num = (P.analytic_radius(p, t + h)[0] - P.analytic_radius(p, t - h)[0]) / (2 * h)
        assert P.radial_speed(p, t) == pytest.approx(num, rel=1e-6, abs=1e-9)
        num = (P.twist_angle(p, t + h) - P.twist_angle(p, t - h)) / (2 * h)
        assert P.angular_velocity(p, t) == pytest.approx(num, rel=1e-6, abs=1e-9)
        num = (P.through_plane_displacement(p, t + h) - P.through_plane_displacement(p, t - h)) / (2 * h)
        # mm per frame -> cm/s
        assert P.longitudinal_velocity(p, t) == pytest.approx(num / 10 * p.T / p.rr_interval, rel=1e-6)


def test_deterministic(small_params):
    assert P.generate_phantom(small_params).equals(P.generate_phantom(small_params))
    other = P.generate_phantom(P.PhantomParams(**{**small_params.to_json(), "seed": 4}))
    assert not other.equals(P.generate_phantom(small_params))


def test_seg_area_grows_with_radius(phantom_study):
    p = P.PhantomParams(seed=11)
    a0, a1 = phantom_study.seg[0].sum(), phantom_study.seg[p.T // 4 + 1].sum()
    r0 = P.analytic_radius(p, 0)
    r1 = P.analytic_radius(p, p.T // 4 + 1)
    expected = math.pi * (r1[1] ** 2 - r1[0] ** 2) - math.pi * (r0[1] ** 2 - r0[0] ** 2)
    assert np.sign(int(a1) - int(a0)) == np.sign(expected) == 1


def test_phases_decode_to_analytic(phantom_study):
    p = P.PhantomParams(seed=11)
    s = phantom_study
    yy, xx = np.mgrid[0 : p.H, 0 : p.W].astype(np.float64)
    for t in range(0, p.T, 5):
        seg = s.seg[t].astype(bool)
        vx, vy, vz = P.velocity_field(p, t, xx, yy)
        for phase, v, venc in ((s.phase_x, vx, 20), (s.phase_y, vy, 20), (s.phase_z, vz, 30)):
            err = np.abs(decode_stored_phase(phase[t], venc) - v)[seg]
            assert err.max() <= venc * PHASE_STEP


def test_background_dark(phantom_study):
    p = P.PhantomParams(seed=11)
    yy, xx = np.mgrid[0 : p.H, 0 : p.W].astype(np.float64)
    cx, cy = p.center
    rho = np.hypot(xx - cx, yy - cy)
    for t in range(p.T):
        r_in, r_out = P.analytic_radius(p, t)
        far = (rho < r_in - 2) | (rho > r_out + 2)
        assert phantom_study.magnitude[t][far].max() < BACKGROUND_THRESHOLD
        assert phantom_study.magnitude[t][phantom_study.seg[t].astype(bool)].min() > BACKGROUND_THRESHOLD


def test_venc_guard():
    with pytest.raises(ValueError):
        P.generate_phantom(P.PhantomParams(z_amp=40.0))


@settings(max_examples=20)
@given(st.integers(0, 10_000))
def test_jitter_valid(seed):
    p = P.jitter_params(P.PhantomParams(), seed)
    assert p.seed == seed
    cx, cy = p.center
    assert p.r_outer0 + p.amp + 1 < min(cx, cy, p.W - 1 - cx, p.H - 1 - cy) + 1
    v_in, v_z = P.max_speeds(p)
    assert v_in < p.venc_inplane and v_z < p.venc_through


def test_cohort_seeds():
    studies = P.phantom_cohort(P.PhantomParams(H=32, W=32, T=6, r_inner0=5, r_outer0=9, amp=1, seed=5), 3)
    assert [s.meta.subject_id for s in studies] == ["phantom-5", "phantom-6", "phantom-7"]
