"""Beating-annulus phantom with closed-form myocardial velocities.

The ring keeps a fixed wall thickness while its radii pulse as
``r(t) = r0 + amp * sin(2 pi t / T)``; it twists with angular velocity
``twist_amp * sin(2 pi t / T)`` rad/frame and moves through-plane at
``z_amp * cos(2 pi t / T)`` cm/s. Frames are sampled from one 1 s R-R
interval, so ``T`` frames span one second.

Through-plane motion changes which tissue sits in the slice, so the
myocardial texture is a function of the through-plane displacement as well
as of the in-plane material coordinates.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .core import CineStudy, StudyMeta
from .metrics import BACKGROUND_THRESHOLD
from .velocity import encode_velocity

# Background phase noise fitted on real data, normalized units.
BG_PHASE_MU = 0.034
BG_PHASE_SIGMA = 0.034


class NotInMyocardiumError(ValueError):
    pass


@dataclass(frozen=True)
class PhantomParams:
    H: int = 64
    W: int = 64
    T: int = 50
    r_inner0: float = 12.0
    r_outer0: float = 20.0
    amp: float = 3.0
    twist_amp: float = 0.02
    z_amp: float = 5.0
    noise_sigma: float = 0.03
    seed: int = 0
    cx: float | None = None
    cy: float | None = None
    pixel_spacing: float = 1.5
    venc_inplane: float = 20.0
    venc_through: float = 30.0
    rr_interval: float = 1.0
    slice_thickness: float = 8.0  # mm

    def __post_init__(self):
        if not 0 < self.r_inner0 < self.r_outer0 < min(self.H, self.W) / 2:
            raise ValueError("need 0 < r_inner0 < r_outer0 < min(H, W)/2")
        if not 0 <= self.amp < self.r_inner0:
            raise ValueError("need 0 <= amp < r_inner0")
        if self.T < 2:
            raise ValueError("T must be >= 2")

    @property
    def center(self) -> tuple[float, float]:
        cx = (self.W - 1) / 2 if self.cx is None else self.cx
        cy = (self.H - 1) / 2 if self.cy is None else self.cy
        return cx, cy

    @property
    def cms_per_px_frame(self) -> float:
        """Conversion from pixels/frame to cm/s."""
        return self.pixel_spacing / 10.0 * self.T / self.rr_interval

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "PhantomParams":
        return cls(**d)


def _phase(params: PhantomParams, t) -> float:
    return 2.0 * math.pi * np.asarray(t, dtype=np.float64) / params.T


def analytic_radius(params: PhantomParams, t) -> tuple[float, float]:
    s = params.amp * np.sin(_phase(params, t))
    return params.r_inner0 + s, params.r_outer0 + s


def radial_speed(params: PhantomParams, t):
    """dR/dt in pixels/frame."""
    return params.amp * 2.0 * math.pi / params.T * np.cos(_phase(params, t))


def angular_velocity(params: PhantomParams, t):
    """Twist rate in rad/frame."""
    return params.twist_amp * np.sin(_phase(params, t))


def twist_angle(params: PhantomParams, t):
    """Accumulated rotation since t=0 (integral of the twist rate), rad."""
    return params.twist_amp * params.T / (2.0 * math.pi) * (1.0 - np.cos(_phase(params, t)))


def longitudinal_velocity(params: PhantomParams, t):
    return params.z_amp * np.cos(_phase(params, t))


def through_plane_displacement(params: PhantomParams, t):
    """Integral of the longitudinal velocity since t=0, in mm."""
    return params.z_amp * 10.0 * params.rr_interval / (2.0 * math.pi) * np.sin(_phase(params, t))


def velocity_field(params: PhantomParams, t, x, y):
    """Closed-form (vx, vy, vz) in cm/s at points (x, y); no membership check."""
    cx, cy = params.center
    dx = np.asarray(x, dtype=np.float64) - cx
    dy = np.asarray(y, dtype=np.float64) - cy
    rho = np.hypot(dx, dy)
    with np.errstate(invalid="ignore", divide="ignore"):
        rx = np.where(rho > 0, dx / rho, 0.0)
        ry = np.where(rho > 0, dy / rho, 0.0)
    k = params.cms_per_px_frame
    vr = radial_speed(params, t) * k
    vt = angular_velocity(params, t) * rho * k
    vx = vr * rx - vt * ry
    vy = vr * ry + vt * rx
    vz = np.broadcast_to(longitudinal_velocity(params, t), rho.shape).astype(np.float64)
    return vx, vy, vz


def in_annulus(params: PhantomParams, t, x, y):
    cx, cy = params.center
    rho = np.hypot(np.asarray(x, dtype=np.float64) - cx, np.asarray(y, dtype=np.float64) - cy)
    r_in, r_out = analytic_radius(params, t)
    return (rho >= r_in) & (rho <= r_out)


def analytic_velocity(params: PhantomParams, t, x: float, y: float) -> tuple[float, float, float]:
    """Ground-truth velocity (cm/s) of the myocardial point (x, y) at frame t."""
    if not in_annulus(params, t, x, y):
        raise NotInMyocardiumError(f"({x}, {y}) is outside the annulus at t={t}")
    vx, vy, vz = velocity_field(params, t, x, y)
    return float(vx), float(vy), float(vz)


def max_speeds(params: PhantomParams) -> tuple[float, float]:
    """Upper bounds of in-plane and through-plane speed, cm/s."""
    k = params.cms_per_px_frame
    r_max = params.r_outer0 + params.amp + 1.0
    vr = params.amp * 2.0 * math.pi / params.T * k
    vt = abs(params.twist_amp) * r_max * k
    return math.hypot(vr, vt), abs(params.z_amp)


def _texture(params: PhantomParams, rng: np.random.Generator):
    """Angular texture in material coordinates: orders, amplitudes, phases
    and per-order sensitivity to through-plane displacement."""
    orders = np.arange(2, 7)
    amps = rng.uniform(0.03, 0.08, size=orders.size)
    phases = rng.uniform(0, 2 * math.pi, size=orders.size)
    depth_gain = rng.uniform(0.5, 1.5, size=orders.size) * math.pi
    return orders, amps, phases, depth_gain


def generate_phantom(params: PhantomParams) -> CineStudy:
    """Render magnitude, segmentation and encoded phases for every frame."""
    v_in, v_z = max_speeds(params)
    if v_in >= params.venc_inplane or v_z >= params.venc_through:
        raise ValueError("phantom speeds exceed venc; reduce amp/twist_amp/z_amp")
    rng = np.random.default_rng(params.seed)
    orders, amps, tphases, zgain = _texture(params, rng)
    H, W, T = params.H, params.W, params.T
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    cx, cy = params.center
    rho = np.hypot(xx - cx, yy - cy)
    theta = np.arctan2(yy - cy, xx - cx)

    mag = np.empty((T, H, W), np.float32)
    seg = np.empty((T, H, W), np.uint8)
    ph = np.empty((3, T, H, W), np.float32)
    for t in range(T):
        r_in, r_out = analytic_radius(params, t)
        seg[t] = (rho >= r_in) & (rho <= r_out)
        # Distance outside the ring; occupancy ramps to zero one pixel out.
        d = np.maximum(r_in - rho, rho - r_out)
        occ = np.clip(1.0 - d, 0.0, 1.0)
        phi = theta - twist_angle(params, t)
        depth = np.clip((rho - r_in) / (r_out - r_in), 0.0, 1.0)
        zrel = through_plane_displacement(params, t) / params.slice_thickness
        tex = 0.35 + 0.1 * np.cos(math.pi * depth)
        for m, a, p, g in zip(orders, amps, tphases, zgain):
            tex = tex + a * np.cos(m * phi + p + g * zrel)
        tissue = tex + params.noise_sigma * rng.standard_normal((H, W))
        bg = -1.0 + np.minimum(0.01 * np.abs(rng.standard_normal((H, W))), 0.04)
        frame = bg + occ * (tissue - bg)
        mag[t] = np.clip(frame, -1.0, 1.0)

        fg = mag[t] >= BACKGROUND_THRESHOLD
        vx, vy, vz = velocity_field(params, t, xx, yy)
        noise = np.clip(rng.normal(BG_PHASE_MU, BG_PHASE_SIGMA, size=(3, H, W)), -1.0, 1.0)
        for c, (v, venc) in enumerate(
            ((vx, params.venc_inplane), (vy, params.venc_inplane), (vz, params.venc_through))
        ):
            ph[c, t] = np.where(fg, encode_velocity(v, venc), encode_velocity(noise[c] * venc, venc))

    meta = StudyMeta(
        num_frames=T,
        venc_inplane=params.venc_inplane,
        venc_through=params.venc_through,
        pixel_spacing=params.pixel_spacing,
        subject_id=f"phantom-{params.seed}",
    )
    return CineStudy(mag, ph[0], ph[1], ph[2], seg, meta)


def jitter_params(base: PhantomParams, seed: int) -> PhantomParams:
    """Per-subject variation of geometry and motion around ``base``."""
    rng = np.random.default_rng([seed, 7919])
    cx, cy = base.center
    r_in = base.r_inner0 + rng.uniform(-1.5, 1.5)
    thick = (base.r_outer0 - base.r_inner0) * rng.uniform(0.85, 1.15)
    limit = min(base.H, base.W) / 2 - 1.0
    shift = limit - (r_in + thick + base.amp * 1.2 + 1.0)
    shift = max(0.0, min(4.0, shift))
    return replace(
        base,
        seed=seed,
        r_inner0=float(r_in),
        r_outer0=float(r_in + thick),
        amp=float(base.amp * rng.uniform(0.8, 1.2)),
        twist_amp=float(base.twist_amp * rng.uniform(0.8, 1.2)),
        z_amp=float(base.z_amp * rng.uniform(0.8, 1.2)),
        cx=float(cx + rng.uniform(-shift, shift)),
        cy=float(cy + rng.uniform(-shift, shift)),
    )


def phantom_cohort(base: PhantomParams, count: int, jitter: bool = True) -> list[CineStudy]:
    """``count`` studies with seeds ``base.seed + i``."""
    out = []
    for i in range(count):
        p = jitter_params(base, base.seed + i) if jitter else replace(base, seed=base.seed + i)
        out.append(generate_phantom(p))
    return out
