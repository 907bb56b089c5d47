"""Velocity assessment: phase decoding, cylindrical decomposition, global
curves and their clinical summary statistics."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .core import CineStudy, denormalize_phase, normalize_phase_raw
from . import metrics

log = logging.getLogger(__name__)

CMS_TO_MMS = 10.0
DIRECTIONS = ("radial", "circumferential", "longitudinal")


class NoMyocardiumError(ValueError):
    """The segmentation mask is empty where myocardium is required."""


@dataclass(frozen=True)
class VelocityCurves:
    """Global myocardial velocity curves in mm/s over normalized time."""

    radial: np.ndarray
    circumferential: np.ndarray
    longitudinal: np.ndarray

    def __post_init__(self):
        n = {len(self.radial), len(self.circumferential), len(self.longitudinal)}
        if len(n) != 1:
            raise ValueError("curves must share length T")
        for d in DIRECTIONS:
            a = np.asarray(getattr(self, d), dtype=np.float64)
            if not np.isfinite(a).all():
                raise ValueError(f"{d} curve is not finite")
            object.__setattr__(self, d, a)

    @property
    def T(self) -> int:
        return len(self.radial)

    @property
    def time(self) -> np.ndarray:
        return np.arange(self.T, dtype=np.float64)

    def as_array(self) -> np.ndarray:
        return np.stack([self.radial, self.circumferential, self.longitudinal], axis=1)

    def to_csv(self) -> str:
        lines = ["t,vr_mms,vc_mms,vz_mms"]
        for t, (r, c, z) in enumerate(self.as_array()):
            lines.append(f"{t},{r:.6f},{c:.6f},{z:.6f}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class VelocityStats:
    psv: float
    tpsv: int
    pdv: float
    tpdv: int
    mv: float

    def to_json(self) -> dict:
        return {"psv": self.psv, "tpsv": self.tpsv, "pdv": self.pdv,
                "tpdv": self.tpdv, "mv": self.mv}


def encode_velocity(v, venc: float) -> np.ndarray:
    """Velocity (cm/s) to normalized phase on the 4096-level grid."""
    if venc <= 0:
        raise ValueError("venc must be positive")
    phase = np.clip(np.asarray(v, dtype=np.float64) / venc, -1.0, 1.0)
    return normalize_phase_raw(denormalize_phase(phase))


def phase_to_velocity(phase, venc: float):
    """Normalized phase in [-1, 1] to velocity in cm/s (0 phase = 0 velocity)."""
    if venc <= 0:
        raise ValueError("venc must be positive")
    return np.asarray(phase, dtype=np.float64) * venc


def decode_stored_phase(phase, venc: float) -> np.ndarray:
    """Decode phase as stored on disk: renormalize onto the raw integer grid
    first, then apply the linear velocity map."""
    return phase_to_velocity(normalize_phase_raw(denormalize_phase(phase)), venc)


def lv_centroid(seg) -> tuple[float, float]:
    """Mean (x, y) = (column, row) of the mask's foreground pixels."""
    rows, cols = np.nonzero(np.asarray(seg))
    if rows.size == 0:
        raise NoMyocardiumError("empty mask")
    return float(cols.mean()), float(rows.mean())


def cylindrical_decompose(vx, vy, seg, centroid, eps: float = 1e-6):
    """Project in-plane velocity onto radial/circumferential unit vectors.

    Returns ``(vr, vc, n_excluded)``; ``vr``/``vc`` are full-size fields that
    are NaN off the mask and at pixels within ``eps`` of the centroid.
    Image frame: x = column (right), y = row (down); c_hat = (-r_y, r_x).
    """
    seg = np.asarray(seg).astype(bool)
    vx = np.asarray(vx, dtype=np.float64)
    vy = np.asarray(vy, dtype=np.float64)
    H, W = seg.shape
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    dx = xx - centroid[0]
    dy = yy - centroid[1]
    rho = np.hypot(dx, dy)
    degenerate = seg & (rho < eps)
    n_excluded = int(degenerate.sum())
    if n_excluded:
        log.warning("%d myocardial pixel(s) coincide with the centroid; excluded", n_excluded)
    valid = seg & ~degenerate
    with np.errstate(invalid="ignore", divide="ignore"):
        rx = np.where(valid, dx / rho, np.nan)
        ry = np.where(valid, dy / rho, np.nan)
    vr = vx * rx + vy * ry
    vc = -vx * ry + vy * rx
    return vr, vc, n_excluded


def frame_velocities(study: CineStudy, t: int):
    """Decoded (vx, vy, vz) in cm/s for frame ``t``."""
    m = study.meta
    vx = decode_stored_phase(study.phase_x[t], m.venc_inplane)
    vy = decode_stored_phase(study.phase_y[t], m.venc_inplane)
    vz = decode_stored_phase(study.phase_z[t], m.venc_through)
    return vx, vy, vz


def global_curves(study: CineStudy) -> VelocityCurves:
    T = study.meta.num_frames
    out = np.zeros((T, 3))
    for t in range(T):
        seg = study.seg[t].astype(bool)
        if not seg.any():
            raise NoMyocardiumError(f"empty myocardium mask at t={t}")
        vx, vy, vz = frame_velocities(study, t)
        vr, vc, n_excluded = cylindrical_decompose(vx, vy, seg, lv_centroid(seg))
        if n_excluded == seg.sum():
            raise NoMyocardiumError(f"no myocardial pixel away from the centroid at t={t}")
        out[t] = np.nanmean(vr), np.nanmean(vc), vz[seg].mean()
    out *= CMS_TO_MMS
    return VelocityCurves(out[:, 0], out[:, 1], out[:, 2])


def default_systole_end(T: int) -> int:
    return max(1, T // 3)


def curve_stats(curve, systole_end: int) -> VelocityStats:
    """Peak/time-to-peak of |curve| in the systolic window ``[0, systole_end)``
    and the diastolic window ``[systole_end, T)``; mean of |curve|."""
    a = np.abs(np.asarray(curve, dtype=np.float64))
    T = a.size
    if T < 2 or not 1 <= systole_end < T:
        raise ValueError("need T >= 2 and 1 <= systole_end < T")
    tpsv = int(np.argmax(a[:systole_end]))
    tpdv = systole_end + int(np.argmax(a[systole_end:]))
    return VelocityStats(
        psv=float(a[tpsv]), tpsv=tpsv, pdv=float(a[tpdv]), tpdv=tpdv, mv=float(a.mean())
    )


def curves_stats(curves: VelocityCurves, systole_end: int | None = None) -> dict:
    se = default_systole_end(curves.T) if systole_end is None else systole_end
    return {d: curve_stats(getattr(curves, d), se) for d in DIRECTIONS}


def compare_curves(a: VelocityCurves, b: VelocityCurves, systole_end: int | None = None) -> dict:
    """Per-direction Pearson correlation plus both sides' summary stats.

    An undefined correlation (constant curve) is reported as ``None``.
    """
    if a.T != b.T:
        raise ValueError("curves must share T")
    out = {}
    sa, sb = curves_stats(a, systole_end), curves_stats(b, systole_end)
    for d in DIRECTIONS:
        try:
            r = metrics.pearson(getattr(a, d), getattr(b, d))
        except metrics.UndefinedCorrelationError:
            r = None
        out[d] = {"pearson": r, "a": sa[d].to_json(), "b": sb[d].to_json()}
    return out


def stats_table(per_study: list[dict[str, VelocityStats]]) -> dict:
    """Mean/std across studies for each direction and statistic."""
    table = {}
    for d in DIRECTIONS:
        rows = {}
        for key in ("psv", "tpsv", "pdv", "tpdv", "mv"):
            vals = np.array([float(getattr(s[d], key)) for s in per_study])
            rows[key] = {"mean": float(vals.mean()), "std": float(vals.std())}
        table[d] = rows
    return table
