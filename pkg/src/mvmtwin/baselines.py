"""Non-learned frame interpolation: linear blending and Horn-Schunck flow."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .core import CineStudy, DownsampleSpec, wrap_index


@dataclass(frozen=True)
class FlowField:
    u: np.ndarray  # x (column) displacement, pixels per frame gap
    v: np.ndarray  # y (row) displacement

    def __post_init__(self):
        if self.u.shape != self.v.shape:
            raise ValueError("u and v must share shape")
        if not (np.isfinite(self.u).all() and np.isfinite(self.v).all()):
            raise ValueError("flow must be finite")

    @classmethod
    def zeros(cls, shape) -> "FlowField":
        return cls(np.zeros(shape), np.zeros(shape))

    def scaled(self, f: float) -> "FlowField":
        return FlowField(self.u * f, self.v * f)


def _fraction(k: int, K: int) -> float:
    if not 1 <= k <= K:
        raise ValueError(f"k={k} outside 1..K={K}")
    return k / (K + 1)


def linear_interpolate(m_a, m_b, k: int, K: int) -> np.ndarray:
    """Blend toward ``m_b`` by k/(K+1); equals ``m_a`` in the k -> 0 limit."""
    m_a, m_b = np.asarray(m_a, dtype=np.float64), np.asarray(m_b, dtype=np.float64)
    if m_a.shape != m_b.shape:
        raise ValueError("shape mismatch")
    f = _fraction(k, K)
    return (1.0 - f) * m_a + f * m_b


def linear_interpolate_mask(s_a, s_b, k: int, K: int) -> np.ndarray:
    return (linear_interpolate(s_a, s_b, k, K) >= 0.5).astype(np.uint8)


def _gradients(img):
    # Central differences with replicated borders.
    p = np.pad(img, 1, mode="edge")
    ix = (p[1:-1, 2:] - p[1:-1, :-2]) / 2.0
    iy = (p[2:, 1:-1] - p[:-2, 1:-1]) / 2.0
    return ix, iy


def _neighbor_mean(f):
    p = np.pad(f, 1, mode="edge")
    return (p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:]) / 4.0


def horn_schunck(i1, i2, alpha: float = 1.0, iters: int = 200) -> FlowField:
    """Dense flow from ``i1`` to ``i2`` by Jacobi iteration from zero flow.

    Spatial gradients are taken on the mean of both frames.
    """
    i1, i2 = np.asarray(i1, dtype=np.float64), np.asarray(i2, dtype=np.float64)
    if i1.shape != i2.shape:
        raise ValueError("shape mismatch")
    if alpha <= 0 or iters < 1:
        raise ValueError("need alpha > 0 and iters >= 1")
    ix, iy = _gradients(0.5 * (i1 + i2))
    it = i2 - i1
    denom = alpha**2 + ix**2 + iy**2
    u = np.zeros_like(i1)
    v = np.zeros_like(i1)
    for _ in range(iters):
        ub, vb = _neighbor_mean(u), _neighbor_mean(v)
        r = (ix * ub + iy * vb + it) / denom
        u = ub - ix * r
        v = vb - iy * r
    return FlowField(u, v)


def warp(img, flow: FlowField, frac: float, order: int = 1) -> np.ndarray:
    """Backward warp: out(p) = img(p - frac * flow(p)), border-clamped."""
    img = np.asarray(img, dtype=np.float64)
    H, W = img.shape
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    coords = np.stack([yy - frac * flow.v, xx - frac * flow.u])
    return ndimage.map_coordinates(img, coords, order=order, mode="nearest")


def flow_warp_interpolate(
    m_a, m_b, seg_a, seg_b, k: int, K: int, alpha: float = 1.0, iters: int = 200,
    flow: FlowField | None = None,
):
    """Interpolate frame k of K (and its mask) by warping frame a along the
    a -> b flow scaled by k/(K+1). ``flow`` overrides the estimate."""
    if k == 0:
        return np.array(m_a, dtype=np.float64), np.array(seg_a, dtype=np.uint8)
    frac = _fraction(k, K)
    if flow is None:
        flow = horn_schunck(m_a, m_b, alpha, iters)
    img = warp(m_a, flow, frac, order=1)
    mask = warp(np.asarray(seg_a, dtype=np.float64), flow, frac, order=0)
    return img, (mask >= 0.5).astype(np.uint8)


METHODS = ("linear", "flow")


def interpolate_series_baseline(study: CineStudy, spec: DownsampleSpec, method: str = "linear",
                                alpha: float = 1.0, iters: int = 200) -> CineStudy:
    """Fill every missing frame from its two nearest existing neighbours.

    A gap of ``d - 1`` missing frames between existing frames ``a`` and
    ``a + d`` (wrapping) is filled at fractions ``k / d``. Existing frames are
    copied unchanged. One flow field is estimated per gap.
    """
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}")
    T = study.meta.num_frames
    present = study.present_frames()
    if not np.array_equal(present, spec.kept(T)):
        raise ValueError("present frames do not match the downsample spec")
    if present.all():
        return study
    mag = np.array(study.magnitude, copy=True)
    seg = np.array(study.seg, copy=True)
    for a in np.flatnonzero(present):
        d = next(j for j in range(1, T + 1) if present[wrap_index(a + j, T)])
        if d == 1:
            continue
        b = wrap_index(a + d, T)
        flow = horn_schunck(mag[a], mag[b], alpha, iters) if method == "flow" else None
        for k in range(1, d):
            t = wrap_index(a + k, T)
            if method == "linear":
                mag[t] = linear_interpolate(mag[a], mag[b], k, d - 1)
                seg[t] = linear_interpolate_mask(seg[a], seg[b], k, d - 1)
            else:
                mag[t], seg[t] = flow_warp_interpolate(mag[a], mag[b], seg[a], seg[b], k, d - 1,
                                                       alpha, iters, flow=flow)
    return study.replace(magnitude=mag, seg=seg)
