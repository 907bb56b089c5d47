"""Loss weight maps, the weighted MAE training loss and evaluation metrics.

The weighted losses are written with plain arithmetic so they accept numpy
arrays and torch tensors alike.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .core import WeightMap

W_HIGH = 1.0
W_LOW = 0.1
BACKGROUND_THRESHOLD = -0.95
SSIM_WINDOW = 8
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


class UndefinedCorrelationError(ValueError):
    pass


class EmptyMaskWarning(UserWarning):
    pass


@dataclass
class MetricReport:
    mse: float
    msew1: float
    msew2: float
    psnr: float
    ssim: float
    dice: float | None = None

    def to_json(self) -> dict:
        d = asdict(self)
        if math.isinf(d["psnr"]):
            d["psnr"] = "inf"
        return d


def _as_weights(w):
    return w.weights if isinstance(w, WeightMap) else w


def compute_w1(seg, pad: int = 8) -> WeightMap:
    """1.0 inside the outer-contour bounding box grown by ``pad`` pixels."""
    seg = np.asarray(seg).astype(bool)
    w = np.full(seg.shape, W_LOW, dtype=np.float32)
    if not seg.any():
        warnings.warn("empty mask: weight map is uniformly 0.1", EmptyMaskWarning, stacklevel=2)
        return WeightMap(w)
    rows = np.flatnonzero(seg.any(axis=1))
    cols = np.flatnonzero(seg.any(axis=0))
    H, W = seg.shape
    r0, r1 = max(rows[0] - pad, 0), min(rows[-1] + pad, H - 1)
    c0, c1 = max(cols[0] - pad, 0), min(cols[-1] + pad, W - 1)
    w[r0 : r1 + 1, c0 : c1 + 1] = W_HIGH
    return WeightMap(w)


def compute_w2(magnitude) -> WeightMap:
    """1.0 where magnitude > -0.95 (non-background), 0.1 elsewhere."""
    m = np.asarray(magnitude, dtype=np.float64)
    return WeightMap(np.where(m > BACKGROUND_THRESHOLD, W_HIGH, W_LOW).astype(np.float32))


def _check_shapes(*arrays):
    shapes = {tuple(a.shape) for a in arrays}
    if len(shapes) != 1:
        raise ValueError(f"shape mismatch: {sorted(shapes)}")


def weighted_mae(pred, gt, w1, w2):
    """Mean(w1 * |pred - gt|) + Mean(w2 * |pred - gt|), means over all pixels."""
    w1, w2 = _as_weights(w1), _as_weights(w2)
    _check_shapes(pred, gt, w1, w2)
    err = abs(pred - gt)
    return (w1 * err).mean() + (w2 * err).mean()


def weighted_mse(pred, gt, w):
    w = _as_weights(w)
    _check_shapes(pred, gt, w)
    return (w * (pred - gt) ** 2).mean()


def weighted_mae_grad(pred, gt, w1, w2) -> np.ndarray:
    """Analytic (sub)gradient of :func:`weighted_mae` w.r.t. ``pred``."""
    w1, w2 = np.asarray(_as_weights(w1)), np.asarray(_as_weights(w2))
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    _check_shapes(pred, gt, w1, w2)
    return (w1 + w2) * np.sign(pred - gt) / pred.size


def to_unit_range(img):
    """[-1, 1] -> [0, 1]."""
    return (np.asarray(img, dtype=np.float64) + 1.0) / 2.0


def mse(pred, gt) -> float:
    pred, gt = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    _check_shapes(pred, gt)
    return float(((pred - gt) ** 2).mean())


def psnr_from_mse(m: float) -> float:
    if m == 0:
        return math.inf
    return 10.0 * math.log10(1.0 / m)


def psnr(pred, gt) -> float:
    """PSNR in dB for images on [0, 1] (peak 1). Identical images give +inf."""
    return psnr_from_mse(mse(pred, gt))


def ssim(pred, gt, win: int = SSIM_WINDOW) -> float:
    """Mean SSIM over all valid ``win`` x ``win`` windows, unit dynamic range."""
    x, y = np.asarray(pred, dtype=np.float64), np.asarray(gt, dtype=np.float64)
    _check_shapes(x, y)
    if x.ndim != 2 or min(x.shape) < win:
        raise ValueError(f"need a 2-D image of at least {win}x{win}")
    xw = np.lib.stride_tricks.sliding_window_view(x, (win, win))
    yw = np.lib.stride_tricks.sliding_window_view(y, (win, win))
    mx, my = xw.mean(axis=(-1, -2)), yw.mean(axis=(-1, -2))
    vx = xw.var(axis=(-1, -2))
    vy = yw.var(axis=(-1, -2))
    cxy = ((xw - mx[..., None, None]) * (yw - my[..., None, None])).mean(axis=(-1, -2))
    s = ((2 * mx * my + SSIM_C1) * (2 * cxy + SSIM_C2)) / (
        (mx**2 + my**2 + SSIM_C1) * (vx + vy + SSIM_C2)
    )
    return float(s.mean())


def dice(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    _check_shapes(a, b)
    for m in (a, b):
        if not np.isin(m, (0, 1)).all():
            raise ValueError("dice needs binary masks")
    a, b = a.astype(bool), b.astype(bool)
    total = a.sum() + b.sum()
    if total == 0:
        return 1.0
    return float(2.0 * (a & b).sum() / total)


def pearson(x, y) -> float:
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValueError("need two equal-length series of length >= 2")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt((dx**2).sum()), math.sqrt((dy**2).sum())
    if sx == 0 or sy == 0:
        raise UndefinedCorrelationError("constant series")
    return float(np.clip((dx * dy).sum() / (sx * sy), -1.0, 1.0))


def image_report(pred, gt, seg_gt=None, seg_pred=None, pad: int = 8) -> MetricReport:
    """All image metrics for one predicted frame against ground truth.

    ``pred``/``gt`` are on [-1, 1]; errors are measured after mapping to
    [0, 1]. MSEW1 needs the ground-truth mask (for the ROI box) and DICE
    needs both masks.
    """
    p, g = to_unit_range(pred), to_unit_range(gt)
    m = mse(p, g)
    w2 = compute_w2(gt)
    if seg_gt is not None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", EmptyMaskWarning)
            w1 = compute_w1(seg_gt, pad)
        msew1 = float(weighted_mse(p, g, w1.weights))
    else:
        msew1 = float("nan")
    d = dice(seg_pred, seg_gt) if seg_pred is not None and seg_gt is not None else None
    return MetricReport(
        mse=m,
        msew1=msew1,
        msew2=float(weighted_mse(p, g, w2.weights)),
        psnr=psnr_from_mse(m),
        ssim=ssim(p, g),
        dice=d,
    )


def mean_report(reports: list[MetricReport]) -> dict:
    """Mean and std per metric, skipping undefined values."""
    out = {}
    for key in ("mse", "msew1", "msew2", "psnr", "ssim", "dice"):
        vals = np.array([getattr(r, key) for r in reports if getattr(r, key) is not None], dtype=float)
        vals = vals[np.isfinite(vals)]
        if vals.size == 0:
            out[key] = {"mean": None, "std": None}
        else:
            out[key] = {"mean": float(vals.mean()), "std": float(vals.std())}
    return out
