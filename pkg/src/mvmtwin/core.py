"""Domain types, index arithmetic, normalization and study persistence."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .tensorio import TensorFormatError, read_tensor, write_tensor

PHASE_RAW_MAX = 4096
PHASE_RAW_MID = 2048
# One raw-integer step expressed in normalized [-1, 1] units.
PHASE_STEP = 1.0 / PHASE_RAW_MID

ARRAY_NAMES = ("magnitude", "phase_x", "phase_y", "phase_z", "seg")


class CorruptStudyError(Exception):
    """A persisted study directory is incomplete or inconsistent."""


@dataclass(frozen=True)
class StudyMeta:
    num_frames: int = 50
    venc_inplane: float = 20.0  # cm/s
    venc_through: float = 30.0  # cm/s
    pixel_spacing: float = 1.5  # mm/pixel
    subject_id: str = "subject"

    def __post_init__(self):
        if self.num_frames < 2:
            raise ValueError("num_frames must be >= 2")
        if not (self.venc_inplane > 0 and self.venc_through > 0):
            raise ValueError("venc values must be positive")

    def to_json(self) -> dict:
        return {
            "num_frames": int(self.num_frames),
            "venc_inplane_cms": float(self.venc_inplane),
            "venc_through_cms": float(self.venc_through),
            "pixel_spacing_mm": float(self.pixel_spacing),
            "subject_id": str(self.subject_id),
        }

    @classmethod
    def from_json(cls, d: dict) -> "StudyMeta":
        return cls(
            num_frames=int(d["num_frames"]),
            venc_inplane=float(d["venc_inplane_cms"]),
            venc_through=float(d["venc_through_cms"]),
            pixel_spacing=float(d["pixel_spacing_mm"]),
            subject_id=str(d["subject_id"]),
        )


def _frozen(a: np.ndarray, dtype) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class CineStudy:
    """One slice over a full cardiac cycle.

    Arrays are T x H x W. Magnitude and phases are float32 in [-1, 1], seg is
    uint8 in {0, 1}. A frame whose magnitude is entirely NaN is missing
    (temporally downsampled input) and has zero seg. Phase frames that are
    entirely NaN have not been synthesized yet. Arrays are stored read-only.
    """

    magnitude: np.ndarray
    phase_x: np.ndarray
    phase_y: np.ndarray
    phase_z: np.ndarray
    seg: np.ndarray
    meta: StudyMeta = field(default_factory=StudyMeta)

    def __post_init__(self):
        for name in ARRAY_NAMES[:4]:
            object.__setattr__(self, name, _frozen(getattr(self, name), np.float32))
        object.__setattr__(self, "seg", _frozen(self.seg, np.uint8))
        shapes = {getattr(self, n).shape for n in ARRAY_NAMES}
        if len(shapes) != 1:
            raise ValueError(f"array shapes differ: {sorted(shapes)}")
        shape = self.magnitude.shape
        if len(shape) != 3:
            raise ValueError("arrays must be T x H x W")
        if shape[0] != self.meta.num_frames:
            raise ValueError(f"T={shape[0]} but meta.num_frames={self.meta.num_frames}")
        if self.seg.max(initial=0) > 1:
            raise ValueError("seg must be binary")
        for name in ARRAY_NAMES[:4]:
            a = getattr(self, name)
            nan = np.isnan(a)
            partial = nan.any(axis=(1, 2)) & ~nan.all(axis=(1, 2))
            if partial.any():
                raise ValueError(f"{name} has partially missing frames {np.flatnonzero(partial)}")
            vals = a[~nan]
            if vals.size and (vals.min() < -1.0 or vals.max() > 1.0):
                raise ValueError(f"{name} outside [-1, 1]")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.magnitude.shape

    @property
    def phases(self) -> np.ndarray:
        """Phases stacked as T x 3 x H x W (x, y, z)."""
        return np.stack([self.phase_x, self.phase_y, self.phase_z], axis=1)

    def present_frames(self) -> np.ndarray:
        """Boolean vector of frames that carry data."""
        return ~np.isnan(self.magnitude).all(axis=(1, 2))

    def replace(self, **changes) -> "CineStudy":
        return replace(self, **changes)

    def equals(self, other: "CineStudy") -> bool:
        """Bitwise equality of all arrays (NaN-aware) and meta."""
        if self.meta != other.meta:
            return False
        return all(
            np.array_equal(getattr(self, n), getattr(other, n), equal_nan=n != "seg")
            for n in ARRAY_NAMES
        )


@dataclass(frozen=True)
class WeightMap:
    weights: np.ndarray

    def __post_init__(self):
        w = _frozen(self.weights, np.float32)
        if not np.isin(w, (np.float32(0.1), np.float32(1.0))).all():
            raise ValueError("weight maps may only contain 0.1 and 1.0")
        object.__setattr__(self, "weights", w)

    def __array__(self, dtype=None, copy=None):
        return self.weights if dtype is None else self.weights.astype(dtype)


@dataclass(frozen=True)
class DownsampleSpec:
    """Keep every (K+1)-th frame starting at ``offset``; discard K in between."""

    K: int
    offset: int = 0

    def __post_init__(self):
        if self.K < 0:
            raise ValueError("K must be >= 0")
        if self.offset < 0:
            raise ValueError("offset must be >= 0")

    def kept(self, num_frames: int) -> np.ndarray:
        if self.offset >= num_frames:
            raise ValueError("offset must be < num_frames")
        t = np.arange(num_frames)
        return (t - self.offset) % (self.K + 1) == 0


def wrap_index(t: int, T: int) -> int:
    """Periodic frame index: ``t mod T`` mapped into ``[0, T)``."""
    if T < 1:
        raise ValueError("T must be >= 1")
    return int(t) % int(T)


def normalize_phase_raw(raw) -> np.ndarray:
    """Map raw phase integers in [0, 4096] to [-1, 1] (2048 -> 0)."""
    raw = np.asarray(raw)
    if raw.size and (raw.min() < 0 or raw.max() > PHASE_RAW_MAX):
        raise ValueError("raw phase values must lie in [0, 4096]")
    return raw.astype(np.float64) / PHASE_RAW_MID - 1.0


def denormalize_phase(phase) -> np.ndarray:
    """Inverse of :func:`normalize_phase_raw`, rounded to the integer grid."""
    phase = np.asarray(phase, dtype=np.float64)
    raw = np.rint((phase + 1.0) * PHASE_RAW_MID)
    return np.clip(raw, 0, PHASE_RAW_MAX).astype(np.int32)


def quantize_phase(phase) -> np.ndarray:
    """Snap normalized phases onto the 4096-level storage grid."""
    return normalize_phase_raw(denormalize_phase(phase))


def drop_frames(study: CineStudy, spec: DownsampleSpec) -> CineStudy:
    """Temporally downsample: frames not kept by ``spec`` become missing."""
    kept = spec.kept(study.meta.num_frames)
    arrays = {}
    for name in ARRAY_NAMES[:4]:
        a = np.array(getattr(study, name), copy=True)
        a[~kept] = np.nan
        arrays[name] = a
    seg = np.array(study.seg, copy=True)
    seg[~kept] = 0
    return study.replace(seg=seg, **arrays)


def save_study(study: CineStudy, directory: str | Path) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "meta.json").write_text(json.dumps(study.meta.to_json(), indent=2, sort_keys=True))
    for name in ARRAY_NAMES:
        write_tensor(d / f"{name}.ten", getattr(study, name))


def load_study(directory: str | Path) -> CineStudy:
    d = Path(directory)
    try:
        meta = StudyMeta.from_json(json.loads((d / "meta.json").read_text()))
    except FileNotFoundError as e:
        raise CorruptStudyError(f"{d}: missing meta.json") from e
    except (KeyError, ValueError, TypeError) as e:
        raise CorruptStudyError(f"{d}: bad meta.json ({e})") from e
    arrays = {}
    for name in ARRAY_NAMES:
        path = d / f"{name}.ten"
        if not path.exists():
            raise CorruptStudyError(f"{d}: missing {path.name}")
        try:
            arrays[name] = read_tensor(path)
        except TensorFormatError as e:
            raise CorruptStudyError(f"{path}: {e}") from e
    for name, a in arrays.items():
        if a.ndim != 3 or a.shape[0] != meta.num_frames:
            raise CorruptStudyError(
                f"{d}: {name} has shape {a.shape}, expected T={meta.num_frames}"
            )
    try:
        return CineStudy(meta=meta, **arrays)
    except ValueError as e:
        raise CorruptStudyError(f"{d}: {e}") from e


def frame_duration_s(num_frames: int, rr_interval_s: float = 1.0) -> float:
    return rr_interval_s / num_frames


def normalized_time(num_frames: int) -> np.ndarray:
    return np.arange(num_frames, dtype=np.float64)


def resample_cycle(series: np.ndarray, num_points: int = 50) -> np.ndarray:
    """Resample one periodic cycle onto ``num_points`` normalized time points.

    Used to put subjects with different R-R intervals on a common time axis.
    """
    series = np.asarray(series, dtype=np.float64)
    n = series.shape[0]
    src = np.arange(n + 1) / n
    ext = np.concatenate([series, series[:1]], axis=0)
    dst = np.arange(num_points) / num_points
    if ext.ndim == 1:
        return np.interp(dst, src, ext)
    return np.stack([np.interp(dst, src, ext[:, j]) for j in range(ext.shape[1])], axis=1)


__all__ = [
    "ARRAY_NAMES",
    "CineStudy",
    "CorruptStudyError",
    "DownsampleSpec",
    "PHASE_STEP",
    "StudyMeta",
    "WeightMap",
    "denormalize_phase",
    "drop_frames",
    "frame_duration_s",
    "load_study",
    "normalize_phase_raw",
    "quantize_phase",
    "resample_cycle",
    "save_study",
    "wrap_index",
]
