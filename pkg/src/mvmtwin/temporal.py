"""Learned temporal interpolation of magnitude frames and segmentation masks.

One network is trained per downsampling factor ``K``. Each sample asks for
frame ``tau + k`` given the existing frames ``tau`` and ``tau + K + 1``
(wrapped periodically) and the temporal condition maps.
"""
from __future__ import annotations

import copy
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from . import checkpoint as ckpt
from .core import CineStudy, DownsampleSpec, wrap_index
from .metrics import compute_w1, compute_w2, weighted_mae
from .nets import InterpNet, InterpNetConfig, PatchDiscriminator, lsgan_loss

log = logging.getLogger(__name__)


class TrainingFailure(RuntimeError):
    """Training diverged; ``diagnostics`` holds the last recorded state."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(f"{message}: {diagnostics}")
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class ConditionMaps:
    tau_map: np.ndarray
    k_map: np.ndarray


def make_condition_maps(tau: int, k: int, T: int, K: int, H: int, W: int) -> ConditionMaps:
    """Constant fields tau/T and k/(K+1)."""
    if not 0 <= tau < T:
        raise ValueError(f"tau={tau} outside [0, {T})")
    if not 1 <= k <= K:
        raise ValueError(f"k={k} outside 1..{K}")
    return ConditionMaps(
        np.full((H, W), tau / T, dtype=np.float32),
        np.full((H, W), k / (K + 1), dtype=np.float32),
    )


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    crop_size: int | None = None
    mask_loss_weight: float = 1.0
    w1_pad: int = 8
    # > 0 adds a patch-discriminator term (ablation only).
    adversarial_weight: float = 0.0
    # random flip / quarter-turn per batch
    augment: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")


@dataclass
class InterpDataset:
    """Stacked samples. ``inputs`` channels: m_a, m_b, s_a, s_b, tau, k;
    ``targets`` channels: magnitude, mask."""

    K: int
    inputs: np.ndarray
    targets: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    index: list[tuple[int, int, int, int]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.inputs)


def roi_crop_box(seg: np.ndarray, size: int) -> tuple[slice, slice]:
    """A ``size`` x ``size`` window centred on the bounding box of all masks."""
    H, W = seg.shape[-2:]
    if size >= H and size >= W:
        return slice(0, H), slice(0, W)
    mask = np.asarray(seg).reshape(-1, H, W).any(axis=0)
    if mask.any():
        rows, cols = np.flatnonzero(mask.any(axis=1)), np.flatnonzero(mask.any(axis=0))
        cy, cx = (rows[0] + rows[-1]) // 2, (cols[0] + cols[-1]) // 2
    else:
        cy, cx = H // 2, W // 2
    r0 = int(np.clip(cy - size // 2, 0, max(H - size, 0)))
    c0 = int(np.clip(cx - size // 2, 0, max(W - size, 0)))
    return slice(r0, r0 + size), slice(c0, c0 + size)


def _sample(mag, seg, tau, k, K, end):
    T, H, W = mag.shape
    cond = make_condition_maps(tau, k, T, K, H, W)
    return np.stack(
        [mag[tau], mag[end], seg[tau].astype(np.float32), seg[end].astype(np.float32),
         cond.tau_map, cond.k_map]
    )


def anchors(T: int, K: int, stride: int | None = None) -> list[int]:
    return list(range(0, T, stride or K + 1))


def build_interp_dataset(
    studies: list[CineStudy], K: int, anchor_stride: int | None = None,
    crop_size: int | None = None, w1_pad: int = 8,
) -> InterpDataset:
    """One sample per (study, anchor tau, k in 1..K).

    Anchors are every (K+1)-th frame unless ``anchor_stride`` is given. The far
    endpoint index wraps periodically.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    xs, ys, w1s, w2s, index = [], [], [], [], []
    for si, st in enumerate(studies):
        mag, seg = np.asarray(st.magnitude), np.asarray(st.seg)
        if crop_size is not None:
            rs, cs = roi_crop_box(seg, crop_size)
            mag, seg = mag[:, rs, cs], seg[:, rs, cs]
        T = mag.shape[0]
        for tau in anchors(T, K, anchor_stride):
            end = wrap_index(tau + K + 1, T)
            for k in range(1, K + 1):
                t = wrap_index(tau + k, T)
                xs.append(_sample(mag, seg, tau, k, K, end))
                ys.append(np.stack([mag[t], seg[t].astype(np.float32)]))
                w1s.append(compute_w1(seg[t], w1_pad).weights)
                w2s.append(compute_w2(mag[t]).weights)
                index.append((si, tau, k, end))
    return InterpDataset(
        K=K,
        inputs=np.asarray(xs, dtype=np.float32),
        targets=np.asarray(ys, dtype=np.float32),
        w1=np.asarray(w1s, dtype=np.float32),
        w2=np.asarray(w2s, dtype=np.float32),
        index=index,
    )


@dataclass
class InterpModel:
    net: InterpNet
    net_cfg: InterpNetConfig
    train_cfg: TrainConfig
    K: int
    history: list[dict] = field(default_factory=list)
    best_epoch: int | None = None

    def save(self, directory) -> None:
        info = {
            "kind": "interp",
            "K": self.K,
            "net_cfg": self.net_cfg.to_json(),
            "train_cfg": asdict(self.train_cfg),
            "history": self.history,
            "best_epoch": self.best_epoch,
        }
        ckpt.save_checkpoint(directory, {"net": self.net}, info)

    @classmethod
    def load(cls, directory) -> "InterpModel":
        info = ckpt.read_manifest(directory)["info"]
        if info.get("kind") != "interp":
            raise ValueError(f"{directory} is not an interpolation checkpoint")
        net_cfg = InterpNetConfig(**info["net_cfg"])
        net = InterpNet(net_cfg)
        ckpt.load_state(directory, {"net": net})
        net.eval()
        return cls(net, net_cfg, TrainConfig(**info["train_cfg"]), info["K"],
                   info["history"], info["best_epoch"])


def init_model(net_cfg: InterpNetConfig, seed: int) -> InterpNet:
    torch.manual_seed(seed)
    return InterpNet(net_cfg)


def _batch_loss(net, x, y, w1, w2, mask_weight):
    m_hat, logits = net(x)
    img = weighted_mae(m_hat, y[:, 0], w1, w2)
    mask = F.binary_cross_entropy_with_logits(logits, y[:, 1])
    return img + mask_weight * mask, img, m_hat


@torch.no_grad()
def evaluate(net: InterpNet, data: InterpDataset, batch_size: int = 64) -> dict:
    """Mean weighted MAE of the magnitude output and mean mask BCE."""
    net.eval()
    sums, n = {"wmae": 0.0, "bce": 0.0}, 0
    for i in range(0, len(data), batch_size):
        x = torch.from_numpy(data.inputs[i : i + batch_size])
        y = torch.from_numpy(data.targets[i : i + batch_size])
        m_hat, logits = net(x)
        w1 = torch.from_numpy(data.w1[i : i + batch_size])
        w2 = torch.from_numpy(data.w2[i : i + batch_size])
        sums["wmae"] += weighted_mae(m_hat, y[:, 0], w1, w2).item() * len(x)
        sums["bce"] += F.binary_cross_entropy_with_logits(logits, y[:, 1]).item() * len(x)
        n += len(x)
    return {k: v / max(n, 1) for k, v in sums.items()}


def _dihedral(tensors, gen):
    """Apply one of the 8 square symmetries to the last two axes of every tensor."""
    code = int(torch.randint(8, (1,), generator=gen))
    out = []
    for t in tensors:
        t = torch.rot90(t, code % 4, dims=(-2, -1))
        out.append(torch.flip(t, dims=(-1,)) if code >= 4 else t)
    return out


def train_interp(
    dataset: InterpDataset,
    net_cfg: InterpNetConfig,
    train_cfg: TrainConfig,
    val_dataset: InterpDataset | None = None,
) -> InterpModel:
    """Adam on weighted MAE + mask BCE; keeps the weights with the lowest
    validation loss (training loss when there is no validation set)."""
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    torch.use_deterministic_algorithms(True)
    net = init_model(net_cfg, train_cfg.seed)
    opt = torch.optim.Adam(net.parameters(), lr=train_cfg.learning_rate)
    disc = d_opt = None
    if train_cfg.adversarial_weight > 0:
        torch.manual_seed(train_cfg.seed + 1)
        disc = PatchDiscriminator(3, base=max(8, net_cfg.base_channels))
        d_opt = torch.optim.Adam(disc.parameters(), lr=train_cfg.learning_rate, betas=(0.5, 0.999))
    gen = torch.Generator().manual_seed(train_cfg.seed)

    X, Y = torch.from_numpy(dataset.inputs), torch.from_numpy(dataset.targets)
    W1, W2 = torch.from_numpy(dataset.w1), torch.from_numpy(dataset.w2)
    history, best, best_state, best_epoch = [], math.inf, None, None
    for epoch in range(1, train_cfg.epochs + 1):
        net.train()
        perm = torch.randperm(len(dataset), generator=gen)
        sums = {"loss": 0.0, "wmae": 0.0, "d_loss": 0.0}
        for i in range(0, len(dataset), train_cfg.batch_size):
            idx = perm[i : i + train_cfg.batch_size]
            if len(idx) < 2:
                continue  # BatchNorm needs more than one sample
            x, y, w1, w2 = X[idx], Y[idx], W1[idx], W2[idx]
            if train_cfg.augment:
                x, y, w1, w2 = _dihedral((x, y, w1, w2), gen)
            loss, img, m_hat = _batch_loss(net, x, y, w1, w2, train_cfg.mask_loss_weight)
            if disc is not None:
                pair = lambda f: torch.cat([x[:, :2], f[:, None]], 1)  # noqa: E731
                d_opt.zero_grad()
                d_loss = 0.5 * (lsgan_loss(disc(pair(y[:, 0])), True)
                                + lsgan_loss(disc(pair(m_hat.detach())), False))
                d_loss.backward()
                d_opt.step()
                sums["d_loss"] += d_loss.item() * len(idx)
                loss = loss + train_cfg.adversarial_weight * lsgan_loss(disc(pair(m_hat)), True)
            if not math.isfinite(loss.item()):
                raise TrainingFailure(
                    "interpolation loss is not finite",
                    {"epoch": epoch, "batch_start": i, "loss": loss.item(),
                     "history": history[-3:]},
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            sums["loss"] += loss.item() * len(idx)
            sums["wmae"] += img.item() * len(idx)
        rec = {"epoch": epoch, **{k: v / len(dataset) for k, v in sums.items()}}
        if disc is None:
            rec.pop("d_loss")
        score = rec["loss"]
        if val_dataset is not None and len(val_dataset):
            val = evaluate(net, val_dataset)
            rec["val_wmae"], rec["val_bce"] = val["wmae"], val["bce"]
            score = val["wmae"] + train_cfg.mask_loss_weight * val["bce"]
        history.append(rec)
        log.info("interp K=%d %s", dataset.K, rec)
        if score < best:
            best, best_epoch = score, epoch
            best_state = copy.deepcopy(net.state_dict())
    net.load_state_dict(best_state)
    net.eval()
    return InterpModel(net, net_cfg, train_cfg, dataset.K, history, best_epoch)


@torch.no_grad()
def interp_forward(model, m_a, m_b, s_a, s_b, cond: ConditionMaps):
    """Single-sample inference; returns ``(m_hat, s_logits)`` as H x W arrays."""
    net = model.net if isinstance(model, InterpModel) else model
    arrays = [np.asarray(a, dtype=np.float32) for a in
              (m_a, m_b, s_a, s_b, cond.tau_map, cond.k_map)]
    if len({a.shape for a in arrays}) != 1:
        raise ValueError("all inputs must share H x W")
    net.eval()
    m_hat, logits = net(torch.from_numpy(np.stack(arrays)[None]))
    return m_hat[0].numpy(), logits[0].numpy()


@torch.no_grad()
def _predict(net, samples: np.ndarray, batch_size: int = 64):
    net.eval()
    mags, logits = [], []
    for i in range(0, len(samples), batch_size):
        m, s = net(torch.from_numpy(samples[i : i + batch_size]))
        mags.append(m.numpy())
        logits.append(s.numpy())
    return np.concatenate(mags), np.concatenate(logits)


def missing_plan(present: np.ndarray, K: int) -> list[list[tuple[int, int, int]]]:
    """Frames to fill as ``(t, tau, k)`` triples, grouped in two passes.

    First pass: gaps whose far endpoint ``tau + K + 1`` is an existing frame.
    Second pass: the short wrap-around gap, whose far endpoint is a frame
    filled during the first pass.
    """
    T = len(present)
    first, second = [], []
    for tau in np.flatnonzero(present):
        end = wrap_index(tau + K + 1, T)
        gap = []
        for k in range(1, K + 1):
            t = wrap_index(tau + k, T)
            if present[t]:
                break
            gap.append((t, int(tau), k))
        if gap:
            (first if present[end] else second).append(gap)
    return [[s for g in first for s in g], [s for g in second for s in g]]


def interpolate_series(model: InterpModel, study: CineStudy, spec: DownsampleSpec) -> CineStudy:
    """Fill every missing frame of a downsampled study.

    Existing frames are copied unchanged; new masks are logits > 0.
    """
    T = study.meta.num_frames
    present = study.present_frames()
    if not np.array_equal(present, spec.kept(T)):
        raise ValueError("present frames do not match the downsample spec")
    if spec.K == 0:
        return study
    if model.K != spec.K:
        raise ValueError(f"model trained for K={model.K}, got K={spec.K}")
    mag = np.array(study.magnitude, copy=True)
    seg = np.array(study.seg, copy=True)
    filled = present.copy()
    for frames in missing_plan(present, spec.K):
        if not frames:
            continue
        samples = []
        for t, tau, k in frames:
            end = wrap_index(tau + spec.K + 1, T)
            if not filled[end]:
                # Degenerate cycle shorter than one gap: use the next existing frame.
                end = next(wrap_index(tau + j, T) for j in range(1, T + 1)
                           if filled[wrap_index(tau + j, T)])
            samples.append(_sample(mag, seg, tau, k, spec.K, end))
        m_hat, logits = _predict(model.net, np.asarray(samples, dtype=np.float32))
        for (t, _, _), m, s in zip(frames, m_hat, logits):
            mag[t] = m
            seg[t] = (s > 0).astype(np.uint8)
            filled[t] = True
    return study.replace(magnitude=mag, seg=seg)
