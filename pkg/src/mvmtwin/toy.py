"""Controlled plain-loss vs adversarial-loss comparison on synthetic circles.

Two paired tasks share the same inputs (four coloured, non-overlapping
circles on a noisy background):

* ``shape``: the target enlarges every circle by ``scale``.
* ``texture``: the target fills every circle with a stripe texture.

Both models use the same generator, seed and data; the adversarial model
adds a patch-discriminator term to the MSE objective.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from .nets import PatchDiscriminator, R2UNet, R2UNetConfig, lsgan_loss

TASKS = ("shape", "texture")


@dataclass(frozen=True)
class Circle:
    cx: float
    cy: float
    r: float
    color: tuple[float, float, float]


@dataclass
class CircleSample:
    input: np.ndarray  # 3 x H x W in [-1, 1]
    target: np.ndarray
    task: str
    circles: list[Circle]
    target_circles: list[Circle]


@dataclass
class ToyConfig:
    size: int = 32
    n_train: int = 600
    n_test: int = 200
    scale: float = 1.5
    stripe_period: float = 3.0
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    adversarial_weight: float = 0.1
    generator: R2UNetConfig = field(default_factory=lambda: R2UNetConfig(8, 3, 2))
    disc_base: int = 16
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.generator, dict):
            self.generator = R2UNetConfig(**self.generator)


def _place_circles(rng, size: int, scale: float, n: int = 4, tries: int = 2000) -> list[Circle]:
    circles: list[Circle] = []
    for _ in range(tries):
        if len(circles) == n:
            break
        r = rng.uniform(2.0, 3.5)
        margin = r * scale + 1.0
        cx, cy = rng.uniform(margin, size - 1 - margin, size=2)
        # Non-overlap must hold after enlargement too.
        if all(math.hypot(cx - c.cx, cy - c.cy) > scale * (r + c.r) + 1.0 for c in circles):
            color = tuple(float(v) for v in rng.uniform(-0.2, 1.0, size=3))
            circles.append(Circle(float(cx), float(cy), float(r), color))
    if len(circles) < n:
        raise RuntimeError("could not place non-overlapping circles")
    return circles


def _render(background: np.ndarray, circles: list[Circle], texture: float | None = None) -> np.ndarray:
    img = np.array(background, copy=True)
    _, H, W = img.shape
    yy, xx = np.mgrid[0:H, 0:W].astype(np.float64)
    for c in circles:
        inside = np.hypot(xx - c.cx, yy - c.cy) <= c.r
        for ch in range(3):
            value = c.color[ch]
            if texture is not None:
                stripes = 0.5 + 0.5 * np.cos(2 * math.pi * (xx + yy) / texture)
                value = -1.0 + (value + 1.0) * stripes
            img[ch][inside] = value if np.isscalar(value) else value[inside]
    return np.clip(img, -1.0, 1.0)


def gen_circles(task: str, n: int, seed: int, cfg: ToyConfig | None = None) -> list[CircleSample]:
    if task not in TASKS:
        raise ValueError(f"task must be one of {TASKS}")
    if n < 1:
        raise ValueError("n must be >= 1")
    cfg = cfg or ToyConfig()
    rng = np.random.default_rng([seed, TASKS.index(task)])
    out = []
    for _ in range(n):
        circles = _place_circles(rng, cfg.size, cfg.scale)
        bg = np.clip(rng.normal(-0.6, 0.15, size=(3, cfg.size, cfg.size)), -1.0, 1.0)
        x = _render(bg, circles)
        if task == "shape":
            tc = [Circle(c.cx, c.cy, c.r * cfg.scale, c.color) for c in circles]
            y = _render(bg, tc)
        else:
            tc = list(circles)
            y = _render(bg, tc, texture=cfg.stripe_period)
        out.append(CircleSample(x.astype(np.float32), y.astype(np.float32), task, circles, tc))
    return out


def _stack(samples):
    return (torch.from_numpy(np.stack([s.input for s in samples])),
            torch.from_numpy(np.stack([s.target for s in samples])))


def train_toy_model(samples: list[CircleSample], cfg: ToyConfig, adversarial_weight: float = 0.0,
                    discriminator: bool = False):
    """MSE-trained generator; with ``discriminator`` an LSGAN term weighted by
    ``adversarial_weight`` is added. The discriminator has its own seed and
    the batch order its own generator, so a zero weight reproduces the plain
    model exactly.
    """
    torch.use_deterministic_algorithms(True)
    torch.manual_seed(cfg.seed)
    gen = torch.nn.Sequential(R2UNet(3, 3, cfg.generator), torch.nn.Tanh())
    torch.manual_seed(cfg.seed + 1)
    disc = PatchDiscriminator(6, cfg.disc_base, 4) if discriminator else None
    g_opt = torch.optim.Adam(gen.parameters(), lr=cfg.learning_rate)
    d_opt = torch.optim.Adam(disc.parameters(), lr=cfg.learning_rate, betas=(0.5, 0.999)) if disc else None
    order = torch.Generator().manual_seed(cfg.seed)
    X, Y = _stack(samples)
    for _ in range(cfg.epochs):
        gen.train()
        perm = torch.randperm(len(X), generator=order)
        for i in range(0, len(X), cfg.batch_size):
            idx = perm[i : i + cfg.batch_size]
            if len(idx) < 2:
                continue
            x, y = X[idx], Y[idx]
            fake = gen(x)
            loss = ((fake - y) ** 2).mean()
            if disc is not None:
                d_opt.zero_grad()
                d_loss = 0.5 * (lsgan_loss(disc(torch.cat([x, y], 1)), True)
                                + lsgan_loss(disc(torch.cat([x, fake.detach()], 1)), False))
                d_loss.backward()
                d_opt.step()
                loss = loss + adversarial_weight * lsgan_loss(disc(torch.cat([x, fake], 1)), True)
            g_opt.zero_grad()
            loss.backward()
            g_opt.step()
    gen.eval()
    return gen


@torch.no_grad()
def _predict(gen, samples) -> np.ndarray:
    X, _ = _stack(samples)
    return np.concatenate([gen(X[i : i + 64]).numpy() for i in range(0, len(X), 64)])


def _summary(pred: np.ndarray, target: np.ndarray) -> dict:
    per_image = ((pred - target) ** 2).reshape(len(pred), -1).mean(axis=1)
    group = float(np.sqrt(((pred.mean(axis=0) - target.mean(axis=0)) ** 2).mean()))
    return {
        "per_image_mse": [float(v) for v in per_image],
        "mse_mean": float(per_image.mean()),
        "mse_std": float(per_image.std()),
        "group_mean_distance": group,
    }


def run_toy_comparison(task: str, cfg: ToyConfig | None = None,
                       adversarial_weight: float | None = None) -> dict:
    """Train both models on one split and report per-image MSE and the
    distance between the mean predicted image and the mean target image."""
    cfg = cfg or ToyConfig()
    w = cfg.adversarial_weight if adversarial_weight is None else adversarial_weight
    train = gen_circles(task, cfg.n_train, cfg.seed, cfg)
    test = gen_circles(task, cfg.n_test, cfg.seed + 10_000, cfg)
    target = np.stack([s.target for s in test])
    plain = train_toy_model(train, cfg)
    adv = train_toy_model(train, cfg, w, discriminator=True)
    cfg_json = asdict(cfg)
    cfg_json["adversarial_weight"] = w
    return {
        "task": task,
        "config": cfg_json,
        "plain": _summary(_predict(plain, test), target),
        "adversarial": _summary(_predict(adv, test), target),
    }
