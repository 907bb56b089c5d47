"""Phase image synthesis from magnitude triplets.

A recurrent-residual UNet generator predicts all three phase directions.
Tissue (foreground) pixels come from the generator and background pixels are
drawn from a Gaussian noise model. Training is pix2pix style against a patch
discriminator with a least-squares objective.
"""
from __future__ import annotations

import copy
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from . import checkpoint as ckpt
from .core import CineStudy, quantize_phase, wrap_index
from .metrics import BACKGROUND_THRESHOLD
from .nets import PatchDiscriminator, PhaseGenerator, R2UNetConfig, lsgan_loss
from .temporal import TrainingFailure

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NoiseModel:
    mu: float = 0.034
    sigma: float = 0.034

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")


@dataclass
class PhaseNetConfig:
    generator: R2UNetConfig = field(default_factory=R2UNetConfig)
    disc_base: int = 32
    disc_blocks: int = 4
    adversarial_weight: float = 1.0
    l1_weight: float = 100.0
    # False trains the plain pix2pix baseline: whole-image L1, no compositing.
    composite: bool = True

    def __post_init__(self):
        if isinstance(self.generator, dict):
            self.generator = R2UNetConfig(**self.generator)
        if self.disc_blocks != 4:
            raise ValueError("the patch discriminator has four blocks")

    @property
    def patch_size(self) -> int:
        return 2**self.disc_blocks

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class PhaseTrainConfig:
    epochs: int = 20
    batch_size: int = 12
    learning_rate: float = 2e-3
    seed: int = 0
    input_size: int | None = None
    betas: tuple[float, float] = (0.5, 0.999)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        self.betas = tuple(self.betas)


def magnitude_triplet(study: CineStudy, t: int) -> np.ndarray:
    """(M[t-1], M[t], M[t+1]) with periodic wrap, shape 3 x H x W."""
    T = study.meta.num_frames
    if not 0 <= t < T:
        raise ValueError(f"t={t} outside [0, {T})")
    m = study.magnitude
    return np.stack([m[wrap_index(t - 1, T)], m[t], m[wrap_index(t + 1, T)]])


def split_foreground(magnitude) -> np.ndarray:
    """1 for tissue (value >= -0.95), 0 for background."""
    return (np.asarray(magnitude, dtype=np.float64) >= BACKGROUND_THRESHOLD).astype(np.uint8)


def _rng(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def sample_background(shape, noise: NoiseModel = NoiseModel(), seed=0) -> np.ndarray:
    """I.i.d. N(mu, sigma^2) draws clamped to [-1, 1]. ``seed`` may be an int
    or a sequence of ints (e.g. ``(seed, t, channel)``)."""
    return np.clip(_rng(seed).normal(noise.mu, noise.sigma, size=shape), -1.0, 1.0)


def _seed_key(seed) -> list[int]:
    return list(seed) if isinstance(seed, (tuple, list)) else [int(seed)]


def composite_phase(generated, magnitude, noise: NoiseModel = NoiseModel(), seed=0) -> np.ndarray:
    """Keep generated phases on foreground pixels; fill background with noise
    drawn independently for each channel."""
    generated = np.asarray(generated, dtype=np.float64)
    fg = split_foreground(magnitude).astype(bool)
    if generated.shape[-2:] != fg.shape:
        raise ValueError("generated phase and magnitude shapes differ")
    out = np.array(generated, copy=True)
    key = _seed_key(seed)
    for c in range(out.shape[0]):
        bg = sample_background(fg.shape, noise, key + [c])
        out[c] = np.where(fg, generated[c], bg)
    return out


@dataclass
class PhaseDataset:
    triplets: np.ndarray  # N x 3 x H x W
    phases: np.ndarray  # N x 3 x H x W
    foreground: np.ndarray  # N x 1 x H x W
    index: list[tuple[int, int]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.triplets)


def build_phase_dataset(studies: list[CineStudy]) -> PhaseDataset:
    """Every frame of every (real) study: triplet -> phases, foreground mask."""
    tr, ph, fg, index = [], [], [], []
    for si, st in enumerate(studies):
        if not st.present_frames().all():
            raise ValueError("phase training needs complete studies")
        for t in range(st.meta.num_frames):
            tr.append(magnitude_triplet(st, t))
            ph.append(st.phases[t])
            fg.append(split_foreground(st.magnitude[t])[None])
            index.append((si, t))
    return PhaseDataset(
        np.asarray(tr, np.float32), np.asarray(ph, np.float32), np.asarray(fg, np.float32), index
    )


def masked_l1(pred, target, mask):
    """Mean |pred - target| over mask pixels (mask broadcast over channels)."""
    m = mask.expand_as(pred)
    return (m * (pred - target).abs()).sum() / m.sum().clamp(min=1.0)


@dataclass
class PhaseModel:
    generator: PhaseGenerator
    discriminator: PatchDiscriminator
    net_cfg: PhaseNetConfig
    train_cfg: PhaseTrainConfig
    history: list[dict] = field(default_factory=list)
    best_epoch: int | None = None

    def save(self, directory) -> None:
        info = {
            "kind": "phase",
            "net_cfg": self.net_cfg.to_json(),
            "train_cfg": asdict(self.train_cfg),
            "history": self.history,
            "best_epoch": self.best_epoch,
        }
        ckpt.save_checkpoint(
            directory, {"generator": self.generator, "discriminator": self.discriminator}, info
        )

    @classmethod
    def load(cls, directory) -> "PhaseModel":
        info = ckpt.read_manifest(directory)["info"]
        if info.get("kind") != "phase":
            raise ValueError(f"{directory} is not a phase checkpoint")
        net_cfg = PhaseNetConfig(**info["net_cfg"])
        gen, disc = _build(net_cfg)
        ckpt.load_state(directory, {"generator": gen, "discriminator": disc})
        gen.eval()
        disc.eval()
        return cls(gen, disc, net_cfg, PhaseTrainConfig(**info["train_cfg"]),
                   info["history"], info["best_epoch"])


def _build(cfg: PhaseNetConfig, seed: int | None = None):
    if seed is not None:
        torch.manual_seed(seed)
    gen = PhaseGenerator(cfg.generator)
    if seed is not None:
        torch.manual_seed(seed + 1)
    disc = PatchDiscriminator(6, cfg.disc_base, cfg.disc_blocks)
    return gen, disc


@torch.no_grad()
def evaluate_l1(gen: PhaseGenerator, data: PhaseDataset, composite: bool = True,
                batch_size: int = 32) -> float:
    gen.eval()
    total, n = 0.0, 0
    for i in range(0, len(data), batch_size):
        x = torch.from_numpy(data.triplets[i : i + batch_size])
        y = torch.from_numpy(data.phases[i : i + batch_size])
        m = torch.from_numpy(data.foreground[i : i + batch_size])
        if not composite:
            m = torch.ones_like(m)
        total += float(masked_l1(gen(x), y, m)) * len(x)
        n += len(x)
    return total / max(n, 1)


def train_phase(
    dataset: PhaseDataset,
    net_cfg: PhaseNetConfig,
    train_cfg: PhaseTrainConfig,
    val_dataset: PhaseDataset | None = None,
    noise: NoiseModel = NoiseModel(),
) -> PhaseModel:
    """Alternating discriminator / generator Adam updates.

    Generator loss: ``l1_weight * L1 + adversarial_weight * LSGAN``. With
    compositing on, L1 covers foreground pixels only and the discriminator
    sees composited fakes (generated tissue, sampled background), both
    conditioned on the magnitude triplet.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    torch.use_deterministic_algorithms(True)
    gen, disc = _build(net_cfg, train_cfg.seed)
    g_opt = torch.optim.Adam(gen.parameters(), lr=train_cfg.learning_rate, betas=train_cfg.betas)
    d_opt = torch.optim.Adam(disc.parameters(), lr=train_cfg.learning_rate, betas=train_cfg.betas)
    order = torch.Generator().manual_seed(train_cfg.seed)
    noise_gen = torch.Generator().manual_seed(train_cfg.seed + 2)

    X = torch.from_numpy(dataset.triplets)
    Y = torch.from_numpy(dataset.phases)
    FG = torch.from_numpy(dataset.foreground)
    history, best, best_state, best_epoch = [], math.inf, None, None
    for epoch in range(1, train_cfg.epochs + 1):
        gen.train()
        disc.train()
        perm = torch.randperm(len(dataset), generator=order)
        sums = {"g_loss": 0.0, "l1": 0.0, "adv": 0.0, "d_loss": 0.0}
        for i in range(0, len(dataset), train_cfg.batch_size):
            idx = perm[i : i + train_cfg.batch_size]
            if len(idx) < 2:
                continue
            x, y, fg = X[idx], Y[idx], FG[idx]
            fake = gen(x)
            if net_cfg.composite:
                bg = noise.mu + noise.sigma * torch.randn(fake.shape, generator=noise_gen)
                fake_seen = fg * fake + (1 - fg) * bg.clamp(-1, 1)
                l1_mask = fg
            else:
                fake_seen = fake
                l1_mask = torch.ones_like(fg)

            d_opt.zero_grad()
            d_loss = 0.5 * (
                lsgan_loss(disc(torch.cat([x, y], 1)), True)
                + lsgan_loss(disc(torch.cat([x, fake_seen.detach()], 1)), False)
            )
            d_loss.backward()
            d_opt.step()

            g_opt.zero_grad()
            adv = lsgan_loss(disc(torch.cat([x, fake_seen], 1)), True)
            l1 = masked_l1(fake, y, l1_mask)
            g_loss = net_cfg.l1_weight * l1 + net_cfg.adversarial_weight * adv
            g_loss.backward()
            g_opt.step()
            if not (math.isfinite(g_loss.item()) and math.isfinite(d_loss.item())):
                raise TrainingFailure(
                    "phase GAN loss is not finite",
                    {"epoch": epoch, "batch_start": i, "g_loss": g_loss.item(),
                     "d_loss": d_loss.item(), "history": history[-3:]},
                )
            n = len(idx)
            sums["g_loss"] += g_loss.item() * n
            sums["l1"] += l1.item() * n
            sums["adv"] += adv.item() * n
            sums["d_loss"] += d_loss.item() * n
        rec = {"epoch": epoch, **{k: v / len(dataset) for k, v in sums.items()}}
        score = rec["l1"]
        if val_dataset is not None and len(val_dataset):
            rec["val_l1"] = score = evaluate_l1(gen, val_dataset, net_cfg.composite)
        history.append(rec)
        log.info("phase %s", rec)
        if score < best:
            best, best_epoch = score, epoch
            best_state = (copy.deepcopy(gen.state_dict()), copy.deepcopy(disc.state_dict()))
    gen.load_state_dict(best_state[0])
    disc.load_state_dict(best_state[1])
    gen.eval()
    disc.eval()
    return PhaseModel(gen, disc, net_cfg, train_cfg, history, best_epoch)


@torch.no_grad()
def generate(model, triplets: np.ndarray, batch_size: int = 32) -> np.ndarray:
    """Raw generator output for N x 3 x H x W triplets."""
    gen = model.generator if isinstance(model, PhaseModel) else model
    gen.eval()
    out = [gen(torch.from_numpy(np.ascontiguousarray(triplets[i : i + batch_size], np.float32))).numpy()
           for i in range(0, len(triplets), batch_size)]
    return np.concatenate(out)


def synthesize_phases(
    model, study: CineStudy, noise: NoiseModel = NoiseModel(), seed: int = 0,
    composite: bool | None = None,
) -> CineStudy:
    """Fill all three phase series of a complete magnitude study.

    ``model`` may be a :class:`PhaseModel` or any callable mapping an
    N x 3 x H x W triplet array to N x 3 x H x W phases. Background noise for
    frame ``t``, channel ``c`` is seeded by ``(seed, t, c)``. Outputs are
    snapped to the 4096-level storage grid.
    """
    if not study.present_frames().all():
        raise ValueError("magnitude series must be complete")
    if composite is None:
        composite = model.net_cfg.composite if isinstance(model, PhaseModel) else True
    T = study.meta.num_frames
    triplets = np.stack([magnitude_triplet(study, t) for t in range(T)])
    if isinstance(model, (PhaseModel, PhaseGenerator)):
        raw = generate(model, triplets)
    else:
        raw = np.asarray(model(triplets))
    out = np.empty((3,) + study.shape, np.float32)
    for t in range(T):
        frame = composite_phase(raw[t], study.magnitude[t], noise, (seed, t)) if composite else raw[t]
        out[:, t] = quantize_phase(np.clip(frame, -1.0, 1.0))
    return study.replace(phase_x=out[0], phase_y=out[1], phase_z=out[2])


def oracle_generator(reference: CineStudy):
    """A stand-in generator returning the reference study's phases; used to
    isolate the compositing and assessment stages."""
    ref = reference.phases

    def gen(triplets):
        if len(triplets) != len(ref):
            raise ValueError("oracle generator expects a full series")
        return ref

    return gen
