"""Recurrent-residual UNet building blocks, the two-stream interpolation
network, the phase generator and the patch discriminator."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

# Logit offset given to a pixel that is inside both endpoint masks.
MASK_SKIP_GAIN = 8.0


@dataclass
class R2UNetConfig:
    base_channels: int = 32
    depth: int = 4
    recurrence_steps: int = 2

    def __post_init__(self):
        if self.depth < 2:
            raise ValueError("depth must be >= 2")
        if self.recurrence_steps < 1:
            raise ValueError("recurrence_steps must be >= 1")

    def to_json(self) -> dict:
        return asdict(self)

    @property
    def channels(self) -> list[int]:
        return [self.base_channels * 2**i for i in range(self.depth)]


@dataclass
class InterpNetConfig(R2UNetConfig):
    # False gives the single-stream baseline: one encoder/decoder on all six
    # input channels and a two-channel output.
    multi_head: bool = True


class RecurrentConv(nn.Module):
    """Conv-BN-ReLU whose output is fed back ``steps - 1`` more times.

    The convolution is shared across steps. Each step keeps its own
    BatchNorm: the inputs ``x`` and ``x + h`` have different statistics, and
    a single set of running averages would fit neither at inference.
    """

    def __init__(self, ch: int, steps: int):
        super().__init__()
        self.steps = steps
        self.conv = nn.Conv2d(ch, ch, 3, padding=1)
        self.norms = nn.ModuleList(nn.BatchNorm2d(ch) for _ in range(steps))

    def forward(self, x):
        h = F.relu(self.norms[0](self.conv(x)))
        for norm in self.norms[1:]:
            h = F.relu(norm(self.conv(x + h)))
        return h


class RRBlock(nn.Module):
    """Recurrent residual unit: 1x1 projection, two recurrent convs, skip add."""

    def __init__(self, in_ch: int, out_ch: int, steps: int):
        super().__init__()
        self.proj = nn.Conv2d(in_ch, out_ch, 1)
        self.body = nn.Sequential(RecurrentConv(out_ch, steps), RecurrentConv(out_ch, steps))

    def forward(self, x):
        x = self.proj(x)
        return x + self.body(x)


class Encoder(nn.Module):
    def __init__(self, in_ch: int, channels: list[int], steps: int):
        super().__init__()
        chans = [in_ch] + channels
        self.blocks = nn.ModuleList(
            RRBlock(chans[i], chans[i + 1], steps) for i in range(len(channels))
        )

    def forward(self, x):
        feats = []
        for i, block in enumerate(self.blocks):
            if i:
                x = F.max_pool2d(x, 2)
            x = block(x)
            feats.append(x)
        return feats


class Decoder(nn.Module):
    def __init__(self, channels: list[int], out_ch: int, steps: int):
        super().__init__()
        n = len(channels)
        self.ups = nn.ModuleList(
            nn.ConvTranspose2d(channels[i + 1], channels[i], 2, stride=2) for i in range(n - 1)
        )
        self.blocks = nn.ModuleList(
            RRBlock(2 * channels[i], channels[i], steps) for i in range(n - 1)
        )
        self.out = nn.Conv2d(channels[0], out_ch, 1)

    def forward(self, x, skips):
        for i in reversed(range(len(self.ups))):
            x = self.ups[i](x)
            x = self.blocks[i](torch.cat([skips[i], x], dim=1))
        return self.out(x)


class R2UNet(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, cfg: R2UNetConfig):
        super().__init__()
        self.encoder = Encoder(in_ch, cfg.channels, cfg.recurrence_steps)
        self.decoder = Decoder(cfg.channels, out_ch, cfg.recurrence_steps)

    def forward(self, x):
        feats = self.encoder(x)
        return self.decoder(feats[-1], feats)


class InterpNet(nn.Module):
    """Interpolates one magnitude frame and its mask logits.

    Input tensor channels: ``m_a, m_b, s_a, s_b, tau_map, k_map``. The
    magnitude output is the linear blend of the endpoints plus a learned
    residual, clamped to [-1, 1]. The mask logits get the same kind of skip:
    the blended endpoint masks, centred on 0.5 and scaled.
    """

    def __init__(self, cfg: InterpNetConfig):
        super().__init__()
        self.cfg = cfg
        ch, steps = cfg.channels, cfg.recurrence_steps
        if cfg.multi_head:
            self.enc_mag = Encoder(4, ch, steps)
            self.enc_mask = Encoder(4, ch, steps)
            self.fuse = RRBlock(2 * ch[-1], ch[-1], steps)
            self.dec_mag = Decoder(ch, 1, steps)
            self.dec_mask = Decoder(ch, 1, steps)
        else:
            self.unet = R2UNet(6, 2, cfg)

    def forward(self, x):
        m_a, m_b, s_a, s_b, tau, k = x.unbind(dim=1)
        if self.cfg.multi_head:
            cond = torch.stack([tau, k], dim=1)
            fm = self.enc_mag(torch.cat([torch.stack([m_a, m_b], 1), cond], 1))
            fs = self.enc_mask(torch.cat([torch.stack([s_a, s_b], 1), cond], 1))
            z = self.fuse(torch.cat([fm[-1], fs[-1]], 1))
            res = self.dec_mag(z, fm)[:, 0]
            logits = self.dec_mask(z, fs)[:, 0]
        else:
            out = self.unet(x)
            res, logits = out[:, 0], out[:, 1]
        lerp = (1.0 - k) * m_a + k * m_b
        mask_lerp = (1.0 - k) * s_a + k * s_b
        logits = logits + MASK_SKIP_GAIN * (mask_lerp - 0.5)
        return torch.clamp(lerp + res, -1.0, 1.0), logits


class PhaseGenerator(nn.Module):
    """Magnitude triplet (3 ch) -> three phase channels in (-1, 1)."""

    def __init__(self, cfg: R2UNetConfig, out_ch: int = 3):
        super().__init__()
        self.unet = R2UNet(3, out_ch, cfg)

    def forward(self, x):
        return torch.tanh(self.unet(x))


class PatchDiscriminator(nn.Module):
    """Four stride-2 conv blocks then a 1-channel score map.

    Each output cell scores one 16x16 tile of the input, so the map is
    ``H/16 x W/16``.
    """

    def __init__(self, in_ch: int, base: int = 32, n_blocks: int = 4):
        super().__init__()
        layers, c = [], in_ch
        for i in range(n_blocks):
            out = base * 2 ** min(i, 3)
            layers.append(nn.Conv2d(c, out, 4, stride=2, padding=1))
            if i:
                layers.append(nn.BatchNorm2d(out))
            layers.append(nn.LeakyReLU(0.2))
            c = out
        layers.append(nn.Conv2d(c, 1, 3, padding=1))
        self.model = nn.Sequential(*layers)
        self.patch = 2**n_blocks

    def forward(self, x):
        return self.model(x)


def lsgan_loss(scores: torch.Tensor, real: bool) -> torch.Tensor:
    target = 1.0 if real else 0.0
    return ((scores - target) ** 2).mean()


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
