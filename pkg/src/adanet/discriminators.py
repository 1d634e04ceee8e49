"""Real/fake discriminators: PatchGAN, PixelGAN, StyleGAN2-style and its
tiled variant, all trained with the least-squares objective.

Decision outputs are 2-D masks (patch and pixel discriminators), scalars
(style discriminator) or a mask of per-tile scalars (tiled variant).
"""
from __future__ import annotations

from dataclasses import dataclass, asdict

import torch
from torch import nn
import torch.nn.functional as F

from .blocks import init_gan_weights

KINDS = ("patchgan", "pixelgan", "stylegan2", "tile_stylegan2")


@dataclass
class DiscriminatorConfig:
    kind: str = "patchgan"
    in_channels: int = 4
    # patchgan: six 4x4 convs; entry width halved against the classic layout
    # to meet the parameter budget, doubling at every layer after.
    patch_widths: tuple[int, ...] = (32, 64, 128, 256, 512)
    pixel_widths: tuple[int, ...] = (64, 128)
    style_widths: tuple[int, ...] = (64, 128, 128, 256, 256, 512, 512)
    tile_size: int = 64
    tile_stride: int = 32

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown discriminator kind {self.kind!r}; use one of {KINDS}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DiscriminatorConfig":
        d = dict(d)
        for key in ("patch_widths", "pixel_widths", "style_widths"):
            d[key] = tuple(d[key])
        return cls(**d)


class PatchDiscriminator(nn.Module):
    """Six 4x4 convs; stride 2 on the first three, stride 1 after.

    The first stride-1 conv keeps its spatial size via asymmetric padding, the
    remaining two shrink by one pixel each: a 256px input yields a 30x30 mask.
    """

    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        w = cfg.patch_widths
        layers: list[nn.Module] = [
            nn.Conv2d(cfg.in_channels, w[0], 4, stride=2, padding=1),
            nn.LeakyReLU(0.2, inplace=True),
        ]
        for i in (1, 2):
            layers += [
                nn.Conv2d(w[i - 1], w[i], 4, stride=2, padding=1),
                nn.InstanceNorm2d(w[i]),
                nn.LeakyReLU(0.2, inplace=True),
            ]
        layers += [
            nn.ZeroPad2d((1, 2, 1, 2)),
            nn.Conv2d(w[2], w[3], 4, stride=1, padding=0),
            nn.InstanceNorm2d(w[3]),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(w[3], w[4], 4, stride=1, padding=1),
            nn.InstanceNorm2d(w[4]),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(w[4], 1, 4, stride=1, padding=1),
        ]
        self.net = nn.Sequential(*layers)

    def forward(self, x):
        return self.net(x)


class PixelDiscriminator(nn.Module):
    """Three 1x1 convs giving a per-pixel decision at full resolution."""

    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        w = cfg.pixel_widths
        self.net = nn.Sequential(
            nn.Conv2d(cfg.in_channels, w[0], 1),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(w[0], w[1], 1),
            nn.InstanceNorm2d(w[1]),
            nn.LeakyReLU(0.2, inplace=True),
            nn.Conv2d(w[1], 1, 1),
        )

    def forward(self, x):
        return self.net(x)


class ModulatedConv2d(nn.Module):
    """Conv whose weight is scaled by a learned style scalar then demodulated
    by the per-output-channel weight norm."""

    def __init__(self, in_ch, out_ch, kernel=3):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_ch, in_ch, kernel, kernel) * 0.02)
        self.bias = nn.Parameter(torch.zeros(out_ch))
        self.style = nn.Parameter(torch.ones(()))
        self.padding = kernel // 2

    def forward(self, x):
        w = self.weight * self.style
        demod = torch.rsqrt(w.pow(2).sum(dim=(1, 2, 3), keepdim=True) + 1e-8)
        return F.conv2d(x, w * demod, self.bias, padding=self.padding)


class _StyleResBlock(nn.Module):
    """Two modulated 3x3 convs plus a 1x1 skip, downsampling by 2."""

    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.conv1 = ModulatedConv2d(in_ch, in_ch)
        self.conv2 = ModulatedConv2d(in_ch, out_ch)
        self.skip = nn.Conv2d(in_ch, out_ch, 1, bias=False)

    def forward(self, x):
        y = F.leaky_relu(self.conv1(x), 0.2)
        y = F.leaky_relu(self.conv2(y), 0.2)
        y = F.avg_pool2d(y, 2)
        s = F.avg_pool2d(self.skip(x), 2)
        return (y + s) / 2 ** 0.5


class StyleDiscriminator(nn.Module):
    """Twenty conv layers in six residual blocks plus entry/exit convs, ending
    in two linear layers that emit one real/fake scalar per image."""

    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        w = cfg.style_widths
        self.entry = nn.Conv2d(cfg.in_channels, w[0], 3, padding=1)
        self.blocks = nn.Sequential(
            *[_StyleResBlock(w[i], w[i + 1]) for i in range(6)]
        )
        self.exit = ModulatedConv2d(w[6], w[6])
        self.fc1 = nn.Linear(w[6], w[6])
        self.fc2 = nn.Linear(w[6], 1)

    def forward(self, x):
        y = F.leaky_relu(self.entry(x), 0.2)
        y = self.blocks(y)
        y = F.leaky_relu(self.exit(y), 0.2)
        y = F.adaptive_avg_pool2d(y, 1).flatten(1)
        y = F.leaky_relu(self.fc1(y), 0.2)
        return self.fc2(y).reshape(-1, 1, 1, 1)


class TileStyleDiscriminator(nn.Module):
    """Style discriminator applied to overlapped tiles; one scalar per tile,
    assembled into a decision mask."""

    def __init__(self, cfg: DiscriminatorConfig):
        super().__init__()
        self.tile = cfg.tile_size
        self.stride = cfg.tile_stride
        self.net = StyleDiscriminator(cfg)

    def forward(self, x):
        b, c, h, w = x.shape
        if h < self.tile or w < self.tile:
            raise ValueError(f"input {h}x{w} smaller than tile size {self.tile}")
        patches = x.unfold(2, self.tile, self.stride).unfold(3, self.tile, self.stride)
        nh, nw = patches.shape[2], patches.shape[3]
        patches = patches.permute(0, 2, 3, 1, 4, 5).reshape(-1, c, self.tile, self.tile)
        scores = self.net(patches).reshape(b, nh, nw)
        return scores.unsqueeze(1)


_BUILDERS = {
    "patchgan": PatchDiscriminator,
    "pixelgan": PixelDiscriminator,
    "stylegan2": StyleDiscriminator,
    "tile_stylegan2": TileStyleDiscriminator,
}


def build_discriminator(cfg: DiscriminatorConfig) -> nn.Module:
    net = _BUILDERS[cfg.kind](cfg)
    if cfg.kind in ("patchgan", "pixelgan"):
        init_gan_weights(net)
    return net


def discriminate(net: nn.Module, img: torch.Tensor) -> torch.Tensor:
    if img.shape[1] != 4:
        raise ValueError(f"expected 4-channel input, got {img.shape[1]} channels")
    return net(img)


def discriminator_loss(
    disc: nn.Module, x: torch.Tensor, y: torch.Tensor, gen: nn.Module
) -> torch.Tensor:
    """Least-squares loss ||D(y) - 1||^2 + ||D(G(x))||^2, mean-reduced over
    mask elements and batch. The generator receives no gradient."""
    with torch.no_grad():
        fake = gen(x)
    return discriminator_loss_on(disc, y, fake)


def discriminator_loss_on(disc: nn.Module, real: torch.Tensor, fake: torch.Tensor) -> torch.Tensor:
    d_real = disc(real)
    d_fake = disc(fake.detach())
    return (d_real - 1.0).pow(2).mean() + d_fake.pow(2).mean()
