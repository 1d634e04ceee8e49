"""Image-to-image translation generators.

Two configurations share one skeleton:

* the attention generator: 7x7 entry conv, two stride-2 5x5 downsampling
  convs, four residual blocks, a gated residual self-attention block at the
  bottleneck, two nearest-neighbor upsampling stages and a 7x7 tanh head;
* the 9-block baseline generator used by CUT/FastCUT/Cycle-GAN: same layout
  with 3x3 sampling convs, nine residual blocks and no attention.

Feature taps for contrastive learning address stages by index, stage 0 being
the input image itself.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, asdict

import torch
from torch import nn

from .blocks import ResidualSelfAttention, ResnetBlock, init_gan_weights


@dataclass
class GeneratorConfig:
    in_channels: int = 4
    base_width: int = 64
    bottleneck_width: int = 240
    n_resnet_blocks: int = 4
    # residual attention blocks are inserted after these (1-based) resnet
    # block positions; the default is one block at the bottleneck
    attention_placements: tuple[int, ...] = (4,)
    first_last_kernel: int = 7
    resample_kernel: int = 5
    block_kernel: int = 3
    attention_qk_kernel: int = 3
    tap_layers: tuple[int, ...] = (0, 1, 3, 5, 8)

    def __post_init__(self):
        for pos in self.attention_placements:
            if not 0 <= pos <= self.n_resnet_blocks:
                raise ValueError(
                    f"attention placement {pos} outside 0..{self.n_resnet_blocks}"
                )

    @classmethod
    def attention_default(cls, **overrides) -> "GeneratorConfig":
        return cls(**overrides)

    @classmethod
    def baseline_default(cls, **overrides) -> "GeneratorConfig":
        """9-block generator without attention, as used by the baselines."""
        params = dict(
            bottleneck_width=256,
            n_resnet_blocks=9,
            attention_placements=(),
            resample_kernel=3,
            tap_layers=(0, 1, 3, 7, 12),
        )
        params.update(overrides)
        return cls(**params)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        d = dict(d)
        d["tap_layers"] = tuple(d["tap_layers"])
        d["attention_placements"] = tuple(d["attention_placements"])
        return cls(**d)


def _conv_norm_relu(in_ch, out_ch, kernel, stride=1):
    return nn.Sequential(
        nn.Conv2d(
            in_ch, out_ch, kernel,
            stride=stride, padding=kernel // 2,
            padding_mode="reflect" if stride == 1 else "zeros",
        ),
        nn.InstanceNorm2d(out_ch),
        nn.ReLU(inplace=True),
    )


class _Upsample(nn.Module):
    def __init__(self, in_ch, out_ch, kernel):
        super().__init__()
        self.conv = _conv_norm_relu(in_ch, out_ch, kernel)

    def forward(self, x):
        return self.conv(nn.functional.interpolate(x, scale_factor=2, mode="nearest"))


class TranslationGenerator(nn.Module):
    """Fully convolutional generator mapping [-1, 1] tiles to [-1, 1] tiles."""

    def __init__(self, config: GeneratorConfig | None = None):
        super().__init__()
        cfg = config or GeneratorConfig()
        self.config = cfg
        w, b = cfg.base_width, cfg.bottleneck_width

        stages: list[nn.Module] = [nn.Identity()]  # stage 0: the input image
        stages.append(_conv_norm_relu(cfg.in_channels, w, cfg.first_last_kernel))
        stages.append(_conv_norm_relu(w, 2 * w, cfg.resample_kernel, stride=2))
        stages.append(_conv_norm_relu(2 * w, b, cfg.resample_kernel, stride=2))
        for block_pos in range(cfg.n_resnet_blocks + 1):
            if block_pos > 0:
                stages.append(ResnetBlock(b, cfg.block_kernel))
            for _ in range(cfg.attention_placements.count(block_pos)):
                stages.append(ResidualSelfAttention(b, cfg.attention_qk_kernel))
        stages.append(_Upsample(b, 2 * w, cfg.resample_kernel))
        stages.append(_Upsample(2 * w, w, cfg.resample_kernel))
        stages.append(
            nn.Sequential(
                nn.Conv2d(
                    w, cfg.in_channels, cfg.first_last_kernel,
                    padding=cfg.first_last_kernel // 2, padding_mode="reflect",
                ),
                nn.Tanh(),
            )
        )
        self.stages = nn.ModuleList(stages)
        if max(cfg.tap_layers) >= len(stages) or min(cfg.tap_layers) < 0:
            raise ValueError(
                f"tap layer out of range: {cfg.tap_layers} for {len(stages)} stages"
            )
        init_gan_weights(self)

    @property
    def n_stages(self) -> int:
        return len(self.stages)

    def forward(self, x: torch.Tensor, return_taps: bool = False):
        if x.abs().max() > 1.5:
            warnings.warn(
                "generator input exceeds [-1.5, 1.5]; did you forget to normalize?"
            )
        taps = {}
        out = x
        for idx, stage in enumerate(self.stages):
            out = stage(out)
            if return_taps and idx in self.config.tap_layers:
                taps[idx] = out
        if return_taps:
            return out, [taps[i] for i in self.config.tap_layers]
        return out

    def extract_features(self, x: torch.Tensor) -> list[torch.Tensor]:
        """Feature maps at the configured tap layers from one forward pass."""
        _, feats = self.forward(x, return_taps=True)
        return feats

    def tap_widths(self) -> list[int]:
        """Channel count at each tap layer, probed with a dummy forward."""
        dummy = torch.zeros(1, self.config.in_channels, 32, 32)
        was_training = self.training
        self.eval()
        with torch.no_grad():
            feats = self.extract_features(dummy)
        self.train(was_training)
        return [f.shape[1] for f in feats]

    def count_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters() if p.requires_grad)
