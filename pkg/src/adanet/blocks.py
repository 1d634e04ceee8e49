"""Generator building blocks: convolutional projection, gated self-attention
and residual convolution blocks."""
from __future__ import annotations

import math

import torch
from torch import nn


class ConvProjection(nn.Module):
    """Produce a feature map by summing per-channel 2-D convolutions.

    Output channel j is sum_i conv2d(S_i, w_ij) + b_j with same padding, so
    the spatial extent is preserved. Kernel size must be odd.
    """

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3):
        super().__init__()
        if kernel_size % 2 != 1:
            raise ValueError(f"kernel size must be odd, got {kernel_size}")
        self.conv = nn.Conv2d(
            in_channels, out_channels, kernel_size, padding=kernel_size // 2
        )

    def forward(self, s: torch.Tensor) -> torch.Tensor:
        if s.shape[-3] != self.conv.in_channels:
            raise ValueError(
                f"expected {self.conv.in_channels} input channels, got {s.shape[-3]}"
            )
        return self.conv(s)


def scaled_dot_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """Scaled dot-product attention over flattened spatial positions.

    q, k: (B, d_q, H, W); v: (B, d_v, H, W). Returns (B, d_v, H, W) where each
    output position is the softmax(QK^T / sqrt(d_q))-weighted mix of V rows.
    """
    b, d_q, h, w = q.shape
    if d_q == 0:
        raise ValueError("query dimension d_q must be positive")
    if k.shape[1] != d_q:
        raise ValueError("Q and K must share the key dimension")
    if k.shape[2:] != (h, w) or v.shape[2:] != (h, w):
        raise ValueError("Q, K, V spatial extents must agree")
    ql = q.flatten(2).transpose(1, 2)  # (B, L, d_q)
    kl = k.flatten(2).transpose(1, 2)
    vl = v.flatten(2).transpose(1, 2)  # (B, L, d_v)
    logits = ql @ kl.transpose(1, 2) / math.sqrt(d_q)
    if not torch.isfinite(logits).all():
        raise FloatingPointError(
            f"non-finite attention logits (max |q|={q.abs().max():.3e}, "
            f"max |k|={k.abs().max():.3e})"
        )
    attn = torch.softmax(logits, dim=-1)
    out = attn @ vl  # (B, L, d_v)
    return out.transpose(1, 2).reshape(b, v.shape[1], h, w)


class ResidualSelfAttention(nn.Module):
    """Self-attention branch blended into a skip connection by a learnable
    scalar gate, initialized to 0 so the block starts as the identity map.

    Q and K come from spatial convolutional projections; V stays pointwise to
    keep the value pathway cheap.
    """

    def __init__(self, channels: int, qk_kernel: int = 3, key_dim: int | None = None):
        super().__init__()
        self.key_dim = key_dim if key_dim is not None else max(1, channels // 8)
        self.query = ConvProjection(channels, self.key_dim, qk_kernel)
        self.key = ConvProjection(channels, self.key_dim, qk_kernel)
        self.value = ConvProjection(channels, channels, 1)
        self.alpha = nn.Parameter(torch.zeros(()))

    def forward(self, s: torch.Tensor) -> torch.Tensor:
        attended = scaled_dot_attention(self.query(s), self.key(s), self.value(s))
        return self.alpha * attended + s


class ResnetBlock(nn.Module):
    """Two conv + instance-norm stages with a skip connection; shape preserved."""

    def __init__(self, channels: int, kernel_size: int = 3):
        super().__init__()
        pad = kernel_size // 2
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, kernel_size, padding=pad, padding_mode="reflect"),
            nn.InstanceNorm2d(channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, kernel_size, padding=pad, padding_mode="reflect"),
            nn.InstanceNorm2d(channels),
        )

    def forward(self, s: torch.Tensor) -> torch.Tensor:
        return s + self.body(s)


def init_gan_weights(module: nn.Module, std: float = 0.02) -> None:
    """Normal(0, std) init for conv and linear weights, zeros for biases."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            nn.init.normal_(m.weight, 0.0, std)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
