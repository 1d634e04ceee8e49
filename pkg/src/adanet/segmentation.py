"""Segmentation scoring and the zero-shot evaluation protocol.

Confusion counts are summed over every pixel of a split and the seven
metrics are computed once from the totals (micro-averaging). The reference
segmenter is a small U-Net standing in for an externally trained model; any
callable satisfying SegmenterHandle plugs in instead.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .data import Domain, ImageTile, SegMask


@dataclass
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.tn + other.tn, self.fp + other.fp, self.fn + other.fn
        )


def confusion(pred: SegMask | np.ndarray, truth: SegMask | np.ndarray) -> ConfusionCounts:
    p = pred.labels if isinstance(pred, SegMask) else np.asarray(pred)
    t = truth.labels if isinstance(truth, SegMask) else np.asarray(truth)
    if p.shape != t.shape:
        raise ValueError(f"mask shape mismatch: {p.shape} vs {t.shape}")
    p = p.astype(bool)
    t = t.astype(bool)
    return ConfusionCounts(
        tp=int(np.sum(p & t)),
        tn=int(np.sum(~p & ~t)),
        fp=int(np.sum(p & ~t)),
        fn=int(np.sum(~p & t)),
    )


@dataclass
class MetricReport:
    dice: float
    f2: float
    iou: float
    accuracy: float
    precision: float
    specificity: float
    sensitivity: float
    counts: ConfusionCounts

    def to_dict(self) -> dict:
        return {
            "dice": self.dice,
            "f2": self.f2,
            "iou": self.iou,
            "accuracy": self.accuracy,
            "precision": self.precision,
            "specificity": self.specificity,
            "sensitivity": self.sensitivity,
            "counts": {
                "tp": self.counts.tp,
                "tn": self.counts.tn,
                "fp": self.counts.fp,
                "fn": self.counts.fn,
            },
        }


def _ratio(num: int, den: int, empty_value: float) -> float:
    return num / den if den > 0 else empty_value

def metrics(c: ConfusionCounts) -> MetricReport:
    """Seven segmentation metrics from pixel confusion counts.

    When truth and prediction are both empty the overlap metrics score 1
    (a correct all-negative prediction); any other vanishing denominator
    scores 0.
    """
    both_empty = (c.tp + c.fn == 0) and (c.tp + c.fp == 0)
    empty = 1.0 if both_empty else 0.0
    dice = _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, empty)
    iou = _ratio(c.tp, c.tp + c.fp + c.fn, empty)
    precision = _ratio(c.tp, c.tp + c.fp, empty)
    sensitivity = _ratio(c.tp, c.tp + c.fn, empty)
    specificity = _ratio(c.tn, c.tn + c.fp, 1.0 if c.tn + c.fp == 0 else 0.0)
    accuracy = _ratio(c.tp + c.tn, c.total, 1.0)
    f2 = f_score(precision, sensitivity, a=2.0, empty_value=empty)
    return MetricReport(
        dice=dice, f2=f2, iou=iou, accuracy=accuracy,
        precision=precision, specificity=specificity, sensitivity=sensitivity,
        counts=c,
    )


def f_score(precision: float, sensitivity: float, a: float = 2.0, empty_value: float = 0.0) -> float:
    den = a * a * precision + sensitivity
    if den == 0:
        return empty_value
    return (1 + a * a) * precision * sensitivity / den


# ---------------------------------------------------------------------------
# Pluggable segmenter interface


@dataclass
class SegmenterHandle:
    """Opaque probability-map segmenter plus its binarization threshold.

    ``predict`` maps a normalized (H, W, C) tile to per-pixel foreground
    probabilities in [0, 1]. ``trained_on`` records the provenance the
    zero-shot protocol asserts on.
    """

    predict: Callable[[np.ndarray], np.ndarray]
    threshold: float = 0.5
    trained_on: str = Domain.TARGET.value
    net: nn.Module | None = None  # backing network, when there is one

    def segment(self, tile: ImageTile | np.ndarray) -> SegMask:
        pixels = tile.pixels if isinstance(tile, ImageTile) else np.asarray(tile)
        probs = np.asarray(self.predict(pixels))
        if probs.shape != pixels.shape[:2]:
            raise ValueError(
                f"segmenter output {probs.shape} does not match tile {pixels.shape[:2]}"
            )
        if probs.min() < 0 or probs.max() > 1:
            raise ValueError("segmenter probabilities must lie in [0, 1]")
        return SegMask((probs >= self.threshold).astype(np.uint8))


def zero_shot_evaluate(
    adaptor,
    segmenter: SegmenterHandle,
    dataset: list[tuple[ImageTile, SegMask]],
    prediction_sink=None,
) -> MetricReport:
    """Segment (optionally domain-adapted) tiles with a model trained only on
    the target domain; aggregate counts over all pixels, then score once.

    ``adaptor`` is a callable mapping a normalized (H, W, C) tile array to a
    same-shaped array (usually a trained generator), or None for the
    no-adaptation baseline. ``prediction_sink(index, mask)`` receives every
    predicted mask when given (used to persist predictions).
    """
    if not dataset:
        raise ValueError("empty evaluation dataset")
    if segmenter.trained_on != Domain.TARGET.value:
        raise ValueError(
            "zero-shot protocol requires a segmenter trained on the target domain, "
            f"got provenance {segmenter.trained_on!r}"
        )
    totals = ConfusionCounts()
    for index, (tile, mask) in enumerate(dataset):
        if mask is None:
            raise ValueError("every evaluation tile needs a ground-truth mask")
        pixels = tile.pixels if isinstance(tile, ImageTile) else np.asarray(tile)
        if adaptor is not None:
            adapted = np.asarray(adaptor(pixels))
            if adapted.shape != pixels.shape:
                raise ValueError(
                    f"adaptor output {adapted.shape} does not match tile {pixels.shape}"
                )
            pixels = adapted
        predicted = segmenter.segment(pixels)
        if prediction_sink is not None:
            prediction_sink(index, predicted)
        totals = totals + confusion(predicted, mask)
    return metrics(totals)


def generator_adaptor(gen: nn.Module) -> Callable[[np.ndarray], np.ndarray]:
    """Wrap a trained generator as a tile adaptor for zero_shot_evaluate."""

    def adapt(pixels: np.ndarray) -> np.ndarray:
        was_training = gen.training
        gen.eval()
        with torch.no_grad():
            x = torch.from_numpy(pixels.transpose(2, 0, 1)).float().unsqueeze(0)
            out = gen(x)[0].numpy().transpose(1, 2, 0)
        gen.train(was_training)
        return out

    return adapt


# ---------------------------------------------------------------------------
# Reference segmenter (stand-in for an externally trained model)


class _DoubleConv(nn.Module):
    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.block = nn.Sequential(
            nn.Conv2d(in_ch, out_ch, 3, padding=1),
            nn.BatchNorm2d(out_ch),
            nn.ReLU(inplace=True),
            nn.Conv2d(out_ch, out_ch, 3, padding=1),
            nn.BatchNorm2d(out_ch),
            nn.ReLU(inplace=True),
        )

    def forward(self, x):
        return self.block(x)


class ReferenceUNet(nn.Module):
    """Compact U-Net with skip connections emitting per-pixel logits."""

    def __init__(self, in_channels: int = 4, base: int = 16):
        super().__init__()
        self.enc1 = _DoubleConv(in_channels, base)
        self.enc2 = _DoubleConv(base, base * 2)
        self.enc3 = _DoubleConv(base * 2, base * 4)
        self.bottleneck = _DoubleConv(base * 4, base * 8)
        self.up3 = nn.ConvTranspose2d(base * 8, base * 4, 2, stride=2)
        self.dec3 = _DoubleConv(base * 8, base * 4)
        self.up2 = nn.ConvTranspose2d(base * 4, base * 2, 2, stride=2)
        self.dec2 = _DoubleConv(base * 4, base * 2)
        self.up1 = nn.ConvTranspose2d(base * 2, base, 2, stride=2)
        self.dec1 = _DoubleConv(base * 2, base)
        self.head = nn.Conv2d(base, 1, 1)

    def forward(self, x):
        e1 = self.enc1(x)
        e2 = self.enc2(F.max_pool2d(e1, 2))
        e3 = self.enc3(F.max_pool2d(e2, 2))
        b = self.bottleneck(F.max_pool2d(e3, 2))
        d3 = self.dec3(torch.cat([self.up3(b), e3], dim=1))
        d2 = self.dec2(torch.cat([self.up2(d3), e2], dim=1))
        d1 = self.dec1(torch.cat([self.up1(d2), e1], dim=1))
        return self.head(d1)


def _soft_dice_loss(logits: torch.Tensor, target: torch.Tensor, eps: float = 1.0) -> torch.Tensor:
    probs = torch.sigmoid(logits)
    num = 2 * (probs * target).sum(dim=(1, 2, 3)) + eps
    den = probs.sum(dim=(1, 2, 3)) + target.sum(dim=(1, 2, 3)) + eps
    return 1 - (num / den).mean()


@dataclass
class SegmenterTrainConfig:
    epochs: int = 20
    batch_size: int = 8
    learning_rate: float = 1e-3
    base_width: int = 16
    seed: int = 0
    threshold: float = 0.5


def train_reference_segmenter(
    tiles: list[ImageTile],
    masks: list[SegMask],
    config: SegmenterTrainConfig | None = None,
    log_fn=None,
) -> SegmenterHandle:
    """Train the reference U-Net with pixel-wise cross-entropy + dice loss on
    labeled target-domain tiles."""
    if not tiles:
        raise ValueError("empty segmenter training dataset")
    if len(tiles) != len(masks):
        raise ValueError("tiles and masks must pair up")
    cfg = config or SegmenterTrainConfig()
    torch.manual_seed(cfg.seed)
    net = ReferenceUNet(in_channels=tiles[0].pixels.shape[-1], base=cfg.base_width)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate)
    images = torch.from_numpy(
        np.stack([t.pixels.transpose(2, 0, 1) for t in tiles])
    ).float()
    targets = torch.from_numpy(np.stack([m.labels for m in masks])).float().unsqueeze(1)
    n = len(tiles)
    order_rng = np.random.default_rng(cfg.seed)
    net.train()
    for epoch in range(cfg.epochs):
        order = order_rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = torch.as_tensor(order[start : start + cfg.batch_size])
            logits = net(images[idx])
            loss = F.binary_cross_entropy_with_logits(logits, targets[idx])
            loss = loss + _soft_dice_loss(logits, targets[idx])
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            epoch_loss += float(loss.detach())
        if log_fn:
            log_fn(f"segmenter epoch {epoch}: loss={epoch_loss:.4f}")
    net.eval()

    def predict(pixels: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            x = torch.from_numpy(pixels.transpose(2, 0, 1)).float().unsqueeze(0)
            return torch.sigmoid(net(x))[0, 0].numpy()

    return SegmenterHandle(
        predict=predict, threshold=cfg.threshold, trained_on=Domain.TARGET.value, net=net
    )
