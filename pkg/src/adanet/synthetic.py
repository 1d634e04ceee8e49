"""Procedural two-domain benchmark with exact ground truth.

Target-domain tiles are rendered as textured backgrounds with elliptical
canopies plus confusable clutter: alive canopies are bright in NIR; dead
canopies (the positive class) are whitish in RGB and dark in NIR, some in a
browning variant; bare-ground patches imitate the dead RGB signature at a
mid NIR level and shaded canopies imitate darkness without the dead NIR
drop. Telling the classes apart therefore hinges on calibrated NIR levels,
so the evaluation rewards faithful photometric adaptation rather than
contrast caricature. The paired source tile applies a known photometric
shift (per-channel gain/gamma, brightness offset, NIR contrast scaling), so
the domain gap is exactly invertible and the dead-tree mask is shared.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .data import (
    ChannelStats,
    Domain,
    ImageTile,
    SegMask,
    write_tile_array,
)

BACKGROUND = np.array([0.25, 0.35, 0.22, 0.55], dtype=np.float32)
ALIVE_CANOPY = np.array([0.15, 0.30, 0.12, 0.85], dtype=np.float32)
# the positive/negative NIR margins are deliberately tight: a few hundredths
# of miscalibrated reflectance flips whole object classes
DEAD_CANOPY = np.array([0.62, 0.60, 0.55, 0.22], dtype=np.float32)  # label 1
BROWNING_CANOPY = np.array([0.55, 0.45, 0.30, 0.33], dtype=np.float32)  # label 1
BARE_GROUND = np.array([0.60, 0.56, 0.50, 0.42], dtype=np.float32)  # label 0
SHADED_CANOPY = np.array([0.11, 0.17, 0.10, 0.56], dtype=np.float32)  # label 0
NIR = 3  # channel index

BROWNING_SHARE = 0.35  # share of dead canopies rendered in the browning variant
CLUTTER_SHARE = 0.6  # bare-ground / shaded objects per canopy


@dataclass
class PhotometricShift:
    """source = clip(gain * target^gamma + offset), with the NIR channel's
    contrast additionally scaled about 0.5 by ``nir_flip``.

    The default shift brightens the RGB channels and inverts NIR contrast
    (negative factor), mirroring source scenes that are brighter overall
    with opposite NIR behavior relative to the target domain.
    """

    gain: tuple[float, float, float, float] = (1.18, 1.14, 1.10, 1.0)
    gamma: tuple[float, float, float, float] = (0.75, 0.78, 0.82, 1.0)
    offset: float = 0.10
    nir_flip: float = -0.5

    @classmethod
    def identity(cls) -> "PhotometricShift":
        return cls(gain=(1.0,) * 4, gamma=(1.0,) * 4, offset=0.0, nir_flip=1.0)

    @property
    def is_identity(self) -> bool:
        return (
            all(g == 1.0 for g in self.gain)
            and all(g == 1.0 for g in self.gamma)
            and self.offset == 0.0
            and self.nir_flip == 1.0
        )

    def __post_init__(self):
        if any(g <= 0 for g in self.gain) or any(g <= 0 for g in self.gamma):
            raise ValueError("gains and gammas must be positive")

    def apply(self, target: np.ndarray) -> np.ndarray:
        if self.is_identity:
            return target.copy()
        out = np.empty_like(target)
        for c in range(target.shape[-1]):
            out[..., c] = self.gain[c] * np.power(target[..., c], self.gamma[c]) + self.offset
        out[..., NIR] = 0.5 + self.nir_flip * (out[..., NIR] - 0.5)
        return np.clip(out, 0.0, 1.0).astype(target.dtype)


@dataclass
class SynthParams:
    n_scenes: int = 320
    tile_size: int = 64
    tree_density: float = 9.0  # expected canopies per 64px tile
    dead_fraction: float = 0.4
    shift: PhotometricShift = field(default_factory=PhotometricShift)
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.dead_fraction <= 1.0:
            raise ValueError("dead_fraction must lie in [0, 1]")


@dataclass
class SynthScenePair:
    target_tile: ImageTile
    source_tile: ImageTile
    mask: SegMask
    shift_used: PhotometricShift


def _paint_ellipse(rng, img, mask, grids, color, label, scale, radius=(2.5, 7.0)):
    t = img.shape[0]
    yy, xx = grids
    cy, cx = rng.uniform(0, t, size=2)
    a = rng.uniform(*radius) * scale
    b = a * rng.uniform(0.6, 1.0)
    theta = rng.uniform(0, np.pi)
    dy, dx = yy - cy, xx - cx
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)
    inside = (u / a) ** 2 + (v / b) ** 2 <= 1.0
    jitter = rng.uniform(0.96, 1.04)
    img[inside] = color * jitter + 0.012 * rng.standard_normal(4)
    mask[inside] = label


def _render_target(rng: np.random.Generator, params: SynthParams) -> tuple[np.ndarray, np.ndarray]:
    t = params.tile_size
    scale = t / 64.0
    img = np.empty((t, t, 4), dtype=np.float64)
    low = ndimage.gaussian_filter(rng.standard_normal((t, t)), sigma=4.0 * scale)
    for c in range(4):
        img[..., c] = BACKGROUND[c] + 0.10 * low + 0.015 * rng.standard_normal((t, t))
    mask = np.zeros((t, t), dtype=np.uint8)
    grids = np.mgrid[0:t, 0:t]

    n_clutter = int(rng.poisson(params.tree_density * CLUTTER_SHARE * scale * scale))
    for _ in range(n_clutter):
        color = BARE_GROUND if rng.random() < 0.5 else SHADED_CANOPY
        _paint_ellipse(rng, img, mask, grids, color, 0, scale, radius=(3.0, 8.0))

    n_trees = int(rng.poisson(params.tree_density * scale * scale))
    for _ in range(n_trees):
        if rng.random() < params.dead_fraction:
            browning = rng.random() < BROWNING_SHARE
            color, label = (BROWNING_CANOPY if browning else DEAD_CANOPY), 1
        else:
            color, label = ALIVE_CANOPY, 0
        _paint_ellipse(rng, img, mask, grids, color, label, scale)
    return np.clip(img, 0.02, 0.98).astype(np.float32), mask


def generate_pair(params: SynthParams, index: int) -> SynthScenePair:
    """Deterministic in (params.seed, index); the source tile is exactly the
    shifted target tile and the mask is shared."""
    rng = np.random.default_rng(np.random.SeedSequence([params.seed, index]))
    target, mask = _render_target(rng, params)
    source = params.shift.apply(target)
    return SynthScenePair(
        target_tile=ImageTile(target, domain=Domain.TARGET),
        source_tile=ImageTile(source, domain=Domain.SOURCE),
        mask=SegMask(mask),
        shift_used=params.shift,
    )


# ---------------------------------------------------------------------------
# Domain-gap statistic


def _summary(tiles) -> np.ndarray:
    arrays = [t.pixels if isinstance(t, ImageTile) else np.asarray(t) for t in tiles]
    if not arrays:
        raise ValueError("empty tile set")
    stack = np.concatenate([a.reshape(-1, a.shape[-1]) for a in arrays], axis=0)
    return np.concatenate([stack.mean(axis=0), stack.std(axis=0)])


def domain_gap_statistic(set_a, set_b) -> float:
    """Symmetric l2 distance between per-channel mean/std summaries."""
    return float(np.linalg.norm(_summary(set_a) - _summary(set_b)))


# ---------------------------------------------------------------------------
# Dataset emission in the standard directory layout


def write_benchmark_dataset(
    params: SynthParams,
    out_dir: str | Path,
    val_fraction: float = 0.1,
    test_fraction: float = 0.1,
    force: bool = False,
) -> dict:
    """Render all scene pairs and emit trainA/trainB/valA/... tile dirs,
    per-split mask dirs and the stats.json normalization sidecar."""
    out_dir = Path(out_dir)
    if out_dir.exists() and any(out_dir.iterdir()) and not force:
        raise FileExistsError(f"{out_dir} exists and is not empty (use force)")
    n = params.n_scenes
    n_val = int(round(n * val_fraction))
    n_test = int(round(n * test_fraction))
    n_train = n - n_val - n_test
    if n_train < 1:
        raise ValueError("no scenes left for the train split")
    bounds = {
        "train": range(0, n_train),
        "val": range(n_train, n_train + n_val),
        "test": range(n_train + n_val, n),
    }
    mins = np.full(4, np.inf)
    maxs = np.full(4, -np.inf)
    counts = {}
    for split, index_range in bounds.items():
        for side in "AB":
            (out_dir / f"{split}{side}").mkdir(parents=True, exist_ok=True)
            (out_dir / f"{split}{side}_masks").mkdir(parents=True, exist_ok=True)
        for index in index_range:
            pair = generate_pair(params, index)
            name = f"tile_{index:05d}"
            for side, tile in (("A", pair.source_tile), ("B", pair.target_tile)):
                dn = np.round(tile.pixels * 65535.0).astype(np.uint16)
                write_tile_array(out_dir / f"{split}{side}" / f"{name}.tif", dn)
                write_mask_png(
                    out_dir / f"{split}{side}_masks" / f"{name}.png", pair.mask.labels
                )
                if split == "train":
                    mins = np.minimum(mins, dn.min(axis=(0, 1)))
                    maxs = np.maximum(maxs, dn.max(axis=(0, 1)))
        counts[split] = len(index_range)
    ChannelStats(minimum=mins, maximum=maxs).save(out_dir / "stats.json")
    return {"counts": counts, "tile_size": params.tile_size, "out_dir": str(out_dir)}


def write_mask_png(path: Path, labels: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray((labels * 255).astype(np.uint8)).convert("1").save(path)


def read_mask_png(path: str | Path) -> SegMask:
    from PIL import Image

    arr = np.asarray(Image.open(path).convert("L"))
    return SegMask((arr > 127).astype(np.uint8))
