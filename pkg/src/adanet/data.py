"""Raster scenes, tile extraction, normalization and unpaired tile pools.

Tiles are stored channels-last (H, W, C) as numpy arrays; the network code
converts to channels-first torch tensors at the training boundary. All four
channels (R, G, B, NIR) travel together through every operation.
"""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
import tifffile

log = logging.getLogger(__name__)

N_CHANNELS = 4

TILE_SUFFIXES = (".tif", ".tiff", ".npy")

SPLIT_DIRS = ("trainA", "trainB", "valA", "valB", "testA", "testB")


class Domain(str, Enum):
    SOURCE = "source_X"
    TARGET = "target_Y"


@dataclass
class Scene:
    """A full multi-channel raster scene, the unit tiles are cut from."""

    pixels: np.ndarray  # (H, W, C)
    ground_sampling_distance: float = 1.0
    scene_id: str = ""

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != N_CHANNELS:
            raise ValueError(
                f"scene must be (H, W, {N_CHANNELS}), got {self.pixels.shape}"
            )
        if not np.all(np.isfinite(self.pixels)):
            raise ValueError("scene contains non-finite pixels")

    @property
    def shape(self) -> tuple[int, int]:
        return self.pixels.shape[0], self.pixels.shape[1]


@dataclass
class ImageTile:
    pixels: np.ndarray  # (P, N, C) float32
    origin: tuple[int, int] = (0, 0)
    domain: Domain = Domain.SOURCE

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        if self.pixels.ndim != 3:
            raise ValueError(f"tile must be (P, N, C), got {self.pixels.shape}")

    @property
    def size(self) -> tuple[int, int]:
        return self.pixels.shape[0], self.pixels.shape[1]


@dataclass
class SegMask:
    """Binary mask, 1 = standing dead tree."""

    labels: np.ndarray  # (P, N) in {0, 1}

    def __post_init__(self):
        self.labels = np.asarray(self.labels)
        if self.labels.ndim != 2:
            raise ValueError(f"mask must be 2-D, got {self.labels.shape}")
        vals = np.unique(self.labels)
        if not np.all(np.isin(vals, (0, 1))):
            raise ValueError("mask values must be 0/1")
        self.labels = self.labels.astype(np.uint8)


def extract_tiles(scene: Scene, tile_size: int, stride: int = 128) -> list[ImageTile]:
    """Cut overlapping square tiles in row-major raster order.

    Tiles per axis follow floor((dim - tile_size) / stride) + 1; trailing
    pixels that do not fill a full stride are discarded.
    """
    h, w = scene.shape
    if tile_size > min(h, w):
        raise ValueError(
            f"scene too small: {h}x{w} cannot hold a {tile_size}px tile"
        )
    if stride < 1:
        raise ValueError("stride must be >= 1")
    n_rows = (h - tile_size) // stride + 1
    n_cols = (w - tile_size) // stride + 1
    tiles = []
    for i in range(n_rows):
        for j in range(n_cols):
            r, c = i * stride, j * stride
            tiles.append(
                ImageTile(
                    pixels=scene.pixels[r : r + tile_size, c : c + tile_size].copy(),
                    origin=(r, c),
                )
            )
    return tiles


# ---------------------------------------------------------------------------
# Normalization


@dataclass
class ChannelStats:
    """Per-channel affine normalization constants (training split only)."""

    minimum: np.ndarray  # (C,)
    maximum: np.ndarray  # (C,)

    def __post_init__(self):
        self.minimum = np.asarray(self.minimum, dtype=np.float64)
        self.maximum = np.asarray(self.maximum, dtype=np.float64)
        if self.minimum.shape != self.maximum.shape:
            raise ValueError("min/max shape mismatch")
        if not (np.all(np.isfinite(self.minimum)) and np.all(np.isfinite(self.maximum))):
            raise ValueError("channel stats must be finite")

    @classmethod
    def from_tiles(cls, tiles: list[ImageTile]) -> "ChannelStats":
        stack = np.stack([t.pixels for t in tiles])
        return cls(
            minimum=stack.min(axis=(0, 1, 2)),
            maximum=stack.max(axis=(0, 1, 2)),
        )

    def save(self, path: str | Path) -> None:
        records = [
            {"channel": int(c), "min": float(self.minimum[c]), "max": float(self.maximum[c])}
            for c in range(len(self.minimum))
        ]
        Path(path).write_text(json.dumps(records, indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "ChannelStats":
        records = json.loads(Path(path).read_text())
        records = sorted(records, key=lambda r: r["channel"])
        return cls(
            minimum=np.array([r["min"] for r in records]),
            maximum=np.array([r["max"] for r in records]),
        )


def normalize(tile: ImageTile, stats: ChannelStats) -> ImageTile:
    """Map each channel affinely to [-1, 1]; constant channels map to 0.

    Values beyond the training-split range are clipped to the bounds, so the
    output always satisfies the [-1, 1] invariant; the map is invertible via
    denormalize on the training range.
    """
    px = tile.pixels.astype(np.float64)
    span = stats.maximum - stats.minimum
    out = np.zeros_like(px)
    for c in range(px.shape[2]):
        if span[c] <= 0:
            warnings.warn(f"channel {c} is constant (max == min); mapping to 0")
            continue
        out[..., c] = 2.0 * (px[..., c] - stats.minimum[c]) / span[c] - 1.0
    np.clip(out, -1.0, 1.0, out=out)
    return ImageTile(out.astype(np.float32), origin=tile.origin, domain=tile.domain)


def denormalize(tile: ImageTile, stats: ChannelStats) -> ImageTile:
    px = tile.pixels.astype(np.float64)
    span = stats.maximum - stats.minimum
    out = np.empty_like(px)
    for c in range(px.shape[2]):
        out[..., c] = (px[..., c] + 1.0) / 2.0 * span[c] + stats.minimum[c]
    return ImageTile(out.astype(np.float32), origin=tile.origin, domain=tile.domain)


# ---------------------------------------------------------------------------
# File IO (16-bit multi-channel TIFF and raw .npy tensors)


def read_tile_array(path: str | Path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".npy":
        arr = np.load(path)
    elif path.suffix in (".tif", ".tiff"):
        arr = tifffile.imread(path)
    else:
        raise ValueError(f"unsupported tile format: {path.suffix}")
    arr = np.asarray(arr)
    if arr.ndim == 2:
        arr = arr[..., None]
    if arr.ndim != 3:
        raise ValueError(f"{path}: expected a (H, W, C) raster, got {arr.shape}")
    return arr.astype(np.float32)


def write_tile_array(path: str | Path, arr: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".npy":
        np.save(path, arr)
    elif path.suffix in (".tif", ".tiff"):
        tifffile.imwrite(path, arr)
    else:
        raise ValueError(f"unsupported tile format: {path.suffix}")


def list_tile_files(directory: str | Path) -> list[Path]:
    directory = Path(directory)
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in TILE_SUFFIXES)


def _load_dir(directory: Path, domain: Domain) -> list[ImageTile]:
    tiles = []
    for path in list_tile_files(directory):
        try:
            tiles.append(ImageTile(read_tile_array(path), domain=domain))
        except Exception as exc:  # unreadable file: skip, keep going
            log.warning("skipping unreadable tile %s: %s", path, exc)
    return tiles


class UnpairedDataset:
    """Two unaligned tile pools with a per-epoch random pairing.

    The pairing permutation is a pure function of (seed, epoch); the tiles
    themselves keep their deterministic load order. Epoch length equals the
    larger pool, cycling the smaller one.
    """

    def __init__(self, source_tiles: list[ImageTile], target_tiles: list[ImageTile], seed: int = 0):
        if not source_tiles or not target_tiles:
            raise ValueError("both tile pools must be non-empty")
        self.source_tiles = source_tiles
        self.target_tiles = target_tiles
        self.seed = seed

    def __len__(self) -> int:
        return max(len(self.source_tiles), len(self.target_tiles))

    def epoch_pairs(self, epoch: int) -> list[tuple[int, int]]:
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, epoch]))
        n = len(self)
        ns, nt = len(self.source_tiles), len(self.target_tiles)
        src = rng.permutation(ns)
        tgt = rng.permutation(nt)
        return [(int(src[i % ns]), int(tgt[i % nt])) for i in range(n)]

    def iter_batches(self, epoch: int, batch_size: int):
        """Yield (source, target) stacks of shape (B, H, W, C)."""
        pairs = self.epoch_pairs(epoch)
        for start in range(0, len(pairs), batch_size):
            chunk = pairs[start : start + batch_size]
            xs = np.stack([self.source_tiles[i].pixels for i, _ in chunk])
            ys = np.stack([self.target_tiles[j].pixels for _, j in chunk])
            yield xs, ys


def make_unpaired_dataset(
    source_dir: str | Path,
    target_dir: str | Path,
    seed: int = 0,
    stats: ChannelStats | None = None,
) -> UnpairedDataset:
    """Load two tile directories into an UnpairedDataset.

    If ``stats`` is given every tile is normalized to [-1, 1] at load time.
    Unreadable files are skipped with a warning; an empty directory is an
    error.
    """
    source = _load_dir(Path(source_dir), Domain.SOURCE)
    target = _load_dir(Path(target_dir), Domain.TARGET)
    if not source:
        raise ValueError(f"no readable tiles in {source_dir}")
    if not target:
        raise ValueError(f"no readable tiles in {target_dir}")
    if stats is not None:
        source = [normalize(t, stats) for t in source]
        target = [normalize(t, stats) for t in target]
    return UnpairedDataset(source, target, seed=seed)
