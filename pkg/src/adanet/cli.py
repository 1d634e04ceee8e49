"""Command-line entry point: synth, train, transform, evaluate, metrics and
segmenter subcommands over the shared flat-key config format.

Flag precedence: explicit flags override config-file keys override defaults.
All randomness funnels through --seed.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch

from . import config as run_config
from .baselines import build_trainer
from .checkpoint import load_checkpoint, save_checkpoint
from .contrastive import FrequencyConfig
from .data import (
    ChannelStats,
    Domain,
    ImageTile,
    denormalize,
    list_tile_files,
    make_unpaired_dataset,
    normalize,
    read_tile_array,
    write_tile_array,
)
from .discriminators import KINDS, DiscriminatorConfig
from .generator import GeneratorConfig, TranslationGenerator
from .segmentation import (
    SegmenterHandle,
    SegmenterTrainConfig,
    confusion,
    metrics,
    generator_adaptor,
    train_reference_segmenter,
    zero_shot_evaluate,
    ReferenceUNet,
    ConfusionCounts,
)
from .synthetic import SynthParams, read_mask_png, write_benchmark_dataset, write_mask_png
from .training import METHODS, LossWeights, TrainConfig


def _err(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 1


# ---------------------------------------------------------------------------
# shared resolution helpers


def _resolved(args, extra_overrides: dict | None = None) -> dict:
    overrides = dict(extra_overrides or {})
    return run_config.resolve_config(getattr(args, "config", None), overrides)


def _auto(value, fallback):
    return fallback if value == run_config.AUTO else value


def _build_train_objects(values: dict, tile_size: int):
    method = values["train.method"]
    train_cfg = TrainConfig(
        method=method,
        epochs=values["train.epochs"],
        batch_size=values["train.batch_size"],
        learning_rate=None
        if values["train.learning_rate"] == run_config.AUTO
        else values["train.learning_rate"],
        adam_beta1=values["train.adam_beta1"],
        adam_beta2=values["train.adam_beta2"],
        seed=values["train.seed"],
        val_interval=values["train.val_interval"],
        n_pixel_samples=_auto(
            values["train.n_pixel_samples"], 256 if tile_size >= 256 else 64
        ),
    )
    disc_cfg = DiscriminatorConfig(
        kind=values["disc.kind"],
        tile_size=values["disc.tile_size"],
        tile_stride=values["disc.tile_stride"],
    )
    if method == "adanet":
        gen_cfg = GeneratorConfig.attention_default(
            base_width=values["gen.base_width"],
            bottleneck_width=_auto(values["gen.bottleneck_width"], 240),
        )
    else:
        gen_cfg = GeneratorConfig.baseline_default(
            base_width=values["gen.base_width"],
            bottleneck_width=_auto(values["gen.bottleneck_width"], 256),
        )
    freq_cfg = FrequencyConfig.for_tile(tile_size)
    if values["freq.patch_size"] != run_config.AUTO:
        patch = values["freq.patch_size"]
        freq_cfg = FrequencyConfig(patch_size=patch, keep=patch // 2)
    kwargs = {"gen_config": gen_cfg, "disc_config": disc_cfg}
    if method == "cyclegan":
        kwargs["cycle_weight"] = values["loss.cycle"]
        kwargs["identity_weight"] = values["loss.identity"]
    else:
        base = LossWeights.for_method(method)
        kwargs["weights"] = LossWeights(
            spatial=_auto(values["loss.spatial"], base.spatial),
            id_spatial=_auto(values["loss.id_spatial"], base.id_spatial),
            freq=_auto(values["loss.freq"], base.freq),
            id_freq=_auto(values["loss.id_freq"], base.id_freq),
            tau=values["loss.tau"],
        )
        kwargs["freq_config"] = freq_cfg
        kwargs["tile_size"] = tile_size
    return train_cfg, kwargs


def _count(net) -> int:
    return sum(p.numel() for p in net.parameters() if p.requires_grad)


def _print_parameter_table(trainer) -> None:
    rows = []
    if hasattr(trainer, "pair"):
        pair = trainer.pair
        rows = [
            ("generator X->Y", _count(pair.gen_xy)),
            ("generator Y->X", _count(pair.gen_yx)),
            ("discriminator Y", _count(pair.disc_y)),
            ("discriminator X", _count(pair.disc_x)),
        ]
    else:
        rows = [
            ("generator", _count(trainer.gen)),
            ("projection heads", _count(trainer.heads)),
            ("discriminator", _count(trainer.disc)),
        ]
    total = sum(n for _, n in rows)
    print("network parameters:")
    for name, n in rows:
        print(f"  {name:18s} {n / 1e6:8.3f} M")
    print(f"  {'total':18s} {total / 1e6:8.3f} M")


def generator_from_checkpoint(path: str | Path) -> TranslationGenerator:
    payload = load_checkpoint(path)
    gen = TranslationGenerator(GeneratorConfig.from_dict(payload["generator"]["config"]))
    gen.load_state_dict(payload["generator"]["state"])
    gen.eval()
    return gen


def save_segmenter(path: str | Path, handle_net: ReferenceUNet, threshold: float) -> None:
    save_checkpoint(
        path,
        {
            "kind": "reference_unet",
            "state": handle_net.state_dict(),
            "in_channels": handle_net.enc1.block[0].in_channels,
            "base": handle_net.enc1.block[0].out_channels,
            "threshold": threshold,
            "trained_on": Domain.TARGET.value,
        },
    )


def load_segmenter(path: str | Path) -> SegmenterHandle:
    payload = load_checkpoint(path)
    if payload.get("kind") != "reference_unet":
        raise ValueError(f"not a segmenter checkpoint: {path}")
    net = ReferenceUNet(in_channels=payload["in_channels"], base=payload["base"])
    net.load_state_dict(payload["state"])
    net.eval()

    def predict(pixels: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            x = torch.from_numpy(pixels.transpose(2, 0, 1)).float().unsqueeze(0)
            return torch.sigmoid(net(x))[0, 0].numpy()

    return SegmenterHandle(
        predict=predict,
        threshold=payload["threshold"],
        trained_on=payload["trained_on"],
    )


def _load_labeled_split(root: Path, split: str, side: str, stats: ChannelStats):
    tile_dir = root / f"{split}{side}"
    mask_dir = root / f"{split}{side}_masks"
    if not mask_dir.exists():
        raise FileNotFoundError(f"missing masks directory {mask_dir}")
    pairs = []
    names = []
    for tile_path in list_tile_files(tile_dir):
        mask_path = mask_dir / (tile_path.stem + ".png")
        if not mask_path.exists():
            raise FileNotFoundError(f"missing mask for {tile_path.name}")
        tile = ImageTile(read_tile_array(tile_path))
        pairs.append((normalize(tile, stats), read_mask_png(mask_path)))
        names.append(tile_path.stem)
    if not pairs:
        raise ValueError(f"no tiles in {tile_dir}")
    return pairs, names


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    params = SynthParams(
        n_scenes=args.n,
        tile_size=args.tile_size,
        tree_density=args.tree_density,
        dead_fraction=args.dead_fraction,
        seed=args.seed,
    )
    try:
        summary = write_benchmark_dataset(
            params,
            args.out,
            val_fraction=args.val_fraction,
            test_fraction=args.test_fraction,
            force=args.force,
        )
    except FileExistsError as exc:
        return _err(str(exc))
    print(json.dumps(summary))
    return 0


def cmd_train(args) -> int:
    try:
        overrides = {
            "train.method": args.method,
            "train.epochs": args.epochs,
            "train.batch_size": args.batch_size,
            "train.learning_rate": args.lr,
            "train.seed": args.seed,
            "disc.kind": args.discriminator,
        }
        values = _resolved(args, {k: v for k, v in overrides.items() if v is not None})
        root = Path(args.data)
        stats = ChannelStats.load(root / "stats.json")
        seed = values["train.seed"]
        train_set = make_unpaired_dataset(root / "trainA", root / "trainB", seed, stats)
        val_set = None
        if (root / "valA").exists() and (root / "valB").exists():
            val_set = make_unpaired_dataset(root / "valA", root / "valB", seed, stats)
        tile_size = train_set.source_tiles[0].size[0]
        train_cfg, kwargs = _build_train_objects(values, tile_size)
        trainer = build_trainer(train_cfg, **kwargs)
        _print_parameter_table(trainer)
        result = trainer.fit(
            train_set,
            val_set,
            out_dir=args.out,
            resume_from=args.resume,
            log_fn=print,
        )
    except (ValueError, FileNotFoundError) as exc:
        return _err(str(exc))
    print(
        json.dumps(
            {
                "best_checkpoint": str(result.best_path),
                "last_checkpoint": str(result.last_path),
                "log": str(result.log_path),
                "best_val_loss": result.best_val_loss,
                "best_epoch": result.best_epoch,
            }
        )
    )
    return 0


def _to_uint8(channel: np.ndarray, lo: float, hi: float) -> np.ndarray:
    scaled = (channel - lo) / (hi - lo) if hi > lo else np.zeros_like(channel)
    return np.clip(scaled * 255.0, 0, 255).astype(np.uint8)


def _write_previews(preview_dir: Path, name: str, dn: np.ndarray, stats: ChannelStats) -> None:
    from PIL import Image

    channels = [
        _to_uint8(dn[..., c], stats.minimum[c], stats.maximum[c]) for c in range(4)
    ]
    rgb = np.stack([channels[0], channels[1], channels[2]], axis=-1)
    false_color = np.stack([channels[3], channels[0], channels[1]], axis=-1)
    preview_dir.mkdir(parents=True, exist_ok=True)
    Image.fromarray(rgb).save(preview_dir / f"{name}_rgb.png")
    Image.fromarray(false_color).save(preview_dir / f"{name}_falsecolor.png")


def cmd_transform(args) -> int:
    try:
        gen = generator_from_checkpoint(args.checkpoint)
        input_dir = Path(args.input)
        stats_path = Path(args.stats) if args.stats else input_dir.parent / "stats.json"
        stats = ChannelStats.load(stats_path)
        adapt = generator_adaptor(gen)
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        files = list_tile_files(input_dir)
        if not files:
            return _err(f"no tiles in {input_dir}")
        for path in files:
            tile = ImageTile(read_tile_array(path))
            adapted = ImageTile(adapt(normalize(tile, stats).pixels))
            dn = denormalize(adapted, stats).pixels
            dn = np.clip(np.round(dn), 0, 65535).astype(np.uint16)
            write_tile_array(out_dir / path.name, dn)
            _write_previews(out_dir / "previews", path.stem, dn, stats)
    except (ValueError, FileNotFoundError) as exc:
        return _err(str(exc))
    print(json.dumps({"transformed": len(files), "out_dir": str(out_dir)}))
    return 0


def cmd_segmenter(args) -> int:
    try:
        root = Path(args.data)
        stats = ChannelStats.load(root / "stats.json")
        labeled, _ = _load_labeled_split(root, args.split, "B", stats)
        cfg = SegmenterTrainConfig(epochs=args.epochs, seed=args.seed)
        handle = train_reference_segmenter(
            [t for t, _ in labeled], [m for _, m in labeled], cfg, log_fn=print
        )
        save_segmenter(args.out, handle.net, handle.threshold)
    except (ValueError, FileNotFoundError) as exc:
        return _err(str(exc))
    print(json.dumps({"segmenter": str(args.out)}))
    return 0


def cmd_evaluate(args) -> int:
    try:
        if args.no_adapt and args.checkpoint:
            return _err("--no-adapt and --checkpoint are mutually exclusive")
        if not args.no_adapt and not args.checkpoint:
            return _err("pass either --checkpoint CKPT or --no-adapt")
        root = Path(args.data)
        stats = ChannelStats.load(root / "stats.json")
        segmenter = load_segmenter(args.segmenter)
        dataset, names = _load_labeled_split(root, args.split, args.side, stats)
        adaptor = None
        if args.checkpoint:
            adaptor = generator_adaptor(generator_from_checkpoint(args.checkpoint))
        sink = None
        if args.save_masks:
            mask_dir = Path(args.save_masks)
            mask_dir.mkdir(parents=True, exist_ok=True)

            def sink(index, mask):
                write_mask_png(mask_dir / f"{names[index]}.png", mask.labels)

        report = zero_shot_evaluate(adaptor, segmenter, dataset, prediction_sink=sink)
    except (ValueError, FileNotFoundError) as exc:
        return _err(str(exc))
    payload = json.dumps(report.to_dict(), indent=2)
    if args.out:
        Path(args.out).write_text(payload)
    print(payload)
    return 0


def cmd_metrics(args) -> int:
    try:
        pred_dir, truth_dir = Path(args.pred), Path(args.truth)
        preds = sorted(pred_dir.glob("*.png"))
        if not preds:
            return _err(f"no prediction masks in {pred_dir}")
        totals = ConfusionCounts()
        for pred_path in preds:
            truth_path = truth_dir / pred_path.name
            if not truth_path.exists():
                return _err(f"missing truth mask for {pred_path.name}")
            totals = totals + confusion(read_mask_png(pred_path), read_mask_png(truth_path))
        report = metrics(totals)
    except ValueError as exc:
        return _err(str(exc))
    payload = json.dumps(report.to_dict(), indent=2)
    if args.out:
        Path(args.out).write_text(payload)
    print(payload)
    return 0


def cmd_defaults(args) -> int:
    print(run_config.describe_defaults())
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adanet",
        description="Unpaired domain adaptation toolkit for multispectral aerial tiles",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic two-domain benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=320, help="total scene pairs")
    p.add_argument("--tile-size", type=int, default=64)
    p.add_argument("--tree-density", type=float, default=9.0)
    p.add_argument("--dead-fraction", type=float, default=0.4)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--test-fraction", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--force", action="store_true")
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("train", help="train a domain adaptation method")
    p.add_argument("--data", required=True, help="dataset root (trainA/trainB/...)")
    p.add_argument("--out", required=True, help="run directory for checkpoints/logs")
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--discriminator", choices=KINDS)
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("transform", help="map tiles through a trained generator")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="directory of tiles to transform")
    p.add_argument("--out", required=True)
    p.add_argument("--stats", help="stats.json path (default: alongside input)")
    p.set_defaults(handler=cmd_transform)

    p = sub.add_parser("segmenter", help="train the reference segmenter on the target split")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="segmenter checkpoint path")
    p.add_argument("--split", default="train")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_segmenter)

    p = sub.add_parser("evaluate", help="zero-shot segmentation evaluation")
    p.add_argument("--data", required=True)
    p.add_argument("--segmenter", required=True)
    p.add_argument("--checkpoint", help="generator checkpoint used as adaptor")
    p.add_argument("--no-adapt", action="store_true", help="baseline without adaptation")
    p.add_argument("--split", default="test")
    p.add_argument("--side", default="A", choices=("A", "B"))
    p.add_argument("--out", help="write the metrics JSON here as well")
    p.add_argument("--save-masks", help="also write predicted masks as 1-bit PNGs here")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("metrics", help="score saved prediction masks against truth masks")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out")
    p.set_defaults(handler=cmd_metrics)

    p = sub.add_parser("defaults", help="print every config key with its default")
    p.set_defaults(handler=cmd_defaults)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.handler(args)


if __name__ == "__main__":
    sys.exit(main())
