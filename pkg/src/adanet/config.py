"""Flat dotted-key run configuration shared by the CLI subcommands.

Files hold one ``key = value`` pair per line (# comments allowed). Every key
has a documented default below; unknown keys are rejected. Values given as
"auto" defer to method- or tile-dependent defaults resolved at build time.
"""
from __future__ import annotations

from pathlib import Path

AUTO = "auto"

# key -> (default, type, help)
DEFAULTS: dict[str, tuple[object, type, str]] = {
    "train.method": ("adanet", str, "adanet | cut | fastcut | cyclegan"),
    "train.epochs": (60, int, "training epochs"),
    "train.batch_size": (8, int, "tiles per batch"),
    "train.learning_rate": (AUTO, float, "Adam learning rate; auto = method default"),
    "train.adam_beta1": (0.5, float, "Adam first-moment decay"),
    "train.adam_beta2": (0.999, float, "Adam second-moment decay"),
    "train.seed": (0, int, "master RNG seed"),
    "train.val_interval": (1, int, "validate every N epochs"),
    "train.n_pixel_samples": (AUTO, int, "pixel samples per tap layer; auto scales with tile size"),
    "loss.spatial": (AUTO, float, "spatial contrastive weight; auto = method default"),
    "loss.id_spatial": (AUTO, float, "identity spatial weight; auto = method default"),
    "loss.freq": (AUTO, float, "frequency contrastive weight; auto = method default"),
    "loss.id_freq": (AUTO, float, "identity frequency weight; auto = method default"),
    "loss.tau": (0.07, float, "contrastive temperature"),
    "loss.cycle": (10.0, float, "cycle-consistency weight (cyclegan)"),
    "loss.identity": (5.0, float, "identity L1 weight (cyclegan)"),
    "gen.base_width": (64, int, "generator entry width"),
    "gen.bottleneck_width": (AUTO, int, "generator bottleneck width; auto = method default"),
    "disc.kind": ("patchgan", str, "patchgan | pixelgan | stylegan2 | tile_stylegan2"),
    "disc.tile_size": (64, int, "tile edge for tile_stylegan2"),
    "disc.tile_stride": (32, int, "tile stride for tile_stylegan2"),
    "freq.patch_size": (AUTO, int, "DFT patch edge; auto scales with tile size"),
    "data.root": ("", str, "dataset root directory"),
    "out.dir": ("", str, "output directory"),
}


def _coerce(key: str, text: str):
    default, typ, _ = DEFAULTS[key]
    text = text.strip()
    if text == AUTO and default == AUTO:
        return AUTO
    if typ is bool:
        if text.lower() in ("1", "true", "yes"):
            return True
        if text.lower() in ("0", "false", "no"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {text!r}")
    try:
        return typ(text)
    except ValueError as exc:
        raise ValueError(f"{key}: expected {typ.__name__}, got {text!r}") from exc


def parse_config_file(path: str | Path) -> dict:
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, text = (part.strip() for part in line.split("=", 1))
        if key not in DEFAULTS:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = _coerce(key, text)
    return values


def resolve_config(file_path: str | Path | None = None, overrides: dict | None = None) -> dict:
    """Defaults, overlaid by the config file, overlaid by explicit overrides
    (normally CLI flags)."""
    values = {key: default for key, (default, _, _) in DEFAULTS.items()}
    if file_path:
        values.update(parse_config_file(file_path))
    for key, value in (overrides or {}).items():
        if key not in DEFAULTS:
            raise ValueError(f"unknown config key {key!r}")
        if value is not None:
            values[key] = value
    return values


def describe_defaults() -> str:
    lines = []
    for key, (default, _, help_text) in sorted(DEFAULTS.items()):
        lines.append(f"{key} = {default}  # {help_text}")
    return "\n".join(lines)
