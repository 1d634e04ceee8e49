"""Five-term generator objective and the alternating adversarial trainer.

One training step minimizes

    L_T = L_adv + spatial * L_Spatial + id_spatial * L_IDSpatial
AND                + freq * L_Freq + id_freq * L_IDFreq

over the generator and projection heads, then the least-squares real/fake
loss over the discriminator. All randomness is derived statelessly from
(seed, step) so runs replay bit-identically and resume mid-run.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .checkpoint import save_checkpoint, load_checkpoint
from .contrastive import (
    FrequencyConfig,
    ProjectionHeads,
    _patch_nce,
    sample_pixel_features,
    spatial_contrastive_loss,
)
from .data import UnpairedDataset
from .discriminators import DiscriminatorConfig, build_discriminator, discriminator_loss_on
from .generator import GeneratorConfig, TranslationGenerator

METHODS = ("adanet", "cut", "fastcut", "cyclegan")

METHOD_LEARNING_RATES = {
    "adanet": 2e-6,
    "cut": 2e-5,
    "cyclegan": 2e-5,
    "fastcut": 2e-4,
}


@dataclass
class LossWeights:
    """Objective term weights; defaults are the published attention-method
    values (0.5 everywhere, temperature 0.07)."""

    spatial: float = 0.5
    id_spatial: float = 0.5
    freq: float = 0.5
    id_freq: float = 0.5
    tau: float = 0.07

    def __post_init__(self):
        for name in ("spatial", "id_spatial", "freq", "id_freq"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be >= 0")
        if self.tau <= 0:
            raise ValueError("temperature tau must be positive")

    @classmethod
    def for_method(cls, method: str) -> "LossWeights":
        if method == "adanet":
            return cls()
        if method == "cut":
            return cls(freq=0.0, id_freq=0.0)
        if method == "fastcut":
            return cls(spatial=10.0, id_spatial=0.0, freq=0.0, id_freq=0.0)
        raise ValueError(f"no contrastive weights for method {method!r}")


@dataclass
class TrainConfig:
    method: str = "adanet"
    epochs: int = 60
    batch_size: int = 8
    learning_rate: float | None = None  # None -> method default
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    seed: int = 0
    val_interval: int = 1
    n_pixel_samples: int = 256

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; use one of {METHODS}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.val_interval < 1:
            raise ValueError("val_interval must be >= 1")

    @property
    def lr(self) -> float:
        return self.learning_rate if self.learning_rate is not None else METHOD_LEARNING_RATES[self.method]


def to_torch_batch(batch: np.ndarray) -> torch.Tensor:
    """(B, H, W, C) numpy tiles -> (B, C, H, W) float tensor."""
    return torch.from_numpy(np.ascontiguousarray(batch.transpose(0, 3, 1, 2))).float()


def generator_adversarial_loss(gen: nn.Module, disc: nn.Module, x: torch.Tensor) -> torch.Tensor:
    """||D(G(x)) - 1||^2, mean over mask elements and batch."""
    return (disc(gen(x)) - 1.0).pow(2).mean()


def total_generator_loss(
    gen: nn.Module,
    disc: nn.Module,
    heads: ProjectionHeads,
    x: torch.Tensor,
    y: torch.Tensor,
    weights: LossWeights | None = None,
    *,
    n_pixel_samples: int = 256,
    freq_config: FrequencyConfig | None = None,
    rng: np.random.Generator | None = None,
    return_images: bool = False,
):
    """Assemble the full generator objective; streams whose weights are zero
    are skipped entirely (no extra generator passes).

    Returns (total, breakdown) where breakdown reports each unweighted
    component as a float; with return_images=True a third dict carries the
    generated images for reuse by the discriminator phase.
    """
    w = weights or LossWeights()
    rng = rng if rng is not None else np.random.default_rng(0)
    freq_cfg = freq_config or FrequencyConfig.for_tile(x.shape[-1])
    zero = x.new_zeros(())

    y_hat, taps_x = gen(x, return_taps=True)
    l_adv = (disc(y_hat) - 1.0).pow(2).mean()

    if w.spatial > 0:
        _, taps_query = gen(y_hat, return_taps=True)
        samples = sample_pixel_features(taps_query, taps_x, n_pixel_samples, rng)
        l_spatial = spatial_contrastive_loss(samples, heads, w.tau)
    else:
        l_spatial = zero

    y_tilde = y_double = None
    if w.id_spatial > 0 or w.id_freq > 0:
        if w.id_spatial > 0:
            y_tilde, taps_y = gen(y, return_taps=True)
            y_double, taps_y_query = gen(y_tilde, return_taps=True)
            id_samples = sample_pixel_features(taps_y_query, taps_y, n_pixel_samples, rng)
            l_id_spatial = spatial_contrastive_loss(id_samples, heads, w.tau)
        else:
            y_tilde = gen(y)
            y_double = gen(y_tilde)
            l_id_spatial = zero
    else:
        l_id_spatial = zero

    l_freq = _patch_nce(x, y_hat, x, heads, freq_cfg, w.tau) if w.freq > 0 else zero
    l_id_freq = (
        _patch_nce(y_double, y_tilde, y_tilde, heads, freq_cfg, w.tau)
        if w.id_freq > 0
        else zero
    )

    total = (
        l_adv
        + w.spatial * l_spatial
        + w.id_spatial * l_id_spatial
        + w.freq * l_freq
        + w.id_freq * l_id_freq
    )
    breakdown = {
        "L_total": float(total.detach()),
        "L_A": float(l_adv.detach()),
        "L_Spatial": float(l_spatial.detach()),
        "L_IDSpatial": float(l_id_spatial.detach()),
        "L_Freq": float(l_freq.detach()),
        "L_IDFreq": float(l_id_freq.detach()),
    }
    if return_images:
        return total, breakdown, {"y_hat": y_hat, "y_tilde": y_tilde}
    return total, breakdown


@dataclass
class TrainResult:
    best_path: Path
    last_path: Path
    log_path: Path
    best_val_loss: float
    best_epoch: int
    history: list[dict]


class TrainerLoop:
    """Epoch loop with validation-based model selection, JSONL logging and
    resumable checkpoints; concrete trainers supply train_step,
    validation_loss, save and restore."""

    config: TrainConfig
    epoch: int
    step: int
    best_val_loss: float
    best_epoch: int

    def fit(
        self,
        dataset_train: UnpairedDataset,
        dataset_val: UnpairedDataset | None = None,
        out_dir: str | Path = "runs/run",
        resume_from: str | Path | None = None,
        log_fn=None,
    ) -> TrainResult:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        best_path, last_path = out_dir / "best.ckpt", out_dir / "last.ckpt"
        log_path = out_dir / "train_log.jsonl"
        if resume_from is not None:
            self.restore(resume_from)
        elif log_path.exists():
            log_path.unlink()

        history: list[dict] = []
        cfg = self.config
        with log_path.open("a") as log_file:
            for epoch in range(self.epoch, cfg.epochs):
                self.epoch = epoch
                epoch_records = []
                for xs, ys in dataset_train.iter_batches(epoch, cfg.batch_size):
                    record = self.train_step(to_torch_batch(xs), to_torch_batch(ys))
                    history.append(record)
                    epoch_records.append(record)
                    log_file.write(json.dumps(record) + "\n")
                if log_fn and epoch_records:
                    means = {
                        k: float(np.mean([r[k] for r in epoch_records]))
                        for k in epoch_records[0]
                        if k.startswith("L_")
                    }
                    log_fn(
                        f"epoch {epoch}: "
                        + " ".join(f"{k}={v:.4f}" for k, v in means.items())
                    )
                if dataset_val is not None and (epoch + 1) % cfg.val_interval == 0:
                    val_loss = self.validation_loss(dataset_val)
                    entry = {"epoch": epoch, "val_loss": val_loss}
                    history.append(entry)
                    log_file.write(json.dumps(entry) + "\n")
                    if log_fn:
                        log_fn(f"epoch {epoch}: val_loss={val_loss:.4f}")
                    if val_loss < self.best_val_loss:
                        self.best_val_loss = val_loss
                        self.best_epoch = epoch
                        self.save(best_path)
                self.epoch = epoch + 1
                self.save(last_path)
        if not best_path.exists():  # no validation pool: last weights are best
            self.save(best_path)
        return TrainResult(
            best_path=best_path,
            last_path=last_path,
            log_path=log_path,
            best_val_loss=self.best_val_loss,
            best_epoch=self.best_epoch,
            history=history,
        )


class ContrastiveTrainer(TrainerLoop):
    """Single-owner trainer for the contrastive methods (attention model,
    CUT and FastCUT share it; only weights/configs differ)."""

    def __init__(
        self,
        gen: TranslationGenerator,
        disc: nn.Module,
        disc_config: DiscriminatorConfig,
        config: TrainConfig,
        weights: LossWeights,
        freq_config: FrequencyConfig | None = None,
    ):
        self.gen = gen
        self.disc = disc
        self.disc_config = disc_config
        self.config = config
        self.weights = weights
        self.freq_config = freq_config or FrequencyConfig()
        self.heads = ProjectionHeads()
        self.heads.build_spatial(gen.tap_widths())
        if weights.freq > 0 or weights.id_freq > 0:
            self.heads.build_frequency(self.freq_config.d_f)
        self.opt_g = torch.optim.Adam(
            itertools.chain(gen.parameters(), self.heads.parameters()),
            lr=config.lr,
            betas=(config.adam_beta1, config.adam_beta2),
        )
        self.opt_d = torch.optim.Adam(
            disc.parameters(), lr=config.lr, betas=(config.adam_beta1, config.adam_beta2)
        )
        self.epoch = 0
        self.step = 0
        self.best_val_loss = math.inf
        self.best_epoch = -1

    def _step_rng(self) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.config.seed, 1, self.step]))

    def _val_rng(self) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.config.seed, 2]))

    def train_step(self, x: torch.Tensor, y: torch.Tensor) -> dict:
        """One generator update followed by one discriminator update."""
        cfg = self.config
        total, breakdown, images = total_generator_loss(
            self.gen, self.disc, self.heads, x, y, self.weights,
            n_pixel_samples=cfg.n_pixel_samples,
            freq_config=self.freq_config,
            rng=self._step_rng(),
            return_images=True,
        )
        if not math.isfinite(breakdown["L_total"]):
            raise RuntimeError(f"non-finite generator loss at step {self.step}: {breakdown}")
        self.opt_g.zero_grad(set_to_none=True)
        total.backward()
        self.opt_g.step()

        d_loss = discriminator_loss_on(self.disc, y, images["y_hat"].detach())
        if not torch.isfinite(d_loss):
            raise RuntimeError(f"non-finite discriminator loss at step {self.step}")
        self.opt_d.zero_grad(set_to_none=True)
        d_loss.backward()
        self.opt_d.step()

        record = {"step": self.step, "epoch": self.epoch, **breakdown,
                  "L_D": float(d_loss.detach()), "lr": cfg.lr}
        self.step += 1
        return record

    @torch.no_grad()
    def validation_loss(self, dataset_val: UnpairedDataset) -> float:
        """Mean total generator loss over the validation pools with a fixed
        sampling RNG, so scores are comparable across epochs."""
        rng = self._val_rng()
        self.gen.eval()
        losses = []
        for xs, ys in dataset_val.iter_batches(0, self.config.batch_size):
            total, _ = total_generator_loss(
                self.gen, self.disc, self.heads,
                to_torch_batch(xs), to_torch_batch(ys), self.weights,
                n_pixel_samples=self.config.n_pixel_samples,
                freq_config=self.freq_config, rng=rng,
            )
            losses.append(float(total))
        self.gen.train()
        return float(np.mean(losses))

    # -- persistence ---------------------------------------------------

    def state_payload(self) -> dict:
        return {
            "method": self.config.method,
            "generator": {"config": self.gen.config.to_dict(), "state": self.gen.state_dict()},
            "discriminator": {"config": self.disc_config.to_dict(), "state": self.disc.state_dict()},
            "heads": {
                "state": self.heads.state_dict(),
                "tap_widths": self.gen.tap_widths(),
                "d_f": self.freq_config.d_f if self.heads.theta is not None else None,
            },
            "optim_g": self.opt_g.state_dict(),
            "optim_d": self.opt_d.state_dict(),
            "train_config": asdict(self.config),
            "weights": asdict(self.weights),
            "freq_config": asdict(self.freq_config),
            "trainer": {
                "epoch": self.epoch,
                "step": self.step,
                "best_val_loss": self.best_val_loss,
                "best_epoch": self.best_epoch,
            },
            "torch_rng": torch.get_rng_state(),
        }

    def save(self, path: str | Path) -> Path:
        return save_checkpoint(path, self.state_payload())

    def restore(self, path: str | Path) -> None:
        payload = load_checkpoint(path)
        self.gen.load_state_dict(payload["generator"]["state"])
        self.disc.load_state_dict(payload["discriminator"]["state"])
        self.heads.load_state_dict(payload["heads"]["state"])
        self.opt_g.load_state_dict(payload["optim_g"])
        self.opt_d.load_state_dict(payload["optim_d"])
        state = payload["trainer"]
        self.epoch = state["epoch"]
        self.step = state["step"]
        self.best_val_loss = state["best_val_loss"]
        self.best_epoch = state["best_epoch"]
        torch.set_rng_state(payload["torch_rng"])


def build_contrastive_trainer(
    config: TrainConfig,
    gen_config: GeneratorConfig | None = None,
    disc_config: DiscriminatorConfig | None = None,
    weights: LossWeights | None = None,
    freq_config: FrequencyConfig | None = None,
    tile_size: int = 256,
) -> ContrastiveTrainer:
    """Construct generator, discriminator and trainer for one of the
    contrastive methods, seeding all weight initialization."""
    if config.method == "cyclegan":
        raise ValueError("use baselines.build_cyclegan_trainer for cyclegan")
    torch.manual_seed(config.seed)
    if gen_config is None:
        gen_config = (
            GeneratorConfig.attention_default()
            if config.method == "adanet"
            else GeneratorConfig.baseline_default()
        )
    disc_config = disc_config or DiscriminatorConfig()
    gen = TranslationGenerator(gen_config)
    disc = build_discriminator(disc_config)
    weights = weights or LossWeights.for_method(config.method)
    freq_config = freq_config or FrequencyConfig.for_tile(tile_size)
    return ContrastiveTrainer(gen, disc, disc_config, config, weights, freq_config)
