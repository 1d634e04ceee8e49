"""Baseline objectives: CUT, FastCUT and the dual-generator Cycle-GAN.

CUT and FastCUT are weight specializations of the five-term objective
(frequency terms off; FastCUT also drops the identity stream and raises the
spatial weight to 10). Cycle-GAN trains forward/inverse generators with two
discriminators, cycle-consistency and identity L1 terms.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .checkpoint import save_checkpoint, load_checkpoint
from .data import UnpairedDataset
from .discriminators import DiscriminatorConfig, build_discriminator, discriminator_loss_on
from .generator import GeneratorConfig, TranslationGenerator
from .training import (
    LossWeights,
    TrainConfig,
    TrainerLoop,
    to_torch_batch,
    total_generator_loss,
)


def cut_loss(gen, disc, heads, x, y, weights: LossWeights | None = None, **kwargs):
    """Adversarial + spatial + identity-spatial objective (frequency terms off)."""
    w = weights or LossWeights.for_method("cut")
    w = LossWeights(spatial=w.spatial, id_spatial=w.id_spatial, freq=0.0, id_freq=0.0, tau=w.tau)
    return total_generator_loss(gen, disc, heads, x, y, w, **kwargs)


def fastcut_loss(gen, disc, heads, x, y, weights: LossWeights | None = None, **kwargs):
    """Adversarial + spatial objective only; no identity stream is computed."""
    w = weights or LossWeights.for_method("fastcut")
    w = LossWeights(spatial=w.spatial, id_spatial=0.0, freq=0.0, id_freq=0.0, tau=w.tau)
    return total_generator_loss(gen, disc, heads, x, y, w, **kwargs)


# ---------------------------------------------------------------------------
# Cycle-GAN


@dataclass
class CycleGANPair:
    """Forward/inverse generators with their discriminators and loss weights."""

    gen_xy: TranslationGenerator  # G: X -> Y
    gen_yx: TranslationGenerator  # F: Y -> X
    disc_y: nn.Module  # judges Y-domain images
    disc_x: nn.Module  # judges X-domain images
    cycle_weight: float = 10.0
    identity_weight: float = 5.0

    def count_parameters(self) -> int:
        nets = (self.gen_xy, self.gen_yx, self.disc_y, self.disc_x)
        return sum(sum(p.numel() for p in n.parameters() if p.requires_grad) for n in nets)


def make_cyclegan_pair(
    gen_config: GeneratorConfig | None = None,
    disc_config: DiscriminatorConfig | None = None,
    cycle_weight: float = 10.0,
    identity_weight: float = 5.0,
) -> CycleGANPair:
    gcfg = gen_config or GeneratorConfig.baseline_default()
    dcfg = disc_config or DiscriminatorConfig()
    return CycleGANPair(
        gen_xy=TranslationGenerator(gcfg),
        gen_yx=TranslationGenerator(gcfg),
        disc_y=build_discriminator(dcfg),
        disc_x=build_discriminator(dcfg),
        cycle_weight=cycle_weight,
        identity_weight=identity_weight,
    )


def cyclegan_generator_loss(pair: CycleGANPair, x: torch.Tensor, y: torch.Tensor):
    """Two-sided adversarial + L1 cycle-consistency + L1 identity losses.

    Returns (total, breakdown, images) with the generated images available
    for the discriminator phase.
    """
    fake_y = pair.gen_xy(x)
    fake_x = pair.gen_yx(y)
    l_adv = (pair.disc_y(fake_y) - 1.0).pow(2).mean() + (pair.disc_x(fake_x) - 1.0).pow(2).mean()
    l_cycle = (pair.gen_yx(fake_y) - x).abs().mean() + (pair.gen_xy(fake_x) - y).abs().mean()
    l_identity = (pair.gen_xy(y) - y).abs().mean() + (pair.gen_yx(x) - x).abs().mean()
    total = l_adv + pair.cycle_weight * l_cycle + pair.identity_weight * l_identity
    breakdown = {
        "L_total": float(total.detach()),
        "L_A": float(l_adv.detach()),
        "L_cycle": float(l_cycle.detach()),
        "L_identity": float(l_identity.detach()),
    }
    return total, breakdown, {"fake_y": fake_y, "fake_x": fake_x}


def cyclegan_discriminator_losses(
    pair: CycleGANPair, x, y, fake_x, fake_y
) -> tuple[torch.Tensor, torch.Tensor]:
    """Least-squares losses for D_Y on (y, G(x)) and D_X on (x, F(y))."""
    return (
        discriminator_loss_on(pair.disc_y, y, fake_y),
        discriminator_loss_on(pair.disc_x, x, fake_x),
    )


class CycleGANTrainer(TrainerLoop):
    """Alternating trainer for the four-network Cycle-GAN configuration."""

    def __init__(self, pair: CycleGANPair, disc_config: DiscriminatorConfig, config: TrainConfig):
        self.pair = pair
        self.disc_config = disc_config
        self.config = config
        betas = (config.adam_beta1, config.adam_beta2)
        self.opt_g = torch.optim.Adam(
            itertools.chain(pair.gen_xy.parameters(), pair.gen_yx.parameters()),
            lr=config.lr, betas=betas,
        )
        self.opt_dy = torch.optim.Adam(pair.disc_y.parameters(), lr=config.lr, betas=betas)
        self.opt_dx = torch.optim.Adam(pair.disc_x.parameters(), lr=config.lr, betas=betas)
        self.epoch = 0
        self.step = 0
        self.best_val_loss = math.inf
        self.best_epoch = -1

    @property
    def gen(self) -> TranslationGenerator:
        return self.pair.gen_xy

    def train_step(self, x: torch.Tensor, y: torch.Tensor) -> dict:
        total, breakdown, images = cyclegan_generator_loss(self.pair, x, y)
        if not math.isfinite(breakdown["L_total"]):
            raise RuntimeError(f"non-finite generator loss at step {self.step}: {breakdown}")
        self.opt_g.zero_grad(set_to_none=True)
        total.backward()
        self.opt_g.step()

        # two independent discriminator iterations, sequentially
        loss_dy, loss_dx = cyclegan_discriminator_losses(
            self.pair, x, y, images["fake_x"].detach(), images["fake_y"].detach()
        )
        self.opt_dy.zero_grad(set_to_none=True)
        loss_dy.backward()
        self.opt_dy.step()
        self.opt_dx.zero_grad(set_to_none=True)
        loss_dx.backward()
        self.opt_dx.step()

        record = {
            "step": self.step, "epoch": self.epoch, **breakdown,
            "L_D": float((loss_dy + loss_dx).detach()) / 2.0, "lr": self.config.lr,
        }
        self.step += 1
        return record

    @torch.no_grad()
    def validation_loss(self, dataset_val: UnpairedDataset) -> float:
        self.pair.gen_xy.eval()
        self.pair.gen_yx.eval()
        losses = []
        for xs, ys in dataset_val.iter_batches(0, self.config.batch_size):
            total, _, _ = cyclegan_generator_loss(self.pair, to_torch_batch(xs), to_torch_batch(ys))
            losses.append(float(total))
        self.pair.gen_xy.train()
        self.pair.gen_yx.train()
        return float(np.mean(losses))

    def state_payload(self) -> dict:
        p = self.pair
        return {
            "method": "cyclegan",
            "generator": {"config": p.gen_xy.config.to_dict(), "state": p.gen_xy.state_dict()},
            "generator_inverse": {"config": p.gen_yx.config.to_dict(), "state": p.gen_yx.state_dict()},
            "discriminator": {"config": self.disc_config.to_dict(), "state": p.disc_y.state_dict()},
            "discriminator_x": {"config": self.disc_config.to_dict(), "state": p.disc_x.state_dict()},
            "optim_g": self.opt_g.state_dict(),
            "optim_dy": self.opt_dy.state_dict(),
            "optim_dx": self.opt_dx.state_dict(),
            "train_config": asdict(self.config),
            "weights": {"cycle": p.cycle_weight, "identity": p.identity_weight},
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
        self.pair.gen_xy.load_state_dict(payload["generator"]["state"])
        self.pair.gen_yx.load_state_dict(payload["generator_inverse"]["state"])
        self.pair.disc_y.load_state_dict(payload["discriminator"]["state"])
        self.pair.disc_x.load_state_dict(payload["discriminator_x"]["state"])
        self.opt_g.load_state_dict(payload["optim_g"])
        self.opt_dy.load_state_dict(payload["optim_dy"])
        self.opt_dx.load_state_dict(payload["optim_dx"])
        state = payload["trainer"]
        self.epoch = state["epoch"]
        self.step = state["step"]
        self.best_val_loss = state["best_val_loss"]
        self.best_epoch = state["best_epoch"]
        torch.set_rng_state(payload["torch_rng"])


def build_cyclegan_trainer(
    config: TrainConfig,
    gen_config: GeneratorConfig | None = None,
    disc_config: DiscriminatorConfig | None = None,
    cycle_weight: float = 10.0,
    identity_weight: float = 5.0,
) -> CycleGANTrainer:
    torch.manual_seed(config.seed)
    dcfg = disc_config or DiscriminatorConfig()
    pair = make_cyclegan_pair(gen_config, dcfg, cycle_weight, identity_weight)
    return CycleGANTrainer(pair, dcfg, config)


def build_trainer(config: TrainConfig, **kwargs):
    """Method dispatch: one entry point for all four training methods."""
    if config.method == "cyclegan":
        allowed = {"gen_config", "disc_config", "cycle_weight", "identity_weight"}
        return build_cyclegan_trainer(config, **{k: v for k, v in kwargs.items() if k in allowed})
    from .training import build_contrastive_trainer

    return build_contrastive_trainer(config, **kwargs)
