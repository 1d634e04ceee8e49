"""CUT/FastCUT reuse-equivalences, pass-count accounting, and Cycle-GAN
behavior including the exact dual-network parameter ratio."""
import numpy as np
import pytest
import torch
from torch import nn

from adanet.baselines import (
    CycleGANPair,
    CycleGANTrainer,
    build_cyclegan_trainer,
    build_trainer,
    cut_loss,
    cyclegan_discriminator_losses,
    cyclegan_generator_loss,
    fastcut_loss,
    make_cyclegan_pair,
)
from adanet.contrastive import FrequencyConfig, ProjectionHeads
from adanet.discriminators import (
    DiscriminatorConfig,
    build_discriminator,
    discriminator_loss_on,
)
from adanet.generator import GeneratorConfig, TranslationGenerator
from adanet.training import LossWeights, TrainConfig, total_generator_loss

FREQ = FrequencyConfig(patch_size=16, keep=8)


def tiny_setup(seed=0):
    torch.manual_seed(seed)
    gen = TranslationGenerator(
        GeneratorConfig.baseline_default(base_width=4, bottleneck_width=8)
    )
    disc = build_discriminator(DiscriminatorConfig(kind="pixelgan", pixel_widths=(4, 6)))
    heads = ProjectionHeads(embed_dim=16, theta_hidden=32)
    heads.build_spatial(gen.tap_widths())
    heads.build_frequency(FREQ.d_f)
    return gen, disc, heads


def tiny_batch(seed=0):
    rng = np.random.default_rng(seed)
    x = torch.tensor(rng.uniform(-1, 1, size=(2, 4, 32, 32)), dtype=torch.float32)
    y = torch.tensor(rng.uniform(-1, 1, size=(2, 4, 32, 32)), dtype=torch.float32)
    return x, y


def test_cut_equals_total_loss_with_frequency_terms_off():
    gen, disc, heads = tiny_setup()
    x, y = tiny_batch()
    kwargs = dict(n_pixel_samples=8, freq_config=FREQ)
    total_cut, _ = cut_loss(
        gen, disc, heads, x, y, rng=np.random.default_rng(0), **kwargs
    )
    w = LossWeights(spatial=0.5, id_spatial=0.5, freq=0.0, id_freq=0.0)
    total_ref, _ = total_generator_loss(
        gen, disc, heads, x, y, w, rng=np.random.default_rng(0), **kwargs
    )
    assert abs(float(total_cut.detach()) - float(total_ref.detach())) < 1e-7


def test_fastcut_equals_cut_with_identity_off_and_weight_ten():
    gen, disc, heads = tiny_setup(1)
    x, y = tiny_batch(1)
    kwargs = dict(n_pixel_samples=8, freq_config=FREQ)
    total_fast, _ = fastcut_loss(
        gen, disc, heads, x, y, rng=np.random.default_rng(0), **kwargs
    )
    w = LossWeights(spatial=10.0, id_spatial=0.0, freq=0.0, id_freq=0.0)
    total_ref, _ = cut_loss(
        gen, disc, heads, x, y, weights=w, rng=np.random.default_rng(0), **kwargs
    )
    assert abs(float(total_fast.detach()) - float(total_ref.detach())) < 1e-7


def test_zero_weights_reduce_to_pure_adversarial():
    gen, disc, heads = tiny_setup(2)
    x, y = tiny_batch(2)
    w = LossWeights(spatial=0.0, id_spatial=0.0, freq=0.0, id_freq=0.0)
    total, bd = cut_loss(gen, disc, heads, x, y, weights=w, freq_config=FREQ)
    assert float(total.detach()) == bd["L_A"]
    total_f, bd_f = fastcut_loss(gen, disc, heads, x, y, weights=w, freq_config=FREQ)
    assert float(total_f.detach()) == bd_f["L_A"]


def test_cut_breakdown_recomposes():
    gen, disc, heads = tiny_setup(3)
    x, y = tiny_batch(3)
    total, bd = cut_loss(
        gen, disc, heads, x, y, n_pixel_samples=8, freq_config=FREQ,
        rng=np.random.default_rng(0),
    )
    expected = bd["L_A"] + 0.5 * bd["L_Spatial"] + 0.5 * bd["L_IDSpatial"]
    assert float(total.detach()) == pytest.approx(expected, abs=1e-6)
    assert bd["L_Freq"] == bd["L_IDFreq"] == 0.0


def test_fastcut_uses_fewer_generator_passes():
    gen, disc, heads = tiny_setup(4)
    x, y = tiny_batch(4)
    counter = {"passes": 0}

    def count(module, args):
        counter["passes"] += 1

    handle = gen.register_forward_pre_hook(count)
    kwargs = dict(n_pixel_samples=8, freq_config=FREQ, rng=np.random.default_rng(0))
    cut_loss(gen, disc, heads, x, y, **kwargs)
    cut_passes = counter["passes"]
    counter["passes"] = 0
    fastcut_loss(gen, disc, heads, x, y, n_pixel_samples=8, freq_config=FREQ,
                 rng=np.random.default_rng(0))
    fast_passes = counter["passes"]
    handle.remove()
    # the identity stream (y and G(y) passes) disappears entirely
    assert cut_passes == 4
    assert fast_passes == 2
    assert fast_passes < cut_passes


# -- Cycle-GAN ----------------------------------------------------------------


def tiny_pair(seed=0):
    torch.manual_seed(seed)
    return make_cyclegan_pair(
        gen_config=GeneratorConfig.baseline_default(base_width=4, bottleneck_width=8),
        disc_config=DiscriminatorConfig(kind="pixelgan", pixel_widths=(4, 6)),
    )


def test_identity_generators_zero_cycle_and_identity_losses():
    pair = tiny_pair()
    pair.gen_xy = nn.Identity()
    pair.gen_yx = nn.Identity()
    x, y = tiny_batch(5)
    _, bd, _ = cyclegan_generator_loss(pair, x, y)
    assert bd["L_cycle"] == 0.0
    assert bd["L_identity"] == 0.0


def test_zero_cycle_weights_leave_pure_adversarial():
    pair = tiny_pair(1)
    pair.cycle_weight = 0.0
    pair.identity_weight = 0.0
    x, y = tiny_batch(6)
    total, bd, _ = cyclegan_generator_loss(pair, x, y)
    assert float(total.detach()) == pytest.approx(bd["L_A"], abs=1e-7)


def test_cyclegan_losses_match_scalar_norm_oracle():
    # replay fixed tiny tensors through the formula with python loops
    rng = np.random.default_rng(7)
    x = torch.tensor(rng.normal(size=(1, 4, 8, 8)), dtype=torch.float64)
    y = torch.tensor(rng.normal(size=(1, 4, 8, 8)), dtype=torch.float64)

    class Affine(nn.Module):
        def __init__(self, scale, shift):
            super().__init__()
            self.scale, self.shift = scale, shift

        def forward(self, t):
            return self.scale * t + self.shift

    class MeanDisc(nn.Module):
        def forward(self, t):
            return t.mean(dim=1, keepdim=True)

    pair = CycleGANPair(
        gen_xy=Affine(0.9, 0.05), gen_yx=Affine(1.1, -0.02),
        disc_y=MeanDisc(), disc_x=MeanDisc(),
        cycle_weight=10.0, identity_weight=5.0,
    )
    total, bd, _ = cyclegan_generator_loss(pair, x, y)

    def l2sq_mean(t):
        return float(np.mean([v**2 for v in t.numpy().ravel()]))

    def l1_mean(t):
        return float(np.mean([abs(v) for v in t.numpy().ravel()]))

    fake_y = 0.9 * x + 0.05
    fake_x = 1.1 * y - 0.02
    adv = l2sq_mean(fake_y.mean(dim=1, keepdim=True) - 1) + l2sq_mean(
        fake_x.mean(dim=1, keepdim=True) - 1
    )
    cycle = l1_mean(1.1 * fake_y - 0.02 - x) + l1_mean(0.9 * fake_x + 0.05 - y)
    identity = l1_mean(0.9 * y + 0.05 - y) + l1_mean(1.1 * x - 0.02 - x)
    assert bd["L_A"] == pytest.approx(adv, abs=1e-6)
    assert bd["L_cycle"] == pytest.approx(cycle, abs=1e-6)
    assert bd["L_identity"] == pytest.approx(identity, abs=1e-6)
    assert float(total.detach()) == pytest.approx(adv + 10 * cycle + 5 * identity, abs=1e-5)


def test_discriminator_losses_match_two_independent_calls():
    pair = tiny_pair(2)
    x, y = tiny_batch(8)
    with torch.no_grad():
        fake_y = pair.gen_xy(x)
        fake_x = pair.gen_yx(y)
    with torch.no_grad():
        loss_dy, loss_dx = cyclegan_discriminator_losses(pair, x, y, fake_x, fake_y)
        ref_dy = discriminator_loss_on(pair.disc_y, y, fake_y)
        ref_dx = discriminator_loss_on(pair.disc_x, x, fake_x)
    assert float(loss_dy) == pytest.approx(float(ref_dy), abs=1e-7)
    assert float(loss_dx) == pytest.approx(float(ref_dx), abs=1e-7)


def test_one_discriminator_update_leaves_the_other_untouched():
    cfg = TrainConfig(method="cyclegan", epochs=1, batch_size=2, learning_rate=1e-3, seed=9)
    trainer = build_cyclegan_trainer(
        cfg,
        gen_config=GeneratorConfig.baseline_default(base_width=4, bottleneck_width=8),
        disc_config=DiscriminatorConfig(kind="pixelgan", pixel_widths=(4, 6)),
    )
    for group in trainer.opt_dy.param_groups:
        group["lr"] = 0.0
    x, y = tiny_batch(9)
    before_dy = [p.detach().clone() for p in trainer.pair.disc_y.parameters()]
    before_dx = [p.detach().clone() for p in trainer.pair.disc_x.parameters()]
    trainer.train_step(x, y)
    assert all(torch.equal(a, b) for a, b in zip(before_dy, trainer.pair.disc_y.parameters()))
    assert not all(torch.equal(a, b) for a, b in zip(before_dx, trainer.pair.disc_x.parameters()))


def test_cyclegan_parameter_count_is_exactly_double():
    pair = make_cyclegan_pair()
    gen = TranslationGenerator(GeneratorConfig.baseline_default())
    disc = build_discriminator(DiscriminatorConfig(kind="patchgan"))
    single = gen.count_parameters() + sum(p.numel() for p in disc.parameters())
    assert pair.count_parameters() == 2 * single


def test_build_trainer_dispatch():
    contrastive = build_trainer(
        TrainConfig(method="cut", epochs=1, learning_rate=1e-3),
        gen_config=GeneratorConfig.baseline_default(base_width=4, bottleneck_width=8),
        disc_config=DiscriminatorConfig(kind="pixelgan", pixel_widths=(4, 6)),
        freq_config=FREQ,
    )
    assert contrastive.__class__.__name__ == "ContrastiveTrainer"
    cyclegan = build_trainer(
        TrainConfig(method="cyclegan", epochs=1, learning_rate=1e-3),
        gen_config=GeneratorConfig.baseline_default(base_width=4, bottleneck_width=8),
        disc_config=DiscriminatorConfig(kind="pixelgan", pixel_widths=(4, 6)),
    )
    assert isinstance(cyclegan, CycleGANTrainer)
