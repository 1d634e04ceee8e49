"""Generator contract tests: shape/range, determinism, feature taps and
parameter accounting."""
import pytest
import torch

from adanet.generator import GeneratorConfig, TranslationGenerator


def small_config(**kw):
    params = dict(base_width=8, bottleneck_width=16)
    params.update(kw)
    return GeneratorConfig(**params)


def test_output_shape_matches_input():
    gen = TranslationGenerator(small_config())
    x = torch.rand(2, 4, 64, 64) * 2 - 1
    assert gen(x).shape == x.shape


def test_output_bounded_by_tanh():
    gen = TranslationGenerator(small_config())
    x = torch.rand(1, 4, 32, 32) * 2 - 1
    out = gen(x)
    assert out.min() >= -1.0 and out.max() <= 1.0


def test_eval_forward_is_bit_identical():
    torch.manual_seed(0)
    gen = TranslationGenerator(small_config())
    gen.eval()
    x = torch.rand(1, 4, 32, 32) * 2 - 1
    with torch.no_grad():
        a, b = gen(x), gen(x)
    assert torch.equal(a, b)


def test_unnormalized_input_warns():
    gen = TranslationGenerator(small_config())
    with pytest.warns(UserWarning, match="normalize"):
        gen(torch.full((1, 4, 32, 32), 3.0))


def test_tap_zero_is_the_input_image():
    gen = TranslationGenerator(small_config())
    x = torch.rand(1, 4, 32, 32) * 2 - 1
    feats = gen.extract_features(x)
    assert torch.equal(feats[0], x)


def test_extract_features_returns_five_maps():
    gen = TranslationGenerator(small_config())
    feats = gen.extract_features(torch.rand(1, 4, 32, 32) * 2 - 1)
    assert len(feats) == 5


def test_taps_match_forward_hook_instrumentation():
    # capture stage outputs with hooks and compare with extract_features
    torch.manual_seed(1)
    gen = TranslationGenerator(small_config())
    gen.eval()
    x = torch.rand(1, 4, 32, 32) * 2 - 1
    captured = {}
    handles = []
    for idx in gen.config.tap_layers:
        if idx == 0:
            continue

        def hook(module, args, output, idx=idx):
            captured[idx] = output.detach().clone()

        handles.append(gen.stages[idx].register_forward_hook(hook))
    with torch.no_grad():
        feats = gen.extract_features(x)
    for h in handles:
        h.remove()
    for pos, idx in enumerate(gen.config.tap_layers):
        expected = x if idx == 0 else captured[idx]
        assert torch.equal(feats[pos], expected)


def test_tap_out_of_range_rejected_at_construction():
    with pytest.raises(ValueError, match="tap layer"):
        TranslationGenerator(small_config(tap_layers=(0, 1, 3, 5, 99)))


def test_baseline_config_has_nine_blocks_and_24_convs():
    gen = TranslationGenerator(GeneratorConfig.baseline_default(base_width=8, bottleneck_width=16))
    n_blocks = sum(
        1 for m in gen.stages if m.__class__.__name__ == "ResnetBlock"
    )
    assert n_blocks == 9
    n_convs = sum(1 for m in gen.modules() if isinstance(m, torch.nn.Conv2d))
    assert n_convs == 24


def test_attention_config_structure():
    gen = TranslationGenerator()
    names = [m.__class__.__name__ for m in gen.stages]
    assert names.count("ResnetBlock") == 4
    assert names.count("ResidualSelfAttention") == 1


def test_default_parameter_count():
    # frozen default widths; the budget bands live in the acceptance suite
    gen = TranslationGenerator()
    assert gen.count_parameters() == 6_307_937
    cut = TranslationGenerator(GeneratorConfig.baseline_default())
    assert cut.count_parameters() == 11_384_452


def test_tap_widths_probe():
    gen = TranslationGenerator(small_config())
    assert gen.tap_widths() == [4, 8, 16, 16, 16]
