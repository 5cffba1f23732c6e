import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from vasis_lab.core import RngStream, one_hot_encode
from vasis_lab.data_io import SyntheticSpec, generate_dataset, stack_dataset
from vasis_lab.networks import (
    DiscriminatorSpec, Generator, GeneratorSpec, RandomConvPyramid, build_discriminator,
    class_balance_weights, feature_matching_loss, generator_forward, hinge_d_loss, hinge_g_loss,
    oasis_ce_loss, patch_discriminator_forward, perceptual_loss, seg_discriminator_forward,
)
from vasis_lab.training import TrainRecipe, build_models, build_state, sample_batch, train_step
from vasis_lab.vasis import VariantConfig
from helpers import layout_from


def _gen(variant=None, **kw):
    spec = GeneratorSpec(num_classes=3, base_channels=8, hidden=8, variant=variant or VariantConfig(), **kw)
    return Generator(spec, RngStream(0, 4)).double()


def test_generator_output_shape():
    gen = _gen()
    layout = layout_from(torch.randint(0, 3, (2, 64, 64)), 3)
    with torch.no_grad():
        img = gen(torch.randn(2, 64, dtype=torch.float64), layout, RngStream(0, 2))
    assert img.shape == (2, 3, 64, 64)


def test_generator_deterministic():
    gen = _gen()
    layout = layout_from(torch.randint(0, 3, (1, 64, 64)), 3)
    z = torch.randn(1, 64, dtype=torch.float64)
    with torch.no_grad():
        a = generator_forward(z, layout, gen, rng=RngStream(4, 2))
        b = generator_forward(z, layout, gen, rng=RngStream(4, 2))
    assert torch.equal(a, b)


def test_generator_constant_class_constancy():
    cfg = VariantConfig.baseline("clade_sample", padding_mode="reflect")
    gen = _gen(cfg)
    layout = layout_from(torch.full((1, 64, 64), 2), 3)
    with torch.no_grad():
        img = gen(torch.randn(1, 64, dtype=torch.float64), layout)
    assert float((img - img[..., :1, :1]).abs().max()) == 0


def test_generator_deep_interior_pixels_match():
    # two 16-aligned copies of one motif far apart on a large canvas: equal outputs
    cfg = VariantConfig.baseline("clade_sample", padding_mode="reflect")
    gen = _gen(cfg)
    labels = torch.zeros(1, 192, 192, dtype=torch.long)
    labels[0, 48:64, 48:64] = 1
    labels[0, 128:144, 128:144] = 1
    with torch.no_grad():
        img = gen(torch.randn(1, 64, dtype=torch.float64), layout_from(labels, 3), strict_size=False)
    assert torch.equal(img[..., 48:64, 48:64], img[..., 128:144, 128:144])


def test_generator_rejects_wrong_resolution():
    with pytest.raises(ValueError, match="generator produces"):
        _gen()(torch.zeros(1, 64, dtype=torch.float64), layout_from(torch.zeros(1, 32, 32, dtype=torch.long), 3))


@settings(max_examples=10, deadline=None)
@given(st.floats(1e-3, 1e4))
def test_generator_output_bounded(scale):
    gen = _gen(init_res=1)
    layout = layout_from(torch.randint(0, 3, (1, 16, 16)), 3)
    with torch.no_grad():
        img = gen(torch.randn(1, 64, dtype=torch.float64) * scale, layout, RngStream(0, 2))
    assert bool(torch.isfinite(img).all()) and float(img.abs().max()) <= 1


def test_patch_discriminator_shapes_and_features():
    spec = DiscriminatorSpec(num_classes=3)
    disc = build_discriminator(spec)
    layout = layout_from(torch.randint(0, 3, (2, 64, 64)), 3, torch.float32)
    out = patch_discriminator_forward(torch.randn(2, 3, 64, 64), layout, disc)
    assert [o[0].shape for o in out] == [(2, 1, 16, 16), (2, 1, 8, 8)]
    assert all(len(o[1]) == spec.depth for o in out)


def test_patch_discriminator_batch_equivariant():
    disc = build_discriminator(DiscriminatorSpec(num_classes=2)).double()
    img = torch.randn(3, 3, 32, 32, dtype=torch.float64)
    layout = layout_from(torch.randint(0, 2, (3, 32, 32)), 2)
    perm = torch.tensor([2, 0, 1])
    with torch.no_grad():
        a = disc(img, layout)
        b = disc(img[perm], layout[perm])
    for (la, _), (lb, _) in zip(a, b):
        assert torch.equal(la[perm], lb)


def test_patch_discriminator_misalignment():
    disc = build_discriminator(DiscriminatorSpec(num_classes=2))
    with pytest.raises(ValueError, match="misaligned"):
        disc(torch.zeros(1, 3, 32, 32), torch.zeros(1, 2, 16, 16))


def test_seg_discriminator_shape_and_softmax():
    disc = build_discriminator(DiscriminatorSpec(num_classes=5, kind="segmentation"))
    logits = seg_discriminator_forward(torch.randn(2, 3, 64, 64), disc)
    assert logits.shape == (2, 6, 64, 64)
    assert torch.allclose(logits.softmax(1).sum(1), torch.ones(2, 64, 64), atol=1e-6)


def test_seg_discriminator_gradient_check():
    disc = build_discriminator(DiscriminatorSpec(num_classes=2, kind="segmentation", base_channels=2)).double()
    names = [n for n, _ in disc.named_parameters()]
    img = torch.randn(1, 3, 8, 8, dtype=torch.float64, requires_grad=True)
    params = tuple(p.detach().clone().requires_grad_() for p in disc.parameters())

    def f(x, *ps):
        return torch.func.functional_call(disc, dict(zip(names, ps)), (x,))

    assert torch.autograd.gradcheck(f, (img, *params), eps=1e-6, atol=1e-6, rtol=1e-4)


def test_hinge_examples():
    assert hinge_d_loss(torch.full((4,), 1.5), torch.full((4,), -2.0)).item() == 0
    assert hinge_d_loss(torch.zeros(4), torch.zeros(4)).item() == 2
    assert hinge_g_loss(torch.full((3,), 2.0)).item() == -2
    assert hinge_g_loss(torch.zeros(3)).item() == 0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.floats(-5, 5))
def test_hinge_properties(seed, a):
    g = torch.Generator().manual_seed(seed)
    real, fake = torch.randn(10, generator=g, dtype=torch.float64), torch.randn(10, generator=g, dtype=torch.float64)
    assert hinge_d_loss(real * 3, fake * 3).item() >= 0
    assert hinge_g_loss(fake * a).item() == pytest.approx(a * hinge_g_loss(fake).item(), abs=1e-12)


def test_feature_matching_examples():
    feats = [torch.randn(2, 3, 4, 4), torch.randn(2, 5, 2, 2)]
    assert feature_matching_loss(feats, feats).item() == 0
    shifted = [f + 0.25 for f in feats]
    assert feature_matching_loss(feats, shifted).item() == pytest.approx(0.25, abs=1e-6)
    assert feature_matching_loss([feats, feats], [shifted, feats]).item() == pytest.approx(0.125, abs=1e-6)


def test_feature_matching_structure_mismatch():
    with pytest.raises(ValueError):
        feature_matching_loss([torch.zeros(1)], [torch.zeros(1), torch.zeros(1)])


def test_feature_matching_detaches_real_side():
    real = [torch.randn(3, requires_grad=True)]
    fake = [torch.randn(3, requires_grad=True)]
    feature_matching_loss(real, fake).backward()
    assert real[0].grad is None and fake[0].grad is not None


def test_perceptual_loss_properties():
    a, b = torch.rand(2, 3, 32, 32) * 2 - 1, torch.rand(2, 3, 32, 32) * 2 - 1
    assert perceptual_loss(a, a).item() == 0
    assert perceptual_loss(a, b).item() == pytest.approx(perceptual_loss(b, a).item(), rel=1e-6)
    vals = [perceptual_loss(a, (1 - t) * b + t * a).item() for t in (0.0, 0.5, 0.9)]
    assert vals[0] > vals[1] > vals[2] > 0


def test_pyramid_is_frozen_and_seeded():
    a, b = RandomConvPyramid(), RandomConvPyramid()
    assert all(not p.requires_grad for p in a.parameters())
    assert all(torch.equal(p, q) for p, q in zip(a.parameters(), b.parameters()))


def test_oasis_ce_confident_and_uniform():
    labels = torch.randint(0, 3, (2, 8, 8))
    layout = layout_from(labels, 3, torch.float32)
    logits = torch.full((2, 4, 8, 8), -50.0)
    logits.scatter_(1, labels[:, None], 50.0)
    assert oasis_ce_loss(logits, layout, "real").item() < 1e-12
    single = layout_from(torch.zeros(1, 8, 8, dtype=torch.long), 3, torch.float64)
    uniform = torch.zeros(1, 4, 8, 8, dtype=torch.float64)
    assert oasis_ce_loss(uniform, single, "fake").item() == pytest.approx(math.log(4), abs=1e-12)


def test_oasis_ce_invalid_target():
    with pytest.raises(ValueError):
        oasis_ce_loss(torch.zeros(1, 3, 2, 2), layout_from(torch.zeros(2, 2, dtype=torch.long), 2), "both")


def test_class_balance_weights_favour_rare_classes():
    labels = torch.zeros(1, 10, 10, dtype=torch.long)
    labels[0, 0, :5] = 1
    w = class_balance_weights(labels, 3)
    assert w[1] > w[0] and w[2] == 0
    assert float(w[:2].mean()) == pytest.approx(1.0)


def _tiny_setup(kind="patch_multiscale", variant=None, lr=None):
    gspec = GeneratorSpec(num_classes=2, base_channels=8, hidden=8, init_res=2,
                          variant=variant or VariantConfig())
    dspec = DiscriminatorSpec(num_classes=2, kind=kind, base_channels=8)
    recipe = TrainRecipe(batch_size=2) if lr is None else TrainRecipe(batch_size=2, lr_g=lr, lr_d=lr)
    ds = SyntheticSpec(num_classes=2, resolution=32, family="sky_road", amplitudes=(0.0, 0.3), count=8)
    labels, images = stack_dataset(generate_dataset(ds))
    data = one_hot_encode(torch.from_numpy(labels), 2), torch.from_numpy(images)
    return gspec, dspec, recipe, data


def _run(steps, **kw):
    gspec, dspec, recipe, (layouts, images) = _tiny_setup(**kw)
    state = build_state(gspec, dspec, recipe, seed=3)
    reports = [train_step(sample_batch(state, layouts, images, 2), state, recipe) for _ in range(steps)]
    return state, reports


def test_train_step_deterministic():
    _, a = _run(3)
    _, b = _run(3)
    assert [r.losses for r in a] == [r.losses for r in b]
    assert [r.grad_norms for r in a] == [r.grad_norms for r in b]


def test_train_step_zero_lr_keeps_parameters():
    gspec, dspec, _, _ = _tiny_setup()
    before = [p.clone() for p in build_models(gspec, dspec, 3)[0].parameters()]
    state, _ = _run(2, lr=0.0)
    assert all(torch.equal(a, b) for a, b in zip(before, state.generator.parameters()))


def test_train_step_updates_parameters():
    gspec, dspec, _, _ = _tiny_setup()
    before = [p.clone() for p in build_models(gspec, dspec, 3)[0].parameters()]
    state, _ = _run(1)
    assert any(not torch.equal(a, b) for a, b in zip(before, state.generator.parameters()))


def test_segmentation_recipe_runs():
    _, reports = _run(2, kind="segmentation")
    assert all(np.isfinite(list(r.losses.values())).all() for r in reports)


@pytest.mark.slow
def test_two_hundred_steps_stay_finite():
    _, reports = _run(200)
    assert all(math.isfinite(v) for r in reports for v in r.losses.values())
