"""One-step adversarial training (D update, then G update) with determinism hooks."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch

from .core import RngStream
from .networks import (
    Generator, build_discriminator, feature_matching_loss, hinge_d_loss, hinge_g_loss,
    oasis_ce_loss, perceptual_loss,
)

# Stream ids derived from the run seed.
STREAM_INIT = 0
STREAM_LATENT = 1
STREAM_NOISE = 2
STREAM_BATCH = 3
STREAM_CODE = 4


@dataclass(frozen=True)
class TrainRecipe:
    steps: int = 2000
    batch_size: int = 4
    lr_g: float = 1e-4
    lr_d: float = 4e-4
    beta1: float = 0.0
    beta2: float = 0.999
    w_gan: float = 1.0
    w_fm: float = 10.0
    w_perceptual: float = 10.0


@dataclass
class StepReport:
    step: int
    losses: dict = field(default_factory=dict)
    grad_norms: dict = field(default_factory=dict)


class NonFiniteLossError(FloatingPointError):
    def __init__(self, seed, step, parts):
        self.seed, self.step, self.parts = seed, step, dict(parts)
        detail = ", ".join(f"{k}={v}" for k, v in self.parts.items())
        super().__init__(f"non-finite loss at step {step} (seed {seed}): {detail}")


@dataclass
class TrainState:
    generator: Generator
    discriminator: torch.nn.Module
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    seed: int
    step: int = 0
    rng_latent: RngStream = None
    rng_noise: RngStream = None
    rng_batch: RngStream = None

    def rng_streams(self):
        return {"latent": self.rng_latent, "noise": self.rng_noise, "batch": self.rng_batch}


def build_models(gspec, dspec, seed, dtype=torch.float32):
    """Generator and discriminator initialised deterministically from ``seed``."""
    init = RngStream(seed, STREAM_INIT)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(init.torch_seed())
        gen = Generator(gspec, RngStream(seed, STREAM_CODE))
        disc = build_discriminator(dspec)
    return gen.to(dtype), disc.to(dtype)


def build_state(gspec, dspec, recipe, seed, dtype=torch.float32):
    gen, disc = build_models(gspec, dspec, seed, dtype)
    betas = (recipe.beta1, recipe.beta2)
    return TrainState(
        generator=gen,
        discriminator=disc,
        opt_g=torch.optim.Adam(gen.parameters(), lr=recipe.lr_g, betas=betas),
        opt_d=torch.optim.Adam(disc.parameters(), lr=recipe.lr_d, betas=betas),
        seed=seed,
        rng_latent=RngStream(seed, STREAM_LATENT),
        rng_noise=RngStream(seed, STREAM_NOISE),
        rng_batch=RngStream(seed, STREAM_BATCH),
    )


def sample_batch(state, layouts, images, batch_size):
    idx = torch.from_numpy(state.rng_batch.integers(0, layouts.shape[0], size=batch_size))
    return layouts[idx], images[idx]


def _grad_norm(module):
    sq = [p.grad.pow(2).sum() for p in module.parameters() if p.grad is not None]
    return float(torch.stack(sq).sum().sqrt()) if sq else 0.0


def _generate(state, layout):
    g = state.generator
    z = state.rng_latent.normal((layout.shape[0], g.spec.latent_dim), dtype=layout.dtype)
    return g(z, layout, state.rng_noise)


def discriminator_loss(disc, real, fake, layout):
    if disc.spec.kind == "segmentation":
        loss = oasis_ce_loss(disc(real), layout, "real") + oasis_ce_loss(disc(fake), layout, "fake")
        return loss, {"d_real_fake": float(loss.detach())}
    real_out, fake_out = disc(real, layout), disc(fake, layout)
    loss = sum(hinge_d_loss(r[0], f[0]) for r, f in zip(real_out, fake_out)) / len(real_out)
    return loss, {"d_hinge": float(loss.detach())}


def generator_loss(disc, real, fake, layout, recipe, extractor=None):
    if disc.spec.kind == "segmentation":
        gan = oasis_ce_loss(disc(fake), layout, "real")
        return recipe.w_gan * gan, {"g_gan": float(gan.detach())}
    fake_out = disc(fake, layout)
    gan = sum(hinge_g_loss(f[0]) for f in fake_out) / len(fake_out)
    total, parts = recipe.w_gan * gan, {"g_gan": float(gan.detach())}
    if recipe.w_fm:
        with torch.no_grad():
            real_out = disc(real, layout)
        fm = feature_matching_loss([r[1] for r in real_out], [f[1] for f in fake_out])
        total = total + recipe.w_fm * fm
        parts["g_fm"] = float(fm.detach())
    if recipe.w_perceptual:
        perc = perceptual_loss(real, fake, extractor)
        total = total + recipe.w_perceptual * perc
        parts["g_perceptual"] = float(perc.detach())
    return total, parts


def _check(state, parts):
    if not all(math.isfinite(v) for v in parts.values()):
        raise NonFiniteLossError(state.seed, state.step, parts)


def train_step(batch, state, recipe, extractor=None):
    """One discriminator update followed by one generator update."""
    layout, real = batch
    gen, disc = state.generator, state.discriminator
    report = StepReport(step=state.step)

    with torch.no_grad():
        fake = _generate(state, layout)
    state.opt_d.zero_grad(set_to_none=True)
    d_loss, parts = discriminator_loss(disc, real, fake, layout)
    _check(state, parts)
    d_loss.backward()
    report.grad_norms["d"] = _grad_norm(disc)
    state.opt_d.step()
    report.losses.update(parts)

    state.opt_g.zero_grad(set_to_none=True)
    disc.requires_grad_(False)
    try:
        fake = _generate(state, layout)
        g_loss, parts = generator_loss(disc, real, fake, layout, recipe, extractor)
        parts["g_total"] = float(g_loss.detach())
        _check(state, parts)
        g_loss.backward()
    finally:
        disc.requires_grad_(True)
    report.grad_norms["g"] = _grad_norm(gen)
    state.opt_g.step()
    report.losses.update(parts)

    state.step += 1
    return report
