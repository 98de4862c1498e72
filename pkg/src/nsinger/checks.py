"""Finite-difference checks of the model's building blocks and full objectives.

Everything runs on the tiny float64 configuration, where central
differences are accurate enough to compare with autograd at 1e-4.
"""
from __future__ import annotations

import torch

from .discriminator import (DiscriminatorConfig, VoicingAwareDiscriminators, condition_tensor,
                            loss_adversarial, loss_discriminator)
from .gradcheck import GradCheckReport, finite_difference_check
from .layers import FFTBlock, Highway
from .model import Generator, GeneratorConfig, loss_mel_generator, loss_postnet
from .score import N_PHONEMES

DTYPE = torch.float64


def tiny_batch(n_frames: int = 12, cfg: GeneratorConfig = GeneratorConfig.tiny(), seed: int = 0):
    """A random batch of one clip with mixed voicing and targets inside (0, 1)."""
    g = torch.Generator().manual_seed(seed)
    L = n_frames
    vuv = (torch.arange(L) % 5 < 3).long().unsqueeze(0)
    f0 = torch.where(vuv > 0, 200 + 200 * torch.rand(1, L, generator=g, dtype=DTYPE),
                     torch.zeros(1, L, dtype=DTYPE))
    return {
        "mel": 0.05 + 0.9 * torch.rand(1, cfg.mel_bins, L, generator=g, dtype=DTYPE),
        "phonemes": torch.randint(0, N_PHONEMES, (1, L), generator=g),
        "pitches": torch.randint(0, cfg.n_pitches, (1, L), generator=g),
        "f0": f0,
        "vuv": vuv,
        "mask": torch.ones(1, L, dtype=torch.bool),
    }


def tiny_models(seed: int = 0):
    torch.manual_seed(seed)
    gen = Generator(GeneratorConfig.tiny()).to(DTYPE)
    disc = VoicingAwareDiscriminators(DiscriminatorConfig.tiny()).to(DTYPE)
    return gen, disc


def generator_objective_check(n_samples: int = 256, tolerance: float = 1e-4,
                              lam_p: float = 0.5, lam_adv: float = 0.5, step: int = 10,
                              n_frames: int = 12, seed: int = 0, gen=None, disc=None,
                              ) -> GradCheckReport:
    """``L_mg + lam_p * L_mp + lam_adv * L_adv`` w.r.t. the generator parameters."""
    if gen is None or disc is None:
        gen, disc = tiny_models(seed)
    b = tiny_batch(n_frames, gen.cfg, seed)
    c = condition_tensor(b["f0"], b["vuv"])

    def objective():
        out = gen(b["phonemes"], b["pitches"], b["mask"])
        l_mg, _ = loss_mel_generator(b["mel"], out, step, mask=b["mask"], strict=False)
        l_mp = loss_postnet(b["mel"], out.M_P, b["mask"], strict=False)
        l_adv = loss_adversarial(disc, out.M_P, c, b["vuv"], b["mask"])
        return l_mg + lam_p * l_mp + lam_adv * l_adv

    return finite_difference_check(objective, dict(gen.named_parameters()),
                                   tolerance=tolerance, n_samples=n_samples, seed=seed)


def discriminator_objective_check(n_samples: int = 128, tolerance: float = 1e-4,
                                  n_frames: int = 12, seed: int = 0) -> GradCheckReport:
    """``L_dis`` w.r.t. the discriminator parameters, with a fixed fake mel."""
    gen, disc = tiny_models(seed)
    b = tiny_batch(n_frames, gen.cfg, seed)
    c = condition_tensor(b["f0"], b["vuv"])
    with torch.no_grad():
        fake = gen(b["phonemes"], b["pitches"]).M_P

    def objective():
        return loss_discriminator(disc, b["mel"], fake, c, b["vuv"], b["mask"])

    return finite_difference_check(objective, dict(disc.named_parameters()),
                                   tolerance=tolerance, n_samples=n_samples, seed=seed)


def _projection_check(module, inputs, tolerance, n_samples, seed, forward=None):
    g = torch.Generator().manual_seed(seed + 1)
    forward = forward or (lambda: module(*inputs))
    with torch.no_grad():
        weights = torch.randn(forward().shape, generator=g, dtype=DTYPE)

    def objective():
        return (forward() * weights).sum()

    return finite_difference_check(objective, dict(module.named_parameters()),
                                   tolerance=tolerance, n_samples=n_samples, seed=seed)


def block_checks(tolerance: float = 1e-4, n_samples: int = 64, seed: int = 0,
                 n_frames: int = 12) -> dict[str, GradCheckReport]:
    """One report per block: a random linear read-out of its output is differentiated."""
    gen, disc = tiny_models(seed)
    cfg = gen.cfg
    b = tiny_batch(n_frames, cfg, seed)
    g = torch.Generator().manual_seed(seed + 2)
    x = torch.randn(1, cfg.model_dim, n_frames, generator=g, dtype=DTYPE)
    h = torch.randn(1, cfg.postnet_hidden, n_frames, generator=g, dtype=DTYPE)
    c = condition_tensor(b["f0"], b["vuv"])

    fft = FFTBlock(cfg.block).to(DTYPE)
    highway = Highway(cfg.postnet_hidden, cfg.postnet_kernel).to(DTYPE)
    with torch.no_grad():
        e_t = gen.encode(b["phonemes"], "phoneme")
        e_p = gen.encode(b["pitches"], "pitch")
        m_d = gen(b["phonemes"], b["pitches"]).M_D
    checks = {
        "fft_block": _projection_check(fft, (x,), tolerance, n_samples, seed),
        "highway": _projection_check(highway, (h,), tolerance, n_samples, seed),
        "phoneme_encoder": _projection_check(gen.phoneme_encoder, (b["phonemes"],), tolerance,
                                             n_samples, seed),
        "pitch_decoder": _projection_check(gen.pitch_decoder, (e_p,), tolerance, n_samples, seed),
        "postnet": _projection_check(gen.postnet, (m_d, e_t, e_p), tolerance, n_samples, seed),
        "voiced_discriminator": _projection_check(disc.voiced, (b["mel"], c), tolerance,
                                                  n_samples, seed),
        "unvoiced_discriminator": _projection_check(disc.unvoiced, (b["mel"], c), tolerance,
                                                    n_samples, seed),
    }
    return checks


def full_checks(tolerance: float = 1e-4, n_samples: int = 256, seed: int = 0,
                inject_nan: bool = False) -> dict[str, GradCheckReport]:
    """Per-block reports plus the full generator and discriminator objectives."""
    reports = block_checks(tolerance, min(n_samples, 64), seed)
    gen, disc = tiny_models(seed)
    if inject_nan:
        with torch.no_grad():
            gen.postnet.proj.bias[0] = float("nan")
    reports["L_G"] = generator_objective_check(n_samples, tolerance, seed=seed, gen=gen, disc=disc)
    reports["L_dis"] = discriminator_objective_check(min(n_samples, 128), tolerance, seed=seed)
    return reports
