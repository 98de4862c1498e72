"""Voicing-aware conditional projection discriminators.

One discriminator sees the voiced frames, one the unvoiced frames. Both
score every frame; the V/UV mask then picks which frames count toward each
one's loss.
"""
from __future__ import annotations

from contextlib import contextmanager
from dataclasses import asdict, dataclass, fields

import torch
from torch import nn
from torch.nn import functional as F

from .errors import ShapeMismatchError
from .layers import Conv1dSame, apply_mask, init_weights

VOICED, UNVOICED = "voiced", "unvoiced"
LOG_EPS = 1e-7


@dataclass(frozen=True)
class DiscriminatorConfig:
    mel_bins: int = 40
    channels: int = 64
    voiced_kernel: int = 9
    unvoiced_kernel: int = 3
    voiced_layers: int = 5
    unvoiced_layers: int = 3
    conv2d_channels: int = 4
    condition_kernel: int = 3

    def __post_init__(self):
        if self.voiced_kernel <= self.unvoiced_kernel:
            raise ValueError("voiced_kernel must exceed unvoiced_kernel")

    @classmethod
    def paper(cls) -> "DiscriminatorConfig":
        return cls(mel_bins=80)

    @classmethod
    def tiny(cls) -> "DiscriminatorConfig":
        return cls(mel_bins=8, channels=4, voiced_layers=2, unvoiced_layers=1, conv2d_channels=2)

    @classmethod
    def from_dict(cls, data: dict) -> "DiscriminatorConfig":
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown discriminator config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)


def condition_tensor(f0_hz, vuv) -> torch.Tensor:
    """Stack ``(log2(f0 / 440), vuv)`` into ``(B, 2, L)``; log-F0 is 0 when unvoiced."""
    f0 = torch.as_tensor(f0_hz, dtype=torch.float64)
    v = torch.as_tensor(vuv, dtype=torch.float64)
    if f0.dim() == 1:
        f0, v = f0.unsqueeze(0), v.unsqueeze(0)
    logf0 = torch.where(v > 0, torch.log2(f0.clamp_min(1e-3) / 440.0), torch.zeros_like(f0))
    return torch.stack([logf0, v], dim=1)


class ResidualBlock(nn.Module):
    def __init__(self, channels: int, kernel: int, dilation: int):
        super().__init__()
        self.conv = Conv1dSame(channels, channels, kernel, dilation=dilation)

    def forward(self, x, mask=None):
        return apply_mask(x + self.conv(F.leaky_relu(x, 0.2)), mask)


class ProjectionDiscriminator(nn.Module):
    """Per-frame real/fake probability for a mel given (F0, V/UV).

    The mel runs through a 2-D convolution over (bins, frames) and a stack of
    residual 1-D convolutions to an ``H x L`` feature ``h``; the condition is
    embedded to ``e`` of the same shape. The logit is ``head(h) + <h, e>``
    taken per frame.
    """

    def __init__(self, cfg: DiscriminatorConfig, kernel: int, n_layers: int, dilated: bool):
        super().__init__()
        self.mel_bins = cfg.mel_bins
        self.conv2d = nn.Conv2d(1, cfg.conv2d_channels, 3, padding=1)
        self.inp = nn.Conv1d(cfg.conv2d_channels * cfg.mel_bins, cfg.channels, 1)
        self.blocks = nn.ModuleList(
            ResidualBlock(cfg.channels, kernel, 2 ** i if dilated else 1) for i in range(n_layers))
        self.head = nn.Conv1d(cfg.channels, 1, 1)
        self.cond1 = Conv1dSame(2, cfg.channels, cfg.condition_kernel)
        self.cond2 = Conv1dSame(cfg.channels, cfg.channels, cfg.condition_kernel)

    def embed_condition(self, c, mask=None):
        return self.cond2(apply_mask(F.leaky_relu(self.cond1(c), 0.2), mask))

    def forward(self, mel, c, mask=None):
        if mel.dim() != 3 or mel.shape[1] != self.mel_bins:
            raise ShapeMismatchError(f"expected (B, {self.mel_bins}, L) mel, got {tuple(mel.shape)}")
        if c.shape != (mel.shape[0], 2, mel.shape[2]):
            raise ShapeMismatchError(f"condition shape {tuple(c.shape)} does not match mel")
        B, N, L = mel.shape
        x = F.leaky_relu(self.conv2d(apply_mask(mel, mask).unsqueeze(1)), 0.2)
        h = apply_mask(self.inp(x.reshape(B, -1, L)), mask)
        for block in self.blocks:
            h = block(h, mask)
        e = self.embed_condition(c.to(mel.dtype), mask)
        logit = self.head(h).squeeze(1) + (h * e).sum(dim=1)
        return torch.sigmoid(logit)


class VoicingAwareDiscriminators(nn.Module):
    def __init__(self, cfg: DiscriminatorConfig = DiscriminatorConfig()):
        super().__init__()
        self.cfg = cfg
        self.voiced = ProjectionDiscriminator(cfg, cfg.voiced_kernel, cfg.voiced_layers, True)
        self.unvoiced = ProjectionDiscriminator(cfg, cfg.unvoiced_kernel, cfg.unvoiced_layers, False)
        init_weights(self)

    def forward(self, mel, c, which: str, mask=None):
        d = self.voiced if which == VOICED else self.unvoiced
        return d(mel, c, mask)

    @property
    def condition_receptive_field(self) -> int:
        """Frames of condition that can influence one output score."""
        return 2 * self.cfg.condition_kernel - 1


@contextmanager
def frozen(module: nn.Module):
    """Temporarily stop gradients accumulating into ``module``'s parameters."""
    flags = [p.requires_grad for p in module.parameters()]
    for p in module.parameters():
        p.requires_grad_(False)
    try:
        yield module
    finally:
        for p, flag in zip(module.parameters(), flags):
            p.requires_grad_(flag)


def masked_segment_mean(values, vuv, which: str, mask=None):
    """Mean of ``values`` over frames in the chosen voicing segment.

    Returns ``None`` when no frame is selected.
    """
    values = torch.as_tensor(values)
    vuv = torch.as_tensor(vuv)
    sel = (vuv > 0) if which == VOICED else (vuv <= 0)
    if mask is not None:
        sel = sel & torch.as_tensor(mask, dtype=torch.bool)
    n = int(sel.sum())
    if n == 0:
        return None
    return (values * sel.to(values.dtype)).sum() / n


def _segment_log_mean(scores, vuv, which, mask, complement=False):
    logs = torch.log((1 - scores if complement else scores).clamp_min(LOG_EPS))
    return masked_segment_mean(logs, vuv, which, mask)


def loss_discriminator(discs: VoicingAwareDiscriminators, real, fake, c, vuv, mask=None):
    """``-sum_D [mean log D(real) + mean log(1 - D(fake))]`` over each D's own segment.

    ``fake`` is detached; empty segments contribute nothing.
    """
    fake = fake.detach()
    total = real.new_zeros(())
    for which in (VOICED, UNVOICED):
        on_real = _segment_log_mean(discs(real, c, which, mask), vuv, which, mask)
        on_fake = _segment_log_mean(discs(fake, c, which, mask), vuv, which, mask, complement=True)
        if on_real is not None:
            total = total - on_real - on_fake
    return total


def loss_adversarial(discs: VoicingAwareDiscriminators, fake, c, vuv, mask=None):
    """``-1/2 sum_D mean log D(fake)`` over each D's segment, generator side."""
    total = fake.new_zeros(())
    with frozen(discs):
        for which in (VOICED, UNVOICED):
            term = _segment_log_mean(discs(fake, c, which, mask), vuv, which, mask)
            if term is not None:
                total = total - 0.5 * term
    return total
