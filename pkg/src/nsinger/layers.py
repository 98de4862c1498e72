"""Neural building blocks shared by the generator, postnet and discriminators.

All frame sequences are channel-major, ``(batch, channels, frames)``. An
optional boolean ``mask`` of shape ``(batch, frames)`` marks valid frames;
blocks zero padded frames on output so that padding never leaks into a
neighbouring clip's statistics.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn
from torch.nn import functional as F

from .errors import NonFiniteError, OutOfRangeError, ShapeMismatchError

LAYER_NORM_EPS = 1e-5


@dataclass(frozen=True)
class FFTBlockConfig:
    model_dim: int = 256
    attention_heads: int = 2
    conv_kernel: int = 13
    conv_hidden: int = 1024
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.model_dim % self.attention_heads:
            raise ShapeMismatchError("model_dim must be divisible by attention_heads")
        if self.conv_kernel % 2 == 0:
            raise ShapeMismatchError("conv_kernel must be odd")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")


def init_weights(module: nn.Module) -> None:
    """Uniform fan-in weights and zero biases for every conv/linear layer."""
    for m in module.modules():
        if isinstance(m, (nn.Conv1d, nn.Conv2d, nn.Linear)):
            fan_in = m.weight[0].numel()
            bound = 1.0 / math.sqrt(fan_in)
            nn.init.uniform_(m.weight, -bound, bound)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


def apply_mask(x: torch.Tensor, mask) -> torch.Tensor:
    if mask is None:
        return x
    return x * mask.unsqueeze(1).to(x.dtype)


def assert_finite(x: torch.Tensor, where: str) -> torch.Tensor:
    if not torch.isfinite(x).all():
        raise NonFiniteError(f"non-finite values after {where}", term=where)
    return x


class Embedding(nn.Module):
    """ID lookup returning channel-major ``(batch, dim, frames)`` features."""

    def __init__(self, vocab_size: int, dim: int):
        super().__init__()
        self.vocab_size = vocab_size
        self.weight = nn.Parameter(torch.randn(vocab_size, dim) * dim ** -0.5)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= self.vocab_size):
            raise OutOfRangeError(
                f"INDEX_OUT_OF_RANGE: ids must lie in [0, {self.vocab_size}), "
                f"got [{int(ids.min())}, {int(ids.max())}]")
        return F.embedding(ids, self.weight).transpose(1, 2)


def sinusoidal_positional_encoding(n_frames: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    """``(dim, n_frames)`` table with sin on even rows and cos on odd rows."""
    if dim % 2:
        raise ShapeMismatchError("positional encoding dimension must be even")
    t = torch.arange(n_frames, dtype=torch.float64)
    inv = 10000.0 ** (-torch.arange(0, dim, 2, dtype=torch.float64) / dim)
    angles = inv[:, None] * t[None, :]
    pe = torch.empty(dim, n_frames, dtype=torch.float64)
    pe[0::2] = torch.sin(angles)
    pe[1::2] = torch.cos(angles)
    return pe.to(dtype)


class Conv1dSame(nn.Conv1d):
    """Zero-padded 1-D convolution that keeps the sequence length."""

    def __init__(self, in_channels, out_channels, kernel_size, dilation=1, bias=True):
        if kernel_size % 2 == 0:
            raise ShapeMismatchError(f"kernel size must be odd, got {kernel_size}")
        super().__init__(in_channels, out_channels, kernel_size,
                         padding=dilation * (kernel_size // 2), dilation=dilation, bias=bias)

    def forward(self, x):
        if x.dim() != 3 or x.shape[1] != self.in_channels:
            raise ShapeMismatchError(
                f"expected (B, {self.in_channels}, L) input, got {tuple(x.shape)}")
        return super().forward(x)


class ChannelLayerNorm(nn.Module):
    """Layer norm over the channel axis of each frame."""

    def __init__(self, dim: int, eps: float = LAYER_NORM_EPS):
        super().__init__()
        self.eps = eps
        self.gain = nn.Parameter(torch.ones(dim))
        self.bias = nn.Parameter(torch.zeros(dim))

    def forward(self, x):
        y = F.layer_norm(x.transpose(1, 2), (x.shape[1],), self.gain, self.bias, self.eps)
        return y.transpose(1, 2)


class MultiHeadSelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int, dropout: float = 0.0):
        super().__init__()
        if dim % heads:
            raise ShapeMismatchError("dim must be divisible by the head count")
        self.dim, self.heads = dim, heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x, mask=None, return_weights=False):
        if x.dim() != 3 or x.shape[1] != self.dim:
            raise ShapeMismatchError(f"expected (B, {self.dim}, L) input, got {tuple(x.shape)}")
        B, _, L = x.shape
        hd = self.dim // self.heads
        q, k, v = self.qkv(x.transpose(1, 2)).view(B, L, 3, self.heads, hd).permute(2, 0, 3, 1, 4)
        logits = q @ k.transpose(-1, -2) / math.sqrt(hd)
        if mask is not None:
            logits = logits.masked_fill(~mask[:, None, None, :], float("-inf"))
        weights = torch.softmax(logits, dim=-1)
        y = (self.dropout(weights) @ v).transpose(1, 2).reshape(B, L, self.dim)
        y = self.out(y).transpose(1, 2)
        return (y, weights) if return_weights else y


class FFTBlock(nn.Module):
    """Self-attention and a two-layer convolution, each with residual + post-norm."""

    def __init__(self, cfg: FFTBlockConfig):
        super().__init__()
        d = cfg.model_dim
        self.attn = MultiHeadSelfAttention(d, cfg.attention_heads, cfg.dropout_rate)
        self.norm1 = ChannelLayerNorm(d)
        self.conv1 = Conv1dSame(d, cfg.conv_hidden, cfg.conv_kernel)
        self.conv2 = Conv1dSame(cfg.conv_hidden, d, cfg.conv_kernel)
        self.norm2 = ChannelLayerNorm(d)
        self.dropout = nn.Dropout(cfg.dropout_rate)

    def forward(self, x, mask=None):
        x = apply_mask(self.norm1(x + self.dropout(self.attn(x, mask))), mask)
        h = apply_mask(F.relu(self.conv1(x)), mask)
        x = self.norm2(x + self.dropout(self.conv2(h)))
        return apply_mask(x, mask)


class Highway(nn.Module):
    """``y = T * H(x) + (1 - T) * x`` with convolutional transform and gate."""

    def __init__(self, dim: int, kernel_size: int = 3):
        super().__init__()
        self.transform = Conv1dSame(dim, dim, kernel_size)
        self.gate = Conv1dSame(dim, dim, kernel_size)

    def forward(self, x, mask=None):
        t = torch.sigmoid(self.gate(x))
        y = t * self.transform(x) + (1.0 - t) * x
        return apply_mask(y, mask)
