"""The acoustic model: two encoder-decoders, their product, and the postnet."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .align import N_PITCH_IDS, FrameAlignedInput, align_score
from .errors import DomainError, ShapeMismatchError
from .layers import (Conv1dSame, Embedding, FFTBlock, FFTBlockConfig, Highway, apply_mask,
                     assert_finite, init_weights, sinusoidal_positional_encoding)
from .score import N_PHONEMES, Score

PROB_EPS = 1e-7
PHONEME, PITCH = "phoneme", "pitch"


@dataclass(frozen=True)
class GeneratorConfig:
    model_dim: int = 64
    attention_heads: int = 2
    conv_kernel: int = 13
    conv_hidden: int = 256
    n_blocks_enc: int = 2
    n_blocks_dec: int = 2
    mel_bins: int = 40
    dropout: float = 0.1
    postnet_highway_layers: int = 4
    postnet_hidden: int = 64
    postnet_kernel: int = 3
    postnet_dropout: float = 0.05
    n_phonemes: int = N_PHONEMES
    n_pitches: int = N_PITCH_IDS

    @classmethod
    def paper(cls) -> "GeneratorConfig":
        return cls(model_dim=256, conv_hidden=1024, n_blocks_enc=6, n_blocks_dec=6,
                   mel_bins=80, postnet_hidden=256)

    @classmethod
    def desk(cls) -> "GeneratorConfig":
        return cls()

    @classmethod
    def tiny(cls) -> "GeneratorConfig":
        return cls(model_dim=8, conv_hidden=16, n_blocks_enc=1, n_blocks_dec=1, mel_bins=8,
                   postnet_hidden=8, dropout=0.0, postnet_dropout=0.0)

    @classmethod
    def from_dict(cls, data: dict) -> "GeneratorConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown generator config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def block(self) -> FFTBlockConfig:
        return FFTBlockConfig(self.model_dim, self.attention_heads, self.conv_kernel,
                              self.conv_hidden, self.dropout)


@dataclass
class GeneratorOutputs:
    E_T: torch.Tensor
    E_P: torch.Tensor
    D_T: torch.Tensor
    D_P: torch.Tensor
    M_D: torch.Tensor
    M_P: torch.Tensor

    def numpy(self, index: int = 0) -> dict[str, np.ndarray]:
        return {k: getattr(self, k)[index].detach().cpu().numpy()
                for k in ("E_T", "E_P", "D_T", "D_P", "M_D", "M_P")}


class Encoder(nn.Module):
    def __init__(self, vocab_size: int, cfg: GeneratorConfig):
        super().__init__()
        self.embed = Embedding(vocab_size, cfg.model_dim)
        self.blocks = nn.ModuleList(FFTBlock(cfg.block) for _ in range(cfg.n_blocks_enc))

    def forward(self, ids, mask=None):
        x = self.embed(ids)
        x = apply_mask(x + sinusoidal_positional_encoding(x.shape[2], x.shape[1], x.dtype), mask)
        for block in self.blocks:
            x = block(x, mask)
        return x


class Decoder(nn.Module):
    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.blocks = nn.ModuleList(FFTBlock(cfg.block) for _ in range(cfg.n_blocks_dec))
        self.proj = nn.Conv1d(cfg.model_dim, cfg.mel_bins, 1)

    def forward(self, enc, mask=None):
        x = apply_mask(enc + sinusoidal_positional_encoding(enc.shape[2], enc.shape[1], enc.dtype),
                       mask)
        for block in self.blocks:
            x = block(x, mask)
        return torch.sigmoid(self.proj(x))


class Postnet(nn.Module):
    """Locally conditioned refinement of the coarse mel.

    ``C1 = elu(U1*M_D + V1*E_T + W1*E_P)`` and ``C2 = sigmoid(U2*M_D + ...)``
    gate each other; the product runs through a highway block and a 1x1
    projection with a sigmoid so the result stays in (0, 1).
    """

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        h, k = cfg.postnet_hidden, cfg.postnet_kernel
        self.hidden = h
        self.mel_bins, self.cond_dim = cfg.mel_bins, cfg.model_dim
        self.U = Conv1dSame(cfg.mel_bins, 2 * h, 1)
        self.V = Conv1dSame(cfg.model_dim, 2 * h, k, bias=False)
        self.W = Conv1dSame(cfg.model_dim, 2 * h, k, bias=False)
        self.dropout = nn.Dropout(cfg.postnet_dropout)
        self.highways = nn.ModuleList(Highway(h, k) for _ in range(cfg.postnet_highway_layers))
        self.conv = Conv1dSame(h, h, k)
        self.proj = nn.Conv1d(h, cfg.mel_bins, 1)

    def forward(self, m_d, e_t, e_p, mask=None):
        if m_d.shape[1] != self.mel_bins or e_t.shape[1] != self.cond_dim or e_p.shape != e_t.shape:
            raise ShapeMismatchError("postnet expects (B, N, L), (B, d, L), (B, d, L) inputs")
        if not (m_d.shape[2] == e_t.shape[2]):
            raise ShapeMismatchError("postnet inputs disagree on the frame count")
        a, b = (self.U(m_d) + self.V(e_t) + self.W(e_p)).split(self.hidden, dim=1)
        x = apply_mask(F.elu(a) * torch.sigmoid(b), mask)
        for layer in self.highways:
            x = layer(self.dropout(x), mask)
        x = apply_mask(F.elu(self.conv(x)), mask)
        return torch.sigmoid(self.proj(x))


class Generator(nn.Module):
    """Phoneme and pitch encoder-decoders plus postnet.

    There is no path from generated frames back into the network: every
    output frame comes out of one parallel pass over the aligned inputs.
    """

    def __init__(self, cfg: GeneratorConfig = GeneratorConfig(), debug: bool = False):
        super().__init__()
        self.cfg = cfg
        self.debug = debug
        self.phoneme_encoder = Encoder(cfg.n_phonemes, cfg)
        self.pitch_encoder = Encoder(cfg.n_pitches, cfg)
        self.phoneme_decoder = Decoder(cfg)
        self.pitch_decoder = Decoder(cfg)
        self.postnet = Postnet(cfg)
        init_weights(self)

    def encode(self, ids, which: str, mask=None):
        enc = self.phoneme_encoder if which == PHONEME else self.pitch_encoder
        return self._check(enc(ids, mask), f"{which} encoder")

    def decode(self, e, which: str, mask=None):
        dec = self.phoneme_decoder if which == PHONEME else self.pitch_decoder
        return self._check(dec(e, mask), f"{which} decoder")

    def forward(self, phonemes, pitches, mask=None) -> GeneratorOutputs:
        if phonemes.shape != pitches.shape:
            raise ShapeMismatchError("phoneme and pitch sequences must have the same shape")
        e_t = self.encode(phonemes, PHONEME, mask)
        e_p = self.encode(pitches, PITCH, mask)
        d_t = self.decode(e_t, PHONEME, mask)
        d_p = self.decode(e_p, PITCH, mask)
        m_d = combine(d_t, d_p)
        m_p = self._check(self.postnet(m_d, e_t, e_p, mask), "postnet")
        return GeneratorOutputs(e_t, e_p, d_t, d_p, m_d, m_p)

    def _check(self, x, where):
        return assert_finite(x, where) if self.debug else x


def combine(d_t: torch.Tensor, d_p: torch.Tensor) -> torch.Tensor:
    if d_t.shape != d_p.shape:
        raise ShapeMismatchError(f"{tuple(d_t.shape)} vs {tuple(d_p.shape)}")
    return d_t * d_p


# --------------------------------------------------------------------------
# losses; ``mask`` is (B, L) and restricts every mean to valid frames


def _masked_mean(err: torch.Tensor, mask) -> torch.Tensor:
    if mask is None:
        return err.mean()
    m = mask.unsqueeze(1).to(err.dtype).expand_as(err)
    return (err * m).sum() / m.sum()


def l1_loss(target, pred, mask=None) -> torch.Tensor:
    return _masked_mean((target - pred).abs(), mask)


def binary_divergence(target, pred, mask=None, strict: bool = True) -> torch.Tensor:
    """Mean element-wise Bernoulli KL divergence ``KL(target || pred)``.

    With ``strict`` a prediction of exactly 0 or 1 raises
    :class:`DomainError`; predictions are clamped to ``[1e-7, 1 - 1e-7]``
    either way.
    """
    if strict and bool(((pred <= 0) | (pred >= 1)).any()):
        raise DomainError("binary divergence needs predictions strictly inside (0, 1)")
    p = pred.clamp(PROB_EPS, 1 - PROB_EPS)
    y = target
    kl = (torch.xlogy(y, y) - torch.xlogy(y, p)
          + torch.xlogy(1 - y, 1 - y) - torch.xlogy(1 - y, 1 - p))
    return _masked_mean(kl, mask)


def init_loss_weight(step: int, decay: float = 0.999) -> float:
    return decay ** step


def loss_mel_generator(mel, outputs: GeneratorOutputs, step: int, decay: float = 0.999,
                       mask=None, strict: bool = True):
    """``L_md + L_init * decay**step``; returns the total and its parts."""
    l_md = l1_loss(mel, outputs.M_D, mask) + binary_divergence(mel, outputs.M_D, mask, strict)
    l_init = (l1_loss(mel, outputs.D_P, mask) + l1_loss(mel, outputs.D_T, mask)) / 2
    weight = init_loss_weight(step, decay)
    total = l_md + l_init * weight
    return total, {"L_md": l_md, "L_init": l_init, "L_init_weighted": l_init * weight,
                   "init_weight": weight}


def loss_postnet(mel, m_p, mask=None, strict: bool = True) -> torch.Tensor:
    return l1_loss(mel, m_p, mask) + binary_divergence(mel, m_p, mask, strict)


# --------------------------------------------------------------------------
# inference


def aligned_tensors(aligned: FrameAlignedInput):
    ph = torch.as_tensor(aligned.phoneme_ids, dtype=torch.long).unsqueeze(0)
    pi = torch.as_tensor(aligned.pitch_ids, dtype=torch.long).unsqueeze(0)
    return ph, pi


@torch.no_grad()
def synthesize(score: Score, generator: Generator):
    """One parallel forward pass; returns ``(M_P, outputs)`` for a single clip."""
    was_training = generator.training
    generator.eval()
    try:
        outputs = generator(*aligned_tensors(align_score(score)))
    finally:
        generator.train(was_training)
    arrays = outputs.numpy()
    return arrays["M_P"], arrays
