import math

import pytest
import torch
from hypothesis import given, settings, strategies as st

from nsinger.errors import NonFiniteError, OutOfRangeError, ShapeMismatchError
from nsinger.layers import (ChannelLayerNorm, Conv1dSame, Embedding, FFTBlock, FFTBlockConfig,
                            Highway, MultiHeadSelfAttention, apply_mask, assert_finite,
                            sinusoidal_positional_encoding)

D = torch.float64


def test_embedding_identity_table():
    emb = Embedding(4, 4).to(D)
    with torch.no_grad():
        emb.weight.copy_(torch.eye(4, dtype=D))
    out = emb(torch.tensor([[2]]))
    assert out.shape == (1, 4, 1)
    assert out[0, :, 0].tolist() == [0, 0, 1, 0]


def test_embedding_repeated_ids():
    emb = Embedding(10, 6)
    out = emb(torch.tensor([[7, 7]]))
    assert torch.equal(out[0, :, 0], out[0, :, 1])
    assert torch.equal(out[0, :, 0], emb.weight[7])


def test_embedding_out_of_range():
    with pytest.raises(OutOfRangeError, match="INDEX_OUT_OF_RANGE"):
        Embedding(5, 4)(torch.tensor([[5]]))
    with pytest.raises(OutOfRangeError):
        Embedding(5, 4)(torch.tensor([[-1]]))


def test_embedding_init_scale():
    torch.manual_seed(0)
    w = Embedding(2000, 64).weight.detach()
    assert abs(float(w.std()) - 64 ** -0.5) < 0.005


def test_positional_encoding_values():
    pe = sinusoidal_positional_encoding(5, 4, D)
    assert pe.shape == (4, 5)
    assert torch.all(pe[0::2, 0] == 0) and torch.all(pe[1::2, 0] == 1)
    assert math.isclose(float(pe[0, 1]), math.sin(1.0), abs_tol=1e-12)
    assert math.isclose(float(pe[0, 1]), 0.8415, abs_tol=1e-4)
    assert math.isclose(float(pe[2, 3]), math.sin(3 / 10000 ** (2 / 4)), abs_tol=1e-12)
    assert math.isclose(float(pe[3, 3]), math.cos(3 / 10000 ** (2 / 4)), abs_tol=1e-12)


@given(st.integers(1, 50), st.integers(1, 16).map(lambda k: 2 * k))
@settings(max_examples=30, deadline=None)
def test_positional_encoding_range(L, d):
    pe = sinusoidal_positional_encoding(L, d)
    assert pe.shape == (d, L) and float(pe.abs().max()) <= 1.0


def test_positional_encoding_odd_dim():
    with pytest.raises(ShapeMismatchError):
        sinusoidal_positional_encoding(3, 5)


def test_attention_single_frame():
    torch.manual_seed(0)
    attn = MultiHeadSelfAttention(8, 2).to(D)
    x = torch.randn(1, 8, 1, dtype=D)
    y, w = attn(x, return_weights=True)
    assert torch.allclose(w, torch.ones_like(w))
    v = attn.qkv(x.transpose(1, 2))[..., 16:]
    assert torch.allclose(y, attn.out(v).transpose(1, 2))


def test_attention_rows_sum_to_one():
    torch.manual_seed(1)
    attn = MultiHeadSelfAttention(8, 2).to(D)
    _, w = attn(torch.randn(3, 8, 11, dtype=D), return_weights=True)
    assert torch.allclose(w.sum(-1), torch.ones(3, 2, 11, dtype=D), atol=1e-6)


def test_attention_permutation_equivariant():
    torch.manual_seed(2)
    attn = MultiHeadSelfAttention(8, 2).to(D)
    x = torch.randn(1, 8, 9, dtype=D)
    perm = torch.randperm(9)
    assert torch.allclose(attn(x)[..., perm], attn(x[..., perm]), atol=1e-12)


def test_attention_mask_ignores_padding():
    torch.manual_seed(3)
    attn = MultiHeadSelfAttention(8, 2).to(D)
    x = torch.randn(1, 8, 6, dtype=D)
    padded = torch.cat([x, 100 * torch.randn(1, 8, 4, dtype=D)], dim=2)
    mask = torch.tensor([[True] * 6 + [False] * 4])
    assert torch.allclose(attn(padded, mask)[..., :6], attn(x), atol=1e-12)


def test_attention_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        MultiHeadSelfAttention(8, 2)(torch.randn(1, 6, 3))
    with pytest.raises(ShapeMismatchError):
        MultiHeadSelfAttention(8, 3)


def test_conv_identity_kernel():
    conv = Conv1dSame(4, 4, 1).to(D)
    with torch.no_grad():
        conv.weight.copy_(torch.eye(4, dtype=D)[:, :, None])
        conv.bias.zero_()
    x = torch.randn(2, 4, 7, dtype=D)
    assert torch.equal(conv(x), x)


def test_conv_impulse_shows_taps():
    conv = Conv1dSame(1, 1, 3, bias=False).to(D)
    with torch.no_grad():
        conv.weight.copy_(torch.tensor([[[1.0, 2.0, 3.0]]], dtype=D))
    x = torch.zeros(1, 1, 7, dtype=D)
    x[0, 0, 3] = 1.0
    # cross-correlation: y[t] = w0 x[t-1] + w1 x[t] + w2 x[t+1]
    assert conv(x)[0, 0].tolist() == [0, 0, 3, 2, 1, 0, 0]


def test_conv_zero_in_zero_out():
    conv = Conv1dSame(3, 5, 5)
    with torch.no_grad():
        conv.bias.zero_()
    assert torch.all(conv(torch.zeros(1, 3, 9)) == 0)


def test_conv_even_kernel_and_shape_errors():
    with pytest.raises(ShapeMismatchError):
        Conv1dSame(1, 1, 4)
    with pytest.raises(ShapeMismatchError):
        Conv1dSame(3, 1, 3)(torch.zeros(1, 2, 5))


def test_layer_norm_properties():
    ln = ChannelLayerNorm(6).to(D)
    x = torch.randn(2, 6, 5, dtype=D) * 3 + 1
    y = ln(x)
    assert torch.allclose(y.mean(1), torch.zeros(2, 5, dtype=D), atol=1e-12)
    assert torch.allclose(y.var(1, unbiased=False), torch.ones(2, 5, dtype=D), atol=1e-4)
    const = torch.full((1, 6, 2), 4.0, dtype=D)
    assert torch.all(ln(const) == 0)
    with torch.no_grad():
        ln.bias.copy_(torch.arange(6, dtype=D))
    assert torch.allclose(ln(x).mean(1), torch.full((2, 5), 2.5, dtype=D))


def test_highway_limits_and_convexity():
    torch.manual_seed(4)
    hw = Highway(4).to(D)
    x = torch.randn(1, 4, 8, dtype=D)
    h = hw.transform(x)
    y = hw(x)
    assert torch.all(y >= torch.minimum(x, h) - 1e-12) and torch.all(y <= torch.maximum(x, h) + 1e-12)
    with torch.no_grad():
        hw.gate.bias.fill_(-1e4)
    assert torch.allclose(hw(x), x)
    with torch.no_grad():
        hw.gate.bias.fill_(1e4)
    assert torch.allclose(hw(x), h)


@given(st.integers(1, 64))
@settings(max_examples=10, deadline=None)
def test_fft_block_shape(L):
    block = FFTBlock(FFTBlockConfig(16, 2, 13, 32, 0.1))
    assert block(torch.randn(2, 16, L)).shape == (2, 16, L)


def test_fft_block_zero_weights_gives_norm_constants():
    block = FFTBlock(FFTBlockConfig(8, 2, 3, 16, 0.0)).to(D)
    with torch.no_grad():
        for p in block.parameters():
            p.zero_()
        block.norm2.bias.copy_(torch.arange(8, dtype=D))
    y = block(torch.randn(1, 8, 5, dtype=D))
    assert torch.allclose(y, torch.arange(8, dtype=D)[None, :, None].expand(1, 8, 5))


def test_fft_block_config_validation():
    with pytest.raises(ShapeMismatchError):
        FFTBlockConfig(model_dim=9, attention_heads=2)
    with pytest.raises(ShapeMismatchError):
        FFTBlockConfig(conv_kernel=12)


def test_fft_block_batched_equals_unbatched():
    torch.manual_seed(5)
    block = FFTBlock(FFTBlockConfig(8, 2, 13, 16, 0.0)).to(D)
    a, b = torch.randn(1, 8, 5, dtype=D), torch.randn(1, 8, 9, dtype=D)
    batch = torch.zeros(2, 8, 9, dtype=D)
    batch[0, :, :5], batch[1] = a[0], b[0]
    mask = torch.tensor([[True] * 5 + [False] * 4, [True] * 9])
    out = block(batch, mask)
    assert torch.allclose(out[0, :, :5], block(a)[0], atol=1e-12)
    assert torch.allclose(out[1], block(b)[0], atol=1e-12)
    assert torch.all(out[0, :, 5:] == 0)


def test_dropout_identity_in_eval_and_reproducible_in_train():
    block = FFTBlock(FFTBlockConfig(8, 2, 3, 16, 0.5))
    x = torch.randn(1, 8, 6)
    block.eval()
    assert torch.equal(block(x), block(x))
    block.train()
    torch.manual_seed(9)
    y1 = block(x)
    torch.manual_seed(9)
    assert torch.equal(y1, block(x))


def test_apply_mask_and_assert_finite():
    x = torch.ones(1, 2, 3)
    assert apply_mask(x, torch.tensor([[True, False, True]]))[0, :, 1].tolist() == [0, 0]
    with pytest.raises(NonFiniteError):
        assert_finite(torch.tensor([1.0, float("inf")]), "here")
