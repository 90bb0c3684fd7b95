import warnings

import numpy as np
import pytest

from mtlaffect.autodiff import Tensor, check_gradients
from mtlaffect.encoders import (EncoderConfig, RecurrentStack, TransformerStack, gru_forward, lstm_forward,
                                sinusoidal_encoding, split_segments, transformer_forward)
from mtlaffect.errors import ConfigError, DimensionError
from mtlaffect.frameworks import predict_video

from _util import toy_model


def segmented(stack, feats, length):
    fwd = gru_forward if stack.kind == "GRU" else lstm_forward
    carry, outs = None, []
    for a, b in split_segments(feats.shape[0], length).segments:
        y, carry = fwd(stack, feats[a:b], carry)
        outs.append(y.data)
    return np.concatenate(outs)


# -- segmentation ------------------------------------------------------------------


@pytest.mark.parametrize("n,l,sizes", [(500, 250, [250, 250]), (130, 64, [64, 64, 2]), (10, 250, [10])])
def test_split_segments_examples(n, l, sizes):
    assert split_segments(n, l).sizes() == sizes


def test_split_segments_empty_warns():
    with pytest.warns(UserWarning):
        plan = split_segments(0, 64, "v0")
    assert len(plan) == 0


def test_split_segments_coverage(rng):
    for _ in range(200):
        n, l = int(rng.integers(1, 400)), int(rng.integers(1, 300))
        plan = split_segments(n, l)
        assert len(plan) == -(-n // l)
        assert plan.segments[0][0] == 0 and plan.segments[-1][1] == n
        assert all(a2 == b1 for (_, b1), (a2, _) in zip(plan.segments, plan.segments[1:]))
        assert all(0 < s <= l for s in plan.sizes())


def test_split_segments_bad_length():
    with pytest.raises(ConfigError):
        split_segments(10, 0)


# -- recurrent encoders --------------------------------------------------------------


@pytest.mark.parametrize("kind", ["GRU", "LSTM"])
def test_zero_params_zero_input_gives_zero(kind):
    stack = RecurrentStack(kind, 3, 4, 2, 0.0, np.random.default_rng(0))
    for p in stack.parameters():
        p.data[...] = 0.0
    y, carry = stack.forward_sequence(np.zeros((5, 3)))
    assert np.all(y.data == 0.0)


@pytest.mark.parametrize("kind", ["GRU", "LSTM"])
def test_streaming_identity_one_boundary(kind, rng):
    stack = RecurrentStack(kind, 3, 6, 2, 0.0, np.random.default_rng(1))
    x = rng.normal(size=(37, 3))
    whole = stack.forward_sequence(x)[0].data
    fwd = gru_forward if kind == "GRU" else lstm_forward
    y1, c = fwd(stack, x[:20])
    y2, _ = fwd(stack, x[20:], c)
    np.testing.assert_allclose(np.concatenate([y1.data, y2.data]), whole, rtol=0, atol=1e-9)


@pytest.mark.parametrize("kind", ["GRU", "LSTM"])
def test_streaming_equivalence_random_pairs(kind):
    r = np.random.default_rng(99)
    stack = RecurrentStack(kind, 3, 5, 2, 0.0, np.random.default_rng(2))
    worst = 0.0
    for _ in range(100):
        n, l = int(r.integers(1, 120)), int(r.integers(1, 80))
        x = r.normal(size=(n, 3))
        whole = stack.forward_sequence(x)[0].data
        worst = max(worst, np.abs(segmented(stack, x, l) - whole).max())
    assert worst <= 1e-9


@pytest.mark.parametrize("kind", ["GRU", "LSTM"])
def test_batched_padding_matches_single_video(kind, rng):
    stack = RecurrentStack(kind, 3, 4, 1, 0.0, np.random.default_rng(3))
    x = rng.normal(size=(2, 9, 3))
    mask = np.ones((2, 9), dtype=bool)
    mask[1, 6:] = False
    x[1, 6:] = 0.0
    y, carry = stack(Tensor(x), mask)
    alone, c1 = stack.forward_sequence(x[1, :6])
    np.testing.assert_allclose(y.data[1, :6], alone.data, atol=1e-12)
    key = stack.carry_keys()[0]
    last = carry[key][0] if kind == "LSTM" else carry[key]
    ref = c1[key][0] if kind == "LSTM" else c1[key]
    np.testing.assert_allclose(last[1], ref, atol=1e-12)


@pytest.mark.parametrize("kind", ["GRU", "LSTM"])
def test_recurrent_gradcheck(kind, rng):
    stack = RecurrentStack(kind, 3, 4, 2, 0.0, np.random.default_rng(4))
    x = Tensor(rng.normal(size=(6, 3)), requires_grad=True)
    w = Tensor(rng.normal(size=(6, 4)))
    err = check_gradients(lambda: (stack.forward_sequence(x)[0] * w).sum(), [x, *stack.parameters()])
    assert err < 1e-4


def test_recurrent_dim_mismatch():
    stack = RecurrentStack("GRU", 3, 4, 1, 0.0, np.random.default_rng(0))
    with pytest.raises(DimensionError):
        stack.forward_sequence(np.zeros((5, 4)))


def test_gru_forward_rejects_lstm_stack():
    with pytest.raises(ConfigError):
        gru_forward(RecurrentStack("LSTM", 3, 4, 1, 0.0, np.random.default_rng(0)), np.zeros((2, 3)))


# -- transformer ----------------------------------------------------------------------


def _trm(positional=True, blocks=2, seed=0):
    return TransformerStack(5, 8, blocks, 2, 12, 0.0, np.random.default_rng(seed), positional)


def test_attention_rows_sum_to_one(rng):
    stack = _trm()
    transformer_forward(stack, rng.normal(size=(7, 5)))
    for a in stack.attention_maps():
        np.testing.assert_allclose(a.sum(axis=-1), 1.0, atol=1e-12)


def test_no_pe_is_permutation_equivariant(rng):
    stack = _trm(positional=False)
    x = rng.normal(size=(9, 5))
    perm = rng.permutation(9)
    y = transformer_forward(stack, x).data
    yp = transformer_forward(stack, x[perm]).data
    np.testing.assert_allclose(yp, y[perm], atol=1e-9)


def test_pe_breaks_permutation_equivariance(rng):
    stack = _trm(positional=True)
    x = rng.normal(size=(9, 5))
    perm = np.roll(np.arange(9), 1)
    y = transformer_forward(stack, x).data
    assert np.abs(transformer_forward(stack, x[perm]).data - y[perm]).max() > 1e-6


def test_padding_keys_do_not_leak(rng):
    stack = _trm()
    x = rng.normal(size=(2, 6, 5))
    mask = np.ones((2, 6), dtype=bool)
    mask[0, 4:] = False
    y, _ = stack(Tensor(x), mask)
    x2 = x.copy()
    x2[0, 4:] = 100.0
    y2, _ = stack(Tensor(x2), mask)
    np.testing.assert_array_equal(y.data[0, :4], y2.data[0, :4])
    np.testing.assert_allclose(transformer_forward(stack, x[0, :4]).data, y.data[0, :4], atol=1e-12)


def test_transformer_segment_locality(rng):
    model = toy_model(kind="TRM", framework="SE", tasks=("V",), layers=2)
    f = rng.normal(size=(50, 4))
    base = predict_video(model, f, 16)["V"]
    f2 = f.copy()
    f2[20:28] += rng.normal(size=(8, 4)) * 5
    out = predict_video(model, f2, 16)["V"]
    outside = np.r_[0:16, 32:50]
    assert np.abs(out[outside] - base[outside]).max() == 0.0
    assert np.abs(out[16:32] - base[16:32]).max() > 0.0


def test_transformer_gradcheck(rng):
    stack = TransformerStack(3, 8, 1, 2, 8, 0.0, np.random.default_rng(5))
    x = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    w = Tensor(rng.normal(size=(4, 8)))
    assert check_gradients(lambda: (transformer_forward(stack, x) * w).sum(), [x, *stack.parameters()]) < 1e-4


def test_sinusoidal_encoding_shape_and_values():
    pe = sinusoidal_encoding(10, 6)
    assert pe.shape == (10, 6)
    np.testing.assert_array_equal(pe[0, 0::2], 0.0)
    np.testing.assert_array_equal(pe[0, 1::2], 1.0)


@pytest.mark.parametrize("kind", ["GRU", "LSTM", "TRM"])
def test_output_count_equals_frames(kind, rng):
    model = toy_model(kind=kind, tasks=("V", "EXPR"))
    for n in (1, 17, 64):
        out = predict_video(model, rng.normal(size=(n, 4)), 8)
        assert out["V"].shape == (n, 1) and out["EXPR"].shape == (n, 8)


def test_encoder_config_validation():
    with pytest.raises(ConfigError):
        EncoderConfig(kind="RNN")
    with pytest.raises(ConfigError):
        EncoderConfig(kind="TRM", hidden=10, heads=4)
    with pytest.raises(ConfigError):
        EncoderConfig(kind="GRU", dropout=1.0)
    assert EncoderConfig(kind="TRM").layers == 4 and EncoderConfig(kind="GRU").layers == 2


def test_same_seed_identical_outputs(rng):
    x = rng.normal(size=(12, 4))
    a = predict_video(toy_model(seed=3, kind="LSTM"), x, 5)
    b = predict_video(toy_model(seed=3, kind="LSTM"), x, 5)
    for t in a:
        assert np.array_equal(a[t], b[t])
