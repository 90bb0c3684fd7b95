"""Segment splitting and the GRU, LSTM and Transformer temporal encoders.

All encoders take batch-major features of shape (B, L, D) plus a boolean
frame mask (B, L) marking real (non-padding) frames, and return per-frame
outputs of shape (B, L, H). The recurrent encoders additionally thread a
carry (hidden state per layer) from one segment of a video to the next, so
that segmenting a video does not change its outputs.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import kernels
from .autodiff import Tensor, dropout, layer_norm, relu, softmax
from .autodiff.tensor import _result, as_tensor
from .errors import ConfigError, DimensionError
from .nn import Linear, Module, ModuleList, param, xavier_uniform

ENCODER_KINDS = ("GRU", "LSTM", "TRM")


# -- segments -----------------------------------------------------------------


@dataclass(frozen=True)
class SegmentPlan:
    n: int
    length: int
    segments: tuple[tuple[int, int], ...]
    video_id: str | None = None

    def __len__(self) -> int:
        return len(self.segments)

    def sizes(self) -> list[int]:
        return [b - a for a, b in self.segments]


def split_segments(n: int, length: int, video_id: str | None = None) -> SegmentPlan:
    """Consecutive non-overlapping [start, stop) ranges covering ``n`` frames, ceil(n / length) of them."""
    if length < 1:
        raise ConfigError(f"segment length must be >= 1, got {length}")
    if n < 0:
        raise ConfigError(f"frame count must be >= 0, got {n}")
    if n == 0:
        warnings.warn(f"video {video_id or '?'} has no annotated frames", stacklevel=2)
        return SegmentPlan(0, length, (), video_id)
    segs = tuple((s, min(s + length, n)) for s in range(0, n, length))
    return SegmentPlan(n, length, segs, video_id)


# -- fused recurrences ----------------------------------------------------------


def gru_recurrence(gx: Tensor, h0: np.ndarray, w_hh: Tensor, b_hh: Tensor) -> Tensor:
    """Time-major GRU recurrence over precomputed input gates gx (T, B, 3H)."""
    hs, cache = kernels.gru_forward(gx.data, h0, w_hh.data, b_hh.data)

    def bw(g):
        dgx, _, dw, db = kernels.gru_backward(g, h0, hs, cache, w_hh.data)
        return dgx, dw, db

    return _result(hs, (gx, w_hh, b_hh), bw, "gru")


def lstm_recurrence(gx: Tensor, h0: np.ndarray, c0: np.ndarray, w_hh: Tensor,
                    b_hh: Tensor) -> tuple[Tensor, np.ndarray]:
    """Time-major LSTM recurrence over gx (T, B, 4H); returns hidden states and cell states."""
    hs, cs, cache = kernels.lstm_forward(gx.data, h0, c0, w_hh.data, b_hh.data)

    def bw(g):
        dgx, _, _, dw, db = kernels.lstm_backward(g, h0, c0, hs, cs, cache, w_hh.data)
        return dgx, dw, db

    return _result(hs, (gx, w_hh, b_hh), bw, "lstm"), cs


class _RecurrentLayer(Module):
    gates = 0

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator):
        super().__init__()
        G = self.gates * hidden
        self.in_dim, self.hidden = in_dim, hidden
        self.w_ih = param(xavier_uniform(rng, in_dim, G), "w_ih")
        self.b_ih = param(np.zeros(G), "b_ih")
        self.w_hh = param(xavier_uniform(rng, hidden, G), "w_hh")
        self.b_hh = param(np.zeros(G), "b_hh")

    def _input_gates(self, x: Tensor) -> Tensor:
        B, L, D = x.shape
        if D != self.in_dim:
            raise DimensionError(f"{type(self).__name__} expects feature dim {self.in_dim}, got {D}")
        gx = x.reshape(B * L, D) @ self.w_ih + self.b_ih
        return gx.reshape(B, L, -1).transpose(1, 0, 2)

    def zero_state(self, batch: int):
        raise NotImplementedError


class GRULayer(_RecurrentLayer):
    gates = 3

    def zero_state(self, batch: int) -> np.ndarray:
        return np.zeros((batch, self.hidden))

    def __call__(self, x: Tensor, state: np.ndarray, lengths: np.ndarray):
        hs = gru_recurrence(self._input_gates(x), state, self.w_hh, self.b_hh)
        rows = np.arange(x.shape[0])
        last = hs.data[np.maximum(lengths - 1, 0), rows]
        last = np.where((lengths > 0)[:, None], last, state)
        return hs.transpose(1, 0, 2), last


class LSTMLayer(_RecurrentLayer):
    gates = 4

    def zero_state(self, batch: int) -> tuple[np.ndarray, np.ndarray]:
        return np.zeros((batch, self.hidden)), np.zeros((batch, self.hidden))

    def __call__(self, x: Tensor, state, lengths: np.ndarray):
        h0, c0 = state
        hs, cs = lstm_recurrence(self._input_gates(x), h0, c0, self.w_hh, self.b_hh)
        rows = np.arange(x.shape[0])
        idx = np.maximum(lengths - 1, 0)
        has = (lengths > 0)[:, None]
        h_last = np.where(has, hs.data[idx, rows], h0)
        c_last = np.where(has, cs[idx, rows], c0)
        return hs.transpose(1, 0, 2), (h_last, c_last)


class RecurrentStack(Module):
    """A stack of GRU or LSTM layers with dropout on each layer's output.

    Carry entries are keyed by ``carry_prefix`` plus the layer index so that
    several stacks (shared bottom, per-task tops) can share one carry dict.
    """

    def __init__(self, kind: str, in_dim: int, hidden: int, num_layers: int, dropout_rate: float,
                 rng: np.random.Generator, carry_prefix: str = ""):
        super().__init__()
        layer_cls = {"GRU": GRULayer, "LSTM": LSTMLayer}[kind]
        self.kind = kind
        self.in_dim = in_dim
        self.out_dim = hidden if num_layers else in_dim
        self.dropout_rate = dropout_rate
        self.carry_prefix = carry_prefix
        self.layers = ModuleList(layer_cls(in_dim if i == 0 else hidden, hidden, rng)
                                 for i in range(num_layers))

    def carry_keys(self) -> list[str]:
        return [f"{self.carry_prefix}{i}" for i in range(len(self.layers))]

    def zero_carry(self, batch: int) -> dict:
        return {k: layer.zero_state(batch) for k, layer in zip(self.carry_keys(), self.layers)}

    def __call__(self, x: Tensor, mask: np.ndarray, carry: dict | None = None,
                 training: bool = False, rng=None) -> tuple[Tensor, dict]:
        B = x.shape[0]
        lengths = np.asarray(mask, dtype=bool).sum(axis=1)
        new = {}
        for key, layer in zip(self.carry_keys(), self.layers):
            state = carry[key] if carry is not None and key in carry else layer.zero_state(B)
            x, new[key] = layer(x, state, lengths)
            x = dropout(x, self.dropout_rate, training, rng)
        return x, new

    def forward_sequence(self, features, carry: dict | None = None) -> tuple[Tensor, dict]:
        """Single-video convenience: features (l, d) -> outputs (l, h), carry'."""
        x = as_tensor(features)
        if x.ndim != 2:
            raise DimensionError(f"expected (frames, dim) features, got {x.shape}")
        carry1 = None if carry is None else {k: _add_batch(v) for k, v in carry.items()}
        out, new = self(x.reshape(1, *x.shape), np.ones((1, x.shape[0]), dtype=bool), carry1)
        return out.reshape(x.shape[0], -1), {k: _drop_batch(v) for k, v in new.items()}


def _add_batch(v):
    return tuple(a[None] for a in v) if isinstance(v, tuple) else v[None]


def _drop_batch(v):
    return tuple(a[0] for a in v) if isinstance(v, tuple) else v[0]


def gru_forward(stack: RecurrentStack, features, carry: dict | None = None):
    if stack.kind != "GRU":
        raise ConfigError("gru_forward needs a GRU stack")
    return stack.forward_sequence(features, carry)


def lstm_forward(stack: RecurrentStack, features, carry: dict | None = None):
    if stack.kind != "LSTM":
        raise ConfigError("lstm_forward needs an LSTM stack")
    return stack.forward_sequence(features, carry)


# -- transformer -----------------------------------------------------------------


def sinusoidal_encoding(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    rates = np.exp(-math.log(10000.0) * (np.arange(0, dim, 2) / dim))
    pe = np.zeros((length, dim))
    pe[:, 0::2] = np.sin(pos * rates)
    pe[:, 1::2] = np.cos(pos * rates[: dim // 2])
    return pe


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.gain = param(np.ones(dim), "gain")
        self.bias = param(np.zeros(dim), "bias")
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain, self.bias, self.eps)


class MultiHeadAttention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        super().__init__()
        if dim % heads:
            raise ConfigError(f"model dim {dim} is not divisible by {heads} heads")
        self.dim, self.heads = dim, heads
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.o = Linear(dim, dim, rng)
        self.last_attention: np.ndarray | None = None

    def _split(self, x: Tensor) -> Tensor:
        B, L, _ = x.shape
        return x.reshape(B, L, self.heads, self.dim // self.heads).transpose(0, 2, 1, 3)

    def __call__(self, x: Tensor, mask: np.ndarray) -> Tensor:
        B, L, _ = x.shape
        q, k, v = self._split(self.q(x)), self._split(self.k(x)), self._split(self.v(x))
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(self.dim // self.heads))
        # padding keys get a large negative bias; every query row keeps >= 1 real key
        key_bias = np.where(np.asarray(mask, dtype=bool), 0.0, -1e9)[:, None, None, :]
        attn = softmax(scores + key_bias, axis=-1)
        self.last_attention = attn.data
        ctx = (attn @ v).transpose(0, 2, 1, 3).reshape(B, L, self.dim)
        return self.o(ctx)


class TransformerBlock(Module):
    """Pre-norm encoder block: x + MHA(LN(x)), then x + FFN(LN(x))."""

    def __init__(self, dim: int, heads: int, ff_dim: int, dropout_rate: float, rng):
        super().__init__()
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng)
        self.norm2 = LayerNorm(dim)
        self.ff1 = Linear(dim, ff_dim, rng)
        self.ff2 = Linear(ff_dim, dim, rng)
        self.dropout_rate = dropout_rate

    def __call__(self, x: Tensor, mask, training=False, rng=None) -> Tensor:
        p = self.dropout_rate
        x = x + dropout(self.attn(self.norm1(x), mask), p, training, rng)
        h = dropout(relu(self.ff1(self.norm2(x))), p, training, rng)
        return x + dropout(self.ff2(h), p, training, rng)


class TransformerStack(Module):
    """Transformer blocks, optionally preceded by an input projection plus positional encoding."""

    def __init__(self, in_dim: int | None, dim: int, num_blocks: int, heads: int, ff_dim: int,
                 dropout_rate: float, rng, positional: bool = True):
        super().__init__()
        self.in_dim = in_dim if in_dim is not None else dim
        self.out_dim = dim
        self.positional = positional
        self.dropout_rate = dropout_rate
        self.proj = Linear(in_dim, dim, rng) if in_dim is not None else None
        self.blocks = ModuleList(TransformerBlock(dim, heads, ff_dim, dropout_rate, rng)
                                 for _ in range(num_blocks))

    def carry_keys(self) -> list[str]:
        return []

    def zero_carry(self, batch: int) -> dict:
        return {}

    def __call__(self, x: Tensor, mask, carry=None, training=False, rng=None) -> tuple[Tensor, dict]:
        x = as_tensor(x)
        if self.proj is not None:
            x = self.proj(x)
            if self.positional:
                x = x + sinusoidal_encoding(x.shape[1], self.out_dim)[None]
            x = dropout(x, self.dropout_rate, training, rng)
        for block in self.blocks:
            x = block(x, mask, training, rng)
        return x, {}

    def attention_maps(self) -> list[np.ndarray]:
        return [b.attn.last_attention for b in self.blocks]


def transformer_forward(stack: TransformerStack, features) -> Tensor:
    """Single-segment convenience: features (l, d) -> outputs (l, h); context never crosses segments."""
    x = as_tensor(features)
    out, _ = stack(x.reshape(1, *x.shape), np.ones((1, x.shape[0]), dtype=bool))
    return out.reshape(x.shape[0], -1)


@dataclass
class EncoderConfig:
    kind: str = "TRM"
    input_dim: int = 1
    hidden: int = 1024
    layers: int | None = None
    heads: int = 4
    ff_dim: int = 1024
    dropout: float = 0.3
    positional_encoding: bool = True

    def __post_init__(self):
        if self.kind not in ENCODER_KINDS:
            raise ConfigError(f"encoder kind must be one of {ENCODER_KINDS}, got {self.kind!r}")
        if self.layers is None:
            self.layers = 4 if self.kind == "TRM" else 2
        if self.input_dim < 1 or self.hidden < 1 or self.layers < 0:
            raise ConfigError("encoder dims must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.kind == "TRM" and self.hidden % self.heads:
            raise ConfigError(f"model dim {self.hidden} not divisible by {self.heads} heads")


def build_stack(cfg: EncoderConfig, in_dim: int, num_layers: int, rng, *, project: bool,
                carry_prefix: str = ""):
    """One encoder section. ``project`` adds the transformer input projection (bottom only)."""
    if cfg.kind == "TRM":
        return TransformerStack(in_dim if project else None, cfg.hidden, num_layers, cfg.heads,
                                cfg.ff_dim, cfg.dropout, rng, cfg.positional_encoding)
    return RecurrentStack(cfg.kind, in_dim, cfg.hidden, num_layers, cfg.dropout, rng, carry_prefix)
