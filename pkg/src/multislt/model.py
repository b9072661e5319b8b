"""Speech-Transformer for direct speech translation.

Encoder: two strided 3×3 CNN blocks, two 2D self-attention layers,
reshape + feed-forward to d_model, sinusoidal positions, then a stack of
post-norm Transformer layers whose self-attention is biased toward the
local temporal context by a logarithmic distance penalty. Decoder:
character embeddings, causal self-attention, cross-attention.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .forcing import MODES, SITES, TargetForcing
from .modules import (BatchNorm2d, Conv2d, Dropout, Embedding, LayerNorm,
                      Linear, Module, ModuleList)
from .tensor import Tensor

NEG_INF = -1e30  # additive mask value; exp() underflows to exactly 0


@dataclass
class ModelConfig:
    vocab_size: int
    languages: tuple = ()
    d_model: int = 512
    ff_hidden: int = 1024
    n_encoder_layers: int = 6
    n_decoder_layers: int = 6
    n_heads: int = 8
    dropout: float = 0.1
    n_mels: int = 40
    frontend_channels: int = 16
    sa2d_channels: int = 4
    sa2d_out_channels: int = 16
    forcing_mode: str = "none"
    forcing_site: str = "pre"
    penalty_in_sa2d: bool = True

    def __post_init__(self):
        self.languages = tuple(self.languages)
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.forcing_mode not in MODES or self.forcing_site not in SITES:
            raise ValueError(f"bad forcing {self.forcing_mode!r}/{self.forcing_site!r}")
        if self.forcing_mode != "none" and not self.languages:
            raise ValueError("forcing enabled but no languages configured")
        for name in ("vocab_size", "d_model", "ff_hidden", "n_encoder_layers",
                     "n_decoder_layers", "n_heads", "n_mels", "frontend_channels",
                     "sa2d_channels", "sa2d_out_channels"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def desk(cls, vocab_size: int, languages=(), **overrides) -> "ModelConfig":
        """Laptop-sized preset; structural wiring identical to full scale."""
        kw = dict(d_model=64, ff_hidden=128, n_encoder_layers=2,
                  n_decoder_layers=2, n_heads=4)
        kw.update(overrides)
        return cls(vocab_size=vocab_size, languages=tuple(languages), **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["languages"] = list(self.languages)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class EncoderState:
    """Encoder memory (B×T'×d_model) plus its frame validity mask (B×T')."""

    memory: Tensor
    mask: np.ndarray


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def encoder_length(t: int, concat_at_pre: bool = False) -> int:
    """Ceil-halving twice; concat-at-pre prepends one frame first."""
    if concat_at_pre:
        t += 1
    return ceil_div(ceil_div(t, 2), 2)


def distance_penalty(n: int) -> np.ndarray:
    """n×n matrix of log-distance penalties: 0 on |i-j| <= 1, ln|i-j| beyond."""
    if n < 1:
        raise ValueError("penalty size must be >= 1")
    d = np.abs(np.subtract.outer(np.arange(n), np.arange(n))).astype(np.float64)
    return np.log(np.maximum(d, 1.0))


def positional_encoding(length: int, d_model: int) -> np.ndarray:
    """Sinusoidal positions: sin on even indices, cos on odd, base 10000."""
    if d_model % 2:
        raise ValueError("d_model must be even")
    pos = np.arange(length)[:, None]
    div = 10000.0 ** (np.arange(0, d_model, 2) / d_model)
    pe = np.zeros((length, d_model))
    pe[:, 0::2] = np.sin(pos / div)
    pe[:, 1::2] = np.cos(pos / div)
    return pe


def lengths_to_mask(lengths: np.ndarray, max_len: int) -> np.ndarray:
    return np.arange(max_len)[None, :] < np.asarray(lengths)[:, None]


def _key_bias(mask: np.ndarray) -> np.ndarray:
    """B×T validity mask -> B×1×1×T additive bias for attention scores."""
    return np.where(mask, 0.0, NEG_INF)[:, None, None, :]


class MultiHeadAttention(Module):
    def __init__(self, d_model: int, n_heads: int, rng):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.wq = Linear(d_model, d_model, rng)
        self.wk = Linear(d_model, d_model, rng)
        self.wv = Linear(d_model, d_model, rng)
        self.wo = Linear(d_model, d_model, rng)

    def __call__(self, query: Tensor, kv: Tensor, bias: np.ndarray | None = None) -> Tensor:
        B, Tq, d = query.shape
        Tk = kv.shape[1]

        def split(x, length):
            x = T.reshape(x, (B, length, self.n_heads, self.d_head))
            return T.transpose(x, (0, 2, 1, 3))

        q = split(self.wq(query), Tq)
        k = split(self.wk(kv), Tk)
        v = split(self.wv(kv), Tk)
        scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), self.d_head ** -0.5)
        if bias is not None:
            scores = T.add(scores, Tensor(bias))
        attn = T.softmax(scores, axis=-1)
        out = T.matmul(attn, v)
        out = T.reshape(T.transpose(out, (0, 2, 1, 3)), (B, Tq, d))
        return self.wo(out)


class FeedForward(Module):
    def __init__(self, d_model: int, hidden: int, rng):
        super().__init__()
        self.w1 = Linear(d_model, hidden, rng)
        self.w2 = Linear(hidden, d_model, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.w2(T.relu(self.w1(x)))


class EncoderLayer(Module):
    """Post-norm: normalize(x + sublayer(x))."""

    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        self.attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, rng)
        self.ff = FeedForward(cfg.d_model, cfg.ff_hidden, rng)
        self.ln1 = LayerNorm(cfg.d_model)
        self.ln2 = LayerNorm(cfg.d_model)
        self.drop1 = Dropout(cfg.dropout)
        self.drop2 = Dropout(cfg.dropout)

    def __call__(self, x: Tensor, bias: np.ndarray) -> Tensor:
        x = self.ln1(T.add(x, self.drop1(self.attn(x, x, bias))))
        return self.ln2(T.add(x, self.drop2(self.ff(x))))


class DecoderLayer(Module):
    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, rng)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, rng)
        self.ff = FeedForward(cfg.d_model, cfg.ff_hidden, rng)
        self.ln1 = LayerNorm(cfg.d_model)
        self.ln2 = LayerNorm(cfg.d_model)
        self.ln3 = LayerNorm(cfg.d_model)
        self.drop1 = Dropout(cfg.dropout)
        self.drop2 = Dropout(cfg.dropout)
        self.drop3 = Dropout(cfg.dropout)

    def __call__(self, x: Tensor, memory: Tensor, causal_bias: np.ndarray,
                 cross_bias: np.ndarray) -> Tensor:
        x = self.ln1(T.add(x, self.drop1(self.self_attn(x, x, causal_bias))))
        x = self.ln2(T.add(x, self.drop2(self.cross_attn(x, memory, cross_bias))))
        return self.ln3(T.add(x, self.drop3(self.ff(x))))


class ConvBlock(Module):
    """conv -> ReLU -> batch norm."""

    def __init__(self, c_in: int, c_out: int, stride, rng):
        super().__init__()
        self.conv = Conv2d(c_in, c_out, stride, rng)
        self.bn = BatchNorm2d(c_out)

    def __call__(self, x: Tensor) -> Tensor:
        return self.bn(T.relu(self.conv(x)))


class SA2D(Module):
    """2D self-attention: per-channel attention along time and frequency.

    Q/K/V come from parallel 3×3 convolutions; time-axis attention carries
    the distance penalty (configurable), frequency-axis attention does not.
    The 2c outputs are concatenated on the channel axis and passed through
    a final conv block.
    """

    def __init__(self, cfg: ModelConfig, c_in: int, rng):
        super().__init__()
        c = cfg.sa2d_channels
        self.scale = cfg.d_model ** -0.5
        self.use_penalty = cfg.penalty_in_sa2d
        self.q = ConvBlock(c_in, c, (1, 1), rng)
        self.k = ConvBlock(c_in, c, (1, 1), rng)
        self.v = ConvBlock(c_in, c, (1, 1), rng)
        self.out = ConvBlock(2 * c, cfg.sa2d_out_channels, (1, 1), rng)

    def __call__(self, x: Tensor, time_mask: np.ndarray, penalty: np.ndarray) -> Tensor:
        q, k, v = self.q(x), self.k(x), self.v(x)
        # time axis: B×c×T×F matrices, keys masked at padding frames
        t_scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), self.scale)
        bias = _key_bias(time_mask)
        if self.use_penalty:
            bias = bias - penalty
        t_out = T.matmul(T.softmax(T.add(t_scores, Tensor(bias)), axis=-1), v)
        # frequency axis: transposed, no penalty
        qf = T.transpose(q, (0, 1, 3, 2))
        kf = T.transpose(k, (0, 1, 3, 2))
        vf = T.transpose(v, (0, 1, 3, 2))
        f_scores = T.scale(T.matmul(qf, T.transpose(kf, (0, 1, 3, 2))), self.scale)
        f_out = T.transpose(T.matmul(T.softmax(f_scores, axis=-1), vf), (0, 1, 3, 2))
        return self.out(T.concat([t_out, f_out], axis=1))


class Encoder(Module):
    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        self.cfg = cfg
        ch = cfg.frontend_channels
        self.front1 = ConvBlock(1, ch, (2, 2), rng)
        self.front2 = ConvBlock(ch, ch, (2, 2), rng)
        self.sa2d1 = SA2D(cfg, ch, rng)
        self.sa2d2 = SA2D(cfg, cfg.sa2d_out_channels, rng)
        freq = ceil_div(ceil_div(cfg.n_mels, 2), 2)
        self.proj = Linear(cfg.sa2d_out_channels * freq, cfg.d_model, rng)
        self.pe_drop = Dropout(cfg.dropout)
        self.layers = ModuleList(EncoderLayer(cfg, rng) for _ in range(cfg.n_encoder_layers))


class Decoder(Module):
    def __init__(self, cfg: ModelConfig, rng):
        super().__init__()
        self.cfg = cfg
        self.embed = Embedding(cfg.vocab_size, cfg.d_model, rng)
        self.pe_drop = Dropout(cfg.dropout)
        self.layers = ModuleList(DecoderLayer(cfg, rng) for _ in range(cfg.n_decoder_layers))
        self.out_proj = Linear(cfg.d_model, cfg.vocab_size, rng)


def _forcing_width(cfg: ModelConfig) -> int:
    if cfg.forcing_site == "pre":
        return cfg.n_mels
    if cfg.forcing_site == "post":
        return ceil_div(ceil_div(cfg.n_mels, 2), 2)
    return cfg.d_model  # final and decoder sites


class SpeechTransformer(Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.encoder = Encoder(cfg, rng)
        self.decoder = Decoder(cfg, rng)
        if cfg.forcing_mode != "none":
            self.forcing = TargetForcing(cfg.forcing_mode, cfg.forcing_site,
                                         cfg.languages, _forcing_width(cfg), rng)
        else:
            self.forcing = None

    def _langs(self, langs, batch: int):
        if self.cfg.forcing_mode == "none":
            return None
        if langs is None:
            raise ValueError("forcing is enabled but no target languages were given")
        langs = [langs] * batch if isinstance(langs, str) else list(langs)
        if len(langs) != batch:
            raise ValueError(f"got {len(langs)} languages for batch of {batch}")
        return langs

    def encode(self, features, lengths, langs=None) -> EncoderState:
        """Run the encoder on padded B×T×F features with per-utterance lengths.

        ``features`` may be a numpy array or a Tensor (so gradient checks can
        reach the input).
        """
        x = features if isinstance(features, Tensor) else Tensor(np.asarray(features, dtype=np.float64))
        if x.ndim == 2:
            x = T.reshape(x, (1,) + x.shape)
        B = x.shape[0]
        lengths = np.asarray(lengths, dtype=np.int64)
        langs = self._langs(langs, B)
        site = self.cfg.forcing_site if self.forcing is not None else None
        if site == "pre":
            x, grew = self.forcing.inject_seq(x, langs)
            if grew:
                lengths = lengths + 1
        enc = self.encoder
        h = enc.front2(enc.front1(T.reshape(x, (B, 1) + x.shape[1:])))
        lengths = ceil_div_lengths(ceil_div_lengths(lengths, 2), 2)
        t_now = h.shape[2]
        mask = lengths_to_mask(lengths, t_now)
        pen = distance_penalty(t_now)
        h = enc.sa2d1(h, mask, pen)
        h = enc.sa2d2(h, mask, pen)
        if site == "post":
            h, grew = self.forcing.inject_4d(h, langs)
            if grew:
                lengths = lengths + 1
                t_now = h.shape[2]
                mask = lengths_to_mask(lengths, t_now)
        # merge channel and frequency axes
        h = T.reshape(T.transpose(h, (0, 2, 1, 3)), (B, t_now, -1))
        h = T.relu(enc.proj(h))
        if site == "final":
            h, grew = self.forcing.inject_seq(h, langs)
            if grew:
                lengths = lengths + 1
                t_now = h.shape[1]
                mask = lengths_to_mask(lengths, t_now)
        h = T.add(h, Tensor(positional_encoding(t_now, self.cfg.d_model)))
        h = enc.pe_drop(h)
        bias = _key_bias(mask) + distance_penalty(t_now) * -1.0
        for layer in enc.layers:
            h = layer(h, bias)
        return EncoderState(h, mask)

    def decode_logits(self, enc: EncoderState, prefix_ids: np.ndarray, langs=None) -> Tensor:
        """Teacher-forced logits, B×L×V, for bos-initial prefixes."""
        ids = np.asarray(prefix_ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None]
        B, L = ids.shape
        langs = self._langs(langs, B)
        dec = self.decoder
        emb = dec.embed(ids)
        if self.forcing is not None and self.cfg.forcing_site == "decoder":
            emb = self.forcing.inject_decoder(emb, langs)
        h = T.add(emb, Tensor(positional_encoding(L, self.cfg.d_model)))
        h = dec.pe_drop(h)
        causal = np.where(np.triu(np.ones((L, L)), k=1) > 0, NEG_INF, 0.0)
        cross = _key_bias(enc.mask)
        for layer in dec.layers:
            h = layer(h, enc.memory, causal, cross)
        return dec.out_proj(h)


def ceil_div_lengths(lengths: np.ndarray, s: int) -> np.ndarray:
    return -(-lengths // s)
