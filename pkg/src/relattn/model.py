"""Small transformer-encoder stack with a per-position classification head.

Token embedding (scaled by sqrt(d_x)) -> optional positional signal
(sinusoidal and/or relative edge tables in attention) -> num_layers of
[self-attention + residual + layer norm, feed-forward + residual + layer
norm] -> linear projection to vocabulary logits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, matmul, layer_norm, gather_rows
from .attention import (AttentionConfig, AttentionParams, init_attention_params,
                        multi_head_forward, xavier_uniform)
from .relpos import RelativeEmbeddingTables, init_tables, SHARING_CHOICES

POSITION_MODES = ("none", "sinusoidal", "relative", "sinusoidal+relative")


@dataclass
class EncoderConfig:
    num_layers: int = 2
    d_x: int = 64
    d_z: int = 32
    h: int = 2
    d_ff: int = 128
    vocab_size: int = 16
    position_mode: str = "relative"
    k: int = 4
    use_a_v: bool = True
    use_a_k: bool = True
    dropout_rate: float = 0.0
    causal: bool = False
    edge_sharing: str = "per_layer_and_head"

    def __post_init__(self):
        if self.position_mode not in POSITION_MODES:
            raise ValueError(f"unknown position_mode {self.position_mode!r}")
        if self.edge_sharing not in SHARING_CHOICES:
            raise ValueError(f"unknown edge_sharing {self.edge_sharing!r}")
        if self.k < 0:
            raise ValueError(f"k must be nonnegative, got {self.k}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be at least 2")

    @property
    def relative(self) -> bool:
        return self.position_mode in ("relative", "sinusoidal+relative")

    def attention_config(self) -> AttentionConfig:
        mode = "relative" if self.relative else "baseline"
        return AttentionConfig(
            d_x=self.d_x, d_z=self.d_z, h=self.h, k=self.k, mode=mode,
            use_a_v=self.use_a_v if self.relative else False,
            use_a_k=self.use_a_k if self.relative else False,
            causal_mask=self.causal, edge_sharing=self.edge_sharing)


@dataclass
class LayerParams:
    attn: AttentionParams
    w_1: Tensor
    b_1: Tensor
    w_2: Tensor
    b_2: Tensor
    ln1_gain: Tensor
    ln1_bias: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor
    tables: object = None  # RelativeEmbeddingTables | list per head | None


@dataclass
class ModelParams:
    embedding: Tensor
    layers: list
    out_w: Tensor
    out_b: Tensor
    shared_tables: RelativeEmbeddingTables | None = None  # per_model sharing


def init_model(cfg: EncoderConfig, seed: int) -> ModelParams:
    rng = np.random.default_rng(seed)
    acfg = cfg.attention_config()
    embedding = Tensor(rng.normal(0.0, 1.0 / math.sqrt(cfg.d_x),
                                  size=(cfg.vocab_size, cfg.d_x)), requires_grad=True)
    shared_tables = None
    if cfg.relative and cfg.edge_sharing == "per_model":
        shared_tables = init_tables(cfg.k, acfg.d_a, rng)
    layers = []
    for _ in range(cfg.num_layers):
        tables = None
        if cfg.relative:
            if cfg.edge_sharing == "per_layer":
                tables = init_tables(cfg.k, acfg.d_a, rng)
            elif cfg.edge_sharing == "per_layer_and_head":
                tables = [init_tables(cfg.k, acfg.d_a, rng) for _ in range(cfg.h)]
        layers.append(LayerParams(
            attn=init_attention_params(acfg, rng),
            w_1=Tensor(xavier_uniform(rng, (cfg.d_x, cfg.d_ff)), requires_grad=True),
            b_1=Tensor(np.zeros(cfg.d_ff), requires_grad=True),
            w_2=Tensor(xavier_uniform(rng, (cfg.d_ff, cfg.d_x)), requires_grad=True),
            b_2=Tensor(np.zeros(cfg.d_x), requires_grad=True),
            ln1_gain=Tensor(np.ones(cfg.d_x), requires_grad=True),
            ln1_bias=Tensor(np.zeros(cfg.d_x), requires_grad=True),
            ln2_gain=Tensor(np.ones(cfg.d_x), requires_grad=True),
            ln2_bias=Tensor(np.zeros(cfg.d_x), requires_grad=True),
            tables=tables,
        ))
    out_w = Tensor(xavier_uniform(rng, (cfg.d_x, cfg.vocab_size)), requires_grad=True)
    out_b = Tensor(np.zeros(cfg.vocab_size), requires_grad=True)
    return ModelParams(embedding, layers, out_w, out_b, shared_tables)


def named_parameters(params: ModelParams) -> dict[str, Tensor]:
    """Stable name -> tensor map used by the optimizer and checkpoints."""
    out = {"embedding": params.embedding, "out_w": params.out_w, "out_b": params.out_b}
    if params.shared_tables is not None:
        out["tables.w_k_table"] = params.shared_tables.w_k_table
        out["tables.w_v_table"] = params.shared_tables.w_v_table
    for li, layer in enumerate(params.layers):
        p = f"layer{li}."
        out[p + "w_q"] = layer.attn.w_q
        out[p + "w_k"] = layer.attn.w_k
        out[p + "w_v"] = layer.attn.w_v
        out[p + "w_o"] = layer.attn.w_o
        for name in ("w_1", "b_1", "w_2", "b_2",
                     "ln1_gain", "ln1_bias", "ln2_gain", "ln2_bias"):
            out[p + name] = getattr(layer, name)
        if isinstance(layer.tables, RelativeEmbeddingTables):
            out[p + "w_k_table"] = layer.tables.w_k_table
            out[p + "w_v_table"] = layer.tables.w_v_table
        elif isinstance(layer.tables, list):
            for hi, t in enumerate(layer.tables):
                out[p + f"head{hi}.w_k_table"] = t.w_k_table
                out[p + f"head{hi}.w_v_table"] = t.w_v_table
    return out


def sinusoidal_encoding(n: int, d: int) -> np.ndarray:
    """Deterministic absolute-position signal: even dims sin(pos/10000^(2i/d)),
    odd dims the matching cos. Values in [-1, 1]."""
    if d % 2 != 0:
        raise ValueError(f"sinusoidal encoding needs an even width, got {d}")
    pos = np.arange(n)[:, None]
    freqs = np.exp(-math.log(10000.0) * np.arange(0, d, 2) / d)
    enc = np.zeros((n, d))
    enc[:, 0::2] = np.sin(pos * freqs)
    enc[:, 1::2] = np.cos(pos * freqs)
    return enc


def feed_forward(x: Tensor, layer: LayerParams) -> Tensor:
    """Position-wise two-layer net: max(0, x w1 + b1) w2 + b2."""
    hidden = (matmul(x, layer.w_1) + layer.b_1).relu()
    return matmul(hidden, layer.w_2) + layer.b_2


def _dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * Tensor(keep)


def _layer_tables(params: ModelParams, layer: LayerParams):
    return params.shared_tables if params.shared_tables is not None else layer.tables


def encoder_layer_forward(x: Tensor, layer: LayerParams, tables, cfg: EncoderConfig,
                          dropout_rng: np.random.Generator | None = None) -> Tensor:
    """Post-norm sublayers: y = LN(x + Attn(x)); out = LN(y + FFN(y))."""
    acfg = cfg.attention_config()
    attn_out = multi_head_forward(x, layer.attn, tables, acfg).output
    y = layer_norm(x + _dropout(attn_out, cfg.dropout_rate, dropout_rng),
                   layer.ln1_gain, layer.ln1_bias)
    ff = _dropout(feed_forward(y, layer), cfg.dropout_rate, dropout_rng)
    return layer_norm(y + ff, layer.ln2_gain, layer.ln2_bias)


def model_forward(tokens: np.ndarray, params: ModelParams, cfg: EncoderConfig,
                  dropout_rng: np.random.Generator | None = None) -> Tensor:
    """Map integer tokens (b, n) to per-position vocabulary logits
    (b, n, vocab_size). Pass a dropout_rng only during training."""
    tokens = np.asarray(tokens)
    if tokens.size and (tokens.min() < 0 or tokens.max() >= cfg.vocab_size):
        bad = tokens.flat[np.argmax((tokens < 0) | (tokens >= cfg.vocab_size))]
        raise IndexError(f"token id {bad} out of range [0, {cfg.vocab_size})")
    b, n = tokens.shape
    x = gather_rows(params.embedding, tokens) * math.sqrt(cfg.d_x)
    if cfg.position_mode in ("sinusoidal", "sinusoidal+relative"):
        x = x + Tensor(sinusoidal_encoding(n, cfg.d_x))
    for layer in params.layers:
        x = encoder_layer_forward(x, layer, _layer_tables(params, layer),
                                  cfg, dropout_rng)
    return matmul(x, params.out_w) + params.out_b
