"""Attention kernels.

Three kernels over the same trace contract:

* ``baseline_attention``        — scaled dot-product attention.
* ``rel_attention_reference``   — relation-aware attention written as
  explicit per-pair loops. Slow by design; this is the correctness oracle.
* ``rel_attention_efficient``   — the same computation with the logit
  split into a content term and an edge term, both evaluated as batched
  matrix multiplications via tensor reshaping. No (b, h, n, n, d_a)
  intermediate is ever materialized.

Plus multi-head dispatch and the storage-accounting report.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Sequence, Union

import numpy as np

from .tensor import Tensor, matmul, softmax_rows, stack, ShapeMismatchError
from .relpos import (RelativeEmbeddingTables, edge_label_matrix,
                     gather_edge_tensors, SHARING_CHOICES)

Tables = Union[RelativeEmbeddingTables, Sequence[RelativeEmbeddingTables]]


@dataclass
class AttentionParams:
    """Per-head projections stacked on a leading head axis.

    w_q, w_k, w_v: (h, d_x, d_z); w_o: (h*d_z, d_x).
    """

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    h: int

    def __post_init__(self):
        if self.w_q.shape[0] != self.h or self.w_k.shape[0] != self.h \
                or self.w_v.shape[0] != self.h:
            raise ShapeMismatchError("per-head projection count must equal h")
        d_z = self.w_q.shape[2]
        if self.w_o.shape[0] != self.h * d_z:
            raise ShapeMismatchError(
                f"w_o input extent {self.w_o.shape[0]} != h*d_z = {self.h * d_z}")


@dataclass
class AttentionConfig:
    d_x: int
    d_z: int
    h: int
    k: int = 4
    d_a: int | None = None  # defaults to d_z
    mode: str = "baseline"  # "baseline" | "relative"
    use_a_v: bool = True
    use_a_k: bool = True
    causal_mask: bool = False
    edge_sharing: str = "per_layer_and_head"

    def __post_init__(self):
        if self.d_a is None:
            self.d_a = self.d_z
        if self.mode not in ("baseline", "relative"):
            raise ValueError(f"unknown attention mode {self.mode!r}")
        if self.edge_sharing not in SHARING_CHOICES:
            raise ValueError(f"unknown edge_sharing {self.edge_sharing!r}")
        if self.mode == "baseline":
            self.use_a_v = False
            self.use_a_k = False
        if self.d_a != self.d_z and (self.use_a_v or self.use_a_k):
            raise ValueError("d_a must equal d_z when edge terms are enabled")
        if self.k < 0:
            raise ValueError(f"clipping distance must be nonnegative, got {self.k}")


@dataclass
class AttentionTrace:
    """Immutable record of one attention evaluation."""

    logits: Tensor        # (b, h, n, n), -inf on masked entries
    weights: Tensor       # (b, h, n, n), rows sum to 1
    heads_concat: Tensor  # (b, n, h*d_z), pre output-projection
    output: Tensor        # (b, n, d_x)


def xavier_uniform(rng: np.random.Generator, shape: tuple) -> np.ndarray:
    fan_in, fan_out = shape[-2], shape[-1]
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_attention_params(cfg: AttentionConfig, rng: np.random.Generator) -> AttentionParams:
    w_q = Tensor(xavier_uniform(rng, (cfg.h, cfg.d_x, cfg.d_z)), requires_grad=True)
    w_k = Tensor(xavier_uniform(rng, (cfg.h, cfg.d_x, cfg.d_z)), requires_grad=True)
    w_v = Tensor(xavier_uniform(rng, (cfg.h, cfg.d_x, cfg.d_z)), requires_grad=True)
    w_o = Tensor(xavier_uniform(rng, (cfg.h * cfg.d_z, cfg.d_x)), requires_grad=True)
    return AttentionParams(w_q, w_k, w_v, w_o, cfg.h)


def causal_mask_array(n: int) -> np.ndarray:
    """Additive mask: 0 on/below the diagonal, -inf above."""
    mask = np.zeros((n, n))
    mask[np.triu_indices(n, k=1)] = -np.inf
    return mask


def _project_heads(x: Tensor, params: AttentionParams) -> tuple[Tensor, Tensor, Tensor]:
    """Project (b, n, d_x) input to per-head (b, h, n, d_z) q/k/v."""
    b, n, d_x = x.shape
    x4 = x.reshape((b, 1, n, d_x))
    q = matmul(x4, params.w_q)
    k = matmul(x4, params.w_k)
    v = matmul(x4, params.w_v)
    return q, k, v


def _finish(e: Tensor, v: Tensor, params: AttentionParams,
            cfg: AttentionConfig, a_v_edges=None, per_head_a_v=None) -> AttentionTrace:
    """Shared tail: mask, softmax, weighted sum (plus optional edge-value
    term), head concat, output projection."""
    b, h, n, _ = e.shape
    if cfg.causal_mask:
        e = e + Tensor(causal_mask_array(n))
    alpha = softmax_rows(e)
    z = matmul(alpha, v)  # (b, h, n, d_z)
    if a_v_edges is not None:
        # alpha reshaped to n slices of (b*h, n), each multiplied by that
        # position's (n, d_a) edge block: never expands edges per head/batch.
        at = alpha.transpose((2, 0, 1, 3)).reshape((n, b * h, n))
        ze = matmul(at, a_v_edges)  # (n, b*h, d_a)
        z = z + ze.reshape((n, b, h, cfg.d_a)).transpose((1, 2, 0, 3))
    elif per_head_a_v is not None:
        zs = []
        for hi in range(h):
            at = alpha[:, hi].transpose((1, 0, 2))          # (n, b, n)
            ze = matmul(at, per_head_a_v[hi])               # (n, b, d_a)
            zs.append(ze.transpose((1, 0, 2)))
        z = z + stack(zs, axis=1)
    heads_concat = z.transpose((0, 2, 1, 3)).reshape((b, n, h * z.shape[-1]))
    output = matmul(heads_concat, params.w_o)
    return AttentionTrace(e, alpha, heads_concat, output)


def baseline_attention(x: Tensor, params: AttentionParams,
                       cfg: AttentionConfig) -> AttentionTrace:
    """Scaled dot-product multi-head self-attention."""
    if cfg.mode != "baseline":
        raise ValueError("baseline_attention requires cfg.mode == 'baseline'")
    q, k, v = _project_heads(x, params)
    e = matmul(q, k.transpose((0, 1, 3, 2))) * (1.0 / math.sqrt(cfg.d_z))
    return _finish(e, v, params, cfg)


def _tables_per_head(tables: Tables, h: int) -> list[RelativeEmbeddingTables] | None:
    """Return a per-head list when tables are unique per head, else None."""
    if isinstance(tables, RelativeEmbeddingTables):
        return None
    tables = list(tables)
    if len(tables) != h:
        raise ValueError(f"expected {h} per-head tables, got {len(tables)}")
    return tables


def rel_attention_efficient(x: Tensor, params: AttentionParams, tables: Tables,
                            cfg: AttentionConfig, _flip_edge_logit_sign: bool = False
                            ) -> AttentionTrace:
    """Relation-aware attention via the two-term logit split.

    Logits = content term (one batched q k^T multiplication) plus an edge
    term computed as n parallel multiplications of (b*h, d_z) query slices
    against (d_z, n) edge blocks; both terms share the 1/sqrt(d_z) scale.
    The value-side edge contribution uses the same reshaping. The
    `_flip_edge_logit_sign` hook exists only so the checker's mutation
    test can prove the oracle sweep detects a broken edge term.
    """
    if cfg.mode != "relative":
        raise ValueError("rel_attention_efficient requires cfg.mode == 'relative'")
    b, n, _ = x.shape
    h, d_z, d_a = cfg.h, cfg.d_z, cfg.d_a
    q, k, v = _project_heads(x, params)
    e = matmul(q, k.transpose((0, 1, 3, 2)))

    per_head = _tables_per_head(tables, h)
    labels = edge_label_matrix(n, cfg.k)
    sign = -1.0 if _flip_edge_logit_sign else 1.0

    a_v_shared = None
    per_head_a_v = None
    if per_head is None:
        a_k, a_v = gather_edge_tensors(labels, tables)
        if cfg.use_a_k:
            qt = q.transpose((2, 0, 1, 3)).reshape((n, b * h, d_z))
            t2 = matmul(qt, a_k.transpose((0, 2, 1)))  # (n, b*h, n)
            e = e + t2.reshape((n, b, h, n)).transpose((1, 2, 0, 3)) * sign
        if cfg.use_a_v:
            a_v_shared = a_v
    else:
        edge = [gather_edge_tensors(labels, t) for t in per_head]
        if cfg.use_a_k:
            rows = []
            for hi in range(h):
                qh = q[:, hi].transpose((1, 0, 2))               # (n, b, d_z)
                t2 = matmul(qh, edge[hi][0].transpose((0, 2, 1)))  # (n, b, n)
                rows.append(t2.transpose((1, 0, 2)))
            e = e + stack(rows, axis=1) * sign
        if cfg.use_a_v:
            per_head_a_v = [ed[1] for ed in edge]

    e = e * (1.0 / math.sqrt(d_z))
    return _finish(e, v, params, cfg, a_v_edges=a_v_shared, per_head_a_v=per_head_a_v)


def rel_attention_reference(x: Tensor, params: AttentionParams, tables: Tables,
                            cfg: AttentionConfig) -> AttentionTrace:
    """Relation-aware attention as explicit per-pair loops; the O(n^2)
    correctness oracle with no batching tricks."""
    if cfg.mode != "relative":
        raise ValueError("rel_attention_reference requires cfg.mode == 'relative'")
    b, n, _ = x.shape
    h, d_z = cfg.h, cfg.d_z
    scale = 1.0 / math.sqrt(d_z)
    per_head = _tables_per_head(tables, h)
    labels = edge_label_matrix(n, cfg.k)
    neg_inf = Tensor(-np.inf)

    batch_logits, batch_z = [], []
    for bi in range(b):
        head_logits, head_z = [], []
        xb = x[bi]  # (n, d_x)
        for hi in range(h):
            t = per_head[hi] if per_head is not None else tables
            a_k, a_v = gather_edge_tensors(labels, t)
            q = matmul(xb, params.w_q[hi])
            kk = matmul(xb, params.w_k[hi])
            vv = matmul(xb, params.w_v[hi])
            rows = []
            for i in range(n):
                row = []
                for j in range(n):
                    if cfg.causal_mask and j > i:
                        row.append(neg_inf)
                        continue
                    key = kk[j] + a_k[i, j] if cfg.use_a_k else kk[j]
                    row.append((q[i] * key).sum() * scale)
                rows.append(stack(row))
            e = stack(rows)
            alpha = softmax_rows(e)
            zs = []
            for i in range(n):
                terms = []
                for j in range(n):
                    val = vv[j] + a_v[i, j] if cfg.use_a_v else vv[j]
                    terms.append(alpha[i, j] * val)
                zs.append(stack(terms).sum(axis=0))
            head_logits.append(e)
            head_z.append(stack(zs))
        batch_logits.append(stack(head_logits))
        batch_z.append(stack(head_z))
    e = stack(batch_logits)            # (b, h, n, n)
    alpha = softmax_rows(e)
    z = stack(batch_z)                 # (b, h, n, d_z)
    heads_concat = z.transpose((0, 2, 1, 3)).reshape((b, n, h * d_z))
    output = matmul(heads_concat, params.w_o)
    return AttentionTrace(e, alpha, heads_concat, output)


def multi_head_forward(x: Tensor, params: AttentionParams, tables: Tables | None,
                       cfg: AttentionConfig, kernel: str = "efficient") -> AttentionTrace:
    """Dispatch to the configured kernel and return the full trace."""
    if cfg.mode == "baseline":
        return baseline_attention(x, params, cfg)
    if tables is None:
        raise ValueError("relative mode requires edge tables")
    if kernel == "efficient":
        return rel_attention_efficient(x, params, tables, cfg)
    if kernel == "reference":
        return rel_attention_reference(x, params, tables, cfg)
    raise ValueError(f"unknown kernel {kernel!r}")


@dataclass
class StorageReport:
    """Exact element counts behind the space-complexity accounting."""

    table_parameters: int
    expanded_per_pair_shared: int
    expanded_per_pair_unshared: int
    activation_baseline: int
    relative_ratio: float

    def as_dict(self) -> dict:
        return asdict(self)


def relative_storage_report(cfg: AttentionConfig, n: int, b: int) -> StorageReport:
    """Scalar storage counts for one layer at sequence length n, batch b.

    Expanded per-pair edge tensors cost 2 n^2 d_a elements when shared
    across heads, h times that when unique per head; they are shared
    across sequences, so the relative overhead vs the b h n d_z activation
    baseline scales as n / (b h).
    """
    multiplier = cfg.h if cfg.edge_sharing == "per_layer_and_head" else 1
    return StorageReport(
        table_parameters=2 * (2 * cfg.k + 1) * cfg.d_a * multiplier,
        expanded_per_pair_shared=2 * n * n * cfg.d_a,
        expanded_per_pair_unshared=2 * cfg.h * n * n * cfg.d_a,
        activation_baseline=b * cfg.h * n * cfg.d_z,
        relative_ratio=n / (b * cfg.h),
    )
