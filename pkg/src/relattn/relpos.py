"""Clipped relative-position machinery: the clip function, the Toeplitz
edge-label matrix, and the learned per-offset embedding tables."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, gather_rows

# granularity at which edge tables are allocated/shared
SHARING_CHOICES = ("per_model", "per_layer", "per_layer_and_head")


def clip(x: int, k: int) -> int:
    """max(-k, min(k, x)); identity when |x| <= k."""
    if k < 0:
        raise ValueError(f"clipping distance must be nonnegative, got {k}")
    return max(-k, min(k, x))


_label_cache: dict[tuple[int, int], np.ndarray] = {}


def edge_label_matrix(n: int, k: int) -> np.ndarray:
    """n x n integer matrix with entry (i, j) = clip(j - i, k) + k.

    Pure function of (n, k): materialized once and cached, shared across
    batches. The returned array is read-only.
    """
    if n < 1:
        raise ValueError(f"sequence length must be >= 1, got {n}")
    if k < 0:
        raise ValueError(f"clipping distance must be nonnegative, got {k}")
    key = (n, k)
    cached = _label_cache.get(key)
    if cached is None:
        offsets = np.arange(n)[None, :] - np.arange(n)[:, None]
        cached = np.clip(offsets, -k, k) + k
        cached.flags.writeable = False
        _label_cache[key] = cached
    return cached


@dataclass
class RelativeEmbeddingTables:
    """Learned tables for key-side and value-side edge vectors.

    Row r of each table is the representation of relative offset r - k,
    so both tables have exactly 2k+1 rows.
    """

    w_k_table: Tensor
    w_v_table: Tensor
    k: int
    d_a: int

    def __post_init__(self):
        rows = 2 * self.k + 1
        for name, t in (("w_k_table", self.w_k_table), ("w_v_table", self.w_v_table)):
            if t.shape != (rows, self.d_a):
                raise ValueError(
                    f"{name} must have shape ({rows}, {self.d_a}), got {t.shape}")


def init_tables(k: int, d_a: int, rng: np.random.Generator) -> RelativeEmbeddingTables:
    """Uniform init in [-0.1/sqrt(d_a), 0.1/sqrt(d_a)]: small enough that
    early logits stay near the baseline attention's."""
    bound = 0.1 / np.sqrt(d_a)
    rows = 2 * k + 1
    w_k = Tensor(rng.uniform(-bound, bound, size=(rows, d_a)), requires_grad=True)
    w_v = Tensor(rng.uniform(-bound, bound, size=(rows, d_a)), requires_grad=True)
    return RelativeEmbeddingTables(w_k, w_v, k, d_a)


def gather_edge_tensors(labels: np.ndarray,
                        tables: RelativeEmbeddingTables) -> tuple[Tensor, Tensor]:
    """Expand label matrix into per-pair edge tensors a_k, a_v of shape
    n x n x d_a. Differentiable into the tables (scatter-add)."""
    a_k = gather_rows(tables.w_k_table, labels)
    a_v = gather_rows(tables.w_v_table, labels)
    return a_k, a_v
