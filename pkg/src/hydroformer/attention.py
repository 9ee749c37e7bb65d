"""Scaled dot-product attention, explicit top-k sparse attention, causal
masking, and multi-head composition."""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ShapeError
from .tensor import Tensor, concat_cols, masked_softmax, matmul, scale, transpose


@dataclass
class AttentionConfig:
    d_model: int
    n_heads: int
    k_sparse: int | None = None  # None = dense
    causal: bool = False

    def __post_init__(self):
        if self.d_model <= 0 or self.n_heads <= 0:
            raise ValueError("d_model and n_heads must be positive")
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.k_sparse is not None and self.k_sparse < 1:
            raise ValueError("k_sparse must be >= 1")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads


def default_k(length: int) -> int:
    """Runtime default sparsity: keep a quarter of the row, at least one."""
    return max(1, math.ceil(length / 4))


def attention_scores(q: Tensor, k: Tensor) -> Tensor:
    """P = Q K^T / sqrt(d_k)."""
    if q.data.shape[1] != k.data.shape[1]:
        raise ShapeError(f"attention_scores: d_k mismatch {q.data.shape} vs {k.data.shape}")
    d_k = q.data.shape[1]
    return scale(matmul(q, transpose(k)), 1.0 / math.sqrt(d_k))


def topk_mask(scores: np.ndarray, k: int, allowed: np.ndarray | None = None) -> np.ndarray:
    """Boolean keep mask: per row, entries >= the k-th largest value survive.

    Ties at the threshold are all kept, so a row may keep more than k entries.
    When `allowed` is given the threshold is computed among allowed entries
    only and forbidden entries are never kept.
    """
    if k < 1:
        raise ValueError(f"topk_mask: k must be >= 1, got {k}")
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[1] == 0:
        raise ShapeError(f"topk_mask: need non-empty 2-D scores, got {scores.shape}")
    if allowed is None:
        allowed = np.ones(scores.shape, dtype=bool)
    else:
        allowed = np.asarray(allowed, dtype=bool)
        if allowed.shape != scores.shape:
            raise ShapeError("topk_mask: allowed mask shape mismatch")
        if not allowed.any(axis=1).all():
            raise ValueError("topk_mask: a row has no allowed entries")
    return kernels.topk_keep(scores, k, allowed)


def causal_mask(length: int) -> np.ndarray:
    """Position (i, j) allowed iff j <= i."""
    if length < 1:
        raise ValueError("causal_mask: length must be >= 1")
    return np.tril(np.ones((length, length), dtype=bool))


def _attend(q: Tensor, k: Tensor, v: Tensor, k_sparse: int | None, causal: bool) -> Tensor:
    if k.data.shape[0] != v.data.shape[0]:
        raise ShapeError(f"attention: K rows {k.data.shape[0]} != V rows {v.data.shape[0]}")
    p = attention_scores(q, k)
    l_q, l_k = p.data.shape
    if causal:
        if l_q != l_k:
            raise ShapeError("causal attention requires square score matrix")
        allowed = causal_mask(l_q)
    else:
        allowed = np.ones((l_q, l_k), dtype=bool)
    if k_sparse is not None:
        allowed = topk_mask(p.data, k_sparse, allowed)
    w = masked_softmax(p, allowed)
    return matmul(w, v)


def dense_attention(q: Tensor, k: Tensor, v: Tensor, causal: bool = False) -> Tensor:
    """softmax(Q K^T / sqrt(d_k)) V."""
    return _attend(q, k, v, None, causal)


def sparse_attention(q: Tensor, k: Tensor, v: Tensor, k_sparse: int,
                     causal: bool = False) -> Tensor:
    """softmax(Mask(P, k)) V: only the top-k scores per row survive the
    softmax. Equals dense_attention when k >= number of keys."""
    return _attend(q, k, v, k_sparse, causal)


@dataclass
class MultiHeadParams:
    """Per-head projections plus the output projection."""
    wq: list
    wk: list
    wv: list
    wo: Tensor


def multi_head(q_in: Tensor, k_in: Tensor, v_in: Tensor, cfg: AttentionConfig,
               params: MultiHeadParams) -> Tensor:
    if q_in.data.shape[1] != cfg.d_model:
        raise ShapeError(f"multi_head: input width {q_in.data.shape[1]} != d_model {cfg.d_model}")
    heads = []
    for i in range(cfg.n_heads):
        heads.append(_attend(matmul(q_in, params.wq[i]),
                             matmul(k_in, params.wk[i]),
                             matmul(v_in, params.wv[i]),
                             cfg.k_sparse, cfg.causal))
    return matmul(concat_cols(heads), params.wo)
