"""Guided multi-head attention fusion.

The guiding modality (depth or physiological features) supplies the
queries; the main modality is projected once and used as both keys and
values.  Feature vectors are split into ``tokens`` rows of ``d_model``
so that attention runs over more than a single key.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import ParameterStore
from .tensor import (
    ShapeError,
    Tensor,
    add,
    concat,
    linear,
    matmul,
    mul,
    reshape,
    softmax,
    transpose,
)


@dataclass(frozen=True)
class AttentionConfig:
    tokens: int = 8
    d_model: int = 32
    heads: int = 4
    residual: bool = False

    def __post_init__(self):
        if self.tokens < 1 or self.d_model < 1 or self.heads < 1:
            raise ValueError(f"attention sizes must be positive: {self}")
        if self.d_model % self.heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by heads={self.heads}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.heads

    @property
    def out_dim(self) -> int:
        return self.tokens * self.d_model


def sdp_attention(q: Tensor, k: Tensor, v: Tensor, return_weights: bool = False):
    """``softmax(q k^T / sqrt(d)) v`` over the last two axes (leading axes are batch)."""
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"sdp_attention: query dim {q.shape[-1]} != key dim {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"sdp_attention: {k.shape[-2]} keys but {v.shape[-2]} values")
    d = q.shape[-1]
    axes = list(range(k.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    scores = mul(matmul(q, transpose(k, axes)), Tensor(1.0 / np.sqrt(d)))
    weights = softmax(scores, axis=-1)
    out = matmul(weights, v)
    return (out, weights) if return_weights else out


def init_guided(store: ParameterStore, prefix: str, main_dim: int, guide_dim: int,
                cfg: AttentionConfig, rng: np.random.Generator) -> None:
    width = cfg.tokens * cfg.d_model
    inner = cfg.heads * cfg.head_dim
    store.glorot_uniform(f"{prefix}.q_in.w", (guide_dim, width), guide_dim, width, rng)
    store.zeros(f"{prefix}.q_in.b", (width,))
    store.glorot_uniform(f"{prefix}.kv_in.w", (main_dim, width), main_dim, width, rng)
    store.zeros(f"{prefix}.kv_in.b", (width,))
    for proj in ("wq", "wk", "wv"):
        store.glorot_uniform(f"{prefix}.{proj}", (cfg.d_model, inner), cfg.d_model, inner, rng)
    store.glorot_uniform(f"{prefix}.wo", (inner, cfg.d_model), inner, cfg.d_model, rng)


def guided_multihead(params: ParameterStore, prefix: str, main: Tensor, guide: Tensor,
                     cfg: AttentionConfig, probe: dict | None = None) -> Tensor:
    """Fuse ``main`` ``[D_main]``/``[N, D_main]`` under guidance of ``guide``.

    Returns ``[tokens * d_model]`` (or ``[N, tokens * d_model]``).  When
    ``probe`` is a dict the per-head attention weights ``[N, h, T, T]`` are
    stored under ``probe[prefix]``.
    """
    single = main.ndim == 1
    if single:
        main, guide = reshape(main, (1, -1)), reshape(guide, (1, -1))
    if main.shape[0] != guide.shape[0]:
        raise ShapeError(f"guided_multihead: batch sizes differ, {main.shape} vs {guide.shape}")
    if main.shape[1] != params[f"{prefix}.kv_in.w"].shape[0]:
        raise ShapeError(f"guided_multihead: main features {main.shape} do not match {prefix}.kv_in.w")
    if guide.shape[1] != params[f"{prefix}.q_in.w"].shape[0]:
        raise ShapeError(f"guided_multihead: guide features {guide.shape} do not match {prefix}.q_in.w")
    n, t, dm, h, d = main.shape[0], cfg.tokens, cfg.d_model, cfg.heads, cfg.head_dim

    q_src = reshape(linear(guide, params[f"{prefix}.q_in.w"], params[f"{prefix}.q_in.b"]), (n, t, dm))
    kv_src = reshape(linear(main, params[f"{prefix}.kv_in.w"], params[f"{prefix}.kv_in.b"]), (n, t, dm))

    def heads_of(x: Tensor, proj: str) -> Tensor:
        return transpose(reshape(matmul(x, params[f"{prefix}.{proj}"]), (n, t, h, d)), (0, 2, 1, 3))

    out, weights = sdp_attention(heads_of(q_src, "wq"), heads_of(kv_src, "wk"), heads_of(kv_src, "wv"),
                                 return_weights=True)
    merged = reshape(transpose(out, (0, 2, 1, 3)), (n, t, h * d))
    fused = matmul(merged, params[f"{prefix}.wo"])
    if cfg.residual:
        fused = add(fused, kv_src)
    fused = reshape(fused, (n, t * dm))
    if probe is not None:
        probe[prefix] = weights.data
    return reshape(fused, (t * dm,)) if single else fused


def init_concat(store: ParameterStore, prefix: str, main_dim: int, guide_dim: int,
                out_dim: int, rng: np.random.Generator) -> None:
    fan_in = main_dim + guide_dim
    store.glorot_uniform(f"{prefix}.w", (fan_in, out_dim), fan_in, out_dim, rng)
    store.zeros(f"{prefix}.b", (out_dim,))


def concat_fusion(params: ParameterStore, prefix: str, main: Tensor, guide: Tensor) -> Tensor:
    """Concatenate the two feature vectors and apply one fully-connected layer."""
    joined = concat([main, guide], axis=-1)
    return linear(joined, params[f"{prefix}.w"], params[f"{prefix}.b"])
