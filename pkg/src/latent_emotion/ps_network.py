"""1D separable & mixable depthwise inception network for physiological signals.

Layout (channels for the default config in brackets)::

    x [3, L]
      -> depthwise stem, 8 filters per source, ReLU            [24]
      -> 2 inception blocks, 3 isolated groups (one per source)  [84]
      -> round-robin channel interleave (mixing)
      -> 2 inception blocks over the whole channel set           [84]
      -> mean over length -> FC + ReLU (features) -> FC (logits)

An inception branch is a depthwise conv of its own kernel size followed
by a grouped 1x1 projection and ReLU; branch outputs are concatenated
inside each group so group ``g`` stays a contiguous channel block.

Parameter count for a config (``C_s`` sources, stem multiplier ``m``,
stem kernel ``K``, blocks with ``G`` groups, per-group input width
``c``, branches ``(k_j, o_j)``)::

    stem   = C_s*m*K + C_s*m
    block  = sum_j (G*c*k_j + G*c) + sum_j (G*o_j*c + G*o_j)
    head   = C_last*feature_dim + feature_dim + feature_dim*classes + classes
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
    conv1d_depthwise,
    linear,
    matmul,
    mean,
    relu,
    reshape,
    take,
    transpose,
)

Branches = tuple[tuple[int, int], ...]


@dataclass(frozen=True)
class PSNetConfig:
    in_channels: int = 3
    input_length: int = 300
    stem_kernel: int = 7
    stem_multiplier: int = 8
    groups: int = 3
    grouped_blocks: int = 2
    grouped_branches: Branches = ((3, 4), (5, 6), (7, 8), (11, 10))
    mixed_blocks: int = 2
    mixed_groups: int = 1
    mixed_branches: Branches = ((3, 12), (5, 18), (7, 24), (11, 30))
    feature_dim: int = 256
    num_classes: int = 3

    def validate(self) -> None:
        if self.groups != self.in_channels:
            raise ValueError(f"grouped stage needs one group per source: groups={self.groups}, sources={self.in_channels}")
        if self.stem_kernel % 2 == 0:
            raise ValueError(f"stem kernel must be odd, got {self.stem_kernel}")
        for label, branches in (("grouped", self.grouped_branches), ("mixed", self.mixed_branches)):
            if len(branches) != 4:
                raise ValueError(f"{label} inception blocks need 4 branches, got {len(branches)}")
            for k, o in branches:
                if k < 1 or k % 2 == 0:
                    raise ValueError(f"{label} branch kernel must be odd and positive, got {k}")
                if o < 1:
                    raise ValueError(f"{label} branch width must be >= 1, got {o}")
            widths = [o for _, o in branches]
            if len(set(widths)) != len(widths):
                raise ValueError(f"{label} branch widths must be pairwise distinct, got {widths}")
        grouped_out = self.groups * sum(o for _, o in self.grouped_branches)
        if grouped_out % self.mixed_groups:
            raise ValueError(f"{grouped_out} mixed channels cannot split into {self.mixed_groups} groups")
        if min(self.input_length, self.feature_dim, self.num_classes, self.stem_multiplier) < 1:
            raise ValueError(f"sizes must be positive: {self}")

    @property
    def stem_channels(self) -> int:
        return self.in_channels * self.stem_multiplier

    def block_plan(self) -> list[tuple[str, int, int, Branches]]:
        """``(name, groups, in_channels, branches)`` for every inception block."""
        plan = []
        c = self.stem_channels
        for i in range(self.grouped_blocks):
            plan.append((f"grouped{i}", self.groups, c, self.grouped_branches))
            c = self.groups * sum(o for _, o in self.grouped_branches)
        for i in range(self.mixed_blocks):
            plan.append((f"mixed{i}", self.mixed_groups, c, self.mixed_branches))
            c = self.mixed_groups * sum(o for _, o in self.mixed_branches)
        return plan

    @property
    def out_channels(self) -> int:
        plan = self.block_plan()
        if not plan:
            return self.stem_channels
        _, g, _, branches = plan[-1]
        return g * sum(o for _, o in branches)


def _init_block(store: ParameterStore, prefix: str, groups: int, channels: int,
                branches: Branches, rng: np.random.Generator) -> None:
    if channels % groups:
        raise ValueError(f"{prefix}: {channels} channels not divisible into {groups} groups")
    per_group = channels // groups
    for j, (k, o) in enumerate(branches):
        store.he_uniform(f"{prefix}.b{j}.dw.w", (channels, k), k, rng)
        store.zeros(f"{prefix}.b{j}.dw.b", (channels,))
        store.he_uniform(f"{prefix}.b{j}.pw.w", (groups, o, per_group), per_group, rng)
        store.zeros(f"{prefix}.b{j}.pw.b", (groups, o, 1))


def init_ps_net(store: ParameterStore, cfg: PSNetConfig, rng: np.random.Generator, prefix: str = "ps") -> None:
    cfg.validate()
    store.he_uniform(f"{prefix}.stem.w", (cfg.stem_channels, cfg.stem_kernel), cfg.stem_kernel, rng)
    store.zeros(f"{prefix}.stem.b", (cfg.stem_channels,))
    for name, groups, channels, branches in cfg.block_plan():
        _init_block(store, f"{prefix}.{name}", groups, channels, branches, rng)
    store.he_uniform(f"{prefix}.feat.w", (cfg.out_channels, cfg.feature_dim), cfg.out_channels, rng)
    store.zeros(f"{prefix}.feat.b", (cfg.feature_dim,))
    store.he_uniform(f"{prefix}.cls.w", (cfg.feature_dim, cfg.num_classes), cfg.feature_dim, rng)
    store.zeros(f"{prefix}.cls.b", (cfg.num_classes,))


def build_ps_net(cfg: PSNetConfig, rng_seed: int = 0) -> ParameterStore:
    store = ParameterStore()
    init_ps_net(store, cfg, np.random.default_rng(rng_seed))
    return store


def inception_branch(params: ParameterStore, prefix: str, x: Tensor, groups: int) -> Tensor:
    """Depthwise conv, grouped pointwise projection, ReLU: ``[B, C, L] -> [B, G, o, L]``."""
    b, c, length = x.shape
    h = conv1d_depthwise(x, params[f"{prefix}.dw.w"], params[f"{prefix}.dw.b"])
    h = reshape(h, (b, groups, c // groups, length))
    h = add(matmul(params[f"{prefix}.pw.w"], h), params[f"{prefix}.pw.b"])
    return relu(h)


def inception_block_forward(params: ParameterStore, prefix: str, x: Tensor, n_branches: int, groups: int) -> Tensor:
    """Run all branches and concatenate them group-wise: ``[B, C, L] -> [B, G*sum(o), L]``."""
    squeeze = x.ndim == 2
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    b, c, length = x.shape
    if c % groups:
        raise ShapeError(f"{prefix}: {c} channels not divisible into {groups} groups")
    outs = [inception_branch(params, f"{prefix}.b{j}", x, groups) for j in range(n_branches)]
    joined = concat(outs, axis=2)
    out = reshape(joined, (b, groups * joined.shape[2], length))
    return reshape(out, out.shape[1:]) if squeeze else out


def interleave_channels(x: Tensor, groups: int) -> Tensor:
    """Round-robin regrouping: new channel ``j*G + g`` is old channel ``g*S + j``."""
    b, c, length = x.shape
    per = c // groups
    return reshape(transpose(reshape(x, (b, groups, per, length)), (0, 2, 1, 3)), (b, c, length))


def ps_forward(params: ParameterStore, x: Tensor, cfg: PSNetConfig, prefix: str = "ps",
               probe: dict | None = None) -> tuple[Tensor, Tensor]:
    """Return ``(features, logits)`` for ``x`` of shape ``[3, L]`` or ``[B, 3, L]``.

    ``probe``, if given, receives intermediate activations keyed by stage.
    """
    squeeze = x.ndim == 2
    if squeeze:
        x = reshape(x, (1,) + x.shape)
    if x.ndim != 3 or x.shape[1] != cfg.in_channels:
        raise ShapeError(f"ps_forward: expected [B, {cfg.in_channels}, L], got {x.shape}")
    if x.shape[2] != cfg.input_length:
        raise ShapeError(f"ps_forward: signal length {x.shape[2]} != configured {cfg.input_length}")

    src = np.repeat(np.arange(cfg.in_channels), cfg.stem_multiplier)
    h = relu(conv1d_depthwise(take(x, src, axis=1), params[f"{prefix}.stem.w"], params[f"{prefix}.stem.b"]))
    if probe is not None:
        probe["stem"] = h.data
    mixed = False
    for name, groups, _, branches in cfg.block_plan():
        if name.startswith("mixed") and not mixed:
            h = interleave_channels(h, cfg.groups)
            mixed = True
            if probe is not None:
                probe["interleaved"] = h.data
        h = inception_block_forward(params, f"{prefix}.{name}", h, len(branches), groups)
        if probe is not None:
            probe[name] = h.data
    pooled = mean(h, axis=2)
    feats = relu(linear(pooled, params[f"{prefix}.feat.w"], params[f"{prefix}.feat.b"]))
    logits = linear(feats, params[f"{prefix}.cls.w"], params[f"{prefix}.cls.b"])
    if squeeze:
        feats, logits = reshape(feats, (cfg.feature_dim,)), reshape(logits, (cfg.num_classes,))
    return feats, logits
