"""Micro-expression branch: per-frame CNN features, depth guidance, temporal fusion."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .attention import AttentionConfig, concat_fusion, guided_multihead, init_concat, init_guided
from .frame_fusion import fuse_batch
from .params import ParameterStore
from .tensor import ShapeError, Tensor, conv2d, linear, max_pool2d, relu, reshape


@dataclass(frozen=True)
class BackboneConfig:
    """Small trainable CNN standing in for the pretrained VGG backbones.

    ``input_pool`` average-pools frames before the first conv (1 = off);
    it is applied as preprocessing, outside the autodiff graph.
    """

    input_size: int = 64
    channels: tuple[int, ...] = (16, 32, 64, 64)
    kernel: int = 3
    pool: int = 2
    out_dim: int = 256
    input_pool: int = 1

    def validate(self) -> None:
        if self.kernel % 2 == 0:
            raise ValueError(f"backbone kernel must be odd, got {self.kernel}")
        if not self.channels:
            raise ValueError("backbone needs at least one conv stage")
        if self.input_size % self.input_pool:
            raise ValueError(f"input_pool {self.input_pool} does not divide input size {self.input_size}")
        side = self.input_size // self.input_pool
        for _ in self.channels:
            if side % self.pool:
                raise ValueError(f"spatial size {side} not divisible by pool {self.pool}")
            side //= self.pool
        if side < 1:
            raise ValueError("too many pooling stages for the input size")

    @property
    def working_size(self) -> int:
        return self.input_size // self.input_pool

    @property
    def flat_dim(self) -> int:
        side = self.working_size // self.pool ** len(self.channels)
        return self.channels[-1] * side * side


def init_backbone(store: ParameterStore, prefix: str, in_channels: int, cfg: BackboneConfig,
                  rng: np.random.Generator) -> None:
    cfg.validate()
    c = in_channels
    for i, out in enumerate(cfg.channels):
        fan_in = c * cfg.kernel * cfg.kernel
        store.he_uniform(f"{prefix}.conv{i}.w", (out, c, cfg.kernel, cfg.kernel), fan_in, rng)
        store.zeros(f"{prefix}.conv{i}.b", (out,))
        c = out
    store.he_uniform(f"{prefix}.fc.w", (cfg.flat_dim, cfg.out_dim), cfg.flat_dim, rng)
    store.zeros(f"{prefix}.fc.b", (cfg.out_dim,))


def downsample(frames: np.ndarray, factor: int) -> np.ndarray:
    """Average-pool the last two axes by ``factor``."""
    if factor == 1:
        return frames
    *lead, h, w = frames.shape
    return frames.reshape(*lead, h // factor, factor, w // factor, factor).mean(axis=(-3, -1))


def frame_features(params: ParameterStore, prefix: str, frames: Tensor, cfg: BackboneConfig) -> Tensor:
    """``[N, C, S, S]`` (or ``[C, S, S]``) frames -> ``[N, out_dim]`` features.

    ``S`` is the working size (``input_size / input_pool``); callers pass
    frames already downsampled with :func:`downsample`.
    """
    single = frames.ndim == 3
    if single:
        frames = reshape(frames, (1,) + frames.shape)
    side = cfg.working_size
    if frames.ndim != 4 or frames.shape[2:] != (side, side):
        raise ShapeError(f"frame_features: expected [N, C, {side}, {side}] frames, got {frames.shape}")
    h = frames
    for i in range(len(cfg.channels)):
        h = conv2d(h, params[f"{prefix}.conv{i}.w"], params[f"{prefix}.conv{i}.b"])
        h = max_pool2d(relu(h), cfg.pool)
    h = reshape(h, (h.shape[0], -1))
    out = linear(h, params[f"{prefix}.fc.w"], params[f"{prefix}.fc.b"])
    return reshape(out, (cfg.out_dim,)) if single else out


@dataclass(frozen=True)
class MEConfig:
    backbone: BackboneConfig = BackboneConfig()
    attention: AttentionConfig = AttentionConfig()
    use_depth: bool = True
    frame_weighting: str = "gaussian"
    fusion: str = "guided"

    @property
    def out_dim(self) -> int:
        if not self.use_depth:
            return self.backbone.out_dim
        return self.attention.out_dim if self.fusion == "guided" else self.backbone.out_dim


def init_me_branch(store: ParameterStore, cfg: MEConfig, rng: np.random.Generator, prefix: str = "me") -> None:
    init_backbone(store, f"{prefix}.colour", 3, cfg.backbone, rng)
    if not cfg.use_depth:
        return
    init_backbone(store, f"{prefix}.depth", 1, cfg.backbone, rng)
    d = cfg.backbone.out_dim
    if cfg.fusion == "guided":
        init_guided(store, f"{prefix}.depth_attn", d, d, cfg.attention, rng)
    elif cfg.fusion == "concat":
        init_concat(store, f"{prefix}.depth_cat", d, d, d, rng)
    else:
        raise ValueError(f"unknown fusion mechanism {cfg.fusion!r}")


def me_forward(params: ParameterStore, colour: Tensor, depth: Tensor | None, frame_counts,
               cfg: MEConfig, prefix: str = "me", probe: dict | None = None) -> Tensor:
    """ME feature for a batch of clips.

    ``colour`` ``[sum(F), 3, S, S]`` and ``depth`` ``[sum(F), 1, S, S]``
    stack every frame of every clip; ``frame_counts`` gives ``F`` per clip.
    Returns ``[B, out_dim]``.  With ``cfg.use_depth`` false the depth input
    is ignored and each frame's colour feature passes through unchanged.
    """
    counts = [int(c) for c in frame_counts]
    if not counts or min(counts) < 1:
        raise ValueError(f"every clip needs at least one frame, got counts {counts}")
    if colour.shape[0] != sum(counts):
        raise ShapeError(f"me_forward: {colour.shape[0]} colour frames for counts summing to {sum(counts)}")
    per_frame = frame_features(params, f"{prefix}.colour", colour, cfg.backbone)
    if probe is not None:
        probe["colour_features"] = per_frame.data
    if cfg.use_depth:
        if depth is None or depth.shape[0] != colour.shape[0]:
            raise ShapeError("me_forward: depth frames missing or not aligned with colour frames")
        d = frame_features(params, f"{prefix}.depth", depth, cfg.backbone)
        if probe is not None:
            probe["depth_features"] = d.data
        if cfg.fusion == "guided":
            per_frame = guided_multihead(params, f"{prefix}.depth_attn", per_frame, d, cfg.attention, probe)
        else:
            per_frame = concat_fusion(params, f"{prefix}.depth_cat", per_frame, d)
    if probe is not None:
        probe["frame_features"] = per_frame.data
    return fuse_batch(per_frame, counts, cfg.frame_weighting)


def me_forward_colour_only(params: ParameterStore, colour: Tensor, frame_counts, cfg: MEConfig,
                           prefix: str = "me", probe: dict | None = None) -> Tensor:
    """Colour-only arm: the depth-guidance step is the identity on colour features."""
    return me_forward(params, colour, None, frame_counts, replace(cfg, use_depth=False), prefix, probe)
