"""Multimodal assembly, composite loss, Adam and the training loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .attention import AttentionConfig, concat_fusion, guided_multihead, init_concat, init_guided
from .me_branch import BackboneConfig, MEConfig, init_me_branch, me_forward
from .params import ParameterStore
from .ps_network import PSNetConfig, init_ps_net, ps_forward
from .tensor import Tensor, cross_entropy, linear, mul, add, no_grad

logger = logging.getLogger(__name__)

ARMS = {
    "colour": (False, False),
    "colour+depth": (True, False),
    "colour+depth+ps": (True, True),
    "colour+ps": (False, True),
}


class TrainingError(RuntimeError):
    """Training diverged or could not start."""


@dataclass(frozen=True)
class FullModelConfig:
    num_classes: int = 3
    backbone: BackboneConfig = BackboneConfig()
    depth_attention: AttentionConfig = AttentionConfig()
    ps: PSNetConfig = PSNetConfig()
    fusion_attention: AttentionConfig = AttentionConfig()
    use_colour: bool = True
    use_depth: bool = True
    use_ps: bool = True
    frame_weighting: str = "gaussian"
    fusion: str = "guided"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 100
    batch_size: int = 8
    seed: int = 0
    ps_rate: float = 100.0
    wavelet: str = "db4"
    wavelet_levels: int = 4

    def validate(self) -> None:
        if not self.use_colour:
            raise ValueError("colour frames are the primary modality and cannot be disabled")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.ps.num_classes != self.num_classes:
            raise ValueError(f"ps.num_classes={self.ps.num_classes} differs from num_classes={self.num_classes}")
        if self.frame_weighting not in ("gaussian", "uniform"):
            raise ValueError(f"frame weighting must be gaussian or uniform, got {self.frame_weighting!r}")
        if self.fusion not in ("guided", "concat"):
            raise ValueError(f"fusion must be guided or concat, got {self.fusion!r}")
        if self.epochs < 0 or self.batch_size < 1 or self.lr < 0:
            raise ValueError("epochs, batch_size and lr must be non-negative (batch_size >= 1)")
        self.backbone.validate()
        if self.use_ps:
            self.ps.validate()
        if self.use_depth and self.fusion == "guided" and self.depth_attention.out_dim != self.backbone.out_dim:
            raise ValueError(
                f"depth attention emits {self.depth_attention.out_dim} features but the backbone emits "
                f"{self.backbone.out_dim}; set depth_attention tokens*d_model to match"
            )

    @property
    def me(self) -> MEConfig:
        return MEConfig(self.backbone, self.depth_attention, self.use_depth, self.frame_weighting, self.fusion)

    @property
    def fused_dim(self) -> int:
        if not self.use_ps:
            return self.me.out_dim
        return self.fusion_attention.out_dim if self.fusion == "guided" else self.me.out_dim

    def with_arm(self, arm: str) -> "FullModelConfig":
        try:
            depth, ps = ARMS[arm]
        except KeyError:
            raise ValueError(f"unknown arm {arm!r}; choose from {sorted(ARMS)}") from None
        return replace(self, use_depth=depth, use_ps=ps)

    @property
    def arm(self) -> str:
        for name, switches in ARMS.items():
            if switches == (self.use_depth, self.use_ps):
                return name
        raise AssertionError("unreachable")


def init_params(cfg: FullModelConfig, seed: int | None = None) -> ParameterStore:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    store = ParameterStore()
    init_me_branch(store, cfg.me, rng)
    if cfg.use_ps:
        init_ps_net(store, cfg.ps, rng)
        me_dim, ps_dim = cfg.me.out_dim, cfg.ps.feature_dim
        if cfg.fusion == "guided":
            init_guided(store, "fusion_attn", me_dim, ps_dim, cfg.fusion_attention, rng)
        else:
            init_concat(store, "fusion_cat", me_dim, ps_dim, me_dim, rng)
    store.glorot_uniform("mm.cls.w", (cfg.fused_dim, cfg.num_classes), cfg.fused_dim, cfg.num_classes, rng)
    store.zeros("mm.cls.b", (cfg.num_classes,))
    return store


@dataclass
class Batch:
    colour: Tensor
    depth: Tensor | None
    frame_counts: list[int]
    ps: Tensor | None
    labels: np.ndarray


def collate(samples: Sequence, cfg: FullModelConfig) -> Batch:
    """Stack prepared samples (see :func:`latent_emotion.data.prepare_sample`) into one batch."""
    colour = Tensor(np.concatenate([s.colour for s in samples]))
    depth = Tensor(np.concatenate([s.depth for s in samples])) if cfg.use_depth else None
    ps = Tensor(np.stack([s.ps for s in samples])) if cfg.use_ps else None
    return Batch(colour, depth, [s.colour.shape[0] for s in samples], ps,
                 np.array([s.label for s in samples], dtype=np.int64))


def full_forward(params: ParameterStore, batch: Batch, cfg: FullModelConfig,
                 probe: dict | None = None) -> tuple[Tensor, Tensor | None]:
    """``(logits_mm [B, C], logits_ps [B, C] or None)`` for a batch."""
    me = me_forward(params, batch.colour, batch.depth, batch.frame_counts, cfg.me, probe=probe)
    if probe is not None:
        probe["me"] = me.data
    logits_ps = None
    fused = me
    if cfg.use_ps:
        if batch.ps is None:
            raise ValueError("configuration uses physiological signals but the batch has none")
        ps_probe = {} if probe is not None else None
        ps_feat, logits_ps = ps_forward(params, batch.ps, cfg.ps, probe=ps_probe)
        if probe is not None:
            probe.update({f"ps.{k}": v for k, v in ps_probe.items()})
            probe["ps_features"] = ps_feat.data
        if cfg.fusion == "guided":
            fused = guided_multihead(params, "fusion_attn", me, ps_feat, cfg.fusion_attention, probe)
        else:
            fused = concat_fusion(params, "fusion_cat", me, ps_feat)
    if probe is not None:
        probe["fused"] = fused.data
    logits_mm = linear(fused, params["mm.cls.w"], params["mm.cls.b"])
    return logits_mm, logits_ps


def compute_loss(logits_mm: Tensor, logits_ps: Tensor | None, targets) -> Tensor:
    """``(L_ps + L_mm) / 2``, or ``L_mm`` alone when there is no PS head."""
    l_mm = cross_entropy(logits_mm, targets)
    if logits_ps is None:
        return l_mm
    return mul(add(cross_entropy(logits_ps, targets), l_mm), Tensor(0.5))


class Adam:
    def __init__(self, params: ParameterStore, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self, params: ParameterStore) -> None:
        self.t += 1
        if self.lr == 0:
            return
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for name, p in params.items():
            if p.grad is None:
                continue
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * p.grad
            v *= b2
            v += (1.0 - b2) * p.grad * p.grad
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data -= update.astype(p.data.dtype)


@dataclass
class TrainState:
    params: ParameterStore
    optimizer: Adam
    rng: np.random.Generator
    epoch: int = 0
    loss_log: list[float] = field(default_factory=list)


def init_train_state(cfg: FullModelConfig) -> TrainState:
    params = init_params(cfg)
    shuffle_seed = np.random.SeedSequence(cfg.seed).spawn(1)[0]
    return TrainState(params, Adam(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps), np.random.default_rng(shuffle_seed))


def train(state: TrainState, samples: Sequence, cfg: FullModelConfig, labels=None,
          epochs: int | None = None) -> TrainState:
    """Adam over seeded shuffled mini-batches; appends each epoch's mean loss to ``state.loss_log``."""
    if len(samples) == 0:
        raise TrainingError("training split is empty")
    targets = np.array([s.label for s in samples] if labels is None else labels, dtype=np.int64)
    n = len(samples)
    for _ in range(cfg.epochs if epochs is None else epochs):
        order = state.rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = collate([samples[i] for i in idx], cfg)
            state.params.zero_grad()
            logits_mm, logits_ps = full_forward(state.params, batch, cfg)
            loss = compute_loss(logits_mm, logits_ps, targets[idx])
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at epoch {state.epoch}, batch starting {start}")
            loss.backward()
            state.optimizer.step(state.params)
            total += value * len(idx)
        state.epoch += 1
        state.loss_log.append(total / n)
        logger.debug("epoch %d mean loss %.5f", state.epoch, state.loss_log[-1])
    return state


def predict_logits(params: ParameterStore, samples: Sequence, cfg: FullModelConfig,
                   batch_size: int | None = None) -> np.ndarray:
    out = []
    bs = batch_size or cfg.batch_size
    with no_grad():
        for start in range(0, len(samples), bs):
            logits, _ = full_forward(params, collate(samples[start : start + bs], cfg), cfg)
            out.append(logits.data.astype(np.float64))
    return np.concatenate(out) if out else np.zeros((0, cfg.num_classes))


def probabilities(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict(params: ParameterStore, samples: Sequence, cfg: FullModelConfig) -> tuple[np.ndarray, np.ndarray]:
    """Class indices (ties go to the lowest index) and class probabilities."""
    proba = probabilities(predict_logits(params, samples, cfg))
    return proba.argmax(axis=-1), proba
