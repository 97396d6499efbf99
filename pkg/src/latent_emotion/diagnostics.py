"""Gradient-check suite over the primitive ops, the composite modules and a reduced full model.

Every case reduces its output to a scalar with a fixed random projection
so that all output elements contribute at O(1) scale.  Large tensors are
checked on a random subset of positions.  Positions whose perturbation
flips a ReLU or changes a max-pool winner are skipped and replaced by
further random positions (see
:func:`~latent_emotion.gradcheck.gradcheck_detailed`); a case fails if more
than :data:`MAX_SKIPPED_FRACTION` of the positions it tried were skipped.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from . import tensor as T
from .attention import AttentionConfig, concat_fusion, guided_multihead, init_concat, init_guided, sdp_attention
from .frame_fusion import fuse_batch
from .gradcheck import gradcheck_detailed
from .me_branch import BackboneConfig, frame_features, init_backbone
from .model import Batch, FullModelConfig, compute_loss, full_forward, init_params
from .params import ParameterStore
from .ps_network import PSNetConfig, _init_block, build_ps_net, inception_block_forward, ps_forward
from .tensor import Tensor

TOLERANCE = {"op": 1e-3, "composite": 5e-3, "model": 5e-3}
MAX_SKIPPED_FRACTION = 0.5


@dataclass(frozen=True)
class CheckResult:
    name: str
    kind: str
    error: float
    seconds: float
    checked: int = 0
    skipped: int = 0

    @property
    def tolerance(self) -> float:
        return TOLERANCE[self.kind]

    @property
    def passed(self) -> bool:
        total = self.checked + self.skipped
        return self.error <= self.tolerance and self.skipped <= MAX_SKIPPED_FRACTION * total

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.kind:9s} {self.name:24s} rel_err={self.error:.2e} tol={self.tolerance:.0e} "
                f"checked={self.checked} skipped={self.skipped}")


def _randn(rng, *shape, scale=1.0) -> Tensor:
    return Tensor((rng.standard_normal(shape) * scale).astype(np.float32))


def _projected(fn: Callable[[], Tensor], rng) -> Callable[[], Tensor]:
    with T.no_grad():
        shape = fn().shape
    proj = Tensor((rng.standard_normal(shape) / np.sqrt(max(1, int(np.prod(shape))))).astype(np.float32))
    return lambda: T.tsum(T.mul(fn(), proj))


def _check(name: str, kind: str, loss: Callable[[], Tensor], inputs: list[Tensor], rng,
           max_positions: int = 12, h: float = 1e-3) -> CheckResult:
    start = time.perf_counter()
    worst, checked, skipped = 0.0, 0, 0
    for x in inputs:
        res = gradcheck_detailed(lambda _: loss(), x, h=h, indices=rng.permutation(x.size), skip_kinks=True,
                                 max_checked=max_positions)
        worst, checked, skipped = max(worst, res.error), checked + res.checked, skipped + res.skipped
        x.requires_grad = False
    return CheckResult(name, kind, worst, time.perf_counter() - start, checked, skipped)


def _params_of(store: ParameterStore) -> list[Tensor]:
    return [p for _, p in store.items()]


def _jitter_biases(store: ParameterStore, rng) -> None:
    for name, p in store.items():
        if name.endswith(".b"):
            p.data[...] = rng.uniform(-0.1, 0.1, p.shape).astype(np.float32)


def op_checks(rng) -> list[CheckResult]:
    out = []

    def case(name, fn, inputs):
        out.append(_check(name, "op", _projected(fn, rng), inputs, rng))

    a, b = _randn(rng, 3, 4), _randn(rng, 3, 4)
    case("add", lambda: T.add(a, b), [a, b])
    case("sub", lambda: T.sub(a, b), [a, b])
    case("mul", lambda: T.mul(a, b), [a, b])
    row = _randn(rng, 4)
    case("add_broadcast", lambda: T.add(a, row), [a, row])
    case("relu", lambda: T.relu(a), [a])
    case("reshape", lambda: T.reshape(a, (2, 6)), [a])
    c = _randn(rng, 2, 3, 4)
    case("transpose", lambda: T.transpose(c, (2, 0, 1)), [c])
    case("concat", lambda: T.concat([a, b], axis=1), [a, b])
    case("take", lambda: T.take(a, np.array([0, 2, 2, 1]), axis=0), [a])
    case("sum", lambda: T.tsum(c, axis=1), [c])
    case("mean", lambda: T.mean(c, axis=(0, 2)), [c])
    m1, m2 = _randn(rng, 2, 3, 4), _randn(rng, 4, 5)
    case("matmul", lambda: T.matmul(m1, m2), [m1, m2])
    x, w, bias = _randn(rng, 5, 4), _randn(rng, 4, 3), _randn(rng, 3)
    case("linear", lambda: T.linear(x, w, bias), [x, w, bias])
    case("softmax", lambda: T.softmax(a, axis=-1), [a])
    case("log_softmax", lambda: T.log_softmax(a, axis=0), [a])
    logits = _randn(rng, 4, 3)
    targets = np.array([0, 2, 1, 2])
    out.append(_check("cross_entropy", "op", lambda: T.cross_entropy(logits, targets), [logits], rng))
    x1, w1, b1 = _randn(rng, 2, 3, 12), _randn(rng, 4, 3, 5, scale=0.5), _randn(rng, 4)
    case("conv1d", lambda: T.conv1d(x1, w1, b1), [x1, w1, b1])
    xd, wd, bd = _randn(rng, 2, 4, 12), _randn(rng, 4, 3), _randn(rng, 4)
    case("conv1d_depthwise", lambda: T.conv1d_depthwise(xd, wd, bd), [xd, wd, bd])
    x2, w2, b2 = _randn(rng, 2, 2, 6, 6), _randn(rng, 3, 2, 3, 3, scale=0.5), _randn(rng, 3)
    case("conv2d", lambda: T.conv2d(x2, w2, b2), [x2, w2, b2])
    xp = _randn(rng, 2, 2, 4, 4)
    case("max_pool2d", lambda: T.max_pool2d(xp, 2), [xp])
    return out


def composite_checks(rng) -> list[CheckResult]:
    out = []

    def case(name, fn, inputs):
        out.append(_check(name, "composite", _projected(fn, rng), inputs, rng))

    feats = _randn(rng, 5, 6)
    case("gaussian_frame_fusion", lambda: fuse_batch(feats, [2, 3], "gaussian"), [feats])
    q, k, v = _randn(rng, 2, 3, 4), _randn(rng, 2, 5, 4), _randn(rng, 2, 5, 4)
    case("sdp_attention", lambda: sdp_attention(q, k, v), [q, k, v])

    acfg = AttentionConfig(tokens=2, d_model=4, heads=2, residual=True)
    store = ParameterStore()
    init_guided(store, "att", 6, 5, acfg, rng)
    _jitter_biases(store, rng)
    main, guide = _randn(rng, 3, 6), _randn(rng, 3, 5)
    case("guided_multihead", lambda: guided_multihead(store, "att", main, guide, acfg),
         [main, guide] + _params_of(store))

    cat = ParameterStore()
    init_concat(cat, "cat", 6, 5, 4, rng)
    case("concat_fusion", lambda: concat_fusion(cat, "cat", main, guide), [main, guide] + _params_of(cat))

    block = ParameterStore()
    _init_block(block, "blk", 3, 6, ((3, 2), (5, 3)), rng)
    _jitter_biases(block, rng)
    xb = _randn(rng, 2, 6, 10)
    case("inception_block", lambda: inception_block_forward(block, "blk", xb, 2, 3), [xb] + _params_of(block))

    pcfg = PSNetConfig(input_length=16, stem_multiplier=2, grouped_blocks=1, mixed_blocks=1,
                       grouped_branches=((3, 1), (5, 2), (7, 3), (11, 4)),
                       mixed_branches=((3, 2), (5, 3), (7, 4), (11, 5)), feature_dim=6)
    ps = build_ps_net(pcfg, int(rng.integers(1 << 30)))
    _jitter_biases(ps, rng)
    xs = _randn(rng, 2, 3, 16)
    case("ps_network", lambda: ps_forward(ps, xs, pcfg)[1], [xs] + _params_of(ps))

    bcfg = BackboneConfig(input_size=8, channels=(3, 4), out_dim=5)
    bb = ParameterStore()
    init_backbone(bb, "bb", 3, bcfg, rng)
    _jitter_biases(bb, rng)
    frames = Tensor(rng.uniform(0, 1, (2, 3, 8, 8)).astype(np.float32))
    case("frame_backbone", lambda: frame_features(bb, "bb", frames, bcfg), [frames] + _params_of(bb))
    return out


def reduced_model_config(**overrides) -> FullModelConfig:
    """16x16 frames, tiny widths everywhere; used by the full-model check."""
    small = AttentionConfig(tokens=2, d_model=4, heads=2)
    cfg = FullModelConfig(
        backbone=BackboneConfig(input_size=16, channels=(3, 4), out_dim=8),
        depth_attention=small,
        fusion_attention=small,
        ps=PSNetConfig(input_length=24, stem_multiplier=1, grouped_blocks=1, mixed_blocks=1,
                       grouped_branches=((3, 1), (5, 2), (7, 3), (11, 4)),
                       mixed_branches=((3, 2), (5, 3), (7, 4), (11, 5)), feature_dim=6),
    )
    return replace(cfg, **overrides)


def _unit_logits(params: ParameterStore, batch: Batch, cfg: FullModelConfig) -> None:
    """Rescale both classifier heads so the logits have unit spread.

    Random weights give logits in the tens, and float32 rounding of such a
    loss swamps small finite differences.
    """
    with T.no_grad():
        mm, ps = full_forward(params, batch, cfg)
    for head, logits in (("mm.cls.w", mm), ("ps.cls.w", ps)):
        if logits is not None:
            params[head].data /= np.float32(max(float(logits.data.std()), 1e-3))


def model_checks(rng, positions_per_tensor: int = 3, h: float = 2.5e-4) -> list[CheckResult]:
    out = []
    for fusion in ("guided", "concat"):
        cfg = reduced_model_config(fusion=fusion)
        params = init_params(cfg, seed=int(rng.integers(1 << 30)))
        _jitter_biases(params, rng)
        counts = [2, 2]
        n = sum(counts)
        batch = Batch(
            Tensor(rng.uniform(0, 1, (n, 3, 16, 16)).astype(np.float32)),
            Tensor(rng.uniform(0, 1, (n, 1, 16, 16)).astype(np.float32)),
            counts,
            _randn(rng, 2, 3, 24),
            np.array([0, 2]),
        )

        _unit_logits(params, batch, cfg)

        def loss():
            mm, ps = full_forward(params, batch, cfg)
            return compute_loss(mm, ps, batch.labels)

        out.append(_check(f"full_model[{fusion}]", "model", loss, _params_of(params), rng, positions_per_tensor, h))
    return out


def run_suite(seed: int = 0, include_model: bool = True) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = op_checks(rng) + composite_checks(rng)
    if include_model:
        results += model_checks(rng)
    return results
