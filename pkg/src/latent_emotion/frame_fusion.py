"""Temporal fusion of per-frame micro-expression features.

Frames near the middle of a clip (where the apex usually falls) receive
the largest weight: frame ``f`` of ``F`` is placed at
``i = -3*sigma + f * 6*sigma / (F - 1)`` on the standard normal axis and
weighted by ``exp(-i**2 / 2)``, normalised to sum to one.
"""
from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, matmul, reshape

MAX_FRAMES = 15
SIGMA = 1.0


def _check_count(n_frames: int) -> None:
    if n_frames < 1:
        raise ValueError(f"frame count must be >= 1, got {n_frames}")
    if n_frames > MAX_FRAMES:
        raise ValueError(f"frame count {n_frames} exceeds the {MAX_FRAMES}-frame micro-expression limit")


def gaussian_weights(n_frames: int, sigma: float = SIGMA) -> np.ndarray:
    """Standard-normal frame weights (float64, sums to 1)."""
    _check_count(n_frames)
    if n_frames == 1:
        return np.ones(1)
    pos = -3.0 * sigma + np.arange(n_frames) * (6.0 * sigma / (n_frames - 1))
    w = np.exp(-(pos**2) / 2.0)
    return w / w.sum()


def uniform_weights(n_frames: int) -> np.ndarray:
    _check_count(n_frames)
    return np.full(n_frames, 1.0 / n_frames)


WEIGHTINGS = {"gaussian": gaussian_weights, "uniform": uniform_weights}


def frame_weights(n_frames: int, kind: str = "gaussian") -> np.ndarray:
    try:
        return WEIGHTINGS[kind](n_frames)
    except KeyError:
        raise ValueError(f"unknown frame weighting {kind!r}; choose from {sorted(WEIGHTINGS)}") from None


def fuse_frames(features: Tensor, weights) -> Tensor:
    """Weighted sum of the rows of ``features`` ``[F, D]`` -> ``[D]``.

    The weights are constants; gradients flow only into ``features``.
    """
    w = np.asarray(weights, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] != w.size:
        raise ShapeError(f"fuse_frames: {w.size} weights for features of shape {features.shape}")
    out = matmul(Tensor(w[None, :]), features)
    return reshape(out, (features.shape[1],))


def fusion_matrix(frame_counts, kind: str = "gaussian") -> np.ndarray:
    """Block matrix ``[B, sum(F)]`` that fuses a batch of stacked clips in one product."""
    counts = [int(c) for c in frame_counts]
    m = np.zeros((len(counts), sum(counts)))
    start = 0
    for row, c in enumerate(counts):
        m[row, start : start + c] = frame_weights(c, kind)
        start += c
    return m


def fuse_batch(features: Tensor, frame_counts, kind: str = "gaussian") -> Tensor:
    """Fuse ``[sum(F), D]`` stacked frame features into ``[B, D]``."""
    m = fusion_matrix(frame_counts, kind)
    if features.ndim != 2 or features.shape[0] != m.shape[1]:
        raise ShapeError(f"fuse_batch: {m.shape[1]} frames expected, features have shape {features.shape}")
    return matmul(Tensor(m), features)
