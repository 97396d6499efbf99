import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from latent_emotion.frame_fusion import (
    MAX_FRAMES,
    frame_weights,
    fuse_batch,
    fuse_frames,
    gaussian_weights,
    uniform_weights,
)
from latent_emotion.tensor import ShapeError, Tensor


def oracle_weights(n):
    # independent scalar evaluation in double precision
    raw = [math.exp(-((-3 + f * 6 / (n - 1)) ** 2) / 2) for f in range(n)]
    s = math.fsum(raw)
    return [r / s for r in raw]


class TestWeights:
    def test_published_values(self):
        np.testing.assert_allclose(gaussian_weights(3), [0.010868, 0.978264, 0.010868], atol=1e-6)
        np.testing.assert_allclose(gaussian_weights(5), [0.006646, 0.194226, 0.598257, 0.194226, 0.006646],
                                   atol=1e-6)

    @pytest.mark.parametrize("n", range(2, MAX_FRAMES + 1))
    def test_matches_scalar_oracle(self, n):
        np.testing.assert_allclose(gaussian_weights(n), oracle_weights(n), rtol=1e-12)

    def test_degenerate_counts(self):
        assert gaussian_weights(1).tolist() == [1.0]
        np.testing.assert_allclose(gaussian_weights(2), [0.5, 0.5])
        assert uniform_weights(4).tolist() == [0.25] * 4
        assert uniform_weights(1).tolist() == [1.0]

    @pytest.mark.parametrize("n", range(2, MAX_FRAMES + 1))
    def test_shape_properties(self, n):
        w = gaussian_weights(n)
        assert abs(w.sum() - 1) < 1e-9
        assert abs(uniform_weights(n).sum() - 1) < 1e-9
        assert np.all(w > 0)
        np.testing.assert_allclose(w, w[::-1], atol=1e-9)
        mid = (n - 1) // 2
        assert np.all(np.diff(w[: mid + 1]) >= 0)
        assert np.all(np.diff(w[n // 2:]) <= 0)
        assert w.argmax() in (mid, n // 2)
        if n % 2:
            assert w[mid] / w[0] == pytest.approx(math.exp(4.5), rel=1e-12)

    @pytest.mark.parametrize("n", [0, -1, MAX_FRAMES + 1])
    def test_bad_counts(self, n):
        with pytest.raises(ValueError):
            gaussian_weights(n)
        with pytest.raises(ValueError):
            uniform_weights(n)

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="weighting"):
            frame_weights(3, "triangular")


class TestFuse:
    def test_identical_rows(self, rng):
        r = rng.standard_normal(6).astype(np.float32)
        out = fuse_frames(Tensor(np.tile(r, (7, 1))), gaussian_weights(7))
        np.testing.assert_allclose(out.data, r, rtol=1e-6)

    def test_two_frames_average(self, rng):
        x = rng.standard_normal((2, 5)).astype(np.float32)
        np.testing.assert_allclose(fuse_frames(Tensor(x), gaussian_weights(2)).data, x.mean(axis=0), rtol=1e-6)

    def test_three_frames_vs_float64_dot(self, rng):
        x = rng.standard_normal((3, 9)).astype(np.float32)
        want = np.array(oracle_weights(3)) @ x.astype(np.float64)
        assert np.max(np.abs(fuse_frames(Tensor(x), gaussian_weights(3)).data - want)) < 1e-6

    @given(hnp.arrays(np.float32, st.tuples(st.integers(1, MAX_FRAMES), st.integers(1, 6)),
                      elements=st.floats(-100, 100, width=32)),
           st.floats(-10, 10))
    def test_convex_hull_and_scale(self, x, c):
        w = gaussian_weights(x.shape[0])
        out = fuse_frames(Tensor(x), w).data
        tol = 1e-4 * (1 + np.abs(x).max())
        assert np.all(out >= x.min(axis=0) - tol) and np.all(out <= x.max(axis=0) + tol)
        scaled = fuse_frames(Tensor(x * np.float32(c)), w).data
        np.testing.assert_allclose(scaled, np.float32(c) * out, atol=tol * (1 + abs(c)))

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            fuse_frames(Tensor(np.ones((3, 2))), gaussian_weights(4))

    def test_batch_equals_per_clip(self, rng):
        counts = [3, 1, 5]
        x = rng.standard_normal((9, 4)).astype(np.float32)
        got = fuse_batch(Tensor(x), counts).data
        start = 0
        for row, c in enumerate(counts):
            np.testing.assert_allclose(got[row], fuse_frames(Tensor(x[start:start + c]), gaussian_weights(c)).data,
                                       rtol=1e-6)
            start += c
        with pytest.raises(ShapeError):
            fuse_batch(Tensor(x), [3, 3])
