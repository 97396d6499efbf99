import numpy as np
import pytest

from latent_emotion import tensor as T
from latent_emotion.gradcheck import NonDeterministicError, gradcheck, gradcheck_detailed
from latent_emotion.tensor import Tensor


def test_sum_is_exact(rng):
    x = Tensor(rng.standard_normal(6))
    assert gradcheck(lambda v: T.tsum(v), x) < 1e-7


def test_detects_a_wrong_gradient(rng):
    x = Tensor(rng.standard_normal(4) + 2)
    assert gradcheck(lambda v: T.tsum(T.mul(v, v)), x) < 1e-3

    def wrong(v):
        # constant copy of one factor: analytic x, numeric 2x
        return T.tsum(T.mul(v, Tensor(v.data.copy())))

    assert gradcheck(wrong, Tensor(rng.standard_normal(4) + 2)) > 0.1


def test_nondeterministic_function_rejected():
    state = {"n": 0}

    def drifting(v):
        state["n"] += 1
        return T.tsum(T.mul(v, Tensor(float(state["n"]))))

    with pytest.raises(NonDeterministicError):
        gradcheck(drifting, Tensor([1.0, 2.0]))


def test_non_scalar_rejected():
    with pytest.raises(ValueError):
        gradcheck(lambda v: T.mul(v, v), Tensor([1.0, 2.0]))


def test_kinks_are_skipped_not_scored():
    x = Tensor(np.array([1e-4, 0.5, -0.5, -1e-4], dtype=np.float32))
    plain = gradcheck_detailed(lambda v: T.tsum(T.relu(v)), x, h=1e-3)
    assert plain.error > 0.4
    res = gradcheck_detailed(lambda v: T.tsum(T.relu(v)), x, h=1e-3, skip_kinks=True)
    assert (res.checked, res.skipped) == (2, 2)
    assert res.error < 1e-4


def test_step_snaps_to_power_of_two(rng):
    x = Tensor(rng.standard_normal(8))
    # exact even for an awkward step once snapped
    assert gradcheck(lambda v: T.tsum(v), x, h=3e-3) < 1e-7
    with pytest.raises(ValueError):
        gradcheck(lambda v: T.tsum(v), x, h=0.0)


def test_max_checked_limits_scored_positions(rng):
    x = Tensor(rng.standard_normal(20))
    res = gradcheck_detailed(lambda v: T.tsum(T.mul(v, v)), x, max_checked=5)
    assert res.checked == 5 and res.skipped == 0
