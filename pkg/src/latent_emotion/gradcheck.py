"""Finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable, Iterable, NamedTuple

import numpy as np

from .tensor import Tensor, no_grad, record_branches


class NonDeterministicError(RuntimeError):
    """The checked function returned different values for identical input."""


def _scalar(out: Tensor) -> float:
    if out.size != 1:
        raise ValueError(f"gradcheck needs a scalar-valued function, got shape {out.shape}")
    return float(np.float64(out.data.reshape(-1)[0]))


def _pow2_step(h: float) -> float:
    # A power-of-two step is a multiple of the float32 spacing of any
    # operand of larger magnitude, so x +- h and sums involving it are exact.
    if not h > 0:
        raise ValueError(f"step must be positive, got {h}")
    return float(2.0 ** np.round(np.log2(h)))


class GradcheckResult(NamedTuple):
    error: float
    checked: int
    skipped: int


def _same_branches(a: list[np.ndarray], b: list[np.ndarray]) -> bool:
    return len(a) == len(b) and all(np.array_equal(u, v) for u, v in zip(a, b))


def gradcheck_detailed(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    h: float = 1e-3,
    indices: Iterable[int] | None = None,
    skip_kinks: bool = False,
    max_checked: int | None = None,
) -> GradcheckResult:
    """Like :func:`gradcheck` but also reports how many positions were checked.

    With ``skip_kinks`` set, a position is skipped when either perturbed
    evaluation takes a different branch of a piecewise op than the
    unperturbed one (a ReLU input changing sign, a different max-pool
    winner).  Central differences across such a hinge measure an average
    of two slopes, not the derivative, so those positions are counted in
    ``skipped`` instead of being scored.  ``max_checked`` stops after that
    many positions have been scored, so passing a shuffled ``indices``
    keeps coverage constant however many positions get skipped.
    """
    h = _pow2_step(h)
    x.requires_grad = True
    x.zero_grad()
    with record_branches() as base:
        first = f(x)
    with no_grad():
        again = _scalar(f(x))
    if again != _scalar(first):
        raise NonDeterministicError("repeated evaluation of f gave different results")
    first.backward()
    analytic = np.zeros(x.size) if x.grad is None else x.grad.astype(np.float64).reshape(-1)
    x.zero_grad()

    flat = x.data.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    worst, checked, skipped = 0.0, 0, 0
    with no_grad():
        for i in idx:
            if max_checked is not None and checked >= max_checked:
                break
            orig = flat[i]
            flat[i] = orig + np.float32(h)
            hi = np.float64(flat[i])
            with record_branches() as up:
                f_hi = _scalar(f(x))
            flat[i] = orig - np.float32(h)
            lo = np.float64(flat[i])
            with record_branches() as down:
                f_lo = _scalar(f(x))
            flat[i] = orig
            if skip_kinks and not (_same_branches(base, up) and _same_branches(base, down)):
                skipped += 1
                continue
            numeric = (f_hi - f_lo) / (hi - lo)
            a = analytic[i]
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
            checked += 1
    return GradcheckResult(worst, checked, skipped)


def gradcheck(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    h: float = 1e-3,
    indices: Iterable[int] | None = None,
) -> float:
    """Max relative error between the analytic and central-difference gradient.

    The error for element ``i`` is ``|a - n| / max(1, |a|, |n|)``.  The
    forward passes run in float32; differences and quotients are taken in
    float64 using the perturbations actually representable in ``x``.
    ``h`` is rounded to the nearest power of two.

    ``indices`` restricts the check to a subset of flat positions.
    """
    return gradcheck_detailed(f, x, h, indices).error
