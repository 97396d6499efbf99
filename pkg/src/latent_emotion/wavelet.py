"""Periodic Daubechies wavelet transform and soft-threshold denoising."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from math import comb

import numpy as np

MAD_SCALE = 0.6745


class WaveletError(ValueError):
    """Invalid wavelet parameters or coefficient layout."""


@lru_cache(maxsize=None)
def daubechies_filter(order: int) -> np.ndarray:
    """Low-pass reconstruction filter of the Daubechies family with ``order`` vanishing moments.

    Built by spectral factorisation: the squared magnitude response
    ``cos^2N(w/2) P(sin^2(w/2))`` is split by keeping the roots of ``P``
    (mapped to ``z``) that lie inside the unit circle.  Returns ``2*order``
    taps with ``sum(h) == sqrt(2)`` and ``sum(h**2) == 1``.
    """
    if order < 1:
        raise WaveletError(f"Daubechies order must be >= 1, got {order}")
    # P(y) = sum_k C(N-1+k, k) y^k; np.roots wants highest degree first.
    p = [comb(order - 1 + k, k) for k in range(order)][::-1]
    zeros = []
    for y in np.roots(p) if order > 1 else []:
        # y = (2 - z - 1/z) / 4  <=>  z^2 - (2 - 4y) z + 1 = 0
        pair = np.roots([1.0, -(2.0 - 4.0 * y), 1.0])
        zeros.append(pair[np.argmin(np.abs(pair))])
    poly = np.array([1.0])
    for _ in range(order):
        poly = np.convolve(poly, [1.0, 1.0])
    for z in zeros:
        poly = np.convolve(poly, [1.0, -z])
    h = np.real(poly)[::-1]
    h = h * (np.sqrt(2.0) / h.sum())
    # minimum-phase orientation: energy centroid in the first half
    if np.sum(np.arange(len(h)) * h**2) > (len(h) - 1) / 2:
        h = h[::-1].copy()
    return h


def highpass_from_lowpass(h: np.ndarray) -> np.ndarray:
    """Quadrature mirror filter ``g[n] = (-1)^n h[L-1-n]``."""
    n = np.arange(len(h))
    return ((-1.0) ** n) * h[::-1]


@dataclass(frozen=True)
class WaveletSpec:
    order: int = 4
    levels: int = 4

    def __post_init__(self):
        if self.order < 1:
            raise WaveletError(f"wavelet order must be >= 1, got {self.order}")
        if self.levels < 1:
            raise WaveletError(f"levels must be >= 1, got {self.levels}")

    @property
    def lowpass(self) -> np.ndarray:
        return daubechies_filter(self.order)

    @property
    def highpass(self) -> np.ndarray:
        return highpass_from_lowpass(self.lowpass)

    @classmethod
    def from_name(cls, name: str, levels: int = 4) -> "WaveletSpec":
        """Parse ``"db4"`` style names."""
        if not name.lower().startswith("db") or not name[2:].isdigit():
            raise WaveletError(f"unknown wavelet {name!r}; expected dbN")
        return cls(order=int(name[2:]), levels=levels)


@dataclass
class WaveletCoeffs:
    """Approximation band at the deepest level plus detail bands.

    ``details[0]`` is the finest level, ``details[-1]`` the coarsest.
    """

    approx: np.ndarray
    details: list[np.ndarray] = field(default_factory=list)
    length: int = 0

    @property
    def padded_length(self) -> int:
        return self.approx.size + sum(d.size for d in self.details)

    def energy(self) -> float:
        return float(np.sum(self.approx**2) + sum(np.sum(d**2) for d in self.details))


def _indices(n: int, taps: int) -> np.ndarray:
    k = np.arange(n // 2)[:, None]
    return (2 * k + np.arange(taps)[None, :]) % n


def analysis_step(x: np.ndarray, h: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One periodic analysis level: ``a[k] = sum_n h[n] x[(2k+n) mod N]``."""
    win = x[_indices(x.size, h.size)]
    return win @ h, win @ g


def synthesis_step(a: np.ndarray, d: np.ndarray, h: np.ndarray, g: np.ndarray) -> np.ndarray:
    n = 2 * a.size
    out = np.zeros(n)
    np.add.at(out, _indices(n, h.size), a[:, None] * h[None, :] + d[:, None] * g[None, :])
    return out


def padded_length(n: int, levels: int) -> int:
    block = 2**levels
    return -(-n // block) * block


def dwt(x, spec: WaveletSpec = WaveletSpec()) -> WaveletCoeffs:
    """Multi-level periodic DWT.

    Lengths that are not a multiple of ``2**levels`` are zero-padded; the
    original length is kept in the result so :func:`idwt` can trim it.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise WaveletError(f"dwt expects a 1-D signal, got shape {x.shape}")
    n = x.size
    if n < 2**spec.levels:
        raise WaveletError(f"signal of length {n} is too short for {spec.levels} levels (need >= {2**spec.levels})")
    target = padded_length(n, spec.levels)
    a = np.concatenate([x, np.zeros(target - n)]) if target != n else x.copy()
    h, g = spec.lowpass, spec.highpass
    details = []
    for _ in range(spec.levels):
        a, d = analysis_step(a, h, g)
        details.append(d)
    return WaveletCoeffs(approx=a, details=details, length=n)


def idwt(c: WaveletCoeffs, spec: WaveletSpec = WaveletSpec()) -> np.ndarray:
    if len(c.details) != spec.levels:
        raise WaveletError(f"expected {spec.levels} detail bands, got {len(c.details)}")
    a = np.asarray(c.approx, dtype=np.float64)
    for level in range(spec.levels - 1, -1, -1):
        d = np.asarray(c.details[level], dtype=np.float64)
        if d.shape != a.shape:
            raise WaveletError(f"level {level + 1} detail band has {d.size} coefficients, approximation has {a.size}")
        a = synthesis_step(a, d, spec.lowpass, spec.highpass)
    if c.length > a.size or c.length < 1:
        raise WaveletError(f"stored length {c.length} inconsistent with {a.size} reconstructed samples")
    return a[: c.length]


def soft_threshold(c: WaveletCoeffs, t) -> WaveletCoeffs:
    """Shrink every detail coefficient towards zero by ``t``.

    ``t`` is a scalar or one value per level (finest first).  The
    approximation band is copied unchanged.
    """
    ts = np.broadcast_to(np.asarray(t, dtype=np.float64), (len(c.details),))
    if np.any(ts < 0):
        raise WaveletError(f"threshold must be non-negative, got {t}")
    details = [np.sign(d) * np.maximum(np.abs(d) - tl, 0.0) for d, tl in zip(c.details, ts)]
    return WaveletCoeffs(approx=c.approx.copy(), details=details, length=c.length)


def universal_threshold(c: WaveletCoeffs) -> float:
    sigma = np.median(np.abs(c.details[0])) / MAD_SCALE
    return float(sigma * np.sqrt(2.0 * np.log(c.length)))


def denoise(x, spec: WaveletSpec = WaveletSpec()) -> np.ndarray:
    """Universal-threshold soft denoising of a 1-D signal, or of each row of a 2-D array."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2:
        return np.stack([denoise(row, spec) for row in x])
    coeffs = dwt(x, spec)
    return idwt(soft_threshold(coeffs, universal_threshold(coeffs)), spec)


def snr_db(clean: np.ndarray, estimate: np.ndarray) -> float:
    noise = np.sum((np.asarray(estimate) - clean) ** 2)
    return float(10.0 * np.log10(np.sum(np.asarray(clean) ** 2) / noise))
