"""Synthetic multimodal micro-expression dataset.

Each sample carries its class in three places:

* colour frames: a brightness bump at a class-specific position whose
  amplitude follows the standard-normal frame profile (apex mid-clip).
  The onset/offset frames instead carry an unrelated bump at a random
  position, fading out towards the apex.
* depth frames: the same class bump on a per-subject face relief, with
  independent noise.
* physiological signals: EDA gets a class-scaled step at the expression,
  ECG/PPG beat at a class-dependent rate.

Per-subject nuisance (skin tone, face texture, relief, bump placement,
heart-rate offset, signal offsets and gains) makes leave-one-subject-out
evaluation harder than resubstitution.
"""
from __future__ import annotations

import numpy as np

from .data import MESample, SignalClip, segment_signals, ps_window

PS_NOISE = 0.2


def _blob(yy, xx, cy, cx, sigma):
    return np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma**2))


def apex_profile(n_frames: int) -> np.ndarray:
    """Unnormalised standard-normal frame profile: 1 at the middle frame, ~0.011 at the ends."""
    if n_frames == 1:
        return np.ones(1)
    pos = -3.0 + np.arange(n_frames) * (6.0 / (n_frames - 1))
    return np.exp(-(pos**2) / 2.0)


def _subject(rng: np.random.Generator, size: int) -> dict:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    texture = np.zeros((size, size))
    for _ in range(3):
        cy, cx = rng.uniform(0.2 * size, 0.8 * size, 2)
        texture += rng.uniform(-0.08, 0.08) * _blob(yy, xx, cy, cx, rng.uniform(0.12, 0.2) * size)
    c = size / 2
    relief = 1.0 - ((yy - c) ** 2 + (xx - c) ** 2) / (2 * c**2) * rng.uniform(0.6, 1.0)
    return {
        "tone": rng.uniform(0.3, 0.5, size=3),
        "texture": texture,
        "relief": relief,
        "rot": rng.normal(0.0, 0.15),
        "radius": size * rng.uniform(0.2, 0.26),
        "hr_offset": rng.uniform(-0.12, 0.12),
        "ps_offset": rng.uniform(-1.0, 1.0, size=3),
        "ps_gain": rng.uniform(0.8, 1.2, size=3),
        "eda_slope": rng.uniform(-0.15, 0.15),
    }


def _frames(rng, subj, label, n_classes, n_frames, size, amplitude, pixel_noise):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    theta = 2.0 * np.pi * label / n_classes + subj["rot"]
    c = size / 2
    cy, cx = c + subj["radius"] * np.sin(theta), c + subj["radius"] * np.cos(theta)
    sigma = size * 0.08
    target = _blob(yy, xx, cy, cx, sigma)
    dy, dx = rng.uniform(0.22 * size, 0.78 * size, 2)
    distractor = _blob(yy, xx, dy, dx, sigma)
    prof = apex_profile(n_frames)

    colour = np.empty((n_frames, 3, size, size))
    depth = np.empty((n_frames, 1, size, size))
    for f in range(n_frames):
        motion = amplitude * (prof[f] * target + (1.0 - prof[f]) * distractor)
        base = subj["tone"][:, None, None] + subj["texture"][None]
        colour[f] = base + motion[None] + rng.normal(0.0, pixel_noise, size=(3, size, size))
        depth[f, 0] = subj["relief"] + amplitude * prof[f] * target + rng.normal(0.0, pixel_noise, size=(size, size))
    colour = np.clip(colour, 0.0, 1.0)
    lo, hi = depth.min(), depth.max()
    depth = (depth - lo) / (hi - lo)
    return colour, depth


def _signals(rng, subj, label, onset, offset, rate, record_s):
    t = np.arange(int(round(record_s * rate))) / rate
    hr = 1.0 + 0.5 * label + subj["hr_offset"] + rng.normal(0.0, 0.03)
    phase = rng.uniform(0.0, 1.0 / hr)
    beats = np.arange(phase - 1.0 / hr, t[-1] + 1.0 / hr, 1.0 / hr)
    ecg = np.exp(-((t[:, None] - beats[None]) ** 2) / (2 * 0.015**2)).sum(axis=1)
    ecg -= 0.25 * np.exp(-((t[:, None] - beats[None] - 0.2) ** 2) / (2 * 0.04**2)).sum(axis=1)
    phi = rng.uniform(0.0, 2.0 * np.pi)
    ppg = np.sin(2.0 * np.pi * hr * t + phi) + 0.3 * np.sin(4.0 * np.pi * hr * t + 2.0 * phi)
    step = 0.5 * (label + 1) / (1.0 + np.exp(-(t - onset - 0.3) / 0.15))
    eda = subj["eda_slope"] * t + step
    channels = np.stack([eda, ecg, ppg]) * subj["ps_gain"][:, None] + subj["ps_offset"][:, None]
    channels += rng.normal(0.0, PS_NOISE, size=channels.shape)
    return SignalClip(rate, channels, onset, offset)


def generate_synthetic(subjects: int = 12, per_subject: int = 6, classes: int = 3, seed: int = 42,
                       size: int = 64, ps_rate: float = 100.0, record_s: float = 6.0,
                       fps: float = 30.0, amplitude: float = 0.15, pixel_noise: float = 0.06) -> list[MESample]:
    """Generate ``subjects * per_subject`` samples with labels drawn uniformly from ``classes``.

    Frame counts are uniform on ``[5, 15]``.  ``amplitude`` scales the facial
    bumps and ``pixel_noise`` is the per-pixel noise std; together they set
    how hard the visual task is.  Output depends only on the arguments.
    """
    if subjects < 2:
        raise ValueError(f"need at least 2 subjects, got {subjects}")
    if classes < 2:
        raise ValueError(f"need at least 2 classes, got {classes}")
    if per_subject < 1:
        raise ValueError(f"per_subject must be >= 1, got {per_subject}")
    rng = np.random.default_rng(seed)
    samples = []
    for s in range(subjects):
        subj = _subject(rng, size)
        for j in range(per_subject):
            label = int(rng.integers(classes))
            n_frames = int(rng.integers(5, 16))
            colour, depth = _frames(rng, subj, label, classes, n_frames, size, amplitude, pixel_noise)
            onset = float(np.round(rng.uniform(0.4, 0.6) * record_s, 3))
            signals = _signals(rng, subj, label, onset, onset + n_frames / fps, ps_rate, record_s)
            samples.append(MESample(f"s{s:02d}_{j:02d}", f"sub{s:02d}", label, colour, depth, signals, fps))
    return samples


def ps_spectrum_separability(samples, length: int = 300, rate: float = 100.0) -> float:
    """Resubstitution accuracy of a nearest-centroid classifier on PS magnitude spectra."""
    feats, labels = [], []
    for s in samples:
        start, stop = ps_window(s, length, rate)
        seg = segment_signals(s.signals, start, stop, length, spec=None)
        feats.append(np.abs(np.fft.rfft(seg, axis=-1)).ravel())
        labels.append(s.label)
    x, y = np.array(feats), np.array(labels)
    classes = np.unique(y)
    centroids = np.stack([x[y == c].mean(axis=0) for c in classes])
    dist = ((x[:, None, :] - centroids[None]) ** 2).sum(axis=-1)
    return float(np.mean(classes[dist.argmin(axis=1)] == y))
