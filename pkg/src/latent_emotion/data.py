"""Sample schema, on-disk dataset layout and signal preprocessing.

Dataset layout::

    dataset/meta.csv              sample_id,subject_id,label,n_frames,fps,ps_rate,onset_s,offset_s
    dataset/<sample_id>/colour.ten  [F, 3, 64, 64]
    dataset/<sample_id>/depth.ten   [F, 1, 64, 64]
    dataset/<sample_id>/ps.csv      t,eda,ecg,ppg  (one row per sample tick)

Floats in CSV files are written with ``repr`` so they round-trip exactly.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tenfile
from .frame_fusion import MAX_FRAMES
from .me_branch import downsample
from .wavelet import WaveletSpec, denoise

META_FIELDS = ["sample_id", "subject_id", "label", "n_frames", "fps", "ps_rate", "onset_s", "offset_s"]
PS_FIELDS = ["t", "eda", "ecg", "ppg"]


class DatasetError(Exception):
    """Base class for dataset problems."""


class MissingFileError(DatasetError, FileNotFoundError):
    pass


class SchemaError(DatasetError):
    """File contents disagree with the metadata or with each other."""


class SampleInvariantError(DatasetError, ValueError):
    """A sample violates a domain rule (frame count, ranges, labels)."""


@dataclass
class SignalClip:
    """Physiological recording: ``channels`` is ``[3, T]`` (EDA, ECG, PPG) at ``sample_rate`` Hz.

    ``onset_s``/``offset_s`` mark the micro-expression on the recording's time axis.
    """

    sample_rate: float
    channels: np.ndarray
    onset_s: float
    offset_s: float

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.float64)
        if self.channels.ndim != 2 or self.channels.shape[0] != 3:
            raise SampleInvariantError(f"signal clip needs 3 equal-length channels, got shape {self.channels.shape}")
        if self.sample_rate <= 0:
            raise SampleInvariantError(f"sample rate must be positive, got {self.sample_rate}")

    @property
    def duration(self) -> float:
        return self.channels.shape[1] / self.sample_rate

    def times(self) -> np.ndarray:
        return np.arange(self.channels.shape[1]) / self.sample_rate


@dataclass
class MESample:
    sample_id: str
    subject_id: str
    label: int
    colour: np.ndarray  # [F, 3, H, W] in [0, 1]
    depth: np.ndarray  # [F, 1, H, W] in [0, 1]
    signals: SignalClip
    fps: float = 30.0

    def __post_init__(self):
        self.colour = np.asarray(self.colour, dtype=np.float32)
        self.depth = np.asarray(self.depth, dtype=np.float32)
        validate_sample(self)

    @property
    def n_frames(self) -> int:
        return self.colour.shape[0]


def validate_sample(s: MESample, num_classes: int | None = None) -> None:
    f = s.colour.shape[0] if s.colour.ndim == 4 else -1
    if s.colour.ndim != 4 or s.colour.shape[1] != 3:
        raise SampleInvariantError(f"{s.sample_id}: colour frames must be [F, 3, H, W], got {s.colour.shape}")
    if not 1 <= f <= MAX_FRAMES:
        raise SampleInvariantError(f"{s.sample_id}: {f} frames, expected 1..{MAX_FRAMES}")
    if s.depth.shape != (f, 1) + s.colour.shape[2:]:
        raise SampleInvariantError(f"{s.sample_id}: depth {s.depth.shape} does not match colour {s.colour.shape}")
    for name, arr in (("colour", s.colour), ("depth", s.depth)):
        if not np.all(np.isfinite(arr)) or arr.min() < 0 or arr.max() > 1:
            raise SampleInvariantError(f"{s.sample_id}: {name} values must be finite and within [0, 1]")
    if s.label < 0 or (num_classes is not None and s.label >= num_classes):
        raise SampleInvariantError(f"{s.sample_id}: label {s.label} outside [0, {num_classes})")


def minmax_normalise(x: np.ndarray) -> np.ndarray:
    lo, hi = float(x.min()), float(x.max())
    if hi - lo <= 0:
        return np.zeros_like(x, dtype=np.float32)
    return ((x - lo) / (hi - lo)).astype(np.float32)


# ----------------------------------------------------------------- signals
def resample_linear(x: np.ndarray, length: int) -> np.ndarray:
    """Linear interpolation of ``x`` onto ``length`` evenly spaced points spanning the same interval."""
    n = x.shape[-1]
    if n == length:
        return np.array(x, dtype=np.float64)
    pos = np.linspace(0.0, n - 1, length)
    return np.stack([np.interp(pos, np.arange(n), row) for row in np.atleast_2d(x)]).reshape(x.shape[:-1] + (length,))


def znormalise(x: np.ndarray) -> np.ndarray:
    """Per-row zero mean and unit (population) variance; constant rows become zeros."""
    x = np.asarray(x, dtype=np.float64)
    mu = x.mean(axis=-1, keepdims=True)
    sd = x.std(axis=-1, keepdims=True)
    const = sd <= 1e-12 * np.maximum(1.0, np.abs(mu))
    return np.where(const, 0.0, (x - mu) / np.where(const, 1.0, sd))


def segment_signals(raw: SignalClip, onset: float, offset: float, target_len: int,
                    spec: WaveletSpec | None = WaveletSpec()) -> np.ndarray:
    """Slice ``[onset, offset)``, resample to ``target_len``, denoise, z-normalise.

    Returns a float32 ``[3, target_len]`` array.  ``spec=None`` skips denoising.
    """
    if not (0.0 <= onset < offset <= raw.duration + 1e-9):
        raise ValueError(f"window [{onset}, {offset}) outside recording of {raw.duration:.3f} s")
    i0 = int(np.ceil(onset * raw.sample_rate - 1e-9))
    i1 = int(np.ceil(offset * raw.sample_rate - 1e-9))
    if i1 - i0 < 2:
        raise ValueError(f"window [{onset}, {offset}) holds fewer than 2 samples")
    clip = resample_linear(raw.channels[:, i0:i1], target_len)
    if spec is not None:
        clip = denoise(clip, spec)
    return znormalise(clip).astype(np.float32)


def ps_window(sample: MESample, length: int, rate: float) -> tuple[float, float]:
    """Window of ``length / rate`` seconds centred on the expression, clamped into the recording."""
    width = length / rate
    centre = 0.5 * (sample.signals.onset_s + sample.signals.offset_s)
    start = min(max(0.0, centre - width / 2), max(0.0, sample.signals.duration - width))
    return start, min(start + width, sample.signals.duration)


@dataclass
class PreparedSample:
    """Model-ready tensors for one clip (frames already downsampled for the backbone)."""

    sample_id: str
    subject_id: str
    label: int
    colour: np.ndarray  # [F, 3, S, S]
    depth: np.ndarray  # [F, 1, S, S]
    ps: np.ndarray  # [3, L]


def prepare_sample(sample: MESample, ps_length: int = 300, ps_rate: float = 100.0,
                   input_pool: int = 1, wavelet: WaveletSpec | None = WaveletSpec()) -> PreparedSample:
    depth = minmax_normalise(sample.depth)
    start, stop = ps_window(sample, ps_length, ps_rate)
    ps = segment_signals(sample.signals, start, stop, ps_length, wavelet)
    return PreparedSample(
        sample.sample_id,
        sample.subject_id,
        int(sample.label),
        downsample(sample.colour, input_pool).astype(np.float32),
        downsample(depth, input_pool).astype(np.float32),
        ps,
    )


def prepare_dataset(samples: Sequence[MESample], cfg) -> list[PreparedSample]:
    """Prepare every sample for a :class:`~latent_emotion.model.FullModelConfig`."""
    spec = WaveletSpec.from_name(cfg.wavelet, cfg.wavelet_levels)
    return [prepare_sample(s, cfg.ps.input_length, cfg.ps_rate, cfg.backbone.input_pool, spec) for s in samples]


# ---------------------------------------------------------------- disk I/O
def _meta_row(s: MESample) -> dict[str, str]:
    return {
        "sample_id": s.sample_id,
        "subject_id": s.subject_id,
        "label": str(int(s.label)),
        "n_frames": str(s.n_frames),
        "fps": repr(float(s.fps)),
        "ps_rate": repr(float(s.signals.sample_rate)),
        "onset_s": repr(float(s.signals.onset_s)),
        "offset_s": repr(float(s.signals.offset_s)),
    }


def _read_meta(path: Path) -> list[dict[str, str]]:
    if not path.exists():
        raise MissingFileError(f"missing metadata file {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != META_FIELDS:
            raise SchemaError(f"{path}: header {reader.fieldnames} != {META_FIELDS}")
        return list(reader)


def _write_meta(path: Path, rows: list[dict[str, str]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=META_FIELDS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def write_ps_csv(path, rate: float, channels: np.ndarray) -> None:
    times = np.arange(channels.shape[1]) / rate
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PS_FIELDS)
        for i in range(channels.shape[1]):
            writer.writerow([repr(float(times[i]))] + [repr(float(v)) for v in channels[:, i]])


def read_ps_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(t, channels[3, T])`` from a ``t,eda,ecg,ppg`` CSV."""
    path = Path(path)
    if not path.exists():
        raise MissingFileError(f"missing signal file {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != PS_FIELDS:
            raise SchemaError(f"{path}: header {header} != {PS_FIELDS}")
        rows = [[float(v) for v in row] for row in reader]
    if not rows or any(len(r) != 4 for r in rows):
        raise SchemaError(f"{path}: expected 4 numeric columns per row")
    arr = np.array(rows, dtype=np.float64)
    return arr[:, 0], arr[:, 1:].T.copy()


def save_sample(sample: MESample, directory) -> None:
    """Write the sample's files and upsert its row in the parent ``meta.csv``."""
    directory = Path(directory)
    if directory.name != sample.sample_id:
        raise ValueError(f"sample directory {directory.name!r} must be named after sample id {sample.sample_id!r}")
    directory.mkdir(parents=True, exist_ok=True)
    tenfile.save(directory / "colour.ten", sample.colour)
    tenfile.save(directory / "depth.ten", sample.depth)
    write_ps_csv(directory / "ps.csv", sample.signals.sample_rate, sample.signals.channels)
    meta = directory.parent / "meta.csv"
    rows = _read_meta(meta) if meta.exists() else []
    rows = [r for r in rows if r["sample_id"] != sample.sample_id] + [_meta_row(sample)]
    _write_meta(meta, rows)


def load_sample(directory, meta_row: dict[str, str] | None = None) -> MESample:
    directory = Path(directory)
    if meta_row is None:
        matches = [r for r in _read_meta(directory.parent / "meta.csv") if r["sample_id"] == directory.name]
        if not matches:
            raise SchemaError(f"no meta.csv row for sample {directory.name!r}")
        meta_row = matches[0]
    for name in ("colour.ten", "depth.ten", "ps.csv"):
        if not (directory / name).exists():
            raise MissingFileError(f"{directory}: missing {name}")
    colour = tenfile.load(directory / "colour.ten")
    depth = tenfile.load(directory / "depth.ten")
    n_frames = int(meta_row["n_frames"])
    if colour.ndim != 4 or colour.shape[0] != n_frames:
        raise SchemaError(f"{directory}: colour.ten shape {colour.shape} but meta says {n_frames} frames")
    rate = float(meta_row["ps_rate"])
    t, channels = read_ps_csv(directory / "ps.csv")
    if not np.allclose(t, np.arange(t.size) / rate, rtol=0, atol=1e-9):
        raise SchemaError(f"{directory}: ps.csv time column inconsistent with ps_rate={rate}")
    return MESample(
        sample_id=meta_row["sample_id"],
        subject_id=meta_row["subject_id"],
        label=int(meta_row["label"]),
        colour=colour,
        depth=depth,
        signals=SignalClip(rate, channels, float(meta_row["onset_s"]), float(meta_row["offset_s"])),
        fps=float(meta_row["fps"]),
    )


def save_dataset(samples: Sequence[MESample], root) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for s in samples:
        d = root / s.sample_id
        d.mkdir(exist_ok=True)
        tenfile.save(d / "colour.ten", s.colour)
        tenfile.save(d / "depth.ten", s.depth)
        write_ps_csv(d / "ps.csv", s.signals.sample_rate, s.signals.channels)
    _write_meta(root / "meta.csv", [_meta_row(s) for s in samples])


def load_dataset(root) -> list[MESample]:
    root = Path(root)
    return [load_sample(root / row["sample_id"], row) for row in _read_meta(root / "meta.csv")]
