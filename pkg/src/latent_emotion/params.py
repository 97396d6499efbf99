"""Named collection of trainable tensors with on-disk persistence."""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterator

import numpy as np

from . import tenfile
from .tensor import Tensor

MANIFEST = "manifest.csv"


class ParameterStore:
    """Ordered ``name -> Tensor`` mapping.  Names are dotted paths such as ``ps.block0.b1.dw.w``."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        t = value if isinstance(value, Tensor) else Tensor(value)
        t.requires_grad = True
        t.name = name
        self._params[name] = t
        return t

    def he_uniform(self, name: str, shape, fan_in: int, rng: np.random.Generator) -> Tensor:
        bound = np.sqrt(6.0 / fan_in)
        return self.add(name, rng.uniform(-bound, bound, size=shape).astype(np.float32))

    def glorot_uniform(self, name: str, shape, fan_in: int, fan_out: int, rng: np.random.Generator) -> Tensor:
        """Variance-preserving init for linear maps with no ReLU after them."""
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return self.add(name, rng.uniform(-bound, bound, size=shape).astype(np.float32))

    def zeros(self, name: str, shape) -> Tensor:
        return self.add(name, np.zeros(shape, dtype=np.float32))

    def num_parameters(self) -> int:
        return sum(t.size for t in self._params.values())

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def update(self, other: "ParameterStore") -> None:
        for name, t in other.items():
            self.add(name, t)

    def copy(self) -> "ParameterStore":
        out = ParameterStore()
        for name, t in self._params.items():
            out.add(name, t.data.copy())
        return out

    def state(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self._params.items()}

    def save(self, directory) -> None:
        """Write one ``.ten`` per parameter and a ``manifest.csv`` (name, shape, file)."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / MANIFEST, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["name", "shape", "file"])
            for i, (name, t) in enumerate(self._params.items()):
                fname = f"p{i:04d}.ten"
                tenfile.save(directory / fname, t.data)
                writer.writerow([name, "x".join(map(str, t.shape)), fname])

    @classmethod
    def load(cls, directory) -> "ParameterStore":
        directory = Path(directory)
        store = cls()
        with open(directory / MANIFEST, newline="") as fh:
            for row in csv.DictReader(fh):
                arr = tenfile.load(directory / row["file"])
                shape = tuple(int(s) for s in row["shape"].split("x")) if row["shape"] else ()
                if arr.shape != shape:
                    raise ValueError(f"{row['name']}: manifest shape {shape} but file holds {arr.shape}")
                store.add(row["name"], arr)
        return store
