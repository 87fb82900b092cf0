"""Ordered metric records: trajectories (vs round trip) and spectra (vs alpha)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Record:
    sweep: str
    values: np.ndarray
    columns: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1:
            raise ValueError("sweep values must be one-dimensional")
        if self.values.size > 1 and not np.all(np.diff(self.values) > 0):
            raise ValueError(f"sweep variable {self.sweep!r} must be strictly increasing")
        cols = {}
        for k, v in self.columns.items():
            v = np.asarray(v)
            if v.shape != self.values.shape:
                raise ValueError(f"column {k!r} has shape {v.shape}, expected {self.values.shape}")
            cols[k] = v
        self.columns = cols

    def __getitem__(self, name: str) -> np.ndarray:
        if name == self.sweep:
            return self.values
        try:
            return self.columns[name]
        except KeyError:
            raise KeyError(f"no column {name!r}; have {sorted(self.columns)}") from None

    def __len__(self) -> int:
        return self.values.size

    @property
    def names(self) -> list[str]:
        return [self.sweep, *self.columns]

    def check_finite(self) -> None:
        for k, v in self.columns.items():
            if not np.all(np.isfinite(v)):
                raise FloatingPointError(f"non-finite values in column {k!r}")


class Trajectory(Record):
    def __init__(self, values, columns=None, meta=None):
        super().__init__("tau", values, columns or {}, meta or {})


class Spectrum(Record):
    def __init__(self, values, columns=None, meta=None):
        super().__init__("alpha", values, columns or {}, meta or {})
