"""Regression datasets and their CSV form (header ``x1..xd,y1..yk``)."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ShapeError


def fmt(v: float) -> str:
    """17 significant digits: enough for every double to round-trip."""
    return format(float(v), ".17g")


@dataclass
class RegressionDataset:
    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        Y = np.asarray(self.Y, dtype=np.float64)
        self.Y = Y[:, None] if Y.ndim == 1 else Y
        if self.X.shape[0] != self.Y.shape[0]:
            raise ShapeError(f"{self.X.shape[0]} covariate rows but {self.Y.shape[0]} responses")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d_x(self) -> int:
        return self.X.shape[1]

    @property
    def d_y(self) -> int:
        return self.Y.shape[1]

    def header(self) -> list[str]:
        ys = ["y"] if self.d_y == 1 else [f"y{k + 1}" for k in range(self.d_y)]
        return [f"x{j + 1}" for j in range(self.d_x)] + ys


def write_dataset(path: str | Path, data: RegressionDataset) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(data.header())
        for x, y in zip(data.X, data.Y):
            w.writerow([fmt(v) for v in x] + [fmt(v) for v in y])


def read_dataset(path: str | Path) -> RegressionDataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"{path}: empty dataset file")
    header = rows[0]
    xcols = [i for i, h in enumerate(header) if h.startswith("x")]
    ycols = [i for i, h in enumerate(header) if h.startswith("y")]
    if not xcols or not ycols or len(xcols) + len(ycols) != len(header):
        raise ConfigError(f"{path}: header must be x1..xd followed by y columns, got {header}")
    body = np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64)
    if body.size == 0:
        raise ConfigError(f"{path}: dataset has no rows")
    return RegressionDataset(body[:, xcols], body[:, ycols])
