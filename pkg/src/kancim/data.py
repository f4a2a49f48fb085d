"""Datasets: CSV ingestion and desk-scale synthetic generators."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DomainError


@dataclass
class Dataset:
    X: np.ndarray
    Y: np.ndarray
    split: np.ndarray = field(default=None)  # "train" / "val" per row

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.Y = np.asarray(self.Y, dtype=float)
        if self.Y.ndim == 1:
            self.Y = self.Y[:, None]
        if self.X.shape[0] != self.Y.shape[0]:
            raise ValueError("feature and target row counts differ")
        if self.X.shape[0] == 0:
            raise ValueError("empty dataset")
        if not (np.all(np.isfinite(self.X)) and np.all(np.isfinite(self.Y))):
            raise ValueError("dataset contains non-finite entries")
        if self.split is None:
            self.split = np.full(self.X.shape[0], "train")
        self.split = np.asarray(self.split, dtype=str)

    def __len__(self):
        return self.X.shape[0]

    def part(self, tag: str) -> tuple[np.ndarray, np.ndarray]:
        m = self.split == tag
        return self.X[m], self.Y[m]

    @property
    def train(self):
        return self.part("train")

    @property
    def val(self):
        X, Y = self.part("val")
        return (X, Y) if len(X) else self.train

    def apply_domain(self, lo: float, hi: float, policy: str = "clip") -> "Dataset":
        if policy == "clip":
            return Dataset(np.clip(self.X, lo, hi), self.Y, self.split)
        if policy == "reject":
            bad = (self.X < lo) | (self.X > hi)
            if bad.any():
                r, c = np.argwhere(bad)[0]
                raise DomainError(f"row {r} column f{c} = {self.X[r, c]!r} outside [{lo}, {hi}]")
            return self
        raise ValueError(f"unknown domain policy {policy!r}")


def read_csv(path: str | Path) -> Dataset:
    """Read ``f0..f{n-1}, t0..t{m-1}`` columns plus an optional ``split`` column."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"dataset not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError(f"{path}: empty file") from None
        fcols = [i for i, h in enumerate(header) if h.startswith("f")]
        tcols = [i for i, h in enumerate(header) if h.startswith("t")]
        scol = header.index("split") if "split" in header else None
        if [header[i] for i in fcols] != [f"f{k}" for k in range(len(fcols))]:
            raise ConfigError(f"{path}:1: feature columns must be f0..f{{n-1}} in order")
        if [header[i] for i in tcols] != [f"t{k}" for k in range(len(tcols))]:
            raise ConfigError(f"{path}:1: target columns must be t0..t{{m-1}} in order")
        if not fcols or not tcols:
            raise ConfigError(f"{path}:1: need at least one f and one t column")
        X, Y, S = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ConfigError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                X.append([float(row[i]) for i in fcols])
                Y.append([float(row[i]) for i in tcols])
            except ValueError as e:
                raise ConfigError(f"{path}:{lineno}: {e}") from None
            if scol is not None:
                if row[scol] not in ("train", "val"):
                    raise ConfigError(f"{path}:{lineno}: split must be train or val")
                S.append(row[scol])
    if not X:
        raise ConfigError(f"{path}: no data rows")
    X, Y = np.array(X), np.array(Y)
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
        raise ConfigError(f"{path}: non-finite values")
    return Dataset(X, Y, np.array(S) if S else None)


def write_csv(ds: Dataset, path: str | Path) -> None:
    path = Path(path)
    n, m = ds.X.shape[1], ds.Y.shape[1]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{i}" for i in range(n)] + [f"t{i}" for i in range(m)] + ["split"])
        for x, y, s in zip(ds.X, ds.Y, ds.split):
            w.writerow([repr(float(v)) for v in x] + [repr(float(v)) for v in y] + [s])


def synthetic(kind: str, rows: int, in_dim: int, seed: int, lo: float = -1.0, hi: float = 1.0,
              noise: float = 0.0, val_fraction: float = 0.25, out_dim: int = 1) -> Dataset:
    """Desk-scale tasks.

    ``gaussian``: features ~ N(centre, (width/6)^2) clipped to the domain,
    target a smooth sum of per-feature bumps. ``uniform``: same target with
    uniform features. ``constant``: target 0.5 plus noise.
    """
    rng = np.random.default_rng(seed)
    centre, width = (lo + hi) / 2, hi - lo
    if kind == "gaussian":
        X = np.clip(rng.normal(centre, width / 6, size=(rows, in_dim)), lo, hi)
    elif kind in ("uniform", "constant"):
        X = rng.uniform(lo, hi, size=(rows, in_dim))
    else:
        raise ConfigError(f"unknown synthetic dataset kind {kind!r}")
    if kind == "constant":
        Y = np.full((rows, out_dim), 0.5)
    else:
        z = (X - centre) / (width / 2)
        cols = [np.sum(np.sin(np.pi * (k + 1) * z / 2) * np.exp(-z**2), axis=1) / np.sqrt(in_dim)
                for k in range(out_dim)]
        Y = np.stack(cols, axis=1)
    Y = Y + noise * rng.normal(size=Y.shape)
    split = np.where(np.arange(rows) < int(round(rows * (1 - val_fraction))), "train", "val")
    return Dataset(X, Y, split)
