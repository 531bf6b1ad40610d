"""Synthetic regression tasks, splitting and CSV persistence."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .densities import GroundTruthDensity
from .errors import ConfigurationError

SPLIT_NAMES = ("train", "val", "test")


@dataclass
class LabeledSet:
    inputs: np.ndarray  # (N, Dx)
    targets: np.ndarray  # (N, Dy)
    split: list[str] = field(default_factory=list)
    ids: np.ndarray | None = None

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.inputs.ndim == 1:
            self.inputs = self.inputs[:, None]
        if self.targets.ndim == 1:
            self.targets = self.targets[:, None]
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ConfigurationError(
                f"{self.inputs.shape[0]} inputs but {self.targets.shape[0]} targets"
            )
        if not self.split:
            self.split = ["train"] * len(self)
        if self.ids is None:
            self.ids = np.arange(len(self))

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def x_dim(self) -> int:
        return self.inputs.shape[1]

    @property
    def y_dim(self) -> int:
        return self.targets.shape[1]

    def subset(self, idx, tag: str | None = None) -> "LabeledSet":
        idx = np.asarray(idx, dtype=int)
        split = [tag] * len(idx) if tag else [self.split[i] for i in idx]
        return LabeledSet(self.inputs[idx], self.targets[idx], split, self.ids[idx])

    def select(self, tag: str) -> "LabeledSet":
        return self.subset([i for i, s in enumerate(self.split) if s == tag])

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([*(f"x_{i}" for i in range(self.x_dim)),
                    *(f"y_{i}" for i in range(self.y_dim)), "split"])
        for x, y, s in zip(self.inputs, self.targets, self.split):
            w.writerow([*map(repr, map(float, x)), *map(repr, map(float, y)), s])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def read_csv(path, require_targets: bool = True) -> LabeledSet:
    return parse_csv(Path(path).read_text(), require_targets)


def parse_csv(text: str, require_targets: bool = True) -> LabeledSet:
    """Parse dataset CSV text; errors name the offending line."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ConfigurationError("line 1: empty CSV")
    header = [h.strip() for h in rows[0]]
    xcols = [i for i, h in enumerate(header) if h.startswith("x_")]
    ycols = [i for i, h in enumerate(header) if h.startswith("y_")]
    scol = header.index("split") if "split" in header else None
    if not xcols:
        raise ConfigurationError("line 1: header has no x_ columns")
    if require_targets and not ycols:
        raise ConfigurationError("line 1: header has no y_ columns")
    xs, ys, split = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ConfigurationError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            xs.append([float(row[i]) for i in xcols])
            ys.append([float(row[i]) for i in ycols])
        except ValueError as exc:
            raise ConfigurationError(f"line {lineno}: {exc}") from None
        split.append(row[scol].strip() if scol is not None else "train")
    X = np.array(xs, dtype=np.float64).reshape(len(xs), len(xcols))
    Y = np.array(ys, dtype=np.float64).reshape(len(ys), len(ycols))
    if not ycols:
        Y = np.full((len(xs), 1), np.nan)
    return LabeledSet(X, Y, split)


def generate_piecewise(n: int = 2000, dens: GroundTruthDensity | None = None,
                  rng: np.random.Generator | None = None) -> LabeledSet:
    """x ~ U(-3, 3), y ~ p(y|x) from the piecewise ground truth."""
    if n < 1:
        raise ConfigurationError("need at least one example")
    dens = dens if dens is not None else GroundTruthDensity()
    rng = rng if rng is not None else np.random.default_rng(0)
    x = rng.uniform(-3.0, 3.0, size=n)
    y = dens.sample(x, rng)
    return LabeledSet(x[:, None], y[:, None])


def generate_hetero_sine(n: int = 2000, rng: np.random.Generator | None = None,
                         noise: float = 0.1) -> LabeledSet:
    """y = sin(x) + noise * (1 + |x|) * eps, x ~ U(-3, 3). A smoke-test task."""
    rng = rng if rng is not None else np.random.default_rng(0)
    x = rng.uniform(-3.0, 3.0, size=n)
    y = np.sin(x) + noise * (1.0 + np.abs(x)) * rng.standard_normal(n)
    return LabeledSet(x[:, None], y[:, None])


def hetero_sine_log_pdf(x, y, noise: float = 0.1):
    s = noise * (1.0 + np.abs(x))
    return -0.5 * np.log(2 * np.pi * s * s) - 0.5 * (y - np.sin(x)) ** 2 / (s * s)


def split(data: LabeledSet, fractions=(0.8, 0.1, 0.1), rng: np.random.Generator | None = None):
    """Random disjoint partition into (train, val, test) by the given fractions."""
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.shape != (3,) or np.any(fr < 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise ConfigurationError(f"split fractions must be three non-negative numbers summing to 1, got {fractions}")
    rng = rng if rng is not None else np.random.default_rng(0)
    n = len(data)
    order = rng.permutation(n)
    n_train = int(round(fr[0] * n))
    n_val = min(int(round(fr[1] * n)), n - n_train)
    parts = (order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:])
    return tuple(data.subset(np.sort(p), tag) for p, tag in zip(parts, SPLIT_NAMES))
