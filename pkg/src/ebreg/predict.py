"""Prediction by gradient ascent on the energy, y* = argmax_y f(x, y).

Two update rules are provided:

* ``S1``: propose y + step * grad; accept only if the energy increases,
  otherwise shrink the step by ``decay`` and stay put.
* ``S2``: always move; stop early once the change in energy is below
  ``stop_tol`` in magnitude or falls below ``degen_tol``.

Energies used for the accept/stop decisions exclude the model's output
bias, so refinement is exactly invariant to an additive shift of f.
Everything is vectorised over a block of inputs and candidates.
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

log = logging.getLogger(__name__)


@dataclass
class RefineConfig:
    T: int = 10
    step: float | tuple[float, ...] = 0.1
    decay: float = 0.5
    stop_tol: float = 0.001
    degen_tol: float = -0.01
    variant: str = "S1"

    def __post_init__(self):
        if isinstance(self.step, list):
            self.step = tuple(self.step)
        if self.T < 0:
            raise ConfigurationError("T must be non-negative")
        if np.any(np.asarray(self.step, dtype=float) <= 0):
            raise ConfigurationError("step lengths must be positive")
        if not (0 < self.decay <= 1):
            raise ConfigurationError("decay must lie in (0, 1]")
        if self.stop_tol < 0 or self.degen_tol > 0:
            raise ConfigurationError("need stop_tol >= 0 and degen_tol <= 0")
        if self.variant not in ("S1", "S2"):
            raise ConfigurationError(f"unknown refinement variant {self.variant!r}")

    @classmethod
    def s2_defaults(cls, step: float = 0.1) -> "RefineConfig":
        return cls(T=5, step=step, stop_tol=0.001, degen_tol=-0.01, variant="S2")

    def to_dict(self) -> dict:
        step = list(self.step) if isinstance(self.step, tuple) else self.step
        return {"T": self.T, "step": step, "decay": self.decay, "stop_tol": self.stop_tol,
                "degen_tol": self.degen_tol, "variant": self.variant}


@dataclass
class TraceRecord:
    iteration: int
    y: np.ndarray
    f: float
    accepted: bool
    step: np.ndarray


@dataclass
class RefineTrace:
    records: list[TraceRecord] = field(default_factory=list)
    stopped_early: bool = False
    failure: str | None = None

    def accepted_values(self) -> list[float]:
        return [r.f for r in self.records if r.accepted]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        dim = len(self.records[0].y) if self.records else 1
        w.writerow(["iteration", *[f"y_{i}" for i in range(dim)], "f", "accepted",
                    *[f"step_{i}" for i in range(dim)]])
        for r in self.records:
            w.writerow([r.iteration, *map(repr, map(float, r.y)), repr(float(r.f)),
                        int(r.accepted), *map(repr, map(float, r.step))])
        return buf.getvalue()


def _steps(cfg: RefineConfig, shape) -> np.ndarray:
    step = np.asarray(cfg.step, dtype=np.float64)
    if step.ndim == 1 and step.shape[0] != shape[-1]:
        raise ConfigurationError(f"{step.shape[0]} step lengths for {shape[-1]}-dim targets")
    return np.broadcast_to(step, shape).copy()


def refine_block(model, X, Y0, cfg: RefineConfig, traces: bool = False):
    """Refine Y0 (n, k, dy) candidates for inputs X (n, dx).

    Returns ``(Y, f, trace_list)`` where f is the final energy of each
    candidate and trace_list holds one :class:`RefineTrace` per candidate
    when ``traces`` is set.
    """
    X = np.asarray(X, dtype=np.float64)
    Y = np.array(Y0, dtype=np.float64)
    n, k, dy = Y.shape
    gx = model.precompute_x(X)
    offset = getattr(model, "offset", 0.0)
    lam = _steps(cfg, Y.shape)
    active = np.ones((n, k), dtype=bool)
    all_traces = [[RefineTrace() for _ in range(k)] for _ in range(n)] if traces else None

    f = model.energy_batch(X, Y, gx=gx, relative=True)
    if not np.all(np.isfinite(f)):
        raise ConfigurationError("initial candidates have non-finite energy")

    def record(t, accepted):
        if traces:
            for i in range(n):
                for j in range(k):
                    if t == 0 or active[i, j] or accepted[i, j]:
                        all_traces[i][j].records.append(
                            TraceRecord(t, Y[i, j].copy(), float(f[i, j] + offset),
                                        bool(accepted[i, j]), lam[i, j].copy()))

    record(0, np.ones((n, k), dtype=bool))
    for t in range(1, cfg.T + 1):
        if not active.any():
            break
        f_prev, grad = model.energy_grad_batch(X, Y, gx=gx, relative=True)
        cand = Y + lam * grad
        f_new = model.energy_batch(X, cand, gx=gx, relative=True)
        bad = active & ~(np.isfinite(f_new) & np.all(np.isfinite(grad), axis=-1)
                         & np.all(np.isfinite(cand), axis=-1))
        if bad.any():
            log.warning("refinement hit non-finite values for %d candidates", int(bad.sum()))
            active &= ~bad
            if traces:
                for i, j in zip(*np.nonzero(bad)):
                    all_traces[i][j].failure = f"non-finite energy or gradient at iteration {t}"
        if cfg.variant == "S1":
            accept = active & (f_new > f_prev)
            reject = active & ~accept
            Y = np.where(accept[..., None], cand, Y)
            f = np.where(accept, f_new, f)
            lam = np.where(reject[..., None], cfg.decay * lam, lam)
            record(t, accept)
        else:
            moved = active.copy()
            Y = np.where(moved[..., None], cand, Y)
            f = np.where(moved, f_new, f)
            delta = f_new - f_prev
            stop = moved & ((np.abs(delta) < cfg.stop_tol) | (delta < cfg.degen_tol))
            record(t, moved)
            active &= ~stop
            if traces:
                for i, j in zip(*np.nonzero(stop)):
                    all_traces[i][j].stopped_early = True
    trace_out = [tr for row in all_traces for tr in row] if traces else None
    return Y, f + offset, trace_out


def refine_s1(model, x, y0, cfg: RefineConfig):
    """Accept/reject refinement of a single initial estimate; returns (y*, trace)."""
    if cfg.variant != "S1":
        raise ConfigurationError("refine_s1 needs a config with variant 'S1'")
    return _refine_one(model, x, y0, cfg)


def refine_s2(model, x, y0, cfg: RefineConfig):
    """Early-stopping refinement of a single initial estimate; returns (y*, trace)."""
    if cfg.variant != "S2":
        raise ConfigurationError("refine_s2 needs a config with variant 'S2'")
    return _refine_one(model, x, y0, cfg)


def refine(model, x, y0, cfg: RefineConfig):
    return _refine_one(model, x, y0, cfg)


def _refine_one(model, x, y0, cfg):
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    y0 = np.asarray(y0, dtype=np.float64).reshape(1, 1, -1)
    Y, _, traces = refine_block(model, x, y0, cfg, traces=True)
    return Y[0, 0], traces[0]


def select_best(Y: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Pick the highest-energy candidate per input; ties go to the lowest index."""
    idx = np.argmax(f, axis=1)
    return Y[np.arange(Y.shape[0]), idx]


def refine_multi(model, x, inits, cfg: RefineConfig) -> np.ndarray:
    """Refine K initial estimates (K, dy) for one input and return the best."""
    inits = np.asarray(inits, dtype=np.float64)
    if inits.ndim == 1:
        inits = inits[:, None]
    if inits.shape[0] < 1:
        raise ConfigurationError("need at least one initialisation")
    Y, f, _ = refine_block(model, np.asarray(x, dtype=np.float64).reshape(1, -1), inits[None], cfg)
    return select_best(Y, f)[0]


def refine_multi_batch(model, X, inits, cfg: RefineConfig) -> np.ndarray:
    """Batched :func:`refine_multi`: X (n, dx), inits (K, dy) shared or (n, K, dy)."""
    X = np.asarray(X, dtype=np.float64)
    inits = np.asarray(inits, dtype=np.float64)
    if inits.ndim == 2:
        inits = np.broadcast_to(inits, (X.shape[0],) + inits.shape)
    Y, f, _ = refine_block(model, X, inits, cfg)
    return select_best(Y, f)


def uniform_inits(lo, hi, K: int) -> np.ndarray:
    """K evenly spaced 1D initialisations on [lo, hi], shape (K, 1)."""
    return np.linspace(float(lo), float(hi), K)[:, None]
