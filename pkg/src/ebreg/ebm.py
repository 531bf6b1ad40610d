"""Energy-based conditional density p(y|x) = exp(f(x, y)) / Z(x).

The network is late-fusion: an x-branch and a y-branch produce features
that are concatenated and scored by a head. The x-branch runs once per
input and its features are repeated for every candidate y, so scoring M
proposal samples costs one x-branch pass.

Training minimises the importance-sampled negative log-likelihood

    log( (1/M) sum_k exp(f(x_i, y_k) - log q(y_k | y_i)) ) - f(x_i, y_i)

averaged over a mini-batch, with y_k drawn from the Gaussian-mixture
proposal centred on the label.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from . import autodiff as ad
from .autodiff import Graph, Mlp, Node
from .densities import Proposal, proposal_log_density, sample_proposal_batch
from .errors import ConfigurationError, ContractError, TrainingError

MIN_ESS = 1.5


# -- energies ---------------------------------------------------------------

class EnergyModel:
    """Late-fusion MLP scoring (x, y) pairs."""

    kind = "ebm"

    def __init__(self, x_branch: Mlp, y_branch: Mlp, head: Mlp):
        if head.out_dim != 1:
            raise ConfigurationError(f"energy head must output a scalar, got {head.out_dim}")
        if head.in_dim != x_branch.out_dim + y_branch.out_dim:
            raise ConfigurationError(
                f"head input {head.in_dim} != {x_branch.out_dim} + {y_branch.out_dim}"
            )
        self.x_branch = x_branch
        self.y_branch = y_branch
        self.head = head
        self.x_calls = 0

    @classmethod
    def create(cls, rng: np.random.Generator, x_dim: int = 1, y_dim: int = 1,
               branch_dims: Sequence[int] = (10, 10), head_dims: Sequence[int] = (10, 10),
               activation: str = "relu", softplus_beta: float = 1.0) -> "EnergyModel":
        """Defaults give the 1D architecture: 1->10->10 per branch, 20->10->10->1 head."""
        xb = Mlp.create([x_dim, *branch_dims], rng, activation, activation, softplus_beta)
        yb = Mlp.create([y_dim, *branch_dims], rng, activation, activation, softplus_beta)
        head = Mlp.create([2 * branch_dims[-1], *head_dims, 1], rng, activation, beta=softplus_beta)
        return cls(xb, yb, head)

    @property
    def x_dim(self) -> int:
        return self.x_branch.in_dim

    @property
    def y_dim(self) -> int:
        return self.y_branch.in_dim

    def parameters(self) -> list[np.ndarray]:
        return self.x_branch.parameters() + self.y_branch.parameters() + self.head.parameters()

    def x_features(self, graph: Graph, X: np.ndarray, requires_grad: bool = True) -> Node:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.x_dim:
            raise ConfigurationError(f"expected inputs of shape (n, {self.x_dim}), got {X.shape}")
        self.x_calls += 1
        return self.x_branch.apply(graph, graph.const(X), requires_grad)

    def score_features(self, graph: Graph, gx: Node, Y: Node, m: int,
                       requires_grad: bool = True, relative: bool = False) -> Node:
        """Score ``m`` candidates per input: gx (n, h), Y (n*m, dy) -> (n, m).

        ``relative=True`` leaves out the head's output bias, giving energies
        that are exactly unchanged by an additive shift of the model.
        """
        n = gx.shape[0]
        if Y.shape != (n * m, self.y_dim):
            raise ConfigurationError(f"candidate block {Y.shape} != ({n * m}, {self.y_dim})")
        gy = self.y_branch.apply(graph, Y, requires_grad)
        first = self.head.layers[0]
        h = ad.late_fusion(gx, gy, m, graph.param(first.weights, requires_grad),
                           graph.param(first.bias, requires_grad), first.activation, first.beta)
        layers = self.head.layers
        for layer in layers[1:-1]:
            h = ad.dense(h, graph.param(layer.weights, requires_grad),
                         graph.param(layer.bias, requires_grad), layer.activation, layer.beta)
        last = layers[-1]
        if len(layers) > 1:
            b = graph.const(np.zeros_like(last.bias)) if relative else graph.param(last.bias, requires_grad)
            h = ad.dense(h, graph.param(last.weights, requires_grad), b, last.activation, last.beta)
        elif relative:
            raise ConfigurationError("relative energies need a head with at least two layers")
        return ad.reshape(h, (n, m))

    def graph_energies(self, graph: Graph, X: np.ndarray, Y: np.ndarray,
                       requires_grad: bool = True) -> Node:
        """X (n, dx), Y (n, m, dy) -> recorded energies (n, m)."""
        X, Y = _check_blocks(self, X, Y)
        n, m, dy = Y.shape
        gx = self.x_features(graph, X, requires_grad)
        return self.score_features(graph, gx, graph.const(Y.reshape(n * m, dy)), m, requires_grad)

    def energy_batch(self, X, Y, gx: np.ndarray | None = None, relative: bool = False) -> np.ndarray:
        X, Y = _check_blocks(self, X, Y)
        n, m, dy = Y.shape
        g = Graph()
        gxn = g.const(gx) if gx is not None else self.x_features(g, X, requires_grad=False)
        f = self.score_features(g, gxn, g.const(Y.reshape(n * m, dy)), m, False, relative)
        return f.value.copy()

    @property
    def offset(self) -> float:
        return float(self.head.layers[-1].bias[0])

    def energy_grad_batch(self, X, Y, gx: np.ndarray | None = None, relative: bool = False):
        """Energies (n, m) and gradients w.r.t. y (n, m, dy); parameters frozen.

        ``gx`` may carry precomputed x features to skip the x-branch.
        """
        X, Y = _check_blocks(self, X, Y)
        n, m, dy = Y.shape
        g = Graph()
        gxn = g.const(gx) if gx is not None else self.x_features(g, X, requires_grad=False)
        yn = g.leaf(Y.reshape(n * m, dy))
        f = self.score_features(g, gxn, yn, m, False, relative)
        g.backward(ad.sum_all(f))
        grad = g.grads[yn.id]
        if grad is None:
            grad = np.zeros_like(yn.value)
        return f.value.copy(), grad.reshape(n, m, dy)

    def precompute_x(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return self.x_features(Graph(), X, requires_grad=False).value.copy()

    def shifted(self, c: float) -> "EnergyModel":
        """Copy with ``c`` added to the head's output bias (f -> f + c)."""
        out = copy.deepcopy(self)
        out.head.layers[-1].bias += c
        out.x_calls = 0
        return out

    def architecture(self) -> dict:
        return {
            "x_branch": self.x_branch.describe(),
            "y_branch": self.y_branch.describe(),
            "head": self.head.describe(),
        }

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "architecture": self.architecture(),
            "x_branch": self.x_branch.to_dict(),
            "y_branch": self.y_branch.to_dict(),
            "head": self.head.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EnergyModel":
        return cls(Mlp.from_dict(d["x_branch"]), Mlp.from_dict(d["y_branch"]), Mlp.from_dict(d["head"]))

    def log_density_grid(self, xs, grid: "YGrid") -> np.ndarray:
        """Grid-normalised log p(y|x) on grid midpoints, shape (len(xs), grid.size)."""
        xs = _as_inputs(xs, self.x_dim)
        pts = grid.points()
        out = np.empty((xs.shape[0], pts.shape[0]))
        for i, x in enumerate(xs):
            f = self.energy_batch(x[None, :], pts[None, :, :])[0]
            out[i] = f - (logsumexp(f) + grid.log_cell_volume)
        return out


class AnalyticEnergy:
    """Energy given by a closed-form function; used as a test rig and oracle.

    ``fn(X, Y)`` maps X (n, dx) and Y (n, m, dy) to (n, m). ``grad_fn`` has the
    same signature and returns d f / d y with shape (n, m, dy).
    """

    kind = "analytic"

    def __init__(self, fn: Callable, grad_fn: Callable | None = None, x_dim: int = 1, y_dim: int = 1):
        self.fn = fn
        self.grad_fn = grad_fn
        self.x_dim = x_dim
        self.y_dim = y_dim
        self.offset = 0.0

    def parameters(self) -> list[np.ndarray]:
        return []

    def energy_batch(self, X, Y, gx=None, relative: bool = False) -> np.ndarray:
        X, Y = _check_blocks(self, X, Y)
        f = np.asarray(self.fn(X, Y), dtype=np.float64)
        return f if relative else f + self.offset

    def energy_grad_batch(self, X, Y, gx=None, relative: bool = False):
        X, Y = _check_blocks(self, X, Y)
        if self.grad_fn is None:
            raise ConfigurationError("analytic energy has no gradient function")
        return self.energy_batch(X, Y, relative=relative), np.asarray(self.grad_fn(X, Y), dtype=np.float64)

    def graph_energies(self, graph: Graph, X, Y, requires_grad: bool = True) -> Node:
        return graph.const(self.energy_batch(X, Y))

    def precompute_x(self, X):
        return None

    def shifted(self, c: float) -> "AnalyticEnergy":
        out = copy.copy(self)
        out.offset = self.offset + c
        return out

    def log_density_grid(self, xs, grid: "YGrid") -> np.ndarray:
        xs = _as_inputs(xs, self.x_dim)
        pts = grid.points()
        f = self.energy_batch(xs, np.broadcast_to(pts, (xs.shape[0],) + pts.shape))
        return f - (logsumexp(f, axis=1, keepdims=True) + grid.log_cell_volume)


def _as_inputs(xs, dim: int) -> np.ndarray:
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim <= 1 and dim == 1:
        xs = xs.reshape(-1, 1)
    if xs.ndim == 1:
        xs = xs[None, :]
    return xs


def _check_blocks(model, X, Y):
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.x_dim:
        raise ConfigurationError(f"inputs must be (n, {model.x_dim}), got {X.shape}")
    if Y.ndim != 3 or Y.shape[0] != X.shape[0] or Y.shape[2] != model.y_dim:
        raise ConfigurationError(f"targets must be ({X.shape[0]}, m, {model.y_dim}), got {Y.shape}")
    return X, Y


def energy(model, x, y, graph: Graph | None = None) -> Node:
    """Recorded scalar f(x, y) for one pair."""
    graph = graph if graph is not None else Graph()
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    y = np.asarray(y, dtype=np.float64).reshape(1, 1, -1)
    return ad.reshape(model.graph_energies(graph, x, y), ())


# -- loss -------------------------------------------------------------------

def nll_terms(model, graph: Graph, X, Y, samples, q_logs) -> Node:
    """Per-example importance-sampled NLL, shape (n,).

    X (n, dx), Y (n, dy), samples (n, M, dy), q_logs (n, M).
    """
    return _nll_graph(model, graph, X, Y, samples, q_logs)[0]


def _nll_graph(model, graph, X, Y, samples, q_logs):
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    samples = np.asarray(samples, dtype=np.float64)
    q_logs = np.asarray(q_logs, dtype=np.float64)
    if samples.ndim != 3 or samples.shape[1] < 1:
        raise ContractError("need at least one importance sample per example")
    n, M, _ = samples.shape
    if q_logs.shape != (n, M):
        raise ContractError(f"q_logs shape {q_logs.shape} != ({n}, {M})")
    cand = np.concatenate([Y[:, None, :], samples], axis=1)
    F = model.graph_energies(graph, X, cand)
    f_true = ad.reshape(ad.slice_cols(F, 0, 1), (n,))
    log_w = ad.slice_cols(F, 1, M + 1) - graph.const(q_logs)
    return ad.shift(ad.logsumexp_rows(log_w), -math.log(M)) - f_true, log_w


def nll_term(model, x_i, y_i, samples, q_logs, graph: Graph | None = None) -> Node:
    """Importance-sampled NLL of one example (recorded scalar)."""
    graph = graph if graph is not None else Graph()
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 1:
        samples = samples[:, None]
    if samples.shape[0] < 1:
        raise ContractError("need at least one importance sample")
    t = nll_terms(model, graph,
                  np.asarray(x_i, dtype=np.float64).reshape(1, -1),
                  np.asarray(y_i, dtype=np.float64).reshape(1, -1),
                  samples[None], np.asarray(q_logs, dtype=np.float64)[None])
    return ad.reshape(t, ())


def importance_ess(log_w: np.ndarray) -> np.ndarray:
    """Effective sample size of each row of log-weights."""
    log_w = np.atleast_2d(log_w)
    a = logsumexp(log_w, axis=1)
    b = logsumexp(2.0 * log_w, axis=1)
    return np.exp(2.0 * a - b)


@dataclass
class LossResult:
    value: float
    grads: list[np.ndarray]
    terms: np.ndarray
    min_ess: float


def batch_loss_given(model, X, Y, samples, q_logs, check_ess: bool = False) -> LossResult:
    """Mini-batch loss and parameter gradients for fixed importance samples."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] < 1:
        raise ContractError("empty batch")
    g = Graph()
    terms, log_w = _nll_graph(model, g, X, Y, samples, q_logs)
    J = ad.mean_all(terms)
    tv = terms.value
    bad = np.flatnonzero(~np.isfinite(tv))
    if bad.size:
        raise TrainingError(f"non-finite loss term for example {int(bad[0])} of the batch")
    e = importance_ess(log_w.value)
    ess = float(e.min())
    if check_ess:
        if ess < MIN_ESS:
            raise TrainingError(
                f"importance weights degenerate (ESS {ess:.3g}) for example {int(np.argmin(e))}"
            )
    g.backward(J)
    grads = [g.param_grad(p) for p in model.parameters()]
    return LossResult(float(J.value), grads, tv.copy(), ess)


def batch_loss(model, X, Y, proposal: Proposal, M: int, rng: np.random.Generator,
               check_ess: bool = False) -> LossResult:
    """Draw fresh proposal samples per example and evaluate the batch loss."""
    Y = np.asarray(Y, dtype=np.float64)
    samples = sample_proposal_batch(Y, proposal, M, rng)
    q_logs = proposal_log_density(samples, Y[:, None, :], proposal)
    return batch_loss_given(model, X, Y, samples, q_logs, check_ess)


# -- partition function -----------------------------------------------------

@dataclass(frozen=True)
class YGrid:
    """Uniform midpoint lattice over a box in target space (1D or 2D)."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    cells: int = 2048

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if len(lo) != len(hi) or len(lo) not in (1, 2):
            raise ConfigurationError("grid must be 1D or 2D with matching bounds")
        if self.cells < 1:
            raise ContractError("grid must contain at least one cell")
        if any(h <= l for l, h in zip(lo, hi)):
            raise ContractError("grid spacing must be positive")

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def spacing(self) -> np.ndarray:
        return (np.asarray(self.hi) - np.asarray(self.lo)) / self.cells

    @property
    def log_cell_volume(self) -> float:
        return float(np.sum(np.log(self.spacing)))

    @property
    def size(self) -> int:
        return self.cells ** self.dim

    def axis(self, d: int = 0) -> np.ndarray:
        h = self.spacing[d]
        return self.lo[d] + (np.arange(self.cells) + 0.5) * h

    def points(self) -> np.ndarray:
        """Midpoints, shape (size, dim); 2D lattices are row-major in (axis0, axis1)."""
        if self.dim == 1:
            return self.axis(0)[:, None]
        a, b = np.meshgrid(self.axis(0), self.axis(1), indexing="ij")
        return np.stack([a.ravel(), b.ravel()], axis=1)

    def refined(self) -> "YGrid":
        return YGrid(self.lo, self.hi, self.cells * 2)

    def to_dict(self) -> dict:
        return {"lo": list(self.lo), "hi": list(self.hi), "cells": self.cells}

    @classmethod
    def from_dict(cls, d: dict) -> "YGrid":
        return cls(tuple(d["lo"]), tuple(d["hi"]), int(d["cells"]))

    @classmethod
    def around(cls, y: np.ndarray, cells: int = 2048, margin: float = 3.0) -> "YGrid":
        """Bounds [min - margin*spread, max + margin*spread] per target dimension."""
        y = np.asarray(y, dtype=np.float64).reshape(len(y), -1)
        spread = y.std(axis=0)
        return cls(tuple(y.min(axis=0) - margin * spread), tuple(y.max(axis=0) + margin * spread), cells)


@dataclass
class PartitionEstimate:
    log_value: float
    method: str
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.isfinite(self.log_value):
            raise ContractError(f"partition estimate must be positive and finite, log Z = {self.log_value}")

    @property
    def value(self) -> float:
        return math.exp(self.log_value)


def partition_grid(model, x, grid: YGrid) -> PartitionEstimate:
    """Midpoint-rule Z(x) = sum_cells exp(f(x, y_cell)) * h^D."""
    if grid.size < 1:
        raise ContractError("empty grid")
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    pts = grid.points()
    f = model.energy_batch(x, pts[None])[0]
    return PartitionEstimate(float(logsumexp(f) + grid.log_cell_volume), "grid",
                             {"cells": grid.cells, "dim": grid.dim})


def partition_importance(model, x, center, proposal: Proposal, M: int,
                         rng: np.random.Generator) -> PartitionEstimate:
    """Z(x) = mean_k exp(f(x, y_k) - log q(y_k | center)), y_k ~ q(.|center)."""
    if M < 1:
        raise ContractError("need at least one sample")
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    center = np.asarray(center, dtype=np.float64).reshape(1, -1)
    s = sample_proposal_batch(center, proposal, M, rng)
    q = proposal_log_density(s, center[:, None, :], proposal)
    log_w = model.energy_batch(x, s)[0] - q[0]
    log_z = float(logsumexp(log_w) - math.log(M))
    w = np.exp(log_w - log_z)
    se = float(np.std(w, ddof=1) / math.sqrt(M)) if M > 1 else float("inf")
    return PartitionEstimate(log_z, "importance",
                             {"M": M, "ess": float(importance_ess(log_w[None])[0]),
                              "relative_se": se})


def log_density(model, x, y, z: PartitionEstimate) -> float:
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    y = np.asarray(y, dtype=np.float64).reshape(1, 1, -1)
    return float(model.energy_batch(x, y)[0, 0] - z.log_value)


# -- training ---------------------------------------------------------------

def iterate_minibatches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def fit_ebm(model: EnergyModel, X, Y, proposal: Proposal, *, epochs: int = 75,
            batch_size: int = 32, M: int = 1024, lr: float = 1e-3,
            betas: tuple[float, float] = (0.9, 0.999), data_rng: np.random.Generator,
            proposal_rng: np.random.Generator, on_epoch: Callable | None = None) -> list[float]:
    """Train in place with ADAM; returns the mean loss of each epoch."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    opt = ad.Adam(model.parameters(), lr=lr, betas=betas)
    history = []
    for epoch in range(epochs):
        total, count = 0.0, 0
        for idx in iterate_minibatches(X.shape[0], batch_size, data_rng):
            try:
                res = batch_loss(model, X[idx], Y[idx], proposal, M, proposal_rng)
            except TrainingError as exc:
                raise TrainingError(f"epoch {epoch}: {exc}") from exc
            opt.step(res.grads)
            total += res.value * len(idx)
            count += len(idx)
        history.append(total / count)
        if on_epoch is not None:
            on_epoch(epoch, history[-1], model)
    return history
