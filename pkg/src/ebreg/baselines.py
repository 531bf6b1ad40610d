"""Comparison models: direct regression, Gaussian, Laplace, Gaussian mixture
(MDN) and softmax regression-by-classification.

Loss functions come in two layers. ``*_node`` functions build the loss on a
:class:`~ebreg.autodiff.Graph` so it can be differentiated; the plain
functions take arrays and return floats. Losses are implemented exactly as
commonly printed, which for the Gaussian and multivariate Laplace omits the
factor 1/2 and the log(2*pi) constant. :meth:`log_pdf` on each model gives
the true log-density for evaluation.

Array conventions: ``y``, ``mu``, ``log_var`` are (n, d); mixture parameters
are (n, K) (mixtures are 1D only); logits are (n, C) per target dimension.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.special import log_softmax, logsumexp

from . import autodiff as ad
from .autodiff import Graph, Mlp, Node
from .densities import LOG_2PI
from .ebm import YGrid, iterate_minibatches
from .errors import ConfigurationError, TrainingError
from .predict import RefineConfig, refine_block

SOFTMAX_L2_WEIGHT = 0.1
SOFTMAX_VAR_WEIGHT = 0.05


def _2d(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    return a.reshape(-1, 1) if a.ndim <= 1 else a


def _row_broadcast(v: Node, width: int) -> Node:
    """(n,) -> (n, width) by repeating each entry across the row."""
    n = v.shape[0]
    return ad.matmul(ad.reshape(v, (n, 1)), v.graph.const(np.ones((1, width))))


# -- losses on graph nodes ---------------------------------------------------

def direct_loss_node(pred: Node, target: Node, kind: str = "L2", delta: float = 1.0) -> Node:
    err = pred - target
    if kind == "L2":
        per = ad.square(err)
    elif kind.lower() == "huber":
        a = ad.absolute(err)
        quad = ad.scale(ad.square(err), 0.5)
        lin = ad.scale(ad.shift(a, -0.5 * delta), delta)
        per = ad.where_const(quad, a.value <= delta, lin)
    else:
        raise ConfigurationError(f"unknown direct loss {kind!r}")
    return ad.mean_all(ad.sum_cols(per))


def gaussian_nll_node(mu: Node, log_var: Node, y: Node) -> Node:
    """mean_i sum_k (y - mu)^2 / sigma^2 + log sigma^2."""
    per = ad.mul(ad.square(y - mu), ad.exp(ad.neg(log_var))) + log_var
    return ad.mean_all(ad.sum_cols(per))


def laplace_nll_node(mu: Node, log_beta: Node, y: Node) -> Node:
    """mean_i sum_k |y - mu| / beta + log beta."""
    per = ad.mul(ad.absolute(y - mu), ad.exp(ad.neg(log_beta))) + log_beta
    return ad.mean_all(ad.sum_cols(per))


def laplace_mv_nll_node(mu: Node, log_beta: Node, y: Node) -> Node:
    """mean_i sqrt(sum_k (y_k - mu_k)^2 / beta_k) + sum_k log beta_k."""
    quad = ad.sum_cols(ad.mul(ad.square(y - mu), ad.exp(ad.neg(log_beta))))
    return ad.mean_all(ad.sqrt(quad) + ad.sum_cols(log_beta))


def mdn_nll_node(log_weights: Node, mus: Node, log_vars: Node, y: Node) -> Node:
    """mean_i -log sum_k w_k N(y_i; mu_k, sigma_k^2); all inputs (n, K), y (n, K) tiled."""
    comp = ad.shift(ad.scale(ad.mul(ad.square(y - mus), ad.exp(ad.neg(log_vars))) + log_vars, -0.5),
                    -0.5 * LOG_2PI)
    return ad.neg(ad.mean_all(ad.logsumexp_rows(log_weights + comp)))


def log_softmax_node(logits: Node) -> Node:
    return logits - _row_broadcast(ad.logsumexp_rows(logits), logits.shape[1])


def softmax_losses_node(logits: Node, y: np.ndarray, values: np.ndarray):
    """(J_CE, J_L2, J_Var) for logits (n, C) and scalar targets y (n,)."""
    values = np.asarray(values, dtype=np.float64)
    g = logits.graph
    n, C = logits.shape
    target = nearest_class(y, values)
    onehot = np.zeros((n, C))
    onehot[np.arange(n), target] = 1.0
    logp = log_softmax_node(logits)
    ce = ad.neg(ad.mean_all(ad.sum_cols(ad.mul(logp, g.const(onehot)))))
    p = ad.exp(logp)
    vals = g.const(np.broadcast_to(values, (n, C)))
    mean = ad.sum_cols(ad.mul(p, vals))
    l2 = ad.mean_all(ad.square(mean - g.const(np.asarray(y, dtype=np.float64))))
    dev = vals - _row_broadcast(mean, C)
    var = ad.mean_all(ad.sum_cols(ad.mul(p, ad.square(dev))))
    return ce, l2, var


def nearest_class(y, values) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    values = np.asarray(values, dtype=np.float64)
    return np.argmin(np.abs(y[:, None] - values[None, :]), axis=1)


# -- array-level losses ------------------------------------------------------

def direct_loss(pred, target, kind: str = "L2", delta: float = 1.0) -> float:
    g = Graph()
    return float(direct_loss_node(g.const(_2d(pred)), g.const(_2d(target)), kind, delta).value)


def gaussian_nll_loss(mu, log_var, y) -> float:
    g = Graph()
    return float(gaussian_nll_node(g.const(_2d(mu)), g.const(_2d(log_var)), g.const(_2d(y))).value)


def laplace_nll_loss(mu, log_beta, y, multivariate: bool = False) -> float:
    g = Graph()
    fn = laplace_mv_nll_node if multivariate else laplace_nll_node
    return float(fn(g.const(_2d(mu)), g.const(_2d(log_beta)), g.const(_2d(y))).value)


def mdn_nll_loss(weights, mus, log_vars, y) -> float:
    """Mixture NLL with probabilities ``weights`` (n, K); 1D targets."""
    weights = _2d(weights)
    mus, log_vars = _2d(mus), _2d(log_vars)
    y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
    K = weights.shape[1]
    g = Graph()
    return float(mdn_nll_node(g.const(np.log(weights)), g.const(mus), g.const(log_vars),
                              g.const(np.repeat(y, K, axis=1))).value)


def softmax_losses(logits, y, values) -> tuple[float, float, float, float]:
    """Return (J_CE, J_L2, J_Var, J) with J = J_CE + 0.1 J_L2 + 0.05 J_Var."""
    g = Graph()
    ce, l2, var = softmax_losses_node(g.const(_2d(logits)), y, values)
    ce, l2, var = float(ce.value), float(l2.value), float(var.value)
    return ce, l2, var, ce + SOFTMAX_L2_WEIGHT * l2 + SOFTMAX_VAR_WEIGHT * var


def softmax_predict(logits, values) -> np.ndarray:
    """Softmax expected value over the last axis."""
    p = np.exp(log_softmax(np.asarray(logits, dtype=np.float64), axis=-1))
    return p @ np.asarray(values, dtype=np.float64)


# -- models ------------------------------------------------------------------

class HeadModel:
    """Shared backbone followed by named output heads."""

    kind = "base"

    def __init__(self, backbone: Mlp, heads: dict[str, Mlp], **meta):
        self.backbone = backbone
        self.heads = heads
        self.meta = meta

    @staticmethod
    def _build(rng, x_dim, out_dims: dict, backbone_dims=(10, 10), head_dims=(10, 10),
               activation="relu", softplus_beta=1.0, zero_heads=()):
        backbone = Mlp.create([x_dim, *backbone_dims], rng, activation, activation, softplus_beta)
        heads = {}
        for name, out in out_dims.items():
            heads[name] = Mlp.create([backbone_dims[-1], *head_dims, out], rng, activation,
                                     beta=softplus_beta)
            if name in zero_heads:
                heads[name].layers[-1].weights[:] = 0.0
                heads[name].layers[-1].bias[:] = 0.0
        return backbone, heads

    @property
    def x_dim(self) -> int:
        return self.backbone.in_dim

    def parameters(self) -> list[np.ndarray]:
        out = self.backbone.parameters()
        for name in sorted(self.heads):
            out += self.heads[name].parameters()
        return out

    def outputs(self, graph: Graph, X) -> dict[str, Node]:
        X = _2d(X)
        if X.shape[1] != self.x_dim:
            raise ConfigurationError(f"expected inputs of width {self.x_dim}, got {X.shape}")
        feat = self.backbone.apply(graph, graph.const(X))
        return {name: head.apply(graph, feat) for name, head in self.heads.items()}

    def output_values(self, X) -> dict[str, np.ndarray]:
        return {k: v.value for k, v in self.outputs(Graph(), X).items()}

    def loss(self, graph: Graph, X, Y) -> Node:
        raise NotImplementedError

    def predict(self, X) -> np.ndarray:
        raise NotImplementedError

    def log_pdf(self, X, Y) -> np.ndarray:
        """True log-density log p(y_i | x_i), shape (n,)."""
        raise NotImplementedError

    def log_density_grid(self, xs, grid: YGrid) -> np.ndarray:
        xs = _2d(xs)
        pts = grid.points()
        out = np.empty((xs.shape[0], pts.shape[0]))
        for i, x in enumerate(xs):
            out[i] = self.log_pdf(np.repeat(x[None], pts.shape[0], axis=0), pts)
        return out

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "meta": self.meta,
            "backbone": self.backbone.to_dict(),
            "heads": {k: v.to_dict() for k, v in sorted(self.heads.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HeadModel":
        heads = {k: Mlp.from_dict(v) for k, v in d["heads"].items()}
        return cls(Mlp.from_dict(d["backbone"]), heads, **d.get("meta", {}))


class DirectModel(HeadModel):
    kind = "direct"

    @classmethod
    def create(cls, rng, x_dim=1, y_dim=1, loss="L2", delta=1.0, **arch):
        bb, heads = cls._build(rng, x_dim, {"out": y_dim}, **arch)
        return cls(bb, heads, loss=loss, delta=delta)

    def loss(self, graph, X, Y):
        out = self.outputs(graph, X)["out"]
        return direct_loss_node(out, graph.const(_2d(Y)), self.meta.get("loss", "L2"),
                                self.meta.get("delta", 1.0))

    def predict(self, X):
        return self.output_values(X)["out"]

    def log_pdf(self, X, Y):
        # fixed unit-variance Gaussian around the prediction
        r = _2d(Y) - self.predict(X)
        return np.sum(-0.5 * (LOG_2PI + r * r), axis=1)


class GaussianModel(HeadModel):
    """Mean and log-variance heads; log-variance starts at 0 (unit variance)."""

    kind = "gaussian"

    @classmethod
    def create(cls, rng, x_dim=1, y_dim=1, **arch):
        bb, heads = cls._build(rng, x_dim, {"mu": y_dim, "log_var": y_dim},
                               zero_heads=("log_var",), **arch)
        return cls(bb, heads)

    def loss(self, graph, X, Y):
        o = self.outputs(graph, X)
        return gaussian_nll_node(o["mu"], o["log_var"], graph.const(_2d(Y)))

    def predict(self, X):
        return self.output_values(X)["mu"]

    def log_pdf(self, X, Y):
        o = self.output_values(X)
        lv = o["log_var"]
        return np.sum(-0.5 * (LOG_2PI + lv + (_2d(Y) - o["mu"]) ** 2 * np.exp(-lv)), axis=1)


class LaplaceModel(HeadModel):
    """Mean and log-scale heads; ``multivariate`` selects the joint norm form."""

    kind = "laplace"

    @classmethod
    def create(cls, rng, x_dim=1, y_dim=1, multivariate=False, **arch):
        bb, heads = cls._build(rng, x_dim, {"mu": y_dim, "log_beta": y_dim},
                               zero_heads=("log_beta",), **arch)
        return cls(bb, heads, multivariate=bool(multivariate))

    def loss(self, graph, X, Y):
        o = self.outputs(graph, X)
        fn = laplace_mv_nll_node if self.meta.get("multivariate") else laplace_nll_node
        return fn(o["mu"], o["log_beta"], graph.const(_2d(Y)))

    def predict(self, X):
        return self.output_values(X)["mu"]

    def log_pdf(self, X, Y):
        o = self.output_values(X)
        lb = o["log_beta"]
        r = _2d(Y) - o["mu"]
        if not self.meta.get("multivariate"):
            return np.sum(-math.log(2.0) - lb - np.abs(r) * np.exp(-lb), axis=1)
        # density prod_k beta_k^{-1/2} exp(-0.5 * sqrt(sum_k r_k^2 / beta_k)), normalised
        # numerically only for d = 1, where it is a Laplace with scale 2*sqrt(beta)
        d = r.shape[1]
        if d != 1:
            raise ConfigurationError("multivariate Laplace log-density is only normalised for d=1")
        scale = 2.0 * np.exp(0.5 * lb)
        return np.sum(-np.log(2.0 * scale) - np.abs(r) / scale, axis=1)


class MdnModel(HeadModel):
    """K-component Gaussian mixture for 1D targets; prediction is the mixture mean."""

    kind = "mdn"

    @classmethod
    def create(cls, rng, x_dim=1, K=2, **arch):
        bb, heads = cls._build(rng, x_dim, {"mu": K, "log_var": K, "logits": K},
                               zero_heads=("log_var",), **arch)
        return cls(bb, heads, K=K)

    def loss(self, graph, X, Y):
        o = self.outputs(graph, X)
        K = self.meta["K"]
        y = np.repeat(_2d(Y)[:, :1], K, axis=1)
        return mdn_nll_node(log_softmax_node(o["logits"]), o["mu"], o["log_var"], graph.const(y))

    def mixture(self, X):
        o = self.output_values(X)
        return np.exp(log_softmax(o["logits"], axis=1)), o["mu"], o["log_var"]

    def predict(self, X):
        w, mu, _ = self.mixture(X)
        return np.sum(w * mu, axis=1, keepdims=True)

    def log_pdf(self, X, Y):
        o = self.output_values(X)
        lw = log_softmax(o["logits"], axis=1)
        y = _2d(Y)[:, :1]
        lv = o["log_var"]
        comp = -0.5 * (LOG_2PI + lv + (y - o["mu"]) ** 2 * np.exp(-lv))
        return logsumexp(lw + comp, axis=1)


class SoftmaxModel(HeadModel):
    """Regression by classification over a fixed table of class values."""

    kind = "softmax"

    @classmethod
    def create(cls, rng, values: Sequence[float], x_dim=1, y_dim=1, use_var=True, **arch):
        values = [float(v) for v in values]
        bb, heads = cls._build(rng, x_dim, {f"logits_{k}": len(values) for k in range(y_dim)}, **arch)
        return cls(bb, heads, values=values, y_dim=y_dim, use_var=bool(use_var))

    @property
    def values(self) -> np.ndarray:
        return np.asarray(self.meta["values"])

    def loss(self, graph, X, Y):
        o = self.outputs(graph, X)
        Y = _2d(Y)
        total = None
        for k in range(self.meta["y_dim"]):
            ce, l2, var = softmax_losses_node(o[f"logits_{k}"], Y[:, k], self.values)
            j = ce + ad.scale(l2, SOFTMAX_L2_WEIGHT)
            if self.meta.get("use_var", True):
                j = j + ad.scale(var, SOFTMAX_VAR_WEIGHT)
            total = j if total is None else total + j
        return total

    def predict(self, X):
        o = self.output_values(X)
        return np.stack([softmax_predict(o[f"logits_{k}"], self.values)
                         for k in range(self.meta["y_dim"])], axis=1)

    def log_pdf(self, X, Y):
        # piecewise-constant density: class probability spread over its bin,
        # zero beyond half a bin outside the class table
        o = self.output_values(X)
        Y = _2d(Y)
        v = self.values
        spacing = float(np.min(np.diff(v))) if len(v) > 1 else 1.0
        out = np.zeros(Y.shape[0])
        for k in range(self.meta["y_dim"]):
            lp = log_softmax(o[f"logits_{k}"], axis=1)
            idx = nearest_class(Y[:, k], v)
            inside = (Y[:, k] >= v[0] - 0.5 * spacing) & (Y[:, k] <= v[-1] + 0.5 * spacing)
            out += np.where(inside, lp[np.arange(Y.shape[0]), idx] - math.log(spacing), -np.inf)
        return out


MODEL_KINDS = {
    cls.kind: cls for cls in (DirectModel, GaussianModel, LaplaceModel, MdnModel, SoftmaxModel)
}


def model_from_dict(d: dict) -> HeadModel:
    try:
        cls = MODEL_KINDS[d["kind"]]
    except KeyError:
        raise ConfigurationError(f"unknown baseline kind {d.get('kind')!r}") from None
    return cls.from_dict(d)


# -- training and refinement -------------------------------------------------

def fit_baseline(model: HeadModel, X, Y, *, epochs: int = 75, batch_size: int = 32,
                 lr: float = 1e-3, betas=(0.9, 0.999), data_rng: np.random.Generator,
                 on_epoch=None) -> list[float]:
    """Train in place with ADAM on the model's loss; returns per-epoch mean loss."""
    X, Y = _2d(X), _2d(Y)
    params = model.parameters()
    opt = ad.Adam(params, lr=lr, betas=betas)
    history = []
    for epoch in range(epochs):
        total, count = 0.0, 0
        for idx in iterate_minibatches(X.shape[0], batch_size, data_rng):
            g = Graph()
            J = model.loss(g, X[idx], Y[idx])
            if not np.isfinite(J.value):
                raise TrainingError(f"epoch {epoch}: non-finite {model.kind} loss")
            g.backward(J)
            opt.step([g.param_grad(p) for p in params])
            total += float(J.value) * len(idx)
            count += len(idx)
        history.append(total / count)
        if on_epoch is not None:
            on_epoch(epoch, history[-1], model)
    return history


def refine_baseline(energy_model, X, y_hat, cfg: RefineConfig) -> np.ndarray:
    """Refine baseline point predictions y_hat (n, dy) by gradient ascent on the energy."""
    X = _2d(X)
    y_hat = _2d(y_hat)
    Y, _, _ = refine_block(energy_model, X, y_hat[:, None, :], cfg)
    return Y[:, 0, :]
