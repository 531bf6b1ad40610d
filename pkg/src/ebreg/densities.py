"""Closed-form densities, the Gaussian-mixture proposal and the 1D ground truth.

All log-densities are vectorised over the leading axis of ``y``.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate
from scipy.special import logsumexp

from .errors import ConfigurationError, ContractError

LOG_2PI = math.log(2.0 * math.pi)
RNG_ALGORITHM = "PCG64"


# -- random streams ---------------------------------------------------------

def make_rng(seed: int, stream: str | None = None) -> np.random.Generator:
    """PCG64 generator for ``seed``, optionally split into a named substream.

    Substreams are keyed by a CRC32 of the name so they are stable across
    processes and platforms.
    """
    if stream is None:
        return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    key = zlib.crc32(stream.encode("utf-8"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(key,))))


# -- scalar families --------------------------------------------------------

def gaussian_log_pdf(y, mu, var):
    """log N(y; mu, var), elementwise."""
    var = np.asarray(var, dtype=np.float64)
    if np.any(var <= 0):
        raise ContractError("Gaussian variance must be positive")
    y = np.asarray(y, dtype=np.float64)
    return -0.5 * (LOG_2PI + np.log(var)) - 0.5 * (y - mu) ** 2 / var


def laplace_log_pdf(y, mu, beta):
    beta = np.asarray(beta, dtype=np.float64)
    if np.any(beta <= 0):
        raise ContractError("Laplace scale must be positive")
    y = np.asarray(y, dtype=np.float64)
    return -np.log(2.0 * beta) - np.abs(y - mu) / beta


def lognormal_log_pdf(y, mu, sigma):
    """Log-normal log-density; -inf for y <= 0."""
    if np.any(np.asarray(sigma) <= 0):
        raise ContractError("log-normal sigma must be positive")
    y = np.asarray(y, dtype=np.float64)
    pos = y > 0
    safe = np.where(pos, y, 1.0)
    ly = np.log(safe)
    out = -ly - math.log(sigma) - 0.5 * LOG_2PI - 0.5 * (ly - mu) ** 2 / sigma**2
    return np.where(pos, out, -np.inf)


def mixture_log_pdf(y, weights, means, stds):
    """1D Gaussian mixture log-density, log-sum-exp over components."""
    y = np.asarray(y, dtype=np.float64)[..., None]
    w = np.asarray(weights, dtype=np.float64)
    comp = gaussian_log_pdf(y, np.asarray(means), np.asarray(stds) ** 2)
    return logsumexp(comp + np.log(w), axis=-1)


# -- proposal ---------------------------------------------------------------

@dataclass(frozen=True)
class Proposal:
    """Equally weighted isotropic Gaussian mixture centred on a target."""

    sigmas: tuple[float, ...]
    dim: int = 1

    def __post_init__(self):
        object.__setattr__(self, "sigmas", tuple(float(s) for s in self.sigmas))
        if len(self.sigmas) < 1:
            raise ConfigurationError("proposal needs at least one component")
        if any(not (s > 0) for s in self.sigmas):
            raise ConfigurationError(f"proposal std devs must be positive, got {self.sigmas}")
        if self.dim < 1:
            raise ConfigurationError("proposal dimension must be >= 1")

    @property
    def L(self) -> int:
        return len(self.sigmas)

    def to_dict(self) -> dict:
        return {"sigmas": list(self.sigmas), "dim": self.dim}

    @classmethod
    def from_dict(cls, d: dict) -> "Proposal":
        return cls(tuple(d["sigmas"]), int(d.get("dim", 1)))


def proposal_log_density(y, center, p: Proposal):
    """log q(y | center) for one point (returns float) or a batch (..., dim)."""
    y = np.asarray(y, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    if y.shape[-1:] != (p.dim,) or center.shape[-1:] != (p.dim,):
        raise ConfigurationError(
            f"proposal of dim {p.dim} got y {y.shape} and center {center.shape}"
        )
    sq = np.sum((y - center) ** 2, axis=-1)[..., None]
    s = np.asarray(p.sigmas)
    comp = -0.5 * p.dim * (LOG_2PI + 2.0 * np.log(s)) - 0.5 * sq / s**2
    if p.L == 1:
        out = comp[..., 0]
    else:
        top = comp.max(axis=-1, keepdims=True)
        out = np.log(np.exp(comp - top).sum(axis=-1)) + top[..., 0] - math.log(p.L)
    return float(out) if np.ndim(out) == 0 else out


def sample_proposal(center, p: Proposal, M: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``M`` samples of shape (M, dim): uniform component, then sigma * eps."""
    if M < 1:
        raise ContractError("need at least one proposal sample")
    center = np.asarray(center, dtype=np.float64)
    if center.shape != (p.dim,):
        raise ConfigurationError(f"center shape {center.shape} != ({p.dim},)")
    comp = rng.integers(0, p.L, size=M)
    eps = rng.standard_normal((M, p.dim))
    return center + np.asarray(p.sigmas)[comp][:, None] * eps


def sample_proposal_batch(centers: np.ndarray, p: Proposal, M: int,
                          rng: np.random.Generator) -> np.ndarray:
    """(n, dim) centers -> (n, M, dim) samples in one vectorised draw."""
    if M < 1:
        raise ContractError("need at least one proposal sample")
    centers = np.asarray(centers, dtype=np.float64)
    n = centers.shape[0]
    comp = rng.integers(0, p.L, size=(n, M))
    eps = rng.standard_normal((n, M, p.dim))
    return centers[:, None, :] + np.asarray(p.sigmas)[comp][..., None] * eps


# -- ground truth -----------------------------------------------------------

@dataclass
class GroundTruthDensity:
    """Piecewise conditional density p(y|x) of the illustrative 1D task.

    For x < 0: two-component Gaussian mixture with weights ``mix_weights``.
    Component k has mean ``sign_k * (base_mean + wiggle * sin(pi * x / period))``
    and std ``mix_stds[k]``. For x >= 0: log-normal(``lognormal_mu``,
    ``lognormal_sigma``).

    The mixture means/stds and their x-dependence are a reconstruction;
    only the weights and the log-normal parameters are fixed by the task.
    """

    mix_weights: tuple[float, float] = (0.2, 0.8)
    mix_signs: tuple[float, float] = (-1.0, 1.0)
    base_mean: float = 1.5
    wiggle: float = 0.5
    period: float = 3.0
    mix_stds: tuple[float, float] = (0.35, 0.35)
    lognormal_mu: float = 0.0
    lognormal_sigma: float = 0.25
    validated: bool = field(default=False, compare=False)

    def __post_init__(self):
        self.mix_weights = tuple(float(w) for w in self.mix_weights)
        self.mix_signs = tuple(float(s) for s in self.mix_signs)
        self.mix_stds = tuple(float(s) for s in self.mix_stds)
        if len(self.mix_weights) != 2 or abs(sum(self.mix_weights) - 1.0) > 1e-12:
            raise ConfigurationError("mixture weights must be two numbers summing to 1")
        if min(self.mix_stds) <= 0 or self.lognormal_sigma <= 0:
            raise ConfigurationError("ground-truth scales must be positive")

    def means(self, x):
        shift = self.base_mean + self.wiggle * np.sin(np.pi * np.asarray(x, dtype=np.float64) / self.period)
        return np.stack([s * shift for s in self.mix_signs], axis=-1)

    def log_pdf(self, x, y):
        """Elementwise log p(y|x) for broadcastable arrays x, y."""
        x, y = np.broadcast_arrays(np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64))
        neg = x < 0
        means = self.means(x)
        comp = gaussian_log_pdf(y[..., None], means, np.asarray(self.mix_stds) ** 2)
        mix = logsumexp(comp + np.log(self.mix_weights), axis=-1)
        ln = lognormal_log_pdf(y, self.lognormal_mu, self.lognormal_sigma)
        return np.where(neg, mix, ln)

    def sample(self, x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        n = x.shape[0]
        comp = (rng.uniform(size=n) >= self.mix_weights[0]).astype(int)
        eps = rng.standard_normal(n)
        means = self.means(x)[np.arange(n), comp]
        stds = np.asarray(self.mix_stds)[comp]
        mix = means + stds * eps
        ln = np.exp(self.lognormal_mu + self.lognormal_sigma * eps)
        return np.where(x < 0, mix, ln)

    def validate(self, tol: float = 1e-6) -> "GroundTruthDensity":
        """Check by quadrature that each branch integrates to 1."""
        for x in (-2.5, -1.5, -0.5):
            mass = branch_mass(self, x)
            if abs(mass - 1.0) > tol:
                raise ConfigurationError(f"mixture branch at x={x} integrates to {mass}")
        mass = branch_mass(self, 0.5)
        if abs(mass - 1.0) > tol:
            raise ConfigurationError(f"log-normal branch integrates to {mass}")
        self.validated = True
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("validated")
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruthDensity":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def branch_mass(dens: GroundTruthDensity, x: float) -> float:
    """Quadrature mass of the branch selected by ``x``."""
    f = ground_truth_conditional(x, dens)
    pdf = lambda y: math.exp(f(y))
    if x < 0:
        lo, hi = sorted(float(m) for m in dens.means(x))
        pieces = [(-np.inf, lo), (lo, hi), (hi, np.inf)]
    else:
        mode = math.exp(dens.lognormal_mu - dens.lognormal_sigma**2)
        pieces = [(0.0, mode), (mode, np.inf)]
    return sum(integrate.quad(pdf, a, b, epsabs=1e-13, epsrel=1e-12, limit=200)[0] for a, b in pieces)


def ground_truth_conditional(x: float, dens: GroundTruthDensity) -> Callable:
    """Return ``log p(y | x)`` as a function of y for the branch selected by x."""
    x = float(x)
    if x < 0:
        means = dens.means(x)
        return lambda y: _maybe_float(mixture_log_pdf(y, dens.mix_weights, means, dens.mix_stds))
    return lambda y: _maybe_float(lognormal_log_pdf(y, dens.lognormal_mu, dens.lognormal_sigma))


def _maybe_float(v):
    return float(v) if np.ndim(v) == 0 else v
