"""Matérn-5/2 kernel and exact zero-mean GP formulas (float64 numpy)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.spatial.distance import cdist

from pfbo.tensor import cholesky, cholesky_solve

SQRT5 = math.sqrt(5.0)


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class GPHyperparams:
    """Isotropic Matérn-5/2 hyperparameters.

    ``outputscale`` is the prior variance ``k(x, x)``; ``noise`` is the
    observation-noise variance.
    """

    lengthscale: float
    outputscale: float
    noise: float = 0.0

    def __post_init__(self):
        if not self.lengthscale > 0:
            raise ParameterError(f"lengthscale must be positive, got {self.lengthscale}")
        if not self.outputscale > 0:
            raise ParameterError(f"outputscale must be positive, got {self.outputscale}")
        if not self.noise >= 0:
            raise ParameterError(f"noise must be non-negative, got {self.noise}")

    def as_log(self) -> np.ndarray:
        return np.log([self.lengthscale, self.outputscale, max(self.noise, 1e-300)])

    @classmethod
    def from_log(cls, v) -> "GPHyperparams":
        return cls(*(float(t) for t in np.exp(v)))


@dataclass(frozen=True)
class GPPosterior:
    mean: np.ndarray
    var: np.ndarray


def _as_points(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    return x


def distances(x: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Pairwise Euclidean distances between the rows of ``x`` and ``z``."""
    return cdist(x, z)


def matern52_r(r, theta: GPHyperparams):
    s = SQRT5 * np.asarray(r, dtype=np.float64) / theta.lengthscale
    return theta.outputscale * (1.0 + s + s * s / 3.0) * np.exp(-s)


def matern52(x, z, theta: GPHyperparams) -> float:
    """Kernel value between two points."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    z = np.atleast_1d(np.asarray(z, dtype=np.float64))
    if x.shape != z.shape:
        raise ValueError(f"points live in different spaces: {x.shape} vs {z.shape}")
    return float(matern52_r(np.linalg.norm(x - z), theta))


def gram(x, z, theta: GPHyperparams) -> np.ndarray:
    x, z = _as_points(x), _as_points(z)
    if x.shape[1] != z.shape[1]:
        raise ValueError(f"dimension mismatch {x.shape[1]} vs {z.shape[1]}")
    return matern52_r(distances(x, z), theta)


def posterior(x_obs, y_obs, theta: GPHyperparams, x_query, include_noise: bool = False) -> GPPosterior:
    """Exact conditional of the latent function (optionally plus noise)."""
    xq = _as_points(x_query)
    y = np.asarray(y_obs, dtype=np.float64).reshape(-1)
    c = theta.outputscale
    extra = theta.noise if include_noise else 0.0
    if y.size == 0:
        return GPPosterior(np.zeros(len(xq)), np.full(len(xq), c + extra))
    xo = _as_points(x_obs)
    k = gram(xo, xo, theta) + theta.noise * np.eye(len(xo))
    chol = cholesky(k)
    ks = gram(xo, xq, theta)
    mean = ks.T @ cholesky_solve(chol, y)
    v = scipy.linalg.solve_triangular(chol, ks, lower=True, check_finite=False)
    var = np.maximum(c - np.sum(v * v, axis=0), 1e-15)
    return GPPosterior(mean, var + extra)


def sample_prior(x, theta: GPHyperparams, seed) -> np.ndarray:
    """One draw from ``N(0, K + noise * I)`` at the rows of ``x``."""
    x = _as_points(x)
    if len(x) < 1:
        raise ValueError("need at least one input point")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    k = gram(x, x, theta) + theta.noise * np.eye(len(x))
    chol = cholesky(k)
    return chol @ rng.standard_normal(len(x))


def log_marginal_likelihood(x, y, theta: GPHyperparams, return_grad: bool = False):
    """Gaussian log evidence of ``y``; optionally its gradient with respect to
    ``(log lengthscale, log outputscale, log noise)``.
    """
    x = _as_points(x)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n = y.size
    if n < 1:
        raise ValueError("log marginal likelihood needs at least one observation")
    r = distances(x, x)
    kf = matern52_r(r, theta)
    k = kf + theta.noise * np.eye(n)
    chol = cholesky(k)
    alpha = cholesky_solve(chol, y)
    lml = -0.5 * y @ alpha - np.sum(np.log(np.diag(chol))) - 0.5 * n * math.log(2 * math.pi)
    if not return_grad:
        return float(lml)
    kinv = cholesky_solve(chol, np.eye(n))
    w = np.outer(alpha, alpha) - kinv
    s = SQRT5 * r / theta.lengthscale
    dk_dlogl = theta.outputscale * np.exp(-s) * s * s * (1.0 + s) / 3.0
    grad = 0.5 * np.array([
        np.sum(w * dk_dlogl),
        np.sum(w * kf),
        theta.noise * np.trace(w),
    ])
    return float(lml), grad


def kernel_constants(theta: GPHyperparams, d: int, n_grid: int = 2001) -> dict:
    """Empirical constants of the kernel on the unit cube ``[0, 1]^d``.

    ``B`` bounds the gradient norm ``|dk/dr|`` (finite differences on a radial
    grid), ``b`` is the smallest kernel value over the cube's diameter ``R``
    and ``c`` is ``k(x, x)``.
    """
    diameter = math.sqrt(d)
    r = np.linspace(0.0, diameter, n_grid)
    h = 1e-6
    slope = (matern52_r(r + h, theta) - matern52_r(np.maximum(r - h, 0.0), theta)) / (
        (r + h) - np.maximum(r - h, 0.0)
    )
    return {
        "B": float(np.max(np.abs(slope))),
        "b": float(matern52_r(diameter, theta)),
        "c": theta.outputscale,
        "R": diameter,
    }
