"""Exact-GP baseline: type-II maximum likelihood fit and Gaussian EI."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize
from scipy.special import ndtr

from pfbo import gp
from pfbo.gp import GPHyperparams, GPPosterior
from pfbo.tensor import CholeskyError, cholesky, cholesky_solve

# log-space box for (lengthscale, outputscale, noise)
LOG_BOUNDS = np.log(np.array([[1e-3, 10.0], [1e-3, 100.0], [1e-6, 1.0]]))
# random restarts are drawn from a narrower, typical region inside the box
_INIT_BOUNDS = np.log(np.array([[0.05, 1.0], [0.3, 3.0], [1e-5, 1e-2]]))


class FitError(RuntimeError):
    pass


@dataclass
class GPModel:
    theta: GPHyperparams
    X: np.ndarray
    y: np.ndarray
    y_loc: float
    y_scale: float
    chol: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    log_evidence: float
    restarts_used: int

    def predict(self, x_query) -> GPPosterior:
        """Latent posterior in the original target units."""
        xq = np.asarray(x_query, dtype=np.float64).reshape(-1, self.X.shape[1])
        ks = gp.gram(self.X, xq, self.theta)
        mean = ks.T @ self.alpha
        v = scipy.linalg.solve_triangular(self.chol, ks, lower=True, check_finite=False)
        var = np.maximum(self.theta.outputscale - np.sum(v * v, 0), 1e-15)
        return GPPosterior(self.y_loc + self.y_scale * mean, self.y_scale**2 * var)


def _neg_lml(v, x, y):
    try:
        val, grad = gp.log_marginal_likelihood(x, y, GPHyperparams.from_log(v), return_grad=True)
    except CholeskyError:
        return np.inf, np.zeros(3)
    return -val, -grad


def fit(X, y, restarts: int = 5, seed=0, warm_start: GPHyperparams | None = None,
        normalize: bool = True, maxiter: int = 200) -> GPModel:
    """Maximise the log marginal likelihood over log-hyperparameters.

    Multi-start L-BFGS-B with the analytic gradient; the warm start (if any)
    is one of the starts.  The best start wins, ties going to the smaller
    lengthscale.  With ``normalize`` the targets are z-scored first.
    """
    y_raw = np.asarray(y, dtype=np.float64).reshape(-1)
    if y_raw.size < 1:
        raise FitError("cannot fit a GP to zero observations")
    X = np.asarray(X, dtype=np.float64)
    X = X.reshape(len(X), -1)
    if normalize:
        loc = float(y_raw.mean())
        scale = float(y_raw.std()) if y_raw.size > 1 and y_raw.std() > 0 else 1.0
    else:
        loc, scale = 0.0, 1.0
    yz = (y_raw - loc) / scale

    rng = np.random.default_rng(seed)
    starts = []
    if warm_start is not None:
        starts.append(np.clip(warm_start.as_log(), LOG_BOUNDS[:, 0], LOG_BOUNDS[:, 1]))
    while len(starts) < max(restarts, 1):
        starts.append(rng.uniform(_INIT_BOUNDS[:, 0], _INIT_BOUNDS[:, 1]))

    best = None
    for v0 in starts:
        f0, _ = _neg_lml(v0, X, yz)
        res = scipy.optimize.minimize(
            _neg_lml, v0, args=(X, yz), jac=True, method="L-BFGS-B",
            bounds=LOG_BOUNDS, options={"maxiter": maxiter},
        )
        cand = [(f0, v0)] + ([(float(res.fun), res.x)] if np.isfinite(res.fun) else [])
        for f, v in cand:
            if not np.isfinite(f):
                continue
            key = (round(f, 12), v[0])
            if best is None or key < best[0]:
                best = (key, f, np.array(v))
    if best is None:
        raise FitError("every restart failed to factorise the covariance")
    theta = GPHyperparams.from_log(best[2])
    k = gp.gram(X, X, theta) + theta.noise * np.eye(len(X))
    chol = cholesky(k)
    return GPModel(theta, X, yz, loc, scale, chol, cholesky_solve(chol, yz), -best[1], len(starts))


def predict(model: GPModel, x_query) -> GPPosterior:
    return model.predict(x_query)


def gaussian_ei(mu, var, f_best):
    """Expected improvement below ``f_best`` under ``N(mu, var)``."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.sqrt(np.maximum(np.asarray(var, dtype=np.float64), 0.0))
    gain = f_best - mu
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sigma > 0, gain / np.where(sigma > 0, sigma, 1.0), 0.0)
    pdf = np.exp(-0.5 * z * z) / np.sqrt(2 * np.pi)
    ei = np.where(sigma > 0, sigma * (z * ndtr(z) + pdf), np.maximum(gain, 0.0))
    ei = np.maximum(ei, 0.0)
    return float(ei) if ei.ndim == 0 else ei
