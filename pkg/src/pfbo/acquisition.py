"""Acquisition maximisation over the unit cube."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pfbo.gp_surrogate import GPModel, gaussian_ei
from pfbo.pt import PTSurrogate
from pfbo.riemann import expected_improvement

_PERTURBATION = {1: (0.25, 0.995), 2: (0.25, 0.995), 5: (0.25, 0.999), 10: (0.5, 0.998)}


@dataclass(frozen=True)
class AcqOptConfig:
    local_test_points: int = 1000
    initial_perturbation: float = 0.25
    perturbation_decay: float = 0.995
    gp_restarts: int = 10
    gp_raw_samples: int = 500
    local_fraction: float = 0.5
    max_ascent_iters: int = 100

    def __post_init__(self):
        if min(self.local_test_points, self.gp_restarts, self.gp_raw_samples, self.max_ascent_iters) < 1:
            raise ValueError("candidate, restart and iteration counts must be positive")
        if not 0 < self.perturbation_decay <= 1:
            raise ValueError("perturbation_decay must lie in (0, 1]")
        if not 0 <= self.local_fraction <= 1:
            raise ValueError("local_fraction must lie in [0, 1]")
        if self.initial_perturbation < 0:
            raise ValueError("initial_perturbation must be non-negative")

    @classmethod
    def for_dim(cls, d: int, **overrides) -> "AcqOptConfig":
        key = max([k for k in _PERTURBATION if k <= d] or [1])
        init, decay = _PERTURBATION[key]
        return cls(initial_perturbation=init, perturbation_decay=decay, **overrides)


def pt_candidates(x_obs, y_obs, cfg: AcqOptConfig, step_index: int, rng: np.random.Generator,
                  d: int) -> np.ndarray:
    """Gaussian perturbations of the incumbent mixed with uniform points."""
    n = cfg.local_test_points
    x_obs = np.asarray(x_obs, dtype=np.float64).reshape(-1, d)
    n_local = int(round(cfg.local_fraction * n)) if len(x_obs) else 0
    std = cfg.initial_perturbation * cfg.perturbation_decay**step_index
    parts = []
    if n_local:
        incumbent = x_obs[int(np.argmin(y_obs))]
        parts.append(np.clip(incumbent + std * rng.standard_normal((n_local, d)), 0.0, 1.0))
    parts.append(rng.uniform(0.0, 1.0, (n - n_local, d)))
    return np.concatenate(parts)


def maximize_pt(sur: PTSurrogate, x_obs, y_obs, f_best: float, cfg: AcqOptConfig, step_index: int,
                seed) -> tuple[np.ndarray, float]:
    """Best candidate by Riemann EI, scored with one batched forward pass."""
    rng = np.random.default_rng(seed)
    cand = pt_candidates(x_obs, y_obs, cfg, step_index, rng, sur.cfg.d)
    ei = expected_improvement(sur.predict(x_obs, y_obs, cand), f_best)
    ei = np.atleast_1d(ei)
    i = int(np.argmax(ei))
    return cand[i], float(ei[i])


def _gp_ei(model: GPModel, x, f_best):
    post = model.predict(x)
    return gaussian_ei(post.mean, post.var, f_best)


def ascend(score, x0: np.ndarray, max_iters: int = 100, h: float = 1e-6, step0: float = 0.05):
    """Box-projected hill climbing on numerical gradients, one run per row of
    ``x0`` (vectorised).  Only steps that increase the score are accepted.

    Returns final points, their scores, and the accepted score history.
    """
    x = np.array(x0, dtype=np.float64)
    n, d = x.shape
    f = score(x)
    step = np.full(n, step0)
    active = np.ones(n, dtype=bool)
    history = [f.copy()]
    eye = np.eye(d)
    for _ in range(max_iters):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        xa = x[idx]
        probes = np.concatenate([np.clip(xa[:, None, :] + h * eye, 0, 1), np.clip(xa[:, None, :] - h * eye, 0, 1)], 1)
        vals = score(probes.reshape(-1, d)).reshape(len(idx), 2 * d)
        width = (probes[:, :d, :] - probes[:, d:, :])[:, np.arange(d), np.arange(d)]
        grad = np.where(width > 0, (vals[:, :d] - vals[:, d:]) / np.maximum(width, 1e-300), 0.0)
        norm = np.linalg.norm(grad, axis=1)
        flat = norm <= 0
        active[idx[flat]] = False
        keep = ~flat
        idx, grad, norm, xa = idx[keep], grad[keep], norm[keep], xa[keep]
        if not idx.size:
            break
        trial = np.clip(xa + step[idx, None] * grad / norm[:, None], 0.0, 1.0)
        ft = score(trial)
        better = ft > f[idx]
        x[idx[better]] = trial[better]
        f[idx[better]] = ft[better]
        step[idx[better]] *= 2.0
        step[idx[~better]] *= 0.5
        active[idx[step[idx] < 1e-7]] = False
        history.append(f.copy())
    return x, f, np.array(history)


def maximize_gp(model: GPModel, f_best: float, cfg: AcqOptConfig, seed) -> tuple[np.ndarray, float]:
    """Raw-sample screening followed by local ascent from the best starts."""
    rng = np.random.default_rng(seed)
    d = model.X.shape[1]
    raw = rng.uniform(0.0, 1.0, (cfg.gp_raw_samples, d))
    raw_ei = _gp_ei(model, raw, f_best)
    order = np.argsort(-raw_ei, kind="stable")[: cfg.gp_restarts]
    x, f, _ = ascend(lambda z: _gp_ei(model, z, f_best), raw[order], cfg.max_ascent_iters)
    i = int(np.argmax(f))
    if f[i] < raw_ei[order[0]]:
        return raw[order[0]], float(raw_ei[order[0]])
    return x[i], float(f[i])
