"""Numerical check that GP posteriors at nearby inputs differ by at most a
linear amount (in KL) in the input distance."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from pfbo import gp
from pfbo.gp import GPHyperparams
from pfbo.tensor import ContractError

VAR_FLOOR = 1e-6


def gaussian_kl(mu1, var1, mu2, var2):
    """``KL(N(mu1, var1) || N(mu2, var2))``, elementwise."""
    mu1, var1, mu2, var2 = (np.asarray(a, dtype=np.float64) for a in (mu1, var1, mu2, var2))
    if np.any(var1 <= 0) or np.any(var2 <= 0):
        raise ContractError("variances must be positive")
    out = 0.5 * np.log(var2 / var1) + (var1 + (mu1 - mu2) ** 2) / (2.0 * var2) - 0.5
    out = np.maximum(out, 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class LemmaConfig:
    theta: GPHyperparams = GPHyperparams(0.3, 1.0, 1e-2)
    d: int = 2
    n_obs: int = 20
    etas: tuple[float, ...] = (1e-1, 1e-2, 1e-3, 1e-4)
    trials: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.n_obs < 1 or self.d < 1 or self.trials < 1:
            raise ValueError("n_obs, d and trials must be positive")
        etas = np.asarray(self.etas, dtype=np.float64)
        if etas.size == 0 or np.any(etas <= 0) or np.any(etas > np.sqrt(self.d)):
            raise ValueError("eta values must lie in (0, sqrt(d)]")

    @property
    def radius(self) -> float:
        return float(np.sqrt(self.d))


@dataclass
class LemmaReport:
    etas: np.ndarray
    mean_kl: np.ndarray
    max_kl: np.ndarray
    median_kl: np.ndarray
    trials: np.ndarray
    zero_kl: float  # max KL at eta = 0
    slope: float  # least-squares max_kl ~ slope * eta through the origin
    c_tilde: float  # max over the grid of max_kl / eta
    rho: float  # smallest posterior variance among kept trials
    discarded: int
    constants: dict = field(default_factory=dict)

    def monotone(self, slack: float = 0.2) -> bool:
        """Shrinking eta never raises max KL by more than ``1 + slack``."""
        order = np.argsort(-self.etas)
        m = self.max_kl[order]
        return bool(np.all(m[1:] <= m[:-1] * (1.0 + slack)))

    def within_bound(self, slack: float = 0.2) -> bool:
        return bool(np.all(self.max_kl <= self.slope * self.etas * (1.0 + slack)))

    def ratio_bounded(self, factor: float = 2.0) -> bool:
        """``KL/eta`` never exceeds ``factor`` times its value at the largest eta."""
        ratio = self.median_kl / self.etas
        return bool(np.max(ratio) <= factor * ratio[np.argmax(self.etas)])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["eta", "mean_kl", "max_kl", "trials"])
            for row in zip(self.etas, self.mean_kl, self.max_kl, self.trials):
                w.writerow([repr(float(row[0])), repr(float(row[1])), repr(float(row[2])), int(row[3])])

    def summary(self) -> str:
        lines = [
            f"fitted_slope={self.slope!r}",
            f"c_tilde={self.c_tilde!r}",
            f"kl_at_zero={self.zero_kl!r}",
            f"rho={self.rho!r}",
            f"discarded={self.discarded}",
            f"monotone={self.monotone()}",
            f"within_bound={self.within_bound()}",
            f"ratio_bounded={self.ratio_bounded()}",
        ]
        lines += [f"{k}={v!r}" for k, v in sorted(self.constants.items())]
        return "\n".join(lines) + "\n"


def _direction(rng, x, d, reach):
    """Unit direction keeping ``x + reach * u`` inside the unit cube."""
    for _ in range(1000):
        u = rng.standard_normal(d)
        u /= np.linalg.norm(u)
        if np.all((x + reach * u >= 0.0) & (x + reach * u <= 1.0)):
            return u
    return None


def verify_lemma(cfg: LemmaConfig, trials: int | None = None) -> LemmaReport:
    """KL between posteriors at ``x`` and ``x + eta u`` over random datasets.

    Each trial shares its dataset, ``x`` and ``u`` across the whole eta grid.
    Trials whose posterior variance falls under ``VAR_FLOOR`` are dropped.
    """
    trials = trials or cfg.trials
    rng = np.random.default_rng(cfg.seed)
    etas = np.asarray(cfg.etas, dtype=np.float64)
    reach = float(etas.max())
    kls, zero, rho, discarded, y_max = [], 0.0, np.inf, 0, 0.0
    while len(kls) + discarded < trials:
        X = rng.uniform(0.0, 1.0, (cfg.n_obs, cfg.d))
        y = gp.sample_prior(X, cfg.theta, rng)
        x = rng.uniform(0.0, 1.0, cfg.d)
        u = _direction(rng, x, cfg.d, reach)
        if u is None:
            continue
        q = np.vstack([x, x + etas[:, None] * u])
        post = gp.posterior(X, y, cfg.theta, q)
        if post.var.min() < VAR_FLOOR:
            discarded += 1
            continue
        rho = min(rho, float(post.var.min()))
        y_max = max(y_max, float(np.abs(y).max()))
        zero = max(zero, gaussian_kl(post.mean[0], post.var[0], post.mean[0], post.var[0]))
        kls.append(gaussian_kl(post.mean[0], post.var[0], post.mean[1:], post.var[1:]))
    kls = np.array(kls).reshape(-1, len(etas))
    max_kl = kls.max(0) if len(kls) else np.full(len(etas), np.nan)
    slope = float(etas @ max_kl / (etas @ etas))
    consts = gp.kernel_constants(cfg.theta, cfg.d)
    consts.update(C=y_max, N=cfg.n_obs, noise=cfg.theta.noise)
    return LemmaReport(
        etas=etas,
        mean_kl=kls.mean(0),
        max_kl=max_kl,
        median_kl=np.median(kls, 0),
        trials=np.full(len(etas), len(kls)),
        zero_kl=float(zero),
        slope=slope,
        c_tilde=float(np.max(max_kl / etas)),
        rho=float(rho),
        discarded=discarded,
        constants=consts,
    )
