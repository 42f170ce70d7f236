"""Bucketised ("bar-plot") output distributions.

Buckets are half-open ``[b_l, b_{l+1})`` with a uniform density inside each
bucket.  Targets outside the border range are clamped into the edge buckets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PROB_FLOOR = 1e-12


class SpecError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class RiemannSpec:
    borders: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.borders, dtype=np.float64)
        if b.ndim != 1 or b.size < 3:
            raise SpecError("need at least two buckets")
        if not np.all(np.isfinite(b)) or not np.all(np.diff(b) > 0):
            raise SpecError("borders must be finite and strictly increasing")
        object.__setattr__(self, "borders", b)

    @property
    def n_buckets(self) -> int:
        return self.borders.size - 1

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.borders)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.borders[:-1] + self.borders[1:])

    def affine(self, loc: float, scale: float) -> "RiemannSpec":
        """Spec for ``loc + scale * Y`` when this spec describes ``Y``."""
        if not scale > 0:
            raise SpecError("scale must be positive")
        return RiemannSpec(loc + scale * self.borders)

    def __eq__(self, other):
        return isinstance(other, RiemannSpec) and np.array_equal(self.borders, other.borders)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class RiemannPosterior:
    """Per-query probability rows over the buckets of ``spec``."""

    spec: RiemannSpec
    probs: np.ndarray

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.probs, dtype=np.float64))
        if p.shape[1] != self.spec.n_buckets:
            raise SpecError(f"expected {self.spec.n_buckets} bucket probabilities, got {p.shape[1]}")
        if np.any(p < 0) or not np.allclose(p.sum(1), 1.0, atol=1e-9, rtol=0):
            raise SpecError("probability rows must lie on the simplex")
        object.__setattr__(self, "probs", p)

    def __len__(self):
        return self.probs.shape[0]

    def row(self, i: int) -> "RiemannPosterior":
        return RiemannPosterior(self.spec, self.probs[i : i + 1])

    def cdf_at_borders(self) -> np.ndarray:
        """``P(Y < b_l)`` for every border, shape ``[n_query, n_buckets + 1]``."""
        c = np.cumsum(self.probs, axis=1)
        return np.concatenate([np.zeros((len(self), 1)), np.minimum(c, 1.0)], axis=1)


def build_spec(samples, n_buckets: int = 100) -> RiemannSpec:
    """Equal-mass buckets from empirical quantiles; outer borders are the
    sample extremes.  Collapsed borders are separated by at least 1e-9."""
    s = np.sort(np.asarray(samples, dtype=np.float64).reshape(-1))
    if n_buckets < 2:
        raise SpecError("need at least two buckets")
    if s.size < 10 * n_buckets:
        raise SpecError(f"need at least {10 * n_buckets} samples, got {s.size}")
    if not np.all(np.isfinite(s)):
        raise SpecError("samples must be finite")
    if s[0] == s[-1]:
        raise SpecError("all samples are identical")
    b = np.quantile(s, np.linspace(0.0, 1.0, n_buckets + 1))
    b[0], b[-1] = s[0], s[-1]
    for i in range(1, b.size):
        if b[i] < b[i - 1] + 1e-9:
            b[i] = b[i - 1] + 1e-9
    return RiemannSpec(b)


def bucket_of(spec: RiemannSpec, y):
    """Bucket index of each target, clamping out-of-range values."""
    idx = np.searchsorted(spec.borders, np.asarray(y, dtype=np.float64), side="right") - 1
    idx = np.clip(idx, 0, spec.n_buckets - 1)
    return int(idx) if np.ndim(idx) == 0 else idx


def ce_loss(post: RiemannPosterior, y_true) -> float:
    y = np.asarray(y_true, dtype=np.float64).reshape(-1)
    if y.size != len(post):
        raise ValueError(f"{len(post)} posteriors but {y.size} targets")
    p = post.probs[np.arange(y.size), bucket_of(post.spec, y)]
    return float(np.mean(-np.log(np.maximum(p, PROB_FLOOR))))


def kl(p: RiemannPosterior, q: RiemannPosterior) -> np.ndarray | float:
    """Row-wise ``KL(p || q)``, with ``0 log 0 = 0`` and ``q`` floored."""
    if p.spec != q.spec:
        raise SpecError("posteriors use different bucket specs")
    a, b = p.probs, q.probs
    if a.shape != b.shape:
        raise ValueError("posterior batches differ in size")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(a > 0, a * (np.log(np.maximum(a, PROB_FLOOR)) - np.log(np.maximum(b, PROB_FLOOR))), 0.0)
    out = np.maximum(terms.sum(1), 0.0)
    return float(out[0]) if out.size == 1 else out


def expected_improvement(post: RiemannPosterior, f_best: float):
    """``E[max(0, f_best - Y)]`` under the piecewise-uniform density."""
    lo, hi = post.spec.borders[:-1], post.spec.borders[1:]
    width = hi - lo
    below = np.where(hi <= f_best, f_best - 0.5 * (lo + hi), 0.0)
    straddle = np.where((lo < f_best) & (f_best < hi), (f_best - lo) ** 2 / (2.0 * width), 0.0)
    out = post.probs @ (below + straddle)
    return float(out[0]) if out.size == 1 else out


def mean_and_variance(post: RiemannPosterior):
    mid, w = post.spec.midpoints, post.spec.widths
    m = post.probs @ mid
    second = post.probs @ (mid**2 + w**2 / 12.0)
    v = np.maximum(second - m**2, 0.0)
    if m.size == 1:
        return float(m[0]), float(v[0])
    return m, v


def sample(post: RiemannPosterior, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draws from row 0 of ``post`` (for Monte-Carlo checks)."""
    idx = rng.choice(post.spec.n_buckets, size=n, p=post.probs[0] / post.probs[0].sum())
    lo = post.spec.borders[idx]
    return lo + rng.uniform(size=n) * post.spec.widths[idx]
