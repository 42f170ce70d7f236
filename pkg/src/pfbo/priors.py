"""Synthetic training data from a hyper-GP dataset prior, and obs/pred splits."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from pfbo.gp import GPHyperparams, sample_prior

DUMP_MAGIC = b"PFDS"
DUMP_VERSION = 1


@dataclass(frozen=True)
class HyperPrior:
    """Log-uniform ranges for the kernel hyperparameters."""

    lengthscale: tuple[float, float]
    outputscale: tuple[float, float]
    noise: tuple[float, float]

    def __post_init__(self):
        for name in ("lengthscale", "outputscale", "noise"):
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ValueError(f"{name} range must satisfy 0 < lo <= hi, got {(lo, hi)}")

    @classmethod
    def default(cls, d: int) -> "HyperPrior":
        s = math.sqrt(d)
        return cls(lengthscale=(0.05 * s, 1.0 * s), outputscale=(0.25, 4.0), noise=(1e-4, 1e-2))

    def sample(self, rng: np.random.Generator) -> GPHyperparams:
        def draw(lo, hi):
            return float(math.exp(rng.uniform(math.log(lo), math.log(hi))))

        return GPHyperparams(draw(*self.lengthscale), draw(*self.outputscale), draw(*self.noise))

    def describe(self) -> str:
        return ";".join(
            f"{k}={lo!r}:{hi!r}"
            for k, (lo, hi) in (("lengthscale", self.lengthscale), ("outputscale", self.outputscale), ("noise", self.noise))
        )

    @classmethod
    def parse(cls, text: str) -> "HyperPrior":
        parts = dict(item.split("=") for item in text.split(";"))
        ranges = {k: tuple(float(v) for v in parts[k].split(":")) for k in ("lengthscale", "outputscale", "noise")}
        return cls(**ranges)


@dataclass(frozen=True)
class SyntheticDataset:
    X: np.ndarray
    y: np.ndarray
    theta: GPHyperparams | None = None
    obs_index: np.ndarray | None = None
    pred_index: np.ndarray | None = None

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def is_split(self) -> bool:
        return self.obs_index is not None

    def _need_split(self):
        if not self.is_split:
            raise ValueError("dataset has not been split")

    @property
    def x_obs(self):
        self._need_split()
        return self.X[self.obs_index]

    @property
    def y_obs(self):
        self._need_split()
        return self.y[self.obs_index]

    @property
    def x_pred(self):
        self._need_split()
        return self.X[self.pred_index]

    @property
    def y_pred(self):
        self._need_split()
        return self.y[self.pred_index]


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def sample_dataset(d: int, n: int, hp: HyperPrior, seed) -> SyntheticDataset:
    """Uniform inputs on the unit cube with targets from one GP instance."""
    if n < 2:
        raise ValueError("a dataset needs N >= 2 points")
    rng = _rng(seed)
    theta = hp.sample(rng)
    x = rng.uniform(0.0, 1.0, size=(n, d))
    y = sample_prior(x, theta, rng)
    return SyntheticDataset(x, y, theta)


def _with_obs(ds: SyntheticDataset, obs: np.ndarray) -> SyntheticDataset:
    mask = np.zeros(ds.n, dtype=bool)
    mask[obs] = True
    return replace(ds, obs_index=np.flatnonzero(mask), pred_index=np.flatnonzero(~mask))


def draw_n_obs(n: int, rng: np.random.Generator) -> int:
    return int(rng.integers(1, n))


def split_uniform(ds: SyntheticDataset, ratio: float | None = None, seed=None) -> SyntheticDataset:
    """Uniformly random obs/pred partition.

    With ``ratio=None`` the obs count is drawn uniformly from ``[1, N-1]``.
    """
    if ds.n < 2:
        raise ValueError("cannot split fewer than two points")
    rng = _rng(seed)
    if ratio is None:
        n_obs = draw_n_obs(ds.n, rng)
    else:
        if not 0 < ratio < 1:
            raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
        n_obs = min(max(int(round(ratio * ds.n)), 1), ds.n - 1)
    return _with_obs(ds, rng.permutation(ds.n)[:n_obs])


def split_softmax(ds: SyntheticDataset, n_obs: int | None = None, seed=None) -> SyntheticDataset:
    """Draw the observed set without replacement with weights ``softmax(y)``.

    Successive weighted draws are realised with the Gumbel-top-k trick on the
    log-weights ``y``, which keeps the result exact for large targets.  Equal
    targets give a uniform split.
    """
    if ds.n < 2:
        raise ValueError("cannot split fewer than two points")
    rng = _rng(seed)
    if n_obs is None:
        n_obs = draw_n_obs(ds.n, rng)
    if not 1 <= n_obs <= ds.n - 1:
        raise ValueError(f"n_obs must lie in [1, {ds.n - 1}], got {n_obs}")
    keys = ds.y + rng.gumbel(size=ds.n)
    obs = np.argsort(-keys, kind="stable")[:n_obs]
    return _with_obs(ds, obs)


def split(ds: SyntheticDataset, scheme: str, n_obs: int | None = None, seed=None) -> SyntheticDataset:
    if scheme == "uniform":
        rng = _rng(seed)
        if n_obs is None:
            return split_uniform(ds, None, rng)
        return _with_obs(ds, rng.permutation(ds.n)[:n_obs])
    if scheme == "softmax":
        return split_softmax(ds, n_obs, seed)
    raise ValueError(f"unknown split scheme {scheme!r}")


def dump_batch(path, datasets: list[SyntheticDataset]) -> None:
    """Write datasets sharing ``(N, d)`` to one little-endian f64 file.

    Layout: 16-byte header (magic, version, N, d as uint32), then per dataset
    ``d + 2`` columns of N values each: inputs, target, split flag (1 = obs,
    0 = pred, -1 = unsplit).
    """
    if not datasets:
        raise ValueError("nothing to dump")
    n, d = datasets[0].n, datasets[0].d
    with open(path, "wb") as fh:
        fh.write(DUMP_MAGIC + struct.pack("<III", DUMP_VERSION, n, d))
        for ds in datasets:
            if (ds.n, ds.d) != (n, d):
                raise ValueError("all datasets in a batch must share N and d")
            flag = np.full(n, -1.0)
            if ds.is_split:
                flag[:] = 0.0
                flag[ds.obs_index] = 1.0
            cols = np.concatenate([ds.X.T, ds.y[None, :], flag[None, :]], axis=0)
            fh.write(np.ascontiguousarray(cols, dtype="<f8").tobytes())


def load_batch(path) -> list[SyntheticDataset]:
    raw = Path(path).read_bytes()
    if raw[:4] != DUMP_MAGIC:
        raise ValueError("not a dataset dump")
    version, n, d = struct.unpack("<III", raw[4:16])
    if version != DUMP_VERSION:
        raise ValueError(f"unsupported dump version {version}")
    block = (d + 2) * n
    data = np.frombuffer(raw[16:], dtype="<f8")
    if data.size % block:
        raise ValueError("truncated dataset dump")
    out = []
    for cols in data.reshape(-1, d + 2, n):
        flag = cols[d + 1]
        ds = SyntheticDataset(cols[:d].T.astype(np.float64), cols[d].astype(np.float64))
        if np.all(flag >= 0):
            ds = replace(ds, obs_index=np.flatnonzero(flag == 1.0), pred_index=np.flatnonzero(flag == 0.0))
        out.append(ds)
    return out
