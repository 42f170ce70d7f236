"""Probabilistic transformer surrogate: configuration, training and inference."""

from __future__ import annotations

import csv
import hashlib
import logging
import math
import tempfile
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import torch
from scipy.special import ndtr

from pfbo import tensor as T
from pfbo.gp import GPHyperparams, sample_prior
from pfbo.gp import posterior as gp_posterior
from pfbo.priors import HyperPrior, sample_dataset, split
from pfbo.riemann import (
    PROB_FLOOR,
    RiemannPosterior,
    RiemannSpec,
    bucket_of,
    build_spec,
    kl,
    mean_and_variance,
)
from pfbo.transformer import SetTransformer

log = logging.getLogger(__name__)

STD_FLOOR = 1e-6

# (split scheme, regulariser weight) per named variant
VARIANTS = {
    "pt": ("uniform", 0.0),
    "pt-r": ("uniform", 1.0),
    "pt-nu": ("softmax", 0.0),
    "pt-nur": ("softmax", 1.0),
}
VARIANT_LABELS = {"pt": "PT", "pt-r": "PT-Rε", "pt-nu": "PT-ν", "pt-nur": "PT-νRε"}

# per-dimension defaults, keyed by d
_EPS = {1: 0.05, 2: 0.05, 5: 0.5, 10: 1.0}
_FULL_BATCH = {1: 12, 2: 12, 5: 4, 10: 4}
_FULL_N = {1: 2000, 2: 2000, 5: 4500, 10: 4500}
# batch 8 leaves d >= 2 desk models stuck on the marginal-prediction plateau
_DESK_BATCH = {1: 8, 2: 16}


def _by_dim(table: dict, d: int):
    # nearest tabulated dimension at or below d
    keys = sorted(table)
    return table[max([k for k in keys if k <= d] or [keys[0]])]


class ConfigError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    def __init__(self, msg: str, dump_path: Path | None = None):
        super().__init__(msg if dump_path is None else f"{msg} (state dumped to {dump_path})")
        self.dump_path = dump_path


@dataclass(frozen=True)
class PTConfig:
    d: int = 1
    emb: int = 512
    layers: int = 6
    heads: int = 4
    ff_mult: int = 2
    n_buckets: int = 100
    eps: float = 0.05
    reg_weight: float = 0.0
    split: str = "uniform"
    lr: float = 0.003
    warmup_epochs: int = 50
    epochs: int = 400
    steps_per_epoch: int = 10
    batch_size: int = 12
    dataset_size: int = 2000
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    spec_batches: int = 10
    precision: str = "f32"

    def __post_init__(self):
        if self.d < 1:
            raise ConfigError("d must be positive")
        if self.emb % self.heads:
            raise ConfigError(f"emb={self.emb} is not divisible by heads={self.heads}")
        if self.eps < 0 or self.reg_weight < 0:
            raise ConfigError("eps and reg_weight must be non-negative")
        if self.reg_weight > 0 and not self.eps > 0:
            raise ConfigError("a regularised variant needs eps > 0")
        if self.split not in ("uniform", "softmax"):
            raise ConfigError(f"unknown split {self.split!r}")
        if self.dataset_size < 2 or self.batch_size < 1 or self.epochs < 1 or self.steps_per_epoch < 1:
            raise ConfigError("dataset_size >= 2, batch_size, epochs and steps_per_epoch >= 1 required")
        if self.warmup_epochs < 0 or self.warmup_epochs > self.epochs:
            raise ConfigError("warmup_epochs must lie in [0, epochs]")
        T.dtype_of(self.precision)

    @classmethod
    def full(cls, d: int, variant: str = "pt-nur") -> "PTConfig":
        cfg = cls(d=d, eps=_by_dim(_EPS, d), batch_size=_by_dim(_FULL_BATCH, d), dataset_size=_by_dim(_FULL_N, d))
        return cfg.with_variant(variant)

    @classmethod
    def desk(cls, d: int, variant: str = "pt-nur") -> "PTConfig":
        cfg = cls(
            d=d, emb=64, layers=3, heads=2, epochs=150, warmup_epochs=15, lr=1e-3,
            batch_size=_by_dim(_DESK_BATCH, d), dataset_size=200, eps=_by_dim(_EPS, d),
        )
        return cfg.with_variant(variant)

    def with_variant(self, variant: str) -> "PTConfig":
        try:
            scheme, weight = VARIANTS[variant]
        except KeyError:
            raise ConfigError(f"unknown variant {variant!r}; expected one of {sorted(VARIANTS)}") from None
        return replace(self, split=scheme, reg_weight=weight)

    @property
    def variant(self) -> str:
        regularised = self.reg_weight > 0
        if self.split == "softmax":
            return "pt-nur" if regularised else "pt-nu"
        return "pt-r" if regularised else "pt"

    @property
    def label(self) -> str:
        return VARIANT_LABELS[self.variant]

    @property
    def total_steps(self) -> int:
        return self.epochs * self.steps_per_epoch

    def to_text(self) -> dict[str, str]:
        return {k: repr(v) if isinstance(v, float) else str(v) for k, v in asdict(self).items()}

    @classmethod
    def from_text(cls, items: dict[str, str]) -> "PTConfig":
        kw = {}
        for f in fields(cls):
            if f.name not in items:
                continue
            raw = items[f.name]
            kw[f.name] = raw if f.type in ("str", str) else (float(raw) if f.type in ("float", float) else int(raw))
        return cls(**kw)


def standardize(y_obs) -> tuple[float, float]:
    """Obs mean and (population) std, std floored; identity when empty."""
    y = np.asarray(y_obs, dtype=np.float64).reshape(-1)
    if y.size == 0:
        return 0.0, 1.0
    return float(y.mean()), max(float(y.std()), STD_FLOOR)


def regulariser_from_log(log_probs: torch.Tensor, x_pred: torch.Tensor, eps: float) -> torch.Tensor:
    """Distance-weighted KL between posteriors of nearby prediction points.

    For each prediction point ``j`` sums ``w(j, i) * KL(q_j || q_i)`` over the
    other points ``i`` with ``w = max(0, 1 - |x_j - x_i| / eps)``, then
    averages over ``j``.  Accepts ``[n, K]`` / ``[n, d]`` or batched inputs.
    """
    if not eps > 0:
        raise T.ContractError("eps must be positive")
    if log_probs.dim() == 2:
        log_probs, x_pred = log_probs.unsqueeze(0), x_pred.unsqueeze(0)
    lp = torch.clamp(log_probs, min=math.log(PROB_FLOOR))
    p = torch.exp(log_probs)
    self_term = (p * lp).sum(-1, keepdim=True)
    cross = T.matmul(p, lp.transpose(-1, -2))
    kl = self_term - cross
    with torch.no_grad():
        dist = torch.cdist(x_pred.to(torch.float64), x_pred.to(torch.float64))
        w = torch.clamp(1.0 - dist / eps, min=0.0)
        w.diagonal(dim1=-2, dim2=-1).zero_()
        w = w.to(log_probs.dtype)
    if not bool((w > 0).any()):
        return log_probs.new_zeros(())
    n_centres = log_probs.shape[0] * log_probs.shape[1]
    return (w * kl).sum() / n_centres


def regulariser(probs, x_pred, eps: float) -> float:
    """Value-level form of :func:`regulariser_from_log` for probability rows."""
    p = torch.as_tensor(np.asarray(probs, dtype=np.float64))
    x = torch.as_tensor(np.asarray(x_pred, dtype=np.float64))
    if x.dim() == 1:
        x = x[:, None]
    return float(regulariser_from_log(torch.log(torch.clamp(p, min=PROB_FLOOR)), x, eps))


@dataclass
class Batch:
    x_obs: np.ndarray
    y_obs: np.ndarray
    x_pred: np.ndarray
    y_pred: np.ndarray
    thetas: list = field(default_factory=list)
    loc: np.ndarray | None = None
    scale: np.ndarray | None = None


# seed-sequence streams keeping training, spec and held-out data disjoint
STREAM_TRAIN, STREAM_SPEC, STREAM_HELDOUT = 0, 1, 2


def make_batch(cfg: PTConfig, hp: HyperPrior, seed: int, step: int, scheme: str | None = None,
               min_obs: int = 1, stream: int = STREAM_TRAIN) -> Batch:
    """One batch of standardised contexts; every element shares the same
    observation count."""
    rng = np.random.default_rng([seed, stream, step, 0])
    n = cfg.dataset_size
    n_obs = int(rng.integers(min_obs, n))
    scheme = scheme or cfg.split
    xo, yo, xp, yp, thetas, locs, scales = [], [], [], [], [], [], []
    for b in range(cfg.batch_size):
        item = np.random.default_rng([seed, stream, step, b + 1])
        ds = split(sample_dataset(cfg.d, n, hp, item), scheme, n_obs, item)
        m, s = standardize(ds.y_obs)
        xo.append(ds.x_obs)
        yo.append((ds.y_obs - m) / s)
        xp.append(ds.x_pred)
        yp.append((ds.y_pred - m) / s)
        thetas.append(ds.theta)
        locs.append(m)
        scales.append(s)
    return Batch(np.stack(xo), np.stack(yo), np.stack(xp), np.stack(yp), thetas, np.array(locs), np.array(scales))


def build_training_spec(cfg: PTConfig, hp: HyperPrior, seed: int) -> RiemannSpec:
    """Bucket borders from ``batch_size * spec_batches * dataset_size`` standardised targets.

    Single-observation contexts are left out (their scale is the std floor, so
    their standardised targets are meaningless) and 0.1% is trimmed from each
    tail before taking quantiles.
    """
    pool = []
    for i in range(cfg.spec_batches):
        b = make_batch(cfg, hp, seed, i, min_obs=min(2, cfg.dataset_size - 1), stream=STREAM_SPEC)
        pool.append(b.y_obs.reshape(-1))
        pool.append(b.y_pred.reshape(-1))
    z = np.concatenate(pool)
    lo, hi = np.quantile(z, [0.001, 0.999])
    return build_spec(z[(z >= lo) & (z <= hi)], cfg.n_buckets)


class PTSurrogate:
    """A trained (or freshly initialised) transformer plus its bucket spec."""

    def __init__(self, cfg: PTConfig, spec: RiemannSpec, model: SetTransformer | None = None,
                 hyperprior: HyperPrior | None = None, seed: int = 0, history: np.ndarray | None = None):
        if spec.n_buckets != cfg.n_buckets:
            raise ConfigError("spec bucket count does not match config")
        self.cfg = cfg
        self.spec = spec
        self.hyperprior = hyperprior or HyperPrior.default(cfg.d)
        self.seed = seed
        self.dtype = T.dtype_of(cfg.precision)
        self.model = model if model is not None else init_model(cfg, seed)
        self.history = history if history is not None else np.zeros((0, 5))
        self.forward_calls = 0
        self.model.eval()

    def log_probs(self, x_obs, y_obs, x_pred) -> tuple[np.ndarray, float, float]:
        """Log bucket probabilities in standardised units plus the (loc, scale) used."""
        x_obs = np.asarray(x_obs, dtype=np.float64).reshape(-1, self.cfg.d)
        y_obs = np.asarray(y_obs, dtype=np.float64).reshape(-1)
        x_pred = np.asarray(x_pred, dtype=np.float64).reshape(-1, self.cfg.d)
        if len(x_obs) != len(y_obs):
            raise T.ContractError("x_obs and y_obs differ in length")
        m, s = standardize(y_obs)
        self.forward_calls += 1
        with torch.no_grad():
            logits = self.model(
                torch.as_tensor(x_obs[None], dtype=self.dtype),
                torch.as_tensor(((y_obs - m) / s)[None], dtype=self.dtype),
                torch.as_tensor(x_pred[None], dtype=self.dtype),
            )[0]
            lp = T.log_softmax(logits.to(torch.float64))
        return lp.numpy(), m, s

    def predict(self, x_obs, y_obs, x_pred) -> RiemannPosterior:
        """Posterior over buckets in the units of ``y_obs``."""
        lp, m, s = self.log_probs(x_obs, y_obs, x_pred)
        p = np.exp(lp)
        p /= p.sum(1, keepdims=True)
        return RiemannPosterior(self.spec.affine(m, s), p)

    def parameter_digest(self) -> str:
        h = hashlib.sha256()
        for name, t in sorted(self.model.state_dict().items()):
            h.update(name.encode())
            h.update(t.detach().cpu().numpy().tobytes())
        return h.hexdigest()


def init_model(cfg: PTConfig, seed: int) -> SetTransformer:
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        model = SetTransformer(cfg.d, cfg.emb, cfg.layers, cfg.heads, cfg.ff_mult * cfg.emb, cfg.n_buckets)
    return model.to(T.dtype_of(cfg.precision))


def lr_factor(step: int, cfg: PTConfig) -> float:
    """Linear warm-up over ``warmup_epochs`` then cosine decay to zero."""
    warm = cfg.warmup_epochs * cfg.steps_per_epoch
    if step < warm:
        return (step + 1) / warm
    rest = max(cfg.total_steps - warm, 1)
    return 0.5 * (1.0 + math.cos(math.pi * (step - warm) / rest))


def batch_loss(model: SetTransformer, spec: RiemannSpec, batch: Batch, cfg: PTConfig, dtype=None):
    """Cross-entropy plus weighted regulariser; returns (total, ce, reg)."""
    dtype = dtype or T.dtype_of(cfg.precision)
    logits = model(
        torch.as_tensor(batch.x_obs, dtype=dtype),
        torch.as_tensor(batch.y_obs, dtype=dtype),
        torch.as_tensor(batch.x_pred, dtype=dtype),
    )
    lp = T.log_softmax(logits)
    target = torch.as_tensor(bucket_of(spec, batch.y_pred), dtype=torch.long).reshape(lp.shape[:-1])
    ce = -T.mean(T.gather(lp, target.unsqueeze(-1)))
    if cfg.reg_weight > 0:
        reg = regulariser_from_log(lp, torch.as_tensor(batch.x_pred, dtype=dtype), cfg.eps)
        return ce + cfg.reg_weight * reg, ce, reg
    return ce, ce, ce.new_zeros(())


def train(cfg: PTConfig, hp: HyperPrior | None = None, seed: int = 0, dump_dir=None,
          progress: bool = False) -> PTSurrogate:
    """Fit the transformer on freshly sampled prior datasets.

    The returned surrogate carries per-epoch telemetry in ``history`` with
    columns ``(epoch, ce, reg, total, lr)``.
    """
    hp = hp or HyperPrior.default(cfg.d)
    spec = build_training_spec(cfg, hp, seed)
    model = init_model(cfg, seed)
    model.train()
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2),
                            weight_decay=cfg.weight_decay)
    sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda s: lr_factor(s, cfg))
    rows = []
    step = 0
    t0 = time.perf_counter()
    for epoch in range(cfg.epochs):
        acc = np.zeros(3)
        lr_now = opt.param_groups[0]["lr"]
        for _ in range(cfg.steps_per_epoch):
            batch = make_batch(cfg, hp, seed, step)
            total, ce, reg = batch_loss(model, spec, batch, cfg)
            if not torch.isfinite(total):
                path = _dump_state(dump_dir, model, batch, step)
                raise TrainingDiverged(f"non-finite loss at step {step}", path)
            opt.zero_grad(set_to_none=True)
            total.backward()
            opt.step()
            sched.step()
            acc += [float(ce.detach()), float(reg.detach()), float(total.detach())]
            step += 1
        acc /= cfg.steps_per_epoch
        rows.append([epoch, *acc, lr_now])
        if progress and (epoch % 10 == 0 or epoch == cfg.epochs - 1):
            log.info("epoch %d ce=%.4f reg=%.4f (%.0fs)", epoch, acc[0], acc[1], time.perf_counter() - t0)
    model.eval()
    return PTSurrogate(cfg, spec, model, hp, seed, np.array(rows, dtype=np.float64))


def _dump_state(dump_dir, model, batch: Batch, step: int) -> Path:
    out = Path(dump_dir or tempfile.gettempdir()) / f"pfbo-diverged-step{step}.pt"
    torch.save({"step": step, "model": model.state_dict(), "batch": asdict(batch)}, out)
    return out


def cdf_discrepancy(sur: PTSurrogate, hp: HyperPrior | None = None, n_datasets: int = 200,
                    seed: int = 12345, dataset_size: int | None = None) -> float:
    """Mean |PT CDF - exact GP CDF| at the PT's bucket borders.

    Held-out datasets come from the prior with a uniform split; the GP uses
    each dataset's true hyperparameters and includes observation noise, so
    both sides describe the same noisy target.
    """
    hp = hp or sur.hyperprior
    n = dataset_size or sur.cfg.dataset_size
    gaps = []
    for i in range(n_datasets):
        rng = np.random.default_rng([seed, STREAM_HELDOUT, i])
        ds = split(sample_dataset(sur.cfg.d, n, hp, rng), "uniform", None, rng)
        post = sur.predict(ds.x_obs, ds.y_obs, ds.x_pred)
        gp = gp_posterior(ds.x_obs, ds.y_obs, ds.theta, ds.x_pred, include_noise=True)
        z = (post.spec.borders[None, :] - gp.mean[:, None]) / np.sqrt(gp.var)[:, None]
        gaps.append(np.mean(np.abs(post.cdf_at_borders() - ndtr(z))))
    return float(np.mean(gaps))


def nearby_kl(sur: PTSurrogate, eps: float, hp: HyperPrior | None = None, n_datasets: int = 200,
              seed: int = 12345, dataset_size: int | None = None) -> float:
    """Mean KL(q_j || q_i) over ordered prediction-point pairs closer than ``eps``.

    Pairs are pooled over held-out prior datasets (uniform split); ``nan``
    if no pair qualifies.
    """
    if not eps > 0:
        raise T.ContractError("eps must be positive")
    hp = hp or sur.hyperprior
    n = dataset_size or sur.cfg.dataset_size
    total, count = 0.0, 0
    for i in range(n_datasets):
        rng = np.random.default_rng([seed, STREAM_HELDOUT, i])
        ds = split(sample_dataset(sur.cfg.d, n, hp, rng), "uniform", None, rng)
        p = np.maximum(sur.predict(ds.x_obs, ds.y_obs, ds.x_pred).probs, PROB_FLOOR)
        lp = np.log(p)
        pair = (p * lp).sum(1)[:, None] - p @ lp.T
        close = np.linalg.norm(ds.x_pred[:, None, :] - ds.x_pred[None, :, :], axis=-1) < eps
        np.fill_diagonal(close, False)
        total += float(pair[close].sum())
        count += int(close.sum())
    return total / count if count else float("nan")


def central_region_report(sur: PTSurrogate, x_obs, y_obs, grid) -> tuple[RiemannPosterior, float, float]:
    post = sur.predict(x_obs, y_obs, grid)
    m, v = mean_and_variance(post)
    return post, float(np.mean(m)), float(np.mean(v))


@dataclass
class ProbeScenario:
    """Layout with dense points at both ends of [0, 1], ``k_max``
    extra points in the centre window, targets from one GP draw."""

    seed: int = 0
    n_edge: int = 15
    k_max: int = 10
    centre: tuple[float, float] = (0.45, 0.55)
    lengthscale: float = 0.2
    outputscale: float = 1.0
    noise: float = 1e-4
    n_grid: int = 21


@dataclass
class ProbeReport:
    k: np.ndarray
    kl_step: np.ndarray
    kl_from_start: np.ndarray
    mean: np.ndarray
    variance: np.ndarray

    def adaptation_point(self, threshold: float) -> int:
        """First k whose posterior moved at least ``threshold`` nats away
        from the k=0 posterior; ``k_max + 1`` if never."""
        hit = np.flatnonzero(self.kl_from_start >= threshold)
        return int(self.k[hit[0]]) if hit.size else int(self.k[-1]) + 1

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "kl_step", "mean", "variance"])
            for row in zip(self.k, self.kl_step, self.mean, self.variance):
                w.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])


def sensitivity_probe(sur: PTSurrogate, scenario: ProbeScenario) -> ProbeReport:
    """How the centre-window posterior moves as centre observations arrive."""
    if sur.cfg.d != 1:
        raise T.ContractError("sensitivity probe is defined for 1-d checkpoints")
    rng = np.random.default_rng(scenario.seed)
    lo, hi = scenario.centre
    edges = np.concatenate([rng.uniform(0.0, 0.15, scenario.n_edge), rng.uniform(0.85, 1.0, scenario.n_edge)])
    centre = rng.uniform(lo, hi, scenario.k_max)
    x_all = np.concatenate([edges, centre])
    theta = GPHyperparams(scenario.lengthscale, scenario.outputscale, scenario.noise)
    y_all = sample_prior(x_all[:, None], theta, rng)
    grid = np.linspace(lo, hi, scenario.n_grid)
    posts, means, variances = [], [], []
    for k in range(scenario.k_max + 1):
        n = 2 * scenario.n_edge + k
        post, m, v = central_region_report(sur, x_all[:n], y_all[:n], grid)
        posts.append(post)
        means.append(m)
        variances.append(v)
    # compare posteriors on a common bucket grid: the k=0 standardisation
    ref_spec = posts[0].spec
    aligned = [_rebucket(p, ref_spec) for p in posts]
    kl_step = [0.0] + [float(np.mean(kl(aligned[k], aligned[k - 1]))) for k in range(1, len(aligned))]
    kl_start = [float(np.mean(kl(a, aligned[0]))) for a in aligned]
    return ProbeReport(np.arange(scenario.k_max + 1), np.array(kl_step), np.array(kl_start),
                       np.array(means), np.array(variances))


def _rebucket(post: RiemannPosterior, spec: RiemannSpec) -> RiemannPosterior:
    """Re-express a piecewise-uniform density on another border set.

    Mass outside the target range is folded into the edge buckets.
    """
    src = post.spec.borders
    dst = spec.borders.copy()
    cdf_src = post.cdf_at_borders()
    cdf_dst = np.stack([np.interp(dst, src, row) for row in cdf_src])
    cdf_dst[:, 0] = 0.0
    cdf_dst[:, -1] = 1.0
    probs = np.maximum(np.diff(cdf_dst, axis=1), 0.0)
    probs /= probs.sum(1, keepdims=True)
    return RiemannPosterior(spec, probs)
