"""Bayesian-optimisation loop and trace diagnostics."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from pfbo import benchmarks
from pfbo import gp_surrogate
from pfbo.acquisition import AcqOptConfig, maximize_gp, maximize_pt
from pfbo.pt import VARIANTS, PTSurrogate
from pfbo.riemann import PROB_FLOOR, bucket_of

log = logging.getLogger(__name__)

KINDS = ("rs", "gp") + tuple(VARIANTS)


@dataclass(frozen=True)
class BORunConfig:
    objective: str
    d: int
    n_init: int = 10
    n_steps: int = 100
    kind: str = "rs"
    seed: int = 0
    acq: AcqOptConfig | None = None
    checkpoint: str | None = None
    gp_fit_restarts: int = 5
    # full hyperparameter refit once this fraction of new points has arrived
    gp_refit_fraction: float = 0.1

    def __post_init__(self):
        if self.n_init < 1 or self.n_steps < 1:
            raise ValueError("n_init and n_steps must be at least 1")
        if self.kind not in KINDS:
            raise ValueError(f"unknown surrogate kind {self.kind!r}; expected one of {KINDS}")
        benchmarks.get(self.objective).check_dim(self.d)
        if self.acq is None:
            object.__setattr__(self, "acq", AcqOptConfig.for_dim(self.d))

    @property
    def is_pt(self) -> bool:
        return self.kind in VARIANTS

    def echo(self) -> dict[str, str]:
        out = {k: str(v) for k, v in asdict(self).items() if k != "acq"}
        out.update({f"acq.{k}": str(v) for k, v in asdict(self.acq).items()})
        return out


@dataclass
class BORecord:
    step: int
    x: np.ndarray
    y: float
    best_y: float
    regret: float
    elapsed_s: float


@dataclass
class BOTrace:
    """Evaluations in order.  The initial design is logged with ``step = 0``;
    acquisitions are numbered from 1.  ``elapsed_s`` is cumulative surrogate
    plus acquisition time and excludes objective evaluations."""

    config: dict[str, str]
    seed: int
    d: int
    records: list[BORecord] = field(default_factory=list)
    error: str | None = None

    def __len__(self):
        return len(self.records)

    @property
    def X(self) -> np.ndarray:
        return np.array([r.x for r in self.records]).reshape(-1, self.d)

    @property
    def y(self) -> np.ndarray:
        return np.array([r.y for r in self.records])

    @property
    def regret(self) -> np.ndarray:
        return np.array([r.regret for r in self.records])

    @property
    def final_regret(self) -> float:
        return self.records[-1].regret

    @property
    def n_init(self) -> int:
        return sum(r.step == 0 for r in self.records)

    def step_times(self) -> np.ndarray:
        """Seconds spent on each acquisition step."""
        t = np.array([r.elapsed_s for r in self.records if r.step > 0])
        return np.diff(np.concatenate([[0.0], t]))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step"] + [f"x_{i}" for i in range(self.d)] + ["y", "best_y", "regret", "elapsed_s"])
            for r in self.records:
                w.writerow([r.step] + [repr(float(v)) for v in r.x] + [repr(r.y), repr(r.best_y), repr(r.regret),
                                                                      repr(r.elapsed_s)])

    @classmethod
    def from_csv(cls, path, config: dict[str, str] | None = None, seed: int = 0) -> "BOTrace":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path}: empty trace")
        d = sum(1 for k in rows[0] if k.startswith("x_"))
        recs = [
            BORecord(int(r["step"]), np.array([float(r[f"x_{i}"]) for i in range(d)]), float(r["y"]),
                     float(r["best_y"]), float(r["regret"]), float(r["elapsed_s"]))
            for r in rows
        ]
        return cls(config or {}, seed, d, recs)


def _load_surrogate(cfg: BORunConfig, surrogate) -> PTSurrogate:
    if surrogate is not None:
        sur = surrogate
    elif cfg.checkpoint:
        from pfbo.checkpoint import load

        sur = load(cfg.checkpoint)
    else:
        raise ValueError(f"kind {cfg.kind!r} needs a checkpoint")
    if sur.cfg.d != cfg.d:
        raise ValueError(f"checkpoint is for d={sur.cfg.d}, run asks for d={cfg.d}")
    return sur


def run(cfg: BORunConfig, surrogate: PTSurrogate | None = None) -> BOTrace:
    """One optimisation run.  ``surrogate`` overrides ``cfg.checkpoint``."""
    obj = benchmarks.get(cfg.objective)
    f_star = obj.f_star(cfg.d)
    trace = BOTrace(cfg.echo(), cfg.seed, cfg.d)
    sur = _load_surrogate(cfg, surrogate) if cfg.is_pt else None

    rng = np.random.default_rng([cfg.seed, 0])
    X, Y = [], []
    best = np.inf

    def record(step, x, elapsed):
        nonlocal best
        y = float(benchmarks.evaluate(obj, x))
        X.append(np.array(x, dtype=np.float64))
        Y.append(y)
        best = min(best, y)
        regret = max(best - f_star, 0.0)
        trace.records.append(BORecord(step, X[-1], y, best, regret, elapsed))

    for x in rng.uniform(0.0, 1.0, (cfg.n_init, cfg.d)):
        record(0, x, 0.0)

    model = None
    n_at_refit = 0
    elapsed = 0.0
    for step in range(1, cfg.n_steps + 1):
        t0 = time.perf_counter()
        try:
            if cfg.kind == "rs":
                x = rng.uniform(0.0, 1.0, cfg.d)
            elif cfg.kind == "gp":
                n = len(Y)
                full = model is None or n >= (1.0 + cfg.gp_refit_fraction) * n_at_refit
                model = gp_surrogate.fit(
                    np.array(X), np.array(Y),
                    restarts=cfg.gp_fit_restarts if full else 1,
                    seed=[cfg.seed, 2, step],
                    warm_start=None if model is None else model.theta,
                )
                if full:
                    n_at_refit = n
                x, _ = maximize_gp(model, best, cfg.acq, [cfg.seed, 1, step])
            else:
                x, _ = maximize_pt(sur, np.array(X), np.array(Y), best, cfg.acq, step - 1, [cfg.seed, 1, step])
        except Exception as exc:  # keep the partial trace
            log.warning("run %s/%s seed %d failed at step %d: %s", cfg.objective, cfg.kind, cfg.seed, step, exc)
            trace.error = f"step {step}: {type(exc).__name__}: {exc}"
            break
        elapsed += time.perf_counter() - t0
        record(step, np.clip(x, 0.0, 1.0), elapsed)
    return trace


def probe_density_report(trace: BOTrace, n_bins: int = 20, path=None) -> tuple[np.ndarray, np.ndarray]:
    """Histogram of probed locations over [0, 1] for a 1-d trace."""
    if trace.d != 1:
        raise ValueError("probe density is defined for 1-d traces")
    if n_bins < 1:
        raise ValueError("n_bins must be positive")
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    counts, _ = np.histogram(trace.X[:, 0], bins=edges)
    if path is not None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_lo", "bin_hi", "count"])
            for lo, hi, c in zip(edges[:-1], edges[1:], counts):
                w.writerow([repr(float(lo)), repr(float(hi)), int(c)])
    return counts, edges


def _nll(sur: PTSurrogate, x_ctx, y_ctx, x_tgt, y_tgt) -> float:
    """Mean negative log density of the targets (comparable across bucket specs)."""
    post = sur.predict(x_ctx, y_ctx, x_tgt)
    idx = bucket_of(post.spec, y_tgt)
    p = post.probs[np.arange(len(idx)), idx]
    dens = np.maximum(p, PROB_FLOOR) / post.spec.widths[idx]
    return float(np.mean(-np.log(dens)))


def ce_replay(sur_a: PTSurrogate, sur_b: PTSurrogate, trace: BOTrace) -> np.ndarray:
    """Cross-entropy on the not-yet-acquired points of a reference trace.

    Row ``t`` holds ``(t, ce_a, ce_b)``: both surrogates see the initial
    design plus the first ``t`` acquisitions and are scored on the rest.
    """
    if sur_a.cfg.d != trace.d or sur_b.cfg.d != trace.d:
        raise ValueError("checkpoint and trace dimensions differ")
    X, y = trace.X, trace.y
    n0 = trace.n_init
    n_acq = len(trace) - n0
    rows = []
    for t in range(n_acq):
        c = n0 + t
        rows.append((t, _nll(sur_a, X[:c], y[:c], X[c:], y[c:]), _nll(sur_b, X[:c], y[:c], X[c:], y[c:])))
    return np.array(rows, dtype=np.float64).reshape(-1, 3)


def write_ce_replay(path, curves: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "ce_a", "ce_b"])
        for t, a, b in curves:
            w.writerow([int(t), repr(float(a)), repr(float(b))])


def with_kind(cfg: BORunConfig, kind: str, checkpoint: str | None = None) -> BORunConfig:
    return replace(cfg, kind=kind, checkpoint=checkpoint)


def trace_path(out_dir, objective: str, d: int, kind: str, seed: int) -> Path:
    return Path(out_dir) / f"{objective}-d{d}-{kind}-s{seed}.csv"
