"""Command-line entry points.

Environment overrides: ``PFBO_OUTPUT_DIR`` (default output root) and
``PFBO_THREADS`` (torch intra-op threads).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import multiprocessing
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

log = logging.getLogger("pfbo")

EPS_PRESETS = {
    "1d": (0.01, 0.025, 0.05, 0.1, 0.5),
    "2d": (0.025, 0.05, 0.1),
    "5d": (0.05, 0.1, 0.25, 0.5),
    "10d": (0.1, 0.25, 0.5),
}


def output_root() -> Path:
    return Path(os.environ.get("PFBO_OUTPUT_DIR", "pfbo-out"))


def _set_threads() -> None:
    n = os.environ.get("PFBO_THREADS")
    if n:
        import torch

        torch.set_num_threads(int(n))


def _write_meta(path: Path, **info) -> None:
    """Timestamps and durations live only in this sidecar file."""
    info["written_at"] = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    path.write_text(json.dumps(info, indent=2, sort_keys=True, default=str) + "\n")


# ---------------------------------------------------------------- train

def train_checkpoint(cfg, hp, seed, out: Path):
    from pfbo import checkpoint
    from pfbo.pt import train

    out.parent.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    sur = train(cfg, hp, seed=seed, dump_dir=out.parent, progress=True)
    took = time.perf_counter() - t0
    checkpoint.save(out, sur)
    loss = out.with_suffix(".loss.csv")
    with open(loss, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "ce", "reg", "total", "lr"])
        for row in sur.history:
            w.writerow([int(row[0])] + [repr(float(v)) for v in row[1:]])
    _write_meta(out.with_suffix(".meta.json"), command="train", seconds=took, variant=cfg.variant, d=cfg.d)
    return sur


def _train_inputs(args):
    from pfbo import config
    from pfbo.priors import HyperPrior
    from pfbo.pt import PTConfig

    if args.config:
        doc, _ = config.read(args.config)
        cfg, hp, seed = config.train_config(doc, args.variant)
    else:
        cfg = PTConfig.desk(args.d, args.variant or "pt-nur")
        hp, seed = HyperPrior.default(args.d), 0
    if args.seed is not None:
        seed = args.seed
    return cfg, hp, seed


def cmd_train(args) -> int:
    cfg, hp, seed = _train_inputs(args)
    out = Path(args.out) if args.out else output_root() / "checkpoints" / f"{cfg.variant}-d{cfg.d}.pfbo"
    train_checkpoint(cfg, hp, seed, out)
    print(out)
    return 0


# ---------------------------------------------------------------- bo

def _run_cell(cell):
    from pfbo.bo import BORunConfig, run, trace_path

    _set_threads()
    cfg = BORunConfig(**cell["cfg"])
    path = trace_path(cell["out"], cfg.objective, cfg.d, cfg.kind, cfg.seed)
    try:
        tr = run(cfg)
    except Exception as exc:
        return dict(cell=cell["key"], status="failed", error=f"{type(exc).__name__}: {exc}", final_regret="")
    tr.to_csv(path)
    return dict(cell=cell["key"], status="error" if tr.error else "ok", error=tr.error or "",
                final_regret=repr(tr.final_regret))


def matrix_cells(m: dict, trace_dir: Path) -> list[dict]:
    cells = []
    for obj in m["objectives"]:
        for d in m["dims"]:
            for kind in m["kinds"]:
                ckpt = None
                if kind not in ("rs", "gp"):
                    ckpt = m["checkpoints"].get(kind, {}).get(d)
                for seed in m["seeds"]:
                    cfg = dict(objective=obj, d=d, n_init=m["n_init"], n_steps=m["n_steps"], kind=kind, seed=seed,
                               acq=m["acq"][d], checkpoint=ckpt, gp_fit_restarts=m["gp_fit_restarts"])
                    cells.append(dict(key=(obj, d, kind, seed), cfg=cfg, out=str(trace_dir)))
    return cells


def run_matrix(m: dict, out: Path, workers: int | None = None) -> list[dict]:
    """Run every cell, write traces, the cell status file and the summary."""
    from pfbo import reporting
    from pfbo.bo import BORunConfig

    trace_dir = out / "traces"
    trace_dir.mkdir(parents=True, exist_ok=True)
    cells = matrix_cells(m, trace_dir)
    status = []
    valid = []
    for c in cells:
        try:
            BORunConfig(**c["cfg"])
            if c["cfg"]["kind"] not in ("rs", "gp") and not c["cfg"]["checkpoint"]:
                raise ValueError(f"no checkpoint configured for {c['cfg']['kind']} d={c['cfg']['d']}")
            valid.append(c)
        except Exception as exc:
            status.append(dict(cell=c["key"], status="failed", error=f"{type(exc).__name__}: {exc}",
                               final_regret=""))
    workers = workers or m.get("workers", 1)
    t0 = time.perf_counter()
    if workers > 1:
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(workers, mp_context=ctx) as pool:
            status += list(pool.map(_run_cell, valid))
    else:
        status += [_run_cell(c) for c in valid]
    for s in status:
        if s["status"] != "ok":
            log.warning("cell %s: %s %s", s["cell"], s["status"], s["error"])
    status.sort(key=lambda s: tuple(map(str, s["cell"])))
    with open(out / "cells.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["objective", "d", "kind", "seed", "status", "final_regret", "error"])
        for s in status:
            w.writerow(list(s["cell"]) + [s["status"], s["final_regret"], s["error"]])
    reporting.write_summary(out / "summary.csv", reporting.collect(trace_dir))
    _write_meta(out / "meta.json", command="bo", seconds=time.perf_counter() - t0, cells=len(cells))
    return status


def cmd_bo(args) -> int:
    from pfbo import config

    doc, base = config.read(args.matrix)
    m = config.matrix_config(doc, base)
    out = Path(args.out) if args.out else output_root() / "bo"
    status = run_matrix(m, out, args.workers)
    bad = sum(s["status"] != "ok" for s in status)
    print(f"{len(status) - bad}/{len(status)} cells ok; traces in {out / 'traces'}")
    return 0


# ---------------------------------------------------------------- report

def cmd_report(args) -> int:
    from pfbo import reporting

    res = reporting.report(args.run_dir, args.out)
    for r in res["improvement"]:
        imp = "n/a" if r["improvement"] is None else f"{r['improvement']:.1f}%"
        print(f"{r['objective']:>14s} d={r['d']:<2d} {reporting.kind_label(r['kind']):>8s} {imp}")
    for r in res["timing"]:
        print(f"{r['objective']:>14s} d={r['d']:<2d} {reporting.kind_label(r['kind']):>8s} "
              f"{r['sec_per_iter']:.3e} s/it ({r['role']})")
    for w in res["warnings"]:
        print(f"warning: {w}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------- ablate-eps

def cmd_ablate_eps(args) -> int:
    from pfbo import config, reporting, svg

    doc, _ = config.read(args.config)
    cfg, hp, seed = config.train_config(doc, args.variant or "pt-r")
    if cfg.reg_weight <= 0:
        raise config.ConfigError("the eps ablation needs a regularised variant (pt-r or pt-nur)")
    mdoc, mbase = config.read(args.matrix)
    m = config.matrix_config(mdoc, mbase)
    eps_list = list(args.eps) if args.eps else list(EPS_PRESETS[args.preset or f"{cfg.d}d"])
    out = Path(args.out) if args.out else output_root() / "ablate-eps"
    runs = [(f"eps-{e!r}", replace(cfg, eps=float(e)), f"ε={e:g}") for e in eps_list]
    if args.baseline:
        runs.append(("baseline", replace(cfg, reg_weight=0.0), "λ=0"))
    curves = {}
    for name, c, label in runs:
        ck = out / name / "model.pfbo"
        if not ck.exists():
            train_checkpoint(c, hp, seed, ck)
        mm = dict(m, kinds=[c.variant], dims=[c.d], checkpoints={c.variant: {c.d: str(ck)}})
        run_matrix(mm, out / name, args.workers)
        curves[label] = reporting.collect(out / name / "traces")
    rows = []
    for obj in m["objectives"]:
        series = []
        for label, groups in curves.items():
            for (o, d, k), traces in sorted(groups.items()):
                if o != obj:
                    continue
                agg = reporting.aggregate(traces)
                series.append(svg.Series(label, agg[:, 0], agg[:, 3], agg[:, 4], agg[:, 5]))
                rows.append([obj, d, label, repr(float(agg[-1, 3]))])
        svg.write(out / f"ablation-{obj}-d{cfg.d}.svg", series, title=f"{obj} (d={cfg.d}) eps ablation",
                  xlabel="evaluation", ylabel="simple regret")
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["objective", "d", "setting", "final_median_regret"])
        w.writerows(rows)
    print(f"{len(runs)} settings; report in {out}")
    return 0


# ---------------------------------------------------------------- lemma

def cmd_lemma(args) -> int:
    from pfbo import config
    from pfbo.lemma import LemmaConfig, verify_lemma

    if args.config:
        doc, _ = config.read(args.config)
        cfgs = config.lemma_config(doc)
    else:
        cfgs = [LemmaConfig(n_obs=n) for n in (5, 20, 80)]
    out = Path(args.out) if args.out else output_root() / "lemma"
    out.mkdir(parents=True, exist_ok=True)
    for c in cfgs:
        rep = verify_lemma(c)
        rep.to_csv(out / f"lemma-N{c.n_obs}.csv")
        (out / f"lemma-N{c.n_obs}.txt").write_text(rep.summary())
        print(f"N={c.n_obs}: c_tilde={rep.c_tilde:.4g} slope={rep.slope:.4g} monotone={rep.monotone()} "
              f"within_bound={rep.within_bound()} ratio_bounded={rep.ratio_bounded()}")
    return 0


# ---------------------------------------------------------------- list-objectives

def cmd_list_objectives(args) -> int:
    from pfbo.benchmarks import NAMED_PANEL, REGISTRY

    for name, obj in REGISTRY.items():
        dims = "any" if obj.dims is None else ",".join(map(str, obj.dims)) if len(obj.dims) < 5 else \
            f"{obj.dims[0]}-{obj.dims[-1]}"
        d = obj.dims[0] if obj.dims else 1
        panel = "*" if name in NAMED_PANEL else " "
        print(f"{panel} {name:<16s} d={dims:<6s} lower={obj.lower(d).tolist()} upper={obj.upper(d).tolist()} "
              f"f*={obj.f_star(d):.6g}")
    return 0


# ---------------------------------------------------------------- posterior-dump

def cmd_posterior_dump(args) -> int:
    from scipy.special import ndtr

    from pfbo import checkpoint
    from pfbo.gp import GPHyperparams, posterior, sample_prior
    from pfbo.riemann import mean_and_variance

    sur = checkpoint.load(args.checkpoint)
    if sur.cfg.d != 1:
        raise ValueError("posterior-dump needs a 1-d checkpoint")
    rng = np.random.default_rng(args.seed)
    theta = GPHyperparams(args.lengthscale, args.outputscale, args.noise)
    x_obs = rng.uniform(0.0, 1.0, (args.n_obs, 1))
    y_obs = sample_prior(x_obs, theta, rng)
    grid = np.linspace(0.0, 1.0, args.grid)[:, None]
    pt = sur.predict(x_obs, y_obs, grid)
    pt_m, pt_v = mean_and_variance(pt)
    gpp = posterior(x_obs, y_obs, theta, grid, include_noise=True)
    out = Path(args.out) if args.out else output_root() / "posterior"
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "observations.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y"])
        w.writerows([[repr(float(a)), repr(float(b))] for a, b in zip(x_obs[:, 0], y_obs)])
    with open(out / "moments.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "pt_mean", "pt_var", "gp_mean", "gp_var"])
        for row in zip(grid[:, 0], pt_m, pt_v, gpp.mean, gpp.var):
            w.writerow([repr(float(v)) for v in row])
    levels = np.linspace(float(y_obs.min()) - 2.0, float(y_obs.max()) + 2.0, args.levels)
    cdf_pt = np.stack([np.interp(levels, pt.spec.borders, row) for row in pt.cdf_at_borders()])
    cdf_gp = ndtr((levels[None, :] - gpp.mean[:, None]) / np.sqrt(gpp.var)[:, None])
    with open(out / "cdf.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "pt_cdf", "gp_cdf"])
        for i, x in enumerate(grid[:, 0]):
            for j, y in enumerate(levels):
                w.writerow([repr(float(x)), repr(float(y)), repr(float(cdf_pt[i, j])), repr(float(cdf_gp[i, j]))])
    print(out)
    return 0


# ---------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pfbo", description="Transformer-surrogate Bayesian optimisation toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    variants = ["pt", "pt-r", "pt-nu", "pt-nur"]
    t = sub.add_parser("train", help="train a transformer surrogate")
    t.add_argument("config", nargs="?", help="YAML training config (default: desk config)")
    t.add_argument("--variant", choices=variants)
    t.add_argument("--d", type=int, default=1, help="input dimension when no config is given")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", help="checkpoint path")
    t.set_defaults(func=cmd_train)

    b = sub.add_parser("bo", help="run a BO matrix")
    b.add_argument("matrix", help="YAML run matrix")
    b.add_argument("--out")
    b.add_argument("--workers", type=int)
    b.set_defaults(func=cmd_bo)

    r = sub.add_parser("report", help="plots and tables from a run directory")
    r.add_argument("run_dir")
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)

    a = sub.add_parser("ablate-eps", help="train and compare regularised models over eps")
    a.add_argument("config", help="YAML training config")
    a.add_argument("matrix", help="YAML run matrix (kinds and checkpoints are filled in)")
    a.add_argument("--eps", type=float, nargs="+")
    a.add_argument("--preset", choices=sorted(EPS_PRESETS))
    a.add_argument("--variant", choices=["pt-r", "pt-nur"])
    a.add_argument("--baseline", action="store_true", help="also run the unregularised model")
    a.add_argument("--workers", type=int)
    a.add_argument("--out")
    a.set_defaults(func=cmd_ablate_eps)

    lm = sub.add_parser("lemma", help="numerical KL-vs-distance check for GP posteriors")
    lm.add_argument("config", nargs="?")
    lm.add_argument("--out")
    lm.set_defaults(func=cmd_lemma)

    lo = sub.add_parser("list-objectives", help="list registered benchmark functions")
    lo.set_defaults(func=cmd_list_objectives)

    pd = sub.add_parser("posterior-dump", help="PT and GP posteriors on a 1-d grid")
    pd.add_argument("checkpoint")
    pd.add_argument("--n-obs", type=int, default=5)
    pd.add_argument("--seed", type=int, default=0)
    pd.add_argument("--lengthscale", type=float, default=0.2)
    pd.add_argument("--outputscale", type=float, default=1.0)
    pd.add_argument("--noise", type=float, default=1e-4)
    pd.add_argument("--grid", type=int, default=101)
    pd.add_argument("--levels", type=int, default=41)
    pd.add_argument("--out")
    pd.set_defaults(func=cmd_posterior_dump)
    return p


def main(argv=None) -> int:
    from pfbo.config import ConfigError

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    _set_threads()
    try:
        return args.func(args)
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
