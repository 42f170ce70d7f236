"""Aggregation of trace CSVs into summaries, tables and plots."""

from __future__ import annotations

import csv
import logging
import re
from collections import defaultdict
from pathlib import Path

import numpy as np

from pfbo import svg
from pfbo.benchmarks import improvement_over_rs
from pfbo.bo import BOTrace
from pfbo.pt import VARIANT_LABELS

log = logging.getLogger(__name__)

TRACE_RE = re.compile(r"^(?P<objective>[a-z0-9]+)-d(?P<d>\d+)-(?P<kind>[a-z0-9-]+?)-s(?P<seed>\d+)\.csv$")
KIND_LABELS = {"rs": "RS", "gp": "GP", **VARIANT_LABELS}
SUMMARY_HEADER = ["objective", "d", "kind", "index", "step", "seeds", "median", "q25", "q75"]


def kind_label(kind: str) -> str:
    return KIND_LABELS.get(kind, kind)


def collect(trace_dir) -> dict[tuple[str, int, str], dict[int, BOTrace]]:
    """``{(objective, d, kind): {seed: trace}}`` for every trace file found."""
    out: dict = defaultdict(dict)
    for p in sorted(Path(trace_dir).glob("*.csv")):
        m = TRACE_RE.match(p.name)
        if not m:
            continue
        seed = int(m["seed"])
        out[(m["objective"], int(m["d"]), m["kind"])][seed] = BOTrace.from_csv(p, seed=seed)
    return dict(out)


def aggregate(traces: dict[int, BOTrace]) -> np.ndarray:
    """Rows ``(index, step, seeds, median, q25, q75, median_elapsed)`` over seeds.

    Traces cut short by a failure shorten the summary to the common length.
    """
    if not traces:
        return np.zeros((0, 7))
    runs = [traces[s] for s in sorted(traces)]
    n = min(len(t) for t in runs)
    reg = np.stack([t.regret[:n] for t in runs])
    el = np.stack([[r.elapsed_s for r in t.records[:n]] for t in runs])
    steps = np.array([r.step for r in runs[0].records[:n]])
    q25, med, q75 = np.quantile(reg, [0.25, 0.5, 0.75], axis=0)
    return np.column_stack([np.arange(n), steps, np.full(n, len(runs)), med, q25, q75, np.median(el, 0)])


def summary_rows(groups) -> list[list[str]]:
    """Regret quantiles per evaluation index; timing is left to the timing table."""
    rows = []
    for (obj, d, kind) in sorted(groups):
        for r in aggregate(groups[(obj, d, kind)]):
            rows.append([obj, str(d), kind, str(int(r[0])), str(int(r[1])), str(int(r[2]))]
                        + [repr(float(v)) for v in r[3:6]])
    return rows


def write_summary(path, groups) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_HEADER)
        w.writerows(summary_rows(groups))


def read_summary(path) -> list[list[str]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[1:]


def improvement_table(groups) -> list[dict]:
    """Percent improvement of each method's mean final regret over RS, per task."""
    rows = []
    tasks = sorted({(o, d) for o, d, _ in groups})
    for obj, d in tasks:
        rs = groups.get((obj, d, "rs"))
        for (o, dd, kind) in sorted(groups):
            if (o, dd) != (obj, d) or kind == "rs":
                continue
            if rs is None:
                log.warning("no random-search traces for %s d=%d; improvement skipped", obj, d)
                rows.append(dict(objective=obj, d=d, kind=kind, improvement=None, note="missing rs"))
                continue
            runs = groups[(o, dd, kind)]
            seeds = sorted(set(runs) & set(rs))
            if len(seeds) < len(runs) or len(seeds) < len(rs):
                log.warning("%s d=%d %s: seed sets differ from RS; using %d shared seeds", obj, d, kind, len(seeds))
            if not seeds:
                rows.append(dict(objective=obj, d=d, kind=kind, improvement=None, note="no shared seeds"))
                continue
            imp = improvement_over_rs([runs[s].final_regret for s in seeds], [rs[s].final_regret for s in seeds])
            rows.append(dict(objective=obj, d=d, kind=kind, improvement=imp,
                             note="" if imp is not None else "rs regret is zero"))
    return rows


def timing_table(groups) -> list[dict]:
    """Mean seconds per acquisition step (surrogate work plus acquisition)."""
    role = {"rs": "uniform draw", "gp": "fit + acquisition"}
    rows = []
    for (obj, d, kind) in sorted(groups):
        per = [t.step_times() for t in groups[(obj, d, kind)].values()]
        per = np.concatenate([p for p in per if p.size]) if any(p.size for p in per) else np.zeros(0)
        rows.append(dict(objective=obj, d=d, kind=kind, role=role.get(kind, "inference + acquisition"),
                         sec_per_iter=float(per.mean()) if per.size else float("nan"), steps=int(per.size)))
    return rows


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([r[h] if not isinstance(r[h], float) else repr(r[h]) for h in header])


def plot_task(out_dir, obj: str, d: int, groups) -> list[Path]:
    kinds = sorted(k for (o, dd, k) in groups if (o, dd) == (obj, d))
    by_iter, by_time = [], []
    for kind in kinds:
        agg = aggregate(groups[(obj, d, kind)])
        if not len(agg):
            continue
        lab = kind_label(kind)
        by_iter.append(svg.Series(lab, agg[:, 0], agg[:, 3], agg[:, 4], agg[:, 5]))
        by_time.append(svg.Series(lab, agg[:, 6], agg[:, 3], agg[:, 4], agg[:, 5]))
    a = Path(out_dir) / f"{obj}-d{d}-regret.svg"
    b = Path(out_dir) / f"{obj}-d{d}-wallclock.svg"
    svg.write(a, by_iter, title=f"{obj} (d={d})", xlabel="evaluation", ylabel="simple regret")
    svg.write(b, by_time, title=f"{obj} (d={d})", xlabel="wall-clock seconds", ylabel="simple regret")
    return [a, b]


def report(run_dir, out_dir=None) -> dict:
    """Plots plus improvement and timing tables for every trace in ``run_dir``.

    Missing pieces produce warnings and a partial report.
    """
    run_dir = Path(run_dir)
    trace_dir = run_dir / "traces" if (run_dir / "traces").is_dir() else run_dir
    out = Path(out_dir) if out_dir else run_dir / "report"
    out.mkdir(parents=True, exist_ok=True)
    groups = collect(trace_dir)
    warnings = []
    if not groups:
        warnings.append(f"no trace files under {trace_dir}")
    expected_seeds = set().union(*[set(g) for g in groups.values()]) if groups else set()
    for key, runs in sorted(groups.items()):
        missing = expected_seeds - set(runs)
        if missing:
            warnings.append(f"{key[0]} d={key[1]} {key[2]}: missing seeds {sorted(missing)}")
    for (obj, d) in sorted({(o, d) for o, d, _ in groups}):
        if (obj, d, "rs") not in groups:
            warnings.append(f"{obj} d={d}: no random-search traces, improvement left blank")
    for w in warnings:
        log.warning(w)

    plots = []
    for (obj, d) in sorted({(o, d) for o, d, _ in groups}):
        plots += plot_task(out, obj, d, groups)
    imp = improvement_table(groups)
    _write_rows(out / "improvement.csv", ["objective", "d", "kind", "improvement", "note"],
                [dict(r, improvement="" if r["improvement"] is None else r["improvement"]) for r in imp])
    tim = timing_table(groups)
    _write_rows(out / "timing.csv", ["objective", "d", "kind", "role", "sec_per_iter", "steps"], tim)
    write_summary(out / "summary.csv", groups)
    (out / "warnings.txt").write_text("".join(w + "\n" for w in warnings))
    return dict(plots=plots, improvement=imp, timing=tim, warnings=warnings)
