"""YAML run configuration with line-numbered diagnostics.

Three document kinds are read here:

train::

    d: 1
    variant: pt-nur        # pt | pt-r | pt-nu | pt-nur
    scale: desk            # desk | full
    seed: 0
    pt: {epochs: 150, eps: 0.05}          # optional field overrides
    hyperprior: {lengthscale: [0.05, 1.0], outputscale: [0.25, 4.0], noise: [1.0e-4, 1.0e-2]}

bo matrix::

    objectives: [ackley, levy]
    dims: [1]
    kinds: [rs, gp, pt-nur]
    seeds: 5               # a count or an explicit list
    n_init: 10
    n_steps: 100
    checkpoints: {pt-nur: {1: ckpt/pt-nur-d1.pfbo}}
    acq: {local_test_points: 1000}
    workers: 2

lemma::

    d: 2
    n_obs: [5, 20, 80]
    theta: {lengthscale: 0.3, outputscale: 1.0, noise: 0.01}
    etas: [0.1, 0.01, 0.001, 0.0001]
    trials: 200
    seed: 0

Relative paths resolve against the config file's directory.
"""

from __future__ import annotations

from dataclasses import fields, replace
from pathlib import Path

import yaml

from pfbo.acquisition import AcqOptConfig
from pfbo.gp import GPHyperparams
from pfbo.priors import HyperPrior
from pfbo.pt import VARIANTS, PTConfig


class ConfigError(ValueError):
    pass


class Doc:
    """A parsed mapping that remembers the source line of every key."""

    def __init__(self, data: dict, lines: dict, source: str, prefix: str = ""):
        self.data = data
        self.lines = lines
        self.source = source
        self.prefix = prefix

    def _where(self, key=None) -> str:
        path = f"{self.prefix}{key}" if key is not None else self.prefix.rstrip(".")
        line = self.lines.get(path)
        loc = f"{self.source}:{line}" if line else self.source
        return f"{loc}: field '{path}'" if path else loc

    def error(self, key, msg) -> ConfigError:
        return ConfigError(f"{self._where(key)}: {msg}")

    def get(self, key, kind=None, default=None, required=False):
        if key not in self.data:
            if required:
                raise ConfigError(f"{self._where()}: missing required field '{self.prefix}{key}'")
            return default
        val = self.data[key]
        if kind is None or val is None:
            return val
        try:
            if kind is bool and not isinstance(val, bool):
                raise TypeError
            if kind in (int, float) and isinstance(val, bool):
                raise TypeError
            if kind is int and isinstance(val, float) and not val.is_integer():
                raise TypeError
            return kind(val)
        except (TypeError, ValueError):
            raise self.error(key, f"expected {kind.__name__}, got {val!r}") from None

    def section(self, key) -> "Doc":
        val = self.data.get(key, {}) or {}
        if not isinstance(val, dict):
            raise self.error(key, "expected a mapping")
        return Doc(val, self.lines, self.source, f"{self.prefix}{key}.")

    def check_keys(self, allowed) -> None:
        for k in self.data:
            if k not in allowed:
                raise self.error(k, f"unknown field (allowed: {', '.join(sorted(map(str, allowed)))})")


def _line_map(node, prefix="", out=None) -> dict:
    out = {} if out is None else out
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            path = f"{prefix}{k.value}"
            out[path] = k.start_mark.line + 1
            _line_map(v, path + ".", out)
    return out


def parse(text: str, source: str = "<config>") -> Doc:
    try:
        node = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{source}:{mark.line + 1}:{mark.column + 1}" if mark else source
        raise ConfigError(f"{where}: malformed YAML: {getattr(exc, 'problem', exc)}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    return Doc(data, _line_map(node), source)


def read(path) -> tuple[Doc, Path]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc}") from None
    return parse(text, str(path)), path.parent


def _resolve(base: Path, p) -> str:
    p = Path(str(p))
    return str(p if p.is_absolute() else base / p)


_PT_FIELDS = {f.name for f in fields(PTConfig)} - {"d"}


def train_config(doc: Doc, variant: str | None = None) -> tuple[PTConfig, HyperPrior, int]:
    doc.check_keys({"d", "variant", "scale", "seed", "pt", "hyperprior"})
    d = doc.get("d", int, required=True)
    if d < 1:
        raise doc.error("d", "must be at least 1")
    variant = variant or doc.get("variant", str, "pt-nur")
    if variant not in VARIANTS:
        raise doc.error("variant", f"unknown variant {variant!r}; expected one of {sorted(VARIANTS)}")
    scale = doc.get("scale", str, "desk")
    if scale not in ("desk", "full"):
        raise doc.error("scale", "expected 'desk' or 'full'")
    base = PTConfig.desk(d, variant) if scale == "desk" else PTConfig.full(d, variant)
    pt = doc.section("pt")
    pt.check_keys(_PT_FIELDS)
    over = {}
    for f in fields(PTConfig):
        if f.name in pt.data:
            kind = type(getattr(base, f.name))
            val = pt.data[f.name]
            if val is None:
                raise pt.error(f.name, "missing value")
            over[f.name] = pt.get(f.name, kind)
    try:
        cfg = replace(base, **over)
    except ValueError as exc:
        raise doc.error("pt", str(exc)) from None
    hp_doc = doc.section("hyperprior")
    hp_doc.check_keys({"lengthscale", "outputscale", "noise"})
    hp = HyperPrior.default(d)
    ranges = {}
    for key in ("lengthscale", "outputscale", "noise"):
        val = hp_doc.get(key)
        if val is None:
            continue
        if not isinstance(val, list) or len(val) != 2:
            raise hp_doc.error(key, "expected [low, high]")
        try:
            ranges[key] = (float(val[0]), float(val[1]))
        except (TypeError, ValueError):
            raise hp_doc.error(key, "bounds must be numbers") from None
    if ranges:
        try:
            hp = replace(hp, **ranges)
        except ValueError as exc:
            raise doc.error("hyperprior", str(exc)) from None
    return cfg, hp, doc.get("seed", int, 0)


def acq_config(doc: Doc, d: int) -> AcqOptConfig:
    allowed = {f.name for f in fields(AcqOptConfig)}
    doc.check_keys(allowed)
    over = {}
    for f in fields(AcqOptConfig):
        if f.name in doc.data:
            over[f.name] = doc.get(f.name, type(getattr(AcqOptConfig(), f.name)))
    try:
        return replace(AcqOptConfig.for_dim(d), **over)
    except ValueError as exc:
        raise ConfigError(f"{doc._where()}: {exc}") from None


def matrix_config(doc: Doc, base_dir: Path) -> dict:
    doc.check_keys({"objectives", "dims", "kinds", "seeds", "n_init", "n_steps", "checkpoints", "acq",
                    "workers", "gp_fit_restarts"})
    objectives = doc.get("objectives", required=True)
    dims = doc.get("dims", required=True)
    kinds = doc.get("kinds", required=True)
    for key, val in (("objectives", objectives), ("dims", dims), ("kinds", kinds)):
        if not isinstance(val, list) or not val:
            raise doc.error(key, "expected a non-empty list")
    seeds = doc.get("seeds", default=5)
    if isinstance(seeds, int) and not isinstance(seeds, bool):
        seeds = list(range(seeds))
    if not isinstance(seeds, list) or not all(isinstance(s, int) for s in seeds):
        raise doc.error("seeds", "expected a count or a list of integers")
    ck = doc.section("checkpoints")
    checkpoints = {}
    for kind, per_dim in ck.data.items():
        if not isinstance(per_dim, dict):
            raise ck.error(kind, "expected a mapping from dimension to path")
        checkpoints[str(kind)] = {int(k): _resolve(base_dir, v) for k, v in per_dim.items()}
    acq_doc = doc.section("acq")
    return {
        "objectives": [str(o) for o in objectives],
        "dims": [int(x) for x in dims],
        "kinds": [str(k) for k in kinds],
        "seeds": seeds,
        "n_init": doc.get("n_init", int, 10),
        "n_steps": doc.get("n_steps", int, 100),
        "checkpoints": checkpoints,
        "acq": {d: acq_config(acq_doc, d) for d in map(int, dims)},
        "workers": doc.get("workers", int, 1),
        "gp_fit_restarts": doc.get("gp_fit_restarts", int, 5),
    }


def lemma_config(doc: Doc):
    from pfbo.lemma import LemmaConfig

    doc.check_keys({"d", "n_obs", "theta", "etas", "trials", "seed"})
    th = doc.section("theta")
    th.check_keys({"lengthscale", "outputscale", "noise"})
    try:
        theta = GPHyperparams(th.get("lengthscale", float, 0.3), th.get("outputscale", float, 1.0),
                              th.get("noise", float, 1e-2))
    except ValueError as exc:
        raise doc.error("theta", str(exc)) from None
    n_obs = doc.get("n_obs", default=[20])
    n_obs = [n_obs] if isinstance(n_obs, int) else n_obs
    etas = doc.get("etas", default=[1e-1, 1e-2, 1e-3, 1e-4])
    try:
        return [
            LemmaConfig(theta=theta, d=doc.get("d", int, 2), n_obs=int(n), etas=tuple(float(e) for e in etas),
                        trials=doc.get("trials", int, 200), seed=doc.get("seed", int, 0))
            for n in n_obs
        ]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{doc.source}: {exc}") from None
