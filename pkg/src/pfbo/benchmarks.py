"""Synthetic black-box objectives evaluated on the unit cube.

Each objective owns an affine map from ``[0, 1]^d`` onto its canonical box;
surrogates only ever see unit-cube coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np


class DomainError(ValueError):
    pass


class RegistryError(KeyError):
    pass


def ackley(x, a=20.0, b=0.2, c=2 * math.pi):
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[-1]
    return (
        -a * np.exp(-b * np.sqrt(np.sum(x**2, -1) / d))
        - np.exp(np.sum(np.cos(c * x), -1) / d)
        + a
        + math.e
    )


def rastrigin(x):
    x = np.asarray(x, dtype=np.float64)
    return 10.0 * x.shape[-1] + np.sum(x**2 - 10.0 * np.cos(2 * math.pi * x), -1)


def griewank(x):
    x = np.asarray(x, dtype=np.float64)
    i = np.arange(1, x.shape[-1] + 1)
    return np.sum(x**2, -1) / 4000.0 - np.prod(np.cos(x / np.sqrt(i)), -1) + 1.0


def levy(x):
    x = np.asarray(x, dtype=np.float64)
    w = 1.0 + (x - 1.0) / 4.0
    first = np.sin(math.pi * w[..., 0]) ** 2
    mid = np.sum((w[..., :-1] - 1) ** 2 * (1 + 10 * np.sin(math.pi * w[..., :-1] + 1) ** 2), -1)
    last = (w[..., -1] - 1) ** 2 * (1 + np.sin(2 * math.pi * w[..., -1]) ** 2)
    return first + mid + last


def dixon_price(x):
    x = np.asarray(x, dtype=np.float64)
    i = np.arange(2, x.shape[-1] + 1)
    return (x[..., 0] - 1) ** 2 + np.sum(i * (2 * x[..., 1:] ** 2 - x[..., :-1]) ** 2, -1)


def bukin6(x):
    x = np.asarray(x, dtype=np.float64)
    x1, x2 = x[..., 0], x[..., 1]
    return 100.0 * np.sqrt(np.abs(x2 - 0.01 * x1**2)) + 0.01 * np.abs(x1 + 10.0)


def rosenbrock(x):
    x = np.asarray(x, dtype=np.float64)
    return np.sum(100.0 * (x[..., 1:] - x[..., :-1] ** 2) ** 2 + (1 - x[..., :-1]) ** 2, -1)


def styblinski_tang(x):
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * np.sum(x**4 - 16 * x**2 + 5 * x, -1)


def six_hump_camel(x):
    x = np.asarray(x, dtype=np.float64)
    x1, x2 = x[..., 0], x[..., 1]
    return (4 - 2.1 * x1**2 + x1**4 / 3) * x1**2 + x1 * x2 + (-4 + 4 * x2**2) * x2**2


_H6_A = np.array([
    [10, 3, 17, 3.5, 1.7, 8],
    [0.05, 10, 17, 0.1, 8, 14],
    [3, 3.5, 1.7, 10, 17, 8],
    [17, 8, 0.05, 10, 0.1, 14],
])
_H6_P = 1e-4 * np.array([
    [1312, 1696, 5569, 124, 8283, 5886],
    [2329, 4135, 8307, 3736, 1004, 9991],
    [2348, 1451, 3522, 2883, 3047, 6650],
    [4047, 8828, 8732, 5743, 1091, 381],
])
_H_ALPHA = np.array([1.0, 1.2, 3.0, 3.2])


def hartmann6(x):
    x = np.asarray(x, dtype=np.float64)
    inner = np.sum(_H6_A * (x[..., None, :] - _H6_P) ** 2, -1)
    return -np.sum(_H_ALPHA * np.exp(-inner), -1)


def _dixon_price_argmin(d):
    i = np.arange(1, d + 1)
    return 2.0 ** (-(2.0**i - 2) / 2.0**i)


@dataclass(frozen=True)
class Objective:
    name: str
    fn: Callable
    lower: Callable[[int], np.ndarray]
    upper: Callable[[int], np.ndarray]
    optimum: Callable[[int], float]
    argmin: Callable[[int], np.ndarray] | None = None
    dims: tuple[int, ...] | None = None  # None: any dimension

    def supports(self, d: int) -> bool:
        return d >= 1 and (self.dims is None or d in self.dims)

    def check_dim(self, d: int) -> None:
        if not self.supports(d):
            raise RegistryError(f"{self.name} does not support d={d} (supported: {self.dims})")

    def to_canonical(self, x_unit) -> np.ndarray:
        x = np.asarray(x_unit, dtype=np.float64)
        lo, hi = self.lower(x.shape[-1]), self.upper(x.shape[-1])
        return lo + x * (hi - lo)

    def to_unit(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        lo, hi = self.lower(x.shape[-1]), self.upper(x.shape[-1])
        return (x - lo) / (hi - lo)

    def f_star(self, d: int) -> float:
        self.check_dim(d)
        return float(self.optimum(d))

    def x_star_unit(self, d: int) -> np.ndarray | None:
        self.check_dim(d)
        return None if self.argmin is None else self.to_unit(self.argmin(d))


def _box(lo, hi):
    return (lambda d: np.full(d, float(lo))), (lambda d: np.full(d, float(hi)))


def _make(name, fn, lo, hi, optimum, argmin=None, dims=None):
    if callable(lo):
        lower, upper = lo, hi
    else:
        lower, upper = _box(lo, hi)
    return Objective(name, fn, lower, upper, optimum, argmin, dims)


REGISTRY: dict[str, Objective] = {
    o.name: o
    for o in [
        _make("ackley", ackley, -32.768, 32.768, lambda d: 0.0, lambda d: np.zeros(d)),
        _make("rastrigin", rastrigin, -5.12, 5.12, lambda d: 0.0, lambda d: np.zeros(d)),
        _make("griewank", griewank, -600.0, 600.0, lambda d: 0.0, lambda d: np.zeros(d)),
        _make("levy", levy, -10.0, 10.0, lambda d: 0.0, lambda d: np.ones(d)),
        _make("dixonprice", dixon_price, -10.0, 10.0, lambda d: 0.0, _dixon_price_argmin),
        _make(
            "bukin", bukin6,
            lambda d: np.array([-15.0, -3.0]), lambda d: np.array([-5.0, 3.0]),
            lambda d: 0.0, lambda d: np.array([-10.0, 1.0]), dims=(2,),
        ),
        # extras outside the named panel
        _make("rosenbrock", rosenbrock, -5.0, 10.0, lambda d: 0.0, lambda d: np.ones(d),
              dims=tuple(range(2, 65))),
        _make("styblinskitang", styblinski_tang, -5.0, 5.0,
              lambda d: -39.166165703771412 * d, lambda d: np.full(d, -2.903534027771178)),
        _make(
            "sixhumpcamel", six_hump_camel,
            lambda d: np.array([-3.0, -2.0]), lambda d: np.array([3.0, 2.0]),
            lambda d: -1.031628453489877, lambda d: np.array([0.0898420131003, -0.7126564030207]),
            dims=(2,),
        ),
        _make(
            "hartmann", hartmann6, 0.0, 1.0, lambda d: -3.322368011415513,
            lambda d: np.array([0.20168951628, 0.15001068962, 0.47687397731, 0.27533242750, 0.31165161306, 0.65730053480]),
            dims=(6,),
        ),
    ]
}

NAMED_PANEL = ("ackley", "griewank", "rastrigin", "levy", "dixonprice", "bukin")


def get(name: str) -> Objective:
    try:
        return REGISTRY[name.lower()]
    except KeyError:
        raise RegistryError(f"unknown objective {name!r}; known: {sorted(REGISTRY)}") from None


def evaluate(obj: Objective | str, x_unit) -> float | np.ndarray:
    """Objective value at unit-cube point(s) ``x_unit`` (shape ``[d]`` or ``[n, d]``)."""
    if isinstance(obj, str):
        obj = get(obj)
    x = np.asarray(x_unit, dtype=np.float64)
    obj.check_dim(x.shape[-1])
    if np.any(x < 0.0) or np.any(x > 1.0) or not np.all(np.isfinite(x)):
        raise DomainError(f"{obj.name}: input outside the unit cube")
    out = obj.fn(obj.to_canonical(x))
    return float(out) if np.ndim(out) == 0 else out


def simple_regret(obj: Objective | str, best_y: float, d: int) -> float:
    """``best_y - f*``; values down to -1e-9 are treated as zero."""
    if isinstance(obj, str):
        obj = get(obj)
    r = float(best_y) - obj.f_star(d)
    if r < -1e-9:
        raise ValueError(f"{obj.name}: best value {best_y} lies below the known optimum")
    return max(r, 0.0)


def improvement_over_rs(regret_method, regret_rs) -> float | None:
    """Percent reduction of mean final regret relative to random search,
    floored at zero; ``None`` when random search already has zero regret."""
    m = np.asarray(regret_method, dtype=np.float64)
    r = np.asarray(regret_rs, dtype=np.float64)
    if m.shape != r.shape:
        raise ValueError("method and random search need the same number of seeds")
    base = float(np.mean(r))
    if base <= 0:
        return None
    return max(0.0, 100.0 * (base - float(np.mean(m))) / base)
