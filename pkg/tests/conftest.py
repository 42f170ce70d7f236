import warnings

import numpy as np
import pytest
import torch

from pfbo.pt import PTConfig, PTSurrogate, build_training_spec
from pfbo.priors import HyperPrior

warnings.filterwarnings("ignore", category=UserWarning)
torch.set_num_threads(1)


def tiny_config(d=1, variant="pt", **kw) -> PTConfig:
    base = dict(d=d, emb=16, layers=1, heads=2, epochs=3, warmup_epochs=1, steps_per_epoch=2,
                batch_size=2, dataset_size=40, eps=0.2, n_buckets=20)
    base.update(kw)
    return PTConfig(**base).with_variant(variant)


@pytest.fixture
def tiny_cfg():
    return tiny_config()


@pytest.fixture(scope="session")
def untrained_1d():
    cfg = tiny_config()
    spec = build_training_spec(cfg, HyperPrior.default(1), 0)
    return PTSurrogate(cfg, spec, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance-criterion outcomes, printed once at the end of the session
CRITERIA: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    CRITERIA[number] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
