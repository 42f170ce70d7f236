import itertools
import math

import numpy as np
import pytest
from scipy import stats

from pfbo.priors import (HyperPrior, SyntheticDataset, dump_batch, load_batch, sample_dataset, split,
                         split_softmax, split_uniform)
from pfbo.gp import GPHyperparams


def test_hyperprior_ranges_and_text_round_trip(rng):
    hp = HyperPrior.default(4)
    assert hp.lengthscale == pytest.approx((0.1, 2.0))
    for _ in range(200):
        th = hp.sample(rng)
        assert 0.1 <= th.lengthscale <= 2.0
        assert 0.25 <= th.outputscale <= 4.0
        assert 1e-4 <= th.noise <= 1e-2
    assert HyperPrior.parse(hp.describe()) == hp
    with pytest.raises(ValueError):
        HyperPrior((1.0, 0.5), (1, 1), (1e-3, 1e-3))


def test_log_uniform_sampling(rng):
    hp = HyperPrior((0.01, 1.0), (1.0, 1.0), (1e-3, 1e-3))
    logs = np.log10([hp.sample(rng).lengthscale for _ in range(4000)])
    assert stats.kstest(logs, stats.uniform(-2, 2).cdf).pvalue > 1e-3


def test_dataset_shapes_and_determinism():
    hp = HyperPrior.default(3)
    a, b = sample_dataset(3, 50, hp, 9), sample_dataset(3, 50, hp, 9)
    assert a.X.shape == (50, 3) and a.y.shape == (50,)
    assert np.all((a.X >= 0) & (a.X <= 1))
    np.testing.assert_array_equal(a.X, b.X)
    np.testing.assert_array_equal(a.y, b.y)
    with pytest.raises(ValueError):
        sample_dataset(1, 1, hp, 0)


def test_splits_partition_the_dataset(rng):
    ds = sample_dataset(2, 30, HyperPrior.default(2), 1)
    for s in (split_uniform(ds, None, rng), split_softmax(ds, None, rng), split(ds, "uniform", 7, rng)):
        both = np.concatenate([s.obs_index, s.pred_index])
        assert sorted(both) == list(range(30))
        assert 1 <= len(s.obs_index) <= 29
    assert len(split(ds, "uniform", 7, rng).obs_index) == 7
    with pytest.raises(ValueError):
        ds.x_obs
    with pytest.raises(ValueError):
        split(ds, "bogus")


def test_uniform_split_obs_count_is_uniform(rng):
    ds = sample_dataset(1, 6, HyperPrior.default(1), 0)
    counts = np.bincount([len(split_uniform(ds, None, rng).obs_index) for _ in range(5000)], minlength=6)[1:]
    assert stats.chisquare(counts).pvalue > 1e-3


def _weighted_set_prob(w, subset):
    """Probability that sequential weighted draws without replacement yield ``subset``."""
    total = 0.0
    for order in itertools.permutations(subset):
        p, rest = 1.0, w.sum()
        for i in order:
            p *= w[i] / rest
            rest -= w[i]
        total += p
    return total


def test_softmax_split_matches_weighted_draw_oracle(rng):
    y = np.array([0.0, 1.0, -1.0, 0.5])
    ds = SyntheticDataset(np.zeros((4, 1)), y, GPHyperparams(1, 1))
    w = np.exp(y)
    subsets = list(itertools.combinations(range(4), 2))
    probs = np.array([_weighted_set_prob(w, s) for s in subsets])
    assert probs.sum() == pytest.approx(1.0)
    n = 20000
    seen = {s: 0 for s in subsets}
    for _ in range(n):
        seen[tuple(sorted(split_softmax(ds, 2, rng).obs_index))] += 1
    obs = np.array([seen[s] for s in subsets])
    assert stats.chisquare(obs, probs * n).pvalue > 1e-3


def test_softmax_split_prefers_large_targets_for_observation(rng):
    hp = HyperPrior.default(1)
    diff = []
    for i in range(1000):
        s = split_softmax(sample_dataset(1, 40, hp, i), None, rng)
        diff.append(s.y_obs.mean() - s.y_pred.mean())
    assert stats.ttest_1samp(diff, 0.0, alternative="greater").pvalue < 1e-3


def test_constant_targets_split_uniformly(rng):
    ds = SyntheticDataset(np.zeros((5, 1)), np.full(5, 3.0), GPHyperparams(1, 1))
    counts = np.zeros(5)
    for _ in range(1000):
        counts[split_softmax(ds, 1, rng).obs_index] += 1
    assert stats.chisquare(counts).pvalue > 1e-3


def test_dump_round_trip(tmp_path, rng):
    hp = HyperPrior.default(2)
    sets = [sample_dataset(2, 12, hp, 0), split_softmax(sample_dataset(2, 12, hp, 1), 4, rng)]
    dump_batch(tmp_path / "b.bin", sets)
    raw = (tmp_path / "b.bin").read_bytes()
    assert raw[:4] == b"PFDS" and len(raw) == 16 + 2 * 4 * 12 * 8
    back = load_batch(tmp_path / "b.bin")
    for a, b in zip(sets, back):
        np.testing.assert_array_equal(a.X, b.X)
        np.testing.assert_array_equal(a.y, b.y)
        assert a.is_split == b.is_split
    np.testing.assert_array_equal(back[1].obs_index, np.sort(sets[1].obs_index))
    with pytest.raises(ValueError):
        dump_batch(tmp_path / "c.bin", [sets[0], sample_dataset(2, 13, hp, 0)])
