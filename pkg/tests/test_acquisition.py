import numpy as np
import pytest

from pfbo import gp_surrogate as gs
from pfbo.acquisition import AcqOptConfig, ascend, maximize_gp, maximize_pt, pt_candidates
from pfbo.riemann import expected_improvement


def test_config_defaults_and_validation():
    c = AcqOptConfig.for_dim(10)
    assert (c.local_test_points, c.initial_perturbation, c.perturbation_decay) == (1000, 0.5, 0.998)
    assert AcqOptConfig.for_dim(5).perturbation_decay == 0.999
    assert (c.gp_restarts, c.gp_raw_samples) == (10, 500)
    for bad in (dict(local_test_points=0), dict(perturbation_decay=0.0), dict(perturbation_decay=1.5),
                dict(local_fraction=1.2), dict(gp_restarts=0)):
        with pytest.raises(ValueError):
            AcqOptConfig(**bad)


def test_candidates_stay_in_box_and_follow_decay():
    x = np.array([[0.01, 0.99], [0.5, 0.5]])
    y = np.array([0.0, 1.0])
    cfg = AcqOptConfig(local_test_points=400, initial_perturbation=0.5)
    c = pt_candidates(x, y, cfg, 0, np.random.default_rng(0), 2)
    assert c.shape == (400, 2) and np.all((c >= 0) & (c <= 1))
    flat = AcqOptConfig(local_test_points=400, perturbation_decay=1.0)
    a = pt_candidates(x, y, flat, 0, np.random.default_rng(1), 2)
    b = pt_candidates(x, y, flat, 50, np.random.default_rng(1), 2)
    np.testing.assert_array_equal(a, b)
    tight = AcqOptConfig(local_test_points=400, perturbation_decay=0.9, local_fraction=1.0)
    late = pt_candidates(x, y, tight, 60, np.random.default_rng(1), 2)
    assert np.abs(late - x[0]).max() < 0.01
    none = pt_candidates(np.zeros((0, 2)), [], cfg, 0, np.random.default_rng(0), 2)
    assert none.shape == (400, 2)


def test_maximize_pt_is_candidate_argmax_with_one_forward(untrained_1d):
    r = np.random.default_rng(0)
    x, y = r.uniform(size=(8, 1)), r.normal(size=8)
    cfg = AcqOptConfig(local_test_points=300)
    before = untrained_1d.forward_calls
    x_new, ei = maximize_pt(untrained_1d, x, y, y.min(), cfg, 3, 11)
    assert untrained_1d.forward_calls - before == 1
    cand = pt_candidates(x, y, cfg, 3, np.random.default_rng(11), 1)
    all_ei = expected_improvement(untrained_1d.predict(x, y, cand), y.min())
    i = int(np.argmax(all_ei))
    assert ei == all_ei.max() and np.array_equal(x_new, cand[i])
    assert np.all(all_ei[:i] < ei)


def test_ascent_never_decreases():
    f = lambda z: -np.sum((z - 0.3) ** 2, axis=1)
    x, fx, hist = ascend(f, np.random.default_rng(0).uniform(size=(5, 3)), 100)
    assert np.all(np.diff(hist, axis=0) >= 0)
    np.testing.assert_allclose(x, 0.3, atol=1e-3)


def test_maximize_gp_dominates_raw_samples_and_is_deterministic():
    m = gs.fit(np.array([[0.4]]), np.array([1.0]), restarts=2)
    cfg = AcqOptConfig()
    x, ei = maximize_gp(m, 1.0, cfg, 5)
    raw = np.random.default_rng(5).uniform(0, 1, (cfg.gp_raw_samples, 1))
    post = m.predict(raw)
    assert ei >= gs.gaussian_ei(post.mean, post.var, 1.0).max()
    assert np.all((x >= 0) & (x <= 1))
    x2, ei2 = maximize_gp(m, 1.0, cfg, 5)
    assert np.array_equal(x, x2) and ei == ei2
