import math
from dataclasses import replace

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from conftest import tiny_config
from pfbo import checkpoint
from pfbo import tensor as T
from pfbo.priors import HyperPrior
from pfbo.pt import (STD_FLOOR, ConfigError, PTConfig, PTSurrogate, ProbeScenario, TrainingDiverged, batch_loss,
                     build_training_spec, init_model, lr_factor, make_batch, regulariser, sensitivity_probe,
                     standardize, train)
from pfbo.riemann import PROB_FLOOR


def test_config_validation_and_variants():
    with pytest.raises(ConfigError):
        PTConfig(emb=10, heads=4)
    with pytest.raises(ConfigError):
        PTConfig(eps=0.0, reg_weight=1.0)
    with pytest.raises(ConfigError):
        PTConfig(eps=-1.0)
    labels = {v: PTConfig.desk(1, v).label for v in ("pt", "pt-r", "pt-nu", "pt-nur")}
    assert labels == {"pt": "PT", "pt-r": "PT-Rε", "pt-nu": "PT-ν", "pt-nur": "PT-νRε"}
    assert PTConfig.desk(1, "pt-nur").split == "softmax" and PTConfig.desk(1, "pt-nur").reg_weight == 1.0
    assert PTConfig.desk(1, "pt").reg_weight == 0.0 and PTConfig.desk(1, "pt").split == "uniform"
    p = PTConfig.full(10, "pt-r")
    assert (p.eps, p.batch_size, p.dataset_size, p.emb, p.layers, p.heads) == (1.0, 4, 4500, 512, 6, 4)
    assert PTConfig.from_text(p.to_text()) == p


def test_standardize():
    assert standardize([]) == (0.0, 1.0)
    assert standardize([3.0]) == (3.0, STD_FLOOR)
    m, s = standardize([1.0, 3.0])
    assert (m, s) == (2.0, 1.0)


def test_lr_schedule():
    cfg = PTConfig(epochs=10, warmup_epochs=2, steps_per_epoch=5)
    f = [lr_factor(s, cfg) for s in range(cfg.total_steps)]
    assert f[0] == pytest.approx(0.1) and f[9] == pytest.approx(1.0)
    assert f[10] == pytest.approx(1.0)
    assert all(a >= b for a, b in zip(f[10:], f[11:]))
    assert f[-1] < 1e-2


def brute_regulariser(p, x, eps):
    n = len(p)
    total = 0.0
    for j in range(n):
        for i in range(n):
            if i == j:
                continue
            w = max(0.0, 1.0 - np.linalg.norm(x[j] - x[i]) / eps)
            if w > 0:
                lq = np.log(np.maximum(p[i], PROB_FLOOR))
                lp = np.log(np.maximum(p[j], PROB_FLOOR))
                total += w * np.sum(p[j] * (lp - lq))
    return total / n


def test_regulariser_matches_pairwise_loop(rng):
    for _ in range(10):
        n, k, d = int(rng.integers(2, 12)), int(rng.integers(2, 6)), int(rng.integers(1, 3))
        p = rng.dirichlet(np.ones(k), size=n)
        x = rng.uniform(size=(n, d))
        assert regulariser(p, x, 0.4) == pytest.approx(brute_regulariser(p, x, 0.4), rel=1e-10, abs=1e-14)


def test_regulariser_hand_cases():
    same = np.tile([0.2, 0.8], (3, 1))
    assert regulariser(same, np.array([[0.1], [0.11], [0.12]]), 0.5) == 0.0
    p = np.array([[1.0, 0.0], [0.5, 0.5]])
    assert regulariser(p, np.array([[0.0], [0.5]]), 0.5) == 0.0  # distance exactly eps
    # distance eps/2: weight 1/2, KL([1,0] || [.5,.5]) = log 2
    forward = 0.5 * math.log(2)
    backward = 0.5 * (0.5 * math.log(0.5 / 1.0) + 0.5 * math.log(0.5 / PROB_FLOOR))
    assert regulariser(p, np.array([[0.0], [0.25]]), 0.5) == pytest.approx((forward + backward) / 2, rel=1e-10)
    assert regulariser(p, np.array([[0.0], [0.9]]), 0.5) == 0.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 1.0), st.floats(1.0, 3.0))
def test_regulariser_monotone_in_eps(seed, eps, grow):
    r = np.random.default_rng(seed)
    p = r.dirichlet(np.ones(4), size=8)
    x = r.uniform(size=(8, 2))
    assert regulariser(p, x, eps * grow) >= regulariser(p, x, eps) - 1e-12


def test_batches_are_deterministic_and_standardised():
    cfg = tiny_config()
    hp = HyperPrior.default(1)
    a, b = make_batch(cfg, hp, 3, 5), make_batch(cfg, hp, 3, 5)
    np.testing.assert_array_equal(a.x_obs, b.x_obs)
    np.testing.assert_array_equal(a.y_pred, b.y_pred)
    assert a.x_obs.shape[0] == cfg.batch_size and a.x_obs.shape[1] + a.x_pred.shape[1] == cfg.dataset_size
    if a.y_obs.shape[1] > 1:
        np.testing.assert_allclose(a.y_obs.mean(1), 0.0, atol=1e-12)
    c = make_batch(cfg, hp, 3, 6)
    assert not np.array_equal(a.x_pred[0, :1], c.x_pred[0, :1])


def test_bucket_spec_size():
    cfg = tiny_config()
    spec = build_training_spec(cfg, HyperPrior.default(1), 0)
    assert spec.n_buckets == cfg.n_buckets


def test_forward_rows_are_simplexes(untrained_1d, rng):
    post = untrained_1d.predict(rng.uniform(size=(6, 1)), rng.normal(size=6), rng.uniform(size=(9, 1)))
    np.testing.assert_allclose(post.probs.sum(1), 1.0, atol=1e-6)
    empty = untrained_1d.predict(np.zeros((0, 1)), [], rng.uniform(size=(3, 1)))
    np.testing.assert_array_equal(empty.spec.borders, untrained_1d.spec.borders)
    with pytest.raises(T.ShapeError):
        untrained_1d.model(torch.zeros(1, 2, 3), torch.zeros(1, 2), torch.zeros(1, 1, 3))


def _loss_grad_error(cfg, seed=0, n_params=8):
    """Autograd versus central differences (in float64) on random scalar parameters."""
    hp = HyperPrior.default(cfg.d)
    spec = build_training_spec(cfg, hp, seed)
    batch = make_batch(cfg, hp, seed, 0)
    model = init_model(cfg, seed)
    ref = init_model(replace(cfg, precision="f64"), seed)
    params = dict(model.named_parameters())
    ref_params = dict(ref.named_parameters())
    total, _, _ = batch_loss(model, spec, batch, cfg)
    grads = dict(zip(params, T.backward(total, list(params.values()))))
    r = np.random.default_rng(seed)
    names = sorted(params)
    picks = [(names[i], int(r.integers(params[names[i]].numel()))) for i in r.choice(len(names), n_params)]
    f64 = replace(cfg, precision="f64")
    analytic, numeric = [], []
    for name, idx in picks:
        p = ref_params[name].data.view(-1)
        orig = p[idx].item()
        h = 1e-6 * max(1.0, abs(orig))

        def f(v):
            p[idx] = v
            with torch.no_grad():
                return float(batch_loss(ref, spec, batch, f64)[0])

        numeric.append((f(orig + h) - f(orig - h)) / (2 * h))
        p[idx] = orig
        analytic.append(float(grads[name].reshape(-1)[idx]))
    return T.relative_error(analytic, numeric)


@pytest.mark.parametrize("variant", ["pt", "pt-nur"])
def test_full_loss_gradients(variant):
    cfg = tiny_config(variant=variant, eps=0.5)
    assert _loss_grad_error(replace(cfg, precision="f64")) < 1e-6
    assert _loss_grad_error(cfg) < 1e-3


def test_zero_weight_regulariser_leaves_training_unchanged():
    a = train(tiny_config(variant="pt", eps=0.3), seed=1)
    b = train(tiny_config(variant="pt", eps=0.9), seed=1)
    assert a.parameter_digest() == b.parameter_digest()
    np.testing.assert_array_equal(a.history, b.history)


def test_training_is_deterministic_and_records_history():
    cfg = tiny_config(variant="pt-nur")
    a, b = train(cfg, seed=4), train(cfg, seed=4)
    assert a.parameter_digest() == b.parameter_digest()
    assert a.history.shape == (cfg.epochs, 5)
    assert np.all(a.history[:, 2] >= 0)


def test_divergence_dumps_state(tmp_path, monkeypatch):
    import pfbo.pt as ptmod

    real = ptmod.batch_loss

    def broken(*args, **kw):
        total, ce, reg = real(*args, **kw)
        return total * float("nan"), ce, reg

    monkeypatch.setattr(ptmod, "batch_loss", broken)
    with pytest.raises(TrainingDiverged) as err:
        train(tiny_config(), seed=0, dump_dir=tmp_path)
    assert err.value.dump_path is not None and err.value.dump_path.exists()


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    sur = train(tiny_config(variant="pt-r"), seed=2)
    raw = checkpoint.to_bytes(sur)
    assert raw[:4] == b"PFBO"
    back = checkpoint.from_bytes(raw)
    assert checkpoint.to_bytes(back) == raw
    assert back.cfg == sur.cfg and back.parameter_digest() == sur.parameter_digest()
    np.testing.assert_array_equal(back.spec.borders, sur.spec.borders)
    np.testing.assert_array_equal(back.history, sur.history)
    x = np.random.default_rng(0).uniform(size=(5, 1))
    np.testing.assert_array_equal(sur.predict(x, np.arange(5.0), x).probs, back.predict(x, np.arange(5.0), x).probs)
    checkpoint.save(tmp_path / "m.pfbo", sur)
    assert (tmp_path / "m.pfbo").read_bytes() == raw
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.from_bytes(b"XXXX" + raw[4:])
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.from_bytes(raw + b"\0")


def test_checkpoint_rejects_inconsistent_shapes():
    sur = train(tiny_config(), seed=0)
    raw = checkpoint.to_bytes(sur).replace(b"emb=16\n", b"emb=32\n")
    with pytest.raises(checkpoint.CheckpointError):
        checkpoint.from_bytes(raw)


def test_sensitivity_probe_report(untrained_1d, tmp_path):
    rep = sensitivity_probe(untrained_1d, ProbeScenario(seed=0, k_max=4))
    assert rep.kl_step[0] == 0.0 and rep.kl_from_start[0] == 0.0
    assert len(rep.k) == 5 and np.all(rep.kl_step >= 0)
    rep.to_csv(tmp_path / "probe.csv")
    assert (tmp_path / "probe.csv").read_text().splitlines()[0] == "k,kl_step,mean,variance"


@pytest.mark.slow
def test_smoke_training_reduces_cross_entropy():
    cfg = replace(PTConfig.desk(1, "pt"), layers=2, epochs=50, warmup_epochs=5, lr=3e-3)
    h = train(cfg, seed=0).history
    assert h[-3:, 1].mean() <= 0.8 * h[:3, 1].mean()


def test_nearby_kl_matches_pairwise_oracle(untrained_1d):
    from pfbo.priors import sample_dataset, split
    from pfbo.pt import PROB_FLOOR, STREAM_HELDOUT, nearby_kl
    from pfbo.riemann import RiemannPosterior, kl

    sur, eps = untrained_1d, 0.1
    got = nearby_kl(sur, eps, n_datasets=1, seed=7)
    rng = np.random.default_rng([7, STREAM_HELDOUT, 0])
    ds = split(sample_dataset(1, sur.cfg.dataset_size, sur.hyperprior, rng), "uniform", None, rng)
    post = sur.predict(ds.x_obs, ds.y_obs, ds.x_pred)
    p = np.maximum(post.probs, PROB_FLOOR)
    vals = []
    for j in range(len(p)):
        for i in range(len(p)):
            if i != j and abs(ds.x_pred[j, 0] - ds.x_pred[i, 0]) < eps:
                vals.append(float(kl(RiemannPosterior(post.spec, p[j:j + 1]), RiemannPosterior(post.spec, p[i:i + 1]))))
    assert vals and got == pytest.approx(np.mean(vals), rel=1e-9, abs=1e-12)
    assert got >= 0
