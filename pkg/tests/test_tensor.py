import zlib

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from pfbo import tensor as T


def loop_matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for t in range(k):
                out[i, j] += a[i, t] * b[t, j]
    return out


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_matmul_matches_triple_loop(m, k, n, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(m, k)), rng.normal(size=(k, n))
    got = T.matmul(T.tensor(a), T.tensor(b)).numpy()
    np.testing.assert_allclose(got, loop_matmul(a, b), rtol=1e-12, atol=1e-12)


def test_batched_matmul_and_shared_right_operand(rng):
    a, b = rng.normal(size=(3, 4, 5)), rng.normal(size=(5, 2))
    got = T.matmul(T.tensor(a), T.tensor(b)).numpy()
    for i in range(3):
        np.testing.assert_allclose(got[i], loop_matmul(a[i], b), atol=1e-12)


@pytest.mark.parametrize("sa,sb", [((2, 3), (4, 2)), ((3,), (3, 2)), ((2, 3, 4), (3, 4, 2))])
def test_matmul_rejects_misaligned_shapes(sa, sb):
    with pytest.raises(T.ShapeError):
        T.matmul(torch.zeros(sa, dtype=torch.float64), torch.zeros(sb, dtype=torch.float64))


def test_add_mul_shape_rules():
    a = torch.zeros(2, 3, dtype=torch.float64)
    assert T.add(a, torch.ones(3, dtype=torch.float64)).shape == (2, 3)
    assert T.mul(a, torch.tensor(2.0, dtype=torch.float64)).shape == (2, 3)
    with pytest.raises(T.ShapeError):
        T.add(a, torch.ones(2, dtype=torch.float64))
    with pytest.raises(T.ShapeError):
        T.linear(a, torch.zeros(4, 5, dtype=torch.float64))


def test_softmax_rows_sum_to_one_and_reject_nan():
    x = T.tensor([[1000.0, 0.0, -1000.0], [1.0, 2.0, 3.0]])
    s = T.softmax(x)
    np.testing.assert_allclose(s.sum(-1).numpy(), 1.0, atol=1e-15)
    assert torch.isfinite(T.log_softmax(x)).all()
    with pytest.raises(T.NonFiniteError):
        T.softmax(T.tensor([[float("nan"), 0.0]]))


def test_gelu_exact_form():
    x = np.linspace(-4, 4, 17)
    from scipy.special import ndtr

    np.testing.assert_allclose(T.gelu(T.tensor(x)).numpy(), x * ndtr(x), atol=1e-14)


def test_layer_norm_normalises():
    x = T.tensor(np.random.default_rng(0).normal(size=(4, 8)) * 3 + 1)
    y = T.layer_norm(x, torch.ones(8, dtype=torch.float64), torch.zeros(8, dtype=torch.float64), eps=0.0)
    np.testing.assert_allclose(y.mean(-1).numpy(), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.pow(2).mean(-1).numpy(), 1.0, atol=1e-12)


def test_gather_and_masked_fill():
    x = T.tensor([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    idx = torch.tensor([[2], [0]])
    np.testing.assert_array_equal(T.gather(x, idx).numpy(), [[3.0], [4.0]])
    m = torch.tensor([True, False, True])
    np.testing.assert_array_equal(T.masked_fill(x, m, 0.0).numpy(), [[0, 2, 0], [0, 5, 0]])
    with pytest.raises(T.ShapeError):
        T.masked_fill(x, torch.tensor([True, False]), 0.0)


def test_backward_contract():
    w = T.tensor([1.0, 2.0], requires_grad=True)
    unused = T.tensor([3.0], requires_grad=True)
    g = T.backward((w * w).sum(), [w, unused])
    np.testing.assert_allclose(g[0].numpy(), [2.0, 4.0])
    np.testing.assert_array_equal(g[1].numpy(), [0.0])
    with pytest.raises(T.ContractError):
        T.backward(w * w, [w])
    with pytest.raises(T.ContractError):
        T.backward(T.tensor(1.0), [w])


SHAPES = [(1,), (3,), (2, 3), (4, 1), (1, 5), (3, 4), (2, 2, 3), (5, 2), (2, 3, 2), (6,), (1, 1), (3, 1, 4)]


def _ops():
    def ln(x):
        d = x.shape[-1]
        w, b = np.random.default_rng(d).normal(size=(2, d))
        return T.layer_norm(x, T.tensor(w), T.tensor(b))

    def gat(x):
        idx = torch.zeros_like(x, dtype=torch.long)
        return T.gather(x, idx[..., :1])

    return {
        "exp": T.exp,
        "log": lambda x: T.log(T.exp(x) + 0.5),
        "gelu": T.gelu,
        "softmax": T.softmax,
        "log_softmax": T.log_softmax,
        "layer_norm": ln,
        "sum": lambda x: T.sum(x, axis=-1),
        "mean": lambda x: T.mean(x, axis=0),
        "add": lambda x: T.add(x, x * 0.5 + 1.0),
        "mul": lambda x: T.mul(x, x),
        "gather": gat,
        "masked_fill": lambda x: T.masked_fill(x, torch.arange(x.shape[-1]) % 2 == 0, 0.0) * x,
    }


@pytest.mark.parametrize("name", list(_ops()))
def test_elementwise_gradients_against_finite_differences(name):
    op = _ops()[name]
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    for shape in SHAPES:
        if name == "layer_norm" and shape[-1] == 1:
            continue  # output is the constant bias
        x = rng.normal(size=shape)
        wts = rng.normal(size=op(T.tensor(x)).shape)
        err = T.grad_check(lambda t: (op(t) * T.tensor(wts)).sum(), [x], h=1e-6)
        assert err < 1e-6, (name, shape, err)


@pytest.mark.parametrize("shape", [((2, 3), (3, 4)), ((1, 5), (5, 1)), ((3, 2, 4), (3, 4, 2)), ((4, 4), (4, 3)),
                                   ((2, 1, 3), (3, 2))])
def test_matmul_and_linear_gradients(shape):
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=shape[0]), rng.normal(size=shape[1])
    assert T.grad_check(lambda x, y: T.matmul(x, y).pow(2).sum(), [a, b], h=1e-6) < 1e-6
    w = rng.normal(size=(3, shape[0][-1]))
    bias = rng.normal(size=3)
    assert T.grad_check(lambda x, ww, bb: T.linear(x, ww, bb).sin().sum(), [a, w, bias], h=1e-6) < 1e-6


def test_finite_difference_oracle_on_known_function():
    g = T.finite_difference_grad(lambda v: float(np.sum(v**3)), np.array([1.0, -2.0]))
    np.testing.assert_allclose(g, [3.0, 12.0], rtol=1e-8)


def test_cholesky_plain_jitter_and_failure():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(5, 5))
    spd = a @ a.T + 5 * np.eye(5)
    L = T.cholesky(spd)
    np.testing.assert_allclose(L @ L.T, spd, atol=1e-12)
    b = rng.normal(size=5)
    np.testing.assert_allclose(spd @ T.cholesky_solve(L, b), b, atol=1e-10)
    v = rng.normal(size=(6, 1))
    singular = v @ v.T  # rank one: needs jitter
    L2 = T.cholesky(singular)
    assert np.all(np.isfinite(L2))
    np.testing.assert_allclose(L2 @ L2.T, singular, atol=1e-5 * np.trace(singular))
    with pytest.raises(T.CholeskyError):
        T.cholesky(-np.eye(3))
    with pytest.raises(T.ShapeError):
        T.cholesky(np.zeros((2, 3)))
    with pytest.raises(T.NonFiniteError):
        T.cholesky(np.array([[np.nan]]))


def test_five_point_stencil_on_known_function():
    g = T.finite_difference_grad(lambda v: float(np.sum(np.sin(v))), np.array([0.3, -1.2]), h=1e-3, order=4)
    np.testing.assert_allclose(g, np.cos([0.3, -1.2]), rtol=1e-11)
