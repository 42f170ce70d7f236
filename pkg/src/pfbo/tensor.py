"""Dense tensor operations with reverse-mode differentiation.

Tensors are ``torch.Tensor`` objects; torch's autograd tape plays the role of
the computation graph.  The functions here add the contracts the rest of the
package relies on (shape checks, finiteness checks, no implicit broadcasting
beyond a leading batch dimension) and provide an independent
central-difference gradient oracle used by the test-suite.

Cholesky factorisation lives here as well but works on numpy arrays since the
GP code is plain f64 numpy.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
import torch

DEFAULT_DTYPE = torch.float64

_DTYPES = {"f64": torch.float64, "f32": torch.float32}


class ShapeError(ValueError):
    """Operand extents are incompatible."""


class NonFiniteError(FloatingPointError):
    """A NaN or infinity reached an operation that forbids it."""


class ContractError(ValueError):
    """A precondition of an operation was violated."""


class CholeskyError(np.linalg.LinAlgError):
    """Matrix stayed indefinite after all jitter retries."""


def dtype_of(precision: str) -> torch.dtype:
    try:
        return _DTYPES[precision]
    except KeyError:
        raise ContractError(f"unknown precision {precision!r}, expected f32 or f64") from None


def tensor(data, dtype: torch.dtype = DEFAULT_DTYPE, requires_grad: bool = False) -> torch.Tensor:
    t = torch.as_tensor(np.asarray(data), dtype=dtype).clone()
    if requires_grad:
        t.requires_grad_(True)
    return t


def _check_finite(x: torch.Tensor, op: str) -> None:
    if not torch.isfinite(x).all():
        raise NonFiniteError(f"{op}: non-finite input")


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Matrix product of ``[..., m, k]`` and ``[..., k, n]``.

    Leading batch extents must match exactly; a 2-D right operand is shared
    across the batch of the left operand.
    """
    if a.dim() < 2 or b.dim() < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {tuple(a.shape)} and {tuple(b.shape)}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {tuple(a.shape)} x {tuple(b.shape)}")
    if b.dim() > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul batch extents differ: {tuple(a.shape)} x {tuple(b.shape)}")
    return a @ b


def linear(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor | None = None) -> torch.Tensor:
    """``x @ weight.T + bias`` with weight stored as ``[out, in]``."""
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear expects last extent {weight.shape[1]}, got {tuple(x.shape)}")
    out = x @ weight.transpose(0, 1)
    if bias is not None:
        out = out + bias
    return out


def add(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _same_or_trailing(a, b, "add")
    return a + b


def mul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    _same_or_trailing(a, b, "mul")
    return a * b


def _same_or_trailing(a: torch.Tensor, b: torch.Tensor, op: str) -> None:
    # allowed: equal shapes, a scalar, or b matching a's trailing extents (bias-style)
    if a.shape == b.shape or a.dim() == 0 or b.dim() == 0:
        return
    if b.dim() <= a.dim() and a.shape[a.dim() - b.dim():] == b.shape:
        return
    raise ShapeError(f"{op}: shapes {tuple(a.shape)} and {tuple(b.shape)} do not align")


def exp(x: torch.Tensor) -> torch.Tensor:
    return torch.exp(x)


def log(x: torch.Tensor, floor: float = 0.0) -> torch.Tensor:
    if floor > 0:
        x = torch.clamp(x, min=floor)
    return torch.log(x)


def sum(x: torch.Tensor, axis: int | None = None, keepdim: bool = False) -> torch.Tensor:  # noqa: A001
    if axis is None:
        return x.sum()
    return x.sum(dim=axis, keepdim=keepdim)


def mean(x: torch.Tensor, axis: int | None = None, keepdim: bool = False) -> torch.Tensor:
    if axis is None:
        return x.mean()
    return x.mean(dim=axis, keepdim=keepdim)


def softmax(x: torch.Tensor, axis: int = -1) -> torch.Tensor:
    if torch.isnan(x).any():
        raise NonFiniteError("softmax: NaN input")
    shifted = x - x.max(dim=axis, keepdim=True).values.detach()
    e = torch.exp(shifted)
    return e / e.sum(dim=axis, keepdim=True)


def log_softmax(x: torch.Tensor, axis: int = -1) -> torch.Tensor:
    if torch.isnan(x).any():
        raise NonFiniteError("log_softmax: NaN input")
    shifted = x - x.max(dim=axis, keepdim=True).values.detach()
    return shifted - torch.log(torch.exp(shifted).sum(dim=axis, keepdim=True))


def gelu(x: torch.Tensor) -> torch.Tensor:
    """Exact (erf) Gaussian error linear unit."""
    return 0.5 * x * (1.0 + torch.erf(x / math.sqrt(2.0)))


def layer_norm(x: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    if weight.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
        raise ShapeError(f"layer_norm affine params must have shape {tuple(x.shape[-1:])}")
    mu = x.mean(dim=-1, keepdim=True)
    var = ((x - mu) ** 2).mean(dim=-1, keepdim=True)
    return (x - mu) / torch.sqrt(var + eps) * weight + bias


def gather(x: torch.Tensor, index: torch.Tensor, axis: int = -1) -> torch.Tensor:
    """Pick ``x[..., index[...]]`` along ``axis``; index has x's rank."""
    if index.dim() != x.dim():
        raise ShapeError("gather: index rank must equal input rank")
    return torch.gather(x, axis, index.long())


def masked_fill(x: torch.Tensor, mask: torch.Tensor, value: float) -> torch.Tensor:
    if mask.shape != x.shape[x.dim() - mask.dim():]:
        raise ShapeError(f"masked_fill: mask {tuple(mask.shape)} does not match {tuple(x.shape)}")
    return x.masked_fill(mask.bool(), value)


def backward(loss: torch.Tensor, params: Sequence[torch.Tensor]) -> list[torch.Tensor]:
    """Gradients of a scalar ``loss`` with respect to each leaf in ``params``.

    Leaves that ``loss`` does not depend on receive zero gradients.
    """
    if loss.numel() != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    if not loss.requires_grad:
        raise ContractError("loss is not connected to any differentiable leaf")
    grads = torch.autograd.grad(loss.reshape(()), list(params), allow_unused=True)
    return [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]


# central-difference stencils: (offsets in units of h, weights, denominator in units of h)
_STENCILS = {
    2: ((1, -1), (1.0, -1.0), 2.0),
    4: ((2, 1, -1, -2), (-1.0, 8.0, -8.0, 1.0), 12.0),
}


def finite_difference_grad(
    f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5, order: int = 2
) -> np.ndarray:
    """Central-difference gradient of a scalar function of a float64 array.

    ``order=4`` uses the five-point stencil, which tolerates a larger ``h``
    and so loses less to round-off when the gradient is tiny.
    """
    offsets, weights, denom = _STENCILS[order]
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        acc = 0.0
        for k, w in zip(offsets, weights):
            flat[i] = orig + k * h
            acc += w * f(x)
        flat[i] = orig
        g[i] = acc / (denom * h)
    return grad


def relative_error(analytic, numeric) -> float:
    """Max-norm error relative to the max-norm of the reference gradient."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(float(np.max(np.abs(n))), 1e-12)
    return float(np.max(np.abs(a - n)) / scale)


def grad_check(
    fn: Callable[..., torch.Tensor], inputs: Sequence[np.ndarray], h: float = 1e-5, order: int = 2
) -> float:
    """Worst relative error between autograd and central differences.

    ``fn`` maps float64 tensors to a scalar tensor.
    """
    leaves = [tensor(x, requires_grad=True) for x in inputs]
    grads = backward(fn(*leaves), leaves)
    worst = 0.0
    for k, x in enumerate(inputs):
        def f_k(v, k=k):
            args = [tensor(v if j == k else inputs[j]) for j in range(len(inputs))]
            with torch.no_grad():
                return float(fn(*args))

        num = finite_difference_grad(f_k, x, h, order)
        worst = max(worst, relative_error(grads[k].numpy(), num))
    return worst


def cholesky(a: np.ndarray, max_tries: int = 6) -> np.ndarray:
    """Lower Cholesky factor, adding diagonal jitter on failure.

    The first retry adds ``1e-8 * trace(a) / n``; the jitter doubles on each
    further retry, up to ``max_tries`` retries.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"cholesky needs a square matrix, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NonFiniteError("cholesky: non-finite input")
    n = a.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    try:
        return scipy.linalg.cholesky(a, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        pass
    jitter = 1e-8 * max(np.trace(a) / n, 1e-300)
    for _ in range(max_tries):
        try:
            return scipy.linalg.cholesky(a + jitter * np.eye(n), lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            jitter *= 2.0
    raise CholeskyError(f"matrix not positive definite after {max_tries} jitter retries")


def cholesky_solve(chol: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``A x = b`` given the lower factor of ``A``."""
    return scipy.linalg.cho_solve((chol, True), b, check_finite=False)
