"""Differentiable tensor op set.

Tensors are `torch.Tensor` values (contiguous, row-major); reverse-mode
gradients come from torch autograd. The exported surface is deliberately
fixed: matmul, elementwise (add, mul, exp, log, sigmoid, silu, glu),
softmax, layernorm, conv2d / conv_transpose2d with kernel 4 stride 2,
1-D complex FFT/iFFT on power-of-two lengths, concat, reshape, gather,
and stop_grad. Everything above the substrate is written against these.

All training math runs in f32; gradient-check mode builds the same graph
in f64 (complex parts widen to complex128 accordingly).
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

Tensor = torch.Tensor


class ShapeError(ValueError):
    """Raised when an op receives incompatible shapes; names op and dims."""

    def __init__(self, op: str, detail: str):
        self.op = op
        super().__init__(f"{op}: {detail}")


class NumericError(RuntimeError):
    """Raised on non-finite values where the contract forbids them."""


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[-1] != b.shape[-2 if b.dim() > 1 else -1]:
        raise ShapeError("matmul", f"inner dims {tuple(a.shape)} x {tuple(b.shape)}")
    return a @ b


def add(a: Tensor, b: Tensor) -> Tensor:
    return a + b


def mul(a: Tensor, b: Tensor) -> Tensor:
    return a * b


def exp(x: Tensor) -> Tensor:
    return torch.exp(x)


def log(x: Tensor) -> Tensor:
    return torch.log(x)


def sigmoid(x: Tensor) -> Tensor:
    return torch.sigmoid(x)


def silu(x: Tensor) -> Tensor:
    return F.silu(x)


def glu(x: Tensor, dim: int = -1) -> Tensor:
    if x.shape[dim] % 2 != 0:
        raise ShapeError("glu", f"dim {dim} of size {x.shape[dim]} is odd")
    return F.glu(x, dim=dim)


def softmax(x: Tensor, dim: int = -1) -> Tensor:
    return torch.softmax(x, dim=dim)


def softplus(x: Tensor) -> Tensor:
    return F.softplus(x)


LAYERNORM_EPS = 1e-5


def layernorm(x: Tensor, scale: Tensor | None = None, bias: Tensor | None = None) -> Tensor:
    """Normalize the last dim to zero mean / unit variance, then affine.

    Statistics accumulate in f64 when the normalized axis is >= 1024
    (long-sequence stability); eps = 1e-5 keeps constant inputs finite.
    """
    n = x.shape[-1]
    if scale is not None and scale.shape != (n,):
        raise ShapeError("layernorm", f"scale shape {tuple(scale.shape)} vs feature dim {n}")
    if n >= 1024 and x.dtype == torch.float32:
        xs = x.double()
        mean = xs.mean(dim=-1, keepdim=True)
        var = xs.var(dim=-1, unbiased=False, keepdim=True)
        y = ((xs - mean) / torch.sqrt(var + LAYERNORM_EPS)).to(x.dtype)
        if scale is not None:
            y = y * scale
        if bias is not None:
            y = y + bias
        return y
    # same statistics through the fused kernel (scale/bias applied inside)
    return F.layer_norm(x, (n,), scale, bias, eps=LAYERNORM_EPS)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Strided conv, kernel 4, stride 2, padding 1 (halves even spatial dims)."""
    if x.dim() != 4:
        raise ShapeError("conv2d", f"expected NCHW input, got {tuple(x.shape)}")
    if weight.shape[-2:] != (4, 4):
        raise ShapeError("conv2d", f"kernel must be 4x4, got {tuple(weight.shape)}")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError("conv2d", f"input channels {x.shape[1]} vs weight {weight.shape[1]}")
    return F.conv2d(x, weight, bias, stride=2, padding=1)


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Transposed conv, kernel 4, stride 2, padding 1 (doubles spatial dims)."""
    if x.dim() != 4:
        raise ShapeError("conv_transpose2d", f"expected NCHW input, got {tuple(x.shape)}")
    if weight.shape[-2:] != (4, 4):
        raise ShapeError("conv_transpose2d", f"kernel must be 4x4, got {tuple(weight.shape)}")
    if x.shape[1] != weight.shape[0]:
        raise ShapeError("conv_transpose2d", f"input channels {x.shape[1]} vs weight {weight.shape[0]}")
    return F.conv_transpose2d(x, weight, bias, stride=2, padding=1)


def _check_pow2(op: str, n: int) -> None:
    if n < 1 or (n & (n - 1)) != 0:
        raise ShapeError(op, f"length {n} is not a power of two; zero-pad the input")


def fft(x: Tensor, dim: int = -1) -> Tensor:
    """1-D complex FFT; power-of-two lengths only (callers zero-pad)."""
    _check_pow2("fft", x.shape[dim])
    return torch.fft.fft(x, dim=dim)


def ifft(x: Tensor, dim: int = -1) -> Tensor:
    _check_pow2("ifft", x.shape[dim])
    return torch.fft.ifft(x, dim=dim)


def concat(tensors: list[Tensor], dim: int = -1) -> Tensor:
    ref = tensors[0].shape
    for t in tensors[1:]:
        a, b = list(ref), list(t.shape)
        a[dim] = b[dim] = 0
        if a != b:
            raise ShapeError("concat", f"{tuple(ref)} vs {tuple(t.shape)} along dim {dim}")
    return torch.cat(tensors, dim=dim)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    return x.reshape(shape)


def gather(x: Tensor, dim: int, index: Tensor) -> Tensor:
    return torch.gather(x, dim, index)


def stop_grad(x: Tensor) -> Tensor:
    """Block gradient flow; forward value unchanged."""
    return x.detach()


def backward(loss: Tensor, params: dict[str, Tensor]) -> dict[str, Tensor]:
    """Reverse-mode gradients of a scalar loss for every named parameter.

    Parameters unreachable from the loss get zero gradients. Any NaN/Inf
    gradient aborts with the first offending parameter name.
    """
    if loss.dim() != 0:
        raise ShapeError("backward", f"loss must be scalar, got {tuple(loss.shape)}")
    names = list(params.keys())
    leaves = [params[n] for n in names]
    grads = torch.autograd.grad(loss, leaves, allow_unused=True)
    out = {}
    for name, leaf, g in zip(names, leaves, grads):
        if g is None:
            g = torch.zeros_like(leaf)
        if not torch.isfinite(g).all():
            raise NumericError(f"non-finite gradient for parameter '{name}'")
        out[name] = g
    return out


def finite_difference_grad(fn, x: Tensor, h: float = 1e-5) -> Tensor:
    """Central-difference gradient of scalar fn(x); the oracle side of
    gradient checks. Works element by element on an f64 copy of x."""
    x = x.detach().double()
    g = torch.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + h
        fp = float(fn(x.reshape(x.shape)))
        flat[i] = orig - h
        fm = float(fn(x.reshape(x.shape)))
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g
