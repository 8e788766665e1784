"""Substrate contract: ops, gradients, optimizer, schedule, rng, checkpoints."""

import math
import struct

import pytest
import torch

from pswm.substrate import (NumericError, ParamStore, Rng, ShapeError, adamw_step,
                            backward, checkpoint, lr_schedule, stop_grad)
from pswm.substrate import ops


def rel_err(a: torch.Tensor, b: torch.Tensor) -> float:
    return float((a - b).norm() / b.norm().clamp(min=1e-12))


# ---------------------------------------------------------------- basic ops

def test_silu_at_zero():
    assert float(ops.silu(torch.tensor(0.0))) == 0.0


def test_layernorm_constant_vector_is_zero_before_affine():
    x = torch.full((8,), 3.7)
    y = ops.layernorm(x)
    assert y.abs().max() < 1e-3  # eps keeps the zero-variance case finite


def test_fft_impulse():
    x = torch.zeros(4, dtype=torch.complex64)
    x[0] = 1.0
    assert torch.allclose(ops.fft(x), torch.ones(4, dtype=torch.complex64))


@pytest.mark.parametrize("n", [2, 64, 1024, 4096])
def test_fft_roundtrip(n):
    g = torch.Generator().manual_seed(n)
    x = torch.complex(torch.randn(n, generator=g), torch.randn(n, generator=g))
    back = ops.ifft(ops.fft(x))
    assert (back - x).abs().max() < 1e-6 * max(1.0, float(x.abs().max()))


def test_fft_rejects_non_pow2():
    with pytest.raises(ShapeError, match="fft"):
        ops.fft(torch.zeros(12, dtype=torch.complex64))


def test_shape_errors_name_op_and_dims():
    with pytest.raises(ShapeError, match=r"matmul.*\(2, 3\)"):
        ops.matmul(torch.zeros(2, 3), torch.zeros(4, 5))
    with pytest.raises(ShapeError, match="conv2d"):
        ops.conv2d(torch.zeros(1, 3, 8, 8), torch.zeros(4, 5, 4, 4))
    with pytest.raises(ShapeError, match="concat"):
        ops.concat([torch.zeros(2, 3), torch.zeros(3, 3)], dim=-1)
    with pytest.raises(ShapeError, match="glu"):
        ops.glu(torch.zeros(2, 5))


# ---------------------------------------------------------------- gradients

def test_backward_square():
    x = torch.tensor(3.0, requires_grad=True)
    grads = backward(x * x, {"x": x})
    assert float(grads["x"]) == pytest.approx(6.0)


def test_stop_grad_blocks():
    x = torch.tensor(2.0, requires_grad=True)
    y = torch.tensor(5.0, requires_grad=True)
    loss = stop_grad(x) * y
    grads = backward(loss, {"x": x, "y": y})
    assert float(grads["x"]) == 0.0
    assert float(grads["y"]) == pytest.approx(2.0)


def test_backward_rejects_nonscalar():
    x = torch.zeros(3, requires_grad=True)
    with pytest.raises(ShapeError, match="backward"):
        backward(x * 2, {"x": x})


def test_backward_flags_nonfinite_gradient():
    x = torch.tensor(0.0, requires_grad=True)
    loss = torch.log(x)  # grad 1/x = inf at 0
    with pytest.raises(NumericError, match="'x'"):
        backward(loss, {"x": x})


def _fd_check(fn, x: torch.Tensor, tol: float) -> None:
    x = x.double().requires_grad_(True)
    loss = fn(x)
    (grad,) = torch.autograd.grad(loss, [x])
    fd = ops.finite_difference_grad(lambda v: fn(v), x, h=1e-5)
    assert rel_err(grad, fd) < tol, f"rel err {rel_err(grad, fd)}"


SMOOTH_SCALAR = {
    "exp": lambda x: ops.exp(x),
    "log": lambda x: ops.log(x.abs() + 1.2),
    "sigmoid": lambda x: ops.sigmoid(x),
    "silu": lambda x: ops.silu(x),
}


@pytest.mark.parametrize("name", sorted(SMOOTH_SCALAR))
def test_grad_smooth_scalar_ops(name):
    g = torch.Generator().manual_seed(hash(name) % 2**31)
    w = torch.randn(24, generator=g).double()
    x = torch.randn(24, generator=g)
    _fd_check(lambda v: (SMOOTH_SCALAR[name](v) * w).sum(), x, 1e-6)


STRUCTURED = {
    "matmul": lambda x, w: (ops.matmul(x.reshape(4, 6), torch.ones(6, 2, dtype=x.dtype)) * w[:8].reshape(4, 2)).sum(),
    "add": lambda x, w: (ops.add(x, 1.5) * w).sum(),
    "mul": lambda x, w: (ops.mul(x, w) * w).sum(),
    "glu": lambda x, w: (ops.glu(x.reshape(2, 12)) * w[:12].reshape(2, 6)).sum(),
    "softmax": lambda x, w: (ops.softmax(x.reshape(4, 6)) * w.reshape(4, 6)).sum(),
    "layernorm": lambda x, w: (ops.layernorm(x.reshape(4, 6), w[:6].abs() + 0.5, w[6:12]) * w.reshape(4, 6)).sum(),
    "concat": lambda x, w: (ops.concat([x[:12].reshape(2, 6), x[12:].reshape(2, 6)], dim=0) * w.reshape(4, 6)).sum(),
    "reshape": lambda x, w: (ops.reshape(x, (6, 4)) * w.reshape(6, 4)).sum(),
    "gather": lambda x, w: (ops.gather(x.reshape(4, 6), 1, torch.tensor([[0, 2], [1, 3], [5, 0], [4, 4]])) * w[:8].reshape(4, 2)).sum(),
}


@pytest.mark.parametrize("name", sorted(STRUCTURED))
def test_grad_structured_ops(name):
    g = torch.Generator().manual_seed(hash(name) % 2**31)
    w = torch.randn(24, generator=g).double()
    x = torch.randn(24, generator=g)
    _fd_check(lambda v: STRUCTURED[name](v, w), x, 1e-3)


def test_grad_conv_ops():
    g = torch.Generator().manual_seed(77)
    wconv = torch.randn(2, 1, 4, 4, generator=g).double()
    w = torch.randn(256, generator=g).double()

    def conv_loss(v):
        y = ops.conv2d(v.reshape(1, 1, 8, 8), wconv)
        return (y.reshape(-1) * w[:y.numel()]).sum()

    _fd_check(conv_loss, torch.randn(64, generator=g), 1e-3)

    wdec = torch.randn(1, 2, 4, 4, generator=g).double()

    def deconv_loss(v):
        y = ops.conv_transpose2d(v.reshape(1, 1, 4, 4), wdec)
        return (y.reshape(-1) * w[:y.numel()]).sum()

    _fd_check(deconv_loss, torch.randn(16, generator=g), 1e-3)


def test_grad_fft_real_kernel_path():
    # gradient flows through the real-kernel convolution route
    g = torch.Generator().manual_seed(5)
    u = torch.randn(8, generator=g).double()
    w = torch.randn(8, generator=g).double()

    def conv_loss(k):
        kc = torch.zeros(16, dtype=torch.complex128)
        kc[:8] = k.to(torch.complex128)
        uc = torch.zeros(16, dtype=torch.complex128)
        uc[:8] = u.to(torch.complex128)
        y = ops.ifft(ops.fft(uc) * ops.fft(kc)).real[:8]
        return (y * w).sum()

    _fd_check(conv_loss, torch.randn(8, generator=g), 1e-3)


# ---------------------------------------------------------------- optimizer

def _store_with(value: torch.Tensor) -> ParamStore:
    store = ParamStore()
    store.add("p", value)
    return store


def test_adamw_zero_grad_is_identity():
    store = _store_with(torch.tensor([1.0, -2.0]))
    adamw_step(store, {"p": torch.zeros(2)}, lr=1e-3, weight_decay=0.0, clip_norm=10.0)
    assert torch.equal(store["p"], torch.tensor([1.0, -2.0]))


def test_global_norm_clip_halves():
    store = _store_with(torch.zeros(2, dtype=torch.float64))
    g = torch.tensor([1200.0, 1600.0], dtype=torch.float64)  # norm 2000
    norm = adamw_step(store, {"p": g}, lr=0.0, clip_norm=1000.0)
    assert norm == pytest.approx(2000.0)
    # with lr=0 parameters don't move, but the moments saw the halved grads
    assert float(store.m["p"][0]) == pytest.approx(0.1 * 600.0)
    assert float(store.m["p"][1]) == pytest.approx(0.1 * 800.0)


def test_adamw_single_step_matches_hand_calculation():
    p0, g, lr, wd = 0.5, 0.3, 1e-3, 0.01
    store = _store_with(torch.tensor(p0, dtype=torch.float64))
    adamw_step(store, {"p": torch.tensor(g, dtype=torch.float64)}, lr=lr, weight_decay=wd)
    b1, b2, eps = 0.9, 0.999, 1e-8
    m = (1 - b1) * g
    v = (1 - b2) * g * g
    m_hat = m / (1 - b1)
    v_hat = v / (1 - b2)
    expect = p0 - lr * (m_hat / (math.sqrt(v_hat) + eps) + wd * p0)
    assert float(store["p"].detach()) == pytest.approx(expect, abs=1e-12)
    assert store.step == 1


def test_adamw_rejects_nonfinite_lr():
    store = _store_with(torch.tensor(1.0))
    with pytest.raises(ValueError, match="learning rate"):
        adamw_step(store, {"p": torch.tensor(0.1)}, lr=float("nan"))


def test_weight_decay_is_decoupled():
    # with zero gradient, decay still shrinks the parameter (not via moments)
    store = _store_with(torch.tensor(2.0, dtype=torch.float64))
    adamw_step(store, {"p": torch.tensor(0.0, dtype=torch.float64)}, lr=0.1, weight_decay=0.5)
    assert float(store["p"].detach()) == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)
    assert float(store.m["p"]) == 0.0


# ---------------------------------------------------------------- schedule

def test_lr_schedule_endpoints():
    assert lr_schedule(0, 100, 1e-3, 10) == 0.0
    assert lr_schedule(10, 100, 1e-3, 10) == pytest.approx(1e-3)


def test_lr_schedule_cosine_closed_form():
    base, warm, total = 2e-3, 10, 110
    step = (warm + total) // 2
    frac = (step - warm) / (total - warm)
    expect = base * 0.5 * (1 + math.cos(math.pi * frac))
    assert lr_schedule(step, total, base, warm) == pytest.approx(expect, rel=1e-12)


def test_lr_schedule_decays_to_zero():
    assert lr_schedule(100, 100, 1e-3, 10) == pytest.approx(0.0, abs=1e-12)
    assert lr_schedule(250, 100, 1e-3, 10) == pytest.approx(0.0, abs=1e-12)


# ---------------------------------------------------------------- rng

def test_rng_same_seed_same_stream():
    a = Rng(123).normal(16)
    b = Rng(123).normal(16)
    assert torch.equal(a, b)


def test_rng_split_streams_differ():
    r1, r2 = Rng(5).split(2)
    assert not torch.equal(r1.normal(16), r2.normal(16))


def test_rng_split_counter_advances():
    root = Rng(9)
    first = root.split(3)
    second = root.split(3)
    assert not torch.equal(first[0].normal(4), second[0].normal(4))


def test_determinism_same_op_sequence():
    def run():
        rng = Rng(3)
        x = rng.normal(8, 8)
        y = ops.silu(ops.matmul(x, x))
        return ops.layernorm(y)

    assert torch.equal(run(), run())


# ---------------------------------------------------------------- checkpoint

def test_checkpoint_roundtrip_bit_identical(tmp_path):
    store = ParamStore()
    rng = Rng(7)
    store.add("a.w", rng.normal(4, 3))
    store.add("b.scale", torch.ones(5, dtype=torch.float64))
    store.add("c.buf", rng.normal(2, 2), trainable=False)
    adamw_step(store, {"a.w": rng.normal(4, 3), "b.scale": torch.zeros(5, dtype=torch.float64)},
               lr=1e-3)
    path = str(tmp_path / "x.ckpt")
    checkpoint.save(path, store)

    store2 = ParamStore()
    store2.add("a.w", torch.zeros(4, 3))
    store2.add("b.scale", torch.zeros(5, dtype=torch.float64))
    store2.add("c.buf", torch.zeros(2, 2), trainable=False)
    checkpoint.load(path, store2)
    assert torch.equal(store["a.w"], store2["a.w"])
    assert torch.equal(store["c.buf"], store2["c.buf"])
    assert torch.equal(store.m["a.w"], store2.m["a.w"])
    assert torch.equal(store.v["b.scale"], store2.v["b.scale"])
    assert store2.step == 1


def test_checkpoint_binary_layout(tmp_path):
    """Independent struct-level parse of the on-disk format."""
    store = ParamStore()
    store.add("w", torch.tensor([[1.0, 2.0]], dtype=torch.float32))
    path = str(tmp_path / "y.ckpt")
    checkpoint.save(path, store)
    with open(path, "rb") as f:
        raw = f.read()
    assert raw[:4] == b"PSWM"
    (version,) = struct.unpack_from("<I", raw, 4)
    assert version == 1
    pos = 8
    seen = {}
    while pos < len(raw):
        (nlen,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        name = raw[pos:pos + nlen].decode()
        pos += nlen
        dtype_code = raw[pos]
        pos += 1
        (ndim,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        dims = struct.unpack_from(f"<{ndim}Q", raw, pos)
        pos += 8 * ndim
        size = {0: 4, 1: 8, 2: 8, 3: 16}[dtype_code]
        count = 1
        for d in dims:
            count *= d
        seen[name] = (dtype_code, dims, raw[pos:pos + count * size])
        pos += count * size
    assert set(seen) == {"w", "w.m", "w.v", "optim.step"}
    assert seen["w"][1] == (1, 2)
    assert struct.unpack("<2f", seen["w"][2]) == (1.0, 2.0)


def test_checkpoint_rejects_bad_magic(tmp_path):
    path = str(tmp_path / "bad.ckpt")
    with open(path, "wb") as f:
        f.write(b"NOPE" + b"\x00" * 16)
    with pytest.raises(ValueError, match="magic"):
        checkpoint.read_entries(path)


def test_checkpoint_rejects_unknown_parameter(tmp_path):
    store = ParamStore()
    store.add("w", torch.zeros(2))
    path = str(tmp_path / "z.ckpt")
    checkpoint.save(path, store)
    other = ParamStore()
    other.add("different", torch.zeros(2))
    with pytest.raises(KeyError, match="'w'"):
        checkpoint.load(path, other)
