"""SSM core: initialization, discretization, and parallel/step equivalence."""

import math

import numpy as np
import pytest
import scipy.linalg
import torch

from pswm.ssm import (DiscreteSsm, SsmLayer, SsmParams, associative_scan,
                      discretize, dplr_kernel, hippo_init, hippo_legs_matrix,
                      pssm_parallel, pssm_step, scan_combine)
from pswm.substrate import ParamStore, Rng
from pswm.substrate.ops import ShapeError


# ------------------------------------------------------------- initialization

def test_legs_matrix_closed_form_n2():
    a = hippo_legs_matrix(2)
    expect = np.array([[-1.0, 0.0], [-math.sqrt(3.0), -2.0]])
    assert np.allclose(a, expect)


def test_legs_matrix_closed_form_entries():
    n = 6
    a = hippo_legs_matrix(n)
    for i in range(n):
        for k in range(n):
            if i > k:
                assert a[i, k] == pytest.approx(-math.sqrt((2 * i + 1) * (2 * k + 1)))
            elif i == k:
                assert a[i, k] == pytest.approx(-(i + 1))
            else:
                assert a[i, k] == 0.0


def test_legs_n1():
    assert np.allclose(hippo_legs_matrix(1), [[-1.0]])
    lam, p, b, v = hippo_init(1)
    # rank-1 split: normal part -1/2, correction p p* = 1/2, total -1
    reassembled = complex(lam[0]) - complex(p[0]) * complex(p[0].conj())
    assert reassembled == pytest.approx(-1.0)


@pytest.mark.parametrize("n", [2, 4, 8, 16, 64])
def test_dplr_reassembly_matches_dense(n):
    lam, p, b, v = hippo_init(n)
    dense = torch.from_numpy(hippo_legs_matrix(n))
    re = v @ torch.diag(lam) @ v.conj().T - torch.outer(v @ p, (v @ p).conj())
    assert (re.real - dense).abs().max() < 1e-10 * n
    assert re.imag.abs().max() < 1e-10 * n


@pytest.mark.parametrize("n", [2, 8, 32])
def test_initialized_spectrum_is_stable(n):
    lam, _, _, _ = hippo_init(n)
    assert (lam.real <= 0).all()
    # eigendecomposition oracle on the dense matrix itself
    eigs = np.linalg.eigvals(hippo_legs_matrix(n))
    assert (eigs.real <= 1e-9).all()


# ------------------------------------------------------------- discretization

def _scalar_dplr(lam: complex, p: complex, b: complex, c: complex, d: float,
                 dt: float, dtype=torch.float64) -> SsmParams:
    cd = torch.complex128 if dtype == torch.float64 else torch.complex64
    return SsmParams(
        "dplr",
        lam=torch.tensor([[lam]], dtype=cd),
        p=torch.tensor([[p]], dtype=cd),
        b=torch.tensor([[b]], dtype=cd),
        c=torch.tensor([[c]], dtype=cd),
        d=torch.tensor([d], dtype=dtype),
        log_dt=torch.tensor([math.log(dt)], dtype=dtype),
    )


def _scalar_mimo(lam: complex, b: complex, c: complex, d: float, dt: float) -> SsmParams:
    return SsmParams(
        "diag_mimo",
        lam=torch.tensor([lam], dtype=torch.complex128),
        p=None,
        b=torch.tensor([[b]], dtype=torch.complex128),
        c=torch.tensor([[c]], dtype=torch.complex128),
        d=torch.tensor([d], dtype=torch.float64),
        log_dt=torch.tensor([math.log(dt)], dtype=torch.float64),
    )


def test_bilinear_scalar_closed_form():
    disc = discretize(_scalar_dplr(-1.0, 0.0, 1.0, 1.0, 0.0, dt=0.1))
    # conjugate completion gives a diagonal 2x2 with both entries 0.95/1.05
    assert disc.a_bar[0, 0, 0].real == pytest.approx(0.95 / 1.05, rel=1e-12)
    assert disc.a_bar[0, 0, 1].abs() == pytest.approx(0.0, abs=1e-15)


def test_zoh_scalar_closed_form():
    disc = discretize(_scalar_mimo(-1.0, 1.0, 1.0, 0.0, dt=0.1))
    assert disc.a_bar[0].real == pytest.approx(math.exp(-0.1), rel=1e-12)
    assert disc.b_bar[0, 0].real == pytest.approx(1.0 - math.exp(-0.1), rel=1e-12)


def test_zero_dynamics_limit():
    # a = 0: bilinear gives a_bar = 1, b_bar = dt*b; ZOH the series limit
    disc_b = discretize(_scalar_dplr(0.0, 0.0, 2.0, 1.0, 0.0, dt=0.25))
    assert disc_b.a_bar[0, 0, 0].real == pytest.approx(1.0)
    assert disc_b.b_bar[0, 0].real == pytest.approx(0.25 * 2.0)
    disc_z = discretize(_scalar_mimo(0.0, 2.0, 1.0, 0.0, dt=0.25))
    assert disc_z.a_bar[0].real == pytest.approx(1.0)
    assert disc_z.b_bar[0, 0].real == pytest.approx(0.25 * 2.0)


def _random_layer(seed: int, d_model: int, n_state: int, flavor: str,
                  dtype=torch.float32) -> SsmLayer:
    store = ParamStore()
    return SsmLayer(store, "s", Rng(seed), d_model, n_state, flavor, dtype=dtype)


def test_woodbury_matches_dense_inverse():
    layer = _random_layer(3, d_model=4, n_state=16, flavor="dplr", dtype=torch.float64)
    params = layer.params()
    dw = discretize(params, method="woodbury")
    dd = discretize(params, method="dense")
    assert (dw.a_bar - dd.a_bar).abs().max() < 1e-6
    assert (dw.b_bar - dd.b_bar).abs().max() < 1e-6


def test_discrete_spectral_radius_below_one():
    for seed in range(5):
        layer = _random_layer(seed, d_model=3, n_state=8, flavor="dplr")
        eigs = torch.linalg.eigvals(layer.discretize().a_bar)
        assert float(eigs.abs().max()) < 1.0
        mimo = _random_layer(seed, d_model=3, n_state=8, flavor="diag_mimo")
        assert float(mimo.discretize().a_bar.abs().max()) < 1.0


def test_discretization_order_of_accuracy():
    """Bilinear a_bar approaches expm(dt A) at (at least) second order."""
    lam, p, _, _ = hippo_init(8)
    lam_h, p_h = lam[4:], p[4:]
    lam_f = torch.cat([lam_h, lam_h.conj()])
    p_f = torch.cat([p_h, p_h.conj()])
    a = (torch.diag(lam_f) - torch.outer(p_f, p_f.conj())).numpy()
    errs = []
    deltas = [1e-1, 1e-2, 1e-3]
    for dt in deltas:
        params = SsmParams(
            "dplr", lam=lam_h.unsqueeze(0), p=p_h.unsqueeze(0),
            b=torch.ones(1, 4, dtype=torch.complex128),
            c=torch.ones(1, 4, dtype=torch.complex128),
            d=torch.zeros(1, dtype=torch.float64),
            log_dt=torch.tensor([math.log(dt)], dtype=torch.float64))
        a_bar = discretize(params).a_bar[0].numpy()
        errs.append(np.linalg.norm(a_bar - scipy.linalg.expm(dt * a)))
    logs = np.polyfit(np.log(deltas), np.log(errs), 1)
    assert logs[0] >= 1.9
    # ZOH is exact for the diagonal flavor
    lam_d = lam_h
    for dt in deltas:
        params = SsmParams(
            "diag_mimo", lam=lam_d, p=None,
            b=torch.ones(4, 1, dtype=torch.complex128),
            c=torch.ones(1, 4, dtype=torch.complex128),
            d=torch.zeros(1, dtype=torch.float64),
            log_dt=torch.full((4,), math.log(dt), dtype=torch.float64))
        a_bar = discretize(params).a_bar.numpy()
        exact = np.exp(dt * lam_d.numpy())
        assert np.abs(a_bar - exact).max() < 1e-12


# --------------------------------------------------------------- execution

def _chain_steps(disc: DiscreteSsm, u: torch.Tensor, s0=None):
    s = disc.zero_state((u.shape[0],)) if s0 is None else s0
    ys = []
    for t in range(u.shape[1]):
        y, s = pssm_step(disc, u[:, t], s)
        ys.append(y)
    return torch.stack(ys, dim=1), s


def test_memoryless_system():
    layer = _random_layer(0, d_model=3, n_state=8, flavor="dplr")
    disc = layer.discretize()
    disc = DiscreteSsm("dplr", torch.zeros_like(disc.a_bar), disc.b_bar, disc.c, disc.d)
    u = Rng(1).normal(2, 10, 3)
    y, _ = pssm_parallel(disc, u)
    gain = torch.einsum("hn,hn->h", disc.c, disc.b_bar).real + disc.d
    assert (y - gain * u).abs().max() < 1e-5


def test_impulse_response_equals_kernel():
    layer = _random_layer(4, d_model=2, n_state=8, flavor="dplr")
    disc = layer.discretize()
    disc = DiscreteSsm("dplr", disc.a_bar, disc.b_bar, disc.c, torch.zeros_like(disc.d))
    t = 32
    u = torch.zeros(1, t, 2)
    u[0, 0] = 1.0
    y, _ = pssm_parallel(disc, u)
    kernel = dplr_kernel(disc, t)
    assert (y[0].T - kernel).abs().max() < 1e-5


@pytest.mark.parametrize("flavor", ["dplr", "diag_mimo"])
@pytest.mark.parametrize("dtype,tol", [(torch.float32, 1e-4), (torch.float64, 1e-9)])
def test_parallel_equals_sequential(flavor, dtype, tol):
    layer = _random_layer(11, d_model=4, n_state=16, flavor=flavor, dtype=dtype)
    disc = layer.discretize()
    u = Rng(2).normal(2, 256, 4, dtype=dtype)
    y_par, s_par = pssm_parallel(disc, u)
    y_seq, s_seq = _chain_steps(disc, u)
    assert (y_par - y_seq).abs().max() < tol
    assert (s_par - s_seq).abs().max() < tol * 10


@pytest.mark.parametrize("flavor", ["dplr", "diag_mimo"])
def test_parallel_with_initial_state(flavor):
    layer = _random_layer(12, d_model=3, n_state=8, flavor=flavor)
    disc = layer.discretize()
    u = Rng(3).normal(2, 40, 3)
    g = torch.Generator().manual_seed(0)
    shape = (2, *disc.state_shape)
    s0 = torch.complex(torch.randn(shape, generator=g), torch.randn(shape, generator=g))
    s0 = s0.to(disc.a_bar.dtype)
    y_par, s_par = pssm_parallel(disc, u, s0=s0)
    y_seq, s_seq = _chain_steps(disc, u, s0=s0.clone())
    assert (y_par - y_seq).abs().max() < 2e-4
    assert (s_par - s_seq).abs().max() < 2e-4


def test_kernel_consistency_long():
    # FFT-convolution route equals direct kernel materialization, T=1024
    layer = _random_layer(13, d_model=1, n_state=16, flavor="dplr")
    disc = layer.discretize()
    t = 1024
    u = torch.zeros(1, t, 1)
    u[0, 0] = 1.0
    y, _ = pssm_parallel(disc, u)
    kernel = dplr_kernel(disc, t) + torch.cat(
        [disc.d.unsqueeze(1), torch.zeros(1, t - 1)], dim=1)
    assert (y[0, :, 0] - kernel[0]).abs().max() < 1e-4


def test_real_outputs_imaginary_residue():
    layer = _random_layer(14, d_model=4, n_state=16, flavor="dplr")
    disc = layer.discretize()
    u = Rng(4).normal(1, 64, 4)
    s = disc.zero_state((1,))
    worst = 0.0
    for t in range(64):
        s = torch.einsum("hnm,bhm->bhn", disc.a_bar, s) \
            + disc.b_bar * u[:, t].to(disc.b_bar.dtype).unsqueeze(-1)
        y_complex = torch.einsum("hn,bhn->bh", disc.c, s)
        worst = max(worst, float(y_complex.imag.abs().max()))
    assert worst < 1e-5


def test_sequence_length_cap():
    layer = _random_layer(15, d_model=1, n_state=4, flavor="dplr")
    u = torch.zeros(1, 64, 1)
    with pytest.raises(ValueError, match="chunks"):
        pssm_parallel(layer.discretize(), u, max_kernel_len=32)


def test_parallel_requires_3d_input():
    layer = _random_layer(16, d_model=2, n_state=4, flavor="dplr")
    with pytest.raises(ShapeError, match="pssm_parallel"):
        pssm_parallel(layer.discretize(), torch.zeros(4, 2))


# --------------------------------------------------------------- scan ops

def test_scan_combine_identity():
    g = torch.Generator().manual_seed(8)
    e = (torch.randn(4, generator=g, dtype=torch.complex64),
         torch.randn(4, generator=g, dtype=torch.complex64))
    identity = (torch.ones(4, dtype=torch.complex64), torch.zeros(4, dtype=torch.complex64))
    a, b = scan_combine(identity, e)
    assert torch.equal(a, e[0]) and torch.equal(b, e[1])


def test_scan_combine_associative():
    g = torch.Generator().manual_seed(9)
    es = [(torch.randn(6, generator=g, dtype=torch.complex128),
           torch.randn(6, generator=g, dtype=torch.complex128)) for _ in range(3)]
    left = scan_combine(scan_combine(es[0], es[1]), es[2])
    right = scan_combine(es[0], scan_combine(es[1], es[2]))
    assert (left[0] - right[0]).abs().max() < 1e-12
    assert (left[1] - right[1]).abs().max() < 1e-12


def test_scan_matches_serial_fold():
    g = torch.Generator().manual_seed(10)
    t, n = 8, 5
    a = torch.randn(1, t, n, generator=g, dtype=torch.complex128)
    b = torch.randn(1, t, n, generator=g, dtype=torch.complex128)
    _, states = associative_scan(a, b)
    acc = torch.zeros(n, dtype=torch.complex128)
    for k in range(t):
        acc = a[0, k] * acc + b[0, k]
        assert (states[0, k] - acc).abs().max() < 1e-12


# --------------------------------------------------------------- layer

def test_layer_trainable_set():
    store = ParamStore()
    SsmLayer(store, "s", Rng(0), d_model=2, n_state=8, flavor="dplr")
    names = set(store.params)
    assert names == {"s.lam_re_raw", "s.lam_im", "s.c_re", "s.c_im", "s.d", "s.log_dt"}
    assert set(store.buffers) == {"s.p", "s.b"}  # frozen at init


def test_layer_rejects_odd_state():
    with pytest.raises(ValueError, match="even"):
        SsmLayer(ParamStore(), "s", Rng(0), d_model=2, n_state=7)


def test_pssm_step_zero_input_zero_state():
    layer = _random_layer(17, d_model=2, n_state=4, flavor="dplr")
    disc = layer.discretize()
    y, s = pssm_step(disc, torch.zeros(1, 2), disc.zero_state((1,)))
    assert y.abs().max() == 0.0 and s.abs().max() == 0.0


def test_singular_bilinear_guard():
    # lam = 2/dt makes (1 - dt/2 * lam) = 0 on the diagonal
    params = _scalar_dplr(20.0, 0.0, 1.0, 1.0, 0.0, dt=0.1)
    with pytest.raises(ValueError, match="singular"):
        discretize(params, method="woodbury")
