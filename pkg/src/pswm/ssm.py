"""Linear state-space sequence kernels.

Two flavors of stable linear SSM sit behind one execution contract:

*  ``dplr`` — per-channel single-input single-output systems whose state
   matrix is diagonal plus a rank-1 correction, ``A = Lambda - P P*``.
   Initialized from the scaled-Legendre memory matrix and discretized
   with the bilinear transform. The whole-sequence path materializes the
   impulse-response kernel and applies it by FFT convolution.
*  ``diag_mimo`` — one multi-input multi-output system per layer with a
   purely diagonal state matrix, discretized by zero-order hold. The
   whole-sequence path runs a parallel associative scan over the
   recurrence.

Both flavors expose the same two entry points with identical semantics:

    y_1:T, s_T = pssm_parallel(disc, u_1:T, s_0)
    y_k,   s_k = pssm_step(disc, u_k, s_k-1)

States are complex; conjugate-pair structure guarantees real outputs.
Only half of each conjugate spectrum is stored: the ``dplr`` flavor
completes the other half explicitly before building dense matrices,
the ``diag_mimo`` flavor doubles the real part of its output instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .substrate import ParamStore, Rng
from .substrate import ops

DT_MIN = 1e-3
DT_MAX = 1e-1
MAX_KERNEL_LEN = 4096


# ---------------------------------------------------------------------------
# Scaled-Legendre (long-range memory) initialization
# ---------------------------------------------------------------------------

def hippo_legs_matrix(n: int) -> np.ndarray:
    """Dense scaled-Legendre state matrix.

    Entries (0-indexed):
        A[n,k] = -sqrt(2n+1) sqrt(2k+1)   if n > k
        A[n,k] = -(n+1)                   if n = k
        A[n,k] = 0                        if n < k
    """
    r = np.sqrt(1.0 + 2.0 * np.arange(n))
    a = r[:, None] * r[None, :]
    a = np.tril(a) - np.diag(np.arange(n))
    return -a


def hippo_init(n: int) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """Diagonal-plus-low-rank decomposition of the scaled-Legendre matrix.

    Writing A for the dense matrix and P the rank-1 factor
    ``P_k = sqrt(k + 1/2)``, the sum ``S = A + P P^T`` is normal
    (diagonal -1/2 plus skew-symmetric), so it diagonalizes with a
    unitary V as ``S = V diag(lam) V^H`` with ``Re(lam) = -1/2`` exactly.
    In the eigenbasis the original matrix is ``diag(lam) - p p^H`` with
    ``p = V^H P``.

    Returns:
        (lam, p, b, v): eigenvalues (n,) complex128 sorted by ascending
        imaginary part, rank-1 factor and input vector in the eigenbasis,
        and the eigenvector matrix (n, n).
    """
    if n < 1:
        raise ValueError("state size must be >= 1")
    a = hippo_legs_matrix(n)
    p = np.sqrt(np.arange(n) + 0.5)
    b = np.sqrt(2.0 * np.arange(n) + 1.0)
    s = a + p[:, None] * p[None, :]
    skew = s + 0.5 * np.eye(n)
    # -i * skew is Hermitian; eigh gives the imaginary parts and basis.
    lam_im, v = np.linalg.eigh(-1j * skew)
    lam = -0.5 + 1j * lam_im
    p_t = v.conj().T @ p
    b_t = v.conj().T @ b
    return (
        torch.from_numpy(lam),
        torch.from_numpy(p_t),
        torch.from_numpy(b_t),
        torch.from_numpy(v),
    )


def _positive_half(x: torch.Tensor, n: int) -> torch.Tensor:
    """Entries paired with positive imaginary eigenvalues (ascending order)."""
    return x[n // 2:]


# ---------------------------------------------------------------------------
# Parameter containers
# ---------------------------------------------------------------------------

@dataclass
class SsmParams:
    """Continuous-time parameters of one SSM (conjugate half stored).

    dplr:      lam/p/b/c are (H, Nh) complex, d and log_dt are (H,).
    diag_mimo: lam is (Nh,), b is (Nh, U), c is (Y, Nh), d (U,), log_dt (Nh,).
    """
    flavor: str
    lam: torch.Tensor
    p: torch.Tensor | None
    b: torch.Tensor
    c: torch.Tensor
    d: torch.Tensor
    log_dt: torch.Tensor

    @property
    def dt(self) -> torch.Tensor:
        return torch.exp(self.log_dt)


@dataclass
class DiscreteSsm:
    """Discrete-time system matrices.

    dplr:      a_bar (H, N, N), b_bar (H, N), c (H, N) over the completed
               conjugate spectrum (N = 2*Nh); outputs take Re(.).
    diag_mimo: a_bar (Nh,), b_bar (Nh, U), c (Y, Nh) over the stored half;
               outputs take 2*Re(.).
    """
    flavor: str
    a_bar: torch.Tensor
    b_bar: torch.Tensor
    c: torch.Tensor
    d: torch.Tensor

    @property
    def state_shape(self) -> tuple[int, ...]:
        if self.flavor == "dplr":
            return (self.a_bar.shape[0], self.a_bar.shape[1])  # (H, N)
        return (self.a_bar.shape[0],)  # (Nh,)

    def zero_state(self, batch: tuple[int, ...] = ()) -> torch.Tensor:
        return torch.zeros(*batch, *self.state_shape, dtype=self.a_bar.dtype)


def _complex_dtype(real_dtype: torch.dtype) -> torch.dtype:
    return torch.complex128 if real_dtype == torch.float64 else torch.complex64


def _conj_complete(x: torch.Tensor) -> torch.Tensor:
    """Append the conjugate half along the last stored-spectrum axis."""
    return torch.cat([x, x.conj()], dim=-1)


# ---------------------------------------------------------------------------
# Discretization
# ---------------------------------------------------------------------------

def _bilinear_inverse_dense(lam_f: torch.Tensor, p_f: torch.Tensor, dt: torch.Tensor) -> torch.Tensor:
    """Dense inverse of (I - dt/2 * (diag(lam) - p p^H)) per channel."""
    n = lam_f.shape[-1]
    eye = torch.eye(n, dtype=lam_f.dtype)
    a = torch.diag_embed(lam_f) - p_f.unsqueeze(-1) * p_f.conj().unsqueeze(-2)
    m0 = eye - 0.5 * dt[..., None, None] * a
    try:
        return torch.linalg.inv(m0)
    except RuntimeError as e:  # cannot occur for stable lam with dt > 0
        raise ValueError(f"bilinear discretization is singular: {e}") from e


def _bilinear_inverse_woodbury(lam_f: torch.Tensor, p_f: torch.Tensor, dt: torch.Tensor) -> torch.Tensor:
    """Same inverse through the rank-1 Woodbury identity.

    With D = I - dt/2 diag(lam) the target is (D + dt/2 p p^H)^-1 =
    D^-1 - D^-1 p (2/dt + p^H D^-1 p)^-1 p^H D^-1.
    """
    half_dt = 0.5 * dt[..., None]
    d_diag = 1.0 - half_dt * lam_f
    if bool((d_diag.abs() < 1e-12).any()):
        raise ValueError("bilinear discretization is singular: zero diagonal")
    dinv_p = p_f / d_diag
    ph_dinv = p_f.conj() / d_diag
    denom = 2.0 / dt[..., None] + (p_f.conj() * dinv_p).sum(-1, keepdim=True)
    correction = dinv_p.unsqueeze(-1) * (ph_dinv / denom).unsqueeze(-2)
    return torch.diag_embed(1.0 / d_diag) - correction


def discretize(params: SsmParams, method: str = "woodbury") -> DiscreteSsm:
    """Map continuous parameters to discrete matrices under step exp(log_dt).

    dplr uses the bilinear transform
        A_bar = (I - dt/2 A)^-1 (I + dt/2 A),  B_bar = (I - dt/2 A)^-1 dt B,
    with the rank-1 correction folded into the inverse (Woodbury by
    default; ``method="dense"`` forms the inverse directly — the two must
    agree and tests pin that). diag_mimo uses zero-order hold
        A_bar = exp(dt lam),  B_bar = lam^-1 (A_bar - 1) B
    elementwise, with the exact dt*B limit at lam = 0. C and D pass
    through unchanged.
    """
    cdtype = _complex_dtype(params.log_dt.dtype)
    dt = params.dt
    if params.flavor == "dplr":
        lam_f = _conj_complete(params.lam).to(cdtype)
        p_f = _conj_complete(params.p).to(cdtype)
        b_f = _conj_complete(params.b).to(cdtype)
        c_f = _conj_complete(params.c).to(cdtype)
        n = lam_f.shape[-1]
        eye = torch.eye(n, dtype=cdtype)
        a = torch.diag_embed(lam_f) - p_f.unsqueeze(-1) * p_f.conj().unsqueeze(-2)
        dtc = dt.to(cdtype)
        if method == "dense":
            m0_inv = _bilinear_inverse_dense(lam_f, p_f, dtc)
        elif method == "woodbury":
            m0_inv = _bilinear_inverse_woodbury(lam_f, p_f, dtc)
        else:
            raise ValueError(f"unknown discretization method '{method}'")
        m1 = eye + 0.5 * dtc[..., None, None] * a
        a_bar = m0_inv @ m1
        b_bar = (m0_inv @ (dtc[..., None] * b_f).unsqueeze(-1)).squeeze(-1)
        return DiscreteSsm("dplr", a_bar, b_bar, c_f, params.d)
    if params.flavor == "diag_mimo":
        lam = params.lam.to(cdtype)
        dtc = dt.to(cdtype)
        a_bar = torch.exp(dtc * lam)
        small = lam.abs() < 1e-12
        lam_safe = torch.where(small, torch.ones_like(lam), lam)
        scale = torch.where(small, dtc, (a_bar - 1.0) / lam_safe)
        b_bar = scale.unsqueeze(-1) * params.b.to(cdtype)
        return DiscreteSsm("diag_mimo", a_bar, b_bar, params.c.to(cdtype), params.d)
    raise ValueError(f"unknown flavor '{params.flavor}'")


# ---------------------------------------------------------------------------
# Associative scan (diag flavor)
# ---------------------------------------------------------------------------

def scan_combine(e1: tuple[torch.Tensor, torch.Tensor],
                 e2: tuple[torch.Tensor, torch.Tensor]) -> tuple[torch.Tensor, torch.Tensor]:
    """Binary operator of the linear recurrence, e1 preceding e2.

    (A1, b1) . (A2, b2) = (A2 A1, A2 b1 + b2), elementwise diagonals.
    Identity element is (1, 0). Scanning T elements yields every prefix
    state of s_t = A_t s_{t-1} + b_t.
    """
    a1, b1 = e1
    a2, b2 = e2
    return a2 * a1, a2 * b1 + b2


def associative_scan(a: torch.Tensor, b: torch.Tensor, dim: int = 1) -> tuple[torch.Tensor, torch.Tensor]:
    """Inclusive scan of scan_combine along ``dim`` (log-depth schedule).

    Each round combines elements a stride apart, doubling the stride, so
    the data-parallel width stays O(T) while the depth is O(log T).
    """
    a = a.movedim(dim, 1) if dim != 1 else a
    b = b.movedim(dim, 1) if dim != 1 else b
    t = a.shape[1]
    stride = 1
    while stride < t:
        a_prev = a[:, :-stride]
        b_prev = b[:, :-stride]
        a_cur = a[:, stride:]
        b_cur = b[:, stride:]
        a = torch.cat([a[:, :stride], a_cur * a_prev], dim=1)
        b = torch.cat([b[:, :stride], a_cur * b_prev + b_cur], dim=1)
        stride *= 2
    if dim != 1:
        a = a.movedim(1, dim)
        b = b.movedim(1, dim)
    return a, b


# ---------------------------------------------------------------------------
# Execution: parallel over the sequence, or one step at a time
# ---------------------------------------------------------------------------

def _next_pow2(n: int) -> int:
    return 1 << max(0, (n - 1).bit_length())

def _power_seq(a_bar: torch.Tensor, seed: torch.Tensor, length: int) -> torch.Tensor:
    """[seed, A seed, ..., A^(length-1) seed] by repeated doubling.

    a_bar: (H, N, N); seed: (..., H, N); result: (..., H, length, N).
    log(length) matrix products instead of length matrix-vector loops; the
    doubled block is produced chunk by chunk so nothing is re-copied until
    one final concatenation.
    """
    xs = seed.unsqueeze(-2)
    p = a_bar
    while xs.shape[-2] < length:
        nxt = torch.einsum("hnm,...hlm->...hln", p, xs)
        xs = torch.cat([xs, nxt], dim=-2)
        if xs.shape[-2] >= length:
            break
        p = p @ p
    return xs[..., :length, :]


def dplr_kernel(disc: DiscreteSsm, length: int) -> torch.Tensor:
    """Impulse response K_m = Re(C A_bar^m B_bar), m = 0..length-1; (H, length)."""
    powers = _power_seq(disc.a_bar, disc.b_bar, length)  # (H, L, N)
    return torch.einsum("hn,hln->hl", disc.c, powers).real


def _fft_causal_conv(u: torch.Tensor, kernel: torch.Tensor) -> torch.Tensor:
    """Causal convolution of u (B, T, H) with per-channel kernel (H, T).

    Runs the FFT over the last (contiguous) axis in channel-major layout;
    the strided middle-axis alternative is several times slower on CPU.
    """
    t = u.shape[1]
    padded = _next_pow2(2 * t)
    cdtype = _complex_dtype(u.dtype)
    u_pad = torch.zeros(u.shape[0], u.shape[2], padded, dtype=cdtype)
    u_pad[:, :, :t] = u.movedim(1, 2).to(cdtype)
    k_pad = torch.zeros(kernel.shape[0], padded, dtype=cdtype)
    k_pad[:, :t] = kernel.to(cdtype)
    y = ops.ifft(ops.fft(u_pad) * ops.fft(k_pad).unsqueeze(0))
    return y.real[:, :, :t].movedim(2, 1).to(u.dtype)


def pssm_parallel(
    disc: DiscreteSsm,
    u: torch.Tensor,
    s0: torch.Tensor | None = None,
    max_kernel_len: int = MAX_KERNEL_LEN,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Whole-sequence evaluation; exact match of chained pssm_step.

    Args:
        u: inputs (B, T, H).
        s0: optional initial state (B, H, N) / (B, Nh); zeros when omitted.
    Returns:
        (y, s_T): outputs (B, T, H) and the terminal state.
    """
    if u.dim() != 3:
        raise ops.ShapeError("pssm_parallel", f"expected (B, T, H) input, got {tuple(u.shape)}")
    bsz, t, _ = u.shape
    if t < 1:
        raise ops.ShapeError("pssm_parallel", "sequence length must be >= 1")
    if t > max_kernel_len:
        raise ValueError(
            f"sequence length {t} exceeds max kernel length {max_kernel_len}; "
            "run in chunks, carrying s_0 between pssm_parallel calls"
        )
    if disc.flavor == "dplr":
        powers = _power_seq(disc.a_bar, disc.b_bar, t)  # (H, T, N): A^m B
        p_re, p_im = powers.real, powers.imag
        # only the real part of C A^m B survives; two real einsums beat one
        # complex one (and skip the real->complex input conversions)
        kernel = torch.einsum("hn,hln->hl", disc.c.real, p_re) \
            - torch.einsum("hn,hln->hl", disc.c.imag, p_im)
        y = _fft_causal_conv(u, kernel) + disc.d * u
        # terminal state: s_T = sum_m A^m B u_{T-m} (+ A^T s0)
        u_rev = torch.flip(u, dims=[1])
        s_t = torch.complex(torch.einsum("bth,htn->bhn", u_rev, p_re),
                            torch.einsum("bth,htn->bhn", u_rev, p_im))
        if s0 is not None:
            z = _power_seq(disc.a_bar, torch.einsum("hnm,bhm->bhn", disc.a_bar, s0), t)
            y = y + torch.einsum("hn,bhln->blh", disc.c, z).real.to(u.dtype)
            s_t = s_t + z[..., -1, :]
        return y, s_t
    # diag_mimo: associative scan over the elementwise recurrence
    b_seq = torch.einsum("nu,btu->btn", disc.b_bar, u.to(disc.b_bar.dtype))
    a_seq = disc.a_bar.expand(bsz, t, -1).clone()
    if s0 is not None:
        b_seq = torch.cat([(b_seq[:, :1] + disc.a_bar * s0.unsqueeze(1)), b_seq[:, 1:]], dim=1)
    _, states = associative_scan(a_seq, b_seq, dim=1)
    y = 2.0 * torch.einsum("yn,btn->bty", disc.c, states).real.to(u.dtype) + disc.d * u
    return y, states[:, -1]


def pssm_step(
    disc: DiscreteSsm,
    u: torch.Tensor,
    s: torch.Tensor,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Single recurrent step: s_k = A_bar s_{k-1} + B_bar u_k, y_k = out(s_k)."""
    if disc.flavor == "dplr":
        if s.shape[-2:] != disc.state_shape:
            raise ops.ShapeError("pssm_step", f"state {tuple(s.shape)} vs {disc.state_shape}")
        s_new = torch.einsum("hnm,bhm->bhn", disc.a_bar, s) + disc.b_bar * u.to(disc.b_bar.dtype).unsqueeze(-1)
        y = torch.einsum("hn,bhn->bh", disc.c, s_new).real.to(u.dtype) + disc.d * u
        return y, s_new
    s_new = disc.a_bar * s + torch.einsum("nu,bu->bn", disc.b_bar, u.to(disc.b_bar.dtype))
    y = 2.0 * torch.einsum("yn,bn->by", disc.c, s_new).real.to(u.dtype) + disc.d * u
    return y, s_new


# ---------------------------------------------------------------------------
# Trainable layer
# ---------------------------------------------------------------------------

def _softplus_inv(y: float) -> float:
    return math.log(math.expm1(y))


class SsmLayer:
    """One SSM layer owning its parameters in a ParamStore.

    dplr keeps H independent per-channel copies (each with its own
    spectrum, output vector and step size, all initialized identically
    from the scaled-Legendre decomposition); diag_mimo keeps a single
    system with dense complex input/output maps. Trainable: the spectrum
    (real part through -softplus to stay stable), C, D and log_dt; the
    dplr input vector B and rank-1 factor P stay fixed at init.
    """

    def __init__(self, store: ParamStore, prefix: str, rng: Rng, d_model: int,
                 n_state: int, flavor: str = "dplr", dtype=torch.float32):
        if n_state % 2 != 0:
            raise ValueError("n_state must be even (conjugate-pair storage)")
        self.store = store
        self.prefix = prefix
        self.flavor = flavor
        self.d_model = d_model
        self.n_state = n_state
        self.dtype = dtype
        nh = n_state // 2
        cdtype = _complex_dtype(dtype)
        lam, p, b, _ = hippo_init(n_state)
        lam_h = _positive_half(lam, n_state)
        p_h = _positive_half(p, n_state)
        b_h = _positive_half(b, n_state)
        rr = rng.split(4)
        raw_re0 = _softplus_inv(0.5)
        if flavor == "dplr":
            h = d_model
            store.add(f"{prefix}.lam_re_raw", torch.full((h, nh), raw_re0, dtype=dtype))
            store.add(f"{prefix}.lam_im", lam_h.imag.to(dtype).expand(h, nh).clone())
            store.add(f"{prefix}.p", p_h.to(cdtype).expand(h, nh).clone(), trainable=False)
            store.add(f"{prefix}.b", b_h.to(cdtype).expand(h, nh).clone(), trainable=False)
            store.add(f"{prefix}.c_re", rr[0].normal(h, nh, std=1.0 / math.sqrt(2), dtype=dtype))
            store.add(f"{prefix}.c_im", rr[1].normal(h, nh, std=1.0 / math.sqrt(2), dtype=dtype))
            store.add(f"{prefix}.d", torch.ones(h, dtype=dtype))
            store.add(f"{prefix}.log_dt",
                      rr[2].uniform(h, lo=math.log(DT_MIN), hi=math.log(DT_MAX), dtype=dtype))
        elif flavor == "diag_mimo":
            u_dim = d_model
            store.add(f"{prefix}.lam_re_raw", torch.full((nh,), raw_re0, dtype=dtype))
            store.add(f"{prefix}.lam_im", lam_h.imag.to(dtype).clone())
            store.add(f"{prefix}.b_re", rr[0].normal(nh, u_dim, std=1.0 / math.sqrt(u_dim), dtype=dtype))
            store.add(f"{prefix}.b_im", rr[0].normal(nh, u_dim, std=1.0 / math.sqrt(u_dim), dtype=dtype))
            store.add(f"{prefix}.c_re", rr[1].normal(u_dim, nh, std=1.0 / math.sqrt(2 * nh), dtype=dtype))
            store.add(f"{prefix}.c_im", rr[1].normal(u_dim, nh, std=1.0 / math.sqrt(2 * nh), dtype=dtype))
            store.add(f"{prefix}.d", torch.ones(u_dim, dtype=dtype))
            store.add(f"{prefix}.log_dt",
                      rr[2].uniform(nh, lo=math.log(DT_MIN), hi=math.log(DT_MAX), dtype=dtype))
        else:
            raise ValueError(f"unknown flavor '{flavor}'")

    def params(self) -> SsmParams:
        """Materialize continuous-time values from the raw trainables."""
        g = lambda k: self.store[f"{self.prefix}.{k}"]
        lam = torch.complex(-ops.softplus(g("lam_re_raw")), g("lam_im"))
        if self.flavor == "dplr":
            c = torch.complex(g("c_re"), g("c_im"))
            return SsmParams("dplr", lam, g("p"), g("b"), c, g("d"), g("log_dt"))
        b = torch.complex(g("b_re"), g("b_im"))
        c = torch.complex(g("c_re"), g("c_im"))
        return SsmParams("diag_mimo", lam, None, b, c, g("d"), g("log_dt"))

    def discretize(self, method: str = "woodbury") -> DiscreteSsm:
        return discretize(self.params(), method=method)

    def forward_parallel(self, u: torch.Tensor, s0: torch.Tensor | None = None,
                         disc: DiscreteSsm | None = None) -> tuple[torch.Tensor, torch.Tensor]:
        return pssm_parallel(disc if disc is not None else self.discretize(), u, s0)

    def forward_step(self, u: torch.Tensor, s: torch.Tensor,
                     disc: DiscreteSsm | None = None) -> tuple[torch.Tensor, torch.Tensor]:
        return pssm_step(disc if disc is not None else self.discretize(), u, s)
