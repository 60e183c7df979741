"""Hot numeric loops: the decay-and-removal state scan and a radix-2 FFT.

Each kernel exists twice, a numba ``@njit`` version (``*_nb``) and a pure
numpy version (``*_np``). The public names dispatch on
:data:`frwkv._accel.USE_NUMBA`. Both paths are kept importable so tests and
the benchmark can compare them directly.

Scan layout: every stream is ``[rows, steps, heads, n]`` with ``n`` the head
width. The per-head state ``S`` is ``[n, n]`` (value axis first, key axis
second) and evolves as::

    S_t = S_{t-1} (diag(d_t) - kh_t (eta_t * kh_t)^T) + v_t kr_t^T
    y_t = S_t r_t
"""
from __future__ import annotations

import numpy as np

from ._accel import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# state scan, numba
# ---------------------------------------------------------------------------


@njit
def wkv_forward_nb(r, kh, eta, kr, v, d, s0):
    rows, steps, heads, n = r.shape
    y = np.empty_like(r)
    s_out = np.empty((rows, heads, n, n))
    S = np.empty((n, n))
    for b in range(rows):
        for h in range(heads):
            S[:, :] = s0[b, h]
            for t in range(steps):
                for i in range(n):
                    sk = 0.0
                    for j in range(n):
                        sk += S[i, j] * kh[b, t, h, j]
                    vi = v[b, t, h, i]
                    acc = 0.0
                    for j in range(n):
                        s = (S[i, j] * d[b, t, h, j]
                             - sk * kh[b, t, h, j] * eta[b, t, h, j]
                             + vi * kr[b, t, h, j])
                        S[i, j] = s
                        acc += s * r[b, t, h, j]
                    y[b, t, h, i] = acc
            s_out[b, h] = S
    return y, s_out


@njit
def wkv_backward_nb(r, kh, eta, kr, v, d, s0, dy, ds_final):
    rows, steps, heads, n = r.shape
    dr = np.zeros_like(r)
    dkh = np.zeros_like(r)
    deta = np.zeros_like(r)
    dkr = np.zeros_like(r)
    dv = np.zeros_like(r)
    dd = np.zeros_like(r)
    ds0 = np.zeros_like(s0)
    states = np.empty((steps + 1, n, n))
    dS = np.empty((n, n))
    dSa = np.empty(n)
    sk = np.empty(n)
    a = np.empty(n)
    for b in range(rows):
        for h in range(heads):
            # recompute the trajectory for this (row, head)
            states[0] = s0[b, h]
            for t in range(steps):
                for i in range(n):
                    acc = 0.0
                    for j in range(n):
                        acc += states[t, i, j] * kh[b, t, h, j]
                    for j in range(n):
                        states[t + 1, i, j] = (states[t, i, j] * d[b, t, h, j]
                                               - acc * kh[b, t, h, j] * eta[b, t, h, j]
                                               + v[b, t, h, i] * kr[b, t, h, j])
            dS[:, :] = ds_final[b, h]
            for t in range(steps - 1, -1, -1):
                for j in range(n):
                    a[j] = eta[b, t, h, j] * kh[b, t, h, j]
                # y_t = S_t r_t
                for i in range(n):
                    g = dy[b, t, h, i]
                    for j in range(n):
                        dS[i, j] += g * r[b, t, h, j]
                for j in range(n):
                    acc = 0.0
                    for i in range(n):
                        acc += states[t + 1, i, j] * dy[b, t, h, i]
                    dr[b, t, h, j] = acc
                # replacement term v kr^T
                for i in range(n):
                    acc = 0.0
                    for j in range(n):
                        acc += dS[i, j] * kr[b, t, h, j]
                    dv[b, t, h, i] = acc
                for j in range(n):
                    acc = 0.0
                    for i in range(n):
                        acc += dS[i, j] * v[b, t, h, i]
                    dkr[b, t, h, j] = acc
                # transition S_{t-1} A_t
                for i in range(n):
                    acc = 0.0
                    acc2 = 0.0
                    for k in range(n):
                        acc += dS[i, k] * a[k]
                        acc2 += states[t, i, k] * kh[b, t, h, k]
                    dSa[i] = acc
                    sk[i] = acc2
                for j in range(n):
                    ddj = 0.0
                    dkhj = 0.0
                    daj = 0.0
                    for i in range(n):
                        sp = states[t, i, j]
                        ddj += sp * dS[i, j]
                        dkhj -= sp * dSa[i]
                        daj -= sk[i] * dS[i, j]
                    dd[b, t, h, j] = ddj
                    deta[b, t, h, j] = daj * kh[b, t, h, j]
                    dkh[b, t, h, j] = dkhj + daj * eta[b, t, h, j]
                for i in range(n):
                    for j in range(n):
                        dS[i, j] = dS[i, j] * d[b, t, h, j] - dSa[i] * kh[b, t, h, j]
            ds0[b, h] = dS
    return dr, dkh, deta, dkr, dv, dd, ds0


# ---------------------------------------------------------------------------
# state scan, numpy
# ---------------------------------------------------------------------------


def _scan_states_np(kh, eta, kr, v, d, s0):
    steps = kh.shape[1]
    states = np.empty((steps + 1,) + s0.shape)
    states[0] = s0
    S = s0
    for t in range(steps):
        k_t, a_t = kh[:, t], eta[:, t] * kh[:, t]
        sk = np.einsum("bhij,bhj->bhi", S, k_t)
        S = (S * d[:, t, :, None, :]
             - sk[..., :, None] * a_t[..., None, :]
             + v[:, t, :, :, None] * kr[:, t, :, None, :])
        states[t + 1] = S
    return states


def wkv_forward_np(r, kh, eta, kr, v, d, s0):
    states = _scan_states_np(kh, eta, kr, v, d, s0)
    y = np.einsum("tbhij,bthj->bthi", states[1:], r)
    return y, states[-1].copy()


def wkv_backward_np(r, kh, eta, kr, v, d, s0, dy, ds_final):
    states = _scan_states_np(kh, eta, kr, v, d, s0)
    steps = r.shape[1]
    dr, dkh, deta, dkr, dv, dd = (np.zeros_like(r) for _ in range(6))
    dS = np.array(ds_final, dtype=np.float64, copy=True)
    for t in range(steps - 1, -1, -1):
        S_t, S_prev = states[t + 1], states[t]
        k_t, e_t, d_t = kh[:, t], eta[:, t], d[:, t]
        a_t = e_t * k_t
        dS = dS + dy[:, t, :, :, None] * r[:, t, :, None, :]
        dr[:, t] = np.einsum("bhij,bhi->bhj", S_t, dy[:, t])
        dv[:, t] = np.einsum("bhij,bhj->bhi", dS, kr[:, t])
        dkr[:, t] = np.einsum("bhij,bhi->bhj", dS, v[:, t])
        dSa = np.einsum("bhik,bhk->bhi", dS, a_t)
        sk = np.einsum("bhik,bhk->bhi", S_prev, k_t)
        dd[:, t] = np.einsum("bhij,bhij->bhj", S_prev, dS)
        da = -np.einsum("bhi,bhij->bhj", sk, dS)
        deta[:, t] = da * k_t
        dkh[:, t] = -np.einsum("bhij,bhi->bhj", S_prev, dSa) + da * e_t
        dS = dS * d_t[..., None, :] - dSa[..., :, None] * k_t[..., None, :]
    return dr, dkh, deta, dkr, dv, dd, dS


def wkv_forward(r, kh, eta, kr, v, d, s0):
    fn = wkv_forward_nb if USE_NUMBA else wkv_forward_np
    return fn(r, kh, eta, kr, v, d, s0)


def wkv_backward(r, kh, eta, kr, v, d, s0, dy, ds_final):
    fn = wkv_backward_nb if USE_NUMBA else wkv_backward_np
    return fn(r, kh, eta, kr, v, d, s0, dy, ds_final)


# ---------------------------------------------------------------------------
# radix-2 FFT
# ---------------------------------------------------------------------------


def _check_pow2(n):
    if n < 1 or n & (n - 1):
        raise ValueError(f"radix-2 FFT needs a power-of-two length, got {n}")


def _bit_reverse_indices(n):
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@njit
def _fft_rows_nb(x, rev):
    rows, n = x.shape
    out = np.empty_like(x)
    for b in range(rows):
        for i in range(n):
            out[b, rev[i]] = x[b, i]
    size = 2
    while size <= n:
        half = size // 2
        step = -2.0 * np.pi / size
        for b in range(rows):
            for start in range(0, n, size):
                for k in range(half):
                    w = np.cos(step * k) + 1j * np.sin(step * k)
                    u = out[b, start + k]
                    t = w * out[b, start + k + half]
                    out[b, start + k] = u + t
                    out[b, start + k + half] = u - t
        size *= 2
    return out


def _fft_rows_np(x, rev):
    out = x[:, rev]
    n = x.shape[1]
    size = 2
    while size <= n:
        half = size // 2
        w = np.exp(-2j * np.pi * np.arange(half) / size)
        blocks = out.reshape(out.shape[0], n // size, size)
        u = blocks[..., :half].copy()
        t = w * blocks[..., half:]
        blocks[..., :half] = u + t
        blocks[..., half:] = u - t
        size *= 2
    return out


def fft_radix2(x, use_numba=None):
    """Complex forward FFT along the last axis (length must be a power of two)."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    _check_pow2(n)
    rev = _bit_reverse_indices(n)
    flat = np.ascontiguousarray(x.reshape(-1, n))
    use_numba = USE_NUMBA if use_numba is None else use_numba
    out = _fft_rows_nb(flat, rev) if use_numba else _fft_rows_np(flat, rev)
    return out.reshape(x.shape)


def rfft_radix2(x, use_numba=None):
    """Real-input FFT along the last axis, returning ``n // 2 + 1`` bins."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    return fft_radix2(x, use_numba=use_numba)[..., : n // 2 + 1]
