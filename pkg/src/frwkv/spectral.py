"""Real FFT along time and its inverse, as differentiable tensor ops.

Convention: forward transform is unnormalised, the inverse carries ``1/T``.
The default path multiplies by precomputed DFT matrices (exact linear maps, so
their gradients are the transposed matrices). ``method="fft"`` runs the
radix-2 kernel on the forward pass for power-of-two lengths.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import kernels
from . import tensor as T
from .tensor import Tensor


@dataclass
class Spectrum:
    real: Tensor  # [B, N, D, F]
    imag: Tensor  # [B, N, D, F]
    original_len: int

    @property
    def n_freq(self) -> int:
        return self.real.shape[-1]


def n_freq(length: int) -> int:
    return length // 2 + 1


@lru_cache(maxsize=64)
def _dft_mats(length: int):
    """Forward ``[T, F]`` cos/-sin and inverse ``[F, T]`` matrices.

    Angles are reduced mod ``T`` on integers so that the structurally zero sine
    entries (DC and Nyquist) are exactly zero.
    """
    F = n_freq(length)
    t = np.arange(length)[:, None]
    k = np.arange(F)[None, :]
    m = (t * k) % length
    ang = 2.0 * np.pi * m / length
    cos, sin = np.cos(ang), np.sin(ang)
    sin[(2 * m) % length == 0] = 0.0
    fwd_re, fwd_im = cos, -sin
    weight = np.full(F, 2.0)
    weight[0] = 1.0
    if length % 2 == 0:
        weight[-1] = 1.0
    inv_re = (weight[:, None] * cos.T) / length
    inv_im = -(weight[:, None] * sin.T) / length
    # imag of DC / Nyquist carries no information for real signals
    inv_im[0] = 0.0
    if length % 2 == 0:
        inv_im[-1] = 0.0
    for mat in (fwd_re, fwd_im, inv_re, inv_im):
        mat.setflags(write=False)
    return fwd_re, fwd_im, inv_re, inv_im


def rfft_time(x: Tensor, method: str = "dft") -> Spectrum:
    """``[B, N, T, D]`` -> spectrum with real/imag laid out as ``[B, N, D, F]``."""
    length = x.shape[-2]
    if length < 1:
        raise ValueError("rfft_time needs at least one time step")
    fwd_re, fwd_im, _, _ = _dft_mats(length)
    xt = T.transpose(x, (0, 1, 3, 2))
    if method == "dft":
        return Spectrum(xt @ fwd_re, xt @ fwd_im, length)
    if method != "fft":
        raise ValueError(f"unknown rfft method {method!r}")
    z = kernels.rfft_radix2(xt.data)
    z.imag[..., 0] = 0.0
    if length % 2 == 0:
        z.imag[..., -1] = 0.0

    def vjp_re(g):
        return (g @ fwd_re.T,)

    def vjp_im(g):
        return (g @ fwd_im.T,)

    return Spectrum(T.custom_op(z.real.copy(), (xt,), vjp_re, "rfft_re"),
                    T.custom_op(z.imag.copy(), (xt,), vjp_im, "rfft_im"), length)


def irfft_time(z: Spectrum) -> Tensor:
    """Inverse of :func:`rfft_time`; returns ``[B, N, T, D]``."""
    _, _, inv_re, inv_im = _dft_mats(z.original_len)
    if z.n_freq != inv_re.shape[0]:
        raise ValueError(f"spectrum has {z.n_freq} bins, expected {inv_re.shape[0]} "
                         f"for length {z.original_len}")
    xt = z.real @ inv_re + z.imag @ inv_im
    return T.transpose(xt, (0, 1, 3, 2))


def mean_freq(y: Tensor) -> Tensor:
    return T.mean(y, axis=-1)

