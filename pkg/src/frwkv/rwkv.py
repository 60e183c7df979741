"""RWKV-style blocks run along the frequency axis of one spectral stream.

Layout: a stream ``[B, N, D, F]`` becomes ``B*N`` sequences of ``F`` bins
(ascending frequency) with ``D`` channels, lifted to the block width.

Each block is a time-mix (decay-and-removal state update) followed by a
channel-mix, both residual. The time-mix derives seven streams from
token-shifted inputs: receptance ``r``, removal key, replacement key, value
``v``, output gate ``g``, interpolation ``eta`` and decay logits ``w``.
"""
from __future__ import annotations

import numpy as np

from . import kernels
from . import tensor as T
from .errors import ConfigError, DivergenceError
from .nn import LayerNorm, Linear, Module, Parameter
from .tensor import Tensor

STREAMS = ("r", "k_rem", "k_rep", "v", "g", "eta", "w")
GN_EPS = 1e-5
KEY_EPS = 1e-12


def token_shift(x: Tensor) -> Tensor:
    """Previous element along axis 1, zero before the first."""
    pad = T.zeros(x.shape[:1] + (1,) + x.shape[2:])
    return T.concat([pad, x[:, :-1]], axis=1)


def unit_key(k: Tensor) -> Tensor:
    return k / T.sqrt(T.tsum(k * k, axis=-1, keepdims=True) + KEY_EPS)


def _first_bad_step(y: np.ndarray) -> int | None:
    bad = ~np.isfinite(y).reshape(y.shape[0], y.shape[1], -1).all(axis=(0, 2))
    return int(np.argmax(bad)) if bad.any() else None


def wkv_scan(r, kh, eta, kr, v, d, s0=None) -> Tensor:
    """Fused recurrence over axis 1 of ``[rows, steps, heads, n]`` streams.

    ``s0`` is a constant initial state (zeros by default).
    """
    streams = (r, kh, eta, kr, v, d)
    arrs = [np.ascontiguousarray(t.data) for t in streams]
    rows, _, heads, n = arrs[0].shape
    s0 = np.zeros((rows, heads, n, n)) if s0 is None else np.ascontiguousarray(s0, dtype=np.float64)
    y, s_last = kernels.wkv_forward(*arrs, s0)
    step = _first_bad_step(y)
    if step is not None or not np.isfinite(s_last).all():
        raise DivergenceError(f"non-finite recurrent state at step {step}", step=step)

    def vjp(g):
        grads = kernels.wkv_backward(*arrs, s0, np.ascontiguousarray(g), np.zeros_like(s0))
        return grads[:6]

    return T.custom_op(y, streams, vjp, "wkv_scan")


def wkv_step(state: Tensor, r, kh, eta, kr, v, d, step: int = 0) -> tuple[Tensor, Tensor]:
    """One recurrence step on ``[rows, heads, n]`` streams and ``[rows, heads, n, n]`` state.

    ``S' = S (diag(d) - kh (eta*kh)^T) + v kr^T`` and the read ``y = S' r``.
    """
    sk = state @ T.reshape(kh, kh.shape + (1,))
    a = eta * kh
    new = (state * T.reshape(d, d.shape[:-1] + (1, d.shape[-1]))
           - sk * T.reshape(a, a.shape[:-1] + (1, a.shape[-1]))
           + T.outer(v, kr))
    if not np.isfinite(new.data).all():
        raise DivergenceError(f"non-finite recurrent state at step {step}", step=step)
    y = T.reshape(new @ T.reshape(r, r.shape + (1,)), r.shape)
    return new, y


class TimeMix(Module):
    def __init__(self, width: int, heads: int, ffn_dim: int):
        if heads < 1 or width % heads:
            raise ConfigError(f"heads ({heads}) must divide the block width ({width})")
        self.width, self.heads = width, heads
        self.ln = LayerNorm(width)
        self.mix = Parameter((len(STREAMS), width), ("zeros",), decay=False)
        self.w_r = Linear(width, width, bias=False)
        self.w_krem = Linear(width, width, bias=False)
        self.w_krep = Linear(width, width, bias=False)
        self.w_v = Linear(width, width, bias=False)
        self.gate1 = Linear(width, ffn_dim, bias=False)
        self.gate2 = Linear(ffn_dim, width, bias=False)
        self.eta1 = Linear(width, ffn_dim, bias=False)
        self.eta2 = Linear(ffn_dim, width)
        self.decay1 = Linear(width, ffn_dim, bias=False)
        self.decay2 = Linear(ffn_dim, width)
        # spread initial decays over roughly (0.27, 0.95)
        self.decay2.bias.init = ("linspace", -1.0, 3.0)
        self.gn_weight = Parameter((width,), ("ones",))
        self.gn_bias = Parameter((width,))
        self.out = Linear(width, width, bias=False, zero_init=True)

    def _heads(self, x: Tensor) -> Tensor:
        rows, steps, _ = x.shape
        return T.reshape(x, (rows, steps, self.heads, self.width // self.heads))

    def streams(self, x: Tensor) -> dict[str, Tensor]:
        """Per-head streams ``[rows, steps, heads, n]`` plus the flat gate ``g``."""
        h = self.ln(x)
        diff = token_shift(h) - h
        m = T.sigmoid(self.mix)
        xs = {name: h + diff * m[i] for i, name in enumerate(STREAMS)}
        r = self.w_r(xs["r"])
        k_rem = self.w_krem(xs["k_rem"])
        k_rep = self.w_krep(xs["k_rep"])
        v = self.w_v(xs["v"])
        g = T.sigmoid(self.gate2(T.tanh(self.gate1(xs["g"]))))
        eta = T.sigmoid(self.eta2(T.tanh(self.eta1(xs["eta"]))))
        d = T.sigmoid(self.decay2(T.tanh(self.decay1(xs["w"]))))
        return {
            "r": self._heads(r), "kh": unit_key(self._heads(k_rem)), "eta": self._heads(eta),
            "kr": self._heads(k_rep), "v": self._heads(v), "d": self._heads(d), "g": g,
        }

    def readout(self, y: Tensor, g: Tensor) -> Tensor:
        """Group norm per head, gate, output projection. ``y`` is ``[..., heads, n]``."""
        y = T.layer_norm(y, eps=GN_EPS)
        y = T.reshape(y, y.shape[:-2] + (self.width,)) * self.gn_weight + self.gn_bias
        return self.out(y * g)

    def forward(self, x: Tensor) -> Tensor:
        s = self.streams(x)
        y = wkv_scan(s["r"], s["kh"], s["eta"], s["kr"], s["v"], s["d"])
        return self.readout(y, s["g"])

    def forward_stepwise(self, x: Tensor) -> Tensor:
        """Same map as :meth:`forward` but one :func:`wkv_step` per sequence element."""
        s = self.streams(x)
        rows, steps, heads, n = s["r"].shape
        state = T.zeros((rows, heads, n, n))
        outs = []
        for t in range(steps):
            state, y = wkv_step(state, *(s[k][:, t] for k in ("r", "kh", "eta", "kr", "v", "d")),
                                step=t)
            outs.append(self.readout(y, s["g"][:, t]))
        return T.stack(outs, axis=1)

    @staticmethod
    def count(width, ffn_dim) -> int:
        return (2 * width + len(STREAMS) * width + 5 * width * width
                + 6 * width * ffn_dim + 2 * width + 2 * width)


class ChannelMix(Module):
    def __init__(self, width: int, ffn_dim: int):
        self.ln = LayerNorm(width)
        self.mix = Parameter((2, width), ("zeros",), decay=False)
        self.key = Linear(width, ffn_dim, bias=False)
        self.value = Linear(ffn_dim, width, bias=False, zero_init=True)
        self.receptance = Linear(width, width, bias=False)

    def forward(self, x: Tensor) -> Tensor:
        h = self.ln(x)
        diff = token_shift(h) - h
        m = T.sigmoid(self.mix)
        xk, xr = h + diff * m[0], h + diff * m[1]
        k = T.relu(self.key(xk)) ** 2
        return T.sigmoid(self.receptance(xr)) * self.value(k)

    @staticmethod
    def count(width, ffn_dim) -> int:
        return 2 * width + 2 * width + 2 * width * ffn_dim + width * width


class RwkvBlock(Module):
    def __init__(self, width: int, heads: int, ffn_dim: int):
        self.time_mix = TimeMix(width, heads, ffn_dim)
        self.channel_mix = ChannelMix(width, ffn_dim)

    def forward(self, x: Tensor, stepwise: bool = False) -> Tensor:
        tm = self.time_mix.forward_stepwise(x) if stepwise else self.time_mix(x)
        x = x + tm
        return x + self.channel_mix(x)

    @staticmethod
    def count(width, ffn_dim) -> int:
        return TimeMix.count(width, ffn_dim) + ChannelMix.count(width, ffn_dim)


class BranchEncoder(Module):
    """Residual RWKV encoder for one spectral stream (real or imaginary)."""

    def __init__(self, dim: int, width: int, heads: int, layers: int, ffn_dim: int):
        self.in_proj = Linear(dim, width)
        self.blocks = [RwkvBlock(width, heads, ffn_dim) for _ in range(layers)]
        self.out_proj = Linear(width, dim)

    def forward(self, z: Tensor, stepwise: bool = False) -> Tensor:
        b, n, d, f = z.shape
        h = T.reshape(T.transpose(z, (0, 1, 3, 2)), (b * n, f, d))
        h = self.in_proj(h)
        for block in self.blocks:
            h = block(h, stepwise=stepwise)
        h = self.out_proj(h)
        h = T.transpose(T.reshape(h, (b, n, f, d)), (0, 1, 3, 2))
        return z + h

    @staticmethod
    def count(dim, width, heads, layers, ffn_dim) -> int:
        return (Linear.count(dim, width) + Linear.count(width, dim)
                + layers * RwkvBlock.count(width, ffn_dim))
