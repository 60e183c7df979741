"""Periodic positional context: fold the embedded window by period position,
then compress the position tokens through a few learned router tokens."""
from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .nn import LayerNorm, Linear, Module, Parameter
from .tensor import Tensor


def fold_indices(length: int, period: int) -> np.ndarray:
    """Time indices of the circularly padded window, shape ``[M, P]``."""
    if length < 1 or period < 1:
        raise ConfigError(f"need length >= 1 and period >= 1, got {length}, {period}")
    reps = math.ceil(length / period)
    return (np.arange(reps * period) % length).reshape(reps, period)


def period_fold(x_emb: Tensor, period: int) -> Tensor:
    """``[B, N, T, D] -> [B, N, P, D]``: mean over the ``M = ceil(T/P)`` repetitions.

    Short windows are padded by wrapping around to the start of the window.
    """
    idx = fold_indices(x_emb.shape[2], period)
    b, n, _, d = x_emb.shape
    padded = T.take(x_emb, idx.reshape(-1), axis=2)
    grouped = T.reshape(padded, (b, n) + idx.shape + (d,))
    return T.mean(grouped, axis=2)


class PeriodicPositionRouter(Module):
    """Two-stage router attention from ``P`` position tokens to one context vector.

    Tokens are row vectors, so every projection is a right-multiplication.
    """

    def __init__(self, dim: int, n_routers: int, router_std: float = 0.02):
        if n_routers < 1:
            raise ConfigError(f"router count must be >= 1, got {n_routers}")
        self.dim = dim
        self.ln = LayerNorm(dim)
        self.routers = Parameter((n_routers, dim), ("normal", router_std), decay=False)
        self.w_q = Linear(dim, dim, bias=False)
        self.w_k = Linear(dim, dim, bias=False)
        self.w_v = Linear(dim, dim, bias=False)
        self.w_o = Linear(dim, dim, bias=False)

    def attention(self, phi: Tensor) -> dict[str, Tensor]:
        """Intermediate tensors of the routing, keyed by name (for inspection)."""
        b, n, p, d = phi.shape
        x = self.ln(T.reshape(phi, (b * n, p, d)))
        q, k, v = self.w_q(x), self.w_k(x), self.w_v(x)
        scale = 1.0 / math.sqrt(d)
        a_r = T.softmax(self.routers @ k.swapaxes(-1, -2) * scale, axis=-1)  # [BN, R, P]
        buffers = a_r @ v                                                   # [BN, R, D]
        a_t = T.softmax(q @ buffers.swapaxes(-1, -2) * scale, axis=-1)      # [BN, P, R]
        routed = a_t @ buffers                                              # [BN, P, D]
        ctx = self.w_o(T.mean(routed, axis=1))
        return {"x": x, "a_r": a_r, "buffers": buffers, "a_t": a_t, "routed": routed,
                "c_pos": T.reshape(ctx, (b, n, d))}

    def forward(self, phi: Tensor) -> Tensor:
        return self.attention(phi)["c_pos"]

    @staticmethod
    def count(dim, n_routers) -> int:
        return 2 * dim + n_routers * dim + 4 * dim * dim


class PPCE(Module):
    def __init__(self, dim: int, period: int, n_routers: int):
        if period < 1:
            raise ConfigError(f"period-position length must be >= 1, got {period}")
        self.period = period
        self.router = PeriodicPositionRouter(dim, n_routers)

    def forward(self, x_emb: Tensor) -> Tensor:
        return self.router(period_fold(x_emb, self.period))

    @staticmethod
    def count(dim, n_routers) -> int:
        return PeriodicPositionRouter.count(dim, n_routers)
