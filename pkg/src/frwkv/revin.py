"""Reversible instance normalisation, the scalar-to-embedding lift, and the
horizon projection that brackets the frequency module."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DegenerateScaleError, ProtocolError
from .nn import Module, Parameter
from .tensor import Tensor

REVIN_EPS = 1e-5


@dataclass
class RevinState:
    mu: np.ndarray      # [B, 1, N]
    sigma: np.ndarray   # [B, 1, N], >= eps
    gamma: Tensor       # [N]
    beta: Tensor        # [N]
    eps: float = REVIN_EPS


class RevIN(Module):
    """Per-window, per-variable standardisation over time with a learnable affine.

    Window statistics are treated as constants (no gradient through mu/sigma).
    ``sigma`` is the population std clamped below at ``eps``.
    """

    def __init__(self, n_vars: int, affine: bool = True, eps: float = REVIN_EPS):
        self.eps = eps
        self.affine = affine
        self.gamma = Parameter((n_vars,), ("ones",)) if affine else None
        self.beta = Parameter((n_vars,)) if affine else None

    def _affine(self, n):
        if self.affine:
            return self.gamma, self.beta
        return T.ones((n,)), T.zeros((n,))

    def normalize(self, x: Tensor) -> tuple[Tensor, RevinState]:
        if x.shape[1] < 2:
            raise ProtocolError(f"RevIN needs at least 2 time steps, got {x.shape[1]}")
        mu = x.data.mean(axis=1, keepdims=True)
        sigma = np.maximum(x.data.std(axis=1, keepdims=True), self.eps)
        gamma, beta = self._affine(x.shape[-1])
        out = (x - mu) / sigma * gamma + beta
        return out, RevinState(mu, sigma, gamma, beta, self.eps)

    def denormalize(self, y: Tensor, state: RevinState) -> Tensor:
        if np.any(np.abs(state.gamma.data) < 1e-12):
            raise DegenerateScaleError("RevIN gamma is (numerically) zero; cannot invert")
        return (y - state.beta) / state.gamma * state.sigma + state.mu

    @staticmethod
    def count(n_vars, affine=True) -> int:
        return 2 * n_vars if affine else 0


class TokenEmbed(Module):
    """``[B, T, N] -> [B, N, T, D]`` by an outer product with a learned vector."""

    def __init__(self, dim: int):
        self.e = Parameter((dim,), ("fan_in", 1))

    def forward(self, x: Tensor) -> Tensor:
        xt = T.transpose(x, (0, 2, 1))
        return T.reshape(xt, xt.shape + (1,)) * self.e


class HorizonProjection(Module):
    """Map the residual stream ``[B, N, T, D]`` to a forecast ``[B, H, N]``.

    ``"mean"`` averages the embedding axis and applies one ``T -> H`` map
    shared across variables; ``"flatten"`` maps the flattened ``T*D`` features.
    """

    METHODS = ("mean", "flatten")

    def __init__(self, seq_len: int, horizon: int, dim: int, method: str = "mean"):
        if method not in self.METHODS:
            raise ConfigError(f"unknown projection method {method!r}")
        self.method = method
        n_in = seq_len if method == "mean" else seq_len * dim
        self.weight = Parameter((n_in, horizon), ("fan_in", n_in))
        self.bias = Parameter((horizon,))

    def forward(self, x: Tensor) -> Tensor:
        if self.method == "mean":
            feats = T.mean(x, axis=-1)
        else:
            b, n, t, d = x.shape
            feats = T.reshape(x, (b, n, t * d))
        out = feats @ self.weight + self.bias
        return T.transpose(out, (0, 2, 1))

    @staticmethod
    def count(seq_len, horizon, dim, method="mean") -> int:
        n_in = seq_len if method == "mean" else seq_len * dim
        return n_in * horizon + horizon
