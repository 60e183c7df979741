"""Parameters, a light module container, and the dense building blocks."""
from __future__ import annotations

import zlib
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    """Learnable leaf tensor that knows how to initialise itself.

    ``init`` is one of ``("zeros",)``, ``("ones",)``, ``("const", v)``,
    ``("fan_in", n)`` (uniform in +-1/sqrt(n)), ``("normal", std)`` or
    ``("linspace", lo, hi)``. ``decay`` marks whether AdamW weight decay applies.
    """

    __slots__ = ("init", "decay")

    def __init__(self, shape, init=("zeros",), decay: bool | None = None):
        super().__init__(np.zeros(shape), requires_grad=True)
        self.init = init
        self.decay = len(self.data.shape) >= 2 if decay is None else decay

    def reset(self, rng: np.random.Generator) -> None:
        kind, *args = self.init
        shape = self.data.shape
        if kind == "zeros":
            data = np.zeros(shape)
        elif kind == "ones":
            data = np.ones(shape)
        elif kind == "const":
            data = np.full(shape, float(args[0]))
        elif kind == "fan_in":
            bound = 1.0 / np.sqrt(max(args[0], 1))
            data = rng.uniform(-bound, bound, size=shape)
        elif kind == "normal":
            data = rng.normal(0.0, args[0], size=shape)
        elif kind == "linspace":
            data = np.linspace(args[0], args[1], int(np.prod(shape))).reshape(shape)
        else:
            raise ValueError(f"unknown init kind {kind!r}")
        self.data = data
        self.grad = None


def param_rng(seed: int, name: str) -> np.random.Generator:
    """Per-parameter generator, so equally-named parameters agree across variants."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode())])


class Module:
    """Attribute-registered container: Parameters, Modules and lists of Modules."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def reset_parameters(self, seed: int) -> None:
        for name, p in self.named_parameters():
            p.reset(param_rng(seed, name))

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        unexpected = set(state) - set(own)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(unexpected)}")
        for name, p in own.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ValueError(f"{name}: shape {value.shape} != {p.shape}")
            p.data = value.copy()
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    """``y = x @ W (+ b)`` with ``W`` stored as ``[in, out]``."""

    def __init__(self, n_in: int, n_out: int, bias: bool = True, zero_init: bool = False):
        self.n_in, self.n_out = n_in, n_out
        self.weight = Parameter((n_in, n_out), ("zeros",) if zero_init else ("fan_in", n_in))
        self.bias = Parameter((n_out,)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y

    @staticmethod
    def count(n_in, n_out, bias=True) -> int:
        return n_in * n_out + (n_out if bias else 0)


class MLP(Module):
    """Two dense layers with a tanh between them."""

    def __init__(self, n_in: int, n_hidden: int, n_out: int, bias: bool = True,
                 zero_last: bool = False, last_bias: float = 0.0):
        self.fc1 = Linear(n_in, n_hidden, bias=bias)
        self.fc2 = Linear(n_hidden, n_out, bias=bias, zero_init=zero_last)
        if bias and last_bias:
            self.fc2.bias.init = ("const", last_bias)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(T.tanh(self.fc1(x)))

    @staticmethod
    def count(n_in, n_hidden, n_out, bias=True) -> int:
        return Linear.count(n_in, n_hidden, bias) + Linear.count(n_hidden, n_out, bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.eps = eps
        self.weight = Parameter((dim,), ("ones",))
        self.bias = Parameter((dim,))

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.weight, self.bias, self.eps)
