"""Cross-branch gates between the real and imaginary streams, and the
trust-controlled signed correction driven by periodic-position context.

Gate naming follows source -> target: ``g0_i2r`` is produced from the
imaginary context and scales the real response.
"""
from __future__ import annotations

from dataclasses import dataclass

from . import tensor as T
from .errors import ConfigError
from .nn import MLP, Module, Parameter
from .tensor import Tensor

ALPHA_MAX = 0.20

KINDS = ("FRWKV", "CrossBranchGate", "CrossBranchPhaseGate", "FullContextDelta", "FRWKVPlus")
_ALIASES = {
    "frwkv+": "FRWKVPlus", "frwkvplus": "FRWKVPlus", "adaptivephasegate": "FRWKVPlus",
    "frwkv": "FRWKV", "crossbranchgate": "CrossBranchGate", "branchgate": "CrossBranchGate",
    "crossbranchphasegate": "CrossBranchPhaseGate", "phasegate": "CrossBranchPhaseGate",
    "fullcontextdelta": "FullContextDelta", "fullctxdelta": "FullContextDelta",
}
FLAGS = ("no_ppce", "positive_only", "fixed_trust")


@dataclass(frozen=True)
class VariantKind:
    kind: str = "FRWKVPlus"
    no_ppce: bool = False
    positive_only: bool = False
    fixed_trust: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown variant {self.kind!r}; expected one of {KINDS}")
        if self.kind != "FRWKVPlus" and (self.no_ppce or self.positive_only or self.fixed_trust):
            raise ConfigError("component flags are only valid with FRWKVPlus")

    @classmethod
    def parse(cls, text: str | "VariantKind") -> "VariantKind":
        """Parse ``"FRWKVPlus"``, ``"FRWKV+"``, ``"FRWKVPlus+no_ppce+fixed_trust"`` ..."""
        if isinstance(text, VariantKind):
            return text
        head, *flags = [part.strip() for part in str(text).split("+") if part.strip()]
        if str(text).strip().lower().startswith("frwkv+") and head.lower() == "frwkv":
            head = "FRWKVPlus"
        kind = _ALIASES.get(head.lower(), head)
        unknown = [f for f in flags if f not in FLAGS]
        if unknown:
            raise ConfigError(f"unknown variant flags {unknown}; expected any of {FLAGS}")
        return cls(kind, **{f: True for f in flags})

    def __str__(self) -> str:
        return "+".join([self.kind] + [f for f in FLAGS if getattr(self, f)])

    @property
    def uses_base_gate(self) -> bool:
        return self.kind != "FRWKV"

    @property
    def uses_correction(self) -> bool:
        return self.kind in ("CrossBranchPhaseGate", "FullContextDelta", "FRWKVPlus")

    @property
    def uses_ppce(self) -> bool:
        return self.uses_correction and not self.no_ppce

    @property
    def adaptive_trust(self) -> bool:
        return self.kind in ("FullContextDelta", "FRWKVPlus") and not self.fixed_trust

    @property
    def full_context_delta(self) -> bool:
        return self.kind == "FullContextDelta"


def final_gates(g0: Tensor, delta: Tensor | None, trust: Tensor | None,
                alpha: Tensor | None) -> Tensor:
    """``1 + g0 (+ alpha * trust * delta)``; ``alpha`` must already be clipped."""
    gate = 1.0 + g0
    if delta is None:
        return gate
    correction = delta if trust is None else trust * delta
    return gate + alpha * correction


def apply_gates(y_r: Tensor, y_i: Tensor, g_r: Tensor, g_i: Tensor) -> tuple[Tensor, Tensor]:
    """Scale ``[B, N, D, F]`` responses by ``[B, N, D]`` gates shared across bins."""
    return (y_r * T.reshape(g_r, g_r.shape + (1,)),
            y_i * T.reshape(g_i, g_i.shape + (1,)))


class BranchInteraction(Module):
    """Base gates, signed deltas, trust scores and the clipped correction strength."""

    def __init__(self, dim: int, variant: VariantKind, alpha_init: float = 0.05,
                 trust_bias_init: float = -3.0, hidden: int | None = None):
        self.dim = dim
        self.variant = variant
        h = hidden or dim
        if variant.uses_base_gate:
            self.base_i2r = MLP(dim, h, dim)
            self.base_r2i = MLP(dim, h, dim)
        if variant.uses_correction:
            n_in = 3 * dim if variant.full_context_delta else 2 * dim
            self.delta_i2r = MLP(n_in, h, dim, zero_last=True)
            self.delta_r2i = MLP(n_in, h, dim, zero_last=True)
            self.alpha = Parameter((), ("const", alpha_init), decay=False)
        if variant.adaptive_trust:
            self.trust_r = MLP(3 * dim, h, dim, last_bias=trust_bias_init)
            self.trust_i = MLP(3 * dim, h, dim, last_bias=trust_bias_init)

    def base_gates(self, c_r: Tensor, c_i: Tensor) -> tuple[Tensor, Tensor]:
        return T.sigmoid(self.base_i2r(c_i)), T.sigmoid(self.base_r2i(c_r))

    def deltas(self, c_r: Tensor, c_i: Tensor, c_pos: Tensor) -> tuple[Tensor, Tensor]:
        if self.variant.full_context_delta:
            both = T.concat([c_r, c_i, c_pos], axis=-1)
            d_i2r, d_r2i = T.tanh(self.delta_i2r(both)), T.tanh(self.delta_r2i(both))
        else:
            d_i2r = T.tanh(self.delta_i2r(T.concat([c_i, c_pos], axis=-1)))
            d_r2i = T.tanh(self.delta_r2i(T.concat([c_r, c_pos], axis=-1)))
        if self.variant.positive_only:
            d_i2r, d_r2i = T.tabs(d_i2r), T.tabs(d_r2i)
        return d_i2r, d_r2i

    def trust(self, c_r: Tensor, c_i: Tensor, c_pos: Tensor) -> tuple[Tensor, Tensor]:
        if not self.variant.adaptive_trust:
            return T.ones(c_r.shape), T.ones(c_r.shape)
        ctx = T.concat([c_r, c_i, c_pos], axis=-1)
        return T.sigmoid(self.trust_r(ctx)), T.sigmoid(self.trust_i(ctx))

    def alpha_value(self) -> Tensor:
        return T.clip(self.alpha, 0.0, ALPHA_MAX)

    def compute(self, c_r: Tensor, c_i: Tensor, c_pos: Tensor | None = None) -> dict[str, Tensor]:
        """All gate intermediates for contexts ``[B, N, D]``; ``G_r``/``G_i`` are the outputs."""
        v = self.variant
        if not v.uses_base_gate:
            one = T.ones(c_r.shape)
            return {"G_r": one, "G_i": one}
        g_i2r, g_r2i = self.base_gates(c_r, c_i)
        out = {"g0_i2r": g_i2r, "g0_r2i": g_r2i}
        if not v.uses_correction:
            out["G_r"], out["G_i"] = final_gates(g_i2r, None, None, None), final_gates(g_r2i, None, None, None)
            return out
        if c_pos is None or not v.uses_ppce:
            c_pos = T.zeros(c_r.shape)
        d_i2r, d_r2i = self.deltas(c_r, c_i, c_pos)
        t_r, t_i = self.trust(c_r, c_i, c_pos)
        alpha = self.alpha_value()
        out.update(delta_i2r=d_i2r, delta_r2i=d_r2i, trust_r=t_r, trust_i=t_i, alpha=alpha,
                   G_r=final_gates(g_i2r, d_i2r, t_r, alpha),
                   G_i=final_gates(g_r2i, d_r2i, t_i, alpha))
        return out

    def forward(self, c_r, c_i, c_pos=None) -> tuple[Tensor, Tensor]:
        out = self.compute(c_r, c_i, c_pos)
        return out["G_r"], out["G_i"]

    @staticmethod
    def count(dim, variant: VariantKind, hidden=None) -> int:
        h = hidden or dim
        total = 0
        if variant.uses_base_gate:
            total += 2 * MLP.count(dim, h, dim)
        if variant.uses_correction:
            n_in = 3 * dim if variant.full_context_delta else 2 * dim
            total += 2 * MLP.count(n_in, h, dim) + 1
        if variant.adaptive_trust:
            total += 2 * MLP.count(3 * dim, h, dim)
        return total
