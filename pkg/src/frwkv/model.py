"""The full forecaster for every variant, its config, and checkpoint I/O."""
from __future__ import annotations

import contextlib
import dataclasses
import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import spectral
from . import tensor as T
from .errors import ConfigError, FrwkvError
from .gates import BranchInteraction, VariantKind, apply_gates
from .nn import Module
from .ppce import PPCE
from .revin import HorizonProjection, RevIN, TokenEmbed
from .rwkv import BranchEncoder
from .tensor import Tensor


@dataclass
class ModelConfig:
    variant: str = "FRWKVPlus"
    seq_len: int = 96
    horizon: int = 96
    n_vars: int = 7
    dim: int = 16
    hidden: int = 512
    heads: int = 8
    layers: int = 2
    ffn_dim: int = 512
    period: int = 24
    routers: int = 4
    alpha_init: float = 0.05
    trust_bias_init: float = -3.0
    gate_hidden: int = 0  # 0 -> same as dim
    projection: str = "mean"
    revin_affine: bool = True
    fft_method: str = "dft"
    # recorded for provenance only, no mechanism uses them
    patch_len: int = 16
    stride: int = 8
    seed: int = 2024

    def __post_init__(self):
        self.variant = str(VariantKind.parse(self.variant))
        for name in ("seq_len", "horizon", "n_vars", "dim", "hidden", "heads", "layers",
                     "ffn_dim", "period", "routers"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.seq_len < 2:
            raise ConfigError("seq_len must be >= 2 for instance normalisation")
        if self.hidden % self.heads:
            raise ConfigError(f"heads ({self.heads}) must divide hidden ({self.hidden})")
        if self.projection not in HorizonProjection.METHODS:
            raise ConfigError(f"unknown projection {self.projection!r}")
        if self.fft_method not in ("dft", "fft"):
            raise ConfigError(f"unknown fft_method {self.fft_method!r}")
        if self.fft_method == "fft" and self.seq_len & (self.seq_len - 1):
            raise ConfigError("fft_method='fft' needs a power-of-two seq_len")

    @property
    def variant_kind(self) -> VariantKind:
        return VariantKind.parse(self.variant)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def count_parameters(cfg: ModelConfig) -> int:
    """Closed-form parameter count; must equal ``Forecaster(cfg).num_parameters()``."""
    v = cfg.variant_kind
    total = RevIN.count(cfg.n_vars, cfg.revin_affine) + cfg.dim
    total += 2 * BranchEncoder.count(cfg.dim, cfg.hidden, cfg.heads, cfg.layers, cfg.ffn_dim)
    total += BranchInteraction.count(cfg.dim, v, cfg.gate_hidden or None)
    if v.uses_ppce:
        total += PPCE.count(cfg.dim, cfg.routers)
    total += HorizonProjection.count(cfg.seq_len, cfg.horizon, cfg.dim, cfg.projection)
    return total


@contextlib.contextmanager
def _stage(name: str):
    try:
        yield
    except FrwkvError as exc:
        if getattr(exc, "stage", None) is None:
            exc.stage = name
            if exc.args:
                exc.args = (f"[{name}] {exc.args[0]}",) + exc.args[1:]
        raise


class Forecaster(Module):
    """RevIN -> embed -> rFFT -> two RWKV branches -> gates -> irFFT -> residual -> head."""

    def __init__(self, config: ModelConfig, seed: int | None = None):
        self.config = config
        v = config.variant_kind
        self.variant = v
        self.revin = RevIN(config.n_vars, affine=config.revin_affine)
        self.embed = TokenEmbed(config.dim)
        branch = (config.dim, config.hidden, config.heads, config.layers, config.ffn_dim)
        self.branch_real = BranchEncoder(*branch)
        self.branch_imag = BranchEncoder(*branch)
        self.interaction = BranchInteraction(config.dim, v, config.alpha_init,
                                             config.trust_bias_init, config.gate_hidden or None)
        self.ppce = PPCE(config.dim, config.period, config.routers) if v.uses_ppce else None
        self.head = HorizonProjection(config.seq_len, config.horizon, config.dim, config.projection)
        self.reset_parameters(config.seed if seed is None else seed)

    def forward(self, x, details: bool = False, stepwise: bool = False):
        cfg = self.config
        x = T.as_tensor(x)
        if x.ndim != 3 or x.shape[1:] != (cfg.seq_len, cfg.n_vars):
            raise ConfigError(f"input shape {x.shape} does not match [B, {cfg.seq_len}, {cfg.n_vars}]")
        with _stage("revin"):
            x_norm, state = self.revin.normalize(x)
        x_emb = self.embed(x_norm)
        with _stage("rfft"):
            z = spectral.rfft_time(x_emb, cfg.fft_method)
        with _stage("branch_real"):
            y_r = self.branch_real(z.real, stepwise=stepwise)
        with _stage("branch_imag"):
            y_i = self.branch_imag(z.imag, stepwise=stepwise)
        info = {}
        if self.variant.uses_base_gate:
            with _stage("gates"):
                c_r, c_i = spectral.mean_freq(y_r), spectral.mean_freq(y_i)
                c_pos = self.ppce(x_emb) if self.ppce is not None else None
                info = self.interaction.compute(c_r, c_i, c_pos)
                info.update(c_r=c_r, c_i=c_i, c_pos=c_pos)
                y_r, y_i = apply_gates(y_r, y_i, info["G_r"], info["G_i"])
        with _stage("irfft"):
            x_freq = spectral.irfft_time(spectral.Spectrum(y_r, y_i, z.original_len))
        with _stage("head"):
            out = self.head(x_emb + x_freq)
        with _stage("revin_denorm"):
            out = self.revin.denormalize(out, state)
        if details:
            info.update(x_emb=x_emb, spectrum=z, y_r=y_r, y_i=y_i)
            return out, info
        return out

    def predict(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        outs = []
        with T.no_grad():
            for i in range(0, len(x), batch_size):
                outs.append(self.forward(x[i:i + batch_size]).data)
        return np.concatenate(outs, axis=0) if outs else np.zeros((0, self.config.horizon, self.config.n_vars))


def init(config: ModelConfig, seed: int | None = None) -> Forecaster:
    return Forecaster(config, seed)


# ---------------------------------------------------------------------------
# checkpoint format
#
#   8 bytes  magic  b"FRWKVCK" + version byte
#   8 bytes  little-endian uint64 header length
#   header   UTF-8 JSON {"config", "params": [{name, shape, offset}], "extra"}
#   payload  little-endian float64, parameters concatenated in header order
# ---------------------------------------------------------------------------

CKPT_MAGIC = b"FRWKVCK"
CKPT_VERSION = 1


def save_checkpoint(path, model: Forecaster, extra: dict | None = None) -> None:
    index, chunks, offset = [], [], 0
    for name, p in model.named_parameters():
        index.append({"name": name, "shape": list(p.shape), "offset": offset})
        chunks.append(p.data.astype("<f8").ravel())
        offset += p.size
    header = json.dumps({"config": model.config.to_dict(), "params": index,
                         "extra": extra or {}}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC + bytes([CKPT_VERSION]))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        fh.write(np.concatenate(chunks).tobytes() if chunks else b"")


def load_checkpoint(path) -> tuple[Forecaster, dict]:
    raw = Path(path).read_bytes()
    if raw[:7] != CKPT_MAGIC:
        raise ConfigError(f"{path}: not a checkpoint (bad magic)")
    if raw[7] != CKPT_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {raw[7]}")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen].decode())
    payload = np.frombuffer(raw[16 + hlen:], dtype="<f8")
    model = Forecaster(ModelConfig.from_dict(header["config"]))
    state = {}
    for entry in header["params"]:
        n = int(np.prod(entry["shape"])) if entry["shape"] else 1
        state[entry["name"]] = payload[entry["offset"]:entry["offset"] + n].reshape(entry["shape"])
    model.load_state_dict(state)
    return model, header.get("extra", {})
