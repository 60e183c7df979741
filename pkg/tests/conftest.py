from __future__ import annotations

import numpy as np
import pytest

from frwkv import tensor as T
from frwkv.model import ModelConfig

TOY = dict(seq_len=8, horizon=4, n_vars=2, dim=4, hidden=8, heads=1, layers=1, ffn_dim=8,
           period=4, routers=2, alpha_init=0.1, trust_bias_init=-2.0)


def toy_config(**kw) -> ModelConfig:
    return ModelConfig(**{**TOY, **kw})


def numeric_grad(f, arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. ``arr`` (mutated in place, then restored)."""
    g = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


def check_op_grad(fn, *shapes, seed=0, tol=1e-6, positive=False):
    """Finite-difference check of ``sum(fn(*inputs) * w)`` for random inputs and weights."""
    rng = np.random.default_rng(seed)
    arrays = [rng.uniform(0.5, 2.0, s) if positive else rng.normal(size=s) for s in shapes]
    leaves = [T.tensor(a, requires_grad=True) for a in arrays]
    out = fn(*leaves)
    w = rng.normal(size=out.shape)
    (T.tsum(out * w)).backward()

    def f():
        with T.no_grad():
            return float(np.sum(fn(*[T.tensor(a) for a in arrays]).data * w))

    for a, leaf in zip(arrays, leaves):
        assert rel_err(leaf.grad, numeric_grad(f, a)) < tol


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def randomize_all(model, rng, scale=0.3):
    """Perturb every parameter (including zero-initialised ones) so no path is trivially dead."""
    for _, p in model.named_parameters():
        p.data = p.data + rng.normal(scale=scale, size=p.shape)
    if hasattr(model.interaction, "alpha"):
        model.interaction.alpha.data = np.array(0.1)  # keep clip() differentiable


def model_grad_errors(model, x, y, rng=None, per_param=None, h=1e-5) -> dict[str, float]:
    """Norm-wise relative error of tape gradients vs central differences of an MSE loss.

    ``per_param`` limits the check to that many random entries per parameter.
    """
    def loss():
        d = model(x) - y
        return T.mean(d * d)

    model.zero_grad()
    loss().backward()

    def f():
        with T.no_grad():
            return loss().item()

    errors = {}
    for name, p in model.named_parameters():
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if per_param is not None and flat.size > per_param:
            idx = rng.choice(flat.size, per_param, replace=False)
        num = np.empty(len(idx))
        for j, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + h
            fp = f()
            flat[i] = old - h
            fm = f()
            flat[i] = old
            num[j] = (fp - fm) / (2 * h)
        errors[name] = rel_err(p.grad.reshape(-1)[idx], num)
    return errors


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
