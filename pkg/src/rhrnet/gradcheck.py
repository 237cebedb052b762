"""End-to-end finite-difference check of the network gradient.

The analytic side is the tape gradient of ``logcosh_loss(forward(x), y)``.
The numeric side never touches the tape: it uses its own numpy forward pass
that carries a leading "copy" axis over parameter sets, so every +step/-step
perturbation of every parameter element is evaluated in a few batched
sweeps instead of one forward pass per element.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .model import ModelConfig, ModelParams, build, forward_graph, param_shapes
from .training import logcosh_loss

STEP = 1e-5
TOLERANCE = 1e-5
# Denominator floor for the relative error so that gradient elements that are
# zero up to rounding do not turn FD noise into a large ratio.
REL_FLOOR = 1e-6


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _gru_copies(X, Wx, Wh, b, reverse=False):
    """X [K, B, T, i], Wx [K, 3n, i], Wh [K, 3n, n], b [K, 3n] -> [K, B, T, n]."""
    K, B, T, _ = X.shape
    n = Wh.shape[-1]
    xp = np.einsum("kbti,kgi->kbtg", X, Wx) + b[:, None, None, :]
    WzT = np.swapaxes(Wh[:, :n], 1, 2)
    WrT = np.swapaxes(Wh[:, n:2 * n], 1, 2)
    WcT = np.swapaxes(Wh[:, 2 * n:], 1, 2)
    h = np.zeros((K, B, n))
    out = np.empty((K, B, T, n))
    steps = range(T - 1, -1, -1) if reverse else range(T)
    for t in steps:
        z = _sigmoid(xp[:, :, t, :n] + h @ WzT)
        r = _sigmoid(xp[:, :, t, n:2 * n] + h @ WrT)
        c = np.tanh(xp[:, :, t, 2 * n:] + (r * h) @ WcT)
        h = z * h + (1.0 - z) * c
        out[:, :, t] = h
    return out


def _bi(X, P, k):
    f = _gru_copies(X, P[f"gru{k}.fwd.Wx"], P[f"gru{k}.fwd.Wh"], P[f"gru{k}.fwd.b"])
    g = _gru_copies(X, P[f"gru{k}.bwd.Wx"], P[f"gru{k}.bwd.Wh"], P[f"gru{k}.bwd.b"], reverse=True)
    return np.concatenate([f, g], axis=-1)


def _fold(h):
    K, B, T, F = h.shape
    return h.reshape(K, B, T // 2, 2 * F)


def _unfold(h):
    K, B, T, F = h.shape
    return h.reshape(K, B, 2 * T, F // 2)


def _prelu(x, alpha):
    a = alpha[:, None, None, :]
    return np.where(x < 0, a * x, x)


def reference_losses(P: dict[str, np.ndarray], x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Loss for each parameter copy.  ``P[name]`` has shape ``[K, *shape]``;
    ``x`` and ``y`` are ``[B, L]`` float64 arrays shared by all copies."""
    K = next(iter(P.values())).shape[0]
    X = np.broadcast_to(x[None, :, :, None], (K, *x.shape, 1))
    h = _fold(_bi(X, P, 1))
    r2 = _bi(h, P, 2)
    r3 = _bi(_fold(r2), P, 3)
    h = _unfold(_bi(_fold(r3), P, 4))
    h = _unfold(_prelu(r3 + _bi(h, P, 5), P["prelu5.alpha"]))
    h = _unfold(_prelu(r2 + _bi(h, P, 6), P["prelu6.alpha"]))
    out = _gru_copies(h, P["gru7.Wx"], P["gru7.Wh"], P["gru7.b"])[..., 0]
    e = np.abs(out - y[None])
    return np.mean(e + np.log1p(np.exp(-2 * e)) - np.log(2.0), axis=(1, 2))


def numeric_gradient(params: ModelParams, x: np.ndarray, y: np.ndarray, step: float = STEP,
                     chunk: int = 512) -> dict[str, np.ndarray]:
    base = {k: v.astype(np.float64) for k, v in params.arrays.items()}
    index = [(name, j) for name, v in base.items() for j in range(v.size)]
    flat_grad = np.empty(len(index))
    for start in range(0, len(index), chunk):
        block = index[start:start + chunk]
        K = 2 * len(block)
        P = {k: np.repeat(v[None], K, axis=0) for k, v in base.items()}
        for c, (name, j) in enumerate(block):
            P[name].reshape(K, -1)[2 * c, j] += step
            P[name].reshape(K, -1)[2 * c + 1, j] -= step
        losses = reference_losses(P, x, y)
        flat_grad[start:start + len(block)] = (losses[0::2] - losses[1::2]) / (2 * step)
    out, pos = {}, 0
    for name, v in base.items():
        out[name] = flat_grad[pos:pos + v.size].reshape(v.shape)
        pos += v.size
    return out


def analytic_gradient(params: ModelParams, x: np.ndarray, y: np.ndarray) -> dict[str, np.ndarray]:
    config = params.config
    xs = x[:, :, None].astype(np.float64)
    target = tn.Tensor(y[:, :, None].astype(np.float64))
    return tn.gradients(lambda v: logcosh_loss(forward_graph(config, v, xs), target),
                        params.arrays, dtype=np.float64)


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = REL_FLOOR) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


@dataclass
class GradCheckReport:
    seed: int
    worst: dict[str, float]  # layer group -> max relative error
    n_params: int

    @property
    def max_error(self) -> float:
        return max(self.worst.values())

    def passed(self, tol: float = TOLERANCE) -> bool:
        return self.max_error < tol

    def lines(self) -> list[str]:
        out = [f"seed {self.seed}: {self.n_params} parameters checked"]
        out += [f"  {group:<8} max rel err {err:.3e}" for group, err in self.worst.items()]
        out.append(f"  overall  max rel err {self.max_error:.3e}")
        return out


def check(config: ModelConfig, seed: int, batch: int = 2, step: float = STEP,
          corrupt: bool = False) -> GradCheckReport:
    """Compare analytic and finite-difference gradients for a freshly built model.

    Inputs and targets are drawn uniformly from [-1, 1].  ``corrupt`` adds a
    deliberate error to one analytic gradient element (negative control).
    """
    params = build(config, seed, dtype=np.float64)
    rng = np.random.default_rng([seed, 1])
    # move slopes and biases off their special initial values so every
    # branch of the gradient is exercised
    for name, v in params.arrays.items():
        if name.endswith(".b") or name.startswith("prelu"):
            v += rng.uniform(-0.2, 0.2, v.shape)
    x = rng.uniform(-1, 1, (batch, config.L))
    y = rng.uniform(-1, 1, (batch, config.L))
    ana = analytic_gradient(params, x, y)
    if corrupt:
        name = next(iter(ana))
        ana[name] = ana[name].copy()
        ana[name].flat[0] += 1e-3 + 0.1 * abs(ana[name].flat[0])
    num = numeric_gradient(params, x, y, step)
    worst: dict[str, float] = {}
    for name in param_shapes(config):
        group = name.split(".")[0]
        err = float(relative_error(ana[name], num[name]).max())
        worst[group] = max(worst.get(group, 0.0), err)
    return GradCheckReport(seed, worst, params.size)
