"""GRU cells and sequence layers, PReLU, residual merge and fold/unfold.

Sequences are ``[T, F]`` or batched ``[B, T, F]``.  Gate blocks inside the
stacked kernels are ordered update (z), reset (r), candidate:

    z  = sigmoid(Wx_z x + Wh_z h + b_z)
    r  = sigmoid(Wx_r x + Wh_r h + b_r)
    c  = tanh(Wx_c x + Wh_c (r * h) + b_c)
    h' = z * h + (1 - z) * c
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import tensor as tn
from .errors import ContractError, DimensionError
from .tensor import Tensor, as_tensor

PRELU_INIT = 0.25


@dataclass(frozen=True)
class GruParams:
    Wx: Tensor | np.ndarray  # [3n, i]
    Wh: Tensor | np.ndarray  # [3n, n]
    b: Tensor | np.ndarray   # [3n]

    @property
    def n(self) -> int:
        return self.Wh.shape[1]

    @property
    def i(self) -> int:
        return self.Wx.shape[1]

    def check(self) -> None:
        n, i = self.n, self.i
        if self.Wx.shape != (3 * n, i) or self.Wh.shape != (3 * n, n) or self.b.shape != (3 * n,):
            raise DimensionError(
                f"inconsistent GRU shapes Wx={self.Wx.shape} Wh={self.Wh.shape} b={self.b.shape}")


@dataclass(frozen=True)
class BiGruParams:
    forward: GruParams
    backward: GruParams

    def check(self) -> None:
        self.forward.check()
        self.backward.check()
        if (self.forward.n, self.forward.i) != (self.backward.n, self.backward.i):
            raise DimensionError(
                f"forward (n={self.forward.n}, i={self.forward.i}) and backward "
                f"(n={self.backward.n}, i={self.backward.i}) directions differ")


def gru_cell_step(x_t, h_prev, p: GruParams) -> Tensor:
    """One GRU update built from primitive tape operations.

    ``x_t`` is ``[i]`` or ``[B, i]``, ``h_prev`` is ``[n]`` or ``[B, n]``.
    """
    p.check()
    x_t, h_prev = as_tensor(x_t), as_tensor(h_prev)
    n, i = p.n, p.i
    squeeze = x_t.ndim == 1
    if squeeze:
        x_t = tn.reshape(x_t, (1, -1))
        h_prev = tn.reshape(h_prev, (1, -1))
    if x_t.shape[-1] != i or h_prev.shape[-1] != n or x_t.shape[0] != h_prev.shape[0]:
        raise DimensionError(f"gru_cell_step: x {x_t.shape}, h {h_prev.shape} vs n={n}, i={i}")

    Wx, Wh = as_tensor(p.Wx), as_tensor(p.Wh)
    xp = tn.add_bias(tn.matmul(x_t, tn.transpose(Wx)), p.b)
    WhT = tn.transpose(Wh)
    Wh_zrT = tn.slice_features(WhT, 0, 2 * n)
    Wh_cT = tn.slice_features(WhT, 2 * n, 3 * n)

    zr = tn.sigmoid(tn.add(tn.slice_features(xp, 0, 2 * n), tn.matmul(h_prev, Wh_zrT)))
    z, r = tn.split_features(zr, n)
    c = tn.tanh(tn.add(tn.slice_features(xp, 2 * n, 3 * n),
                       tn.matmul(tn.mul(r, h_prev), Wh_cT)))
    one_minus_z = tn.sub(Tensor(np.ones(z.shape, dtype=z.dtype)), z)
    h = tn.add(tn.mul(z, h_prev), tn.mul(one_minus_z, c))
    return tn.reshape(h, (n,)) if squeeze else h


def _gru_scan(X: np.ndarray, Wx: np.ndarray, Wh: np.ndarray, b: np.ndarray):
    """Forward recursion over [B, T, i]; returns states [B, T+1, n] and gate caches."""
    B, T, _ = X.shape
    n = Wh.shape[1]
    xp = X @ Wx.T + b
    WzrT = np.ascontiguousarray(Wh[: 2 * n].T)
    WcT = np.ascontiguousarray(Wh[2 * n:].T)
    hs = np.zeros((B, T + 1, n), dtype=xp.dtype)
    zs = np.empty((B, T, n), dtype=xp.dtype)
    rs = np.empty_like(zs)
    cs = np.empty_like(zs)
    h = hs[:, 0]
    for t in range(T):
        zr = expit(xp[:, t, : 2 * n] + h @ WzrT)
        z, r = zr[:, :n], zr[:, n:]
        c = np.tanh(xp[:, t, 2 * n:] + (r * h) @ WcT)
        h = z * h + (1 - z) * c
        hs[:, t + 1], zs[:, t], rs[:, t], cs[:, t] = h, z, r, c
    return hs, zs, rs, cs


def _gru_bptt(g: np.ndarray, X, Wx, Wh, hs, zs, rs, cs):
    B, T, i = X.shape
    n = Wh.shape[1]
    Wzr, Wc = Wh[: 2 * n], Wh[2 * n:]
    dxp = np.empty((B, T, 3 * n), dtype=g.dtype)
    dWzr = np.zeros_like(Wzr)
    dWc = np.zeros_like(Wc)
    dh_next = np.zeros((B, n), dtype=g.dtype)
    for t in range(T - 1, -1, -1):
        dh = g[:, t] + dh_next
        h_prev, z, r, c = hs[:, t], zs[:, t], rs[:, t], cs[:, t]
        dz = dh * (h_prev - c)
        dac = dh * (1 - z) * (1 - c * c)
        d_rh = dac @ Wc
        dWc += dac.T @ (r * h_prev)
        dazr = np.concatenate([dz * z * (1 - z), d_rh * h_prev * r * (1 - r)], axis=1)
        dWzr += dazr.T @ h_prev
        dh_next = dh * z + d_rh * r + dazr @ Wzr
        dxp[:, t, : 2 * n] = dazr
        dxp[:, t, 2 * n:] = dac
    dX = dxp @ Wx
    flat = dxp.reshape(-1, 3 * n)
    dWx = flat.T @ X.reshape(-1, i)
    db = flat.sum(axis=0)
    return dX, dWx, np.concatenate([dWzr, dWc], axis=0), db


def gru_forward(seq, p: GruParams, direction: str = "forward") -> Tensor:
    """Hidden states of a GRU run over ``seq`` from a zero initial state.

    ``direction="backward"`` runs the recursion over reversed time and
    returns the states in original time order.  The whole sequence is one
    tape node; its gradient is computed by backpropagation through time.
    """
    if direction not in ("forward", "backward"):
        raise ContractError(f"direction must be 'forward' or 'backward', got {direction!r}")
    p.check()
    seq = as_tensor(seq)
    if seq.ndim not in (2, 3):
        raise DimensionError(f"gru_forward expects [T, i] or [B, T, i], got {seq.shape}")
    if seq.shape[-2] == 0:
        raise ContractError("gru_forward: empty sequence")
    if seq.shape[-1] != p.i:
        raise DimensionError(f"gru_forward: input features {seq.shape[-1]} != kernel input {p.i}")

    Wx, Wh, b = as_tensor(p.Wx), as_tensor(p.Wh), as_tensor(p.b)
    batched = seq.ndim == 3
    X = seq.data if batched else seq.data[None]
    rev = direction == "backward"
    if rev:
        X = X[:, ::-1]
    X = np.ascontiguousarray(X)
    hs, zs, rs, cs = _gru_scan(X, Wx.data, Wh.data, b.data)
    out = hs[:, 1:]
    if rev:
        out = out[:, ::-1]
    out = np.ascontiguousarray(out if batched else out[0])

    def backward(g):
        g = g if batched else g[None]
        if rev:
            g = g[:, ::-1]
        dX, dWx, dWh, db = _gru_bptt(np.ascontiguousarray(g), X, Wx.data, Wh.data, hs, zs, rs, cs)
        if rev:
            dX = dX[:, ::-1]
        dX = np.ascontiguousarray(dX if batched else dX[0])
        return dX, dWx, dWh, db

    return Tensor.from_op(out, (seq, Wx, Wh, b), backward)


def bigru_forward(seq, p: BiGruParams) -> Tensor:
    p.check()
    return tn.concat_features(gru_forward(seq, p.forward, "forward"),
                              gru_forward(seq, p.backward, "backward"))


def downsample_fold(seq) -> Tensor:
    """[..., T, F] -> [..., T/2, 2F]; output row t is input rows 2t and 2t+1 side by side."""
    seq = as_tensor(seq)
    *lead, T, F = seq.shape
    if T % 2:
        raise ContractError(f"downsample_fold needs an even number of time steps, got {T}")
    return tn.reshape(seq, (*lead, T // 2, 2 * F))


def upsample_unfold(seq) -> Tensor:
    """Inverse of :func:`downsample_fold`: [..., T, F] -> [..., 2T, F/2]."""
    seq = as_tensor(seq)
    *lead, T, F = seq.shape
    if F % 2:
        raise ContractError(f"upsample_unfold needs an even feature width, got {F}")
    return tn.reshape(seq, (*lead, 2 * T, F // 2))


def prelu(x, alpha) -> Tensor:
    """Per-feature parametric ReLU: x where x >= 0, alpha_f * x elsewhere."""
    x, alpha = as_tensor(x), as_tensor(alpha)
    if alpha.ndim != 1 or alpha.shape[0] != x.shape[-1]:
        raise DimensionError(f"prelu: {alpha.shape[0] if alpha.ndim else alpha.shape} slopes "
                             f"for {x.shape[-1]} features")
    xd, ad = x.data, alpha.data
    neg = xd < 0
    lead = tuple(range(xd.ndim - 1))

    def backward(g):
        return np.where(neg, g * ad, g), np.where(neg, g * xd, 0).sum(axis=lead).astype(g.dtype)

    return Tensor.from_op(np.where(neg, ad * xd, xd), (x, alpha), backward)


def residual_merge(lower, upper, alpha) -> Tensor:
    lower, upper = as_tensor(lower), as_tensor(upper)
    if lower.shape != upper.shape:
        raise DimensionError(f"residual_merge: lower {lower.shape} and upper {upper.shape} "
                             "differ; the hourglass is mis-built")
    return prelu(tn.add(lower, upper), alpha)
