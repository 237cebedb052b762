"""The seven-layer residual hourglass GRU network.

Layer widths are total output widths: bidirectional layers use ``width / 2``
units per direction.  With the default widths ``(2, 128, 256, 512, 256, 128, 1)``
and 1024-sample segments the data flows as

    layer  input      n/dir  output     after
    1      1024x1     1      1024x2     fold -> 512x4
    2      512x4      64     512x128    tap R2, fold -> 256x256
    3      256x256    128    256x256    tap R3, fold -> 128x512
    4      128x512    256    128x512    unfold -> 256x256
    5      256x256    128    256x256    prelu(R3 + .), unfold -> 512x128
    6      512x128    64     512x128    prelu(R2 + .), unfold -> 1024x64
    7      1024x64    1      1024x1     (unidirectional) enhanced samples
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Mapping

import numpy as np

from . import tensor as tn
from .errors import ConfigError, DimensionError
from .initializers import orthogonal_init, xavier_normal
from .layers import (PRELU_INIT, BiGruParams, GruParams, bigru_forward, downsample_fold,
                     gru_forward, residual_merge, upsample_unfold)
from .tensor import ParameterSet, Tensor

DEFAULT_WIDTHS = (2, 128, 256, 512, 256, 128, 1)


@dataclass(frozen=True)
class LayerShape:
    index: int
    bidirectional: bool
    steps: int
    inputs: int
    units: int  # per direction

    @property
    def outputs(self) -> int:
        return 2 * self.units if self.bidirectional else self.units


@dataclass(frozen=True)
class ModelConfig:
    segment_len: int = 1024
    widths: tuple[int, ...] = DEFAULT_WIDTHS
    # Shrinks segment_len and the five inner widths; the 2-wide first layer
    # and the 1-wide output layer are fixed by construction.
    scale: Fraction = Fraction(1)

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "scale", Fraction(self.scale))

    @classmethod
    def tiny(cls) -> "ModelConfig":
        """L=64, widths (2, 8, 16, 32, 16, 8, 1): the desk-scale test network."""
        return cls(scale=Fraction(1, 16))

    def problems(self) -> list[str]:
        out = []
        if self.scale <= 0:
            return [f"scale must be positive, got {self.scale}"]
        if len(self.widths) != 7:
            return [f"expected 7 widths, got {len(self.widths)}"]
        L = self.segment_len * self.scale
        if L.denominator != 1 or L < 8:
            out.append(f"segment_len*scale = {L} is not an integer >= 8")
        elif int(L) % 8:
            out.append(f"segment length {L} is not divisible by 8 (three halvings)")
        inner = [w * self.scale for w in self.widths[1:6]]
        if any(w.denominator != 1 for w in inner):
            out.append(f"scaled widths {[str(w) for w in inner]} are not all integers")
            return out
        w = self.layer_widths
        if any(x < 2 or x % 2 for x in w[:6]):
            out.append(f"widths[0..5] must be even and >= 2, got {list(w[:6])}")
        if w[6] != 1:
            out.append(f"widths[6] must be 1 (unidirectional output), got {w[6]}")
        if w[4] != w[2]:
            out.append(f"residual R3 needs widths[4] == widths[2], got {w[4]} vs {w[2]}")
        if w[5] != w[1]:
            out.append(f"residual R2 needs widths[5] == widths[1], got {w[5]} vs {w[1]}")
        return out

    def validate(self) -> "ModelConfig":
        problems = self.problems()
        if problems:
            raise ConfigError("invalid ModelConfig: " + "; ".join(problems))
        return self

    @property
    def L(self) -> int:
        return int(self.segment_len * self.scale)

    @property
    def layer_widths(self) -> tuple[int, ...]:
        inner = tuple(int(w * self.scale) for w in self.widths[1:6])
        return (self.widths[0], *inner, self.widths[6])

    @property
    def time_steps(self) -> tuple[int, ...]:
        L = self.L
        return (L, L // 2, L // 4, L // 8, L // 4, L // 2, L)

    def layer_shapes(self) -> list[LayerShape]:
        w, T = self.layer_widths, self.time_steps
        inputs = (1, 2 * w[0], 2 * w[1], 2 * w[2], w[3] // 2, w[4] // 2, w[5] // 2)
        shapes = [LayerShape(k + 1, True, T[k], inputs[k], w[k] // 2) for k in range(6)]
        shapes.append(LayerShape(7, False, T[6], inputs[6], 1))
        return shapes

    def prelu_sizes(self) -> dict[str, int]:
        w = self.layer_widths
        return {"prelu5.alpha": w[4], "prelu6.alpha": w[5]}

    def to_dict(self) -> dict:
        return {"segment_len": self.segment_len, "widths": list(self.widths),
                "scale": str(self.scale)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        return cls(int(d["segment_len"]), tuple(d["widths"]), Fraction(str(d.get("scale", "1"))))


def param_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape of every trainable array, in canonical order."""
    config.validate()
    shapes: dict[str, tuple[int, ...]] = {}
    for ls in config.layer_shapes():
        n, i = ls.units, ls.inputs
        prefixes = [f"gru{ls.index}.fwd", f"gru{ls.index}.bwd"] if ls.bidirectional \
            else [f"gru{ls.index}"]
        for pre in prefixes:
            shapes[f"{pre}.Wx"] = (3 * n, i)
            shapes[f"{pre}.Wh"] = (3 * n, n)
            shapes[f"{pre}.b"] = (3 * n,)
    for name, size in config.prelu_sizes().items():
        shapes[name] = (size,)
    return shapes


def param_count(config: ModelConfig) -> int:
    total = 0
    for ls in config.layer_shapes():
        n, i = ls.units, ls.inputs
        per_direction = 3 * (n * i + n * n + n)
        total += 2 * per_direction if ls.bidirectional else per_direction
    return total + sum(config.prelu_sizes().values())


@dataclass(eq=False)
class ModelParams:
    config: ModelConfig
    arrays: ParameterSet = field(default_factory=ParameterSet)
    seed: int | None = None

    def check(self) -> None:
        expected = param_shapes(self.config)
        if list(expected) != list(self.arrays):
            missing = sorted(set(expected) - set(self.arrays))
            extra = sorted(set(self.arrays) - set(expected))
            raise DimensionError(f"parameter names do not match config (missing {missing}, "
                                 f"unexpected {extra})")
        for name, shape in expected.items():
            if self.arrays[name].shape != shape:
                raise DimensionError(f"{name}: shape {self.arrays[name].shape}, expected {shape}")

    def copy(self) -> "ModelParams":
        return replace(self, arrays=ParameterSet((k, v.copy()) for k, v in self.arrays.items()))

    def astype(self, dtype) -> "ModelParams":
        return replace(self, arrays=ParameterSet((k, v.astype(dtype)) for k, v in self.arrays.items()))

    def with_arrays(self, arrays: Mapping[str, np.ndarray]) -> "ModelParams":
        return replace(self, arrays=ParameterSet(arrays))

    def bit_equal(self, other: "ModelParams") -> bool:
        if self.config != other.config or list(self.arrays) != list(other.arrays):
            return False
        return all(a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()
                   for a, b in zip(self.arrays.values(), other.arrays.values()))

    @property
    def size(self) -> int:
        return sum(v.size for v in self.arrays.values())


def layer_params(values: Mapping, k: int) -> BiGruParams | GruParams:
    """View layer ``k`` (1-based) of a name -> array/Tensor mapping as GRU parameters."""
    def gru(pre):
        return GruParams(values[f"{pre}.Wx"], values[f"{pre}.Wh"], values[f"{pre}.b"])
    if k == 7:
        return gru("gru7")
    return BiGruParams(gru(f"gru{k}.fwd"), gru(f"gru{k}.bwd"))


def build(config: ModelConfig, seed: int, dtype=np.float32) -> ModelParams:
    """Fresh parameters: Xavier-normal input kernels and orthogonal recurrent
    kernels (both per gate block), zero biases, PReLU slopes at 0.25."""
    config.validate()
    rng = np.random.default_rng(seed)
    arrays = ParameterSet()
    for name, shape in param_shapes(config).items():
        kind = name.rsplit(".", 1)[1]
        if kind == "Wx":
            n, i = shape[0] // 3, shape[1]
            arr = np.concatenate([xavier_normal(i, n, rng) for _ in range(3)])
        elif kind == "Wh":
            n = shape[1]
            arr = np.concatenate([orthogonal_init(n, rng) for _ in range(3)])
        elif kind == "b":
            arr = np.zeros(shape)
        else:
            arr = np.full(shape, PRELU_INIT)
        arrays[name] = arr.astype(dtype)
    return ModelParams(config, arrays, seed)


def forward_graph(config: ModelConfig, values: Mapping, x, trace: list | None = None) -> Tensor:
    """Run the network on ``x`` of shape ``[B, L, 1]``; differentiable w.r.t. ``values``.

    If ``trace`` is a list, ``(label, shape)`` pairs for every intermediate
    are appended to it.
    """
    x = tn.as_tensor(x)
    if x.ndim != 3 or x.shape[1:] != (config.L, 1):
        raise DimensionError(f"expected segments of shape [B, {config.L}, 1], got {x.shape}")

    def note(label, t):
        if trace is not None:
            trace.append((label, t.shape[1:]))
        return t

    h = note("gru1", bigru_forward(x, layer_params(values, 1)))
    h = note("fold1", downsample_fold(h))
    r2 = note("gru2", bigru_forward(h, layer_params(values, 2)))
    h = note("fold2", downsample_fold(r2))
    r3 = note("gru3", bigru_forward(h, layer_params(values, 3)))
    h = note("fold3", downsample_fold(r3))
    h = note("gru4", bigru_forward(h, layer_params(values, 4)))
    h = note("unfold4", upsample_unfold(h))
    h = note("gru5", bigru_forward(h, layer_params(values, 5)))
    h = note("merge5", residual_merge(r3, h, values["prelu5.alpha"]))
    h = note("unfold5", upsample_unfold(h))
    h = note("gru6", bigru_forward(h, layer_params(values, 6)))
    h = note("merge6", residual_merge(r2, h, values["prelu6.alpha"]))
    h = note("unfold6", upsample_unfold(h))
    return note("gru7", gru_forward(h, layer_params(values, 7), "forward"))


def forward(params: ModelParams, segment: np.ndarray) -> np.ndarray:
    """Enhance one ``[L, 1]`` segment or a batch ``[B, L, 1]``."""
    seg = np.asarray(segment)
    single = seg.ndim == 2
    if seg.ndim not in (2, 3):
        raise DimensionError(f"expected [L, 1] or [B, L, 1], got {seg.shape}")
    dtype = next(iter(params.arrays.values())).dtype
    x = seg[None] if single else seg
    if x.shape[1:] != (params.config.L, 1):
        raise DimensionError(f"segment shape {seg.shape} does not match segment_len "
                             f"{params.config.L}")
    out = forward_graph(params.config, params.arrays, x.astype(dtype, copy=False)).data
    return out[0] if single else out


def enhance_segments(params: ModelParams, segments: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Run ``[N, L]`` segments through the network in batches."""
    segments = np.asarray(segments)
    out = np.empty(segments.shape, dtype=next(iter(params.arrays.values())).dtype)
    for start in range(0, len(segments), batch_size):
        chunk = segments[start:start + batch_size, :, None]
        out[start:start + batch_size] = forward(params, chunk)[..., 0]
    return out
