"""Loss, RMSprop, learning-rate schedule and the epoch loop."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, replace
from typing import Callable, Mapping

import numpy as np

from . import tensor as tn
from .errors import ConfigError, DimensionError, TrainingError
from .model import ModelParams, forward_graph
from .tensor import ParameterSet, Tensor

log = logging.getLogger(__name__)

LOG2 = math.log(2.0)


def logcosh_loss(pred, target) -> Tensor:
    """Mean of log(cosh(pred - target)), evaluated without overflow."""
    pred, target = tn.as_tensor(pred), tn.as_tensor(target)
    if pred.shape != target.shape:
        raise DimensionError(f"logcosh_loss: pred {pred.shape} vs target {target.shape}")
    e = pred.data - target.data
    # float64 for the value: the overflow-safe form cancels badly for small |e|
    a = np.abs(e.astype(np.float64))
    value = np.mean(a + np.log1p(np.exp(-2 * a)) - LOG2)
    scale = 1.0 / e.size

    def backward(g):
        d = (g * scale * np.tanh(e)).astype(e.dtype)
        return d, -d

    return Tensor.from_op(np.asarray(value, dtype=e.dtype), (pred, target), backward)


@dataclass
class RmspropState:
    s: ParameterSet
    rho: float = 0.9
    eps: float = 1e-7

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray], rho=0.9, eps=1e-7) -> "RmspropState":
        return cls(ParameterSet((k, np.zeros_like(v)) for k, v in params.items()), rho, eps)


def rmsprop_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
                 state: RmspropState, lr: float) -> tuple[ParameterSet, RmspropState]:
    """s <- rho s + (1 - rho) g^2;  theta <- theta - lr g / (sqrt(s) + eps).

    Returns new parameter and state objects; the inputs are left untouched.
    """
    new_params, new_s = ParameterSet(), ParameterSet()
    for name, theta in params.items():
        g = grads[name]
        if g.shape != theta.shape:
            raise DimensionError(f"{name}: gradient {g.shape} vs parameter {theta.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in parameter {name!r}")
        s = state.rho * state.s[name] + (1 - state.rho) * g * g
        new_s[name] = s.astype(theta.dtype, copy=False)
        new_params[name] = (theta - lr * g / (np.sqrt(s) + state.eps)).astype(theta.dtype, copy=False)
    return new_params, RmspropState(new_s, state.rho, state.eps)


@dataclass(frozen=True)
class TrainSchedule:
    lr_init: float = 1e-4
    lr_floor: float = 1e-8
    decay_factor: float = 10.0
    plateau_patience: int = 3
    stop_patience: int = 6
    batch_size: int = 512
    max_epochs: int = 1000

    def validate(self) -> "TrainSchedule":
        if not 0 < self.lr_floor <= self.lr_init:
            raise ConfigError(f"need 0 < lr_floor <= lr_init, got {self.lr_floor}, {self.lr_init}")
        if self.decay_factor <= 1:
            raise ConfigError(f"decay_factor must exceed 1, got {self.decay_factor}")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size and max_epochs must be >= 1")
        if self.plateau_patience < 1 or self.stop_patience < 1:
            raise ConfigError("patience values must be >= 1")
        return self


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_loss: float
    seconds: float

    def log_line(self) -> str:
        return (f"epoch {self.epoch:4d}  lr {self.lr:.3e}  train {self.train_loss:.6e}  "
                f"val {self.val_loss:.6e}  time {self.seconds:.2f}s")


@dataclass
class TrainState:
    """Bookkeeping that survives a checkpoint/resume cycle."""
    epoch: int = 0
    lr: float | None = None
    best_val: float = math.inf
    best_epoch: int = 0
    stalled: int = 0  # epochs since the last improvement
    optimizer: RmspropState | None = None

    def meta(self) -> dict:
        return {"epoch": self.epoch, "lr": self.lr, "best_val": self.best_val,
                "best_epoch": self.best_epoch, "stalled": self.stalled}

    @classmethod
    def from_meta(cls, meta: dict, optimizer: ParameterSet | None = None) -> "TrainState":
        opt = RmspropState(ParameterSet(optimizer)) if optimizer is not None else None
        return cls(int(meta.get("epoch", 0)), meta.get("lr"), float(meta.get("best_val", math.inf)),
                   int(meta.get("best_epoch", 0)), int(meta.get("stalled", 0)), opt)


@dataclass
class FitResult:
    history: list[EpochRecord]
    best: ModelParams
    final: ModelParams
    state: TrainState

    @property
    def best_epoch(self) -> int:
        return self.state.best_epoch


def batch_loss(params: ModelParams, noisy: np.ndarray, clean: np.ndarray) -> float:
    x = noisy[:, :, None].astype(next(iter(params.arrays.values())).dtype)
    y = forward_graph(params.config, params.arrays, x)
    return float(logcosh_loss(y, tn.Tensor(clean[:, :, None].astype(x.dtype))).data)


def dataset_loss(params: ModelParams, data: tuple[np.ndarray, np.ndarray],
                 batch_size: int) -> float:
    noisy, clean = data
    total = 0.0
    for start in range(0, len(noisy), batch_size):
        sl = slice(start, start + batch_size)
        total += batch_loss(params, noisy[sl], clean[sl]) * len(noisy[sl])
    return total / len(noisy)


EpochCallback = Callable[[EpochRecord, ModelParams, TrainState], None]


def fit(params: ModelParams, train: tuple[np.ndarray, np.ndarray],
        val: tuple[np.ndarray, np.ndarray], schedule: TrainSchedule,
        rng: np.random.Generator, resume: TrainState | None = None,
        on_epoch: EpochCallback | None = None) -> FitResult:
    """Train on ``(noisy, clean)`` segment arrays of shape ``[N, L]``.

    The learning rate is divided by ``decay_factor`` each time validation
    loss has gone ``plateau_patience`` further epochs without improving
    (never below ``lr_floor``).  Training stops after ``stop_patience`` epochs
    without improvement or after ``max_epochs`` epochs.  ``best`` holds the
    parameters with the lowest validation loss seen in this call.
    """
    schedule.validate()
    for label, (noisy, clean) in (("train", train), ("validation", val)):
        if len(noisy) == 0 or len(clean) == 0:
            raise ConfigError(f"empty {label} set")
        if noisy.shape != clean.shape or noisy.shape[1] != params.config.L:
            raise ConfigError(f"{label} set shapes {noisy.shape}/{clean.shape} do not match "
                              f"segment length {params.config.L}")

    st = replace(resume) if resume is not None else TrainState()
    dtype = next(iter(params.arrays.values())).dtype
    if st.optimizer is None:
        st.optimizer = RmspropState.zeros_like(params.arrays)
    if st.lr is None:
        st.lr = schedule.lr_init
    current = params.copy()
    best = current.copy()
    history: list[EpochRecord] = []
    noisy_all = train[0].astype(dtype)
    clean_all = train[1].astype(dtype)
    config = params.config
    first = st.epoch + 1

    for epoch in range(first, first + schedule.max_epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(noisy_all))
        seen, running = 0, 0.0
        for b, start in enumerate(range(0, len(order), schedule.batch_size)):
            idx = order[start:start + schedule.batch_size]
            x = noisy_all[idx][:, :, None]
            y = clean_all[idx][:, :, None]

            def loss_fn(values, x=x, y=y):
                return logcosh_loss(forward_graph(config, values, x), tn.Tensor(y))

            loss, grads = tn.value_and_gradients(loss_fn, current.arrays)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            try:
                arrays, st.optimizer = rmsprop_step(current.arrays, grads, st.optimizer, st.lr)
            except TrainingError as exc:
                raise TrainingError(f"epoch {epoch}, batch {b}: {exc}") from exc
            current = current.with_arrays(arrays)
            running += loss * len(idx)
            seen += len(idx)

        val_loss = dataset_loss(current, val, schedule.batch_size)
        if not math.isfinite(val_loss):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        record = EpochRecord(epoch, st.lr, running / seen, val_loss, time.perf_counter() - t0)
        history.append(record)
        log.info(record.log_line())

        st.epoch = epoch
        if val_loss < st.best_val:
            st.best_val, st.best_epoch, st.stalled = val_loss, epoch, 0
            best = current.copy()
        else:
            st.stalled += 1
            if st.stalled % schedule.plateau_patience == 0:
                st.lr = max(st.lr / schedule.decay_factor, schedule.lr_floor)
        if on_epoch is not None:
            on_epoch(record, current, st)
        if st.stalled >= schedule.stop_patience:
            break

    return FitResult(history, best, current, st)
