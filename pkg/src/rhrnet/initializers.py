"""Weight initializers: Xavier-normal input kernels, orthogonal recurrent kernels."""

from __future__ import annotations

import numpy as np


def xavier_normal(fan_in: int, fan_out: int, rng: np.random.Generator) -> np.ndarray:
    """``[fan_out, fan_in]`` matrix with i.i.d. N(0, 2 / (fan_in + fan_out)) entries."""
    if fan_in < 1 or fan_out < 1:
        raise ValueError(f"fans must be positive, got fan_in={fan_in}, fan_out={fan_out}")
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return rng.normal(0.0, std, size=(fan_out, fan_in))


def orthogonal_init(n: int, rng: np.random.Generator) -> np.ndarray:
    """Random orthogonal ``n x n`` matrix, Haar-distributed.

    QR of a standard normal matrix, with the columns of Q multiplied by the
    signs of diag(R) so the distribution does not depend on the QR routine's
    sign convention.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    return q * d
