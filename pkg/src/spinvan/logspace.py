"""Log-domain reductions with max-subtraction, shared by every module."""

from __future__ import annotations

import numpy as np


def logsumexp(values: np.ndarray) -> float:
    """log(sum(exp(values))) without overflow; -inf entries contribute zero."""
    values = np.asarray(values, dtype=np.float64)
    shift = float(np.max(values))
    if not np.isfinite(shift):
        return -np.inf
    return float(np.log(np.sum(np.exp(values - shift))) + shift)


def logmeanexp(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=np.float64)
    return logsumexp(values) - float(np.log(values.size))


def signed_logsumexp(log_magnitudes: np.ndarray, signs: np.ndarray) -> tuple[float, float]:
    """Combine signed terms given as (log|x|, sign(x)); returns (log|sum|, sign)."""
    log_magnitudes = np.asarray(log_magnitudes, dtype=np.float64)
    signs = np.asarray(signs, dtype=np.float64)
    shift = np.max(log_magnitudes)
    if not np.isfinite(shift):
        return -np.inf, 0.0
    total = np.sum(signs * np.exp(log_magnitudes - shift))
    if total == 0.0:
        return -np.inf, 0.0
    return float(np.log(np.abs(total)) + shift), float(np.sign(total))


def log_sigmoid(x: np.ndarray) -> np.ndarray:
    """log(1/(1+exp(-x))), stable for large |x|."""
    x = np.asarray(x, dtype=np.float64)
    return np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out
