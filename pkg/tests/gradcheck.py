"""Central finite differences against the reverse-mode gradients."""

import numpy as np


def numeric_grad(loss_fn, value: np.ndarray, h: float) -> np.ndarray:
    out = np.zeros_like(value)
    for idx in np.ndindex(value.shape):
        orig = value[idx]
        value[idx] = orig + h
        plus = loss_fn()
        value[idx] = orig - h
        minus = loss_fn()
        value[idx] = orig
        out[idx] = (plus - minus) / (2 * h)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.abs(analytic - numeric).max() / scale)
