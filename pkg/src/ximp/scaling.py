"""Forward-pass wall time against molecule size."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from ximp.batch import collate, prepare
from ximp.chem import parse_smiles
from ximp.model import ModelConfig, XimpModel, layer_forward


@dataclass(frozen=True)
class ScalingFit:
    sizes: tuple[int, ...]
    seconds: tuple[float, ...]
    slope: float
    intercept: float
    r_squared: float


def linear_fit(x, y) -> tuple[float, float, float]:
    """Least-squares ``y = a x + b``; returns (a, b, R^2)."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    a, b = np.polyfit(x, y, 1)
    resid = y - (a * x + b)
    total = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / total if total > 0 else 1.0
    return float(a), float(b), float(r2)


def alkane(n: int) -> str:
    return "C" * n


def layer_time(config: ModelConfig, n_atoms: int, repeats: int = 5, seed: int = 0) -> float:
    """Median wall time of one layer forward on an unbranched alkane."""
    model = XimpModel(config, seed)
    batch = collate([prepare(parse_smiles(alkane(n_atoms)), config.abstractions, config.jt_resolution)])
    state = model.initial_state(batch)
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        layer_forward(state, batch, model.params, config, 1)
        times.append(time.perf_counter() - start)
    return float(np.median(times))


def forward_scaling(
    config: ModelConfig | None = None, sizes=(10, 100, 1000), repeats: int = 5
) -> ScalingFit:
    config = config or ModelConfig(n_layers=1, dropout=0.0)
    layer_time(config, sizes[0], 1)  # warm caches before timing
    seconds = tuple(layer_time(config, n, repeats) for n in sizes)
    a, b, r2 = linear_fit(sizes, seconds)
    return ScalingFit(tuple(sizes), seconds, a, b, r2)
