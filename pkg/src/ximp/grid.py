"""Grid search: stratified-CV selection plus seeded retraining on the scaffold holdout."""

from __future__ import annotations

import csv
import io
import itertools
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ximp.data import Dataset, SplitPlan, dataset_from_pairs
from ximp.errors import ConfigError
from ximp.rng import mix_seed
from ximp.training import (
    evaluate,
    model_config_from_dict,
    train,
    train_config_from_dict,
)

# Enumerations of the reference search space; strict grids may only use these.
SEARCH_SPACE = {
    "n_layers": (1, 2, 3),
    "hidden": (16, 32),
    "out_dim": (16, 32),
    "batch_size": (64, 128),
    "head_hidden": (16, 32),
    "epochs": (50, 100, 150),
    "reduced_dim": (16, 32),
    "jt_resolution": (1, 2, 3),
    "enable_i2mp": (False, True),
    "enable_dimp": (False, True),
    "abstractions": (("erg",), ("jt",), ("erg", "jt"), ()),
    "inter_message_passing": (False, True),
    "lr": (1e-3,),
    "weight_decay": (1e-4,),
    "dropout": (0.1,),
}
TRAIN_KEYS = {"epochs", "batch_size", "lr", "weight_decay", "lr_schedule"}


def _canonical(key: str, value):
    if key == "abstractions":
        return tuple(sorted(value))
    return value


@dataclass
class GridSpec:
    kind: str = "ximp"
    params: dict[str, list] = field(default_factory=dict)
    fixed: dict = field(default_factory=dict)
    n_folds: int = 10
    n_seeds: int = 10
    master_seed: int = 0
    strict: bool = True

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        known = {"kind", "params", "fixed", "n_folds", "n_seeds", "master_seed", "strict"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown grid keys {sorted(extra)}")
        spec = cls(**d)
        spec.validate()
        return spec

    def validate(self) -> None:
        if self.n_folds < 1 or self.n_seeds < 1:
            raise ConfigError("n_folds and n_seeds must be positive")
        overlap = set(self.params) & set(self.fixed)
        if overlap:
            raise ConfigError(f"keys both varied and fixed: {sorted(overlap)}")
        for key, values in self.params.items():
            if not isinstance(values, list) or not values:
                raise ConfigError(f"grid entry {key!r} must be a non-empty list")
        if self.strict:
            entries = [(k, v) for k, vs in self.params.items() for v in vs] + list(self.fixed.items())
            for key, value in entries:
                allowed = SEARCH_SPACE.get(key)
                if allowed is not None and _canonical(key, value) not in allowed:
                    raise ConfigError(f"{key}={value!r} outside the search space {allowed}")
        for cell in self.cells():
            self.configs(cell)  # surface invalid combinations before any training

    def cells(self) -> list[dict]:
        keys = sorted(self.params)
        return [dict(zip(keys, combo)) for combo in itertools.product(*(self.params[k] for k in keys))]

    def configs(self, cell: dict):
        merged = {**self.fixed, **cell}
        model = {k: v for k, v in merged.items() if k not in TRAIN_KEYS}
        training = {k: v for k, v in merged.items() if k in TRAIN_KEYS}
        return model_config_from_dict({"kind": self.kind, **model}), train_config_from_dict(training)


@dataclass
class CellResult:
    cell: int
    params: dict
    fold_val_mae: list[float]
    test_mae: list[float]

    @property
    def mean_val_mae(self) -> float:
        return float(np.mean(self.fold_val_mae))

    @property
    def test_mae_mean(self) -> float:
        return float(np.mean(self.test_mae))

    @property
    def test_mae_std(self) -> float:
        return float(np.std(self.test_mae))


@dataclass
class GridResult:
    cells: list[CellResult]
    timings: list[tuple[int, str, int, float]]

    @property
    def val_selected(self) -> int:
        """Cell with the lowest mean validation MAE (ties: lowest index)."""
        return min(self.cells, key=lambda c: (c.mean_val_mae, c.cell)).cell

    @property
    def test_selected(self) -> int:
        """Cell with the lowest mean test MAE, the optimistic reporting mode."""
        return min(self.cells, key=lambda c: (c.test_mae_mean, c.cell)).cell

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(
            ["cell", "params", "fold_val_mae", "mean_val_mae", "test_mae_mean", "test_mae_std", "val_selected", "test_selected"]
        )
        for c in sorted(self.cells, key=lambda c: c.cell):
            w.writerow(
                [
                    c.cell,
                    json.dumps(c.params, sort_keys=True),
                    ";".join(f"{v:.6f}" for v in c.fold_val_mae),
                    f"{c.mean_val_mae:.6f}",
                    f"{c.test_mae_mean:.6f}",
                    f"{c.test_mae_std:.6f}",
                    int(c.cell == self.val_selected),
                    int(c.cell == self.test_selected),
                ]
            )
        return buf.getvalue()

    def timings_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["cell", "phase", "run", "seconds"])
        for row in sorted(self.timings):
            w.writerow([row[0], row[1], row[2], f"{row[3]:.6f}"])
        return buf.getvalue()


# worker-side state, installed once per process
_WORKER: dict = {}


def _init_worker(pairs, spec_dict, split: SplitPlan) -> None:
    _WORKER["dataset"] = dataset_from_pairs(pairs)
    _WORKER["spec"] = GridSpec(**spec_dict)
    _WORKER["split"] = split


def _run_job(job: tuple[int, str, int]) -> tuple[int, str, int, float, float]:
    cell_index, phase, run = job
    spec: GridSpec = _WORKER["spec"]
    ds: Dataset = _WORKER["dataset"]
    split: SplitPlan = _WORKER["split"]
    model_cfg, train_cfg = spec.configs(spec.cells()[cell_index])
    start = time.perf_counter()
    if phase == "cv":
        seed = mix_seed(spec.master_seed, cell_index, run)
        tr, val = split.fold(run)
        result = train(model_cfg, train_cfg, ds, tr, seed)
        score = evaluate(result.model, ds, val)
    else:
        seed = mix_seed(spec.master_seed, cell_index, 1_000_000 + run)
        result = train(model_cfg, train_cfg, ds, split.train_val, seed)
        score = evaluate(result.model, ds, split.test)
    return cell_index, phase, run, score, time.perf_counter() - start


def worker_count(n_jobs: int) -> int:
    cap = os.environ.get("XIMP_THREADS")
    limit = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(limit, n_jobs))


def grid_search(spec: GridSpec, dataset: Dataset, split: SplitPlan, n_workers: int | None = None) -> GridResult:
    """Cross-validate every cell, then retrain each ``n_seeds`` times for the test table.

    Every run draws from its own stream keyed by (master seed, cell, run), so
    the outcome does not depend on scheduling or the number of workers.
    """
    spec.validate()
    if spec.n_folds > len(split.folds):
        raise ConfigError(f"grid asks for {spec.n_folds} folds; split has {len(split.folds)}")
    cells = spec.cells()
    jobs = [(c, "cv", k) for c in range(len(cells)) for k in range(spec.n_folds)]
    jobs += [(c, "test", r) for c in range(len(cells)) for r in range(spec.n_seeds)]
    pairs = [(r.smiles, r.target) for r in dataset.records]
    spec_dict = {k: getattr(spec, k) for k in ("kind", "params", "fixed", "n_folds", "n_seeds", "master_seed", "strict")}
    n_workers = worker_count(len(jobs)) if n_workers is None else n_workers
    if n_workers <= 1:
        _WORKER.update(dataset=dataset, spec=spec, split=split)
        outcomes = [_run_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(n_workers, initializer=_init_worker, initargs=(pairs, spec_dict, split)) as pool:
            outcomes = list(pool.map(_run_job, jobs, chunksize=1))

    val: dict[int, dict[int, float]] = {c: {} for c in range(len(cells))}
    test: dict[int, dict[int, float]] = {c: {} for c in range(len(cells))}
    timings = []
    for cell_index, phase, run, score, seconds in outcomes:
        (val if phase == "cv" else test)[cell_index][run] = score
        timings.append((cell_index, phase, run, seconds))
    results = [
        CellResult(
            c,
            cells[c],
            [val[c][k] for k in sorted(val[c])],
            [test[c][r] for r in sorted(test[c])],
        )
        for c in range(len(cells))
    ]
    return GridResult(results, timings)
