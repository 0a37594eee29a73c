"""Datasets, scaffold holdout and target-stratified cross-validation folds."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ximp.batch import MoleculeInputs, prepare
from ximp.chem import MolecularGraph, parse_smiles
from ximp.errors import (
    DegenerateSplit,
    EmptyDataset,
    IoError,
    MissingColumn,
    SmilesError,
    TooFewRecords,
)
from ximp.reductions import murcko_scaffold
from ximp.rng import Rng

log = logging.getLogger(__name__)


@dataclass
class Record:
    smiles: str
    target: float
    id: str | None
    graph: MolecularGraph


@dataclass
class Rejection:
    row: int
    smiles: str
    reason: str


@dataclass
class Dataset:
    records: list[Record]
    rejected: list[Rejection] = field(default_factory=list)
    _inputs: dict = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def targets(self) -> np.ndarray:
        return np.array([r.target for r in self.records])

    def inputs(self, indices, abstractions, jt_resolution: int = 1) -> list[MoleculeInputs]:
        """Featurized records, cached per (record, abstractions, resolution)."""
        key_base = (tuple(sorted(abstractions)), jt_resolution)
        out = []
        for i in indices:
            key = (i,) + key_base
            if key not in self._inputs:
                r = self.records[i]
                self._inputs[key] = prepare(r.graph, key_base[0], jt_resolution, r.target)
            out.append(self._inputs[key])
        return out

    def subset(self, indices) -> "Dataset":
        return Dataset([self.records[i] for i in indices])


def dataset_from_pairs(pairs) -> Dataset:
    """Build a dataset from ``(smiles, target)`` or ``(smiles, target, id)`` tuples."""
    return _build((i + 1, *p) if len(p) == 3 else (i + 1, p[0], p[1], None) for i, p in enumerate(pairs))


def _build(rows) -> Dataset:
    records, rejected = [], []
    for row_no, smiles, target, rid in rows:
        try:
            value = float(target)
        except (TypeError, ValueError):
            rejected.append(Rejection(row_no, smiles, f"target {target!r} is not a number"))
            continue
        if not math.isfinite(value):
            rejected.append(Rejection(row_no, smiles, f"target {target!r} is not finite"))
            continue
        try:
            g = parse_smiles(smiles)
        except SmilesError as e:
            rejected.append(Rejection(row_no, smiles, f"{type(e).__name__}: {e}"))
            continue
        records.append(Record(smiles, value, rid, g))
    for r in rejected:
        log.warning("rejected row %d (%s): %s", r.row, r.smiles, r.reason)
    if not records:
        raise EmptyDataset(f"no usable records ({len(rejected)} rejected)")
    return Dataset(records, rejected)


def load_csv(path) -> Dataset:
    """Read a UTF-8 CSV with columns ``smiles,target`` and an optional ``id``."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            for col in ("smiles", "target"):
                if col not in header:
                    raise MissingColumn(f"{path}: missing column {col!r} (found {header})")
            rows = [(i + 2, row["smiles"], row["target"], row.get("id")) for i, row in enumerate(reader)]
    except (OSError, UnicodeDecodeError) as e:
        raise IoError(f"cannot read {path}: {e}") from e
    if not rows:
        raise EmptyDataset(f"{path} has no data rows")
    return _build(rows)


@dataclass
class SplitPlan:
    test: list[int]
    folds: list[list[int]]
    bins: dict[int, int]  # record index -> target bin
    seed: int

    @property
    def train_val(self) -> list[int]:
        return sorted(i for f in self.folds for i in f)

    def fold(self, k: int) -> tuple[list[int], list[int]]:
        """(train, validation) indices for fold ``k``."""
        val = sorted(self.folds[k])
        train = sorted(i for j, f in enumerate(self.folds) if j != k for i in f)
        return train, val


def scaffold_holdout(ds: Dataset, fraction: float = 0.1) -> list[int]:
    """Whole scaffold groups, largest first, until ``fraction`` of records is covered."""
    groups: dict[str, list[int]] = {}
    for i, r in enumerate(ds.records):
        groups.setdefault(murcko_scaffold(r.graph), []).append(i)
    need = math.ceil(fraction * len(ds))
    test: list[int] = []
    for key in sorted(groups, key=lambda k: (-len(groups[k]), k)):
        if len(test) >= need:
            break
        test.extend(groups[key])
    return sorted(test)


def stratified_folds(
    indices: list[int], targets: np.ndarray, seed: int, n_folds: int = 10, n_bins: int = 10
) -> tuple[list[list[int]], dict[int, int]]:
    """Equal-frequency target bins dealt round-robin to folds.

    The fold counter carries over between bins so fold sizes never differ by
    more than one; members of each bin are shuffled first.
    """
    order = sorted(indices, key=lambda i: (targets[i], i))
    folds: list[list[int]] = [[] for _ in range(n_folds)]
    bins = {}
    counter = 0
    for b, members in enumerate(np.array_split(np.array(order, dtype=np.int64), n_bins)):
        members = [int(i) for i in members]
        Rng.derive(seed, 0xB1, b).shuffle(members)
        for i in members:
            bins[i] = b
            folds[counter % n_folds].append(i)
            counter += 1
    return [sorted(f) for f in folds], bins


def make_split(
    ds: Dataset, seed: int, test_fraction: float = 0.1, n_folds: int = 10, n_bins: int = 10
) -> SplitPlan:
    if len(ds) < n_bins:
        raise TooFewRecords(f"{len(ds)} records; need at least {n_bins}")
    test = scaffold_holdout(ds, test_fraction)
    rest = sorted(set(range(len(ds))) - set(test))
    if len(rest) < max(n_folds, n_bins):
        raise DegenerateSplit(
            f"scaffold holdout leaves {len(rest)} of {len(ds)} records; need {max(n_folds, n_bins)}"
        )
    folds, bins = stratified_folds(rest, ds.targets, seed, n_folds, n_bins)
    return SplitPlan(test, folds, bins, seed)
