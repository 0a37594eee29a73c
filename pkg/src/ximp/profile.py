"""Performance profiles over a model x task error table."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

from ximp.errors import IncompleteTable, IoError, MissingColumn


@dataclass(frozen=True)
class ModelProfile:
    model: str
    rho: dict[str, float]  # task -> MAE / best MAE on that task
    tau: float

    @property
    def sorted_rho(self) -> list[float]:
        return sorted(self.rho.values())

    def ecdf(self) -> list[tuple[float, float]]:
        """(rho, fraction of tasks with ratio <= rho) at every jump."""
        values = self.sorted_rho
        n = len(values)
        points = []
        for i, r in enumerate(values):
            if i + 1 < n and values[i + 1] == r:
                continue
            points.append((r, (i + 1) / n))
        return points

    def fraction_within(self, tau: float) -> float:
        return sum(r <= tau for r in self.rho.values()) / len(self.rho)

    @property
    def wins(self) -> int:
        return sum(r == 1.0 for r in self.rho.values())

    @property
    def within_tau(self) -> int:
        return sum(r <= self.tau for r in self.rho.values())


def performance_profile(table: dict[str, dict[str, float]], tau: float = 1.05) -> dict[str, ModelProfile]:
    """Ratio of each model's MAE to the best MAE on the same task.

    Ties for the best score all get ratio exactly 1.
    """
    if not table:
        raise IncompleteTable("empty results table")
    tasks = sorted({t for row in table.values() for t in row})
    for model, row in table.items():
        missing = [t for t in tasks if t not in row]
        if missing:
            raise IncompleteTable(f"{model} has no result for {missing}")
        bad = [t for t in tasks if not (math.isfinite(row[t]) and row[t] > 0)]
        if bad:
            raise IncompleteTable(f"{model} has non-positive or non-finite MAE for {bad}")
    best = {t: min(row[t] for row in table.values()) for t in tasks}
    return {
        model: ModelProfile(model, {t: row[t] / best[t] for t in tasks}, tau)
        for model, row in sorted(table.items())
    }


def read_table(path) -> dict[str, dict[str, float]]:
    """Long-format CSV with columns ``model,task,mae``."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            for col in ("model", "task", "mae"):
                if col not in (reader.fieldnames or []):
                    raise MissingColumn(f"{path}: missing column {col!r}")
            table: dict[str, dict[str, float]] = {}
            for row in reader:
                table.setdefault(row["model"], {})[row["task"]] = float(row["mae"])
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    return table


def profile_csv(profiles: dict[str, ModelProfile]) -> str:
    """Plot data: one row per (model, task) sorted by ratio, with the ECDF value."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "task", "rho", "ecdf"])
    for name, p in profiles.items():
        ordered = sorted(p.rho.items(), key=lambda kv: (kv[1], kv[0]))
        for task, r in ordered:
            w.writerow([name, task, f"{r:.6f}", f"{p.fraction_within(r):.6f}"])
    return buf.getvalue()


def summary_csv(profiles: dict[str, ModelProfile]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "tau", "wins", "win_fraction", "within_tau", "within_tau_fraction"])
    for name, p in profiles.items():
        n = len(p.rho)
        w.writerow([name, f"{p.tau:.6f}", p.wins, f"{p.wins / n:.6f}", p.within_tau, f"{p.within_tau / n:.6f}"])
    return buf.getvalue()
