"""Command-line entry point: ``ximp <command> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from ximp.chem import parse_smiles
from ximp.data import load_csv, make_split
from ximp.errors import ConfigError, IoError, XimpError
from ximp.grid import GridSpec, grid_search
from ximp.profile import performance_profile, profile_csv, read_table, summary_csv
from ximp.reductions import murcko_scaffold
from ximp.synthetic import synthetic_records
from ximp.training import (
    evaluate,
    load_checkpoint,
    model_config_from_dict,
    save_checkpoint,
    train,
    train_config_from_dict,
)
from ximp.wl import VIEWS, compare_views


def _read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise IoError(f"cannot read {path}: {e}") from e


def cmd_prep(args) -> int:
    ds = load_csv(args.input)
    out = Path(args.cache)
    out.mkdir(parents=True, exist_ok=True)
    records = [
        {"smiles": r.smiles, "target": r.target, "id": r.id, "n_atoms": r.graph.n_atoms, "scaffold": murcko_scaffold(r.graph)}
        for r in ds.records
    ]
    (out / "records.json").write_text(json.dumps(records, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    with open(out / "rejected.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "smiles", "reason"])
        for r in ds.rejected:
            w.writerow([r.row, r.smiles, r.reason])
    split = make_split(ds, args.seed)
    plan = {"seed": split.seed, "test": split.test, "folds": split.folds}
    (out / "split.json").write_text(json.dumps(plan) + "\n", encoding="utf-8")
    print(f"{len(ds)} records, {len(ds.rejected)} rejected, {len(split.test)} in scaffold test set")
    return 0


def cmd_train(args) -> int:
    cfg = _read_json(args.config)
    model_cfg = model_config_from_dict(cfg.get("model", {}))
    train_cfg = train_config_from_dict(cfg.get("train", {}))
    ds = load_csv(args.data)
    result = train(model_cfg, train_cfg, ds, list(range(len(ds))), args.seed)
    save_checkpoint(result.checkpoint(), args.out)
    for epoch, value in enumerate(result.train_mae):
        print(f"epoch {epoch + 1:4d}  train_mae {value:.6f}")
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    ds = load_csv(args.input)
    print(f"mae {evaluate(ckpt, ds):.6f}")
    return 0


def cmd_gridsearch(args) -> int:
    grid = _read_json(args.grid)
    if args.seed is not None:
        grid["master_seed"] = args.seed
    spec = GridSpec.from_dict(grid)
    ds = load_csv(args.data)
    split = make_split(ds, spec.master_seed)
    result = grid_search(spec, ds, split)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.csv").write_text(result.to_csv(), encoding="utf-8")
    (out / "timings.csv").write_text(result.timings_csv(), encoding="utf-8")
    selection = {"val_selected": result.val_selected, "test_selected": result.test_selected}
    (out / "selection.json").write_text(json.dumps(selection, sort_keys=True) + "\n", encoding="utf-8")
    print(f"{len(result.cells)} cells; validation-selected {result.val_selected}, test-selected {result.test_selected}")
    return 0


def cmd_wl_check(args) -> int:
    views = [v.strip() for v in args.views.split(",") if v.strip()]
    unknown = set(views) - set(VIEWS)
    if unknown:
        raise ConfigError(f"unknown views {sorted(unknown)}; choose from {','.join(VIEWS)}")
    result = compare_views(parse_smiles(args.smiles_a), parse_smiles(args.smiles_b), views)
    print(f"{'view':<10} distinguishable")
    for view in views:
        print(f"{view:<10} {str(result[view]).lower()}")
    return 0


def cmd_profile(args) -> int:
    profiles = performance_profile(read_table(args.results), args.tau)
    out = Path(args.out)
    out.write_text(profile_csv(profiles), encoding="utf-8")
    summary = out.with_name(out.stem + "_summary" + out.suffix)
    summary.write_text(summary_csv(profiles), encoding="utf-8")
    sys.stdout.write(summary_csv(profiles))
    return 0


def cmd_synth(args) -> int:
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["smiles", "target"])
        for smiles, target in synthetic_records(args.n, args.seed):
            w.writerow([smiles, f"{target:.1f}"])
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ximp", description="Inter-graph message passing over molecular abstractions.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("prep", help="parse a CSV, report rejects, compute the split")
    s.add_argument("--input", required=True)
    s.add_argument("--cache", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_prep)

    s = sub.add_parser("train", help="train one model and write a checkpoint")
    s.add_argument("--config", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="MAE of a checkpoint on a CSV")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--input", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("gridsearch", help="cross-validated grid search with scaffold test set")
    s.add_argument("--grid", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=None, help="override the grid's master seed")
    s.set_defaults(func=cmd_gridsearch)

    s = sub.add_parser("wl-check", help="1-WL distinguishability of two molecules per view")
    s.add_argument("--smiles-a", required=True)
    s.add_argument("--smiles-b", required=True)
    s.add_argument("--views", default=",".join(VIEWS))
    s.set_defaults(func=cmd_wl_check)

    s = sub.add_parser("profile", help="performance profile of a model,task,mae table")
    s.add_argument("--results", required=True)
    s.add_argument("--tau", type=float, default=1.05)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_profile)

    s = sub.add_parser("synth", help="write the synthetic ring/donor regression set")
    s.add_argument("--n", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if "XIMP_THREADS" in os.environ and not os.environ["XIMP_THREADS"].isdigit():
        print("error: XIMP_THREADS must be a positive integer", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except XimpError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
