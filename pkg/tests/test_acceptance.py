"""End-to-end acceptance checks. Each test prints one PASS/FAIL line."""

import json
import time

import numpy as np
import pytest

from gradcheck import numeric_grad, relative_error
from ximp.autograd import ParameterStore, absolute, constant, mean_all, mean_rows, sub
from ximp.batch import collate, prepare
from ximp.chem import connected_components, cycle_rank, parse_smiles
from ximp.cli import main
from ximp.data import dataset_from_pairs
from ximp.layers import GinLayerParams, directed_edges, gin_layer
from ximp.model import HimpConfig, HimpModel, ModelConfig, XimpModel, ximp_from_himp
from ximp.profile import performance_profile
from ximp.reductions import Correspondence, dimp_correspondence
from ximp.rng import Rng
from ximp.scaling import forward_scaling
from ximp.synthetic import random_molecules, synthetic_records
from ximp.training import TrainConfig, evaluate, train
from ximp.wl import compare_views, view_graph, wl_distinguishable

DECALIN = "C1CCC2CCCCC2C1"
BICYCLOPENTYL = "C1CCC(C1)C1CCCC1"


def report(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\n[criterion {number}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


def random_left_total(rng, n_atoms):
    n_nodes = int(rng.integers(1, n_atoms + 1))
    s = (rng.random((n_atoms, n_nodes)) < 0.3).astype(float)
    s[np.arange(n_atoms), rng.integers(0, n_nodes, n_atoms)] = 1.0
    s[rng.integers(0, n_atoms, n_nodes), np.arange(n_nodes)] = 1.0  # no empty nodes
    return Correspondence(s)


def test_1_projection_normalization(capsys, small_corpus):
    start = time.perf_counter()
    rng = np.random.default_rng(0)
    worst_row, worst_const, violations = 0.0, 0.0, 0
    pairs = 0
    for g in small_corpus:
        items = prepare(g).abstractions
        molecular = (items["jt"][1], items["erg"][1])
        synthetic = (random_left_total(rng, g.n_atoms), random_left_total(rng, g.n_atoms))
        for c_i, c_k in (molecular, synthetic):
            assert c_i.is_left_total and c_k.is_left_total
            m = dimp_correspondence(c_i, c_k)
            pairs += 1
            worst_row = max(worst_row, float(np.abs(m.sum(axis=1) - 1.0).max()))
            t = rng.normal(size=(m.shape[1], 5))
            out = m @ t
            inf_ok = np.abs(out).sum(axis=1).max() <= np.abs(t).sum(axis=1).max() + 1e-12
            one_ok = np.abs(out).sum(axis=0).max() <= m.shape[0] * np.abs(t).sum(axis=0).max() + 1e-12
            violations += (not inf_ok) + (not one_ok)
            c = np.tile(rng.normal(size=(1, 5)), (m.shape[1], 1))
            worst_const = max(worst_const, float(np.abs(m @ c - c[:1]).max()))
    elapsed = time.perf_counter() - start
    ok = pairs >= 100 and worst_row < 1e-12 and worst_const <= 1e-12 and violations == 0 and elapsed < 5.0
    report(
        capsys,
        1,
        ok,
        f"{pairs} pairs, max row-sum error {worst_row:.1e}, constant error {worst_const:.1e}, "
        f"{violations} norm violations, {elapsed:.2f}s",
    )


def test_2_hydroxypyridine_views(capsys):
    start = time.perf_counter()
    result = compare_views(parse_smiles("Oc1cnccc1"), parse_smiles("Oc1ccncc1"), ("g", "jt", "erg", "compound"))
    elapsed = time.perf_counter() - start
    pattern = tuple(result[v] for v in ("g", "jt", "erg", "compound"))
    ok = pattern == (False, False, False, True) and elapsed < 1.0
    report(capsys, 2, ok, f"(G, JT, ErG, compound) distinguishable = {pattern}, {elapsed:.3f}s")


def test_3_himp_embedding(capsys, small_corpus):
    batch = collate([prepare(g, ("jt",)) for g in small_corpus[:20]], ("jt",))
    worst = 0.0
    for seed in range(5):
        himp = HimpModel(HimpConfig(n_layers=3, hidden=16), seed=seed)
        ximp = ximp_from_himp(himp)
        diff = np.abs(himp.forward(batch).prediction.value - ximp.forward(batch).prediction.value).max()
        worst = max(worst, float(diff))
    report(capsys, 3, worst < 1e-10, f"20 molecules x 5 seeds, max |HIMP - XIMP| = {worst:.1e}")


def test_4_decalin_bicyclopentyl(capsys):
    a, b = parse_smiles(DECALIN), parse_smiles(BICYCLOPENTYL)
    g_same = not wl_distinguishable(a, b)
    jt_diff = wl_distinguishable(view_graph(a, "jt"), view_graph(b, "jt"))
    worst = 0.0
    for depth in (1, 2, 3):
        for seed in range(3):
            store = ParameterStore()
            layers = [GinLayerParams.create(store, Rng(seed), f"g{i}", 16) for i in range(depth)]
            means = []
            for g in (a, b):
                src, dst, _ = directed_edges(g)
                h = constant(np.ones((g.n_atoms, 16)))
                for p in layers:
                    h = gin_layer(h, (src, dst), p)
                means.append(mean_rows(h).value)
            worst = max(worst, float(np.abs(means[0] - means[1]).max()))
    ok = g_same and jt_diff and worst <= 1e-12
    report(
        capsys,
        4,
        ok,
        f"molecular graphs indistinguishable={g_same}, junction trees distinguishable={jt_diff}, "
        f"max GIN mean difference over depths 1-3 = {worst:.1e}",
    )


def test_5_gradients(capsys):
    g = parse_smiles("CCc1ccc(O)cc1C")
    assert g.n_atoms == 10
    config = ModelConfig(n_layers=2, hidden=16, reduced_dim=16, out_dim=16, head_hidden=16, dropout=0.0)
    model = XimpModel(config, seed=0)
    batch = collate([prepare(g, target=0.0)])
    target = constant([[100.0]])  # far from the prediction, so the absolute value never flips sign

    def loss():
        return mean_all(absolute(sub(model.forward(batch).prediction, target)))

    model.params.zero_grad()
    loss().backward()
    worst, worst_name = 0.0, ""
    for name in model.params.names():
        p = model.params[name]
        err = relative_error(p.grad, numeric_grad(lambda: float(loss().value[0, 0]), p.value, 1e-5))
        if err > worst:
            worst, worst_name = err, name
    n = len(model.params.names())
    report(capsys, 5, worst < 1e-4, f"{n} parameter tensors, max relative error {worst:.1e} ({worst_name})")


def test_6_structural_fuzz(capsys, corpus):
    failures = []
    worst_perm = 0.0
    model = XimpModel(ModelConfig(dropout=0.0), seed=0)
    rng = np.random.default_rng(6)
    for g in corpus:
        items = prepare(g).abstractions
        jt = items["jt"][0]
        if not jt.is_forest():
            failures.append(f"{g.smiles}: junction tree has a cycle")
        # one tree per molecular component
        jt_components = len(connected_components(jt.n_nodes, jt.neighbors))
        if jt_components != g.n_components():
            failures.append(f"{g.smiles}: {jt_components} tree components for {g.n_components()} fragments")
        for name, (_, c) in items.items():
            if not c.is_left_total:
                failures.append(f"{g.smiles}: {name} correspondence not left-total")
        if len(g.rings) != cycle_rank(g):
            failures.append(f"{g.smiles}: {len(g.rings)} rings, cycle rank {cycle_rank(g)}")
        base = model.forward(collate([prepare(g)])).graph_embedding.value
        perm = g.permute(list(rng.permutation(g.n_atoms)))
        moved = model.forward(collate([prepare(perm)])).graph_embedding.value
        worst_perm = max(worst_perm, float(np.abs(base - moved).max() / max(np.abs(base).max(), 1.0)))
    # exact up to floating-point reassociation of the pooled sums
    ok = not failures and worst_perm < 1e-12
    detail = f"{len(corpus)} molecules, {len(failures)} structural failures, readout permutation error {worst_perm:.1e}"
    report(capsys, 6, ok, detail + ("; " + failures[0] if failures else ""))


def test_7_convergence(capsys):
    start = time.perf_counter()
    ds = dataset_from_pairs(synthetic_records(128, seed=0, max_units=3))
    train_idx, held_out = list(range(64)), list(range(64, 128))
    dims = dict(n_layers=3, hidden=32, reduced_dim=32, out_dim=32, head_hidden=128, dropout=0.0)
    ximp = ModelConfig(**dims)
    gine = ModelConfig(**dims, abstractions=(), enable_i2mp=False, enable_dimp=False)
    schedule = TrainConfig(epochs=150, batch_size=64, lr=1e-2, lr_schedule="cosine")
    best_train, wins = [], 0
    for seed in range(10):
        a = train(ximp, schedule, ds, train_idx, seed)
        b = train(gine, schedule, ds, train_idx, seed)
        best_train.append(min(a.train_mae))
        wins += evaluate(a.model, ds, held_out) < evaluate(b.model, ds, held_out)
    elapsed = time.perf_counter() - start
    reached = sum(v < 0.05 for v in best_train)
    ok = best_train[0] < 0.05 and wins >= 8 and elapsed < 300
    report(
        capsys,
        7,
        ok,
        f"seed-0 best train MAE {best_train[0]:.3f} ({reached}/10 seeds below 0.05), "
        f"held-out wins over GIN-E {wins}/10, {elapsed:.0f}s",
    )


REFERENCE_MAE = {
    "ECFP": [0.56, 0.42, 0.86, 0.38, 0.55, 0.79, 0.57, 1.21, 2.94, 0.73],
    "GNN": [0.56, 0.48, 0.68, 0.37, 0.64, 0.71, 0.45, 0.71, 1.58, 0.52],
    "HIMP": [0.54, 0.35, 0.80, 0.35, 0.56, 0.64, 0.39, 0.80, 1.77, 0.52],
    "XIMP": [0.53, 0.37, 0.69, 0.31, 0.49, 0.69, 0.41, 0.82, 1.83, 0.52],
}
TASKS = ["HLM", "KSOL", "LogD", "MDR1", "MLM", "MERS", "SARS", "ESOL", "FreeSolv", "Lipo"]


def test_8_profile(capsys):
    profiles = performance_profile({m: dict(zip(TASKS, v)) for m, v in REFERENCE_MAE.items()}, tau=1.05)
    esol = [profiles[m].rho["ESOL"] for m in ("ECFP", "GNN", "HIMP", "XIMP")]
    esol_ok = np.allclose(esol, [1.704, 1.0, 1.127, 1.155], atol=1e-3)
    within = {m: p.within_tau for m, p in profiles.items()}
    wins = {m: p.wins for m, p in profiles.items()}
    ordering_ok = all(within["XIMP"] >= within[m] for m in within)
    report(
        capsys,
        8,
        esol_ok and ordering_ok,
        f"ESOL rho {[round(r, 3) for r in esol]}, wins {wins}, within tau {within}",
    )


def test_9_determinism_and_scaling(capsys, tmp_path):
    data = tmp_path / "synth.csv"
    assert main(["synth", "--n", "40", "--seed", "0", "--out", str(data)]) == 0
    grid = tmp_path / "grid.json"
    grid.write_text(
        json.dumps(
            {
                "kind": "ximp",
                "params": {"hidden": [16, 32], "n_layers": [1, 2]},
                "fixed": {"reduced_dim": 16, "out_dim": 16, "head_hidden": 16, "epochs": 10, "batch_size": 64},
                "n_folds": 2,
                "n_seeds": 2,
                "master_seed": 7,
                "strict": False,
            }
        )
    )
    outputs = []
    for run in ("a", "b"):
        assert main(["gridsearch", "--grid", str(grid), "--data", str(data), "--out", str(tmp_path / run)]) == 0
        outputs.append((tmp_path / run / "results.csv").read_bytes())
    identical = outputs[0] == outputs[1]
    fit = forward_scaling(sizes=(10, 100, 1000), repeats=5)
    ok = identical and fit.r_squared > 0.95
    times = ", ".join(f"C{n}: {t * 1e3:.2f} ms" for n, t in zip(fit.sizes, fit.seconds))
    report(capsys, 9, ok, f"grid CSV byte-identical={identical}; layer time {times}, R^2 = {fit.r_squared:.4f}")
