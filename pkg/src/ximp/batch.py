"""Per-molecule model inputs and their block-diagonal collation into batches."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ximp.chem import MolecularGraph
from ximp.layers import atom_features, directed_edges
from ximp.reductions import (
    Correspondence,
    ReducedGraph,
    build_erg,
    build_junction_tree,
    coarsen_junction_tree,
    dimp_correspondence,
)

ABSTRACTIONS = ("erg", "jt")

# bump whenever atom/bond/node features or reductions change meaning
FEATURIZATION_VERSION = 2


def build_abstraction(g: MolecularGraph, name: str, jt_resolution: int = 1) -> tuple[ReducedGraph, Correspondence]:
    if name == "jt":
        tree, corr = build_junction_tree(g)
        return coarsen_junction_tree(tree, corr, jt_resolution)
    if name == "erg":
        return build_erg(g)
    raise ValueError(f"unknown abstraction {name!r}; expected one of {ABSTRACTIONS}")


@dataclass
class MoleculeInputs:
    graph: MolecularGraph
    atom_x: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    edge_attr: np.ndarray
    abstractions: dict[str, tuple[ReducedGraph, Correspondence]] = field(default_factory=dict)
    target: float | None = None
    _blocks: dict = field(default_factory=dict, repr=False, compare=False)

    def operator(self, key) -> sp.csr_matrix:
        """Sparse per-molecule operator, built once and reused by every batch.

        ``key`` is ``(name, "s" | "s_row" | "s_col")`` for one abstraction or
        ``("dimp", i, k)`` for the projection from abstraction ``k`` to ``i``.
        """
        if key not in self._blocks:
            if key[0] == "dimp":
                m = _sparse_dimp(self.abstractions[key[1]][1], self.abstractions[key[2]][1])
            else:
                c = self.abstractions[key[0]][1]
                m = sp.csr_matrix({"s": c.s, "s_row": c.row_normalized, "s_col": c.col_normalized}[key[1]])
            self._blocks[key] = m
        return self._blocks[key]

    @property
    def node_edges(self) -> dict[str, tuple[np.ndarray, np.ndarray]]:
        """Directed edge lists of every abstraction."""
        if "edges" not in self._blocks:
            out = {}
            for name, (t, _) in self.abstractions.items():
                e = np.array(t.edges, dtype=np.int64).reshape(-1, 2)
                out[name] = (np.concatenate([e[:, 0], e[:, 1]]), np.concatenate([e[:, 1], e[:, 0]]))
            self._blocks["edges"] = out
        return self._blocks["edges"]

    @property
    def node_features(self) -> dict[str, np.ndarray]:
        if "features" not in self._blocks:
            self._blocks["features"] = {name: t.features() for name, (t, _) in self.abstractions.items()}
        return self._blocks["features"]


def prepare(
    g: MolecularGraph,
    abstractions=ABSTRACTIONS,
    jt_resolution: int = 1,
    target: float | None = None,
) -> MoleculeInputs:
    src, dst, attr = directed_edges(g)
    built = {name: build_abstraction(g, name, jt_resolution) for name in abstractions}
    return MoleculeInputs(g, atom_features(g), src, dst, attr, built, target)


@dataclass
class AbstractionBatch:
    x: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    s: sp.csr_matrix  # raw membership, atoms x nodes
    s_row: sp.csr_matrix  # D^-1 S
    s_col: sp.csr_matrix  # D_T^-1 S^T
    pool: sp.csr_matrix  # graphs x nodes, mean pooling

    @property
    def n_nodes(self) -> int:
        return self.x.shape[0]


@dataclass
class Batch:
    n_graphs: int
    atom_x: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    edge_attr: np.ndarray
    pool: sp.csr_matrix
    abstractions: dict[str, AbstractionBatch]
    dimp: dict[tuple[str, str], sp.csr_matrix]  # (i, k) -> S~_ik
    targets: np.ndarray | None = None

    @property
    def n_atoms(self) -> int:
        return self.atom_x.shape[0]


def _pool_matrix(sizes: list[int]) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    offset = 0
    for b, n in enumerate(sizes):
        rows.extend([b] * n)
        cols.extend(range(offset, offset + n))
        vals.extend([1.0 / n] * n)
        offset += n
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(sizes), offset))


def _block_diag(blocks: list[sp.csr_matrix]) -> sp.csr_matrix:
    """Block-diagonal stack of CSR matrices by concatenating their arrays."""
    rows = np.array([b.shape[0] for b in blocks])
    cols = np.array([b.shape[1] for b in blocks])
    nnz = np.array([b.nnz for b in blocks])
    col_off = np.repeat(np.cumsum(cols) - cols, nnz)
    nnz_off = np.cumsum(nnz) - nnz
    indptr = np.concatenate([[0]] + [b.indptr[1:] + o for b, o in zip(blocks, nnz_off)])
    data = np.concatenate([b.data for b in blocks])
    indices = np.concatenate([b.indices for b in blocks]).astype(np.int64) + col_off
    return sp.csr_matrix((data, indices, indptr), shape=(int(rows.sum()), int(cols.sum())))


def _sparse_dimp(c_i: Correspondence, c_k: Correspondence) -> sp.csr_matrix:
    """Sparse evaluation of the doubly-normalized projection between two abstractions."""
    if c_i.s.shape[0] != c_k.s.shape[0]:
        dimp_correspondence(c_i, c_k)  # raises ShapeMismatch
    return sp.csr_matrix(c_i.col_normalized) @ sp.csr_matrix(c_k.row_normalized)


def collate(items: list[MoleculeInputs], names=None) -> Batch:
    """Stack molecules into one disconnected graph with block-diagonal operators."""
    if not items:
        raise ValueError("cannot collate an empty list")
    if names is None:
        names = tuple(sorted(items[0].abstractions))
    atom_sizes = [m.atom_x.shape[0] for m in items]
    offsets = np.cumsum([0] + atom_sizes[:-1])
    src = np.concatenate([m.src + o for m, o in zip(items, offsets)])
    dst = np.concatenate([m.dst + o for m, o in zip(items, offsets)])
    edge_attr = np.concatenate([m.edge_attr for m in items], axis=0)
    atom_x = np.concatenate([m.atom_x for m in items], axis=0)

    abstractions = {}
    for name in names:
        sizes = [m.node_features[name].shape[0] for m in items]
        node_offsets = np.cumsum([0] + sizes[:-1])
        edges = [m.node_edges[name] for m in items]
        abstractions[name] = AbstractionBatch(
            x=np.concatenate([m.node_features[name] for m in items], axis=0),
            src=np.concatenate([e[0] + o for e, o in zip(edges, node_offsets)]),
            dst=np.concatenate([e[1] + o for e, o in zip(edges, node_offsets)]),
            s=_block_diag([m.operator((name, "s")) for m in items]),
            s_row=_block_diag([m.operator((name, "s_row")) for m in items]),
            s_col=_block_diag([m.operator((name, "s_col")) for m in items]),
            pool=_pool_matrix(sizes),
        )
    dimp = {}
    for i in names:
        for k in names:
            if i != k:
                dimp[(i, k)] = _block_diag([m.operator(("dimp", i, k)) for m in items])
    targets = None
    if all(m.target is not None for m in items):
        targets = np.array([[m.target] for m in items], dtype=np.float64)
    return Batch(len(items), atom_x, src, dst, edge_attr, _pool_matrix(atom_sizes), abstractions, dimp, targets)
