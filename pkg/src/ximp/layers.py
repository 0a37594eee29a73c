"""GIN and GIN-E message passing, MLPs, and atom/bond featurization."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ximp.autograd import (
    ParameterStore,
    Tensor,
    add,
    matmul,
    relu,
    row_select,
    scale,
    scatter_add,
)
from ximp.chem import ELEMENTS, MolecularGraph
from ximp.errors import MissingEdgeFeature, ShapeMismatch
from ximp.rng import Rng

ATOM_FEATURE_DIM = len(ELEMENTS) + 5 + 5 + 1 + 5
BOND_FEATURE_DIM = 4


def atom_features(g: MolecularGraph) -> np.ndarray:
    """One-hot element, degree 0-4, charge -2..2, aromatic flag, H count 0-4."""
    x = np.zeros((g.n_atoms, ATOM_FEATURE_DIM))
    for i, a in enumerate(g.atoms):
        x[i, ELEMENTS.index(a.element)] = 1.0
        off = len(ELEMENTS)
        x[i, off + min(g.degree(i), 4)] = 1.0
        off += 5
        x[i, off + a.formal_charge + 2] = 1.0
        off += 5
        x[i, off] = float(a.aromatic)
        off += 1
        x[i, off + min(a.implicit_h_count, 4)] = 1.0
    return x


def directed_edges(g: MolecularGraph) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Both directions of every bond: (src, dst, one-hot bond order)."""
    src, dst, attr = [], [], []
    for b in g.bonds:
        onehot = np.zeros(BOND_FEATURE_DIM)
        onehot[int(b.order) - 1] = 1.0
        for u, v in ((b.begin, b.end), (b.end, b.begin)):
            src.append(u)
            dst.append(v)
            attr.append(onehot)
    return (
        np.array(src, dtype=np.int64),
        np.array(dst, dtype=np.int64),
        np.array(attr).reshape(-1, BOND_FEATURE_DIM),
    )


def edge_index_from_adjacency(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeMismatch(f"adjacency must be square, got {a.shape}")
    dst, src = np.nonzero(a)
    return src.astype(np.int64), dst.astype(np.int64)


def _edges(adjacency) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(adjacency, tuple):
        return adjacency
    return edge_index_from_adjacency(adjacency)


# --------------------------------------------------------------------------
# parameter helpers
# --------------------------------------------------------------------------


def init_linear(store: ParameterStore, rng: Rng, prefix: str, fan_in: int, fan_out: int, bias: bool = True) -> None:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, and bias if requested."""
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    store.add(f"{prefix}.weight", rng.uniform_array((fan_in, fan_out), -bound, bound))
    if bias:
        store.add(f"{prefix}.bias", rng.uniform_array((1, fan_out), -bound, bound))


def linear(x: Tensor, store: ParameterStore, prefix: str) -> Tensor:
    out = matmul(x, store[f"{prefix}.weight"])
    if f"{prefix}.bias" in store:
        out = add(out, store[f"{prefix}.bias"])
    return out


def init_mlp(store: ParameterStore, rng: Rng, prefix: str, widths: Sequence[int]) -> None:
    for i, (a, b) in enumerate(zip(widths, widths[1:])):
        init_linear(store, rng, f"{prefix}.{i}", a, b)


def mlp(x: Tensor, store: ParameterStore, prefix: str, n_layers: int) -> Tensor:
    """Linear layers with ReLU between them (none after the last)."""
    for i in range(n_layers):
        x = linear(x, store, f"{prefix}.{i}")
        if i < n_layers - 1:
            x = relu(x)
    return x


@dataclass
class GinLayerParams:
    """Handles into a store for one GIN / GIN-E layer rooted at ``prefix``."""

    store: ParameterStore
    prefix: str
    edge_embed: bool = False

    @classmethod
    def create(
        cls, store: ParameterStore, rng: Rng, prefix: str, width: int, edge_dim: int | None = None
    ) -> "GinLayerParams":
        store.add(f"{prefix}.eps", np.zeros((1, 1)))
        init_mlp(store, rng, f"{prefix}.mlp", (width, width, width))
        if edge_dim is not None:
            init_linear(store, rng, f"{prefix}.edge", edge_dim, width)
        return cls(store, prefix, edge_dim is not None)

    @property
    def epsilon(self) -> Tensor:
        return self.store[f"{self.prefix}.eps"]

    def mlp(self, x: Tensor) -> Tensor:
        return mlp(x, self.store, f"{self.prefix}.mlp", 2)

    def embed_edges(self, e: Tensor) -> Tensor:
        return linear(e, self.store, f"{self.prefix}.edge")


# --------------------------------------------------------------------------
# layers
# --------------------------------------------------------------------------


def gin_forward(
    x: Tensor,
    adjacency,
    epsilon: Tensor | float,
    mlp_fn: Callable[[Tensor], Tensor],
) -> Tensor:
    """``MLP((A + (1 + eps) I) X)``.

    ``adjacency`` is a dense square matrix or a ``(src, dst)`` pair listing
    every directed edge (both directions for an undirected graph).
    """
    src, dst = _edges(adjacency)
    n = x.shape[0]
    if src.size and max(src.max(), dst.max()) >= n:
        raise ShapeMismatch(f"edge index out of range for {n} nodes")
    agg = scatter_add(row_select(x, src), dst, n)
    return mlp_fn(add(scale(x, epsilon, offset=1.0), agg))


def gine_forward(
    x: Tensor,
    adjacency,
    edge_attr: Tensor | np.ndarray | None,
    epsilon: Tensor | float,
    mlp_fn: Callable[[Tensor], Tensor],
    edge_fn: Callable[[Tensor], Tensor] | None = None,
) -> Tensor:
    """``MLP((1 + eps) X + sum_u A_vu relu(x_u + E_vu))`` per node ``v``.

    ``edge_attr`` holds one row per directed edge in ``adjacency`` order;
    ``edge_fn`` maps it to the node width when the widths differ.
    """
    src, dst = _edges(adjacency)
    if edge_attr is None:
        raise MissingEdgeFeature("GIN-E needs edge features")
    if not isinstance(edge_attr, Tensor):
        arr = np.asarray(edge_attr, dtype=np.float64)
        edge_attr = Tensor(arr if arr.ndim == 2 else arr.reshape(-1, 1))
    e = edge_attr
    if e.shape[0] != len(src):
        raise MissingEdgeFeature(f"{e.shape[0]} edge feature rows for {len(src)} directed edges")
    if edge_fn is not None:
        e = edge_fn(e)
    if e.shape[1] != x.shape[1]:
        raise ShapeMismatch(f"edge width {e.shape[1]} != node width {x.shape[1]}")
    n = x.shape[0]
    messages = relu(add(row_select(x, src), e))
    agg = scatter_add(messages, dst, n)
    return mlp_fn(add(scale(x, epsilon, offset=1.0), agg))


def gin_layer(x: Tensor, adjacency, params: GinLayerParams) -> Tensor:
    return gin_forward(x, adjacency, params.epsilon, params.mlp)


def gine_layer(x: Tensor, adjacency, edge_attr, params: GinLayerParams) -> Tensor:
    return gine_forward(x, adjacency, edge_attr, params.epsilon, params.mlp, params.embed_edges)


def mlp_head(h: Tensor, store: ParameterStore, prefix: str = "head", n_layers: int = 2) -> Tensor:
    """Regression head: ``n_layers`` linear maps with ReLU, one output column."""
    out = mlp(h, store, prefix, n_layers)
    if out.shape[1] != 1:
        raise ShapeMismatch(f"head must end in one output column, got {out.shape[1]}")
    return out
