"""Unlabeled 1-WL color refinement and compound graphs."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

from ximp.batch import build_abstraction
from ximp.chem import MolecularGraph
from ximp.reductions import Correspondence, ReducedGraph


@dataclass(frozen=True)
class SimpleGraph:
    """Undirected graph on nodes ``0..n-1`` with an origin tag per node."""

    n: int
    edges: tuple[tuple[int, int], ...]
    origins: tuple[str, ...] = ()

    def neighbors(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in range(self.n)]
        for u, v in self.edges:
            adj[u].append(v)
            adj[v].append(u)
        return adj


@dataclass(frozen=True)
class ColoringResult:
    colors: tuple[int, ...]
    rounds: int

    @property
    def histogram(self) -> tuple[tuple[int, int], ...]:
        return tuple(sorted(Counter(self.colors).items()))

    @property
    def n_colors(self) -> int:
        return len(set(self.colors))


def as_simple_graph(g) -> SimpleGraph:
    if isinstance(g, SimpleGraph):
        return g
    if isinstance(g, MolecularGraph):
        return SimpleGraph(g.n_atoms, tuple((b.begin, b.end) for b in g.bonds), ("g",) * g.n_atoms)
    if isinstance(g, ReducedGraph):
        return SimpleGraph(g.n_nodes, tuple(g.edges), (g.kind,) * g.n_nodes)
    if isinstance(g, CompoundGraph):
        return g.graph
    raise TypeError(f"cannot treat {type(g).__name__} as a graph")


def _refine_all(graphs: list[SimpleGraph]) -> list[ColoringResult]:
    """Refine several graphs in lockstep so colors are comparable across them.

    Each round numbers the joint set of signatures in sorted order, so the
    colors depend only on graph structure, never on node order.
    """
    adjs = [g.neighbors() for g in graphs]
    colors = [[0] * g.n for g in graphs]
    rounds = 0
    while True:
        sigs = [
            [(c[v], tuple(sorted(c[u] for u in adj[v]))) for v in range(len(c))]
            for c, adj in zip(colors, adjs)
        ]
        palette = {sig: i for i, sig in enumerate(sorted({x for s in sigs for x in s}))}
        new = [[palette[x] for x in s] for s in sigs]
        # the joint partition only refines, so an unchanged class count is the fixpoint
        if len(palette) == len({x for c in colors for x in c}):
            break
        colors = new
        rounds += 1
    return [ColoringResult(tuple(c), rounds) for c in colors]


def wl_refine(g) -> ColoringResult:
    """Stable coloring under constant initialization."""
    return _refine_all([as_simple_graph(g)])[0]


def wl_distinguishable(g1, g2) -> bool:
    """True iff the stable color histograms of the two graphs differ."""
    a, b = _refine_all([as_simple_graph(g1), as_simple_graph(g2)])
    return a.histogram != b.histogram


@dataclass(frozen=True)
class CompoundGraph:
    graph: SimpleGraph
    n_atoms: int
    cross_edges: tuple[tuple[int, int], ...]

    @property
    def n_nodes(self) -> int:
        return self.graph.n


def build_compound(
    g: MolecularGraph,
    abstractions: list[ReducedGraph] | tuple = (),
    correspondences: list[Correspondence] | tuple = (),
) -> CompoundGraph:
    """Disjoint union of ``g`` and every abstraction, plus one undirected
    edge per 1-entry of each membership matrix. Labels are dropped."""
    if len(abstractions) != len(correspondences):
        raise ValueError("one correspondence per abstraction is required")
    edges = [(b.begin, b.end) for b in g.bonds]
    origins = ["g"] * g.n_atoms
    cross = []
    offset = g.n_atoms
    for t, c in zip(abstractions, correspondences):
        if c.s.shape != (g.n_atoms, t.n_nodes):
            raise ValueError(f"correspondence shape {c.s.shape} does not match ({g.n_atoms}, {t.n_nodes})")
        edges += [(u + offset, v + offset) for u, v in t.edges]
        origins += [t.kind] * t.n_nodes
        for atom, node in zip(*c.s.nonzero()):
            cross.append((int(atom), int(node) + offset))
        offset += t.n_nodes
    edges += cross
    return CompoundGraph(SimpleGraph(offset, tuple(edges), tuple(origins)), g.n_atoms, tuple(cross))


VIEWS = ("g", "jt", "erg", "compound")


def view_graph(g: MolecularGraph, view: str, jt_resolution: int = 1):
    if view == "g":
        return as_simple_graph(g)
    if view in ("jt", "erg"):
        return as_simple_graph(build_abstraction(g, view, jt_resolution)[0])
    if view == "compound":
        built = [build_abstraction(g, name, jt_resolution) for name in ("jt", "erg")]
        return build_compound(g, [t for t, _ in built], [c for _, c in built]).graph
    raise ValueError(f"unknown view {view!r}; expected one of {VIEWS}")


def compare_views(g1: MolecularGraph, g2: MolecularGraph, views=VIEWS) -> dict[str, bool]:
    """Distinguishability of two molecules under each requested view."""
    return {v: wl_distinguishable(view_graph(g1, v), view_graph(g2, v)) for v in views}
