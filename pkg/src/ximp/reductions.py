"""Reduced-graph abstractions of a molecule and their atom correspondences.

Builds junction trees (with optional coarsening), extended reduced graphs
(ErG), the node-correspondence matrices linking either abstraction back to
the atoms, the doubly-normalized abstraction-to-abstraction projection used
for direct messages, ECFP bit vectors, and Bemis-Murcko-style scaffold keys.
"""

from __future__ import annotations

import hashlib
import struct
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from ximp.chem import ELEMENTS, BondOrder, MolecularGraph, connected_components
from ximp.errors import InvalidRadius, InvalidResolution, InvalidWidth, ShapeMismatch

JUNCTION_TREE = "junction_tree"
ERG = "erg"

JT_CATEGORIES = ("singleton", "bond", "ring", "bridged_compound")
ERG_FEATURES = (
    "donor",
    "acceptor",
    "positive",
    "negative",
    "hydrophobic",
    "aromatic",
    "flip_flop",
    "ring_aromatic",
    "ring_aliphatic",
)


@dataclass(frozen=True)
class ReducedNode:
    atoms: frozenset[int]
    jt_category: str | None = None
    erg_features: frozenset[str] | None = None

    def __post_init__(self) -> None:
        if (self.jt_category is None) == (self.erg_features is None):
            raise ValueError("exactly one of jt_category / erg_features must be set")

    def feature_vector(self) -> np.ndarray:
        if self.jt_category is not None:
            v = np.zeros(len(JT_CATEGORIES))
            v[JT_CATEGORIES.index(self.jt_category)] = 1.0
            return v
        return np.array([1.0 if f in self.erg_features else 0.0 for f in ERG_FEATURES])


@dataclass(frozen=True)
class ReducedGraph:
    kind: str
    nodes: tuple[ReducedNode, ...]
    edges: tuple[tuple[int, int], ...]
    n_atoms: int

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def atom_sets(self) -> tuple[frozenset[int], ...]:
        return tuple(n.atoms for n in self.nodes)

    @cached_property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        out: list[list[int]] = [[] for _ in self.nodes]
        for u, v in self.edges:
            out[u].append(v)
            out[v].append(u)
        return tuple(tuple(sorted(x)) for x in out)

    def features(self) -> np.ndarray:
        width = len(JT_CATEGORIES) if self.kind == JUNCTION_TREE else len(ERG_FEATURES)
        if not self.nodes:
            return np.zeros((0, width))
        return np.stack([n.feature_vector() for n in self.nodes])

    def is_forest(self) -> bool:
        n_comp = len(connected_components(self.n_nodes, self.neighbors))
        return len(self.edges) == self.n_nodes - n_comp


@dataclass(frozen=True, eq=False)
class Correspondence:
    """Binary atom-to-node membership matrix ``s`` and its normalized forms."""

    s: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        s = np.asarray(self.s, dtype=np.float64)
        s.setflags(write=False)
        object.__setattr__(self, "s", s)

    @classmethod
    def from_atom_sets(cls, n_atoms: int, atom_sets) -> "Correspondence":
        s = np.zeros((n_atoms, len(atom_sets)))
        for j, atoms in enumerate(atom_sets):
            for a in atoms:
                s[a, j] = 1.0
        return cls(s)

    @property
    def shape(self) -> tuple[int, int]:
        return self.s.shape

    def is_left_total(self) -> bool:
        return bool(np.all(self.s.sum(axis=1) > 0))

    @cached_property
    def row_normalized(self) -> np.ndarray:
        """``D^-1 S`` with ``D = diag(S 1)``: atom rows sum to one."""
        return self.s / self.s.sum(axis=1, keepdims=True)

    @cached_property
    def col_normalized(self) -> np.ndarray:
        """``D_T^-1 S^T`` with ``D_T = diag(S^T 1)``: node rows sum to one."""
        st = self.s.T
        return st / st.sum(axis=1, keepdims=True)


def dimp_correspondence(c_i: Correspondence, c_k: Correspondence) -> np.ndarray:
    """Doubly-normalized projection ``D_{T,i}^-1 S_i^T D_{G,k}^-1 S_k``.

    Shape ``|V(T_i)| x |V(T_k)|``; rows sum to one when both inputs are
    left-total.
    """
    if c_i.s.shape[0] != c_k.s.shape[0]:
        raise ShapeMismatch(f"correspondences cover {c_i.s.shape[0]} vs {c_k.s.shape[0]} atoms")
    return c_i.col_normalized @ c_k.row_normalized


# --------------------------------------------------------------------------
# junction tree
# --------------------------------------------------------------------------


def _spanning_forest(n: int, weighted_edges: list[tuple[int, int, int]]) -> list[tuple[int, int]]:
    parent = list(range(n))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    kept = []
    for w, i, j in sorted(weighted_edges, key=lambda e: (-e[0], e[1], e[2])):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
            kept.append((i, j))
    return sorted(kept)


def build_junction_tree(g: MolecularGraph) -> tuple[ReducedGraph, Correspondence]:
    """Cluster rings and non-ring bonds, then reduce the cluster graph to a tree.

    Rings sharing more than two atoms merge into one "bridged_compound"
    cluster. An atom shared by three or more clusters becomes its own
    singleton cluster linked to each of them, and any cycle left in the
    cluster graph is broken by a maximum-overlap spanning forest.
    """
    clusters: list[set[int]] = [set(r) for r in g.relevant_rings]
    kinds = ["ring"] * len(clusters)
    for b in g.bonds:
        if not g.is_ring_bond(b.begin, b.end):
            clusters.append({b.begin, b.end})
            kinds.append("bond")

    changed = True
    while changed:
        changed = False
        for i in range(len(clusters)):
            if kinds[i] not in ("ring", "bridged_compound") or not clusters[i]:
                continue
            for j in range(i + 1, len(clusters)):
                if kinds[j] not in ("ring", "bridged_compound") or not clusters[j]:
                    continue
                if len(clusters[i] & clusters[j]) > 2:
                    clusters[i] |= clusters[j]
                    clusters[j] = set()
                    kinds[i] = "bridged_compound"
                    changed = True
    kinds = [k for k, c in zip(kinds, clusters) if c]
    clusters = [c for c in clusters if c]

    member: list[list[int]] = [[] for _ in range(g.n_atoms)]
    for ci, c in enumerate(clusters):
        for a in c:
            member[a].append(ci)
    hub_atoms = set()
    n_regular = len(clusters)
    for a in range(g.n_atoms):
        if len(member[a]) >= 3 or not member[a]:
            if member[a]:
                hub_atoms.add(a)
            clusters.append({a})
            kinds.append("singleton")

    weighted: list[tuple[int, int, int]] = []
    for i in range(n_regular):
        for j in range(i + 1, n_regular):
            shared = (clusters[i] & clusters[j]) - hub_atoms
            if shared:
                weighted.append((len(shared), i, j))
    for si in range(n_regular, len(clusters)):
        (a,) = clusters[si]
        for ci in member[a]:
            weighted.append((1, ci, si))
    edges = _spanning_forest(len(clusters), weighted)

    nodes = tuple(ReducedNode(frozenset(c), jt_category=k) for c, k in zip(clusters, kinds))
    tree = ReducedGraph(JUNCTION_TREE, nodes, tuple(edges), g.n_atoms)
    return tree, Correspondence.from_atom_sets(g.n_atoms, tree.atom_sets)


def coarsen_junction_tree(
    t: ReducedGraph, c: Correspondence, resolution: int
) -> tuple[ReducedGraph, Correspondence]:
    """Contract a junction tree ``resolution - 1`` times.

    In each round, bond and singleton nodes are visited in index order and
    each one not yet touched this round is merged into its lowest-index
    neighbour that is also untouched; a node takes part in at most one merge
    per round. Merged nodes keep the absorbing node's category and position.
    """
    if resolution not in (1, 2, 3):
        raise InvalidResolution(f"resolution must be 1, 2 or 3, got {resolution!r}")
    if t.kind != JUNCTION_TREE:
        raise ValueError("coarsening applies to junction trees only")
    for _ in range(resolution - 1):
        t = _contract_once(t)
    if resolution == 1:
        return t, c
    return t, Correspondence.from_atom_sets(t.n_atoms, t.atom_sets)


def _contract_once(t: ReducedGraph) -> ReducedGraph:
    absorbed_into: dict[int, int] = {}
    touched: set[int] = set()
    for u, node in enumerate(t.nodes):
        if node.jt_category not in ("bond", "singleton") or u in touched:
            continue
        free = [w for w in t.neighbors[u] if w not in touched]
        if not free:
            continue
        w = min(free)
        absorbed_into[u] = w
        touched.update((u, w))
    keep = [u for u in range(t.n_nodes) if u not in absorbed_into]
    new_index = {u: i for i, u in enumerate(keep)}
    for u, w in absorbed_into.items():
        new_index[u] = new_index[w]
    atom_sets = [set(t.nodes[u].atoms) for u in keep]
    for u, w in absorbed_into.items():
        atom_sets[new_index[w]] |= t.nodes[u].atoms
    nodes = tuple(
        ReducedNode(frozenset(atom_sets[i]), jt_category=t.nodes[u].jt_category) for i, u in enumerate(keep)
    )
    edges = sorted(
        {tuple(sorted((new_index[a], new_index[b]))) for a, b in t.edges if new_index[a] != new_index[b]}
    )
    return ReducedGraph(JUNCTION_TREE, nodes, tuple(edges), t.n_atoms)


# --------------------------------------------------------------------------
# extended reduced graph
# --------------------------------------------------------------------------


@dataclass
class AtomProperties:
    """Per-atom pharmacophore flags after charging, donor/acceptor and endcap steps."""

    charge: list[int]
    h_count: list[int]
    flags: list[set[str]]
    endcaps: list[frozenset[int]]


def _has_multiple_bond(g: MolecularGraph, atom: int, to_elements=None) -> bool:
    for nb in g.neighbors[atom]:
        b = g.bond_between(atom, nb)
        if b.order in (BondOrder.DOUBLE, BondOrder.TRIPLE):
            if to_elements is None or g.atoms[nb].element in to_elements:
                return True
    return False


def assign_erg_properties(g: MolecularGraph) -> AtomProperties:
    """Run the charging, donor/acceptor and endcap steps on atom level."""
    atoms = g.atoms
    charge = [a.formal_charge for a in atoms]
    h = [a.implicit_h_count for a in atoms]

    # physiological charging: carboxylic acid OH -> O-, basic aliphatic amine -> N+
    for i, a in enumerate(atoms):
        if a.element == "O" and charge[i] == 0 and h[i] >= 1 and g.degree(i) == 1:
            (c,) = g.neighbors[i]
            if atoms[c].element == "C" and not atoms[c].aromatic:
                carbonyl = [
                    nb
                    for nb in g.neighbors[c]
                    if nb != i
                    and atoms[nb].element == "O"
                    and g.bond_between(c, nb).order == BondOrder.DOUBLE
                ]
                if carbonyl:
                    charge[i], h[i] = -1, h[i] - 1
    for i, a in enumerate(atoms):
        if a.element != "N" or a.aromatic or a.formal_charge != 0:
            continue
        nbrs = g.neighbors[i]
        if not nbrs or any(g.bond_between(i, nb).order != BondOrder.SINGLE for nb in nbrs):
            continue
        if any(atoms[nb].element != "C" or atoms[nb].aromatic for nb in nbrs):
            continue
        if any(_has_multiple_bond(g, nb) for nb in nbrs):
            continue
        charge[i], h[i] = 1, h[i] + 1

    flags: list[set[str]] = [set() for _ in atoms]
    for i, a in enumerate(atoms):
        if charge[i] > 0:
            flags[i].add("positive")
        elif charge[i] < 0:
            flags[i].add("negative")
        if a.element not in ("N", "O"):
            continue
        donor = h[i] >= 1
        if a.element == "O":
            acceptor = charge[i] <= 0
        elif charge[i] > 0:
            acceptor = False
        elif a.aromatic:
            acceptor = h[i] == 0 and g.degree(i) == 2
        else:
            amide_like = any(_has_multiple_bond(g, nb, ("O", "S")) for nb in g.neighbors[i])
            aniline_like = not _has_multiple_bond(g, i) and any(atoms[nb].aromatic for nb in g.neighbors[i])
            acceptor = not amide_like and not aniline_like
        if donor and acceptor:
            flags[i].add("flip_flop")
        elif donor:
            flags[i].add("donor")
        elif acceptor:
            flags[i].add("acceptor")

    def thioether(i: int) -> bool:
        a = atoms[i]
        return (
            a.element == "S"
            and not a.aromatic
            and charge[i] == 0
            and g.degree(i) == 2
            and all(atoms[nb].element == "C" for nb in g.neighbors[i])
            and all(g.bond_between(i, nb).order == BondOrder.SINGLE for nb in g.neighbors[i])
        )

    for i in range(len(atoms)):
        if thioether(i):
            flags[i].add("hydrophobic")

    ring_atoms = g.ring_atoms

    def endcap_atom(i: int) -> bool:
        if i in ring_atoms:
            return False
        if atoms[i].element == "C":
            return not flags[i]
        return thioether(i)

    comp_size = {}
    for comp in connected_components(g.n_atoms, g.neighbors):
        for a in comp:
            comp_size[a] = len(comp)

    candidates: list[frozenset[int]] = []
    for b in g.bonds:
        if g.is_ring_bond(b.begin, b.end):
            continue
        for root, anchor in ((b.end, b.begin), (b.begin, b.end)):
            side = _bounded_side(g, root, anchor, limit=3)
            if side is None:
                continue
            if len(side) >= comp_size[root] - len(side):
                continue
            if all(endcap_atom(x) for x in side):
                candidates.append(frozenset(side))
    endcaps: list[frozenset[int]] = []
    used: set[int] = set()
    for cand in sorted(set(candidates), key=lambda s: (-len(s), min(s))):
        if cand & used:
            continue
        endcaps.append(cand)
        used |= cand
    for cap in endcaps:
        for x in cap:
            flags[x].add("hydrophobic")
    return AtomProperties(charge, h, flags, sorted(endcaps, key=min))


def _bounded_side(g: MolecularGraph, root: int, anchor: int, limit: int) -> set[int] | None:
    """Atoms reachable from ``root`` without crossing ``anchor``; None if > limit."""
    seen = {root}
    queue = deque([root])
    while queue:
        x = queue.popleft()
        for y in g.neighbors[x]:
            if y == anchor and x == root:
                continue
            if y == anchor:
                return None  # the bond is on a cycle through anchor
            if y not in seen:
                seen.add(y)
                if len(seen) > limit:
                    return None
                queue.append(y)
    return seen


def build_erg(g: MolecularGraph) -> tuple[ReducedGraph, Correspondence]:
    """Extended reduced graph: pharmacophore-tagged atoms plus ring centroids.

    Ring atoms survive only if they are substituted, bridgeheads, or carry a
    property; removed ring atoms map to their ring centroid so every atom
    keeps at least one corresponding node.
    """
    props = assign_erg_properties(g)
    rings = [frozenset(r) for r in g.relevant_rings]
    rings_of: list[list[int]] = [[] for _ in g.atoms]
    for ri, r in enumerate(rings):
        for a in r:
            rings_of[a].append(ri)

    retained: dict[int, bool] = {}
    for a in range(g.n_atoms):
        if not rings_of[a]:
            retained[a] = True
            continue
        own = set().union(*(rings[ri] for ri in rings_of[a]))
        substituted = any(nb not in own for nb in g.neighbors[a])
        retained[a] = len(rings_of[a]) >= 2 or substituted or bool(props.flags[a])

    cap_of = {x: cap for cap in props.endcaps for x in cap}
    node_atoms: list[frozenset[int]] = []
    node_flags: list[frozenset[str]] = []
    node_of: dict[int, int] = {}
    for a in range(g.n_atoms):
        if not retained[a] or a in node_of:
            continue
        group = cap_of.get(a, frozenset({a}))
        idx = len(node_atoms)
        node_atoms.append(group)
        node_flags.append(frozenset(set().union(*(props.flags[x] for x in group))))
        for x in group:
            node_of[x] = idx

    edges: set[tuple[int, int]] = set()
    for b in g.bonds:
        if b.begin in node_of and b.end in node_of:
            u, v = node_of[b.begin], node_of[b.end]
            if u != v:
                edges.add((min(u, v), max(u, v)))
    for ri, r in enumerate(rings):
        idx = len(node_atoms)
        node_atoms.append(r)
        aromatic = all(g.atoms[a].aromatic for a in r)
        node_flags.append(
            frozenset({"aromatic", "ring_aromatic"} if aromatic else {"hydrophobic", "ring_aliphatic"})
        )
        for a in sorted(r):
            if retained[a]:
                edges.add((node_of[a], idx))

    nodes = tuple(ReducedNode(atoms, erg_features=flags) for atoms, flags in zip(node_atoms, node_flags))
    erg = ReducedGraph(ERG, nodes, tuple(sorted(edges)), g.n_atoms)
    return erg, Correspondence.from_atom_sets(g.n_atoms, erg.atom_sets)


# --------------------------------------------------------------------------
# ECFP
# --------------------------------------------------------------------------

ECFP_HASH_VERSION = b"ximp-ecfp-v1"
ECFP_RADII = (2, 3, 4)
ECFP_WIDTHS = (16, 32, 1024, 2048)


def _hash64(values) -> int:
    payload = struct.pack(f"<{len(values)}q", *values)
    digest = hashlib.blake2b(payload, digest_size=8, person=ECFP_HASH_VERSION.ljust(16, b"\0")).digest()
    # keep identifiers in the signed 64-bit range so they can be re-packed
    return int.from_bytes(digest, "little") & ((1 << 63) - 1)


@dataclass(frozen=True, eq=False)
class Fingerprint:
    bits: np.ndarray = field(repr=False)
    n_bits: int
    radius: int
    identifiers: frozenset[int] = field(repr=False)

    @property
    def on_bits(self) -> frozenset[int]:
        return frozenset(int(i) for i in np.flatnonzero(self.bits))

    @property
    def popcount(self) -> int:
        return int(self.bits.sum())


def ecfp_identifiers(g: MolecularGraph, radius: int) -> set[int]:
    """Morgan identifiers of every atom at every iteration 0..radius."""
    ring_atoms = g.ring_atoms
    ids = [
        _hash64(
            (
                ELEMENTS.index(a.element),
                g.degree(i),
                a.formal_charge,
                a.implicit_h_count,
                int(i in ring_atoms),
                int(a.aromatic),
            )
        )
        for i, a in enumerate(g.atoms)
    ]
    found = set(ids)
    for r in range(1, radius + 1):
        new = []
        for i in range(g.n_atoms):
            env = sorted((int(g.bond_between(i, j).order), ids[j]) for j in g.neighbors[i])
            new.append(_hash64((r, ids[i], *[x for pair in env for x in pair])))
        ids = new
        found.update(ids)
    return found


def ecfp(g: MolecularGraph, radius: int = 2, n_bits: int = 2048) -> Fingerprint:
    if radius not in ECFP_RADII:
        raise InvalidRadius(f"radius must be one of {ECFP_RADII}, got {radius!r}")
    if n_bits not in ECFP_WIDTHS:
        raise InvalidWidth(f"n_bits must be one of {ECFP_WIDTHS}, got {n_bits!r}")
    idents = ecfp_identifiers(g, radius)
    bits = np.zeros(n_bits, dtype=bool)
    for ident in idents:
        bits[ident % n_bits] = True
    return Fingerprint(bits, n_bits, radius, frozenset(idents))


# --------------------------------------------------------------------------
# scaffolds
# --------------------------------------------------------------------------


def murcko_scaffold(g: MolecularGraph) -> str:
    """Canonical key of the ring-system scaffold; "" for acyclic molecules.

    Non-ring atoms of degree <= 1 are stripped until nothing changes, which
    keeps ring systems and the linkers between them. The key combines the
    sorted (element, degree, in-ring) atom triples with a digest of the bond
    multiset (endpoint triples, bond order, ring-bond flag). Equal keys do not
    prove isomorphism; this is a grouping key.
    """
    if not g.rings:
        return ""
    ring_atoms = g.ring_atoms
    alive = set(range(g.n_atoms))
    deg = {i: g.degree(i) for i in alive}
    stack = [i for i in alive if deg[i] <= 1 and i not in ring_atoms]
    while stack:
        x = stack.pop()
        if x not in alive:
            continue
        alive.discard(x)
        for y in g.neighbors[x]:
            if y in alive:
                deg[y] -= 1
                if deg[y] <= 1 and y not in ring_atoms:
                    stack.append(y)

    def triple(i: int) -> tuple[str, int, int]:
        return (g.atoms[i].element, deg[i], int(i in ring_atoms))

    atoms = sorted(triple(i) for i in alive)
    edges = sorted(
        (*sorted((triple(b.begin), triple(b.end))), int(b.order), int(g.is_ring_bond(b.begin, b.end)))
        for b in g.bonds
        if b.begin in alive and b.end in alive
    )
    atom_part = ".".join(f"{e}{d}{'R' if r else 'A'}" for e, d, r in atoms)
    edge_digest = hashlib.sha256(repr(edges).encode()).hexdigest()[:16]
    return f"{atom_part}|{edge_digest}"
