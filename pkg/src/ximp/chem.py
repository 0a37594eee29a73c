"""SMILES subset parser, molecular graph container, and SSSR ring perception.

Supported syntax: organic-subset atoms (B C N O P S F Cl Br I and aromatic
b c n o p s), bracket atoms with explicit H count and charge, ring closures
``1``-``9`` and ``%nn``, branches, bond symbols ``- = # :`` and ``.`` for
disconnected fragments. Stereo marks, isotopes, atom classes and any element
outside the subset are rejected with a typed error instead of being skipped.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ximp.errors import (
    SmilesError,
    UnbalancedParenthesis,
    UnbalancedRingClosure,
    UnknownElement,
    UnsupportedFeature,
    ValenceViolation,
)

ELEMENTS = ("B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I")
HALOGENS = frozenset({"F", "Cl", "Br", "I"})
AROMATIC_ELEMENTS = {"b": "B", "c": "C", "n": "N", "o": "O", "p": "P", "s": "S"}

# lowest entry is the default valence; higher entries only kick in when the
# explicit bond-order sum already exceeds the default
_VALENCES = {
    "B": (3,),
    "C": (4,),
    "N": (3, 5),
    "O": (2,),
    "P": (3, 5),
    "S": (2, 4, 6),
    "F": (1,),
    "Cl": (1,),
    "Br": (1,),
    "I": (1,),
}

# two-letter symbols needed to tell e.g. [Co] or [Na] apart from C / N
_PERIODIC = frozenset(
    "H He Li Be B C N O F Ne Na Mg Al Si P S Cl Ar K Ca Sc Ti V Cr Mn Fe Co Ni Cu Zn "
    "Ga Ge As Se Br Kr Rb Sr Y Zr Nb Mo Tc Ru Rh Pd Ag Cd In Sn Sb Te I Xe Cs Ba La "
    "Ce Pr Nd Pm Sm Eu Gd Tb Dy Ho Er Tm Yb Lu Hf Ta W Re Os Ir Pt Au Hg Tl Pb Bi Po "
    "At Rn Fr Ra Ac Th Pa U Np Pu Am Cm Bk Cf Es Fm Md No Lr".split()
)


class BondOrder(enum.IntEnum):
    SINGLE = 1
    DOUBLE = 2
    TRIPLE = 3
    AROMATIC = 4

    @property
    def valence_contribution(self) -> int:
        return 1 if self is BondOrder.AROMATIC else int(self)


_BOND_SYMBOLS = {
    "-": BondOrder.SINGLE,
    "=": BondOrder.DOUBLE,
    "#": BondOrder.TRIPLE,
    ":": BondOrder.AROMATIC,
}


@dataclass(frozen=True)
class Atom:
    element: str
    formal_charge: int = 0
    aromatic: bool = False
    implicit_h_count: int = 0
    index: int = 0


@dataclass(frozen=True)
class Bond:
    begin: int
    end: int
    order: BondOrder = BondOrder.SINGLE

    @property
    def endpoints(self) -> tuple[int, int]:
        return (self.begin, self.end)


@dataclass(frozen=True)
class MolecularGraph:
    """Atoms, bonds and SSSR rings of one (possibly disconnected) molecule."""

    atoms: tuple[Atom, ...]
    bonds: tuple[Bond, ...]
    rings: tuple[tuple[int, ...], ...] = ()
    smiles: str = ""

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    @property
    def ring_systems(self) -> tuple[tuple[int, ...], ...]:
        return self.rings

    @cached_property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        nbrs: list[list[int]] = [[] for _ in self.atoms]
        for b in self.bonds:
            nbrs[b.begin].append(b.end)
            nbrs[b.end].append(b.begin)
        return tuple(tuple(sorted(n)) for n in nbrs)

    @cached_property
    def bond_index(self) -> dict[tuple[int, int], int]:
        return {_key(b.begin, b.end): i for i, b in enumerate(self.bonds)}

    def bond_between(self, u: int, v: int) -> Bond | None:
        i = self.bond_index.get(_key(u, v))
        return None if i is None else self.bonds[i]

    def degree(self, atom: int) -> int:
        return len(self.neighbors[atom])

    @property
    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n_atoms, self.n_atoms), dtype=np.int64)
        for b in self.bonds:
            a[b.begin, b.end] = a[b.end, b.begin] = 1
        return a

    @cached_property
    def ring_atoms(self) -> frozenset[int]:
        return frozenset(i for ring in self.rings for i in ring)

    @cached_property
    def ring_bonds(self) -> frozenset[tuple[int, int]]:
        out = set()
        for ring in self.rings:
            members = set(ring)
            for u in ring:
                for v in self.neighbors[u]:
                    if v in members:
                        out.add(_key(u, v))
        # a bond inside a ring's atom set is not necessarily a ring edge for
        # chords, so keep only bonds that close a cycle
        return frozenset(k for k in out if not _is_bridge(self, *k))

    def is_ring_bond(self, u: int, v: int) -> bool:
        return _key(u, v) in self.ring_bonds

    def n_components(self) -> int:
        return len(connected_components(self.n_atoms, self.neighbors))

    @cached_property
    def relevant_rings(self) -> tuple[tuple[int, ...], ...]:
        """Union of all minimum cycle bases; independent of atom numbering."""
        return tuple(tuple(sorted(r)) for r in relevant_cycles(self))

    def permute(self, order: list[int]) -> "MolecularGraph":
        """Relabel atoms so that new atom ``j`` is old atom ``order[j]``."""
        if sorted(order) != list(range(self.n_atoms)):
            raise ValueError("order must be a permutation of atom indices")
        new_of = {old: new for new, old in enumerate(order)}
        atoms = tuple(
            Atom(a.element, a.formal_charge, a.aromatic, a.implicit_h_count, j)
            for j, a in enumerate(self.atoms[i] for i in order)
        )
        bonds = tuple(Bond(new_of[b.begin], new_of[b.end], b.order) for b in self.bonds)
        g = MolecularGraph(atoms, bonds, (), self.smiles)
        return MolecularGraph(atoms, bonds, tuple(tuple(sorted(r)) for r in perceive_sssr(g)), self.smiles)


def _key(u: int, v: int) -> tuple[int, int]:
    return (u, v) if u < v else (v, u)


def _is_bridge(g: MolecularGraph, u: int, v: int) -> bool:
    seen = {u}
    queue = deque([u])
    while queue:
        x = queue.popleft()
        for y in g.neighbors[x]:
            if x == u and y == v:
                continue
            if y == v:
                return False
            if y not in seen:
                seen.add(y)
                queue.append(y)
    return True


def connected_components(n: int, neighbors) -> list[list[int]]:
    seen = [False] * n
    comps = []
    for s in range(n):
        if seen[s]:
            continue
        seen[s] = True
        comp = [s]
        queue = deque([s])
        while queue:
            x = queue.popleft()
            for y in neighbors[x]:
                if not seen[y]:
                    seen[y] = True
                    comp.append(y)
                    queue.append(y)
        comps.append(sorted(comp))
    return comps


# --------------------------------------------------------------------------
# SSSR
# --------------------------------------------------------------------------


def cycle_rank(g: MolecularGraph) -> int:
    return len(g.bonds) - g.n_atoms + g.n_components()


def _two_core(n: int, neighbors) -> set[int]:
    deg = [len(neighbors[i]) for i in range(n)]
    alive = [True] * n
    stack = [i for i in range(n) if deg[i] <= 1]
    while stack:
        x = stack.pop()
        if not alive[x]:
            continue
        alive[x] = False
        for y in neighbors[x]:
            if alive[y]:
                deg[y] -= 1
                if deg[y] <= 1:
                    stack.append(y)
    return {i for i in range(n) if alive[i]}


def perceive_sssr(g: MolecularGraph) -> list[frozenset[int]]:
    """Smallest set of smallest rings as a minimum cycle basis.

    Candidates are Horton cycles (shortest-path tree from every ring vertex
    closed by one extra edge). They are scanned in order of
    ``(size, sorted atom tuple)`` and kept when independent over GF(2) until
    the cycle rank is reached.
    """
    rank = cycle_rank(g)
    if rank == 0:
        return []
    core = _two_core(g.n_atoms, g.neighbors)
    nbrs = {v: [w for w in g.neighbors[v] if w in core] for v in sorted(core)}
    edge_ids: dict[tuple[int, int], int] = {}
    for v in sorted(core):
        for w in nbrs[v]:
            if v < w:
                edge_ids[(v, w)] = len(edge_ids)

    candidates: dict[int, tuple] = {}
    for root in sorted(core):
        parent = {root: -1}
        dist = {root: 0}
        queue = deque([root])
        while queue:
            x = queue.popleft()
            for y in nbrs[x]:
                if y not in dist:
                    dist[y] = dist[x] + 1
                    parent[y] = x
                    queue.append(y)

        def path(x: int) -> list[int]:
            out = [x]
            while parent[out[-1]] != -1:
                out.append(parent[out[-1]])
            return out  # x ... root

        for (x, y), _ in edge_ids.items():
            if x not in dist or y not in dist:
                continue
            if parent[x] == y or parent[y] == x:
                continue
            px, py = path(x), path(y)
            if set(px) & set(py) != {root}:
                continue
            cycle = px[::-1] + py[:-1]  # root ... x, y ... (before root)
            mask = 0
            for a, b in zip(cycle, cycle[1:] + cycle[:1]):
                mask |= 1 << edge_ids[_key(a, b)]
            if mask not in candidates:
                candidates[mask] = (len(cycle), tuple(sorted(cycle)), mask)

    ordered = sorted(candidates.values(), key=lambda c: (c[0], c[1], c[2]))
    basis: dict[int, int] = {}
    rings: list[frozenset[int]] = []
    for _, atoms, mask in ordered:
        vec = mask
        while vec:
            top = vec.bit_length() - 1
            if top in basis:
                vec ^= basis[top]
            else:
                basis[top] = vec
                break
        if vec:
            rings.append(frozenset(atoms))
            if len(rings) == rank:
                break
    return rings


# past this many search steps the molecule counts as pathological and the SSSR is used
_CYCLE_SEARCH_BUDGET = 200_000


def relevant_cycles(g: MolecularGraph) -> list[frozenset[int]]:
    """Cycles that are not a GF(2) sum of strictly shorter cycles.

    Every minimum cycle basis is drawn from this set, so unlike a single SSSR
    it does not depend on how ties are broken; bicyclo[1.1.1]pentane yields
    all three four-membered rings. Simple cycles up to the largest SSSR ring
    size are enumerated directly, which is cheap for drug-like molecules.
    """
    sssr = [frozenset(r) for r in g.rings] if g.rings else perceive_sssr(g)
    if not sssr:
        return []
    max_len = max(len(r) for r in sssr)
    core = _two_core(g.n_atoms, g.neighbors)
    nbrs = {v: [w for w in g.neighbors[v] if w in core] for v in core}
    edge_ids = {}
    for v in sorted(core):
        for w in nbrs[v]:
            if v < w:
                edge_ids[(v, w)] = len(edge_ids)

    found: dict[int, tuple[int, ...]] = {}
    steps = 0
    for start in sorted(core):
        stack = [(start, (start,), 0)]
        while stack:
            x, path, mask = stack.pop()
            steps += 1
            if steps > _CYCLE_SEARCH_BUDGET:
                return sssr
            for y in nbrs[x]:
                bit = 1 << edge_ids[_key(x, y)]
                if y == start and len(path) >= 3:
                    found.setdefault(mask | bit, path)
                elif y > start and y not in path and len(path) < max_len:
                    stack.append((y, path + (y,), mask | bit))

    by_length: dict[int, list[tuple[int, tuple[int, ...]]]] = {}
    for mask, path in found.items():
        by_length.setdefault(len(path), []).append((mask, path))
    basis: dict[int, int] = {}

    def reduce(vec: int) -> int:
        while vec:
            top = vec.bit_length() - 1
            if top not in basis:
                return vec
            vec ^= basis[top]
        return 0

    relevant = []
    for length in sorted(by_length):
        cycles = by_length[length]
        relevant += [frozenset(path) for mask, path in cycles if reduce(mask)]
        for mask, _ in cycles:
            vec = reduce(mask)
            if vec:
                basis[vec.bit_length() - 1] = vec
    return sorted(relevant, key=lambda r: (len(r), sorted(r)))


# --------------------------------------------------------------------------
# SMILES parsing
# --------------------------------------------------------------------------


@dataclass
class _ProtoAtom:
    element: str
    aromatic: bool
    charge: int = 0
    explicit_h: int | None = None  # None for organic-subset atoms


def _allowed_valences(element: str, charge: int) -> tuple[int, ...]:
    base = _VALENCES[element]
    if charge == 0:
        return base
    if element == "B":
        shifted = [v - charge for v in base]
    elif element == "C":
        shifted = [v - abs(charge) for v in base]
    else:
        shifted = [v + charge for v in base]
    return tuple(v for v in shifted if v >= 0)


class _Parser:
    def __init__(self, text: str) -> None:
        self.text = text
        self.pos = 0
        self.atoms: list[_ProtoAtom] = []
        # (u, v, order or None if implicit)
        self.bonds: list[tuple[int, int, BondOrder | None]] = []
        self.pairs: set[tuple[int, int]] = set()

    def error(self, cls, msg: str):
        return cls(f"{msg} at position {self.pos} in {self.text!r}")

    def parse(self) -> None:
        text = self.text
        prev: int | None = None
        pending: BondOrder | None = None
        stack: list[int | None] = []
        open_rings: dict[int, tuple[int, BondOrder | None]] = {}
        while self.pos < len(text):
            ch = text[self.pos]
            if ch == "(":
                if prev is None:
                    raise self.error(UnbalancedParenthesis, "branch without preceding atom")
                stack.append(prev)
                self.pos += 1
            elif ch == ")":
                if not stack:
                    raise self.error(UnbalancedParenthesis, "unmatched ')'")
                if pending is not None:
                    raise self.error(SmilesError, "dangling bond before ')'")
                prev = stack.pop()
                self.pos += 1
            elif ch in _BOND_SYMBOLS:
                if pending is not None or prev is None:
                    raise self.error(SmilesError, "misplaced bond symbol")
                pending = _BOND_SYMBOLS[ch]
                self.pos += 1
            elif ch in "/\\":
                raise self.error(UnsupportedFeature, "directional bonds (stereo) not supported")
            elif ch == "$":
                raise self.error(UnsupportedFeature, "quadruple bonds not supported")
            elif ch == ".":
                if pending is not None or stack:
                    raise self.error(SmilesError, "'.' inside branch or after bond")
                prev = None
                self.pos += 1
            elif ch.isdigit() or ch == "%":
                if prev is None:
                    raise self.error(UnbalancedRingClosure, "ring closure without atom")
                number = self._ring_number()
                if number in open_rings:
                    other, order = open_rings.pop(number)
                    if pending is not None and order is not None and pending != order:
                        raise self.error(UnbalancedRingClosure, f"conflicting bonds on ring {number}")
                    self._add_bond(other, prev, pending if pending is not None else order)
                else:
                    open_rings[number] = (prev, pending)
                pending = None
            else:
                idx = self._atom()
                if prev is not None:
                    self._add_bond(prev, idx, pending)
                elif pending is not None:
                    raise self.error(SmilesError, "bond symbol without preceding atom")
                pending = None
                prev = idx
        if stack:
            raise self.error(UnbalancedParenthesis, "unclosed '('")
        if open_rings:
            raise self.error(UnbalancedRingClosure, f"unclosed ring bond(s) {sorted(open_rings)}")
        if pending is not None:
            raise self.error(SmilesError, "trailing bond symbol")
        if not self.atoms:
            raise self.error(SmilesError, "no atoms")

    def _ring_number(self) -> int:
        text = self.text
        if text[self.pos] == "%":
            digits = text[self.pos + 1 : self.pos + 3]
            if len(digits) != 2 or not digits.isdigit():
                raise self.error(UnbalancedRingClosure, "'%' must be followed by two digits")
            self.pos += 3
            return int(digits)
        self.pos += 1
        return int(text[self.pos - 1])

    def _add_bond(self, u: int, v: int, order: BondOrder | None) -> None:
        if u == v:
            raise self.error(UnbalancedRingClosure, "ring closure bonds an atom to itself")
        key = _key(u, v)
        if key in self.pairs:
            raise self.error(UnbalancedRingClosure, f"duplicate bond between atoms {u} and {v}")
        self.pairs.add(key)
        self.bonds.append((u, v, order))

    def _atom(self) -> int:
        text = self.text
        ch = text[self.pos]
        if ch == "[":
            atom = self._bracket_atom()
        elif text.startswith(("Cl", "Br"), self.pos):
            atom = _ProtoAtom(text[self.pos : self.pos + 2], False)
            self.pos += 2
        elif ch in "BCNOPSFI":
            atom = _ProtoAtom(ch, False)
            self.pos += 1
        elif ch in AROMATIC_ELEMENTS:
            atom = _ProtoAtom(AROMATIC_ELEMENTS[ch], True)
            self.pos += 1
        elif ch == "*":
            raise self.error(UnsupportedFeature, "wildcard atom not supported")
        elif ch.isalpha():
            raise self.error(UnknownElement, f"unknown element {ch!r}")
        else:
            raise self.error(SmilesError, f"unexpected character {ch!r}")
        self.atoms.append(atom)
        return len(self.atoms) - 1

    def _bracket_atom(self) -> _ProtoAtom:
        text = self.text
        end = text.find("]", self.pos)
        if end < 0:
            raise self.error(SmilesError, "unterminated bracket atom")
        body = text[self.pos + 1 : end]
        self.pos = end + 1
        i = 0
        if i < len(body) and body[i].isdigit():
            raise self.error(UnsupportedFeature, "isotopes not supported")
        if body[i : i + 2] in ("se", "as", "te"):
            raise self.error(UnknownElement, f"unknown element {body[i:i + 2]!r}")
        if i < len(body) and body[i] in AROMATIC_ELEMENTS:
            element, aromatic = AROMATIC_ELEMENTS[body[i]], True
            i += 1
        elif i < len(body) and body[i].isupper():
            if body[i : i + 2] in _PERIODIC and len(body[i : i + 2]) == 2:
                element = body[i : i + 2]
                i += 2
            else:
                element = body[i]
                i += 1
            aromatic = False
            if element not in _VALENCES:
                raise self.error(UnknownElement, f"unsupported element {element!r}")
        else:
            raise self.error(UnknownElement, f"bad bracket atom [{body}]")
        if i < len(body) and body[i] == "@":
            raise self.error(UnsupportedFeature, "chirality not supported")
        h = 0
        if i < len(body) and body[i] == "H":
            i += 1
            h = 1
            if i < len(body) and body[i].isdigit():
                h = int(body[i])
                i += 1
        charge = 0
        if i < len(body) and body[i] in "+-":
            sign = 1 if body[i] == "+" else -1
            j = i + 1
            if j < len(body) and body[j].isdigit():
                charge = sign * int(body[j])
                j += 1
            else:
                count = 1
                while j < len(body) and body[j] == body[i]:
                    count += 1
                    j += 1
                charge = sign * count
            i = j
        if i < len(body) and body[i] == ":":
            raise self.error(UnsupportedFeature, "atom classes not supported")
        if i < len(body) and body[i] == "@":
            raise self.error(UnsupportedFeature, "chirality not supported")
        if i != len(body):
            raise self.error(SmilesError, f"could not parse bracket atom [{body}]")
        if not -2 <= charge <= 2:
            raise self.error(UnsupportedFeature, f"charge {charge} outside [-2, 2]")
        return _ProtoAtom(element, aromatic, charge, h)


def parse_smiles(text: str) -> MolecularGraph:
    """Parse a SMILES string into a :class:`MolecularGraph`.

    Atom order follows token order. An implicit bond between two aromatic
    atoms becomes aromatic when it lies on a ring, otherwise single.

    Raises:
        UnsupportedFeature, UnbalancedRingClosure, UnbalancedParenthesis,
        UnknownElement, ValenceViolation, or SmilesError for other malformed input.
    """
    if not isinstance(text, str) or not text.strip():
        raise SmilesError("empty SMILES")
    text = text.strip()
    p = _Parser(text)
    p.parse()

    # topology first: ring bonds decide implicit aromatic bond orders
    n = len(p.atoms)
    skeleton = MolecularGraph(
        tuple(Atom(a.element, index=i) for i, a in enumerate(p.atoms)),
        tuple(Bond(u, v) for u, v, _ in p.bonds),
    )
    rings = perceive_sssr(skeleton)
    ring_tuples = tuple(tuple(sorted(r)) for r in rings)
    skeleton = MolecularGraph(skeleton.atoms, skeleton.bonds, ring_tuples)

    bonds = []
    for u, v, order in p.bonds:
        if order is None:
            if p.atoms[u].aromatic and p.atoms[v].aromatic and skeleton.is_ring_bond(u, v):
                order = BondOrder.AROMATIC
            else:
                order = BondOrder.SINGLE
        bonds.append(Bond(u, v, order))

    bond_sum = [0] * n
    for b in bonds:
        bond_sum[b.begin] += b.order.valence_contribution
        bond_sum[b.end] += b.order.valence_contribution

    atoms = []
    for i, a in enumerate(p.atoms):
        allowed = _allowed_valences(a.element, a.charge)
        s = bond_sum[i]
        if a.explicit_h is not None:
            h = a.explicit_h
            if not allowed or s + h > max(allowed):
                raise ValenceViolation(f"atom {i} ({a.element}) exceeds valence in {text!r}")
        elif a.aromatic:
            if s > max(allowed):
                raise ValenceViolation(f"atom {i} ({a.element}) exceeds valence in {text!r}")
            pi = 1 if a.element in ("B", "C", "N", "P") else 0
            h = max(0, allowed[0] - s - pi)
        else:
            fits = [v for v in allowed if v >= s]
            if not fits:
                raise ValenceViolation(f"atom {i} ({a.element}) exceeds valence in {text!r}")
            h = fits[0] - s
        atoms.append(Atom(a.element, a.charge, a.aromatic, h, i))
    return MolecularGraph(tuple(atoms), tuple(bonds), ring_tuples, text)
