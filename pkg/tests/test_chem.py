from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ximp.chem import BondOrder, cycle_rank, parse_smiles, perceive_sssr
from ximp.errors import (
    UnbalancedParenthesis,
    UnbalancedRingClosure,
    UnknownElement,
    UnsupportedFeature,
    ValenceViolation,
)
from ximp.rng import Rng
from ximp.synthetic import random_smiles

DECALIN = "C1CCC2CCCCC2C1"
BICYCLOPENTYL = "C1CCC(C1)C1CCCC1"


class TestParseExamples:
    def test_methane(self):
        g = parse_smiles("C")
        assert g.n_atoms == 1 and len(g.bonds) == 0
        assert g.atoms[0].element == "C" and g.atoms[0].implicit_h_count == 4

    def test_3_hydroxypyridine(self):
        g = parse_smiles("Oc1cnccc1")
        assert g.n_atoms == 7 and len(g.bonds) == 7
        elements = Counter((a.element, a.aromatic) for a in g.atoms)
        assert elements == {("O", False): 1, ("C", True): 5, ("N", True): 1}
        assert [len(r) for r in g.rings] == [6]

    def test_decalin(self):
        g = parse_smiles(DECALIN)
        assert g.n_atoms == 10 and len(g.bonds) == 11
        a, b = (set(r) for r in g.rings)
        assert len(a) == len(b) == 6
        assert len(a & b) == 2  # the shared edge
        assert g.bond_between(*sorted(a & b)) is not None

    def test_atom_order_follows_tokens(self):
        g = parse_smiles("OCN")
        assert [a.element for a in g.atoms] == ["O", "C", "N"]
        assert [a.index for a in g.atoms] == [0, 1, 2]

    def test_aromatic_bonds_only_inside_rings(self):
        g = parse_smiles("c1ccccc1-c1ccccc1")
        link = g.bond_between(5, 6)
        assert link.order == BondOrder.SINGLE
        assert g.bond_between(0, 1).order == BondOrder.AROMATIC

    def test_bracket_atoms(self):
        g = parse_smiles("C[NH3+]")
        assert g.atoms[1].formal_charge == 1 and g.atoms[1].implicit_h_count == 3
        g = parse_smiles("CC(=O)[O-]")
        assert g.atoms[3].formal_charge == -1 and g.atoms[3].implicit_h_count == 0

    def test_pyrrole_nh(self):
        g = parse_smiles("c1cc[nH]c1")
        assert g.atoms[3].implicit_h_count == 1

    def test_percent_ring_label(self):
        assert len(parse_smiles("C%10CCCC%10").rings) == 1

    def test_fragments(self):
        g = parse_smiles("CCO.O")
        assert g.n_components() == 2

    def test_double_and_triple_bonds(self):
        g = parse_smiles("C=CC#N")
        assert [a.implicit_h_count for a in g.atoms] == [2, 1, 0, 0]


class TestParseErrors:
    @pytest.mark.parametrize("text", ["C[C@H](N)O", "F/C=C/F", "[13CH4]", "[CH3:1]C"])
    def test_stereo_isotope_class(self, text):
        with pytest.raises(UnsupportedFeature):
            parse_smiles(text)

    @pytest.mark.parametrize("text", ["C1CC", "C1CC2CC1"])
    def test_open_ring(self, text):
        with pytest.raises(UnbalancedRingClosure):
            parse_smiles(text)

    @pytest.mark.parametrize("text", ["CC(C", "CC)C"])
    def test_parentheses(self, text):
        with pytest.raises(UnbalancedParenthesis):
            parse_smiles(text)

    @pytest.mark.parametrize("text", ["[Na+].[Cl-]", "[Si]", "X"])
    def test_unknown_element(self, text):
        with pytest.raises(UnknownElement):
            parse_smiles(text)

    @pytest.mark.parametrize("text", ["C(C)(C)(C)(C)C", "O=O=O", "FC(F)(F)(F)F"])
    def test_valence(self, text):
        with pytest.raises(ValenceViolation):
            parse_smiles(text)

    def test_empty(self):
        with pytest.raises(ValueError):
            parse_smiles("")


class TestRings:
    def test_propane_acyclic(self):
        assert perceive_sssr(parse_smiles("CCC")) == []

    def test_benzene(self):
        assert perceive_sssr(parse_smiles("c1ccccc1")) == [frozenset(range(6))]

    def test_bicyclopentyl_disjoint_rings(self):
        rings = perceive_sssr(parse_smiles(BICYCLOPENTYL))
        assert [len(r) for r in rings] == [5, 5]
        assert not rings[0] & rings[1]

    def test_rings_are_simple_cycles(self, corpus):
        for g in corpus:
            for ring in g.rings:
                sub = {a: [b for b in g.neighbors[a] if b in ring] for a in ring}
                assert all(len(v) >= 2 for v in sub.values())
                # walk the cycle: every atom visited once and back to start
                start = min(ring)
                seen, prev, cur = [start], None, start
                while True:
                    nxt = [b for b in sub[cur] if b != prev and (b not in seen or (b == start and len(seen) == len(ring)))]
                    if not nxt:
                        break
                    prev, cur = cur, nxt[0]
                    if cur == start:
                        break
                    seen.append(cur)
                assert cur == start and len(seen) == len(ring)

    def test_sssr_count_equals_cycle_rank(self, corpus):
        for g in corpus:
            assert len(perceive_sssr(g)) == cycle_rank(g)

    def test_deterministic(self):
        g = parse_smiles(DECALIN)
        assert perceive_sssr(g) == perceive_sssr(parse_smiles(DECALIN))


class TestRelevantRings:
    @pytest.mark.parametrize(
        "smiles,sizes",
        [
            ("CCO", []),
            ("c1ccc2ccccc2c1", [6, 6]),
            ("C1CC2CCC1C2", [5, 5]),  # norbornane: the six-ring is a sum of the two five-rings
            ("C1C2CC1C2", [4, 4, 4]),  # bicyclo[1.1.1]pentane: three equivalent bases
            ("C12C3C4C1C5C2C3C45", [4] * 6),  # cubane: all six faces
        ],
    )
    def test_examples(self, smiles, sizes):
        assert sorted(len(r) for r in parse_smiles(smiles).relevant_rings) == sizes

    def test_contains_sssr(self, corpus):
        for g in corpus:
            relevant = {frozenset(r) for r in g.relevant_rings}
            assert len(relevant) >= cycle_rank(g)
            # every minimum cycle basis, the SSSR included, is drawn from the relevant cycles
            assert all(frozenset(r) in relevant for r in g.rings)

    @given(st.integers(0, 2**32 - 1))
    def test_independent_of_atom_order(self, seed):
        rng = Rng(seed)
        g = parse_smiles(random_smiles(rng, 6))
        order = rng.permutation(g.n_atoms)
        p = g.permute([int(i) for i in order])
        mapped = sorted(tuple(sorted(int(order[i]) for i in r)) for r in p.relevant_rings)
        assert mapped == sorted(g.relevant_rings)


class TestGraphInvariants:
    def test_adjacency_symmetric_zero_diagonal(self, corpus):
        for g in corpus[:50]:
            a = g.adjacency
            assert np.array_equal(a, a.T) and not a.diagonal().any()

    def test_degree_sum(self, corpus):
        for g in corpus:
            assert sum(g.degree(i) for i in range(g.n_atoms)) == 2 * len(g.bonds)

    def test_no_duplicate_bonds(self, corpus):
        for g in corpus:
            pairs = [tuple(sorted((b.begin, b.end))) for b in g.bonds]
            assert len(pairs) == len(set(pairs)) and all(u != v for u, v in pairs)

    def test_decalin_bicyclopentyl_degree_multisets(self):
        for s in (DECALIN, BICYCLOPENTYL):
            g = parse_smiles(s)
            assert g.n_atoms == 10 and len(g.bonds) == 11
            assert Counter(g.degree(i) for i in range(10)) == {3: 2, 2: 8}

    @given(st.integers(0, 2**32))
    def test_parse_twice_identical(self, seed):
        text = random_smiles(Rng(seed))
        assert parse_smiles(text) == parse_smiles(text)

    @given(st.integers(0, 2**32))
    def test_hydrogens_fill_default_valence(self, seed):
        g = parse_smiles(random_smiles(Rng(seed)))
        for i, a in enumerate(g.atoms):
            if a.aromatic or a.formal_charge:
                continue
            bond_sum = sum(g.bond_between(i, j).order.valence_contribution for j in g.neighbors[i])
            assert bond_sum + a.implicit_h_count in {"B": (3,), "C": (4,), "N": (3, 5), "O": (2,), "S": (2, 4, 6)}.get(
                a.element, (1,)
            )
