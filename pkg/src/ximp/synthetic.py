"""Random valid SMILES and a synthetic regression set with a known target."""

from __future__ import annotations

from ximp.chem import MolecularGraph, parse_smiles
from ximp.reductions import assign_erg_properties
from ximp.rng import Rng

# Ring fragments; "{}" marks an optional substituent slot, "R1"/"R2" ring labels.
# Entry and exit atoms are CH carbons so the chain can continue from them.
_RINGS = (
    "cR1ccc{}ccR1",
    "cR1cc{}cc{}cR1",
    "cR1cncc{}cR1",
    "cR1ccnc{}cR1",
    "cR1cc{}ocR1",
    "cR1cc{}scR1",
    "cR1cc[nH]cR1",
    "CR1CCC{}CR1",
    "CR1CCC{}CCR1",
    "CR1CCNC{}CR1",
    "CR1CCOC{}CR1",
    "CR1CCCR2CCC{}CCR2CR1",  # decalin
    "cR1cccR2cc{}cccR2cR1",  # naphthalene
    "CR1C{}CR1",
    "CR1CR2CCR1CR2",  # bridged bicycle
)
_CHAIN_ATOMS = ("C", "C", "C", "N", "O", "S")
_TERMINALS = ("F", "Cl", "Br", "O", "N", "C#N", "C(=O)O", "C(=O)N")


class _Writer:
    def __init__(self, rng: Rng, max_units: int) -> None:
        self.rng = rng
        self.budget = max_units
        self.next_label = 1

    def _label(self) -> str:
        n = self.next_label
        self.next_label += 1
        return str(n) if n < 10 else f"%{n}"

    def _pick(self, options):
        return options[self.rng.randbelow(len(options))]

    def branch(self, depth: int) -> str:
        """A substituent; empty when the unit budget is spent."""
        if self.budget <= 0 or depth > 3 or self.rng.random() < 0.3:
            return ""
        return "(" + self.chain(depth + 1) + ")"

    def ring(self, depth: int) -> str:
        text = self._pick(_RINGS)
        for label in ("R1", "R2"):
            if label in text:
                text = text.replace(label, self._label())
        parts = text.split("{}")
        out = parts[0]
        for p in parts[1:]:
            out += self.branch(depth) + p
        return out

    def unit(self, depth: int) -> str:
        self.budget -= 1
        r = self.rng.random()
        if r < 0.35:
            return self.ring(depth)
        atom = self._pick(_CHAIN_ATOMS)
        if atom == "C" and self.rng.random() < 0.2:
            return "C(=O)"
        if atom in ("C", "N"):
            return atom + self.branch(depth)
        return atom

    def chain(self, depth: int = 0) -> str:
        out = self.unit(depth)
        while self.budget > 0 and self.rng.random() < 0.75:
            out += self.unit(depth)
        if self.rng.random() < 0.3:
            out += self._pick(_TERMINALS)
        return out


def random_smiles(rng: Rng, max_units: int = 6, allow_fragments: bool = False) -> str:
    """A random parseable SMILES built from chain atoms and ring fragments."""
    text = _Writer(rng, max_units).chain()
    if allow_fragments and rng.random() < 0.1:
        text += "." + _Writer(rng, 2).chain()
    return text


def random_molecules(
    n: int, seed: int, max_units: int = 6, max_atoms: int | None = None, allow_fragments: bool = False
) -> list[MolecularGraph]:
    """``n`` distinct random molecules, deterministic in ``seed``."""
    rng = Rng.derive(seed, 0x5EED)
    seen, out = set(), []
    attempts = 0
    while len(out) < n:
        attempts += 1
        if attempts > 200 * n:
            raise RuntimeError(f"could only generate {len(out)} of {n} molecules")
        smi = random_smiles(rng, max_units, allow_fragments)
        if smi in seen:
            continue
        g = parse_smiles(smi)
        if max_atoms is not None and g.n_atoms > max_atoms:
            continue
        seen.add(smi)
        out.append(g)
    return out


def donor_count(g: MolecularGraph) -> int:
    """Atoms flagged as hydrogen-bond donors (plain or flip-flop)."""
    props = assign_erg_properties(g)
    return sum(1 for f in props.flags if "donor" in f or "flip_flop" in f)


def synthetic_target(g: MolecularGraph) -> float:
    return len(g.rings) + 0.5 * donor_count(g)


def synthetic_records(n: int = 64, seed: int = 0, max_units: int = 3) -> list[tuple[str, float]]:
    """(smiles, ring_count + 0.5 * donor_count) pairs."""
    return [(g.smiles, synthetic_target(g)) for g in random_molecules(n, seed, max_units)]
