"""Atom-level SMILES tokenizer, parser, randomized writer, and canonicalizer.

Supported subset: organic-subset atoms B C N O P S F Cl Br I, aromatic
b c n o s p, bracket atoms with optional H-count and charge, bonds - = # :,
branches, and ring closures including %NN.  Stereochemistry, isotopes,
wildcards, and dot-disconnections are rejected rather than silently dropped.
"""

from __future__ import annotations

import enum
import random
import re
from dataclasses import dataclass, field


class SmilesError(ValueError):
    """Base class for all SMILES tokenizer/parser errors."""


class UnbalancedBracket(SmilesError):
    def __init__(self, position: int):
        self.position = position
        super().__init__(f"unbalanced bracket at position {position}")


class IllegalCharacter(SmilesError):
    def __init__(self, position: int, char: str):
        self.position = position
        self.char = char
        super().__init__(f"illegal character {char!r} at position {position}")


class UnclosedRing(SmilesError):
    def __init__(self, digit: str):
        self.digit = digit
        super().__init__(f"ring closure {digit!r} never closed")


class UnclosedBranch(SmilesError):
    def __init__(self, message: str = "unbalanced branch parentheses"):
        super().__init__(message)


class ValenceConflict(SmilesError):
    pass


class UnsupportedFeature(SmilesError):
    def __init__(self, feature: str):
        self.feature = feature
        super().__init__(f"unsupported SMILES feature: {feature}")


class TokenKind(enum.Enum):
    ATOM = "atom"
    RING_DIGIT = "ring_digit"
    SYMBOL = "symbol"


@dataclass(frozen=True)
class SmilesToken:
    text: str
    kind: TokenKind


ORGANIC_ATOMS = frozenset("B C N O P S F I".split()) | {"Cl", "Br"}
AROMATIC_ATOMS = frozenset("b c n o s p".split())
BOND_CHARS = "-=#:"
# Symbols accepted textually by the tokenizer; the parser rejects the
# unsupported ones (stereo, wildcard, dot) with UnsupportedFeature.
SYMBOL_CHARS = "()" + BOND_CHARS + "./\\@*"


def tokenize(smiles: str) -> list[SmilesToken]:
    """Split a SMILES string into atom-level tokens.

    Bracket expressions and the two-letter elements Cl/Br are single Atom
    tokens; ring-closure digits (and %NN) are RingDigit; everything else is
    a one-character Symbol.  Token texts concatenate back to the input.
    """
    tokens: list[SmilesToken] = []
    i = 0
    n = len(smiles)
    while i < n:
        c = smiles[i]
        if c == "[":
            end = smiles.find("]", i + 1)
            if end < 0:
                raise UnbalancedBracket(i)
            tokens.append(SmilesToken(smiles[i : end + 1], TokenKind.ATOM))
            i = end + 1
        elif c == "]":
            raise UnbalancedBracket(i)
        elif smiles[i : i + 2] in ("Cl", "Br"):
            tokens.append(SmilesToken(smiles[i : i + 2], TokenKind.ATOM))
            i += 2
        elif c in ORGANIC_ATOMS or c in AROMATIC_ATOMS:
            tokens.append(SmilesToken(c, TokenKind.ATOM))
            i += 1
        elif c == "%":
            if i + 2 >= n or not smiles[i + 1 : i + 3].isdigit():
                raise IllegalCharacter(i, c)
            tokens.append(SmilesToken(smiles[i : i + 3], TokenKind.RING_DIGIT))
            i += 3
        elif c.isdigit():
            tokens.append(SmilesToken(c, TokenKind.RING_DIGIT))
            i += 1
        elif c in SYMBOL_CHARS:
            tokens.append(SmilesToken(c, TokenKind.SYMBOL))
            i += 1
        else:
            raise IllegalCharacter(i, c)
    return tokens


def detokenize(tokens: list[SmilesToken]) -> str:
    return "".join(t.text for t in tokens)


class BondOrder(enum.Enum):
    SINGLE = 1
    DOUBLE = 2
    TRIPLE = 3
    AROMATIC = 4

    @property
    def numeric(self) -> float:
        return 1.5 if self is BondOrder.AROMATIC else float(self.value)


_BOND_OF_CHAR = {
    "-": BondOrder.SINGLE,
    "=": BondOrder.DOUBLE,
    "#": BondOrder.TRIPLE,
    ":": BondOrder.AROMATIC,
}
_CHAR_OF_BOND = {v: k for k, v in _BOND_OF_CHAR.items()}


@dataclass
class Atom:
    element: str
    aromatic: bool = False
    charge: int = 0
    h_count: int | None = None  # None = implicit (bare organic-subset atom)


@dataclass
class Bond:
    a: int
    b: int
    order: BondOrder


@dataclass
class MolGraph:
    atoms: list[Atom] = field(default_factory=list)
    bonds: list[Bond] = field(default_factory=list)

    def add_bond(self, a: int, b: int, order: BondOrder) -> None:
        if a == b:
            raise ValenceConflict(f"bond from atom {a} to itself")
        key = (min(a, b), max(a, b))
        for bond in self.bonds:
            if (min(bond.a, bond.b), max(bond.a, bond.b)) == key:
                raise ValenceConflict(f"duplicate bond between atoms {a} and {b}")
        self.bonds.append(Bond(a, b, order))

    def neighbors(self, i: int) -> list[tuple[int, Bond]]:
        out = []
        for bond in self.bonds:
            if bond.a == i:
                out.append((bond.b, bond))
            elif bond.b == i:
                out.append((bond.a, bond))
        return out

    def degree(self, i: int) -> int:
        return len(self.neighbors(i))


_BRACKET_BODY_RE = re.compile(
    r"^(?P<elem>[A-Z][a-z]?|[a-z])(?P<h>H\d*)?(?P<charge>\+\+|--|[+-]\d?)?$"
)


def _parse_bracket_atom(text: str) -> Atom:
    body = text[1:-1]
    if not body:
        raise IllegalCharacter(0, "[")
    if body[0].isdigit():
        raise UnsupportedFeature(f"isotope in {text}")
    if "@" in body:
        raise UnsupportedFeature(f"stereochemistry in {text}")
    if ":" in body:
        raise UnsupportedFeature(f"atom class in {text}")
    m = _BRACKET_BODY_RE.match(body)
    if m is None:
        raise UnsupportedFeature(f"bracket atom {text}")
    elem = m.group("elem")
    aromatic = elem[0].islower()
    if aromatic:
        if elem not in AROMATIC_ATOMS:
            raise UnsupportedFeature(f"aromatic element {elem!r} in {text}")
        elem = elem.upper()
    h_text = m.group("h")
    if h_text is None:
        h_count = 0  # bracket atom without H means exactly zero hydrogens
    elif h_text == "H":
        h_count = 1
    else:
        h_count = int(h_text[1:])
    charge_text = m.group("charge")
    if charge_text is None:
        charge = 0
    elif charge_text in ("+", "-"):
        charge = 1 if charge_text == "+" else -1
    elif charge_text in ("++", "--"):
        charge = 2 if charge_text == "++" else -2
    else:
        charge = int(charge_text[1:]) * (1 if charge_text[0] == "+" else -1)
    return Atom(element=elem, aromatic=aromatic, charge=charge, h_count=h_count)


def _atom_from_token(text: str) -> Atom:
    if text.startswith("["):
        return _parse_bracket_atom(text)
    if text in ORGANIC_ATOMS:
        return Atom(element=text)
    if text in AROMATIC_ATOMS:
        return Atom(element=text.upper(), aromatic=True)
    raise IllegalCharacter(0, text)


def _implicit_order(a: Atom, b: Atom) -> BondOrder:
    if a.aromatic and b.aromatic:
        return BondOrder.AROMATIC
    return BondOrder.SINGLE


def parse(smiles: str) -> MolGraph:
    """Parse a subset SMILES string to a molecular graph.

    Ring-closure bonds are resolved, aromatic atoms flagged, and implicit
    single bonds materialized (implicit bonds between two aromatic atoms
    become aromatic).  Unsupported features raise rather than being dropped.
    """
    graph = MolGraph()
    prev: int | None = None
    pending_bond: BondOrder | None = None
    branch_stack: list[int] = []
    open_rings: dict[str, tuple[int, BondOrder | None]] = {}

    for tok in tokenize(smiles):
        if tok.kind is TokenKind.ATOM:
            idx = len(graph.atoms)
            atom = _atom_from_token(tok.text)
            graph.atoms.append(atom)
            if prev is not None:
                order = pending_bond or _implicit_order(graph.atoms[prev], atom)
                graph.add_bond(prev, idx, order)
            pending_bond = None
            prev = idx
        elif tok.kind is TokenKind.RING_DIGIT:
            if prev is None:
                raise UnclosedRing(tok.text)
            if tok.text in open_rings:
                other, open_bond = open_rings.pop(tok.text)
                if open_bond is not None and pending_bond is not None and open_bond != pending_bond:
                    raise ValenceConflict(
                        f"conflicting bond orders on ring closure {tok.text}"
                    )
                order = (
                    open_bond
                    or pending_bond
                    or _implicit_order(graph.atoms[other], graph.atoms[prev])
                )
                graph.add_bond(other, prev, order)
            else:
                open_rings[tok.text] = (prev, pending_bond)
            pending_bond = None
        elif tok.text == "(":
            if prev is None:
                raise UnclosedBranch("branch opened before any atom")
            branch_stack.append(prev)
        elif tok.text == ")":
            if not branch_stack:
                raise UnclosedBranch()
            prev = branch_stack.pop()
        elif tok.text in _BOND_OF_CHAR:
            if pending_bond is not None:
                raise ValenceConflict("two bond symbols in a row")
            if prev is None:
                raise ValenceConflict("bond symbol before any atom")
            pending_bond = _BOND_OF_CHAR[tok.text]
        else:
            raise UnsupportedFeature(f"{tok.text!r}")

    if branch_stack:
        raise UnclosedBranch()
    if open_rings:
        raise UnclosedRing(sorted(open_rings)[0])
    if pending_bond is not None:
        raise ValenceConflict("dangling bond symbol at end of string")
    if not graph.atoms:
        raise ValenceConflict("no atoms in SMILES")
    return graph


def atom_count(smiles: str) -> int:
    """Number of atom-level Atom tokens in a SMILES string."""
    return sum(1 for t in tokenize(smiles) if t.kind is TokenKind.ATOM)


# ---------------------------------------------------------------------------
# Writing


def _render_atom(atom: Atom) -> str:
    symbol = atom.element.lower() if atom.aromatic else atom.element
    bare_ok = (
        atom.charge == 0
        and atom.h_count is None
        and (
            (not atom.aromatic and atom.element in ORGANIC_ATOMS)
            or (atom.aromatic and symbol in AROMATIC_ATOMS)
        )
    )
    if bare_ok:
        return symbol
    h = ""
    if atom.h_count:
        h = "H" if atom.h_count == 1 else f"H{atom.h_count}"
    if atom.charge == 0:
        q = ""
    elif abs(atom.charge) == 1:
        q = "+" if atom.charge > 0 else "-"
    else:
        q = f"{'+' if atom.charge > 0 else '-'}{abs(atom.charge)}"
    return f"[{symbol}{h}{q}]"


def _bond_text(order: BondOrder, a: Atom, b: Atom) -> str:
    if order is BondOrder.SINGLE:
        # explicit '-' needed between two aromatic atoms, else implicit
        return "-" if (a.aromatic and b.aromatic) else ""
    if order is BondOrder.AROMATIC:
        return "" if (a.aromatic and b.aromatic) else ":"
    return _CHAR_OF_BOND[order]


def _ring_digit_text(d: int) -> str:
    return str(d) if d <= 9 else f"%{d:02d}"


def _emit_smiles(graph: MolGraph, start: int, neighbor_order) -> tuple[str, list[int]]:
    """DFS emitter shared by the random and canonical writers.

    neighbor_order(atom_idx, candidates) returns the visiting order for the
    unvisited neighbors of atom_idx.  Returns the SMILES text and the list of
    original atom indices in emitted atom-token order.
    """
    n = len(graph.atoms)
    visited = [False] * n
    preorder: list[int] = []
    children: dict[int, list[tuple[int, Bond]]] = {i: [] for i in range(n)}
    closures: list[tuple[int, int, Bond]] = []  # (earlier atom, later atom, bond)
    seen_bonds: set[int] = set()

    def dfs(node: int) -> None:
        # Neighbor decisions are made at visit time: a sibling reached first
        # through a cycle must become a ring closure, not a second tree edge.
        visited[node] = True
        preorder.append(node)
        nbrs = graph.neighbors(node)
        bond_of = {nb: bond for nb, bond in nbrs}
        for nb in neighbor_order(node, [nb for nb, _ in nbrs]):
            bond = bond_of[nb]
            bid = id(bond)
            if bid in seen_bonds:
                continue
            seen_bonds.add(bid)
            if visited[nb]:
                closures.append((nb, node, bond))
            else:
                children[node].append((nb, bond))
                dfs(nb)

    dfs(start)
    if len(preorder) != n:
        raise ValenceConflict("graph is not connected")

    # Ring digit assignment: open at the earlier (preorder) endpoint, close at
    # the later one, reusing digits after closure.
    pos = {a: k for k, a in enumerate(preorder)}
    ring_open: dict[int, list[tuple[int, Bond, bool]]] = {i: [] for i in range(n)}
    ring_events: list[tuple[int, int, int, Bond]] = []
    for u, v, bond in closures:
        first, second = (u, v) if pos[u] < pos[v] else (v, u)
        ring_events.append((pos[first], pos[second], 0, bond))
    ring_events.sort(key=lambda e: (e[0], e[1]))
    free_digits = list(range(1, 100))
    in_use: list[tuple[int, int]] = []  # (close position, digit)
    assigned: list[tuple[int, int, int, Bond]] = []
    for open_pos, close_pos, _, bond in ring_events:
        in_use = [(c, d) for c, d in in_use if c > open_pos]
        used = {d for _, d in in_use}
        digit = next(d for d in free_digits if d not in used)
        in_use.append((close_pos, digit))
        assigned.append((open_pos, close_pos, digit, bond))
    for open_pos, close_pos, digit, bond in assigned:
        u = preorder[open_pos]
        v = preorder[close_pos]
        ring_open[u].append((digit, bond, True))
        ring_open[v].append((digit, bond, False))

    def emit(node: int) -> str:
        parts = [_render_atom(graph.atoms[node])]
        for digit, bond, is_open in ring_open[node]:
            other = bond.b if bond.a == node else bond.a
            if is_open:
                parts.append(_bond_text(bond.order, graph.atoms[node], graph.atoms[other]))
            parts.append(_ring_digit_text(digit))
        kids = children[node]
        for k, (nb, bond) in enumerate(kids):
            btxt = _bond_text(bond.order, graph.atoms[node], graph.atoms[nb])
            sub = btxt + emit(nb)
            if k < len(kids) - 1:
                parts.append("(" + sub + ")")
            else:
                parts.append(sub)
        return "".join(parts)

    return emit(start), preorder


def write_random_smiles(graph: MolGraph, seed: int) -> tuple[str, list[int]]:
    """Serialize a graph as SMILES with a seeded random traversal.

    Returns (smiles, atom_order) where atom_order[k] is the original atom
    index of the k-th atom token in the output; the caller uses it to permute
    per-atom data (for example coordinates) into the new token order.
    """
    rng = random.Random(seed)
    start = rng.randrange(len(graph.atoms))

    def order(_node: int, candidates: list[int]) -> list[int]:
        out = list(candidates)
        rng.shuffle(out)
        return out

    return _emit_smiles(graph, start, order)


def _initial_invariants(graph: MolGraph) -> list[tuple]:
    return [
        (a.element, a.aromatic, a.charge, -1 if a.h_count is None else a.h_count, graph.degree(i))
        for i, a in enumerate(graph.atoms)
    ]


def morgan_ranks(graph: MolGraph) -> list[int]:
    """Canonical atom ranks by iterative neighborhood refinement."""
    invariants = _initial_invariants(graph)
    order = {inv: r for r, inv in enumerate(sorted(set(invariants)))}
    ranks = [order[inv] for inv in invariants]
    for _ in range(len(graph.atoms)):
        signatures = []
        for i in range(len(graph.atoms)):
            nbr = sorted((b.order.value, ranks[j]) for j, b in graph.neighbors(i))
            signatures.append((ranks[i], tuple(nbr)))
        order = {sig: r for r, sig in enumerate(sorted(set(signatures)))}
        new_ranks = [order[sig] for sig in signatures]
        if new_ranks == ranks:
            break
        ranks = new_ranks
    return ranks


def canonical_order(graph: MolGraph) -> tuple[str, list[int]]:
    """Canonical SMILES plus the emitted atom order.

    Atoms are ranked by iterative neighborhood refinement; remaining ties are
    broken by smallest index, which is stable across the relabelings produced
    by write_random_smiles for molecule-like graphs.
    """
    ranks = morgan_ranks(graph)
    start = min(range(len(graph.atoms)), key=lambda i: (ranks[i], i))

    def order(_node: int, candidates: list[int]) -> list[int]:
        return sorted(candidates, key=lambda j: (ranks[j], j))

    return _emit_smiles(graph, start, order)


def canonical_form(graph: MolGraph) -> str:
    """Deterministic string equal across isomorphic relabelings of a graph."""
    return canonical_order(graph)[0]
