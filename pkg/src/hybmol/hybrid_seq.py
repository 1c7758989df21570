"""Hybrid discrete/continuous sequences for protein-ligand complexes.

Layout of an encoded complex::

    [P:tok coord] * n_pocket  BOS  smiles tokens...  EOS  BOC  coords...  EOC

Every continuous ligand element sits strictly after EOS, so the token part of
the ligand is always generated before any of its coordinates.
"""

from __future__ import annotations

import json
from functools import cached_property
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from . import smiles_kit
from .struct_io import Coord, LigandStruct, ProteinPocket

SPECIALS = ("PAD", "BOS", "EOS", "BOC", "EOC", "UNK")
PAD_ID, BOS_ID, EOS_ID, BOC_ID, EOC_ID, UNK_ID = range(6)

POCKET_PREFIX = "P:"

# Structural SMILES tokens are always in the vocabulary: a randomized
# re-serialization of a molecule may introduce branches, explicit bonds, or
# ring digits that its original spelling never used.
STRUCTURAL_TOKENS = ("(", ")", "-", "=", "#", ":") + tuple(str(d) for d in range(1, 10))

DEFAULT_SCALE = 5.0  # Angstrom per model unit


class HybridSeqError(ValueError):
    pass


class ParseError(HybridSeqError):
    def __init__(self, position: int, message: str):
        self.position = position
        super().__init__(f"record parse error at element {position}: {message}")


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.tokens[: len(SPECIALS)] != SPECIALS:
            raise HybridSeqError("vocabulary must start with the special tokens")
        if len(set(self.tokens)) != len(self.tokens):
            raise HybridSeqError("duplicate token in vocabulary")

    @cached_property
    def id_of(self) -> dict[str, int]:
        return {tok: i for i, tok in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, token: str) -> int:
        return self.id_of.get(token, UNK_ID)

    def decode(self, token_id: int) -> str:
        return self.tokens[token_id]

    @cached_property
    def atom_token_ids(self) -> frozenset[int]:
        """Ids of SMILES Atom tokens (pocket and structural tokens excluded)."""
        out = set()
        for i, tok in enumerate(self.tokens):
            if i < len(SPECIALS) or tok.startswith(POCKET_PREFIX) or tok in STRUCTURAL_TOKENS:
                continue
            try:
                parsed = smiles_kit.tokenize(tok)
            except smiles_kit.SmilesError:
                continue
            if len(parsed) == 1 and parsed[0].kind is smiles_kit.TokenKind.ATOM:
                out.add(i)
        return frozenset(out)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps({"tokens": list(self.tokens)}, indent=0) + "\n")

    @staticmethod
    def load(path: str | Path) -> "Vocab":
        data = json.loads(Path(path).read_text())
        return Vocab(tuple(data["tokens"]))


def build_vocab(corpus: Iterable[tuple[ProteinPocket, LigandStruct]]) -> Vocab:
    """Collect the token vocabulary from a corpus of complexes.

    Pocket tokens are namespaced with "P:" so a pocket carbon and a SMILES
    carbon get distinct ids.  Tokens of one canonical re-serialization per
    ligand are included so that randomized spellings stay in-vocabulary.
    """
    seen: set[str] = set()
    n_records = 0
    for pocket, ligand in corpus:
        n_records += 1
        for atom in pocket.atoms:
            seen.add(POCKET_PREFIX + atom.token)
        for tok in smiles_kit.tokenize(ligand.smiles):
            seen.add(tok.text)
        canonical, _ = smiles_kit.canonical_order(smiles_kit.parse(ligand.smiles))
        for tok in smiles_kit.tokenize(canonical):
            seen.add(tok.text)
    if n_records == 0:
        raise HybridSeqError("empty corpus")
    seen.update(STRUCTURAL_TOKENS)
    return Vocab(SPECIALS + tuple(sorted(seen)))


@dataclass(frozen=True)
class HybridElement:
    token_id: int | None = None
    coord: Coord | None = None

    def __post_init__(self) -> None:
        if (self.token_id is None) == (self.coord is None):
            raise HybridSeqError("element must be exactly one of discrete/continuous")

    @property
    def is_discrete(self) -> bool:
        return self.token_id is not None

    @property
    def is_continuous(self) -> bool:
        return self.coord is not None


def discrete(token_id: int) -> HybridElement:
    return HybridElement(token_id=token_id)


def continuous(coord: Coord) -> HybridElement:
    return HybridElement(coord=(float(coord[0]), float(coord[1]), float(coord[2])))


@dataclass
class HybridSequence:
    elements: list[HybridElement]
    ligand_start: int  # index of BOS
    atom_alignment: list[int]  # k-th ligand coord <- position of k-th atom token

    def __len__(self) -> int:
        return len(self.elements)


def encode_complex(
    pocket: ProteinPocket,
    ligand: LigandStruct,
    vocab: Vocab,
    scale: float = DEFAULT_SCALE,
) -> HybridSequence:
    """Encode a complex in the hybrid layout, dividing all coordinates by scale."""
    elements: list[HybridElement] = []
    for atom in pocket.atoms:
        elements.append(discrete(vocab.encode(POCKET_PREFIX + atom.token)))
        elements.append(continuous(_scaled(atom.coord, scale)))
    ligand_start = len(elements)
    elements.append(discrete(BOS_ID))
    tokens = smiles_kit.tokenize(ligand.smiles)
    atom_alignment = []
    for tok in tokens:
        if tok.kind is smiles_kit.TokenKind.ATOM:
            atom_alignment.append(len(elements))
        elements.append(discrete(vocab.encode(tok.text)))
    elements.append(discrete(EOS_ID))
    elements.append(discrete(BOC_ID))
    if len(atom_alignment) != len(ligand.coords):
        raise HybridSeqError(
            f"{len(ligand.coords)} coords for {len(atom_alignment)} atom tokens"
        )
    for coord in ligand.coords:
        elements.append(continuous(_scaled(coord, scale)))
    elements.append(discrete(EOC_ID))
    return HybridSequence(elements, ligand_start, atom_alignment)


def _scaled(coord: Coord, scale: float) -> Coord:
    return (coord[0] / scale, coord[1] / scale, coord[2] / scale)


@dataclass(frozen=True)
class Violation:
    kind: str
    position: int
    message: str


def validate(seq: HybridSequence) -> list[Violation]:
    """Return all layout violations (empty list for a well-formed sequence)."""
    out: list[Violation] = []
    els = seq.elements
    ls = seq.ligand_start

    if not 0 <= ls < len(els):
        return [Violation("BadLigandStart", ls, "ligand_start out of range")]
    if not (els[ls].is_discrete and els[ls].token_id == BOS_ID):
        out.append(Violation("BadLigandStart", ls, "ligand_start does not point at BOS"))

    if ls % 2 != 0:
        out.append(Violation("BadPocketBlock", ls, "pocket block has odd length"))
    for p in range(ls):
        want_discrete = p % 2 == 0
        if els[p].is_discrete != want_discrete:
            out.append(
                Violation(
                    "BadPocketBlock",
                    p,
                    "pocket block must alternate token, coordinate",
                )
            )
            break

    eos = next(
        (p for p in range(ls + 1, len(els)) if els[p].is_discrete and els[p].token_id == EOS_ID),
        None,
    )
    if eos is None:
        out.append(Violation("TruncatedLigandBlock", len(els) - 1, "missing EOS"))
        return out
    for p in range(ls + 1, eos):
        if not els[p].is_discrete:
            out.append(Violation("CoordBeforeEOS", p, "continuous element in SMILES span"))
    if eos + 1 >= len(els) or not (els[eos + 1].is_discrete and els[eos + 1].token_id == BOC_ID):
        out.append(Violation("TruncatedLigandBlock", eos + 1, "missing BOC after EOS"))
        return out
    if not (els[-1].is_discrete and els[-1].token_id == EOC_ID):
        out.append(Violation("TruncatedLigandBlock", len(els) - 1, "missing EOC"))
        return out
    coord_span = els[eos + 2 : len(els) - 1]
    for offset, el in enumerate(coord_span):
        if not el.is_continuous:
            out.append(
                Violation("BadCoordBlock", eos + 2 + offset, "discrete element inside coord block")
            )
    n_coords = sum(1 for el in coord_span if el.is_continuous)
    if n_coords != len(seq.atom_alignment):
        out.append(
            Violation(
                "CoordCountMismatch",
                eos + 2,
                f"{n_coords} coords for {len(seq.atom_alignment)} aligned atom tokens",
            )
        )
    prev = ls
    for k, pos in enumerate(seq.atom_alignment):
        if not ls < pos < eos:
            out.append(Violation("BadAlignment", pos, f"alignment {k} outside SMILES span"))
        elif pos <= prev and k > 0:
            out.append(Violation("BadAlignment", pos, "alignment not strictly increasing"))
        prev = pos
    return out


def serialize(seq: HybridSequence, vocab: Vocab) -> str:
    """One-line record: token texts and "<x,y,z>" coordinates, space-separated."""
    parts = []
    for el in seq.elements:
        if el.is_discrete:
            parts.append(vocab.decode(el.token_id))
        else:
            x, y, z = el.coord
            parts.append(f"<{x:.6g},{y:.6g},{z:.6g}>")
    return " ".join(parts)


def deserialize(line: str, vocab: Vocab) -> HybridSequence:
    """Inverse of serialize; recomputes ligand_start and atom_alignment."""
    id_of = vocab.id_of
    atom_ids = vocab.atom_token_ids
    elements: list[HybridElement] = []
    for position, part in enumerate(line.split()):
        if part.startswith("<"):
            if not part.endswith(">"):
                raise ParseError(position, f"unterminated coordinate {part!r}")
            fields = part[1:-1].split(",")
            if len(fields) != 3:
                raise ParseError(position, f"coordinate needs 3 components: {part!r}")
            try:
                elements.append(continuous((float(fields[0]), float(fields[1]), float(fields[2]))))
            except ValueError:
                raise ParseError(position, f"bad number in {part!r}") from None
        else:
            if part not in id_of:
                raise ParseError(position, f"unknown token {part!r}")
            elements.append(discrete(id_of[part]))
    ligand_start = next(
        (p for p, el in enumerate(elements) if el.is_discrete and el.token_id == BOS_ID),
        None,
    )
    if ligand_start is None:
        raise ParseError(len(elements), "record has no BOS")
    eos = next(
        (
            p
            for p in range(ligand_start + 1, len(elements))
            if elements[p].is_discrete and elements[p].token_id == EOS_ID
        ),
        len(elements),
    )
    atom_alignment = [
        p
        for p in range(ligand_start + 1, eos)
        if elements[p].is_discrete and elements[p].token_id in atom_ids
    ]
    return HybridSequence(elements, ligand_start, atom_alignment)


def decode_complex(
    seq: HybridSequence, vocab: Vocab, scale: float = DEFAULT_SCALE
) -> tuple[ProteinPocket, LigandStruct]:
    """Recover (pocket, ligand) from an encoded sequence, unscaling coords.

    Residue names/numbers are not stored in the sequence, so pocket atoms
    come back with placeholder residue metadata.
    """
    from .struct_io import PocketAtom  # runtime import only for reconstruction

    els = seq.elements
    atoms = []
    p = 0
    while p + 1 < seq.ligand_start:
        token = vocab.decode(els[p].token_id)
        x, y, z = els[p + 1].coord
        atoms.append(
            PocketAtom(
                token.removeprefix(POCKET_PREFIX),
                "UNK",
                len(atoms) + 1,
                (x * scale, y * scale, z * scale),
            )
        )
        p += 2
    eos = next(
        p
        for p in range(seq.ligand_start + 1, len(els))
        if els[p].is_discrete and els[p].token_id == EOS_ID
    )
    smiles = "".join(vocab.decode(els[p].token_id) for p in range(seq.ligand_start + 1, eos))
    coords = [
        (el.coord[0] * scale, el.coord[1] * scale, el.coord[2] * scale)
        for el in els[eos:]
        if el.is_continuous
    ]
    return ProteinPocket(atoms, ""), LigandStruct(smiles, coords)


def read_records(path: str | Path, vocab: Vocab) -> Iterator[HybridSequence]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield deserialize(line, vocab)


def write_records(path: str | Path, records: Iterable[HybridSequence], vocab: Vocab) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for seq in records:
            fh.write(serialize(seq, vocab) + "\n")
            n += 1
    return n
