"""Structure I/O: PDB pocket reader and the paired SMILES+coordinates format.

The pocket reader consumes only fixed-column ATOM records (hydrogens
dropped, alpha carbons tokenized as "CA").  Ligands travel in a two-part
text record: a SMILES line followed by one "x y z" line per atom token.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import smiles_kit

Coord = tuple[float, float, float]


class StructIOError(ValueError):
    pass


class MalformedLine(StructIOError):
    def __init__(self, line_no: int, line: str):
        self.line_no = line_no
        self.line = line
        super().__init__(f"unparseable ATOM record at line {line_no}: {line!r}")


class EmptyPocket(StructIOError):
    def __init__(self) -> None:
        super().__init__("no pocket atoms survive hydrogen filtering")


class CountMismatch(StructIOError):
    def __init__(self, expected: int, got: int):
        self.expected = expected
        self.got = got
        super().__init__(f"expected {expected} coordinate lines, got {got}")


class BadNumber(StructIOError):
    def __init__(self, line_no: int, line: str):
        self.line_no = line_no
        self.line = line
        super().__init__(f"bad coordinate triple at line {line_no}: {line!r}")


@dataclass(frozen=True)
class PocketAtom:
    token: str
    residue_name: str
    residue_seq: int
    coord: Coord


@dataclass
class ProteinPocket:
    atoms: list[PocketAtom]
    source_id: str = ""

    def coords(self) -> list[Coord]:
        return [a.coord for a in self.atoms]

    def centroid(self) -> Coord:
        n = len(self.atoms)
        sx = sum(a.coord[0] for a in self.atoms)
        sy = sum(a.coord[1] for a in self.atoms)
        sz = sum(a.coord[2] for a in self.atoms)
        return (sx / n, sy / n, sz / n)


@dataclass
class LigandStruct:
    smiles: str
    coords: list[Coord]

    def __post_init__(self) -> None:
        expected = smiles_kit.atom_count(self.smiles)
        if len(self.coords) != expected:
            raise CountMismatch(expected, len(self.coords))


# Two-letter elements that can occur in ATOM-record atom names.
_TWO_LETTER_ELEMENTS = frozenset(
    {"CL", "BR", "SE", "FE", "ZN", "MG", "MN", "NA", "CU", "NI", "CO", "CD", "HG"}
)


def _element_of_atom_name(name: str, element_col: str) -> str:
    if element_col:
        return element_col.upper()
    stripped = name.strip().lstrip("0123456789")
    if stripped[:2].upper() in _TWO_LETTER_ELEMENTS:
        return stripped[:2].upper()
    for ch in stripped:
        if ch.isalpha():
            return ch.upper()
    return stripped[:1].upper()


def parse_pocket_pdb(text: str, source_id: str = "") -> ProteinPocket:
    """Extract pocket atoms from PDB text.

    Reads only ATOM records (HETATM, TER, CONECT ignored); keeps file order;
    drops hydrogens; alpha carbons keep the token "CA", everything else is
    tokenized by element symbol.
    """
    atoms: list[PocketAtom] = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.startswith("ATOM"):
            continue
        if len(line) < 54:
            raise MalformedLine(line_no, line)
        try:
            name = line[12:16].strip()
            residue_name = line[17:20].strip()
            residue_seq = int(line[22:26])
            coord = (float(line[30:38]), float(line[38:46]), float(line[46:54]))
        except ValueError as exc:
            raise MalformedLine(line_no, line) from exc
        if not name:
            raise MalformedLine(line_no, line)
        element_col = line[76:78].strip() if len(line) >= 78 else ""
        element = _element_of_atom_name(name, element_col)
        if element == "H":
            continue
        token = "CA" if name == "CA" else element
        atoms.append(PocketAtom(token, residue_name, residue_seq, coord))
    if not atoms:
        raise EmptyPocket()
    return ProteinPocket(atoms, source_id)


def parse_ligand_record(text: str) -> LigandStruct:
    """Parse the paired format: SMILES line, then one "x y z" line per atom."""
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise BadNumber(1, lines[0] if lines else "")
    smiles = lines[0].strip()
    expected = smiles_kit.atom_count(smiles)
    coords: list[Coord] = []
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3:
            raise BadNumber(line_no, line)
        try:
            coords.append((float(parts[0]), float(parts[1]), float(parts[2])))
        except ValueError as exc:
            raise BadNumber(line_no, line) from exc
    if len(coords) != expected:
        raise CountMismatch(expected, len(coords))
    return LigandStruct(smiles, coords)


def write_ligand(graph: smiles_kit.MolGraph, coords: list[Coord]) -> str:
    """Serialize a molecule to the paired format with a canonical SMILES.

    Coordinates are reordered to follow the canonical atom-token order, so
    the record round-trips through parse_ligand_record with each atom keeping
    its own coordinate.
    """
    if len(coords) != len(graph.atoms):
        raise CountMismatch(len(graph.atoms), len(coords))
    smiles, order = smiles_kit.canonical_order(graph)
    lines = [smiles]
    for original_index in order:
        x, y, z = coords[original_index]
        lines.append(f"{x:.3f} {y:.3f} {z:.3f}")
    return "\n".join(lines)
