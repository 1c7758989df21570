"""Deterministic desk-scale data: a generated SMILES corpus and small
synthetic pocket/ligand complexes for tests and demo runs."""

from __future__ import annotations

import math
import random
from pathlib import Path

from . import smiles_kit
from .smiles_kit import Atom, Bond, BondOrder, MolGraph
from .struct_io import Coord, LigandStruct, PocketAtom, ProteinPocket

# Well-known small molecules, spelled within the supported subset
# (no stereocenters, no isotopes).
CURATED_SMILES = [
    "CCO",
    "CC(=O)O",
    "CC(C)=O",
    "CSC",
    "CS(=O)C",
    "NC(N)=O",
    "NCC(=O)O",
    "CC(N)C(=O)O",
    "OP(=O)(O)O",
    "C1CC1",
    "C1CCOC1",
    "C1CCNCC1",
    "C1CNCCN1",
    "C1COCCN1",
    "C%12CCCCC%12",
    "c1ccccc1",
    "Cc1ccccc1",
    "Oc1ccccc1",
    "Nc1ccccc1",
    "Clc1ccccc1",
    "Brc1ccccc1",
    "FC(F)(F)c1ccccc1",
    "c1ccncc1",
    "c1cc[nH]c1",
    "c1c[nH]cn1",
    "c1ccoc1",
    "c1ccsc1",
    "c1ccc2ccccc2c1",
    "CC(=O)Oc1ccccc1C(=O)O",
    "CC(=O)Nc1ccc(O)cc1",
    "CC(C)Cc1ccc(cc1)C(C)C(=O)O",
    "Cn1cnc2c1c(=O)n(C)c(=O)n2C",
    "CN1CCCC1c1cccnc1",
    "O=[N+]([O-])c1ccccc1",
    "OC(=O)c1ccccc1",
    "NS(=O)(=O)c1ccc(N)cc1",
    "NC(=O)c1ccccc1",
    "C=Cc1ccccc1",
    "C=CC#N",
    "CC#C",
    "CC(=O)[O-]",
    "C[N+](C)(C)C",
    "NC(=[NH2+])N",
    "NCCc1c[nH]cn1",
    "OCC(O)C(O)C(O)C(O)CO",
    "O=C(O)CCC(=O)O",
    "CCOC(=O)C",
    "CNC(=O)N(C)C",
    "COc1ccc(CCN)cc1",
    "SCC(N)C(=O)O",
]

# Element pool for random molecules: (element, max bonds we will give it).
_ELEMENT_POOL = [
    ("C", 4)] * 12 + [
    ("N", 3)] * 3 + [
    ("O", 2)] * 3 + [
    ("S", 2),
    ("F", 1),
    ("Cl", 1),
    ("Br", 1),
    ("P", 3),
    ("I", 1),
]


def random_molecule(rng: random.Random) -> MolGraph:
    """Grow a random valence-respecting molecule (tree + rings + optional
    aromatic ring), guaranteed to serialize and reparse within the subset."""
    graph = MolGraph()
    budget: list[int] = []

    def add_atom(element: str, max_bonds: int, **kw) -> int:
        graph.atoms.append(Atom(element=element, **kw))
        budget.append(max_bonds)
        return len(graph.atoms) - 1

    def bond(a: int, b: int, order: BondOrder) -> None:
        used = 2 if order is BondOrder.DOUBLE else 3 if order is BondOrder.TRIPLE else 1
        graph.bonds.append(Bond(a, b, order))
        budget[a] -= used
        budget[b] -= used

    first = rng.choice(_ELEMENT_POOL)
    add_atom(first[0], first[1])
    n_heavy = rng.randint(3, 12)
    while len(graph.atoms) < n_heavy:
        element, cap = rng.choice(_ELEMENT_POOL)
        hosts = [i for i in range(len(graph.atoms)) if budget[i] >= 1]
        if not hosts:
            break
        host = rng.choice(hosts)
        order = BondOrder.SINGLE
        if cap >= 2 and budget[host] >= 2 and rng.random() < 0.15:
            order = BondOrder.DOUBLE
        if element in ("C", "N") and cap >= 3 and budget[host] >= 3 and rng.random() < 0.05:
            order = BondOrder.TRIPLE
        new = add_atom(element, cap)
        bond(host, new, order)

    # close up to two rings between compatible, non-adjacent atoms
    for _ in range(rng.randint(0, 2)):
        open_atoms = [i for i in range(len(graph.atoms)) if budget[i] >= 1]
        rng.shuffle(open_atoms)
        adjacent = {(min(b.a, b.b), max(b.a, b.b)) for b in graph.bonds}
        done = False
        for i in range(len(open_atoms)):
            for j in range(i + 1, len(open_atoms)):
                a, b = open_atoms[i], open_atoms[j]
                if (min(a, b), max(a, b)) not in adjacent:
                    bond(a, b, BondOrder.SINGLE)
                    done = True
                    break
            if done:
                break

    # optionally fuse on an aromatic six-ring (benzene or pyridine-like)
    if rng.random() < 0.5:
        hosts = [i for i in range(len(graph.atoms)) if budget[i] >= 1]
        if hosts:
            host = rng.choice(hosts)
            n_slot = rng.randrange(6) if rng.random() < 0.4 else -1
            ring = []
            for k in range(6):
                if k == n_slot:
                    ring.append(add_atom("N", 3, aromatic=True))
                else:
                    ring.append(add_atom("C", 4, aromatic=True))
            for k in range(6):
                bond(ring[k], ring[(k + 1) % 6], BondOrder.AROMATIC)
            for k in range(6):
                budget[ring[k]] -= 1  # two aromatic bonds cost 3 valence, not 2
            attach = ring[0] if n_slot != 0 else ring[1]
            bond(host, attach, BondOrder.SINGLE)

    # occasionally deprotonate a terminal single-bonded oxygen
    if rng.random() < 0.1:
        for i, atom in enumerate(graph.atoms):
            nbrs = graph.neighbors(i)
            if (
                atom.element == "O"
                and not atom.aromatic
                and len(nbrs) == 1
                and nbrs[0][1].order is BondOrder.SINGLE
            ):
                graph.atoms[i] = Atom("O", charge=-1, h_count=0)
                break
    return graph


def desk_corpus(n: int = 1000, seed: int = 7) -> list[str]:
    """Deterministic list of n subset SMILES strings (curated + generated)."""
    out = list(CURATED_SMILES[:n])
    rng = random.Random(seed)
    while len(out) < n:
        graph = random_molecule(rng)
        smiles, _ = smiles_kit.write_random_smiles(graph, rng.randrange(2**31))
        out.append(smiles)
    return out


# ---------------------------------------------------------------------------
# Toy complexes

_RESIDUES = ["ASP", "GLY", "LYS", "SER", "THR", "VAL", "ALA", "LEU", "PHE", "GLU"]
_BACKBONE = ["N", "CA", "C", "O"]

TOY_LIGANDS = [
    "CCO",
    "NCCN",
    "CC(=O)O",
    "c1ccncc1",
    "CNC",
    "CCCO",
    "NCC(=O)O",
    "CSC",
]


def _pocket_for(index: int, rng: random.Random, n_residues: int = 2) -> ProteinPocket:
    atoms: list[PocketAtom] = []
    for r in range(n_residues):
        res = _RESIDUES[(index + 3 * r) % len(_RESIDUES)]
        angle = 2.0 * math.pi * (index / 8.0 + r / n_residues)
        base = (7.0 * math.cos(angle), 7.0 * math.sin(angle), 1.5 * r - 1.0 + 0.3 * index)
        for k, name in enumerate(_BACKBONE):
            coord = (
                round(base[0] + 0.9 * k + rng.uniform(-0.2, 0.2), 3),
                round(base[1] + 0.5 * k + rng.uniform(-0.2, 0.2), 3),
                round(base[2] + 0.3 * k + rng.uniform(-0.2, 0.2), 3),
            )
            token = "CA" if name == "CA" else name[0]
            atoms.append(PocketAtom(token, res, r + 1, coord))
    return ProteinPocket(atoms, source_id=f"toy{index:02d}")


def _ligand_coords(smiles: str, rng: random.Random) -> list[Coord]:
    n = smiles_kit.atom_count(smiles)
    coords = []
    for i in range(n):
        coords.append(
            (
                round(1.4 * i + rng.uniform(-0.3, 0.3), 3),
                round(rng.uniform(-1.0, 1.0), 3),
                round(rng.uniform(-1.0, 1.0), 3),
            )
        )
    return coords


def toy_complexes(n: int = 8, seed: int = 3) -> list[tuple[ProteinPocket, LigandStruct]]:
    """n small, mutually distinguishable complexes (ligands cycle TOY_LIGANDS)."""
    rng = random.Random(seed)
    out = []
    for k in range(n):
        pocket = _pocket_for(k, rng)
        smiles = TOY_LIGANDS[k % len(TOY_LIGANDS)]
        out.append((pocket, LigandStruct(smiles, _ligand_coords(smiles, rng))))
    return out


def pocket_to_pdb(pocket: ProteinPocket) -> str:
    """Minimal fixed-column ATOM records for a toy pocket."""
    lines = []
    serial = 0
    for atom in pocket.atoms:
        serial += 1
        name = atom.token if atom.token == "CA" else atom.token[:1]
        name_field = f" {name:<3s}"
        x, y, z = atom.coord
        element = "C" if atom.token == "CA" else atom.token
        lines.append(
            f"ATOM  {serial:5d} {name_field}"
            f" {atom.residue_name:<3s} A{atom.residue_seq:4d}    "
            f"{x:8.3f}{y:8.3f}{z:8.3f}  1.00  0.00          {element:>2s}"
        )
    return "\n".join(lines) + "\n"


def ligand_to_record(ligand: LigandStruct) -> str:
    lines = [ligand.smiles]
    for x, y, z in ligand.coords:
        lines.append(f"{x:.3f} {y:.3f} {z:.3f}")
    return "\n".join(lines) + "\n"


def write_toy_dataset(
    directory: str | Path, n: int = 10, seed: int = 3, include_rare: bool = True
) -> list[str]:
    """Write paired .pdb/.lig files; optionally one ligand with a metal so
    the rare-element filter has something to drop."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    complexes = toy_complexes(n, seed)
    if include_rare and complexes:
        rng = random.Random(seed + 1)
        pocket, _ = complexes[-1]
        complexes[-1] = (pocket, LigandStruct("C[Fe]C", _ligand_coords("C[Fe]C", rng)))
    stems = []
    for k, (pocket, ligand) in enumerate(complexes):
        stem = f"complex_{k:02d}"
        (directory / f"{stem}.pdb").write_text(pocket_to_pdb(pocket))
        (directory / f"{stem}.lig").write_text(ligand_to_record(ligand))
        stems.append(stem)
    return stems
