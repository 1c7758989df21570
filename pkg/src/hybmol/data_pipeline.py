"""Filtering, augmentation, and batch assembly for training records.

Augmentation re-serializes the ligand SMILES in a seeded random atom order
(permuting the coordinates to match), recenters both pocket and ligand on
the ligand centroid, applies a seeded uniform 3D rotation, and re-encodes.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
import torch

from . import hybrid_seq, smiles_kit
from .hybrid_seq import DEFAULT_SCALE, PAD_ID, HybridSequence, Vocab
from .struct_io import LigandStruct, ProteinPocket

ALLOWED_ELEMENTS = frozenset({"H", "B", "C", "N", "O", "F", "P", "S", "Cl", "Br", "I"})


class DataPipelineError(ValueError):
    pass


class EmptyLigand(DataPipelineError):
    def __init__(self) -> None:
        super().__init__("ligand has no atoms")


class RecordTooLong(DataPipelineError):
    def __init__(self, index: int, length: int, max_len: int):
        self.index = index
        super().__init__(f"record {index} has {length} elements (max {max_len})")


@dataclass
class AugmentConfig:
    scale: float = DEFAULT_SCALE
    rotate: bool = True
    randomize_smiles: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.scale <= 0:
            raise DataPipelineError("scale must be positive")


def mix_seed(*parts: int | str) -> int:
    """Stable 63-bit seed derived from the given parts.

    Used to give every (record, epoch, purpose) its own stream so results do
    not depend on worker scheduling.
    """
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        h.update(str(part).encode())
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little") >> 1


def filter_rare_elements(ligand: LigandStruct) -> bool:
    """True iff every ligand atom is a common organic element."""
    try:
        graph = smiles_kit.parse(ligand.smiles)
    except smiles_kit.SmilesError:
        return False
    return all(a.element in ALLOWED_ELEMENTS for a in graph.atoms)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation matrix (orthonormal, det +1) via quaternions."""
    u1, u2, u3 = rng.random(3)
    q = np.array(
        [
            np.sqrt(1.0 - u1) * np.sin(2.0 * np.pi * u2),
            np.sqrt(1.0 - u1) * np.cos(2.0 * np.pi * u2),
            np.sqrt(u1) * np.sin(2.0 * np.pi * u3),
            np.sqrt(u1) * np.cos(2.0 * np.pi * u3),
        ]
    )
    x, y, z, w = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def center_and_rotate(
    pocket_coords: list | np.ndarray,
    ligand_coords: list | np.ndarray,
    seed: int,
    rotate: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Subtract the ligand centroid from everything, then rotate rigidly.

    The same transform applies to pocket and ligand, so all interatomic
    distances are preserved; the output ligand centroid is the origin.
    """
    ligand = np.asarray(ligand_coords, dtype=np.float64)
    if ligand.size == 0:
        raise EmptyLigand()
    pocket = np.asarray(pocket_coords, dtype=np.float64).reshape(-1, 3)
    center = ligand.mean(axis=0)
    pocket = pocket - center
    ligand = ligand - center
    if rotate:
        rot = random_rotation(np.random.default_rng(seed))
        pocket = pocket @ rot.T
        ligand = ligand @ rot.T
    return pocket, ligand


def augment_record(
    pocket: ProteinPocket,
    ligand: LigandStruct,
    vocab: Vocab,
    cfg: AugmentConfig,
    record_index: int = 0,
) -> HybridSequence:
    """Randomize, recenter/rotate, and encode one complex."""
    smiles = ligand.smiles
    coords = list(ligand.coords)
    if cfg.randomize_smiles:
        graph = smiles_kit.parse(smiles)
        smiles, order = smiles_kit.write_random_smiles(
            graph, mix_seed(cfg.seed, record_index, "smiles")
        )
        coords = [ligand.coords[i] for i in order]
    pkt, lig = center_and_rotate(
        [a.coord for a in pocket.atoms],
        coords,
        mix_seed(cfg.seed, record_index, "rotation"),
        rotate=cfg.rotate,
    )
    moved_pocket = ProteinPocket(
        [
            type(a)(a.token, a.residue_name, a.residue_seq, tuple(c))
            for a, c in zip(pocket.atoms, pkt)
        ],
        pocket.source_id,
    )
    moved_ligand = LigandStruct(smiles, [tuple(c) for c in lig])
    return hybrid_seq.encode_complex(moved_pocket, moved_ligand, vocab, cfg.scale)


@dataclass
class Batch:
    token_ids: torch.Tensor  # long [B, L]; PAD at continuous and padding slots
    coords: torch.Tensor  # float [B, L, 3]; zeros at discrete slots
    continuous: torch.Tensor  # bool [B, L]
    loss_mask: torch.Tensor  # bool [B, L]; true exactly on ligand spans
    lengths: torch.Tensor  # long [B]
    ligand_start: torch.Tensor  # long [B]

    @property
    def size(self) -> tuple[int, int]:
        return self.token_ids.shape[0], self.token_ids.shape[1]

    def to(self, dtype: torch.dtype) -> "Batch":
        return Batch(
            self.token_ids,
            self.coords.to(dtype),
            self.continuous,
            self.loss_mask,
            self.lengths,
            self.ligand_start,
        )


def make_batch(
    records: list[HybridSequence],
    max_len: int = 1024,
    dtype: torch.dtype = torch.float32,
) -> Batch:
    """Right-pad records into tensors with ligand-span loss masks."""
    if not records:
        raise DataPipelineError("empty batch")
    for i, seq in enumerate(records):
        if len(seq) > max_len:
            raise RecordTooLong(i, len(seq), max_len)
    width = max(len(seq) for seq in records)
    n = len(records)
    token_ids = torch.full((n, width), PAD_ID, dtype=torch.long)
    coords = torch.zeros((n, width, 3), dtype=dtype)
    continuous = torch.zeros((n, width), dtype=torch.bool)
    loss_mask = torch.zeros((n, width), dtype=torch.bool)
    lengths = torch.zeros(n, dtype=torch.long)
    ligand_start = torch.zeros(n, dtype=torch.long)
    for i, seq in enumerate(records):
        lengths[i] = len(seq)
        ligand_start[i] = seq.ligand_start
        for p, el in enumerate(seq.elements):
            if el.is_discrete:
                token_ids[i, p] = el.token_id
            else:
                continuous[i, p] = True
                coords[i, p] = torch.tensor(el.coord, dtype=dtype)
            if p >= seq.ligand_start:
                loss_mask[i, p] = True
    return Batch(token_ids, coords, continuous, loss_mask, lengths, ligand_start)
