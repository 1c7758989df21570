"""Inference: pocket prompt -> sampled SMILES tokens -> forced BOC ->
per-atom diffusion sampling -> assembled 3D ligand.

Within one ligand everything is sequential (each sampled element feeds back
into the context); across ligands generation is batched, with one RNG per
ligand so batched and one-at-a-time sampling produce identical results.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from . import smiles_kit
from .backbone import Backbone
from .data_pipeline import Batch, mix_seed
from .diffusion_head import DiffusionHead, NoiseSchedule, sample_coords_batch
from .hybrid_seq import (
    BOC_ID,
    BOS_ID,
    DEFAULT_SCALE,
    EOC_ID,
    EOS_ID,
    PAD_ID,
    UNK_ID,
    HybridElement,
    HybridSequence,
    Vocab,
    continuous,
    discrete,
)
from .struct_io import Coord, ProteinPocket

# Never produced by the token sampler; BOC/EOC are forced structurally.
MASKED_TOKEN_IDS = (PAD_ID, BOC_ID, EOC_ID, UNK_ID)


@dataclass
class SampleConfig:
    temperature: float = 1.0  # 0 means greedy
    top_k: int | None = None
    max_smiles_tokens: int = 128
    seed: int = 0

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.top_k is not None and self.top_k < 1:
            raise ValueError("top_k must be >= 1")


@dataclass
class TokenSample:
    ids: list[int]
    log_prob: float
    truncated: bool  # no EOS within the token budget


@dataclass
class GeneratedLigand:
    smiles: str
    coords: list[Coord]  # Angstrom, in the input pocket's frame
    token_log_prob: float
    diffusion_calls: int
    valid: bool  # sampled token string parses as a single molecule
    truncated: bool
    token_ids: list[int] = field(default_factory=list)
    context: HybridSequence | None = None


def pocket_prompt(
    pocket: ProteinPocket, vocab: Vocab, scale: float = DEFAULT_SCALE
) -> tuple[list[HybridElement], Coord]:
    """Pocket block centered on the pocket centroid, plus BOS.

    Returns the prompt elements and the centroid used, so generated ligand
    coordinates can be translated back into the input frame.
    """
    cx, cy, cz = pocket.centroid()
    elements: list[HybridElement] = []
    for atom in pocket.atoms:
        elements.append(discrete(vocab.encode("P:" + atom.token)))
        x, y, z = atom.coord
        elements.append(continuous(((x - cx) / scale, (y - cy) / scale, (z - cz) / scale)))
    elements.append(discrete(BOS_ID))
    return elements, (cx, cy, cz)


class _GenContexts:
    """Growing right-padded tensors for a batch of generation contexts."""

    def __init__(self, prompt: list[HybridElement], n_rows: int, capacity: int, dtype: torch.dtype):
        self.token_ids = torch.full((n_rows, capacity), PAD_ID, dtype=torch.long)
        self.coords = torch.zeros((n_rows, capacity, 3), dtype=dtype)
        self.continuous = torch.zeros((n_rows, capacity), dtype=torch.bool)
        self.lengths = [len(prompt)] * n_rows
        self.elements: list[list[HybridElement]] = [list(prompt) for _ in range(n_rows)]
        for p, el in enumerate(prompt):
            if el.is_discrete:
                self.token_ids[:, p] = el.token_id
            else:
                self.continuous[:, p] = True
                self.coords[:, p] = torch.tensor(el.coord, dtype=dtype)

    def append_discrete(self, row: int, token_id: int) -> None:
        p = self.lengths[row]
        self.token_ids[row, p] = token_id
        self.lengths[row] = p + 1
        self.elements[row].append(discrete(token_id))

    def append_continuous(self, row: int, coord: Coord) -> None:
        p = self.lengths[row]
        self.continuous[row, p] = True
        self.coords[row, p] = torch.tensor(coord, dtype=self.coords.dtype)
        self.lengths[row] = p + 1
        self.elements[row].append(continuous(coord))

    def hidden_at_tails(self, backbone: Backbone, rows: list[int]) -> torch.Tensor:
        """Condition vectors at each requested row's last real position."""
        width = max(self.lengths[r] for r in rows)
        idx = torch.tensor(rows)
        batch = Batch(
            token_ids=self.token_ids[idx, :width],
            coords=self.coords[idx, :width],
            continuous=self.continuous[idx, :width],
            loss_mask=torch.zeros((len(rows), width), dtype=torch.bool),
            lengths=torch.tensor([self.lengths[r] for r in rows]),
            ligand_start=torch.zeros(len(rows), dtype=torch.long),
        )
        hidden = backbone(batch)
        tails = torch.tensor([self.lengths[r] - 1 for r in rows])
        return hidden[torch.arange(len(rows)), tails]


def _pick_token(
    logits: torch.Tensor, cfg: SampleConfig, rng: torch.Generator
) -> tuple[int, float]:
    """Sample one token id; returns (id, raw log-probability of that id)."""
    raw_logp = torch.log_softmax(logits, dim=-1)
    masked = logits.clone()
    masked[list(MASKED_TOKEN_IDS)] = float("-inf")
    if cfg.temperature == 0.0 or cfg.top_k == 1:
        token_id = int(masked.argmax())
    else:
        scaled = masked / cfg.temperature
        if cfg.top_k is not None:
            kth = torch.topk(scaled, min(cfg.top_k, scaled.numel())).values[-1]
            scaled = scaled.masked_fill(scaled < kth, float("-inf"))
        probs = torch.softmax(scaled, dim=-1)
        token_id = int(torch.multinomial(probs, 1, generator=rng))
    return token_id, float(raw_logp[token_id])


def _generate_rows(
    pocket: ProteinPocket,
    backbone: Backbone,
    head: DiffusionHead,
    sched: NoiseSchedule,
    vocab: Vocab,
    cfg: SampleConfig,
    rngs: list[torch.Generator],
    scale: float,
) -> list[GeneratedLigand]:
    n = len(rngs)
    prompt, centroid = pocket_prompt(pocket, vocab, scale)
    capacity = len(prompt) + 2 * cfg.max_smiles_tokens + 3
    ctx = _GenContexts(prompt, n, capacity, backbone.dtype)
    atom_ids = vocab.atom_token_ids

    ids: list[list[int]] = [[] for _ in range(n)]
    log_probs = [0.0] * n
    live = list(range(n))
    with torch.no_grad():
        # token phase: sample until EOS or budget, per row
        for _ in range(cfg.max_smiles_tokens):
            if not live:
                break
            hidden = ctx.hidden_at_tails(backbone, live)
            logits = backbone.token_logits(hidden)
            next_live = []
            for j, row in enumerate(live):
                token_id, logp = _pick_token(logits[j], cfg, rngs[row])
                ids[row].append(token_id)
                log_probs[row] += logp
                ctx.append_discrete(row, token_id)
                if token_id != EOS_ID:
                    next_live.append(row)
            live = next_live
        truncated = [not ids[r] or ids[r][-1] != EOS_ID for r in range(n)]

        # BOC is forced, never sampled
        n_atoms = [sum(1 for i in ids[r] if i in atom_ids) for r in range(n)]
        for row in range(n):
            ctx.append_discrete(row, BOC_ID)
        for k in range(max(n_atoms, default=0)):
            rows = [r for r in range(n) if n_atoms[r] > k]
            if not rows:
                break
            z = ctx.hidden_at_tails(backbone, rows)
            coords = sample_coords_batch(z, sched, head, [rngs[r] for r in rows])
            for j, row in enumerate(rows):
                ctx.append_continuous(row, tuple(float(v) for v in coords[j]))
        for row in range(n):
            ctx.append_discrete(row, EOC_ID)

    out = []
    cx, cy, cz = centroid
    for row in range(n):
        token_texts = [vocab.decode(i) for i in ids[row] if i != EOS_ID]
        smiles = "".join(token_texts)
        try:
            smiles_kit.parse(smiles)
            valid = True
        except smiles_kit.SmilesError:
            valid = False
        elements = ctx.elements[row]
        ligand_start = len(prompt) - 1
        alignment = [
            p
            for p in range(ligand_start + 1, len(elements))
            if elements[p].is_discrete and elements[p].token_id in atom_ids
        ]
        row_coords = [
            (el.coord[0] * scale + cx, el.coord[1] * scale + cy, el.coord[2] * scale + cz)
            for el in elements[ligand_start:]
            if el.is_continuous
        ]
        out.append(
            GeneratedLigand(
                smiles=smiles,
                coords=row_coords,
                token_log_prob=log_probs[row],
                diffusion_calls=n_atoms[row],
                valid=valid,
                truncated=truncated[row],
                token_ids=list(ids[row]),
                context=HybridSequence(elements, ligand_start, alignment),
            )
        )
    return out


def sample_tokens(
    prompt: list[HybridElement],
    backbone: Backbone,
    vocab: Vocab,
    cfg: SampleConfig,
    rng: torch.Generator,
) -> TokenSample:
    """Sample SMILES token ids after a pocket-block + BOS prompt."""
    capacity = len(prompt) + cfg.max_smiles_tokens + 1
    ctx = _GenContexts(prompt, 1, capacity, backbone.dtype)
    ids: list[int] = []
    log_prob = 0.0
    with torch.no_grad():
        for _ in range(cfg.max_smiles_tokens):
            hidden = ctx.hidden_at_tails(backbone, [0])
            token_id, logp = _pick_token(backbone.token_logits(hidden)[0], cfg, rng)
            ids.append(token_id)
            log_prob += logp
            ctx.append_discrete(0, token_id)
            if token_id == EOS_ID:
                return TokenSample(ids, log_prob, truncated=False)
    return TokenSample(ids, log_prob, truncated=True)


def sample_ligand(
    pocket: ProteinPocket,
    backbone: Backbone,
    head: DiffusionHead,
    sched: NoiseSchedule,
    vocab: Vocab,
    cfg: SampleConfig,
    rng: torch.Generator,
    scale: float = DEFAULT_SCALE,
) -> GeneratedLigand:
    """Sample one 3D ligand for a pocket (tokens, forced BOC, coordinates)."""
    return _generate_rows(pocket, backbone, head, sched, vocab, cfg, [rng], scale)[0]


def batch_generate(
    pocket: ProteinPocket,
    n: int,
    backbone: Backbone,
    head: DiffusionHead,
    sched: NoiseSchedule,
    vocab: Vocab,
    cfg: SampleConfig,
    scale: float = DEFAULT_SCALE,
    rows_per_chunk: int = 128,
) -> list[GeneratedLigand]:
    """n independent samples with per-sample seeds derived from cfg.seed."""
    if n < 1:
        raise ValueError("n must be >= 1")
    out: list[GeneratedLigand] = []
    for start in range(0, n, rows_per_chunk):
        count = min(rows_per_chunk, n - start)
        rngs = [
            torch.Generator().manual_seed(mix_seed(cfg.seed, "sample", start + k))
            for k in range(count)
        ]
        out.extend(_generate_rows(pocket, backbone, head, sched, vocab, cfg, rngs, scale))
    return out
