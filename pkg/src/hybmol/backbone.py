"""Causal transformer over hybrid sequences.

GPT-style pre-norm blocks with learned absolute positions.  Discrete tokens
go through an embedding table, 3D coordinates through a shared linear map;
the per-position outputs condition both the token head and the diffusion
head.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import torch
import torch.nn.functional as F
from torch import nn

from .data_pipeline import Batch


class BackboneError(ValueError):
    pass


class PositionOverflow(BackboneError):
    def __init__(self, length: int, max_positions: int):
        super().__init__(f"sequence length {length} exceeds max_positions {max_positions}")


@dataclass
class BackboneConfig:
    vocab_size: int
    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 512
    max_positions: int = 1024

    def __post_init__(self) -> None:
        for name in ("vocab_size", "d_model", "n_layers", "n_heads", "d_ff", "max_positions"):
            if getattr(self, name) <= 0:
                raise BackboneError(f"{name} must be positive")
        if self.d_model % self.n_heads != 0:
            raise BackboneError("d_model must be divisible by n_heads")

    def to_dict(self) -> dict:
        return asdict(self)


class CausalSelfAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int):
        super().__init__()
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.proj = nn.Linear(d_model, d_model)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, l, d = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        q = q.view(b, l, self.n_heads, self.d_head).transpose(1, 2)
        k = k.view(b, l, self.n_heads, self.d_head).transpose(1, 2)
        v = v.view(b, l, self.n_heads, self.d_head).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d_head)
        mask = torch.triu(torch.ones(l, l, dtype=torch.bool, device=x.device), diagonal=1)
        scores = scores.masked_fill(mask, float("-inf"))
        attn = F.softmax(scores, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, l, d)
        return self.proj(out)


class Block(nn.Module):
    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d_model)
        self.attn = CausalSelfAttention(cfg.d_model, cfg.n_heads)
        self.ln2 = nn.LayerNorm(cfg.d_model)
        self.ff = nn.Sequential(
            nn.Linear(cfg.d_model, cfg.d_ff),
            nn.GELU(),
            nn.Linear(cfg.d_ff, cfg.d_model),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.ln1(x))
        return x + self.ff(self.ln2(x))


class Backbone(nn.Module):
    """Embeds hybrid sequences and produces per-position condition vectors."""

    def __init__(self, cfg: BackboneConfig, seed: int = 0, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.cfg = cfg
        self.token_embedding = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.coord_embedding = nn.Linear(3, cfg.d_model)
        self.positional_embedding = nn.Embedding(cfg.max_positions, cfg.d_model)
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.n_layers))
        self.final_ln = nn.LayerNorm(cfg.d_model)
        self.token_head = nn.Linear(cfg.d_model, cfg.vocab_size)
        self.reset_parameters(seed)
        self.to(dtype)

    def reset_parameters(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(seed)
        for name, p in self.named_parameters():
            if p.dim() >= 2 or "embedding" in name:
                with torch.no_grad():
                    p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * 0.02)
            elif name.endswith(".bias") or "bias" in name:
                nn.init.zeros_(p)
            else:  # LayerNorm weights
                nn.init.ones_(p)

    def embed(self, batch: Batch) -> torch.Tensor:
        """Per-position embeddings: token or coordinate map, plus positions."""
        b, l = batch.size
        if l > self.cfg.max_positions:
            raise PositionOverflow(l, self.cfg.max_positions)
        dtype = self.token_embedding.weight.dtype
        tok = self.token_embedding(batch.token_ids)
        coo = self.coord_embedding(batch.coords.to(dtype))
        x = torch.where(batch.continuous.unsqueeze(-1), coo, tok)
        pos = self.positional_embedding(torch.arange(l, device=x.device))
        return x + pos.unsqueeze(0)

    def forward_hidden(self, embedded: torch.Tensor) -> torch.Tensor:
        """Condition vectors z^i; output i depends only on inputs <= i."""
        x = embedded
        for block in self.blocks:
            x = block(x)
        return self.final_ln(x)

    def forward(self, batch: Batch) -> torch.Tensor:
        return self.forward_hidden(self.embed(batch))

    def token_logits(self, z: torch.Tensor) -> torch.Tensor:
        """Unnormalized next-token logits from condition vectors."""
        return self.token_head(z)

    @property
    def dtype(self) -> torch.dtype:
        return self.token_embedding.weight.dtype
