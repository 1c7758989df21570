"""Target-specific RL finetuning of the transformer agent.

The pretrained backbone is copied into a frozen prior; the agent is trained
with the regularized MLE loss (log p_prior(x) + mu * R(x) - log p_agent(x))^2
over ligands it samples itself.  The diffusion head stays frozen: coordinate
likelihoods are intractable under the reverse process, so log p covers the
discrete token span only.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass

import torch

from . import sampler as sampler_mod
from . import smiles_kit
from .backbone import Backbone
from .data_pipeline import make_batch, mix_seed
from .diffusion_head import DiffusionHead, NoiseSchedule
from .hybrid_seq import DEFAULT_SCALE, HybridSequence, Vocab, discrete
from .sampler import GeneratedLigand, SampleConfig, pocket_prompt
from .struct_io import ProteinPocket

log = logging.getLogger(__name__)


class RLError(RuntimeError):
    pass


class UnknownReward(RLError):
    def __init__(self, name: str, known: list[str]):
        super().__init__(f"unknown reward {name!r}; known: {', '.join(sorted(known))}")


class AllInvalidBatch(RLError):
    pass


@dataclass
class RLConfig:
    mu: float = 10.0
    batch_size: int = 8
    steps: int = 200
    temperature: float = 1.0
    max_smiles_tokens: int = 128
    lr: float = 3e-4
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mu < 0:
            raise RLError("mu must be nonnegative")
        if self.batch_size < 1:
            raise RLError("batch_size must be >= 1")


class AgentPair:
    """Trainable agent plus frozen prior and frozen diffusion head."""

    def __init__(self, agent: Backbone, head: DiffusionHead, sched: NoiseSchedule, vocab: Vocab):
        self.agent = agent
        self.prior = copy.deepcopy(agent)
        for p in self.prior.parameters():
            p.requires_grad_(False)
        self.head = head
        for p in self.head.parameters():
            p.requires_grad_(False)
        self.sched = sched
        self.vocab = vocab


def sequence_log_prob(
    backbone: Backbone,
    pocket: ProteinPocket,
    token_ids: list[int],
    vocab: Vocab,
    scale: float = DEFAULT_SCALE,
) -> torch.Tensor:
    """Sum of token log-probabilities of a SMILES span, BOS-conditioned.

    Coordinates never condition tokens (they sit after EOS), so the context
    is just the pocket block, BOS, and the preceding tokens.
    """
    prompt, _ = pocket_prompt(pocket, vocab, scale)
    elements = list(prompt) + [discrete(i) for i in token_ids]
    seq = HybridSequence(elements, len(prompt) - 1, [])
    batch = make_batch([seq], max_len=len(elements))
    hidden = backbone(batch)
    first = len(prompt) - 1  # BOS position: conditions the first token
    positions = torch.arange(first, first + len(token_ids))
    logits = backbone.token_logits(hidden[0, positions])
    logp = torch.log_softmax(logits, dim=-1)
    targets = torch.tensor(token_ids, dtype=torch.long)
    return logp[torch.arange(len(token_ids)), targets].sum()


def rl_loss(
    token_ids: list[int],
    pair: AgentPair,
    pocket: ProteinPocket,
    reward_value: float,
    cfg: RLConfig,
    scale: float = DEFAULT_SCALE,
) -> torch.Tensor:
    """Regularized MLE loss for one sampled ligand token sequence."""
    logp_agent = sequence_log_prob(pair.agent, pocket, token_ids, pair.vocab, scale)
    with torch.no_grad():
        logp_prior = sequence_log_prob(pair.prior, pocket, token_ids, pair.vocab, scale)
    return (logp_prior + cfg.mu * reward_value - logp_agent) ** 2


def rl_step(
    pocket: ProteinPocket,
    pair: AgentPair,
    reward_fn,
    cfg: RLConfig,
    optimizer: torch.optim.Optimizer,
    step: int,
    scale: float = DEFAULT_SCALE,
) -> dict:
    """Sample a batch, score it, and take one gradient step on the agent.

    Invalid ligands keep the minimum reward (0) so invalidity is penalized;
    if nothing in the batch parses the update is skipped.
    """
    sample_cfg = SampleConfig(
        temperature=cfg.temperature,
        max_smiles_tokens=cfg.max_smiles_tokens,
        seed=mix_seed(cfg.seed, "rl-step", step),
    )
    ligands = sampler_mod.batch_generate(
        pocket, cfg.batch_size, pair.agent, pair.head, pair.sched, pair.vocab,
        sample_cfg, scale=scale,
    )
    rewards = [reward_fn(lig, pocket) if lig.valid else 0.0 for lig in ligands]
    valid_frac = sum(1 for lig in ligands if lig.valid) / len(ligands)
    metrics = {
        "step": step,
        "mean_reward": sum(rewards) / len(rewards),
        "valid_frac": valid_frac,
        "loss": float("nan"),
        "skipped": False,
    }
    if valid_frac == 0.0:
        log.warning("rl step %d: no sampled SMILES parses; skipping update", step)
        metrics["skipped"] = True
        return metrics
    optimizer.zero_grad(set_to_none=True)
    losses = [
        rl_loss(lig.token_ids, pair, pocket, r, cfg, scale)
        for lig, r in zip(ligands, rewards)
    ]
    loss = torch.stack(losses).mean()
    loss.backward()
    optimizer.step()
    metrics["loss"] = float(loss)
    return metrics


def finetune(
    pocket: ProteinPocket,
    pair: AgentPair,
    reward_fn,
    cfg: RLConfig,
    scale: float = DEFAULT_SCALE,
    on_metrics=None,
) -> list[dict]:
    optimizer = torch.optim.AdamW(
        [p for p in pair.agent.parameters() if p.requires_grad], lr=cfg.lr, weight_decay=0.0
    )
    history = []
    for step in range(cfg.steps):
        metrics = rl_step(pocket, pair, reward_fn, cfg, optimizer, step, scale)
        history.append(metrics)
        if on_metrics is not None:
            on_metrics(metrics)
    return history


# ---------------------------------------------------------------------------
# Built-in rewards.  A reward maps (GeneratedLigand, ProteinPocket) -> float
# and documents its own range.


def constant_reward(c: float):
    """Always c; for tests and the mu=0 degenerate case."""

    def reward(ligand: GeneratedLigand, pocket: ProteinPocket) -> float:
        return c

    return reward


def atom_count_reward(element: str, cap: int):
    """Number of ligand atoms of the given element, capped; range [0, cap]."""

    def reward(ligand: GeneratedLigand, pocket: ProteinPocket) -> float:
        try:
            graph = smiles_kit.parse(ligand.smiles)
        except smiles_kit.SmilesError:
            return 0.0
        return float(min(sum(1 for a in graph.atoms if a.element == element), cap))

    return reward


def centroid_proximity_reward():
    """Negative mean distance (Angstrom) of ligand atoms to the pocket centroid.

    Maximum 0 when every atom sits on the centroid; unbounded below.
    """

    def reward(ligand: GeneratedLigand, pocket: ProteinPocket) -> float:
        if not ligand.coords:
            return 0.0
        cx, cy, cz = pocket.centroid()
        total = 0.0
        for x, y, z in ligand.coords:
            total += ((x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2) ** 0.5
        return -total / len(ligand.coords)

    return reward


_REWARD_FACTORIES = {
    "constant": constant_reward,
    "atom_count": atom_count_reward,
    "centroid_proximity": centroid_proximity_reward,
}


def builtin_rewards() -> dict:
    return dict(_REWARD_FACTORIES)


def make_reward(name: str, **params):
    if name not in _REWARD_FACTORIES:
        raise UnknownReward(name, list(_REWARD_FACTORIES))
    return _REWARD_FACTORIES[name](**params)
