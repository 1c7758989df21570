"""Supervised pretraining: joint token/coordinate loss over ligand spans,
the optimization loop, finite-difference gradient checking, and bit-exact
checkpointing (parameters, optimizer moments, rng state).
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .backbone import Backbone, BackboneConfig
from .data_pipeline import Batch, mix_seed
from .diffusion_head import DiffusionHead, NoiseSchedule, ddpm_ar_loss

MAGIC = b"TDSBDD"
FORMAT_VERSION = 1


class TrainerError(RuntimeError):
    pass


class EmptyLossMask(TrainerError):
    def __init__(self) -> None:
        super().__init__("batch has no loss-masked target positions")


class NonFiniteLoss(TrainerError):
    pass


class VersionMismatch(TrainerError):
    pass


class CorruptFile(TrainerError):
    def __init__(self, offset: int):
        self.offset = offset
        super().__init__(f"checkpoint truncated or corrupt at byte {offset}")


@dataclass
class JointLossConfig:
    lam: float = 1.0  # weight of the diffusion term
    label_smoothing: float = 0.0

    def __post_init__(self) -> None:
        if self.lam < 0:
            raise TrainerError("lambda must be nonnegative")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise TrainerError("label_smoothing must be in [0, 1)")


@dataclass
class OptimConfig:
    lr: float = 3e-4
    steps: int = 1000
    batch_size: int = 8
    weight_decay: float = 0.0


@dataclass
class TrainState:
    backbone: Backbone
    head: DiffusionHead
    sched: NoiseSchedule
    optimizer: torch.optim.AdamW
    optim_cfg: OptimConfig
    rng: torch.Generator
    step: int = 0

    @property
    def dtype(self) -> torch.dtype:
        return self.backbone.dtype


def make_train_state(
    backbone_cfg: BackboneConfig,
    sched: NoiseSchedule,
    optim_cfg: OptimConfig | None = None,
    seed: int = 0,
    dtype: torch.dtype = torch.float32,
    d_time: int = 64,
    d_hidden: int = 256,
) -> TrainState:
    optim_cfg = optim_cfg or OptimConfig()
    backbone = Backbone(backbone_cfg, seed=mix_seed(seed, "backbone"), dtype=dtype)
    head = DiffusionHead(
        backbone_cfg.d_model,
        d_time=d_time,
        d_hidden=d_hidden,
        seed=mix_seed(seed, "head"),
        dtype=dtype,
    )
    optimizer = torch.optim.AdamW(
        list(backbone.parameters()) + list(head.parameters()),
        lr=optim_cfg.lr,
        weight_decay=optim_cfg.weight_decay,
    )
    rng = torch.Generator().manual_seed(mix_seed(seed, "train-rng"))
    return TrainState(backbone, head, sched, optimizer, optim_cfg, rng)


def target_masks(batch: Batch) -> tuple[torch.Tensor, torch.Tensor]:
    """Discrete-target and continuous-target masks over [B, L].

    A target at position p is predicted from the hidden state at p-1, so
    position 0 can never be a target; everything else inside the ligand span
    is, pocket positions never are.
    """
    b, l = batch.size
    pos = torch.arange(l).unsqueeze(0)
    targetable = batch.loss_mask & (pos >= 1)
    return targetable & ~batch.continuous, targetable & batch.continuous


def joint_loss(
    batch: Batch,
    backbone: Backbone,
    head: DiffusionHead,
    sched: NoiseSchedule,
    cfg: JointLossConfig,
    rng: torch.Generator | None = None,
    draws: tuple[torch.Tensor, torch.Tensor] | None = None,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """total = ce + lambda * diff over the ligand spans of a batch."""
    batch = batch.to(backbone.dtype)
    hidden = backbone(batch)
    disc_t, cont_t = target_masks(batch)
    n_disc = int(disc_t.sum())
    n_cont = int(cont_t.sum())
    if n_disc + n_cont == 0:
        raise EmptyLossMask()
    zero = torch.zeros((), dtype=hidden.dtype)
    if n_disc:
        rows, cols = disc_t.nonzero(as_tuple=True)
        logits = backbone.token_logits(hidden[rows, cols - 1])
        ce = F.cross_entropy(
            logits, batch.token_ids[rows, cols], label_smoothing=cfg.label_smoothing
        )
    else:
        ce = zero
    if n_cont:
        rows, cols = cont_t.nonzero(as_tuple=True)
        diff = ddpm_ar_loss(
            batch.coords[rows, cols],
            hidden[rows, cols - 1],
            sched,
            head,
            rng=rng,
            draws=draws,
        )
    else:
        diff = zero
    return ce + cfg.lam * diff, ce, diff


def _cosine_lr(base: float, step: int, total: int) -> float:
    frac = min(step, total) / max(total, 1)
    return base * 0.5 * (1.0 + math.cos(math.pi * frac))


def grad_norm(state: TrainState) -> float:
    total = 0.0
    for p in list(state.backbone.parameters()) + list(state.head.parameters()):
        if p.grad is not None:
            total += float((p.grad.detach() ** 2).sum())
    return math.sqrt(total)


def train_step(
    batch: Batch,
    state: TrainState,
    cfg: JointLossConfig,
    draws: tuple[torch.Tensor, torch.Tensor] | None = None,
) -> dict:
    """One cosine-decayed AdamW step on the joint loss."""
    state.optimizer.zero_grad(set_to_none=True)
    total, ce, diff = joint_loss(
        batch, state.backbone, state.head, state.sched, cfg,
        rng=state.rng if draws is None else None, draws=draws,
    )
    if not torch.isfinite(total):
        raise NonFiniteLoss(
            f"non-finite loss at step {state.step}: ce={float(ce)}, diff={float(diff)}"
        )
    total.backward()
    gn = grad_norm(state)
    lr = _cosine_lr(state.optim_cfg.lr, state.step, state.optim_cfg.steps)
    for group in state.optimizer.param_groups:
        group["lr"] = lr
    state.optimizer.step()
    state.step += 1
    return {
        "step": state.step,
        "ce": float(ce.detach()),
        "diff": float(diff.detach()),
        "total": float(total.detach()),
        "grad_norm": gn,
        "lr": lr,
    }


def finite_difference_check(
    loss_fn,
    named_params: list[tuple[str, torch.nn.Parameter]],
    h: float = 1e-5,
    n_coords: int = 500,
    seed: int = 0,
) -> float:
    """Worst relative error of autograd gradients vs central differences.

    loss_fn() must be deterministic (replay its own randomness).  Checks all
    parameter coordinates when there are at most n_coords, otherwise a seeded
    subsample that still touches every tensor.
    """
    for _, p in named_params:
        if p.dtype != torch.float64:
            raise TrainerError("gradient check requires a float64 model")
        p.grad = None
    loss_fn().backward()
    grads = {name: (p.grad.clone() if p.grad is not None else torch.zeros_like(p))
             for name, p in named_params}

    total = sum(p.numel() for _, p in named_params)
    rng = np.random.default_rng(seed)
    picks: list[tuple[str, torch.nn.Parameter, int]] = []
    for name, p in named_params:
        size = p.numel()
        if total <= n_coords:
            idxs = range(size)
        else:
            k = min(size, max(1, round(n_coords * size / total)))
            idxs = rng.choice(size, size=k, replace=False)
        picks.extend((name, p, int(i)) for i in idxs)

    worst = 0.0
    with torch.no_grad():
        for name, p, i in picks:
            flat = p.view(-1)
            orig = float(flat[i])
            flat[i] = orig + h
            up = float(loss_fn())
            flat[i] = orig - h
            down = float(loss_fn())
            flat[i] = orig
            fd = (up - down) / (2.0 * h)
            an = float(grads[name].view(-1)[i])
            denom = max(abs(an), abs(fd))
            if denom > 1e-8:
                worst = max(worst, abs(an - fd) / denom)
    return worst


def grad_check(
    batch: Batch,
    state: TrainState,
    cfg: JointLossConfig,
    h: float = 1e-5,
    n_coords: int = 500,
    seed: int = 0,
) -> float:
    """Finite-difference check of the joint loss on a double-precision model."""
    named = [("backbone." + n, p) for n, p in state.backbone.named_parameters()]
    named += [("head." + n, p) for n, p in state.head.named_parameters()]
    named = [(n, p) for n, p in named if p.requires_grad]

    def loss_fn():
        rng = torch.Generator().manual_seed(mix_seed(seed, "gradcheck-noise"))
        total, _, _ = joint_loss(batch, state.backbone, state.head, state.sched, cfg, rng=rng)
        return total

    return finite_difference_check(loss_fn, named, h=h, n_coords=n_coords, seed=seed)


# ---------------------------------------------------------------------------
# Checkpoints: magic + version, JSON header, raw little-endian float64 tensors
# in manifest order, then the training rng state.


def _named_tensors(state: TrainState) -> list[tuple[str, torch.Tensor]]:
    out = [("backbone." + n, p.detach()) for n, p in state.backbone.named_parameters()]
    out += [("head." + n, p.detach()) for n, p in state.head.named_parameters()]
    params = {id(p): ("backbone." + n) for n, p in state.backbone.named_parameters()}
    params.update({id(p): ("head." + n) for n, p in state.head.named_parameters()})
    for group in state.optimizer.param_groups:
        for p in group["params"]:
            st = state.optimizer.state.get(p)
            if not st:
                continue
            name = params[id(p)]
            for key in ("step", "exp_avg", "exp_avg_sq"):
                value = st[key]
                if not isinstance(value, torch.Tensor):
                    value = torch.tensor(float(value))
                out.append((f"optim.{name}.{key}", value.detach()))
    return out


def save_checkpoint(state: TrainState, path: str) -> None:
    tensors = _named_tensors(state)
    rng_bytes = state.rng.get_state().numpy().tobytes()
    header = {
        "backbone": state.backbone.cfg.to_dict(),
        "head": state.head.to_dict(),
        "schedule": state.sched.to_dict(),
        "optim": {
            "lr": state.optim_cfg.lr,
            "steps": state.optim_cfg.steps,
            "batch_size": state.optim_cfg.batch_size,
            "weight_decay": state.optim_cfg.weight_decay,
        },
        "dtype": str(state.dtype).removeprefix("torch."),
        "step": state.step,
        "tensors": [{"name": n, "shape": list(t.shape)} for n, t in tensors],
        "rng_len": len(rng_bytes),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, t in tensors:
            fh.write(t.to(torch.float64).contiguous().numpy().astype("<f8").tobytes())
        fh.write(rng_bytes)


def _read_exact(fh, n: int, offset: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CorruptFile(offset + len(data))
    return data


def load_checkpoint(path: str) -> TrainState:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise VersionMismatch(f"bad magic {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, len(MAGIC)))
        if version != FORMAT_VERSION:
            raise VersionMismatch(f"unsupported checkpoint version {version}")
        offset = len(MAGIC) + 4
        (hlen,) = struct.unpack("<Q", _read_exact(fh, 8, offset))
        offset += 8
        header = json.loads(_read_exact(fh, hlen, offset).decode("utf-8"))
        offset += hlen

        dtype = getattr(torch, header["dtype"])
        cfg = BackboneConfig(**header["backbone"])
        sched = NoiseSchedule.from_dict(header["schedule"])
        optim_cfg = OptimConfig(**header["optim"])
        state = make_train_state(cfg, sched, optim_cfg, dtype=dtype,
                                 d_time=header["head"]["d_time"],
                                 d_hidden=header["head"]["d_hidden"])
        state.step = header["step"]

        values: dict[str, torch.Tensor] = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = _read_exact(fh, count * 8, offset)
            offset += count * 8
            arr = np.frombuffer(raw, dtype="<f8").reshape(shape)
            values[entry["name"]] = torch.from_numpy(arr.copy())
        rng_bytes = _read_exact(fh, header["rng_len"], offset)

    named = {"backbone." + n: p for n, p in state.backbone.named_parameters()}
    named.update({"head." + n: p for n, p in state.head.named_parameters()})
    with torch.no_grad():
        for name, p in named.items():
            p.copy_(values[name].to(p.dtype))
    for name, p in named.items():
        step_key = f"optim.{name}.step"
        if step_key in values:
            state.optimizer.state[p] = {
                "step": values[step_key].to(torch.float32).reshape(()),
                "exp_avg": values[f"optim.{name}.exp_avg"].to(p.dtype),
                "exp_avg_sq": values[f"optim.{name}.exp_avg_sq"].to(p.dtype),
            }
    rng_state = torch.from_numpy(np.frombuffer(rng_bytes, dtype=np.uint8).copy())
    state.rng.set_state(rng_state)
    return state
