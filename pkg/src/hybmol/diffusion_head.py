"""Noise schedule, forward noising, conditional noise prediction, and the
autoregressive diffusion loss / reverse sampler for per-atom 3D coordinates.

The denoiser is a small MLP over (noised coordinate, sinusoidal time
embedding, transformer condition vector); gradients flow through the
condition vector back into the backbone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn


class DiffusionError(ValueError):
    pass


class BadRange(DiffusionError):
    pass


class StepOutOfRange(DiffusionError):
    def __init__(self, t: int, T: int):
        super().__init__(f"diffusion step {t} outside 1..{T}")


class LengthMismatch(DiffusionError):
    def __init__(self, n_coords: int, n_conditions: int):
        super().__init__(f"{n_coords} coordinates vs {n_conditions} condition vectors")


@dataclass
class NoiseSchedule:
    T: int
    beta: np.ndarray  # [T], steps indexed t=1..T at beta[t-1]
    alpha_bar: np.ndarray  # [T], cumulative products of (1 - beta)

    def to_dict(self) -> dict:
        return {"T": self.T, "beta": [float(b) for b in self.beta]}

    @staticmethod
    def from_dict(d: dict) -> "NoiseSchedule":
        beta = np.asarray(d["beta"], dtype=np.float64)
        return NoiseSchedule(int(d["T"]), beta, np.cumprod(1.0 - beta))


def build_schedule(T: int = 100, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linear beta schedule with cumulative alpha-bar products."""
    if T < 1:
        raise BadRange("T must be >= 1")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise BadRange("need 0 < beta_start <= beta_end < 1")
    beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    return NoiseSchedule(T, beta, np.cumprod(1.0 - beta))


def add_noise(x0, t: int, eps, sched: NoiseSchedule):
    """Forward noising: sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps."""
    if not 1 <= t <= sched.T:
        raise StepOutOfRange(t, sched.T)
    ab = sched.alpha_bar[t - 1]
    if isinstance(x0, torch.Tensor):
        return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def sinusoidal_time_embedding(t: torch.Tensor, dim: int, dtype: torch.dtype) -> torch.Tensor:
    """Standard sin/cos embedding of integer timesteps, shape [..., dim]."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=dtype) / max(half - 1, 1)
    )
    angles = t.to(dtype).unsqueeze(-1) * freqs
    return torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1)


class DiffusionHead(nn.Module):
    """MLP noise estimator conditioned on time and a transformer hidden state."""

    def __init__(
        self,
        d_model: int,
        d_time: int = 64,
        d_hidden: int = 256,
        seed: int = 0,
        dtype: torch.dtype = torch.float32,
    ):
        super().__init__()
        self.d_model = d_model
        self.d_time = d_time
        self.d_hidden = d_hidden
        self.net = nn.Sequential(
            nn.Linear(3 + d_time + d_model, d_hidden),
            nn.SiLU(),
            nn.Linear(d_hidden, d_hidden),
            nn.SiLU(),
            nn.Linear(d_hidden, 3),
        )
        gen = torch.Generator().manual_seed(seed)
        for p in self.parameters():
            if p.dim() >= 2:
                with torch.no_grad():
                    p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * 0.02)
            else:
                nn.init.zeros_(p)
        self.to(dtype)

    def to_dict(self) -> dict:
        return {"d_model": self.d_model, "d_time": self.d_time, "d_hidden": self.d_hidden}

    @property
    def dtype(self) -> torch.dtype:
        return self.net[0].weight.dtype

    def predict_noise(self, x_t: torch.Tensor, t, z: torch.Tensor) -> torch.Tensor:
        """Noise estimate for x_t at step(s) t given condition vector(s) z."""
        if x_t.dim() == 1:
            x_t = x_t.unsqueeze(0)
            z = z.unsqueeze(0)
            squeeze = True
        else:
            squeeze = False
        if not isinstance(t, torch.Tensor):
            t = torch.full((x_t.shape[0],), int(t), dtype=torch.long)
        emb = sinusoidal_time_embedding(t, self.d_time, x_t.dtype)
        out = self.net(torch.cat([x_t, emb, z], dim=-1))
        return out.squeeze(0) if squeeze else out


def draw_noise(
    n: int, sched: NoiseSchedule, rng: torch.Generator, dtype: torch.dtype
) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-atom diffusion draws: steps t ~ U{1..T}, eps ~ N(0, I3)."""
    t = torch.randint(1, sched.T + 1, (n,), generator=rng)
    eps = torch.randn((n, 3), generator=rng, dtype=dtype)
    return t, eps


def ddpm_ar_loss(
    coords_x0: torch.Tensor,
    conditions: torch.Tensor,
    sched: NoiseSchedule,
    head: DiffusionHead,
    rng: torch.Generator | None = None,
    draws: tuple[torch.Tensor, torch.Tensor] | None = None,
) -> torch.Tensor:
    """Mean over atoms of ||eps - eps_hat(x_t, t, z)||^2.

    Each atom gets its own (t, eps) draw; pass `draws` to replay them (tests,
    finite differences).  Gradients reach both the head and, through the
    condition vectors, the backbone.
    """
    if coords_x0.shape[0] != conditions.shape[0]:
        raise LengthMismatch(coords_x0.shape[0], conditions.shape[0])
    n = coords_x0.shape[0]
    if n == 0:
        raise LengthMismatch(0, 0)
    if draws is None:
        if rng is None:
            raise DiffusionError("need rng or explicit draws")
        t, eps = draw_noise(n, sched, rng, coords_x0.dtype)
    else:
        t, eps = draws
        eps = eps.to(coords_x0.dtype)
    ab = torch.as_tensor(sched.alpha_bar, dtype=coords_x0.dtype)[t - 1]
    x_t = torch.sqrt(ab).unsqueeze(-1) * coords_x0 + torch.sqrt(1.0 - ab).unsqueeze(-1) * eps
    eps_hat = head.predict_noise(x_t, t, conditions)
    return ((eps - eps_hat) ** 2).sum(dim=-1).mean()


def sample_coord(
    z: torch.Tensor,
    sched: NoiseSchedule,
    head: DiffusionHead,
    rng: torch.Generator,
) -> torch.Tensor:
    """Ancestral reverse process for one coordinate, in scaled units."""
    return sample_coords_batch(z.unsqueeze(0), sched, head, [rng]).squeeze(0)


def sample_coords_batch(
    z: torch.Tensor,
    sched: NoiseSchedule,
    head: DiffusionHead,
    rngs: list[torch.Generator],
) -> torch.Tensor:
    """Batched reverse process; row i draws only from rngs[i].

    Per-row draw order (x_T first, then one w per step t > 1) matches the
    single-coordinate path, so batched and sequential sampling agree exactly.
    """
    n = z.shape[0]
    if len(rngs) != n:
        raise LengthMismatch(n, len(rngs))
    dtype = z.dtype
    x = torch.stack([torch.randn(3, generator=g, dtype=dtype) for g in rngs])
    with torch.no_grad():
        for t in range(sched.T, 0, -1):
            beta = float(sched.beta[t - 1])
            ab = float(sched.alpha_bar[t - 1])
            eps_hat = head.predict_noise(x, t, z)
            x = (x - beta / math.sqrt(1.0 - ab) * eps_hat) / math.sqrt(1.0 - beta)
            if t > 1:
                w = torch.stack([torch.randn(3, generator=g, dtype=dtype) for g in rngs])
                x = x + math.sqrt(beta) * w
    return x
