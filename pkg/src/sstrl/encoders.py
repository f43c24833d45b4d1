"""State encoder (observation -> feature) and demonstration encoder (trajectory -> latent)."""
from __future__ import annotations

from typing import Sequence

import numpy as np
import torch
from torch import nn

from .nn import MLP, RecurrentCell


class StateEncoder(nn.Module):
    """MLP feature extractor over flat observations."""

    def __init__(self, obs_dim: int, feature_dim: int = 32, hidden: Sequence[int] = (64, 64)):
        super().__init__()
        self.obs_dim, self.feature_dim = obs_dim, feature_dim
        self.mlp = MLP(obs_dim, hidden, feature_dim, "relu", "linear")

    def forward(self, obs: torch.Tensor) -> torch.Tensor:
        if obs.shape[-1] != self.obs_dim:
            raise ValueError(f"observation width {obs.shape[-1]} != {self.obs_dim}")
        return self.mlp(obs)


class DemoEncoder(nn.Module):
    """Recurrent encoder over state features of a contiguous frame range."""

    def __init__(self, state_encoder: StateEncoder, hidden: int = 64):
        super().__init__()
        self.state_encoder = state_encoder
        self.hidden = hidden
        self.cell = RecurrentCell(state_encoder.feature_dim, hidden)

    def forward(self, frames: torch.Tensor, starts: torch.Tensor, ends: torch.Tensor) -> torch.Tensor:
        """Encode ``frames[b, starts[b]:ends[b] + 1]`` for each batch row.

        ``frames`` is a zero-padded [B, L, obs_dim] tensor; ranges are inclusive.
        """
        starts = torch.as_tensor(starts, dtype=torch.long)
        ends = torch.as_tensor(ends, dtype=torch.long)
        if bool((ends < starts).any()) or bool((starts < 0).any()) or bool((ends >= frames.shape[1]).any()):
            raise ValueError("invalid frame range")
        lengths = ends - starts + 1
        T = int(lengths.max())
        offs = torch.arange(T)
        idx = torch.minimum(starts[:, None] + offs[None, :], ends[:, None])
        rows = torch.arange(frames.shape[0])[:, None]
        window = frames[rows, idx]
        feats = self.state_encoder(window)
        return self.cell.encode_lengths(feats, lengths)

    def encode_masked(self, frames: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """Reference path: explicit per-step masking over [B, L, obs_dim]."""
        return self.cell.encode_masked(self.state_encoder(frames), mask)


def encode_state(state_encoder: StateEncoder, obs) -> torch.Tensor:
    dtype = next(state_encoder.parameters()).dtype
    return state_encoder(torch.as_tensor(np.asarray(obs), dtype=dtype))


def encode_demo(demo_encoder: DemoEncoder, observations, i: int, j: int) -> torch.Tensor:
    """Latent of frames ``i..j`` (inclusive) of a single trajectory."""
    dtype = next(demo_encoder.parameters()).dtype
    obs = torch.as_tensor(np.asarray(observations), dtype=dtype)
    n = obs.shape[0]
    if not 0 <= i <= j <= n - 1:
        raise ValueError(f"empty or out-of-range frame range [{i}, {j}] for length {n}")
    return demo_encoder(obs[None], torch.tensor([i]), torch.tensor([j]))[0]
