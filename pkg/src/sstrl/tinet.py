"""Task inference network and its self-supervised objective."""
from __future__ import annotations

from typing import Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from .nn import MLP


class TaskInferenceNet(nn.Module):
    """Maps a demonstration latent to a task representation ``z``."""

    def __init__(self, latent_dim: int, rep_dim: int, hidden: Sequence[int] = (128, 128)):
        super().__init__()
        self.latent_dim, self.rep_dim = latent_dim, rep_dim
        self.mlp = MLP(latent_dim, hidden, rep_dim, "relu", "linear")

    def forward(self, latent: torch.Tensor) -> torch.Tensor:
        if latent.shape[-1] != self.latent_dim:
            raise ValueError(f"latent width {latent.shape[-1]} != {self.latent_dim}")
        return self.mlp(latent)


def temporal_crop(n: int, rng: np.random.Generator) -> Tuple[int, int]:
    """Uniformly random frame pair ``0 <= u < v <= n - 1``."""
    if n < 2:
        raise ValueError("cropping needs a demonstration of at least two frames")
    u, v = sorted(rng.choice(n, size=2, replace=False).tolist())
    return u, v


def behavior_matching_loss(z: torch.Tensor, target) -> torch.Tensor:
    """Squared distance to the (constant) behavior embedding, batch-averaged."""
    target = torch.as_tensor(target, dtype=z.dtype).detach()
    if target.shape != z.shape:
        raise ValueError(f"shape mismatch {tuple(z.shape)} vs {tuple(target.shape)}")
    return ((z - target) ** 2).sum(dim=-1).mean()


def contrastive_loss(z_complete: torch.Tensor, z_cropped: torch.Tensor, tau: float = 0.1) -> torch.Tensor:
    """Normalized-temperature cross entropy with one positive per anchor.

    For anchor ``i`` the candidates are its cropped twin and the complete
    representations of the other ``K - 1`` demonstrations in the batch.
    """
    K = z_complete.shape[0]
    if K < 2:
        raise ValueError("contrastive loss needs at least two demonstrations")
    if tau <= 0:
        raise ValueError("temperature must be positive")
    if z_cropped.shape != z_complete.shape:
        raise ValueError("complete and cropped batches must have the same shape")
    n_c = z_complete.norm(dim=-1, keepdim=True)
    n_j = z_cropped.norm(dim=-1, keepdim=True)
    if bool((n_c == 0).any()) or bool((n_j == 0).any()):
        raise ValueError("zero-norm task representation")
    a = z_complete / n_c
    b = z_cropped / n_j
    pos = (a * b).sum(dim=-1) / tau
    neg = (a @ a.T) / tau
    eye = torch.eye(K, dtype=torch.bool)
    neg = neg.masked_fill(eye, float("-inf"))
    logits = torch.cat([pos[:, None], neg], dim=1)
    return (torch.logsumexp(logits, dim=1) - pos).mean()


def ssl_loss(z_complete: torch.Tensor, z_cropped: torch.Tensor, targets: Optional[torch.Tensor],
             tau: float = 0.1) -> Tuple[torch.Tensor, Optional[torch.Tensor], torch.Tensor]:
    """Unweighted sum of behavior matching and contrastive terms.

    ``targets=None`` drops the behavior-matching term. Returns
    ``(total, l_bm, l_c)``.
    """
    l_c = contrastive_loss(z_complete, z_cropped, tau)
    if targets is None:
        return l_c, None, l_c
    l_bm = behavior_matching_loss(z_complete, targets)
    return l_bm + l_c, l_bm, l_c


class SslBuffer:
    """FIFO ring of (demo index, crop bounds, frozen behavior target)."""

    def __init__(self, capacity: int, target_dim: int):
        self.capacity = capacity
        self.demo = np.zeros(capacity, dtype=np.int64)
        self.crop = np.zeros((capacity, 2), dtype=np.int64)
        self.target = np.zeros((capacity, target_dim), dtype=np.float32)
        self.size = 0
        self.head = 0

    def __len__(self) -> int:
        return self.size

    def add(self, demo_index: int, u: int, v: int, target=None) -> None:
        if not 0 <= u < v:
            raise ValueError("crop bounds must satisfy 0 <= u < v")
        i = self.head
        self.demo[i] = demo_index
        self.crop[i] = (u, v)
        if target is not None:
            self.target[i] = np.asarray(target, dtype=np.float32)
        self.head = (self.head + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator):
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, self.size, size=batch_size)
        return self.demo[idx], self.crop[idx], self.target[idx].copy()
