"""Deterministic policy gradient actor-critic with task-conditioned inputs."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
from torch import nn

from .nn import ACTIVATIONS, MLP, frozen_copy, soft_update


class ReplayBuffer:
    """FIFO transition store. Demonstrations are kept by index, never copied."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim), dtype=np.float32)
        self.next_obs = np.zeros((capacity, obs_dim), dtype=np.float32)
        self.act = np.zeros((capacity, act_dim), dtype=np.float32)
        self.rew = np.zeros(capacity, dtype=np.float32)
        self.term = np.zeros(capacity, dtype=np.float32)
        self.demo = np.zeros(capacity, dtype=np.int64)
        self.size = 0
        self.head = 0

    def __len__(self) -> int:
        return self.size

    def add(self, obs, demo_id: int, action, reward: float, next_obs, terminal: bool) -> None:
        i = self.head
        self.obs[i] = obs
        self.demo[i] = demo_id
        self.act[i] = action
        self.rew[i] = reward
        self.next_obs[i] = next_obs
        self.term[i] = float(terminal)
        self.head = (self.head + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> "Batch":
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, self.size, size=batch_size)
        return Batch(self.obs[idx], self.demo[idx], self.act[idx], self.rew[idx],
                     self.next_obs[idx], self.term[idx])


@dataclass
class Batch:
    obs: np.ndarray
    demo: np.ndarray
    act: np.ndarray
    rew: np.ndarray
    next_obs: np.ndarray
    term: np.ndarray

    def __len__(self) -> int:
        return self.obs.shape[0]


class ActorCritic(nn.Module):
    """Policy ``pi(x, z)`` in [-1, 1]^d and critic ``Q(x, z, a)`` with target copies."""

    def __init__(self, feature_dim: int, rep_dim: int, act_dim: int, hidden: int = 64,
                 rho: float = 0.005):
        super().__init__()
        self.feature_dim, self.rep_dim, self.act_dim = feature_dim, rep_dim, act_dim
        self.rho = rho
        self.actor = MLP(feature_dim + rep_dim, [hidden], act_dim, "relu", "tanh")
        self.critic = MLP(feature_dim + rep_dim + act_dim, [hidden], 1, "relu", "linear")
        self.actor_target = frozen_copy(self.actor)
        self.critic_target = frozen_copy(self.critic)

    def _cond(self, x: torch.Tensor, z: Optional[torch.Tensor]) -> torch.Tensor:
        return x if z is None or self.rep_dim == 0 else torch.cat([x, z], dim=-1)

    def pi(self, x, z=None, target: bool = False) -> torch.Tensor:
        net = self.actor_target if target else self.actor
        return net(self._cond(x, z))

    def q(self, x, z, a, target: bool = False) -> torch.Tensor:
        net = self.critic_target if target else self.critic
        return net(torch.cat([self._cond(x, z), a], dim=-1)).squeeze(-1)

    def update_targets(self) -> None:
        soft_update(self.actor, self.actor_target, self.rho)
        soft_update(self.critic, self.critic_target, self.rho)


def act(ac: ActorCritic, x: torch.Tensor, z: Optional[torch.Tensor], noise_scale: float,
        rng: np.random.Generator) -> np.ndarray:
    """Policy action plus Gaussian exploration noise, clipped to [-1, 1]."""
    with torch.no_grad():
        a = ac.pi(x, z).double().numpy()
    if noise_scale > 0:
        a = a + rng.normal(0.0, noise_scale, size=a.shape)
    return np.clip(a, -1.0, 1.0)


def critic_targets(ac: ActorCritic, next_x: torch.Tensor, z: Optional[torch.Tensor],
                   rew: torch.Tensor, term: torch.Tensor, gamma: float) -> torch.Tensor:
    with torch.no_grad():
        nx = next_x.detach()
        nz = None if z is None else z.detach()
        q_next = ac.q(nx, nz, ac.pi(nx, nz, target=True), target=True)
        return rew + gamma * (1.0 - term) * q_next


def critic_loss(ac: ActorCritic, x, z, a, y) -> torch.Tensor:
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    return ((ac.q(x, z, a) - y) ** 2).mean()


def policy_loss(ac: ActorCritic, x, z) -> torch.Tensor:
    """Negative mean ``Q(x, z, pi(x, z))``.

    The critic sees detached state and task inputs, so encoder gradients from
    this term arrive only through the policy's conditioning path; the critic's
    own parameters receive no gradient.
    """
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    a = ac.pi(x, z)
    xd = x.detach()
    zd = None if z is None else z.detach()
    cond = torch.cat([ac._cond(xd, zd), a], dim=-1)
    h = cond
    for layer in ac.critic.layers:
        h = ACTIVATIONS[layer.activation](
            torch.nn.functional.linear(h, layer.weight.detach(), layer.bias.detach()))
    return -h.squeeze(-1).mean()
