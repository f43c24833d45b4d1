"""Hierarchy of growing networks: action, intention and behavior embeddings."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np
import torch

from .encoders import DemoEncoder
from .gwr import (ACTION_NET_PARAMS, BEHAVIOR_NET_PARAMS, INTENTION_NET_PARAMS,
                  AdaptReport, GwrNetwork, GwrParams)


@dataclass
class DemoStimulus:
    """Encoder outputs the hierarchy consumes for one demonstration."""

    movement: np.ndarray     # latent of frames 0..n-2
    effect: np.ndarray       # state feature of frame n-1
    complete: np.ndarray     # latent of frames 0..n-1


def demo_stimulus(encoder: DemoEncoder, observations) -> DemoStimulus:
    obs = torch.as_tensor(np.asarray(observations), dtype=next(encoder.parameters()).dtype)
    n = obs.shape[0]
    if n < 2:
        raise ValueError("a demonstration needs at least two frames")
    with torch.no_grad():
        frames = obs[None].expand(2, -1, -1)
        lat = encoder(frames, torch.tensor([0, 0]), torch.tensor([n - 2, n - 1]))
        eff = encoder.state_encoder(obs[n - 1])
    return DemoStimulus(lat[0].numpy().astype(np.float64), eff.numpy().astype(np.float64),
                        lat[1].numpy().astype(np.float64))


class BehaviorHierarchy:
    """``g_act`` over movement latents, ``g_int`` over effect features and
    ``g_b`` over the concatenated best-matching action and intention weights.

    With ``direct=True`` the two lower nets are absent and ``g_b`` self-organizes
    complete-demo latents.
    """

    def __init__(self, latent_dim: int, feature_dim: int, seed: int = 0,
                 act_params: GwrParams = ACTION_NET_PARAMS,
                 int_params: GwrParams = INTENTION_NET_PARAMS,
                 b_params: GwrParams = BEHAVIOR_NET_PARAMS,
                 direct: bool = False):
        ss = np.random.SeedSequence(seed).spawn(3)
        self.direct = direct
        self.latent_dim, self.feature_dim = latent_dim, feature_dim
        if direct:
            self.g_act: Optional[GwrNetwork] = None
            self.g_int: Optional[GwrNetwork] = None
            self.g_b = GwrNetwork(latent_dim, b_params, seed=ss[2])
        else:
            self.g_act = GwrNetwork(latent_dim, act_params, seed=ss[0])
            self.g_int = GwrNetwork(feature_dim, int_params, seed=ss[1])
            self.g_b = GwrNetwork(latent_dim + feature_dim, b_params, seed=ss[2])

    @property
    def embedding_dim(self) -> int:
        return self.g_b.dim

    def nets(self) -> Dict[str, GwrNetwork]:
        out = {"b": self.g_b}
        if not self.direct:
            out = {"act": self.g_act, "int": self.g_int, **out}
        return out

    def node_counts(self) -> Dict[str, int]:
        return {k: len(v) for k, v in self.nets().items()}

    def behavior_input(self, stim: DemoStimulus) -> np.ndarray:
        if self.direct:
            return stim.complete
        g_act = self.g_act.bmu_weight(stim.movement)
        g_int = self.g_int.bmu_weight(stim.effect)
        return np.concatenate([g_act, g_int]).astype(np.float64)

    def lookup(self, stim: DemoStimulus) -> np.ndarray:
        """Behavior embedding (weight of the best-matching ``g_b`` node); read-only."""
        return self.g_b.bmu_weight(self.behavior_input(stim))

    def adapt(self, stim: DemoStimulus) -> Dict[str, AdaptReport]:
        reports = {}
        if not self.direct:
            reports["act"] = self.g_act.adapt(stim.movement)
            reports["int"] = self.g_int.adapt(stim.effect)
        reports["b"] = self.g_b.adapt(self.behavior_input(stim))
        return reports

    def state_hash(self) -> int:
        return hash(tuple(n.state_hash() for n in self.nets().values()))


def behavior_lookup(h: BehaviorHierarchy, encoder: DemoEncoder, observations) -> np.ndarray:
    return h.lookup(demo_stimulus(encoder, observations))


def hierarchy_adapt(h: BehaviorHierarchy, encoder: DemoEncoder, observations) -> Dict[str, AdaptReport]:
    return h.adapt(demo_stimulus(encoder, observations))
