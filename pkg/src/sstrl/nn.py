"""Differentiable kernel: dense layers, a gated recurrent cell, gradients and Adam.

Tensors and reverse-mode tracing come from torch; everything trainable in the
package is built from the pieces in this module.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, Sequence

import torch
from torch import nn

ACTIVATIONS = {
    "relu": torch.relu,
    "tanh": torch.tanh,
    "sigmoid": torch.sigmoid,
    "linear": lambda x: x,
}


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, path: str):
        super().__init__(f"non-finite gradient for parameter {path!r}")
        self.path = path


def glorot_uniform_(weight: torch.Tensor, fan_in: int, fan_out: int) -> torch.Tensor:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    with torch.no_grad():
        return weight.uniform_(-bound, bound)


class Dense(nn.Module):
    """Fully connected layer ``y = act(x W^T + b)``."""

    def __init__(self, n_in: int, n_out: int, activation: str = "linear"):
        super().__init__()
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.n_in, self.n_out, self.activation = n_in, n_out, activation
        self.weight = nn.Parameter(torch.empty(n_out, n_in))
        self.bias = nn.Parameter(torch.zeros(n_out))
        glorot_uniform_(self.weight, n_in, n_out)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return dense_forward(x, self, self.activation)


def dense_forward(x: torch.Tensor, layer: Dense, activation: str | None = None) -> torch.Tensor:
    if x.shape[-1] != layer.n_in:
        raise ValueError(f"input width {x.shape[-1]} != layer input width {layer.n_in}")
    act = ACTIVATIONS[activation or layer.activation]
    return act(torch.nn.functional.linear(x, layer.weight, layer.bias))


class MLP(nn.Module):
    """Stack of dense layers; hidden layers share one activation."""

    def __init__(self, n_in: int, hidden: Sequence[int], n_out: int,
                 hidden_activation: str = "relu", out_activation: str = "linear"):
        super().__init__()
        widths = [n_in, *hidden, n_out]
        acts = [hidden_activation] * len(hidden) + [out_activation]
        self.layers = nn.ModuleList(
            Dense(a, b, act) for a, b, act in zip(widths[:-1], widths[1:], acts)
        )
        self.n_in, self.n_out = n_in, n_out

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.n_in:
            raise ValueError(f"input width {x.shape[-1]} != expected {self.n_in}")
        for layer in self.layers:
            x = layer(x)
        return x


class RecurrentCell(nn.Module):
    """LSTM cell (input, forget, candidate, output gates).

    Parameters live in a single-layer ``torch.nn.LSTM`` so that the packed
    fast path and the explicit masked loop share exactly the same weights.
    """

    def __init__(self, n_in: int, hidden: int):
        super().__init__()
        self.n_in, self.hidden = n_in, hidden
        self.lstm = nn.LSTM(n_in, hidden, num_layers=1, batch_first=True)
        H = hidden
        with torch.no_grad():
            for k in range(4):
                glorot_uniform_(self.lstm.weight_ih_l0[k * H:(k + 1) * H], n_in, H)
                glorot_uniform_(self.lstm.weight_hh_l0[k * H:(k + 1) * H], H, H)
            self.lstm.bias_ih_l0.zero_()
            self.lstm.bias_hh_l0.zero_()
            # torch gate order is (i, f, g, o)
            self.lstm.bias_ih_l0[H:2 * H] = 1.0

    def step(self, x: torch.Tensor, h: torch.Tensor, c: torch.Tensor):
        lstm = self.lstm
        gates = (torch.nn.functional.linear(x, lstm.weight_ih_l0, lstm.bias_ih_l0)
                 + torch.nn.functional.linear(h, lstm.weight_hh_l0, lstm.bias_hh_l0))
        i, f, g, o = gates.chunk(4, dim=-1)
        c_new = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
        h_new = torch.sigmoid(o) * torch.tanh(c_new)
        return h_new, c_new

    def encode_masked(self, seq: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """Run over ``seq`` [B, T, D]; steps with mask 0 carry the state through."""
        if seq.dim() != 3 or seq.shape[-1] != self.n_in:
            raise ValueError(f"expected [B, T, {self.n_in}] input, got {tuple(seq.shape)}")
        if mask.shape != seq.shape[:2]:
            raise ValueError("mask shape must equal (batch, time)")
        if bool((mask.sum(dim=1) == 0).any()):
            raise ValueError("every sequence needs at least one unmasked step")
        B = seq.shape[0]
        h = seq.new_zeros(B, self.hidden)
        c = seq.new_zeros(B, self.hidden)
        mask = mask.to(seq.dtype)
        for t in range(seq.shape[1]):
            h_new, c_new = self.step(seq[:, t], h, c)
            m = mask[:, t:t + 1]
            h = m * h_new + (1 - m) * h
            c = m * c_new + (1 - m) * c
        return h

    def encode_lengths(self, seq: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        """Fast path for left-aligned sequences padded at the end.

        Trailing padding cannot influence earlier outputs, so the state after
        the last valid step is read straight from the output sequence.
        """
        lengths = torch.as_tensor(lengths, dtype=torch.long)
        if bool((lengths < 1).any()) or bool((lengths > seq.shape[1]).any()):
            raise ValueError("every sequence needs between 1 and T unmasked steps")
        out, _ = self.lstm(seq[:, :int(lengths.max())])
        return out[torch.arange(seq.shape[0]), lengths - 1]


def recurrent_encode(seq: Sequence[torch.Tensor], mask: Sequence[int], cell: RecurrentCell) -> torch.Tensor:
    """Hidden state of ``cell`` after the last unmasked element of ``seq``."""
    if len(seq) != len(mask):
        raise ValueError("mask length must equal sequence length")
    if not any(mask):
        raise ValueError("all steps are masked")
    x = torch.stack([torch.as_tensor(s) for s in seq]).unsqueeze(0)
    m = torch.as_tensor(list(mask), dtype=x.dtype).unsqueeze(0)
    return cell.encode_masked(x, m)[0]


def backward(loss: torch.Tensor, params: Mapping[str, torch.Tensor]) -> Dict[str, torch.Tensor]:
    """Gradient of a scalar ``loss`` w.r.t. each named parameter (zeros if unreachable)."""
    if loss.numel() != 1:
        raise ValueError(f"loss must be scalar, got shape {tuple(loss.shape)}")
    names = list(params)
    tensors = [params[n] for n in names]
    if loss.requires_grad:
        grads = torch.autograd.grad(loss.reshape(()), tensors, allow_unused=True)
    else:
        grads = [None] * len(tensors)
    return {
        n: (g if g is not None else torch.zeros_like(p))
        for n, g, p in zip(names, grads, tensors)
    }


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, torch.Tensor] = field(default_factory=dict)
    v: Dict[str, torch.Tensor] = field(default_factory=dict)


def adam_step(params: Mapping[str, torch.Tensor], grads: Mapping[str, torch.Tensor],
              state: AdamState) -> Mapping[str, torch.Tensor]:
    """Bias-corrected Adam update, applied in place."""
    if set(grads) != set(params):
        raise KeyError("gradients are not aligned with parameters")
    for name, g in grads.items():
        if not bool(torch.isfinite(g).all()):
            raise NonFiniteGradientError(name)
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    with torch.no_grad():
        for name, p in params.items():
            g = grads[name]
            m = state.m.get(name)
            if m is None:
                m = state.m[name] = torch.zeros_like(p)
                state.v[name] = torch.zeros_like(p)
            v = state.v[name]
            m.mul_(b1).add_(g, alpha=1 - b1)
            v.mul_(b2).addcmul_(g, g, value=1 - b2)
            if state.lr:
                denom = (v / corr2).sqrt_().add_(state.eps)
                p.addcdiv_(m, denom, value=-state.lr / corr1)
    return params


class Adam:
    """Adam over a fixed set of named parameters."""

    def __init__(self, params: Mapping[str, torch.Tensor], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = dict(params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    def step(self, loss: torch.Tensor) -> Dict[str, torch.Tensor]:
        grads = backward(loss, self.params)
        adam_step(self.params, grads, self.state)
        return grads


def named_params(**modules: nn.Module | None) -> Dict[str, torch.Tensor]:
    out: Dict[str, torch.Tensor] = {}
    for prefix, mod in modules.items():
        if mod is None:
            continue
        for name, p in mod.named_parameters():
            out[f"{prefix}.{name}"] = p
    return out


def frozen_copy(module: nn.Module) -> nn.Module:
    """Deep copy with gradients disabled (target networks)."""
    clone = copy.deepcopy(module)
    for p in clone.parameters():
        p.requires_grad_(False)
    return clone


def soft_update(live: nn.Module, target: nn.Module, rho: float) -> nn.Module:
    """``target <- rho * live + (1 - rho) * target`` elementwise."""
    if not 0.0 < rho <= 1.0:
        raise ValueError("rho must lie in (0, 1]")
    with torch.no_grad():
        for p_t, p_l in zip(target.parameters(), live.parameters()):
            if rho == 1.0:
                p_t.copy_(p_l)
            else:
                p_t.mul_(1.0 - rho).add_(p_l, alpha=rho)
    return target

