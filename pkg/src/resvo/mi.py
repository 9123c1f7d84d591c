"""Variational posterior over role embeddings and the Gaussian KL regularizer.

The posterior is one causal attention layer: the query comes from the joint
(observation, action) at step t, keys and values from the agent's own
(observation, action) tokens at steps l < t plus a learned null slot, so an
empty history falls back to the null slot and zero heads give N(0, 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import torch

from .layers import DTYPE, Params, init_linear, linear


@dataclass(frozen=True)
class GaussianBelief:
    mean: torch.Tensor
    var: torch.Tensor

    def __post_init__(self) -> None:
        if self.mean.shape != self.var.shape:
            raise ValueError(f"mean shape {tuple(self.mean.shape)} != variance shape {tuple(self.var.shape)}")


class Posterior:
    def __init__(self, token_dim: int, context_dim: int, num_agents: int, width: int = 16):
        self.token_dim, self.context_dim, self.num_agents, self.width = token_dim, context_dim, num_agents, width

    def init(self, gen: torch.Generator | None) -> Params:
        p: Params = {}
        init_linear(p, "tok", self.token_dim, self.width, gen)
        init_linear(p, "ctx", self.context_dim, self.width, gen)
        for name in ("q", "k", "v"):
            init_linear(p, name, self.width, self.width, gen)
        p["null_k"] = torch.zeros(self.width, dtype=DTYPE)
        p["null_v"] = torch.zeros(self.width, dtype=DTYPE)
        init_linear(p, "out", 2 * self.width, self.width, gen)
        init_linear(p, "mean", self.width, self.num_agents, gen, zero=True)
        init_linear(p, "logvar", self.width, self.num_agents, gen, zero=True)
        return {k: v.requires_grad_(True) for k, v in p.items()}


def posterior_forward(phi: Mapping[str, torch.Tensor], post: Posterior, tokens: torch.Tensor,
                      context: torch.Tensor, t: torch.Tensor) -> GaussianBelief:
    """Belief over the role embedding at step ``t``.

    ``tokens`` is (..., L, token_dim): the agent's own per-step inputs, of which
    only positions ``< t`` are visible. ``context`` is (..., context_dim), the
    joint observation and action at step t. ``t`` broadcasts over the batch.
    """
    if tokens.shape[-1] != post.token_dim or context.shape[-1] != post.context_dim:
        raise ValueError(
            f"expected token width {post.token_dim} and context width {post.context_dim}, "
            f"got {tokens.shape[-1]} and {context.shape[-1]}"
        )
    if tokens.shape[:-2] != context.shape[:-1]:
        raise ValueError("tokens and context disagree on batch shape")
    L = tokens.shape[-2]
    t = torch.as_tensor(t).expand(context.shape[:-1])
    if torch.any(t < 0) or torch.any(t > L):
        raise ValueError(f"step index must lie in [0, {L}]")
    h_tok = torch.tanh(linear(phi, "tok", tokens))
    h_ctx = torch.tanh(linear(phi, "ctx", context))
    q = linear(phi, "q", h_ctx)
    k = linear(phi, "k", h_tok)
    v = linear(phi, "v", h_tok)
    scale = 1.0 / math.sqrt(post.width)
    scores = (k @ q.unsqueeze(-1)).squeeze(-1) * scale
    visible = torch.arange(L) < t.unsqueeze(-1)
    scores = scores.masked_fill(~visible, float("-inf"))
    null = (q * phi["null_k"]).sum(-1, keepdim=True) * scale
    attn = torch.softmax(torch.cat([null, scores], dim=-1), dim=-1)
    values = torch.cat([phi["null_v"].expand(*v.shape[:-2], 1, post.width), v], dim=-2)
    pooled = (attn.unsqueeze(-1) * values).sum(-2)
    h = torch.tanh(linear(phi, "out", torch.cat([pooled, h_ctx], dim=-1)))
    return GaussianBelief(linear(phi, "mean", h), torch.exp(linear(phi, "logvar", h)))


def gaussian_kl(p: GaussianBelief, q: GaussianBelief) -> torch.Tensor:
    """KL[p || q] between diagonal Gaussians, summed over the last axis."""
    if p.mean.shape[-1] != q.mean.shape[-1]:
        raise ValueError(f"belief dimensions differ: {p.mean.shape[-1]} vs {q.mean.shape[-1]}")
    diff = p.mean - q.mean
    terms = torch.log(q.var / p.var) + (p.var + diff * diff) / q.var - 1.0
    return 0.5 * terms.sum(-1)


def mi_loss(encoder: GaussianBelief, posterior: GaussianBelief) -> torch.Tensor:
    """Mean KL over every leading axis (sampled steps and agents)."""
    return gaussian_kl(encoder, posterior).mean()


def mi_update(phi: Mapping[str, torch.Tensor], optimizer: torch.optim.Optimizer, loss: torch.Tensor) -> float:
    """One Adam step on phi; the graph is kept so the same loss can also feed the orientation gradient."""
    names = list(phi)
    grads = torch.autograd.grad(loss, [phi[k] for k in names], retain_graph=True, allow_unused=True)
    for k, g in zip(names, grads):
        phi[k].grad = torch.zeros_like(phi[k]) if g is None else g.detach()
    optimizer.step()
    return float(loss.detach())
