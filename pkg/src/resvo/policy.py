"""Role-conditioned softmax policies, per-agent critics, the differentiable policy-gradient step and checkpoints."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np
import torch

from .envs.base import atomic_write_bytes
from .layers import DTYPE, Net, Params


@dataclass(frozen=True)
class ExplorationSchedule:
    """Exploration floor decaying linearly from ``eps_start`` to ``eps_end`` over ``eps_div`` episodes."""

    eps_start: float = 0.5
    eps_end: float = 0.05
    eps_div: int = 1000

    def __post_init__(self) -> None:
        if not self.eps_start >= self.eps_end >= 0.0 or self.eps_start > 1.0:
            raise ValueError(f"need 1 >= eps_start >= eps_end >= 0, got {self.eps_start}, {self.eps_end}")
        if self.eps_div < 1:
            raise ValueError("eps_div must be positive")

    def value(self, episode: int) -> float:
        frac = min(max(episode, 0) / self.eps_div, 1.0)
        return self.eps_start + (self.eps_end - self.eps_start) * frac


class Policy:
    """pi_j(a | o_j, e_j^{t-1..t-m}); the embedding history enters as the net's side input."""

    def __init__(self, net: Net, num_agents: int, m: int):
        if net.extra_dim != m * num_agents:
            raise ValueError(f"policy net side input must be m*N={m * num_agents}, got {net.extra_dim}")
        self.net, self.num_agents, self.m = net, num_agents, m
        self.num_actions = net.out_dim

    def init(self, gen: torch.Generator | None) -> Params:
        return self.net.init(gen, zero_head=True)

    def check_history(self, history: torch.Tensor) -> None:
        if history.shape[-1] != self.m * self.num_agents:
            raise ValueError(
                f"embedding history must hold m={self.m} embeddings of length {self.num_agents}, "
                f"got a trailing dimension of {history.shape[-1]}"
            )


def pad_history(embeddings: list, m: int, num_agents: int) -> torch.Tensor:
    """Flatten newest-first embeddings (at most ``m``), zero-padding missing entries."""
    if len(embeddings) > m:
        raise ValueError(f"history of {len(embeddings)} embeddings exceeds m={m}")
    out = torch.zeros(m, num_agents, dtype=DTYPE)
    for k, e in enumerate(embeddings):
        e = torch.as_tensor(e, dtype=DTYPE)
        if e.shape != (num_agents,):
            raise ValueError(f"role embedding must have length {num_agents}, got shape {tuple(e.shape)}")
        out[k] = e
    return out.flatten()


def mix_floor(probs: torch.Tensor, eps: float) -> torch.Tensor:
    return (1.0 - eps) * probs + eps / probs.shape[-1]


def policy_forward(params: Mapping[str, torch.Tensor], policy: Policy, obs: torch.Tensor,
                   history: torch.Tensor, eps: float = 0.0) -> torch.Tensor:
    """Action probabilities, with the exploration floor ``eps / |A|`` mixed in."""
    policy.check_history(history)
    logits = policy.net.forward(params, obs, history)
    return mix_floor(torch.softmax(logits, dim=-1), eps)


def log_prob(params: Mapping[str, torch.Tensor], policy: Policy, obs: torch.Tensor, history: torch.Tensor,
             actions: torch.Tensor, eps: float = 0.0) -> torch.Tensor:
    probs = policy_forward(params, policy, obs, history, eps)
    return torch.log(probs.gather(-1, actions.unsqueeze(-1)).squeeze(-1))


def sample_action(probs, rng: np.random.Generator) -> np.ndarray | int:
    """Inverse-CDF sampling with one uniform draw per distribution."""
    p = probs.detach().cpu().numpy() if isinstance(probs, torch.Tensor) else np.asarray(probs, dtype=np.float64)
    cdf = np.cumsum(p, axis=-1)
    u = rng.random(p.shape[:-1]) * cdf[..., -1]
    idx = np.minimum(np.sum(cdf <= u[..., None], axis=-1), p.shape[-1] - 1)
    # never return a zero-probability action because of cumulative rounding
    return int(idx) if np.ndim(idx) == 0 else idx.astype(np.int64)


class NonFiniteGradient(FloatingPointError):
    pass


def policy_gradient_update(params: Mapping[str, torch.Tensor], surrogate: torch.Tensor, beta: float,
                           create_graph: bool = True, max_norm: float = 0.0) -> Params:
    """``theta_hat = theta + beta * grad(surrogate)``, keeping the graph so theta_hat stays differentiable.

    ``surrogate`` is sum_t log pi(a_t) * G_t (averaged over episodes); building it is
    the caller's job because G may carry a graph back to the orientation parameters.
    A positive ``max_norm`` rescales the whole gradient to at most that global norm;
    the rescaling is part of the graph.
    """
    names = list(params)
    if not surrogate.requires_grad:
        return dict(params)
    grads = torch.autograd.grad(surrogate, [params[k] for k in names], create_graph=create_graph, allow_unused=True)
    for k, g in zip(names, grads):
        if g is not None and not torch.all(torch.isfinite(g)):
            raise NonFiniteGradient(f"non-finite policy gradient for parameter {k!r}")
    scale = 1.0
    if max_norm > 0:
        norm = torch.sqrt(sum((g * g).sum() for g in grads if g is not None))
        scale = torch.clamp(max_norm / (norm + 1e-12), max=1.0)
    out: Params = {}
    for k, g in zip(names, grads):
        out[k] = params[k] if g is None else params[k] + beta * scale * g
    return out


def pg_surrogate(logp: torch.Tensor, advantages: torch.Tensor, mask: torch.Tensor,
                 weights: torch.Tensor | None = None) -> torch.Tensor:
    """Sum over time of log-prob times advantage, averaged (or weighted) over the episode axis."""
    per_episode = (logp * advantages * mask).sum(-1)
    if weights is None:
        return per_episode.mean()
    return (per_episode * weights).sum()


class ValueFunction:
    """Per-agent critic V(o_j, e_j history) with the same trunk as the policy."""

    def __init__(self, net: Net):
        if net.out_dim != 1:
            raise ValueError("a value net has a single output")
        self.net = net

    def init(self, gen: torch.Generator | None) -> Params:
        return {k: v.requires_grad_(True) for k, v in self.net.init(gen, zero_head=True).items()}

    def __call__(self, params: Mapping[str, torch.Tensor], obs: torch.Tensor, history: torch.Tensor) -> torch.Tensor:
        return self.net.forward(params, obs, history).squeeze(-1)


def td_targets(values: torch.Tensor, rewards: torch.Tensor, mask: torch.Tensor, gamma: float) -> torch.Tensor:
    """One-step bootstrapped targets r_t + gamma * V(s_{t+1}) over (B, T) arrays; zero past the episode end."""
    nxt = torch.zeros_like(values)
    nxt[..., :-1] = values[..., 1:] * mask[..., 1:]
    return rewards + gamma * nxt.detach()


def value_update(params: Mapping[str, torch.Tensor], optimizer: torch.optim.Optimizer, value: ValueFunction,
                 obs: torch.Tensor, history: torch.Tensor, rewards: torch.Tensor, mask: torch.Tensor,
                 gamma: float, steps: int = 1) -> float:
    """Adam steps on the squared TD error toward bootstrapped targets; returns the last loss."""
    loss_value = 0.0
    for _ in range(steps):
        v = value(params, obs, history)
        target = td_targets(v.detach(), rewards, mask, gamma)
        loss = (((v - target) ** 2) * mask).sum() / mask.sum().clamp(min=1.0)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        loss_value = float(loss.detach())
    return loss_value


MAGIC = b"RESVOCKP"
VERSION = 1


def save_checkpoint(path: str | Path, tensors: Mapping[str, torch.Tensor], metadata: dict | None = None) -> None:
    """Versioned binary container: magic, version, JSON metadata, then name/shape/float64 payload per tensor."""
    meta = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    chunks = [MAGIC, struct.pack("<II", VERSION, len(meta)), meta, struct.pack("<I", len(tensors))]
    for name, t in tensors.items():
        arr = np.asarray(t.detach().cpu().numpy(), dtype="<f8", order="C")
        key = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(key)) + key)
        chunks.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}q", *arr.shape))
        chunks.append(arr.tobytes())
    atomic_write_bytes(Path(path), b"".join(chunks))


def load_checkpoint(path: str | Path) -> tuple[dict[str, torch.Tensor], dict]:
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path} is not a checkpoint file")
    pos = len(MAGIC)
    version, meta_len = struct.unpack_from("<II", data, pos)
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos += 8
    metadata = json.loads(data[pos:pos + meta_len].decode("utf-8"))
    pos += meta_len
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    tensors: dict[str, torch.Tensor] = {}
    for _ in range(count):
        (klen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + klen].decode("utf-8")
        pos += klen
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}q", data, pos)
        pos += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape)
        pos += 8 * size
        tensors[name] = torch.from_numpy(arr.astype(np.float64))
    return tensors, metadata
