"""Orientation functions, reward shaping with the sharing matrix, and rank projection.

Convention: ``W[j, i]`` is the share of agent i's extrinsic reward delivered to
agent j, so column i is agent i's sharing vector and row j is agent j's role
embedding. Leading batch dimensions are allowed everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
import torch

from .layers import DTYPE, Net, Params, linear


@dataclass(frozen=True)
class RankPenaltyConfig:
    k: int
    alpha: float

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError(f"target rank must be at least 1, got {self.k}")
        if self.alpha < 0:
            raise ValueError(f"penalty weight must be nonnegative, got {self.alpha}")


class Orientation:
    """Agent ``agent``'s map from (own observation, others' actions) to a bounded sharing vector.

    Head 0 gives the mean through ``w_max * tanh``; head 1 gives a log-variance.
    """

    def __init__(self, net: Net, agent: int, num_agents: int, num_actions: int, w_max: float):
        if w_max <= 0:
            raise ValueError("w_max must be positive")
        if net.out_dim != num_agents or net.extra_dim != (num_agents - 1) * num_actions:
            raise ValueError("orientation net dimensions do not match the agent and action counts")
        self.net, self.agent, self.num_agents, self.num_actions, self.w_max = net, agent, num_agents, num_actions, w_max

    def init(self, gen: torch.Generator | None, identity: bool = True) -> Params:
        """Zero heads; with ``identity`` the self-share starts at exactly 1 so initial shaping is the identity."""
        params = self.net.init(gen, zero_head=True, heads=2)
        if identity:
            params["head0.b"][self.agent] = math.atanh(1.0 / self.w_max)
        return params


def orientation_forward(params: Mapping[str, torch.Tensor], orient: Orientation, obs: torch.Tensor,
                        other_actions: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Mean sharing vector (bounded by ``w_max``) and strictly positive variance vector.

    ``other_actions`` is the flattened one-hot of the other N-1 agents' actions.
    """
    if other_actions.shape[-1] != orient.net.extra_dim:
        raise ValueError(
            f"expected one-hot actions of {orient.num_agents - 1} other agents "
            f"({orient.net.extra_dim} entries), got {other_actions.shape[-1]}"
        )
    h = orient.net.features(params, obs, other_actions)
    mean = orient.w_max * torch.tanh(linear(params, "head0", h))
    var = torch.exp(linear(params, "head1", h))
    return mean, var


def assemble_svo_matrix(vectors: Sequence) -> torch.Tensor | np.ndarray:
    """Stack N sharing vectors of length N as the columns of W."""
    n = len(vectors)
    if n == 0:
        raise ValueError("no sharing vectors given")
    for i, v in enumerate(vectors):
        if v.shape[-1] != n:
            raise ValueError(f"sharing vector {i} has length {v.shape[-1]}, expected {n}")
    if isinstance(vectors[0], torch.Tensor):
        return torch.stack(list(vectors), dim=-1)
    return np.stack([np.asarray(v, dtype=np.float64) for v in vectors], axis=-1)


def role_embedding(W, agent: int):
    return W[..., agent, :]


def shape_rewards(W, r):
    """Shaped rewards ``W @ r``, accumulated column by column in index order.

    The fixed summation order makes the result reproducible bit for bit by a
    plain double loop over (j, i).
    """
    n = W.shape[-1]
    if r.shape[-1] != n:
        raise ValueError(f"reward vector of length {r.shape[-1]} does not match W of size {n}")
    out = W[..., :, 0] * r[..., None, 0]
    for i in range(1, n):
        out = out + W[..., :, i] * r[..., None, i]
    return out


def svd(W: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD with each left singular vector's largest-magnitude entry made positive."""
    U, s, Vt = np.linalg.svd(np.asarray(W, dtype=np.float64), full_matrices=False)
    idx = np.argmax(np.abs(U), axis=-2)
    signs = np.sign(np.take_along_axis(U, idx[..., None, :], axis=-2))
    signs[signs == 0] = 1.0
    return U * signs, s, Vt * np.swapaxes(signs, -1, -2)


def rank_k_approximation(W, k: int):
    """Best rank-``k`` approximation in Frobenius norm (truncated SVD).

    Torch inputs come back detached: the projection is a constant target.
    """
    rows, cols = W.shape[-2:]
    if not 1 <= k <= min(rows, cols):
        raise ValueError(f"k={k} outside [1, {min(rows, cols)}]")
    if isinstance(W, torch.Tensor):
        return torch.from_numpy(rank_k_approximation(W.detach().cpu().numpy(), k)).to(DTYPE)
    U, s, Vt = svd(W)
    return (U[..., :, :k] * s[..., None, :k]) @ Vt[..., :k, :]


def rank_penalty(W, cfg: RankPenaltyConfig, agent: int, W_k=None):
    """``alpha * ||W[:, agent] - W_k[:, agent]||^2`` with ``W_k`` held constant."""
    if cfg.alpha == 0:
        return W[..., 0, agent] * 0.0
    if W_k is None:
        W_k = rank_k_approximation(W, cfg.k)
    diff = W[..., :, agent] - W_k[..., :, agent]
    return cfg.alpha * (diff * diff).sum(-1)


def singular_values(W) -> np.ndarray:
    if isinstance(W, torch.Tensor):
        W = W.detach().cpu().numpy()
    return np.linalg.svd(np.asarray(W, dtype=np.float64), compute_uv=False)


def numerical_rank(W, tolerance: float = 1e-6) -> int | np.ndarray:
    """Number of singular values above ``tolerance * sigma_max``; batched over leading axes."""
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    s = singular_values(W)
    top = s[..., :1]
    count = np.sum(s > tolerance * top, axis=-1) * (top[..., 0] > 0)
    return int(count) if np.ndim(count) == 0 else count


class RoleHistory:
    """Ring of the latest ``m`` role embeddings per agent, newest first, zero-padded."""

    def __init__(self, m: int, num_agents: int, batch: tuple[int, ...] = ()):
        if m < 1:
            raise ValueError("history length must be positive")
        self.m = m
        self.values = torch.zeros(*batch, num_agents, m, num_agents, dtype=DTYPE)

    def push(self, W: torch.Tensor) -> None:
        # row j of W becomes agent j's newest entry
        self.values = torch.cat([W.unsqueeze(-2), self.values[..., :-1, :]], dim=-2)

    def flat(self, agent: int) -> torch.Tensor:
        return self.values[..., agent, :, :].flatten(-2)


def lagged_history(W_seq: torch.Tensor, agent: int, m: int) -> torch.Tensor:
    """Policy inputs over a whole episode: at step t, rows ``W[t-1], ..., W[t-m]`` of ``agent``.

    ``W_seq`` is (..., T, N, N); the result is (..., T, m * N) and matches what
    ``RoleHistory`` produced during the rollout.
    """
    rows = W_seq[..., agent, :]
    T, n = rows.shape[-2:]
    pad = torch.zeros(*rows.shape[:-2], m, n, dtype=rows.dtype)
    padded = torch.cat([pad, rows], dim=-2)
    windows = [padded[..., m - 1 - k: m - 1 - k + T, :] for k in range(m)]
    return torch.cat(windows, dim=-1)
