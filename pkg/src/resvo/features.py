"""One-hot encodings of raw environment observations and actions."""

from __future__ import annotations

import numpy as np
import torch

from .layers import DTYPE


def obs_shape(env) -> tuple[int, ...]:
    """Shape of one agent's encoded observation for ``env``."""
    if env.kind == "ipd":
        return (env.num_obs,)
    if env.kind == "escape_room":
        return (env.num_agents * 3,)
    v = env.config.view_size
    return (env.num_codes, v, v)


def encode_obs(env, obs) -> torch.Tensor:
    """Encode integer observations of shape (..., *raw_shape) into float features."""
    x = torch.as_tensor(np.asarray(obs), dtype=torch.int64)
    if env.kind == "ipd":
        return torch.nn.functional.one_hot(x, env.num_obs).to(DTYPE)
    if env.kind == "escape_room":
        return torch.nn.functional.one_hot(x, 3).to(DTYPE).flatten(-2)
    onehot = torch.nn.functional.one_hot(x, env.num_codes).to(DTYPE)
    return onehot.movedim(-1, -3)


def encode_actions(actions, num_actions: int) -> torch.Tensor:
    return torch.nn.functional.one_hot(torch.as_tensor(np.asarray(actions), dtype=torch.int64), num_actions).to(DTYPE)


def others_actions(actions: torch.Tensor, agent: int) -> torch.Tensor:
    """Flattened one-hot actions of every agent but ``agent``; ``actions`` is (..., N, A)."""
    n = actions.shape[-2]
    keep = [j for j in range(n) if j != agent]
    return actions[..., keep, :].flatten(-2)
