"""Shared oracles for the test suite."""

from __future__ import annotations

import itertools

import numpy as np
import torch

from resvo.envs import EnvConfig
from resvo.layers import DTYPE
from resvo.svo import rank_k_approximation, rank_penalty
from resvo.trainer import Learner, TrainConfig


def perturbed_ipd_learner(horizon: int = 1, gamma: float = 0.9, seed: int = 3, **overrides) -> Learner:
    """Tabular IPD learner with randomized policy and orientation parameters."""
    cfg = TrainConfig.for_env("ipd", gamma=gamma, alpha=0.5, k=1, baseline="none", lr_policy=0.7,
                              lambda_mi=0.0, m=2, **overrides)
    learner = Learner(EnvConfig(kind="ipd", horizon=horizon), cfg)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for params in [*learner.eta, *learner.theta]:
            for v in params.values():
                v.add_(0.5 * torch.randn(v.shape, generator=gen, dtype=DTYPE))
    return learner


def bilevel_fd_errors(horizon: int = 1, gamma: float = 0.9, seed: int = 3, h: float = 1e-6,
                      **overrides) -> list[float]:
    """Relative error between the tape gradient of each sharer's orientation loss and central differences.

    The inner batch is a fixed set of forced joint actions (common random
    numbers); the outer objective is the exact expectation over every joint
    action sequence under theta_hat, so the finite differences re-run the whole
    two-stage pipeline without sampling noise.
    """
    L = perturbed_ipd_learner(horizon, gamma, seed, **overrides)
    rng = np.random.default_rng(seed)
    inner = L.rollout(L.theta, 8, forced_actions=rng.integers(0, 2, (8, horizon, 2)), eps=0.1)
    joint = np.array(list(itertools.product(range(2), repeat=2 * horizon))).reshape(-1, horizon, 2)
    outer = L.rollout(L.theta, len(joint), forced_actions=joint, eps=0.1)
    disc = gamma ** torch.arange(horizon, dtype=DTYPE)

    def objective(i, W_k):
        theta_hat = L.inner_policy_step(L.theta, L.eta, inner)
        W, _ = L.svo_beliefs(L.eta, outer.obs, outer.act_onehot)
        prob = torch.exp(L.policy_logps(theta_hat, W, outer).sum((-1, -2)))
        value = ((outer.rewards[..., i] - rank_penalty(W, L.penalty, i, W_k)) * disc).sum(-1)
        return (prob * value).sum(), prob

    errors = []
    for i in range(2):
        with torch.no_grad():
            W, _ = L.svo_beliefs(L.eta, outer.obs, outer.act_onehot)
        W_k = rank_k_approximation(W, L.penalty.k)
        _, prob = objective(i, W_k)
        theta_hat = L.inner_policy_step(L.theta, L.eta, inner)
        losses, _ = L.outer_losses(L.eta, theta_hat, outer, W_k=W_k, weights=prob.detach(), use_baseline=False)
        names = list(L.eta[i])
        grads = torch.autograd.grad(losses[i], [L.eta[i][k] for k in names], allow_unused=True)
        tape = torch.cat([(torch.zeros_like(L.eta[i][k]) if g is None else g).flatten() for k, g in zip(names, grads)])
        fd = []
        for k in names:
            p = L.eta[i][k]
            for idx in range(p.numel()):
                old = p.view(-1)[idx].item()
                vals = []
                for x in (old + h, old - h):
                    with torch.no_grad():
                        p.view(-1)[idx] = x
                    vals.append(objective(i, W_k)[0].item())
                with torch.no_grad():
                    p.view(-1)[idx] = old
                fd.append(-(vals[0] - vals[1]) / (2 * h))
        fd = torch.tensor(fd, dtype=DTYPE)
        errors.append(float((tape - fd).norm() / fd.norm()))
    return errors
