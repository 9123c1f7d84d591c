"""Interleaved policy learning and reward-sharing (orientation) learning.

One iteration: roll out with theta, take a differentiable policy-gradient step
to theta_hat on the shaped returns, roll out again with theta_hat, update each
agent's orientation parameters by differentiating its own extrinsic return
through theta_hat, update the role posterior, then commit all parameters.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Sequence

import numpy as np
import torch

from . import features
from .core import JointEpisode, ReplayBuffer, rng_stream
from .envs import EnvConfig, make_env
from .layers import DTYPE, Net, Params, detach, torch_generator
from .mi import GaussianBelief, Posterior, mi_loss, mi_update, posterior_forward
from .policy import (
    ExplorationSchedule,
    Policy,
    ValueFunction,
    log_prob,
    pg_surrogate,
    policy_forward,
    policy_gradient_update,
    sample_action,
    value_update,
)
from .svo import (
    Orientation,
    RankPenaltyConfig,
    RoleHistory,
    assemble_svo_matrix,
    lagged_history,
    numerical_rank,
    orientation_forward,
    rank_k_approximation,
    rank_penalty,
    shape_rewards,
)

log = logging.getLogger(__name__)

SHARING_MODES = ("learned", "no_sharing", "fixed_prosocial")
BASELINES = ("none", "mean", "critic")
EVENT_KEYS = ("levers_pulled", "waste_cleaned", "apples_collected")

TASK_DEFAULTS = {
    "ipd": dict(w_max=3.0, k=1, lr_orientation=1e-2),
    "escape_room": dict(w_max=2.0, k=2, lr_orientation=1e-2),
    "cleanup": dict(w_max=2.0, k=2, policy_arch="conv", orientation_arch="dense", baseline="critic",
                    max_grad_norm=1.0),
}


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.99
    k: int = 1
    alpha: float = 1e-2
    lambda_svo: float = 1.0
    lambda_mi: float = 1e-2
    lambda_p: float = 1.0
    m: int = 4
    lr_policy: float = 0.1
    max_grad_norm: float = 0.0
    lr_orientation: float = 1e-3
    lr_value: float = 1e-3
    lr_posterior: float = 1e-3
    w_max: float = 3.0
    eps_start: float = 0.5
    eps_end: float = 0.05
    eps_div: int = 1000
    episodes_per_iteration: int = 16
    total_iterations: int = 100
    seed: int = 0
    buffer_capacity: int = 1000
    mi_batch: int = 32
    mi_window: int = 0
    policy_arch: str = "tabular"
    orientation_arch: str = "tabular"
    hidden: int = 32
    baseline: str = "mean"
    value_steps: int = 1
    rank_tolerance: float = 1e-6
    identity_init: bool = True

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        for name in ("lambda_svo", "lambda_mi", "lambda_p", "alpha"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.k < 1 or self.m < 1 or self.episodes_per_iteration < 1 or self.total_iterations < 0:
            raise ValueError("k, m and episodes_per_iteration must be positive; total_iterations nonnegative")
        if self.baseline not in BASELINES:
            raise ValueError(f"unknown baseline {self.baseline!r}; expected one of {BASELINES}")
        if self.w_max <= 0:
            raise ValueError("w_max must be positive")
        if self.max_grad_norm < 0:
            raise ValueError("max_grad_norm must be nonnegative (0 disables clipping)")
        ExplorationSchedule(self.eps_start, self.eps_end, self.eps_div)

    @classmethod
    def for_env(cls, kind: str, **overrides) -> "TrainConfig":
        return cls(**{**TASK_DEFAULTS[kind], **overrides})

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def with_(self, **kw) -> "TrainConfig":
        return replace(self, **kw)


@dataclass
class Batch:
    """B padded episodes from one rollout phase. Trailing axes follow (B, T, N)."""

    raw_obs: np.ndarray
    obs: torch.Tensor
    actions: torch.Tensor
    act_onehot: torch.Tensor
    rewards: torch.Tensor
    shaped: torch.Tensor
    W: torch.Tensor
    mask: torch.Tensor
    lengths: np.ndarray
    events: dict[str, np.ndarray]
    eps: float

    @property
    def size(self) -> int:
        return self.actions.shape[0]

    def episode(self, b: int, horizon: int) -> JointEpisode:
        T = int(self.lengths[b])
        return JointEpisode(
            obs=self.raw_obs[b, :T].copy(),
            actions=self.actions[b, :T].numpy().copy(),
            rewards=self.rewards[b, :T].numpy().copy(),
            shaped=self.shaped[b, :T].numpy().copy(),
            svo=self.W[b, :T].numpy().copy(),
            horizon=horizon,
            terminated=True,
            info={k: v[b].copy() for k, v in self.events.items()},
        )


@dataclass
class IterationReport:
    iteration: int
    extrinsic_reward_mean: np.ndarray
    shaped_reward_mean: np.ndarray
    reward_given_mean: np.ndarray
    reward_received_mean: np.ndarray
    svo_rank_mean: float
    mi_loss: float
    steps_per_episode: float
    levers_pulled: np.ndarray
    waste_cleaned: np.ndarray
    apples_collected: np.ndarray
    extras: dict = field(default_factory=dict)

    def rows(self, seed: int) -> list[list]:
        out = []
        for i in range(len(self.extrinsic_reward_mean)):
            out.append([
                self.iteration, seed, i,
                float(self.extrinsic_reward_mean[i]), float(self.shaped_reward_mean[i]),
                float(self.reward_given_mean[i]), float(self.reward_received_mean[i]),
                float(self.svo_rank_mean), float(self.mi_loss), float(self.steps_per_episode),
                float(self.levers_pulled[i]), float(self.waste_cleaned[i]), float(self.apples_collected[i]),
            ])
        return out


def ledger_holds(episode: JointEpisode) -> bool:
    """Every stored shaped reward equals the explicit double sum over sharers, bit for bit."""
    T, N = episode.rewards.shape
    for t in range(T):
        W, r = episode.svo[t], episode.rewards[t]
        for j in range(N):
            acc = 0.0
            for i in range(N):
                acc = acc + float(W[j, i]) * float(r[i])
            if acc != float(episode.shaped[t, j]):
                return False
    return True


def discounted_returns(rewards: torch.Tensor, gamma: float) -> torch.Tensor:
    """Reward-to-go along axis 1 of a (B, T, ...) tensor, differentiable in the rewards."""
    T = rewards.shape[1]
    idx = torch.arange(T, dtype=DTYPE)
    expo = idx[None, :] - idx[:, None]
    D = torch.where(expo >= 0, gamma ** expo.clamp(min=0), torch.zeros((), dtype=DTYPE))
    return torch.einsum("tl,bl...->bt...", D, rewards)


class Learner:
    """All agents' parameters plus the plumbing to roll out and update them."""

    def __init__(self, env_config: EnvConfig, cfg: TrainConfig, sharing: str = "learned"):
        if sharing not in SHARING_MODES:
            raise ValueError(f"unknown sharing mode {sharing!r}; expected one of {SHARING_MODES}")
        self.env_config, self.cfg, self.sharing = env_config, cfg, sharing
        self.env = make_env(env_config, rng_stream(cfg.seed, "env"))
        self.N, self.A = self.env.num_agents, self.env.num_actions
        self.horizon = env_config.horizon
        self.obs_shape = features.obs_shape(self.env)
        self.schedule = ExplorationSchedule(cfg.eps_start, cfg.eps_end, cfg.eps_div)
        self.penalty = RankPenaltyConfig(min(cfg.k, self.N), cfg.alpha)
        N, A, m = self.N, self.A, cfg.m

        gen = torch_generator(rng_stream(cfg.seed, "policy-init"))
        self.policy = Policy(Net(cfg.policy_arch, self.obs_shape, m * N, A, cfg.hidden), N, m)
        self.theta = [detach(self.policy.init(gen)) for _ in range(N)]

        gen = torch_generator(rng_stream(cfg.seed, "orientation-init"))
        self.orient = [Orientation(Net(cfg.orientation_arch, self.obs_shape, (N - 1) * A, N, cfg.hidden), i, N, A, cfg.w_max)
                       for i in range(N)]
        self.eta = [detach(o.init(gen, identity=cfg.identity_init)) for o in self.orient]
        self.eta_opt = [torch.optim.Adam(list(e.values()), lr=cfg.lr_orientation) for e in self.eta]

        flat = int(np.prod(self.obs_shape))
        gen = torch_generator(rng_stream(cfg.seed, "posterior-init"))
        self.posterior = Posterior(flat + A, N * (flat + A), N)
        self.phi = self.posterior.init(gen)
        self.phi_opt = torch.optim.Adam(list(self.phi.values()), lr=cfg.lr_posterior)

        self.value = None
        if cfg.baseline == "critic":
            gen = torch_generator(rng_stream(cfg.seed, "value-init"))
            self.value = ValueFunction(Net(cfg.policy_arch, self.obs_shape, m * N, 1, cfg.hidden))
            self.psi = [self.value.init(gen) for _ in range(N)]
            self.psi_opt = [torch.optim.Adam(list(p.values()), lr=cfg.lr_value) for p in self.psi]

        self.explore_rng = rng_stream(cfg.seed, "exploration")
        self.buffer = ReplayBuffer(cfg.buffer_capacity, rng_stream(cfg.seed, "buffer"))
        self.episodes_seen = 0
        self.ledger_checks = 0

    # ---- sharing matrix -------------------------------------------------

    def svo_beliefs(self, eta: Sequence[Params], obs: torch.Tensor, act_onehot: torch.Tensor
                    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Mean and variance sharing matrices for joint inputs with leading shape (..., N)."""
        lead = act_onehot.shape[:-2]
        if self.sharing == "no_sharing":
            W = torch.eye(self.N, dtype=DTYPE).expand(*lead, self.N, self.N)
            return W, torch.ones_like(W)
        if self.sharing == "fixed_prosocial":
            W = torch.full((*lead, self.N, self.N), 1.0 / self.N, dtype=DTYPE)
            return W, torch.ones_like(W)
        means, vars_ = [], []
        for i, orient in enumerate(self.orient):
            mean, var = orientation_forward(eta[i], orient, obs.select(len(lead), i),
                                            features.others_actions(act_onehot, i))
            means.append(mean)
            vars_.append(var)
        return assemble_svo_matrix(means), assemble_svo_matrix(vars_)

    # ---- rollouts ---------------------------------------------------------

    def rollout(self, theta: Sequence[Params], episodes: int, forced_actions: np.ndarray | None = None,
                eps: float | None = None, observer: Callable | None = None) -> Batch:
        """Run ``episodes`` episodes in lockstep.

        ``forced_actions`` (B, T, N) replaces sampling; ``observer(b, t, state)``
        sees every post-step environment state.
        """
        env, N, T, m = self.env, self.N, self.horizon, self.cfg.m
        B = episodes
        eps = self.schedule.value(self.episodes_seen) if eps is None else eps
        starts = [env.reset() for _ in range(B)]
        states = [s for s, _ in starts]
        cur_obs = np.stack([o for _, o in starts])
        raw = np.zeros((B, T, *cur_obs.shape[1:]), dtype=cur_obs.dtype)
        actions = np.zeros((B, T, N), dtype=np.int64)
        rewards = np.zeros((B, T, N))
        W_all = torch.zeros(B, T, N, N, dtype=DTYPE)
        mask = np.zeros((B, T))
        lengths = np.zeros(B, dtype=np.int64)
        events = {k: np.zeros((B, N)) for k in (*EVENT_KEYS, "cooperations", "door_exits")}
        hist = RoleHistory(m, N, (B,))
        alive = np.ones(B, dtype=bool)
        with torch.no_grad():
            for t in range(T):
                if not alive.any():
                    break
                feat = features.encode_obs(env, cur_obs)
                probs = torch.stack([policy_forward(theta[j], self.policy, feat[:, j], hist.flat(j), eps)
                                     for j in range(N)], dim=1)
                a = sample_action(probs, self.explore_rng)
                if forced_actions is not None:
                    a = np.asarray(forced_actions[:, t], dtype=np.int64)
                for b in np.flatnonzero(alive):
                    raw[b, t] = cur_obs[b]
                    states[b], cur_obs[b], r, done = env.step(states[b], a[b])
                    rewards[b, t] = r
                    if observer is not None:
                        observer(b, t, states[b])
                    mask[b, t] = 1.0
                    lengths[b] = t + 1
                    for key, val in (states[b].events or {}).items():
                        events[key][b] += val
                    if done:
                        alive[b] = False
                actions[:, t] = a
                onehot = features.encode_actions(a, self.A)
                W, _ = self.svo_beliefs(self.eta, feat, onehot)
                W_all[:, t] = W
                hist.push(W)
        Tmax = int(lengths.max()) if B else 0
        act_t = torch.from_numpy(actions[:, :Tmax])
        rew_t = torch.from_numpy(rewards[:, :Tmax] * mask[:, :Tmax, None])
        W_all = W_all[:, :Tmax]
        shaped = shape_rewards(W_all, rew_t) * torch.from_numpy(mask[:, :Tmax, None])
        batch = Batch(
            raw_obs=raw[:, :Tmax],
            obs=features.encode_obs(env, raw[:, :Tmax]),
            actions=act_t,
            act_onehot=features.encode_actions(actions[:, :Tmax], self.A),
            rewards=rew_t,
            shaped=shaped,
            W=W_all,
            mask=torch.from_numpy(mask[:, :Tmax]),
            lengths=lengths,
            events=events,
            eps=eps,
        )
        self.episodes_seen += B
        for b in range(B):
            ep = batch.episode(b, self.horizon)
            if not ledger_holds(ep):
                raise RuntimeError(f"reward ledger identity violated in episode {b} of the current batch")
            self.ledger_checks += 1
            self.buffer.push(ep)
        return batch

    # ---- differentiable pieces ---------------------------------------------

    def policy_logps(self, theta: Sequence[Params], W: torch.Tensor, batch: Batch) -> torch.Tensor:
        """log pi_j(a_j | o_j, lagged rows of W) for every agent, stacked as (B, T, N)."""
        return torch.stack([
            log_prob(theta[j], self.policy, batch.obs[:, :, j], lagged_history(W, j, self.cfg.m),
                     batch.actions[:, :, j], batch.eps)
            for j in range(self.N)
        ], dim=-1)

    def _baseline(self, returns: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        # per-step mean over live episodes, held constant
        m = mask.unsqueeze(-1) if returns.dim() == 3 else mask
        total = (returns.detach() * m).sum(0, keepdim=True)
        count = m.sum(0, keepdim=True).clamp(min=1.0)
        return total / count

    def inner_policy_step(self, theta: Sequence[Params], eta: Sequence[Params], batch: Batch,
                          create_graph: bool = True, agents: Sequence[int] | None = None) -> list[Params]:
        """theta_hat_j = theta_j + beta * grad sum_t log pi_j * (G_j - b_j), G from shaped rewards under W(eta)."""
        cfg = self.cfg
        W, _ = self.svo_beliefs(eta, batch.obs, batch.act_onehot)
        mask = batch.mask
        shaped = shape_rewards(W, batch.rewards) * mask.unsqueeze(-1)
        G = discounted_returns(shaped, cfg.gamma)
        theta_hat = []
        for j in range(self.N):
            if agents is not None and j not in agents:
                theta_hat.append(dict(theta[j]))
                continue
            hist = lagged_history(W, j, cfg.m)
            logp = log_prob(theta[j], self.policy, batch.obs[:, :, j], hist, batch.actions[:, :, j], batch.eps)
            adv = G[..., j]
            if cfg.baseline == "mean":
                adv = adv - self._baseline(G[..., j], mask)
            elif cfg.baseline == "critic":
                with torch.no_grad():
                    adv = adv - self.value(self.psi[j], batch.obs[:, :, j], hist.detach())
            surrogate = cfg.lambda_p * pg_surrogate(logp, adv, mask)
            theta_hat.append(policy_gradient_update(theta[j], surrogate, cfg.lr_policy, create_graph=create_graph,
                                                    max_norm=cfg.max_grad_norm))
        return theta_hat

    def outer_losses(self, eta: Sequence[Params], theta_hat: Sequence[Params], batch: Batch,
                     W_k: torch.Tensor | None = None, weights: torch.Tensor | None = None,
                     use_baseline: bool = True) -> tuple[list[torch.Tensor], torch.Tensor]:
        """Per-sharer orientation losses on trajectories collected under theta_hat.

        For sharer i: minus the score-function surrogate of its extrinsic return
        (rank penalty subtracted, held constant) summed over every agent's
        log-probabilities, plus the discounted rank penalty itself. Returns the
        losses and the frozen rank-k targets used.
        """
        cfg = self.cfg
        W, _ = self.svo_beliefs(eta, batch.obs, batch.act_onehot)
        if W_k is None:
            W_k = rank_k_approximation(W, self.penalty.k)
        mask = batch.mask
        logp_all = self.policy_logps(theta_hat, W, batch).sum(-1)
        disc = cfg.gamma ** torch.arange(mask.shape[1], dtype=DTYPE)
        losses = []
        for i in range(self.N):
            pen = rank_penalty(W, self.penalty, i, W_k) * mask
            R = discounted_returns(batch.rewards[..., i] - pen.detach(), cfg.gamma)
            if use_baseline and cfg.baseline != "none":
                R = R - self._baseline(R, mask)
            surrogate = pg_surrogate(logp_all, R.detach(), mask, weights)
            pen_sum = (pen * disc).sum(-1)
            pen_term = pen_sum.mean() if weights is None else (pen_sum * weights).sum()
            losses.append(cfg.lambda_svo * (pen_term - surrogate))
        return losses, W_k

    def mi_term(self, eta: Sequence[Params]) -> torch.Tensor | None:
        """KL between orientation beliefs and the posterior over uniformly sampled buffered steps."""
        if len(self.buffer) == 0 or self.sharing != "learned":
            return None
        cfg, N = self.cfg, self.N
        picks = self.buffer.sample_steps(cfg.mi_batch)
        L = self.horizon if cfg.mi_window <= 0 else min(cfg.mi_window, self.horizon)
        S = len(picks)
        flat = int(np.prod(self.obs_shape))
        obs_rows, act_rows, tok, t_vis = [], [], torch.zeros(S, N, L, flat + self.A, dtype=DTYPE), []
        for s, (e, t) in enumerate(picks):
            ep = self.buffer.episodes[e]
            feats = features.encode_obs(self.env, ep.obs)  # (T, N, *obs)
            acts = features.encode_actions(ep.actions, self.A)
            obs_rows.append(feats[t])
            act_rows.append(acts[t])
            lo = max(0, t - L)
            seq = torch.cat([feats[lo:t].reshape(t - lo, N, flat), acts[lo:t]], dim=-1)  # (t-lo, N, tok)
            tok[s, :, : t - lo] = seq.transpose(0, 1)
            t_vis.append(t - lo)
        obs_t = torch.stack(obs_rows)
        act_t = torch.stack(act_rows)
        mean, var = self.svo_beliefs(eta, obs_t, act_t)  # (S, N, N), rows are role embeddings
        context = torch.cat([obs_t.reshape(S, N * flat), act_t.reshape(S, N * self.A)], dim=-1)
        context = context.unsqueeze(1).expand(S, N, context.shape[-1])
        t_idx = torch.tensor(t_vis).unsqueeze(1).expand(S, N)
        post = posterior_forward(self.phi, self.posterior, tok, context, t_idx)
        return mi_loss(GaussianBelief(mean, var), post)

    def outer_svo_step(self, theta_hat: Sequence[Params], batch: Batch) -> float:
        """Step every eta_i along -grad of its own loss (plus the MI term) and step phi; returns the MI loss."""
        cfg = self.cfg
        losses, _ = self.outer_losses(self.eta, theta_hat, batch)
        L_mi = self.mi_term(self.eta) if cfg.lambda_mi > 0 or cfg.lr_posterior > 0 else None
        grads = []
        for i in range(self.N):
            total = losses[i] + (cfg.lambda_mi * L_mi if L_mi is not None and cfg.lambda_mi > 0 else 0.0)
            names = list(self.eta[i])
            g = torch.autograd.grad(total, [self.eta[i][k] for k in names], retain_graph=True, allow_unused=True)
            g = [torch.zeros_like(self.eta[i][k]) if x is None else x for k, x in zip(names, g)]
            if not all(torch.all(torch.isfinite(x)) for x in g):
                log.warning("non-finite orientation gradient for agent %d; step skipped", i)
                g = None
            grads.append(g)
        mi_value = 0.0
        if L_mi is not None:
            mi_value = mi_update(self.phi, self.phi_opt, L_mi)
        for i, g in enumerate(grads):
            if g is None:
                continue
            for k, x in zip(self.eta[i], g):
                self.eta[i][k].grad = x.detach()
            self.eta_opt[i].step()
        return mi_value

    def update_values(self, batch: Batch) -> None:
        if self.value is None:
            return
        for j in range(self.N):
            hist = lagged_history(batch.W, j, self.cfg.m)
            value_update(self.psi[j], self.psi_opt[j], self.value, batch.obs[:, :, j], hist,
                         batch.shaped[..., j], batch.mask, self.cfg.gamma, self.cfg.value_steps)

    # ---- one iteration -------------------------------------------------------

    def iterate(self, iteration: int) -> IterationReport:
        cfg = self.cfg
        batch = self.rollout(self.theta, cfg.episodes_per_iteration)
        learned = self.sharing == "learned"
        theta_hat = self.inner_policy_step(self.theta, self.eta, batch, create_graph=learned)
        mi_value = 0.0
        if learned:
            fresh = self.rollout([detach(t, False) for t in theta_hat], cfg.episodes_per_iteration)
            mi_value = self.outer_svo_step(theta_hat, fresh)
        self.update_values(batch)
        self.theta = [detach(t) for t in theta_hat]
        return self.report(iteration, batch, mi_value)

    def report(self, iteration: int, batch: Batch, mi_value: float) -> IterationReport:
        N = self.N
        mask = batch.mask.numpy()
        W = batch.W.numpy()
        r = batch.rewards.numpy()
        offdiag = 1.0 - np.eye(N)
        given = np.einsum("btji,bti,ji->bi", W, r, offdiag)
        received = np.einsum("btji,bti,ji->bj", W, r, offdiag)
        live = mask > 0
        ranks = numerical_rank(W[live], self.cfg.rank_tolerance) if live.any() else np.zeros(1)
        acts = batch.actions.numpy()
        coop = ((acts == 0) * mask[..., None]).sum((0, 1)) / max(mask.sum(), 1.0)
        return IterationReport(
            iteration=iteration,
            extrinsic_reward_mean=r.sum(1).mean(0),
            shaped_reward_mean=batch.shaped.numpy().sum(1).mean(0),
            reward_given_mean=given.mean(0),
            reward_received_mean=received.mean(0),
            svo_rank_mean=float(np.mean(ranks)),
            mi_loss=mi_value,
            steps_per_episode=float(batch.lengths.mean()),
            levers_pulled=batch.events["levers_pulled"].mean(0),
            waste_cleaned=batch.events["waste_cleaned"].mean(0),
            apples_collected=batch.events["apples_collected"].mean(0),
            extras={
                "cooperation": coop,
                "door_exits": batch.events["door_exits"].copy(),
                "waste_cleaned_episodes": batch.events["waste_cleaned"].copy(),
                "mean_W": W[live].mean(0) if live.any() else np.eye(N),
                "episodes_seen": self.episodes_seen,
            },
        )

    # ---- persistence -------------------------------------------------------

    def state_tensors(self) -> dict[str, torch.Tensor]:
        out = {}
        for j, th in enumerate(self.theta):
            out.update({f"policy{j}.{k}": v for k, v in th.items()})
        for i, e in enumerate(self.eta):
            out.update({f"orientation{i}.{k}": v for k, v in e.items()})
        out.update({f"posterior.{k}": v for k, v in self.phi.items()})
        if self.value is not None:
            for j, p in enumerate(self.psi):
                out.update({f"value{j}.{k}": v for k, v in p.items()})
        return out

    def metadata(self, iteration: int) -> dict:
        return {"env": asdict(self.env_config), "train": asdict(self.cfg), "sharing": self.sharing,
                "iteration": iteration, "episodes_seen": self.episodes_seen}

    def load_tensors(self, tensors: dict[str, torch.Tensor]) -> None:
        expected = self.state_tensors()
        if set(tensors) != set(expected):
            missing = sorted(set(expected) ^ set(tensors))[:5]
            raise ValueError(f"checkpoint tensors do not match this configuration (e.g. {missing})")
        for name, ref in expected.items():
            if tuple(tensors[name].shape) != tuple(ref.shape):
                raise ValueError(f"shape mismatch for {name}: {tuple(tensors[name].shape)} vs {tuple(ref.shape)}")
            with torch.no_grad():
                ref.copy_(tensors[name])


@dataclass
class TrainResult:
    reports: list[IterationReport]
    learner: Learner


def train(env_config: EnvConfig, cfg: TrainConfig, sharing: str = "learned",
          callback: Callable[[Learner, IterationReport], None] | None = None) -> TrainResult:
    """Run ``cfg.total_iterations`` iterations; ``callback`` sees every committed iteration."""
    torch.set_num_threads(1)
    learner = Learner(env_config, cfg, sharing)
    reports = []
    for it in range(cfg.total_iterations):
        rep = learner.iterate(it)
        reports.append(rep)
        if callback is not None:
            callback(learner, rep)
    return TrainResult(reports, learner)


def run_baseline(env_config: EnvConfig, cfg: TrainConfig, kind: str = "no_sharing",
                 callback: Callable[[Learner, IterationReport], None] | None = None) -> TrainResult:
    """Independent learners with a frozen sharing matrix: identity or uniform 1/N."""
    if kind not in ("no_sharing", "fixed_prosocial"):
        raise ValueError(f"unknown baseline {kind!r}")
    return train(env_config, cfg, sharing=kind, callback=callback)


def evaluate(learner: Learner, episodes: int, eps: float | None = None,
             observer: Callable | None = None) -> Batch | None:
    """Roll out the current policies with the final exploration floor."""
    if episodes <= 0:
        return None
    eps = learner.cfg.eps_end if eps is None else eps
    return learner.rollout(learner.theta, episodes, eps=eps, observer=observer)
