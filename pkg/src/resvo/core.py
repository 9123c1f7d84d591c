"""Shared episode containers, returns, replay buffer and seeded RNG streams."""

from __future__ import annotations

import hashlib
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


def rng_stream(seed: int, label: str) -> np.random.Generator:
    """Independent generator for a (seed, label) pair.

    The label is hashed with sha256 so that stream identity never depends on
    Python's randomized ``hash``.
    """
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    words = [int.from_bytes(digest[k:k + 4], "little") for k in range(0, 16, 4)]
    seq = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *words])
    return np.random.Generator(np.random.PCG64(seq))


@dataclass(frozen=True)
class RngStream:
    seed: int
    label: str

    def generator(self) -> np.random.Generator:
        return rng_stream(self.seed, self.label)

    def child(self, label: str) -> "RngStream":
        return RngStream(self.seed, f"{self.label}/{label}")


def compute_returns(rewards: Sequence[float], gamma: float) -> np.ndarray:
    """Discounted reward-to-go, ``G[t] = r[t] + gamma * G[t + 1]``."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.ndim != 1:
        raise ValueError(f"rewards must be one-dimensional, got shape {r.shape}")
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    if not np.all(np.isfinite(r)):
        bad = int(np.flatnonzero(~np.isfinite(r))[0])
        raise ValueError(f"non-finite reward {r[bad]} at step {bad}")
    out = np.empty_like(r)
    acc = 0.0
    for t in range(len(r) - 1, -1, -1):
        acc = r[t] + gamma * acc
        out[t] = acc
    return out


@dataclass(frozen=True)
class StepRecord:
    observation: np.ndarray
    action: int
    extrinsic_reward: float
    shaped_reward: float
    role_embedding: np.ndarray
    done: bool


@dataclass(frozen=True)
class Trajectory:
    agent: int
    steps: tuple[StepRecord, ...]
    horizon: int

    def __post_init__(self) -> None:
        if len(self.steps) > self.horizon:
            raise ValueError(f"trajectory of length {len(self.steps)} exceeds horizon {self.horizon}")
        terminal = [k for k, s in enumerate(self.steps) if s.done]
        if len(terminal) > 1 or (terminal and terminal[0] != len(self.steps) - 1):
            raise ValueError("a trajectory may only have a single terminal step, at its end")

    def __len__(self) -> int:
        return len(self.steps)


@dataclass
class JointEpisode:
    """One episode for all agents, stored as dense arrays.

    Shapes: ``obs`` (T, N, *obs_shape), ``actions`` (T, N), ``rewards`` and
    ``shaped`` (T, N), ``svo`` (T, N, N) holding the sharing matrix used at
    each step (``svo[t][j][i]`` is the share of agent i's reward given to j).
    """

    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    shaped: np.ndarray
    svo: np.ndarray
    horizon: int
    terminated: bool = True
    info: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        T, N = self.actions.shape
        for name in ("rewards", "shaped"):
            if getattr(self, name).shape != (T, N):
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {(T, N)}")
        if self.obs.shape[:2] != (T, N):
            raise ValueError(f"obs leading shape {self.obs.shape[:2]} != {(T, N)}")
        if self.svo.shape != (T, N, N):
            raise ValueError(f"svo has shape {self.svo.shape}, expected {(T, N, N)}")
        if T > self.horizon:
            raise ValueError(f"episode of length {T} exceeds horizon {self.horizon}")

    @property
    def length(self) -> int:
        return self.actions.shape[0]

    @property
    def num_agents(self) -> int:
        return self.actions.shape[1]

    def trajectory(self, agent: int) -> Trajectory:
        T = self.length
        steps = tuple(
            StepRecord(
                observation=self.obs[t, agent],
                action=int(self.actions[t, agent]),
                extrinsic_reward=float(self.rewards[t, agent]),
                shaped_reward=float(self.shaped[t, agent]),
                role_embedding=self.svo[t, agent, :].copy(),
                done=self.terminated and t == T - 1,
            )
            for t in range(T)
        )
        return Trajectory(agent=agent, steps=steps, horizon=self.horizon)

    def trajectories(self) -> list[Trajectory]:
        return [self.trajectory(i) for i in range(self.num_agents)]

    @classmethod
    def from_trajectories(cls, trajs: Sequence[Trajectory], svo: np.ndarray | None = None) -> "JointEpisode":
        if not trajs:
            raise ValueError("empty joint trajectory")
        lengths = {len(tr) for tr in trajs}
        if len(lengths) != 1:
            raise ValueError(f"trajectory lengths differ across agents: {sorted(lengths)}")
        if [tr.agent for tr in trajs] != list(range(len(trajs))):
            raise ValueError("trajectories must be ordered by agent id 0..N-1")
        T, N = lengths.pop(), len(trajs)
        obs = np.stack([np.stack([np.asarray(tr.steps[t].observation) for tr in trajs]) for t in range(T)]) if T else np.zeros((0, N))
        acts = np.array([[tr.steps[t].action for tr in trajs] for t in range(T)], dtype=np.int64).reshape(T, N)
        rew = np.array([[tr.steps[t].extrinsic_reward for tr in trajs] for t in range(T)]).reshape(T, N)
        shp = np.array([[tr.steps[t].shaped_reward for tr in trajs] for t in range(T)]).reshape(T, N)
        if svo is None:
            # rows are the recorded role embeddings
            svo = np.array([[tr.steps[t].role_embedding for tr in trajs] for t in range(T)]).reshape(T, N, N)
        terminated = bool(T and trajs[0].steps[-1].done)
        return cls(obs, acts, rew, shp, svo, horizon=trajs[0].horizon, terminated=terminated)


class ReplayBuffer:
    """Bounded FIFO of joint episodes with seeded uniform sampling."""

    def __init__(self, capacity: int = 1000, rng: np.random.Generator | None = None):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.episodes: deque[JointEpisode] = deque(maxlen=capacity)
        self.rng = rng if rng is not None else rng_stream(0, "buffer")
        self.num_agents: int | None = None

    def __len__(self) -> int:
        return len(self.episodes)

    def push(self, episode: JointEpisode | Sequence[Trajectory]) -> "ReplayBuffer":
        if not isinstance(episode, JointEpisode):
            episode = JointEpisode.from_trajectories(list(episode))
        if self.num_agents is None:
            self.num_agents = episode.num_agents
        elif episode.num_agents != self.num_agents:
            raise ValueError(f"episode has {episode.num_agents} agents, buffer holds {self.num_agents}")
        self.episodes.append(episode)
        return self

    def extend(self, episodes: Iterable[JointEpisode]) -> "ReplayBuffer":
        for ep in episodes:
            self.push(ep)
        return self

    def sample(self, batch_size: int) -> list[JointEpisode]:
        if not self.episodes:
            raise ValueError("cannot sample from an empty buffer")
        idx = self.rng.integers(0, len(self.episodes), size=batch_size)
        return [self.episodes[k] for k in idx]

    def sample_steps(self, batch_size: int) -> list[tuple[int, int]]:
        """Uniform (episode index, timestep) pairs over all stored steps."""
        lengths = np.array([ep.length for ep in self.episodes])
        total = int(lengths.sum())
        if total == 0:
            raise ValueError("buffer holds no steps")
        flat = self.rng.integers(0, total, size=batch_size)
        bounds = np.cumsum(lengths)
        ep_idx = np.searchsorted(bounds, flat, side="right")
        starts = bounds - lengths
        return [(int(e), int(f - starts[e])) for e, f in zip(ep_idx, flat)]
