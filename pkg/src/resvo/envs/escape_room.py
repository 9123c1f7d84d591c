from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import EnvConfig, EpisodeOver

START, LEVER, DOOR = 0, 1, 2
GO_START, GO_LEVER, GO_DOOR = START, LEVER, DOOR
EXIT_REWARD = 10.0
MOVE_COST = 1.0


@dataclass(frozen=True)
class EscapeRoomState:
    positions: tuple[int, ...]
    t: int
    done: bool = False
    events: dict | None = None


class EscapeRoom:
    """N agents; an agent at the door exits for +10 once M others stand at the lever."""

    kind = "escape_room"
    num_actions = 3

    def __init__(self, config: EnvConfig, rng: np.random.Generator | None = None):
        self.config = config
        self.num_agents = config.num_agents
        self.num_pullers = config.num_pullers
        self.obs_shape = (self.num_agents,)
        self.rng = rng

    def reset(self) -> tuple[EscapeRoomState, np.ndarray]:
        state = EscapeRoomState(positions=(START,) * self.num_agents, t=0)
        return state, self.observe(state)

    def observe(self, state: EscapeRoomState) -> np.ndarray:
        pos = np.asarray(state.positions, dtype=np.int64)
        return np.tile(pos, (self.num_agents, 1))

    def step(self, state: EscapeRoomState, actions) -> tuple[EscapeRoomState, np.ndarray, np.ndarray, bool]:
        if state.done:
            raise EpisodeOver("step called on a finished escape room episode")
        acts = [int(a) for a in actions]
        if len(acts) != self.num_agents or any(a not in (0, 1, 2) for a in acts):
            raise ValueError(f"invalid joint action {actions!r}")
        old = state.positions
        new = tuple(acts)
        rewards = np.array([-MOVE_COST if n != o else 0.0 for o, n in zip(old, new)])
        at_lever = sum(p == LEVER for p in new)
        exited = np.zeros(self.num_agents, dtype=np.int64)
        for i, p in enumerate(new):
            # the agent itself never stands at the lever while at the door
            if p == DOOR and at_lever >= self.num_pullers:
                rewards[i] += EXIT_REWARD
                exited[i] = 1
        t = state.t + 1
        done = bool(exited.any()) or t >= self.config.horizon
        events = {
            "levers_pulled": np.array([p == LEVER for p in new], dtype=np.int64),
            "door_exits": exited,
        }
        nxt = EscapeRoomState(positions=new, t=t, done=done, events=events)
        return nxt, self.observe(nxt), rewards, done

    def render(self, state: EscapeRoomState, scale: int = 8) -> np.ndarray:
        palette = np.array([(230, 25, 75), (60, 180, 75), (0, 130, 200), (245, 130, 48),
                            (145, 30, 180), (70, 240, 240), (240, 50, 230), (210, 245, 60)], dtype=np.uint8)
        frame = np.full((self.num_agents, 3, 3), 235, dtype=np.uint8)
        for i, p in enumerate(state.positions):
            frame[i, p] = palette[i % len(palette)]
        return np.kron(frame, np.ones((scale, scale, 1), dtype=np.uint8))
