from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .base import EnvConfig, EpisodeOver

COOPERATE, DEFECT = 0, 1
START = 0  # observation index before the first round; joint action (a1, a2) maps to 1 + 2*a1 + a2

PAYOFF = {
    (COOPERATE, COOPERATE): (-1.0, -1.0),
    (COOPERATE, DEFECT): (-3.0, 0.0),
    (DEFECT, COOPERATE): (0.0, -3.0),
    (DEFECT, DEFECT): (-2.0, -2.0),
}


@dataclass(frozen=True)
class IPDState:
    last: int  # START or 1 + 2*a1 + a2
    t: int
    done: bool = False
    events: dict | None = None


class IteratedPrisonersDilemma:
    kind = "ipd"
    num_actions = 2
    obs_shape: tuple[int, ...] = ()
    num_obs = 5

    def __init__(self, config: EnvConfig, rng: np.random.Generator | None = None):
        self.config = config
        self.num_agents = 2
        self.rng = rng

    def reset(self) -> tuple[IPDState, np.ndarray]:
        state = IPDState(last=START, t=0)
        return state, self.observe(state)

    def observe(self, state: IPDState) -> np.ndarray:
        return np.full(2, state.last, dtype=np.int64)

    def step(self, state: IPDState, actions) -> tuple[IPDState, np.ndarray, np.ndarray, bool]:
        if state.done:
            raise EpisodeOver("step called on a finished prisoner's dilemma episode")
        a1, a2 = (int(a) for a in actions)
        if a1 not in (0, 1) or a2 not in (0, 1):
            raise ValueError(f"invalid joint action {actions!r}")
        rewards = np.array(PAYOFF[(a1, a2)])
        t = state.t + 1
        done = t >= self.config.horizon
        events = {"cooperations": np.array([a1 == COOPERATE, a2 == COOPERATE], dtype=np.int64)}
        nxt = IPDState(last=1 + 2 * a1 + a2, t=t, done=done, events=events)
        return nxt, self.observe(nxt), rewards, done

    def render(self, state: IPDState, scale: int = 8) -> np.ndarray:
        colors = {COOPERATE: (40, 160, 60), DEFECT: (190, 40, 40)}
        frame = np.full((1, 2, 3), 90, dtype=np.uint8)
        if state.last != START:
            a1, a2 = divmod(state.last - 1, 2)
            frame[0, 0] = colors[a1]
            frame[0, 1] = colors[a2]
        return np.kron(frame, np.ones((scale, scale, 1), dtype=np.uint8))
