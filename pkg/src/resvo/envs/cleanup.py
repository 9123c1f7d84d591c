"""Cleanup: a public-goods gridworld where apples only grow while the river is kept clean."""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .base import EnvConfig, EpisodeOver

UP, DOWN, LEFT, RIGHT, STAY, FIRE_CLEAN = range(6)
MOVES = {UP: (-1, 0), DOWN: (1, 0), LEFT: (0, -1), RIGHT: (0, 1)}

# terrain codes
T_EMPTY, T_RIVER, T_APPLE_FIELD = 0, 1, 2
# observation codes; the observing agent is drawn as SELF_UP + facing
O_EMPTY, O_APPLE, O_WASTE, O_RIVER, O_WALL, O_OTHER, O_SELF_UP = range(7)
NUM_CODES = O_SELF_UP + 4

BACKGROUND = (30, 30, 30)
COLORS = {
    "apple": (40, 200, 70),
    "waste": (120, 80, 40),
    "river": (40, 90, 200),
    "field": (45, 45, 45),
}
AGENT_HUES = [(230, 25, 75), (255, 225, 25), (245, 130, 48), (145, 30, 180), (70, 240, 240),
              (240, 50, 230), (250, 190, 212), (0, 128, 128), (220, 190, 255), (255, 250, 200)]


@dataclass(frozen=True)
class CleanupMap:
    terrain: np.ndarray  # (H, W) terrain codes
    spawns: tuple[tuple[int, int], ...]
    initial_waste: np.ndarray  # bool (H, W), river cells polluted at reset

    @property
    def shape(self) -> tuple[int, int]:
        return self.terrain.shape

    @classmethod
    def parse(cls, text: str) -> "CleanupMap":
        rows = [ln.rstrip("\n") for ln in text.splitlines() if ln.strip()]
        if not rows or len({len(r) for r in rows}) != 1:
            raise ValueError("map rows must be non-empty and of equal width")
        # H marks a river cell that starts polluted
        lookup = {".": T_EMPTY, "S": T_EMPTY, "R": T_RIVER, "H": T_RIVER, "A": T_APPLE_FIELD}
        terrain = np.zeros((len(rows), len(rows[0])), dtype=np.int8)
        waste = np.zeros(terrain.shape, dtype=bool)
        spawns = []
        for r, row in enumerate(rows):
            for c, ch in enumerate(row):
                if ch not in lookup:
                    raise ValueError(f"unknown map character {ch!r} at row {r}, column {c}")
                terrain[r, c] = lookup[ch]
                waste[r, c] = ch == "H"
                if ch == "S":
                    spawns.append((r, c))
        return cls(terrain, tuple(spawns), waste)

    @classmethod
    def load(cls, name: str = "small", path: str | Path = "") -> "CleanupMap":
        if path:
            return cls.parse(Path(path).read_text())
        ref = resources.files("resvo.envs").joinpath("maps", f"cleanup_{name}.txt")
        return cls.parse(ref.read_text())


@dataclass(frozen=True)
class CleanupState:
    terrain: np.ndarray
    waste: np.ndarray  # bool (H, W), only on river cells
    apples: np.ndarray  # bool (H, W), only on apple-field cells
    positions: np.ndarray  # (N, 2) row, col
    facing: np.ndarray  # (N,) one of UP/DOWN/LEFT/RIGHT
    t: int
    done: bool = False
    events: dict | None = None

    @property
    def waste_fraction(self) -> float:
        river = int(np.count_nonzero(self.terrain == T_RIVER))
        return float(np.count_nonzero(self.waste)) / river if river else 0.0


def apple_spawn_rate(waste_fraction: float, config: EnvConfig) -> float:
    """Per-cell apple spawn probability, decaying linearly to zero at the depletion threshold."""
    span = config.depletion_threshold - config.restoration_threshold
    frac = (config.depletion_threshold - waste_fraction) / span
    return config.apple_respawn_prob * min(max(frac, 0.0), 1.0)


class Cleanup:
    kind = "cleanup"
    num_actions = 6
    num_codes = NUM_CODES

    def __init__(self, config: EnvConfig, rng: np.random.Generator | None = None):
        self.config = config
        self.num_agents = config.num_agents
        self.map = CleanupMap.load(config.map, config.map_file)
        if len(self.map.spawns) < self.num_agents:
            raise ValueError(f"map has {len(self.map.spawns)} spawn points for {self.num_agents} agents")
        if not np.any(self.map.terrain == T_RIVER):
            raise ValueError("cleanup map needs at least one river cell")
        self.river_cells = np.argwhere(self.map.terrain == T_RIVER)
        start = np.count_nonzero(self.map.initial_waste) / len(self.river_cells)
        if start <= config.depletion_threshold:
            raise ValueError(
                f"map starts with waste fraction {start:.3f}, which must exceed the depletion threshold "
                f"{config.depletion_threshold}"
            )
        self.field_mask = self.map.terrain == T_APPLE_FIELD
        self.radius = config.view_size // 2
        self.obs_shape = (config.view_size, config.view_size)
        self.rng = rng if rng is not None else np.random.default_rng(config.seed)

    def reset(self) -> tuple[CleanupState, np.ndarray]:
        spawns = np.array(self.map.spawns)
        if self.config.shuffle_spawn:
            spawns = spawns[self.rng.permutation(len(spawns))]
        positions = spawns[: self.num_agents].copy()
        # episodes start polluted above the depletion threshold with an empty orchard
        waste = self.map.initial_waste.copy()
        state = CleanupState(
            terrain=self.map.terrain,
            waste=waste,
            apples=np.zeros_like(waste),
            positions=positions,
            facing=np.full(self.num_agents, UP, dtype=np.int64),
            t=0,
        )
        return state, self.observe(state)

    def observe(self, state: CleanupState) -> np.ndarray:
        H, W = state.terrain.shape
        r = self.radius
        grid = np.full((H, W), O_EMPTY, dtype=np.int8)
        grid[state.terrain == T_RIVER] = O_RIVER
        grid[state.waste] = O_WASTE
        grid[state.apples] = O_APPLE
        grid[state.positions[:, 0], state.positions[:, 1]] = O_OTHER
        padded = np.full((H + 2 * r, W + 2 * r), O_WALL, dtype=np.int8)
        padded[r:r + H, r:r + W] = grid
        v = self.config.view_size
        obs = np.empty((self.num_agents, v, v), dtype=np.int8)
        for i, (y, x) in enumerate(state.positions):
            obs[i] = padded[y:y + v, x:x + v]
            obs[i, r, r] = O_SELF_UP + state.facing[i]
        return obs

    def step(self, state: CleanupState, actions) -> tuple[CleanupState, np.ndarray, np.ndarray, bool]:
        if state.done:
            raise EpisodeOver("step called on a finished cleanup episode")
        acts = np.asarray(actions, dtype=np.int64)
        if acts.shape != (self.num_agents,) or np.any((acts < 0) | (acts >= self.num_actions)):
            raise ValueError(f"invalid joint action {actions!r}")
        H, W = state.terrain.shape
        cfg = self.config
        positions = state.positions.copy()
        facing = state.facing.copy()
        waste = state.waste.copy()
        apples = state.apples.copy()
        rewards = np.zeros(self.num_agents)
        cleaned = np.zeros(self.num_agents, dtype=np.int64)
        collected = np.zeros(self.num_agents, dtype=np.int64)

        # moves resolve in a random order; walking into an occupied cell does nothing
        occupied = {tuple(p) for p in positions}
        for i in self.rng.permutation(self.num_agents):
            a = acts[i]
            if a not in MOVES:
                continue
            facing[i] = a
            dy, dx = MOVES[a]
            ny, nx = positions[i, 0] + dy, positions[i, 1] + dx
            if 0 <= ny < H and 0 <= nx < W and (ny, nx) not in occupied:
                occupied.discard(tuple(positions[i]))
                positions[i] = (ny, nx)
                occupied.add((ny, nx))

        for i in range(self.num_agents):
            y, x = positions[i]
            if apples[y, x]:
                apples[y, x] = False
                rewards[i] += cfg.apple_reward
                collected[i] += 1

        half = cfg.beam_width // 2
        for i in np.flatnonzero(acts == FIRE_CLEAN):
            dy, dx = MOVES[facing[i]]
            y0, x0 = positions[i]
            # a beam_width-wide strip reaching beam_length cells ahead
            for d in range(1, cfg.beam_length + 1):
                for s in range(-half, half + 1):
                    y, x = y0 + d * dy + s * dx, x0 + d * dx + s * dy
                    if 0 <= y < H and 0 <= x < W and waste[y, x]:
                        waste[y, x] = False
                        cleaned[i] += 1

        river_total = len(self.river_cells)
        waste_fraction = np.count_nonzero(waste) / river_total
        rate = apple_spawn_rate(waste_fraction, cfg)
        if rate > 0.0:
            free = self.field_mask & ~apples
            free[positions[:, 0], positions[:, 1]] = False
            draws = self.rng.random(free.shape)
            apples |= free & (draws < rate)
        if waste_fraction < cfg.depletion_threshold:
            # at most one waste cell per step: each vacant river cell tried in turn with the spawn probability
            vacant = self.river_cells[~waste[self.river_cells[:, 0], self.river_cells[:, 1]]]
            if len(vacant):
                order = self.rng.permutation(len(vacant))
                hits = np.flatnonzero(self.rng.random(len(vacant)) < cfg.waste_spawn_prob)
                if len(hits):
                    y, x = vacant[order[hits[0]]]
                    waste[y, x] = True

        t = state.t + 1
        done = t >= cfg.horizon
        events = {"waste_cleaned": cleaned, "apples_collected": collected}
        nxt = CleanupState(state.terrain, waste, apples, positions, facing, t, done, events)
        return nxt, self.observe(nxt), rewards, done

    def render(self, state: CleanupState, scale: int = 1) -> np.ndarray:
        H, W = state.terrain.shape
        frame = np.empty((H, W, 3), dtype=np.uint8)
        frame[:] = BACKGROUND
        frame[state.terrain == T_RIVER] = COLORS["river"]
        frame[state.waste] = COLORS["waste"]
        frame[state.apples] = COLORS["apple"]
        for i, (y, x) in enumerate(state.positions):
            frame[y, x] = AGENT_HUES[i % len(AGENT_HUES)]
        if scale > 1:
            frame = np.kron(frame, np.ones((scale, scale, 1), dtype=np.uint8))
        return frame
