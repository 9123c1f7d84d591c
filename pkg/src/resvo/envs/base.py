from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

KINDS = ("ipd", "escape_room", "cleanup")

CLEANUP_PRESETS = {
    "small": dict(view_size=7, horizon=50, apple_respawn_prob=0.3, depletion_threshold=0.4,
                  restoration_threshold=0.0, waste_spawn_prob=0.5, apple_reward=1.0),
    "big": dict(view_size=15, horizon=400, apple_respawn_prob=0.15, depletion_threshold=0.99,
                restoration_threshold=0.0, waste_spawn_prob=0.15, apple_reward=0.25),
}


@dataclass(frozen=True)
class EnvConfig:
    kind: str = "ipd"
    num_agents: int = 2
    horizon: int = 5
    num_pullers: int = 2
    map: str = "small"
    map_file: str = ""
    view_size: int = 7
    apple_respawn_prob: float = 0.3
    depletion_threshold: float = 0.4
    restoration_threshold: float = 0.0
    waste_spawn_prob: float = 0.5
    apple_reward: float = 1.0
    beam_length: int = 5
    beam_width: int = 3
    shuffle_spawn: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown environment kind {self.kind!r}; expected one of {KINDS}")
        if self.num_agents < 2:
            raise ValueError("at least two agents are required")
        if self.horizon < 1:
            raise ValueError("horizon must be positive")
        if self.kind == "ipd" and self.num_agents != 2:
            raise ValueError("the prisoner's dilemma is a two-agent game")
        if self.kind == "escape_room" and not 0 < self.num_pullers < self.num_agents:
            raise ValueError(f"escape room needs 0 < M < N, got M={self.num_pullers}, N={self.num_agents}")
        if self.kind == "cleanup":
            if self.map not in CLEANUP_PRESETS and not self.map_file:
                raise ValueError(f"unknown cleanup map {self.map!r}")
            if self.view_size < 1 or self.view_size % 2 == 0:
                raise ValueError("view_size must be a positive odd integer")
            if self.beam_length < 1 or self.beam_width < 1 or self.beam_width % 2 == 0:
                raise ValueError("beam_length must be positive and beam_width a positive odd integer")
            if not self.restoration_threshold < self.depletion_threshold:
                raise ValueError("restoration threshold must lie below the depletion threshold")

    @classmethod
    def cleanup(cls, map: str = "small", num_agents: int | None = None, **overrides) -> "EnvConfig":
        n = num_agents if num_agents is not None else (2 if map == "small" else 10)
        return cls(kind="cleanup", map=map, num_agents=n, **{**CLEANUP_PRESETS[map], **overrides})

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def with_(self, **kw) -> "EnvConfig":
        return replace(self, **kw)


def write_ppm(path: str | Path, frame: np.ndarray) -> None:
    """Binary P6 pixmap, written atomically."""
    frame = np.ascontiguousarray(frame, dtype=np.uint8)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ValueError(f"frame must be (H, W, 3), got {frame.shape}")
    h, w, _ = frame.shape
    payload = f"P6\n{w} {h}\n255\n".encode("ascii") + frame.tobytes()
    atomic_write_bytes(Path(path), payload)


def read_ppm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P6":
        raise ValueError("not a P6 pixmap")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError("only 8-bit pixmaps are supported")
    return np.frombuffer(parts[4][: w * h * 3], dtype=np.uint8).reshape(h, w, 3)


def atomic_write_bytes(path: Path, payload: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: Path, text: str) -> None:
    atomic_write_bytes(Path(path), text.encode("utf-8"))


class EpisodeOver(RuntimeError):
    """Raised when stepping a state that has already terminated."""
