"""Closed-form learning dynamics of reward sharing in the one-shot prisoner's dilemma.

``theta_i`` is agent i's probability of cooperating. Agent i's sharing
parameters are ``w_i = [wC_ii, wC_ij, wD_ii, wD_ij]``: the ratio it keeps
(``ii``) or hands to the other agent (``ij``) when the other agent plays C or D.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .envs.base import atomic_write_text

W_NAMES = ("wC11", "wC12", "wD11", "wD12", "wC21", "wC22", "wD21", "wD22")
TRAJECTORY_HEADER = ["round", "theta1", "theta2", "w1_0", "w1_1", "w1_2", "w1_3", "w2_0", "w2_1", "w2_2", "w2_3"]
FIELD_HEADER = ["x_name", "y_name", "x", "y", "dx", "dy"]


@dataclass(frozen=True)
class AnalyzerState:
    theta1: float = 0.5
    theta2: float = 0.5
    w1: tuple[float, float, float, float] = (1.0, 0.0, 1.0, 0.0)
    w2: tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0)
    zeta: float = 1e-3
    beta: float = 1e-3
    gamma: float = 0.99

    def __post_init__(self) -> None:
        if len(self.w1) != 4 or len(self.w2) != 4:
            raise ValueError("w1 and w2 must each have four entries")
        object.__setattr__(self, "w1", tuple(float(x) for x in self.w1))
        object.__setattr__(self, "w2", tuple(float(x) for x in self.w2))

    def _horizon(self) -> float:
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1) for the discounted closed form, got {self.gamma}")
        return 1.0 / (1.0 - self.gamma)

    def row(self, round_index: int) -> list:
        return [round_index, self.theta1, self.theta2, *self.w1, *self.w2]


def policy_deltas(state: AnalyzerState) -> tuple[float, float]:
    """Per-step changes (d_theta1, d_theta2) of the cooperation probabilities."""
    h = state._horizon()
    wC11, wC12, wD11, wD12 = state.w1
    wC21, wC22, wD21, wD22 = state.w2
    d1 = state.zeta * h * ((3 * wD11 - wC11 - wC21) * state.theta2 - 2 * (wD11 + wD21))
    d2 = state.zeta * h * ((3 * wD22 - wC12 - wC22) * state.theta1 - 2 * (wD12 + wD22))
    return d1, d2


def orientation_deltas(state: AnalyzerState) -> tuple[np.ndarray, np.ndarray]:
    """Per-step changes of w1 and w2; independent of the current w."""
    h = state._horizon()
    c = state.zeta * state.beta * h * h
    t1, t2 = state.theta1, state.theta2
    dw1 = c * np.array([t2, -2 * t1, -(3 * t2 - 2), -4.0])
    dw2 = c * np.array([-2 * t2, t1, -4.0, -(3 * t1 - 2)])
    return dw1, dw2


def policy_step(state: AnalyzerState) -> AnalyzerState:
    d1, d2 = policy_deltas(state)
    return replace(state, theta1=float(np.clip(state.theta1 + d1, 0.0, 1.0)),
                   theta2=float(np.clip(state.theta2 + d2, 0.0, 1.0)))


def orientation_step(state: AnalyzerState) -> AnalyzerState:
    dw1, dw2 = orientation_deltas(state)
    return replace(state, w1=tuple(np.add(state.w1, dw1)), w2=tuple(np.add(state.w2, dw2)))


def run_dynamics(initial: AnalyzerState, rounds: int, policy_steps_per_round: int = 10) -> list[AnalyzerState]:
    """Alternate a block of policy steps with one orientation step; returns every round's state."""
    if rounds < 0:
        raise ValueError("rounds must be nonnegative")
    if policy_steps_per_round < 1:
        raise ValueError("at least one policy step per round is required")
    initial._horizon()
    states = [initial]
    s = initial
    for _ in range(rounds):
        for _ in range(policy_steps_per_round):
            s = policy_step(s)
        s = orientation_step(s)
        states.append(s)
    return states


@dataclass
class VectorFieldGrid:
    x_name: str
    y_name: str
    xs: np.ndarray
    ys: np.ndarray
    dx: np.ndarray = field(repr=False)  # (len(ys), len(xs))
    dy: np.ndarray = field(repr=False)

    def rows(self) -> list[list]:
        out = []
        for a, y in enumerate(self.ys):
            for b, x in enumerate(self.xs):
                out.append([self.x_name, self.y_name, x, y, self.dx[a, b], self.dy[a, b]])
        return out


def _axis(lo: float, hi: float, n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("grid resolution must be positive")
    return np.linspace(lo, hi, n) if n > 1 else np.array([lo])


def emit_vector_field(w1, w2, resolution: int = 21, zeta: float = 1e-3, gamma: float = 0.99,
                      lo: float = 0.0, hi: float = 1.0) -> VectorFieldGrid:
    """(d_theta1, d_theta2) over a grid of cooperation probabilities."""
    xs, ys = _axis(lo, hi, resolution), _axis(lo, hi, resolution)
    dx = np.empty((len(ys), len(xs)))
    dy = np.empty_like(dx)
    base = AnalyzerState(w1=tuple(w1), w2=tuple(w2), zeta=zeta, gamma=gamma)
    for a, y in enumerate(ys):
        for b, x in enumerate(xs):
            dx[a, b], dy[a, b] = policy_deltas(replace(base, theta1=float(x), theta2=float(y)))
    return VectorFieldGrid("theta1", "theta2", xs, ys, dx, dy)


def emit_orientation_field(theta1: float, theta2: float, x_name: str = "wC11", y_name: str = "wC12",
                           w1=(1.0, 0.0, 1.0, 0.0), w2=(0.0, 1.0, 0.0, 1.0), resolution: int = 21,
                           lo: float = -5.0, hi: float = 5.0, zeta: float = 1e-3, beta: float = 1e-3,
                           gamma: float = 0.99) -> VectorFieldGrid:
    """Orientation-parameter displacements over a grid of two chosen w components."""
    for name in (x_name, y_name):
        if name not in W_NAMES:
            raise ValueError(f"unknown orientation component {name!r}; expected one of {W_NAMES}")
    xs, ys = _axis(lo, hi, resolution), _axis(lo, hi, resolution)
    ix, iy = W_NAMES.index(x_name), W_NAMES.index(y_name)
    dx = np.empty((len(ys), len(xs)))
    dy = np.empty_like(dx)
    for a, y in enumerate(ys):
        for b, x in enumerate(xs):
            w = np.array([*w1, *w2], dtype=np.float64)
            w[ix], w[iy] = x, y
            s = AnalyzerState(theta1, theta2, tuple(w[:4]), tuple(w[4:]), zeta, beta, gamma)
            d = np.concatenate(orientation_deltas(s))
            dx[a, b], dy[a, b] = d[ix], d[iy]
    return VectorFieldGrid(x_name, y_name, xs, ys, dx, dy)


def converged_to_cooperation(states: list[AnalyzerState], reach: float = 0.95, stay: float = 0.9) -> bool:
    """True if both thetas reach ``reach`` and never fall below ``stay`` afterwards."""
    for k, s in enumerate(states):
        if s.theta1 >= reach and s.theta2 >= reach:
            return all(min(t.theta1, t.theta2) >= stay for t in states[k:])
    return False


def _csv_text(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([f"{v:.9g}" if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def write_field_csv(path: str | Path, grid: VectorFieldGrid) -> None:
    atomic_write_text(Path(path), _csv_text(FIELD_HEADER, grid.rows()))


def write_trajectory_csv(path: str | Path, states: list[AnalyzerState]) -> None:
    atomic_write_text(Path(path), _csv_text(TRAJECTORY_HEADER, [s.row(k) for k, s in enumerate(states)]))
