"""Observation construction: normalized ego state plus a temporal context.

Each agent observes its own 12D physical state and a feature vector distilled
from a ring buffer of recent snapshots. A snapshot holds the 3D relative
positions of the closest opponents, the horizontal (x, y) offsets to the
next gates (tracks are planar circuits; gate altitude is constant), and the
agent's own last 4D action. The context is either a strided subsample of
the buffer (default: 5 snapshots, 10 steps apart, newest first) or, for
ablations, the full flattened buffer.

All features are normalized to O(1): positions and velocities by fixed
scales, angles by pi, actions are already in (-1, 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ObservationConfig:
    history_len: int = 50          # K: snapshots kept per agent
    n_opponents: int = 2           # M_o: closest opponents per snapshot
    n_gates_ahead: int = 2         # M_g: upcoming gates per snapshot
    snapshot_count: int = 5        # snapshots sampled for the strided context
    snapshot_stride: int = 10      # steps between sampled snapshots
    mode: str = "strided"          # "strided" | "full"
    pos_scale: float = 10.0        # m
    vel_scale: float = 10.0        # m/s
    rate_scale: float = 10.0       # rad/s

    def __post_init__(self):
        if self.mode not in ("strided", "full"):
            raise ValueError(f"unknown context mode {self.mode!r}")
        if self.history_len < 1 or self.snapshot_count < 1 or self.snapshot_stride < 1:
            raise ValueError("buffer geometry must be positive")
        if (self.snapshot_count - 1) * self.snapshot_stride >= self.history_len:
            raise ValueError("strided sampling reaches past the history buffer")

    @property
    def snapshot_dim(self) -> int:
        return 3 * self.n_opponents + 2 * self.n_gates_ahead + 4

    @property
    def context_dim(self) -> int:
        rows = self.history_len if self.mode == "full" else self.snapshot_count
        return rows * self.snapshot_dim

    @property
    def total_dim(self) -> int:
        return 12 + self.context_dim


@dataclass(eq=False)
class Observation:
    """Normalized ego 12-vector plus the flattened context features."""

    ego: np.ndarray
    context: np.ndarray
    vector: np.ndarray = field(init=False)

    def __post_init__(self):
        self.vector = np.concatenate([self.ego, self.context])


class HistoryBuffer:
    """Fixed-capacity ring of snapshots; pre-episode slots read as zeros."""

    def __init__(self, cfg: ObservationConfig):
        self.cfg = cfg
        self._rows = np.zeros((cfg.history_len, cfg.snapshot_dim))
        self._head = 0  # index of the next write

    def reset(self) -> None:
        self._rows[:] = 0.0
        self._head = 0

    def append(self, snapshot: np.ndarray) -> None:
        if snapshot.shape != (self.cfg.snapshot_dim,):
            raise ValueError(f"snapshot must have shape ({self.cfg.snapshot_dim},)")
        self._rows[self._head] = snapshot
        self._head = (self._head + 1) % self.cfg.history_len

    def recent(self, steps_back: int) -> np.ndarray:
        """Snapshot from ``steps_back`` appends ago (0 = newest)."""
        idx = (self._head - 1 - steps_back) % self.cfg.history_len
        return self._rows[idx]

    def context(self) -> np.ndarray:
        """Flattened context features, newest first."""
        cfg = self.cfg
        if cfg.mode == "full":
            rows = [self.recent(k) for k in range(cfg.history_len)]
        else:
            rows = [self.recent(k * cfg.snapshot_stride) for k in range(cfg.snapshot_count)]
        return np.concatenate(rows)


def make_snapshot(
    cfg: ObservationConfig,
    ego_position: np.ndarray,
    opponent_positions: list[np.ndarray],
    gate_centers: np.ndarray,
    action: np.ndarray,
) -> np.ndarray:
    """Assemble one buffer row from world-frame positions and the last action.

    Opponents are sorted by distance (closest first); missing opponent and
    gate slots are zero-filled. ``action`` is the normalized 4-vector the
    agent last emitted.
    """
    out = np.zeros(cfg.snapshot_dim)
    rel = [np.asarray(p, dtype=np.float64) - ego_position for p in opponent_positions]
    rel.sort(key=lambda r: float(np.dot(r, r)))
    for k, r in enumerate(rel[: cfg.n_opponents]):
        out[3 * k : 3 * k + 3] = r / cfg.pos_scale
    base = 3 * cfg.n_opponents
    for k in range(min(len(gate_centers), cfg.n_gates_ahead)):
        out[base + 2 * k : base + 2 * k + 2] = (gate_centers[k][0:2] - ego_position[0:2]) / cfg.pos_scale
    out[base + 2 * cfg.n_gates_ahead :] = action
    return out


def normalize_ego(cfg: ObservationConfig, state_vector: np.ndarray) -> np.ndarray:
    """Scale a raw 12D state into the normalized ego observation."""
    ego = np.empty(12)
    ego[0:3] = state_vector[0:3] / cfg.pos_scale
    ego[3:6] = state_vector[3:6] / cfg.vel_scale
    ego[6:9] = state_vector[6:9] / np.pi
    ego[9:12] = state_vector[9:12] / cfg.rate_scale
    return ego


def build_observation(cfg: ObservationConfig, state_vector: np.ndarray, buffer: HistoryBuffer) -> Observation:
    """Concatenate the normalized ego state with the buffer's context."""
    return Observation(ego=normalize_ego(cfg, state_vector), context=buffer.context())
