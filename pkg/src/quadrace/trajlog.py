"""Trajectory logs: one CSV row per policy step per drone.

Header comments carry the format version and the config hashes; the column
row is fixed (see COLUMNS). Reward component columns are the four weighted
terms and must sum to the logged total (validated on read), which makes a
log self-checking without access to the reward weights.

    # quadrace-trajlog v1
    # config_hash=...
    # compat_hash=...
    sim_time,drone,px,...,r_total,next_gate,gate_passes,collision,lap
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

FORMAT_LINE = "# quadrace-trajlog v1"
COLUMNS = [
    "sim_time", "drone",
    "px", "py", "pz", "vx", "vy", "vz", "roll", "pitch", "yaw", "wx", "wy", "wz",
    "ax", "ay", "az", "ayaw",
    "r_progress", "r_collision", "r_alignment", "r_laptime", "r_total",
    "next_gate", "gate_passes", "collision", "lap",
]
_SUM_TOL = 1e-9


class TrajectoryLogError(ValueError):
    """Malformed or internally inconsistent trajectory log."""


class TrajectoryWriter:
    """Streams policy-step records for every drone of one environment."""

    def __init__(self, path: str | Path, config_hash: str = "", compat_hash: str = ""):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self._f = open(path, "w")
        self._f.write(FORMAT_LINE + "\n")
        self._f.write(f"# config_hash={config_hash}\n")
        self._f.write(f"# compat_hash={compat_hash}\n")
        self._f.write(",".join(COLUMNS) + "\n")

    def record_step(self, env, infos: list[dict]) -> None:
        """Append one row per still-live drone from an env step's infos."""
        race = env.race
        t = race.sim_time
        for i, info in enumerate(infos):
            if info.get("was_done"):
                continue
            comps = info["reward_components"]
            x = race.states[i]
            target = info["target"]
            row = [
                f"{t:.9f}", str(i),
                *(f"{v:.9g}" for v in x),
                f"{target[0]:.9g}", f"{target[1]:.9g}", f"{target[2]:.9g}",
                f"{info['target_yaw']:.9g}",
                f"{comps[0]:.12g}", f"{comps[1]:.12g}", f"{comps[2]:.12g}", f"{comps[3]:.12g}",
                f"{comps.sum():.12g}",
                str(int(race.next_gate[i])),
                str(info["gate_passes"]),
                str(int(info["collided"])),
                str(int(info["lap_time"] is not None)),
            ]
            self._f.write(",".join(row) + "\n")

    def close(self) -> None:
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass
class TrajectoryRow:
    sim_time: float
    drone: int
    state: np.ndarray          # 12D
    action: np.ndarray         # target x, y, z, yaw
    components: np.ndarray     # 4 weighted reward terms
    total: float
    next_gate: int
    gate_passes: int
    collision: bool
    lap: bool


def read_log(path: str | Path):
    """Parse and validate a log; returns (metadata, rows).

    Raises TrajectoryLogError naming the offending row for malformed lines,
    reward sums that disagree with the logged total, or non-monotone time.
    """
    path = Path(path)
    meta: dict = {}
    rows: list[TrajectoryRow] = []
    last_time: dict[int, float] = {}
    with open(path) as f:
        lines = f.readlines()
    body_started = False
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            if "=" in line:
                key, _, value = line[1:].strip().partition("=")
                meta[key.strip()] = value.strip()
            continue
        if not body_started:
            if line != ",".join(COLUMNS):
                raise TrajectoryLogError(f"{path}:{lineno}: unexpected column header")
            body_started = True
            continue
        parts = line.split(",")
        if len(parts) != len(COLUMNS):
            raise TrajectoryLogError(
                f"{path}:{lineno}: expected {len(COLUMNS)} fields, got {len(parts)}"
            )
        try:
            t = float(parts[0])
            drone = int(parts[1])
            state = np.array([float(v) for v in parts[2:14]])
            action = np.array([float(v) for v in parts[14:18]])
            comps = np.array([float(v) for v in parts[18:22]])
            total = float(parts[22])
            next_gate = int(parts[23])
            gate_passes = int(parts[24])
            collision = bool(int(parts[25]))
            lap = bool(int(parts[26]))
        except ValueError as e:
            raise TrajectoryLogError(f"{path}:{lineno}: {e}") from e
        if abs(comps.sum() - total) > _SUM_TOL:
            raise TrajectoryLogError(
                f"{path}:{lineno}: reward components sum to {comps.sum()!r}, total says {total!r}"
            )
        if drone in last_time and t < last_time[drone]:
            raise TrajectoryLogError(f"{path}:{lineno}: sim time not monotone for drone {drone}")
        last_time[drone] = t
        rows.append(
            TrajectoryRow(
                sim_time=t, drone=drone, state=state, action=action,
                components=comps, total=total, next_gate=next_gate,
                gate_passes=gate_passes, collision=collision, lap=lap,
            )
        )
    return meta, rows


def export_plot_data(path: str | Path, out_dir: str | Path) -> list[Path]:
    """Emit per-drone path, speed, and reward time series as delimited text.

    Validates the log while streaming; returns the files written.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta, rows = read_log(path)
    by_drone: dict[int, list[TrajectoryRow]] = {}
    for r in rows:
        by_drone.setdefault(r.drone, []).append(r)
    written = []
    for drone, drows in sorted(by_drone.items()):
        p = out_dir / f"path_drone{drone}.csv"
        with open(p, "w") as f:
            f.write("sim_time,x,y,z,gate_pass,lap\n")
            for r in drows:
                f.write(
                    f"{r.sim_time:.9f},{r.state[0]:.9g},{r.state[1]:.9g},{r.state[2]:.9g},"
                    f"{r.gate_passes},{int(r.lap)}\n"
                )
        written.append(p)
        p = out_dir / f"speed_drone{drone}.csv"
        with open(p, "w") as f:
            f.write("sim_time,speed\n")
            for r in drows:
                speed = float(np.linalg.norm(r.state[3:6]))
                f.write(f"{r.sim_time:.9f},{speed:.9g}\n")
        written.append(p)
        p = out_dir / f"rewards_drone{drone}.csv"
        with open(p, "w") as f:
            f.write("sim_time,r_progress,r_collision,r_alignment,r_laptime,r_total\n")
            for r in drows:
                f.write(
                    f"{r.sim_time:.9f},"
                    + ",".join(f"{v:.12g}" for v in r.components)
                    + f",{r.total:.12g}\n"
                )
        written.append(p)
    return written
