"""Gate-circuit geometry: gates, the closed centerline, and race progress.

The centerline is the closed piecewise-linear loop through the gate centers;
race progress is the arc position of a drone's projection onto it. To keep
the projection from jumping to a distant part of the loop when the circuit
folds near itself, projections are restricted to a window of segments around
the drone's last known segment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

_UP = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True, eq=False)
class Gate:
    """One rectangular gate: a center, a passing direction, and an aperture."""

    center: np.ndarray
    normal: np.ndarray          # unit vector; passing direction
    half_width: float = 0.5
    half_height: float = 0.5
    frame_thickness: float = 0.1

    def __post_init__(self):
        center = np.asarray(self.center, dtype=np.float64)
        normal = np.asarray(self.normal, dtype=np.float64)
        norm = np.linalg.norm(normal)
        if norm < 1e-9:
            raise ValueError("gate normal must be non-zero")
        normal = normal / norm
        if self.half_width <= 0.0 or self.half_height <= 0.0:
            raise ValueError("gate aperture must be positive")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "normal", normal)
        # In-plane frame: u spans the width (horizontal when possible), v the height.
        u = np.cross(_UP, normal)
        if np.linalg.norm(u) < 1e-9:
            u = np.cross(normal, np.array([1.0, 0.0, 0.0]))
        u = u / np.linalg.norm(u)
        object.__setattr__(self, "u_axis", u)
        object.__setattr__(self, "v_axis", np.cross(normal, u))

    u_axis: np.ndarray = field(init=False, repr=False)
    v_axis: np.ndarray = field(init=False, repr=False)


@dataclass(frozen=True, eq=False)
class Track:
    """Ordered gates forming a closed circuit plus the world bounding box."""

    gates: tuple[Gate, ...]
    world_min: np.ndarray
    world_max: np.ndarray

    def __post_init__(self):
        if len(self.gates) < 3:
            raise ValueError("a track needs at least 3 gates")
        object.__setattr__(self, "gates", tuple(self.gates))
        object.__setattr__(self, "world_min", np.asarray(self.world_min, dtype=np.float64))
        object.__setattr__(self, "world_max", np.asarray(self.world_max, dtype=np.float64))
        if np.any(self.world_min >= self.world_max):
            raise ValueError("world bounds must form a non-empty box")
        pts = np.array([g.center for g in self.gates])
        seg = np.roll(pts, -1, axis=0) - pts
        seg_len = np.linalg.norm(seg, axis=1)
        if np.any(seg_len < 1e-9):
            raise ValueError("consecutive gate centers must be distinct")
        object.__setattr__(self, "centerline", pts)
        object.__setattr__(self, "segment_lengths", seg_len)
        object.__setattr__(self, "segment_starts", np.concatenate([[0.0], np.cumsum(seg_len)[:-1]]))
        object.__setattr__(self, "total_length", float(seg_len.sum()))

    centerline: np.ndarray = field(init=False, repr=False)        # (G, 3) gate centers
    segment_lengths: np.ndarray = field(init=False, repr=False)   # (G,)
    segment_starts: np.ndarray = field(init=False, repr=False)    # (G,) arc of each vertex
    total_length: float = field(init=False, repr=False)

    @property
    def n_gates(self) -> int:
        return len(self.gates)


def circular_track(
    n_gates: int = 6,
    radius: float = 5.0,
    altitude: float = 1.5,
    half_width: float = 0.5,
    half_height: float = 0.5,
    frame_thickness: float = 0.1,
    bounds_margin: float = 4.0,
    height: float = 5.0,
) -> Track:
    """Planar circuit: gate centers on a circle, normals along travel (CCW)."""
    gates = []
    for i in range(n_gates):
        a = 2.0 * math.pi * i / n_gates
        center = np.array([radius * math.cos(a), radius * math.sin(a), altitude])
        normal = np.array([-math.sin(a), math.cos(a), 0.0])
        gates.append(
            Gate(center=center, normal=normal, half_width=half_width,
                 half_height=half_height, frame_thickness=frame_thickness)
        )
    r = radius + bounds_margin
    return Track(
        gates=tuple(gates),
        world_min=np.array([-r, -r, 0.0]),
        world_max=np.array([r, r, height]),
    )


def gate_passed(prev_pos, new_pos, gate: Gate) -> bool:
    """True iff the segment prev->new crosses the gate aperture along +normal."""
    prev_pos = np.asarray(prev_pos, dtype=np.float64)
    new_pos = np.asarray(new_pos, dtype=np.float64)
    d0 = float(np.dot(prev_pos - gate.center, gate.normal))
    d1 = float(np.dot(new_pos - gate.center, gate.normal))
    if not (d0 < 0.0 <= d1):
        return False
    t = d0 / (d0 - d1)
    hit = prev_pos + t * (new_pos - prev_pos) - gate.center
    return (
        abs(float(np.dot(hit, gate.u_axis))) <= gate.half_width
        and abs(float(np.dot(hit, gate.v_axis))) <= gate.half_height
    )


def progress_delta(prev_arc: float, new_arc: float, track: Track) -> float:
    """Signed shortest wrap-around arc difference new - prev on the loop."""
    length = track.total_length
    d = (new_arc - prev_arc) % length
    if d > 0.5 * length:
        d -= length
    return d


def project_arc(track: Track, position, segment_hint: int) -> tuple[float, int]:
    """Arc position of the orthogonal projection onto the centerline.

    Only the segments adjacent to ``segment_hint`` are considered, which keeps
    the projection continuous as the drone moves. Returns (arc, new_hint).
    """
    position = np.asarray(position, dtype=np.float64)
    n = track.n_gates
    best_d2 = math.inf
    best_arc = 0.0
    best_seg = segment_hint
    for off in (-1, 0, 1):
        j = (segment_hint + off) % n
        a = track.centerline[j]
        b = track.centerline[(j + 1) % n]
        ab = b - a
        t = float(np.dot(position - a, ab) / np.dot(ab, ab))
        t = min(max(t, 0.0), 1.0)
        p = a + t * ab
        d2 = float(np.dot(position - p, position - p))
        if d2 < best_d2:
            best_d2 = d2
            best_arc = track.segment_starts[j] + t * track.segment_lengths[j]
            best_seg = j
    return best_arc, best_seg


def point_at_arc(track: Track, arc: float) -> np.ndarray:
    """Point on the centerline at a given arc position (wraps around)."""
    s = arc % track.total_length
    j = int(np.searchsorted(track.segment_starts, s, side="right")) - 1
    t = (s - track.segment_starts[j]) / track.segment_lengths[j]
    a = track.centerline[j]
    b = track.centerline[(j + 1) % track.n_gates]
    return a + t * (b - a)


def tangent_at_arc(track: Track, arc: float) -> np.ndarray:
    """Unit travel direction of the centerline at a given arc position."""
    s = arc % track.total_length
    j = int(np.searchsorted(track.segment_starts, s, side="right")) - 1
    a = track.centerline[j]
    b = track.centerline[(j + 1) % track.n_gates]
    d = b - a
    return d / np.linalg.norm(d)
