"""The multi-drone race environment.

One policy step holds each agent's setpoint fixed while the PID controller
and rigid-body dynamics run a fixed number of physics substeps (default 5 at
240 Hz, i.e. a 48 Hz policy). Gate passes, centerline progress, collisions,
and lap completions are detected on every substep inside a compiled kernel;
rewards, history buffers, and observations are assembled per policy step.

Collision model: drones are spheres; each gate contributes four frame boxes
around its aperture; leaving the world bounds (including the ground, the
lower z bound) is a collision. Excessive tilt or a diverged integration also
crashes the drone. Crashed and finished drones freeze in place and are
dropped from subsequent collision checks.

For throughput, the environment keeps all per-drone data in packed arrays
and runs the pre/substep/post phases as numba kernels; ``observations`` and
``build_observation`` provide the equivalent (and test-checked) reference
path over the typed API.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit

from .control import ControllerState, PidGains, Setpoint, _pid_step, default_gains
from .dynamics import TILT_LIMIT, DroneParams, DroneState, _rk4_step, _wrap_pi
from .observations import HistoryBuffer, Observation, ObservationConfig, build_observation
from .rewards import RewardWeights, StepFacts, compute_reward
from .track import Track

CRASH_NONE = 0
CRASH_COLLISION = 1   # drone, gate frame, ground, or world bounds
CRASH_ATTITUDE = 2    # tilt guard exceeded or integration diverged


@njit(cache=True)
def _project_windowed(poly, seg_len, seg_start, n_seg, pos, hint):
    """Arc of the projection onto segments adjacent to ``hint``."""
    best_d2 = 1e300
    best_arc = 0.0
    best_seg = hint
    for off in range(-1, 2):
        j = (hint + off) % n_seg
        jn = (j + 1) % n_seg
        bx = poly[jn, 0] - poly[j, 0]
        by = poly[jn, 1] - poly[j, 1]
        bz = poly[jn, 2] - poly[j, 2]
        px = pos[0] - poly[j, 0]
        py = pos[1] - poly[j, 1]
        pz = pos[2] - poly[j, 2]
        t = (px * bx + py * by + pz * bz) / (bx * bx + by * by + bz * bz)
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
        dx = px - t * bx
        dy = py - t * by
        dz = pz - t * bz
        d2 = dx * dx + dy * dy + dz * dz
        if d2 < best_d2:
            best_d2 = d2
            best_arc = seg_start[j] + t * seg_len[j]
            best_seg = j
    return best_arc, best_seg


@njit(cache=True)
def _hits_gate_frame(u, v, w, hw, hh, ft, radius):
    """Sphere vs the four frame boxes of one gate, in gate-local coords."""
    half_t = 0.5 * ft
    dw = abs(w) - half_t
    if dw < 0.0:
        dw = 0.0
    if dw > radius:
        return False
    outer_u = hw + ft
    outer_v = hh + ft
    r2 = radius * radius
    # (u0, u1, v0, v1) per bar: left, right, bottom, top
    for k in range(4):
        if k == 0:
            u0, u1, v0, v1 = -outer_u, -hw, -outer_v, outer_v
        elif k == 1:
            u0, u1, v0, v1 = hw, outer_u, -outer_v, outer_v
        elif k == 2:
            u0, u1, v0, v1 = -outer_u, outer_u, -outer_v, -hh
        else:
            u0, u1, v0, v1 = -outer_u, outer_u, hh, outer_v
        du = 0.0
        if u < u0:
            du = u0 - u
        elif u > u1:
            du = u - u1
        dv = 0.0
        if v < v0:
            dv = v0 - v
        elif v > v1:
            dv = v - v1
        if du * du + dv * dv + dw * dw <= r2:
            return True
    return False


@njit(cache=True)
def _prepare_actions(states, raw_targets, raw_yaws, skip, max_offset,
                     bounds_min, bounds_max, targets, yaws, actions):
    """Clamp setpoints to the action box and bounds; derive normalized actions."""
    n = states.shape[0]
    for i in range(n):
        if skip[i]:
            for k in range(3):
                targets[i, k] = states[i, k]
            yaws[i] = 0.0
            for k in range(4):
                actions[i, k] = 0.0
            continue
        for k in range(3):
            lo = states[i, k] - max_offset
            if lo < bounds_min[k]:
                lo = bounds_min[k]
            hi = states[i, k] + max_offset
            if hi > bounds_max[k]:
                hi = bounds_max[k]
            t = raw_targets[i, k]
            if t < lo:
                t = lo
            elif t > hi:
                t = hi
            targets[i, k] = t
            a = (t - states[i, k]) / max_offset
            if a < -1.0:
                a = -1.0
            elif a > 1.0:
                a = 1.0
            actions[i, k] = a
        yaws[i] = _wrap_pi(raw_yaws[i])
        actions[i, 3] = yaws[i] / math.pi


@njit(cache=True)
def _race_substeps(
    states, ctls, targets, yaws,
    active, crashed, laps_completed,
    arcs, seg_hints, next_gate, gates_this_lap,
    gate_centers, gate_normals, gate_us, gate_vs, gate_hw, gate_hh, gate_ft,
    poly, seg_len, seg_start, total_len,
    bounds_min, bounds_max, coll_radius,
    mass, grav, inertia, inertia_inv, kd, kf, km, arm, wsq_max,
    gains, laps_target, n_sub, dt,
    out_progress, out_gates, out_crash_event, out_lap_time_off,
):
    """Advance all drones ``n_sub`` physics substeps under fixed setpoints.

    Mutates the per-drone arrays in place and accumulates per-agent step
    facts into the ``out_*`` arrays (progress in meters, gate passes, first
    crash cause, and the lap completion time offset from step start, -1 when
    no lap completed).
    """
    n = states.shape[0]
    n_gates = gate_centers.shape[0]
    wsq = np.empty(4)
    new_ctl = np.empty(12)
    new_state = np.empty(12)
    prev_pos = np.empty((n, 3))
    crash_now = np.empty(n, dtype=np.int8)
    moved = np.empty(n, dtype=np.bool_)

    for i in range(n):
        out_progress[i] = 0.0
        out_gates[i] = 0
        out_crash_event[i] = CRASH_NONE
        out_lap_time_off[i] = -1.0

    for s in range(n_sub):
        for i in range(n):
            crash_now[i] = CRASH_NONE
            moved[i] = active[i]
            if not active[i]:
                continue
            prev_pos[i, 0] = states[i, 0]
            prev_pos[i, 1] = states[i, 1]
            prev_pos[i, 2] = states[i, 2]
            _pid_step(states[i], targets[i], yaws[i], ctls[i], gains,
                      mass, grav, inertia, kf, km, arm, wsq_max, dt, wsq, new_ctl)
            for k in range(12):
                ctls[i, k] = new_ctl[k]
            _rk4_step(states[i], wsq, mass, grav, inertia, inertia_inv,
                      kd, kf, km, arm, dt, new_state)
            finite = True
            for k in range(12):
                if not math.isfinite(new_state[k]):
                    finite = False
                    break
            if not finite:
                crash_now[i] = CRASH_ATTITUDE  # freeze at the last finite state
                continue
            for k in range(12):
                states[i, k] = new_state[k]
            if abs(states[i, 6]) >= TILT_LIMIT or abs(states[i, 7]) >= TILT_LIMIT:
                crash_now[i] = CRASH_ATTITUDE
                continue
            # World bounds (the lower z face is the ground).
            for k in range(3):
                if states[i, k] - coll_radius < bounds_min[k] or states[i, k] + coll_radius > bounds_max[k]:
                    crash_now[i] = CRASH_COLLISION
                    break
            if crash_now[i] != CRASH_NONE:
                continue
            for g in range(n_gates):
                relx = states[i, 0] - gate_centers[g, 0]
                rely = states[i, 1] - gate_centers[g, 1]
                relz = states[i, 2] - gate_centers[g, 2]
                w = relx * gate_normals[g, 0] + rely * gate_normals[g, 1] + relz * gate_normals[g, 2]
                if abs(w) > 0.5 * gate_ft[g] + coll_radius:
                    continue
                u = relx * gate_us[g, 0] + rely * gate_us[g, 1] + relz * gate_us[g, 2]
                v = relx * gate_vs[g, 0] + rely * gate_vs[g, 1] + relz * gate_vs[g, 2]
                if _hits_gate_frame(u, v, w, gate_hw[g], gate_hh[g], gate_ft[g], coll_radius):
                    crash_now[i] = CRASH_COLLISION
                    break

        # Drone-drone collisions among agents that entered this substep live.
        four_r2 = 4.0 * coll_radius * coll_radius
        for i in range(n):
            if not moved[i]:
                continue
            for j in range(i + 1, n):
                if not moved[j]:
                    continue
                dx = states[i, 0] - states[j, 0]
                dy = states[i, 1] - states[j, 1]
                dz = states[i, 2] - states[j, 2]
                if dx * dx + dy * dy + dz * dz < four_r2:
                    if crash_now[i] == CRASH_NONE:
                        crash_now[i] = CRASH_COLLISION
                    if crash_now[j] == CRASH_NONE:
                        crash_now[j] = CRASH_COLLISION

        for i in range(n):
            if not moved[i]:
                continue
            if crash_now[i] != CRASH_NONE:
                active[i] = False
                crashed[i] = True
                if out_crash_event[i] == CRASH_NONE:
                    out_crash_event[i] = crash_now[i]
                continue
            # Centerline progress.
            new_arc, hint = _project_windowed(poly, seg_len, seg_start, n_gates,
                                              states[i, 0:3], seg_hints[i])
            d = (new_arc - arcs[i]) % total_len
            if d > 0.5 * total_len:
                d -= total_len
            out_progress[i] += d
            arcs[i] = new_arc
            seg_hints[i] = hint
            # Gate pass: only the next gate in order counts.
            g = next_gate[i]
            d0 = 0.0
            d1 = 0.0
            for k in range(3):
                d0 += (prev_pos[i, k] - gate_centers[g, k]) * gate_normals[g, k]
                d1 += (states[i, k] - gate_centers[g, k]) * gate_normals[g, k]
            if d0 < 0.0 <= d1:
                t = d0 / (d0 - d1)
                hu = 0.0
                hv = 0.0
                for k in range(3):
                    hk = prev_pos[i, k] + t * (states[i, k] - prev_pos[i, k]) - gate_centers[g, k]
                    hu += hk * gate_us[g, k]
                    hv += hk * gate_vs[g, k]
                if abs(hu) <= gate_hw[g] and abs(hv) <= gate_hh[g]:
                    out_gates[i] += 1
                    next_gate[i] = (g + 1) % n_gates
                    gates_this_lap[i] += 1
                    if gates_this_lap[i] == n_gates:
                        gates_this_lap[i] = 0
                        laps_completed[i] += 1
                        out_lap_time_off[i] = (s + t) * dt
                        if laps_completed[i] >= laps_target:
                            active[i] = False  # finished: freeze, not crashed


@njit(cache=True)
def _post_step(
    states, actions, skip, next_gate,
    gate_centers, n_gates,
    buf_rows, buf_head,
    pos_scale, vel_scale, rate_scale,
    n_opponents, n_gates_ahead, snapshot_count, snapshot_stride, full_context,
    obs_mat, out_align,
):
    """Append buffer snapshots, refresh observations, compute alignment angles."""
    n = states.shape[0]
    hist_len = buf_rows.shape[1]
    snap_dim = buf_rows.shape[2]
    for i in range(n):
        gi = next_gate[i]
        gx = gate_centers[gi, 0] - states[i, 0]
        gy = gate_centers[gi, 1] - states[i, 1]
        if gx * gx + gy * gy < 1e-12:
            out_align[i] = math.pi
        else:
            out_align[i] = abs(_wrap_pi(states[i, 8] - math.atan2(gy, gx)))
        if skip[i]:
            continue

        # Snapshot: closest-opponent 3D offsets, next-gate horizontal offsets,
        # own normalized action.
        head = buf_head[i]
        row = buf_rows[i, head]
        for k in range(snap_dim):
            row[k] = 0.0
        n_opp = n - 1 if n - 1 < n_opponents else n_opponents
        if n_opp > 0:
            # Insertion sort of the <=3 opponents by squared distance.
            d2s = np.empty(n - 1)
            idxs = np.empty(n - 1, dtype=np.int64)
            m = 0
            for j in range(n):
                if j == i:
                    continue
                dx = states[j, 0] - states[i, 0]
                dy = states[j, 1] - states[i, 1]
                dz = states[j, 2] - states[i, 2]
                d2s[m] = dx * dx + dy * dy + dz * dz
                idxs[m] = j
                m += 1
            for a in range(1, m):
                key_d = d2s[a]
                key_i = idxs[a]
                b = a - 1
                while b >= 0 and d2s[b] > key_d:
                    d2s[b + 1] = d2s[b]
                    idxs[b + 1] = idxs[b]
                    b -= 1
                d2s[b + 1] = key_d
                idxs[b + 1] = key_i
            for k in range(n_opp):
                j = idxs[k]
                row[3 * k + 0] = (states[j, 0] - states[i, 0]) / pos_scale
                row[3 * k + 1] = (states[j, 1] - states[i, 1]) / pos_scale
                row[3 * k + 2] = (states[j, 2] - states[i, 2]) / pos_scale
        base = 3 * n_opponents
        for k in range(n_gates_ahead):
            gk = (gi + k) % n_gates
            row[base + 2 * k + 0] = (gate_centers[gk, 0] - states[i, 0]) / pos_scale
            row[base + 2 * k + 1] = (gate_centers[gk, 1] - states[i, 1]) / pos_scale
        base = base + 2 * n_gates_ahead
        for k in range(4):
            row[base + k] = actions[i, k]
        buf_head[i] = (head + 1) % hist_len

        # Observation: normalized ego followed by the context rows.
        for k in range(3):
            obs_mat[i, k] = states[i, k] / pos_scale
            obs_mat[i, 3 + k] = states[i, 3 + k] / vel_scale
            obs_mat[i, 6 + k] = states[i, 6 + k] / math.pi
            obs_mat[i, 9 + k] = states[i, 9 + k] / rate_scale
        col = 12
        n_rows = hist_len if full_context else snapshot_count
        stride = 1 if full_context else snapshot_stride
        for r in range(n_rows):
            src = (buf_head[i] - 1 - r * stride) % hist_len
            for k in range(snap_dim):
                obs_mat[i, col] = buf_rows[i, src, k]
                col += 1


@dataclass(eq=False)
class RaceState:
    """Mutable per-race bookkeeping, one row per drone."""

    states: np.ndarray          # (n, 12) rigid-body states
    ctls: np.ndarray            # (n, 12) controller memories
    next_gate: np.ndarray       # (n,) index of the gate to pass next
    laps_completed: np.ndarray  # (n,)
    gates_this_lap: np.ndarray  # (n,)
    arc: np.ndarray             # (n,) centerline arc position, m
    seg_hint: np.ndarray        # (n,) current centerline segment
    active: np.ndarray          # (n,) still being simulated
    crashed: np.ndarray         # (n,)
    done: np.ndarray            # (n,) crash, finish, or timeout
    lap_start: np.ndarray       # (n,) sim time the running lap started
    gates_passed: np.ndarray    # (n,) total gate passes
    collisions: np.ndarray      # (n,) collision events (at most 1: a crash ends the run)
    finish_time: np.ndarray     # (n,) sim time the final lap completed, nan if DNF
    lap_times: list[list[float]]
    sim_time: float = 0.0

    @property
    def n_agents(self) -> int:
        return self.states.shape[0]

    def drone_state(self, i: int) -> DroneState:
        return DroneState.from_vector(self.states[i])

    def controller_state(self, i: int) -> ControllerState:
        return ControllerState.from_vector(self.ctls[i])


def alignment_angle(state_vector: np.ndarray, gate_center: np.ndarray) -> float:
    """Angle in [0, pi] between the horizontal heading and the next gate.

    Degenerate when the gate is (nearly) straight above or below; that case
    reads as fully misaligned so the alignment reward stays zero.
    """
    gx = gate_center[0] - state_vector[0]
    gy = gate_center[1] - state_vector[1]
    if gx * gx + gy * gy < 1e-12:
        return math.pi
    return abs(_wrap_pi(state_vector[8] - math.atan2(gy, gx)))


class RaceEnv:
    """Gate-circuit race for 1..4 drones at the 48 Hz / 240 Hz hierarchy."""

    def __init__(
        self,
        track: Track,
        params: DroneParams | None = None,
        gains: PidGains | None = None,
        weights: RewardWeights | None = None,
        obs_config: ObservationConfig | None = None,
        substeps: int = 5,
        physics_dt: float = 1.0 / 240.0,
        episode_laps: int = 2,
        timeout: float = 60.0,
        max_offset: float = 3.0,
        start_offset: float = 1.5,
        start_jitter: float = 1.0,
        collect_infos: bool = True,
    ):
        self.track = track
        self.params = params if params is not None else DroneParams()
        self.gains = gains if gains is not None else default_gains()
        self.weights = weights if weights is not None else RewardWeights()
        self.obs_config = obs_config if obs_config is not None else ObservationConfig()
        self.substeps = int(substeps)
        self.physics_dt = float(physics_dt)
        self.episode_laps = int(episode_laps)
        self.timeout = float(timeout)
        self.max_offset = float(max_offset)
        self.start_offset = float(start_offset)
        self.start_jitter = float(start_jitter)
        self.collect_infos = collect_infos

        g = track.gates
        self._gate_centers = np.array([gg.center for gg in g])
        self._gate_normals = np.array([gg.normal for gg in g])
        self._gate_us = np.array([gg.u_axis for gg in g])
        self._gate_vs = np.array([gg.v_axis for gg in g])
        self._gate_hw = np.array([gg.half_width for gg in g])
        self._gate_hh = np.array([gg.half_height for gg in g])
        self._gate_ft = np.array([gg.frame_thickness for gg in g])
        self._gains_packed = self.gains.packed()
        w = self.weights
        self._cos_thresh = math.cos(w.alignment_threshold)

        self.race: RaceState | None = None
        self._n = 0

    @property
    def policy_dt(self) -> float:
        """Seconds of simulated time per policy step."""
        return self.substeps * self.physics_dt

    @property
    def n_agents(self) -> int:
        return self._n

    def reset(self, n_agents: int = 1, seed: int = 0) -> np.ndarray:
        """Place drones on the start segment before gate 0 (seeded jitter).

        Returns the (n_agents, obs_dim) observation matrix; pre-episode
        context features are zero.
        """
        if n_agents < 1:
            raise ValueError("need at least one agent")
        rng = np.random.default_rng(seed)
        gate0 = self.track.gates[0]
        back = -gate0.normal
        base = gate0.center + self.start_offset * back
        min_sep = 4.0 * self.params.collision_radius

        positions: list[np.ndarray] = []
        for _ in range(n_agents):
            placed = False
            for _attempt in range(1000):
                lon = rng.uniform(0.0, self.start_jitter)
                lat = rng.uniform(-self.start_jitter, self.start_jitter)
                pos = base + lon * back + lat * gate0.u_axis
                if np.any(pos - self.params.collision_radius < self.track.world_min) or np.any(
                    pos + self.params.collision_radius > self.track.world_max
                ):
                    continue
                if all(np.linalg.norm(pos - q) >= min_sep for q in positions):
                    positions.append(pos)
                    placed = True
                    break
            if not placed:
                raise RuntimeError("could not place drones with the required separation")

        yaw = math.atan2(gate0.normal[1], gate0.normal[0])
        n = n_agents
        self._n = n
        states = np.zeros((n, 12))
        arcs = np.zeros(n)
        hints = np.zeros(n, dtype=np.int64)
        for i, pos in enumerate(positions):
            states[i, 0:3] = pos
            states[i, 8] = yaw
            # Global projection at reset; the kernel tracks it incrementally after.
            best = (math.inf, 0.0, 0)
            for j in range(self.track.n_gates):
                a = self.track.centerline[j]
                b = self.track.centerline[(j + 1) % self.track.n_gates]
                ab = b - a
                t = float(np.dot(pos - a, ab) / np.dot(ab, ab))
                t = min(max(t, 0.0), 1.0)
                d2 = float(np.sum((pos - (a + t * ab)) ** 2))
                if d2 < best[0]:
                    best = (d2, self.track.segment_starts[j] + t * self.track.segment_lengths[j], j)
            arcs[i] = best[1]
            hints[i] = best[2]

        self.race = RaceState(
            states=states,
            ctls=np.zeros((n, 12)),
            next_gate=np.zeros(n, dtype=np.int64),
            laps_completed=np.zeros(n, dtype=np.int64),
            gates_this_lap=np.zeros(n, dtype=np.int64),
            arc=arcs,
            seg_hint=hints,
            active=np.ones(n, dtype=np.bool_),
            crashed=np.zeros(n, dtype=np.bool_),
            done=np.zeros(n, dtype=np.bool_),
            lap_start=np.zeros(n),
            gates_passed=np.zeros(n, dtype=np.int64),
            collisions=np.zeros(n, dtype=np.int64),
            finish_time=np.full(n, np.nan),
            lap_times=[[] for _ in range(n)],
        )
        cfg = self.obs_config
        self._buf_rows = np.zeros((n, cfg.history_len, cfg.snapshot_dim))
        self._buf_head = np.zeros(n, dtype=np.int64)
        self._obs_mat = np.zeros((n, cfg.total_dim))
        self._out_progress = np.zeros(n)
        self._out_gates = np.zeros(n, dtype=np.int64)
        self._out_crash = np.zeros(n, dtype=np.int8)
        self._out_lap = np.zeros(n)
        self._out_align = np.zeros(n)
        self._targets = np.zeros((n, 3))
        self._yaws = np.zeros(n)
        self._actions = np.zeros((n, 4))
        for i in range(n):
            self._obs_mat[i, 0:3] = states[i, 0:3] / cfg.pos_scale
            self._obs_mat[i, 6:9] = states[i, 6:9] / math.pi
        return self._obs_mat.copy()

    def current_obs(self) -> np.ndarray:
        """The live (n_agents, obs_dim) observation matrix (read-only view)."""
        return self._obs_mat

    def observation(self, i: int) -> Observation:
        """Typed view of agent i's current observation."""
        row = self._obs_mat[i]
        return Observation(ego=row[:12].copy(), context=row[12:].copy())

    def history_buffer(self, i: int) -> HistoryBuffer:
        """Copy of agent i's ring buffer in the reference HistoryBuffer form."""
        buf = HistoryBuffer(self.obs_config)
        buf._rows = self._buf_rows[i].copy()
        buf._head = int(self._buf_head[i])
        return buf

    def reference_observation(self, i: int) -> Observation:
        """Observation rebuilt via the reference path (for consistency tests)."""
        return build_observation(self.obs_config, self.race.states[i], self.history_buffer(i))

    def step(self, setpoints: Sequence[Setpoint]):
        """Advance one policy step from typed setpoints.

        Returns (obs_matrix, rewards, dones, infos). Setpoints of agents that
        are already done are ignored.
        """
        race = self.race
        if race is None:
            raise RuntimeError("call reset() before step()")
        n = race.n_agents
        if len(setpoints) != n:
            raise ValueError(f"expected {n} setpoints, got {len(setpoints)}")
        raw_targets = np.array([sp.target_position for sp in setpoints])
        raw_yaws = np.array([float(sp.target_yaw) for sp in setpoints])
        return self._step_arrays(raw_targets, raw_yaws)

    def step_actions(self, actions: np.ndarray):
        """Advance one policy step from normalized actions in [-1, 1]^4.

        The first three components scale to a position offset of at most
        ``max_offset`` around the drone; the fourth scales to a yaw target.
        """
        race = self.race
        raw_targets = race.states[:, 0:3] + actions[:, 0:3] * self.max_offset
        raw_yaws = actions[:, 3] * math.pi
        return self._step_arrays(raw_targets, raw_yaws)

    def _step_arrays(self, raw_targets: np.ndarray, raw_yaws: np.ndarray):
        race = self.race
        n = race.n_agents
        was_done = race.done.copy()
        _prepare_actions(
            race.states, raw_targets, raw_yaws, was_done, self.max_offset,
            self.track.world_min, self.track.world_max,
            self._targets, self._yaws, self._actions,
        )

        p = self.params
        _race_substeps(
            race.states, race.ctls, self._targets, self._yaws,
            race.active, race.crashed, race.laps_completed,
            race.arc, race.seg_hint, race.next_gate, race.gates_this_lap,
            self._gate_centers, self._gate_normals, self._gate_us, self._gate_vs,
            self._gate_hw, self._gate_hh, self._gate_ft,
            self.track.centerline, self.track.segment_lengths,
            self.track.segment_starts, self.track.total_length,
            self.track.world_min, self.track.world_max, p.collision_radius,
            p.mass, p.gravity, p.inertia, p.inertia_inv, p.drag_coeffs,
            p.thrust_coeff, p.torque_coeff, p.arm_length, p.max_speed_squared,
            self._gains_packed, self.episode_laps, self.substeps, self.physics_dt,
            self._out_progress, self._out_gates, self._out_crash, self._out_lap,
        )

        _post_step(
            race.states, self._actions, was_done, race.next_gate,
            self._gate_centers, self.track.n_gates,
            self._buf_rows, self._buf_head,
            self.obs_config.pos_scale, self.obs_config.vel_scale, self.obs_config.rate_scale,
            self.obs_config.n_opponents, self.obs_config.n_gates_ahead,
            self.obs_config.snapshot_count, self.obs_config.snapshot_stride,
            self.obs_config.mode == "full",
            self._obs_mat, self._out_align,
        )

        t0 = race.sim_time
        race.sim_time = t0 + self.substeps * self.physics_dt
        timed_out = race.sim_time >= self.timeout

        w = self.weights
        live = ~was_done
        collided = (self._out_crash != CRASH_NONE) & live
        comps = np.zeros((n, 4))
        comps[:, 0] = w.w_progress * (
            w.progress_scale * self._out_progress + w.gate_bonus * self._out_gates
        )
        comps[collided, 1] = -w.w_collision * w.collision_penalty
        comps[:, 2] = w.w_alignment * w.alignment_scale * np.maximum(
            0.0, np.cos(self._out_align) - self._cos_thresh
        )
        lap_times = [None] * n
        for i in np.flatnonzero(live & (self._out_lap >= 0.0)):
            t_lap = t0 + self._out_lap[i]
            lap_time = t_lap - race.lap_start[i]
            race.lap_start[i] = t_lap
            race.lap_times[i].append(lap_time)
            lap_times[i] = lap_time
            comps[i, 3] = 100.0 / lap_time
            if race.laps_completed[i] >= self.episode_laps:
                race.finish_time[i] = t_lap
        comps[was_done] = 0.0
        rewards = comps.sum(axis=1)
        race.collisions += (self._out_crash == CRASH_COLLISION) & live

        if timed_out:
            race.active[:] = False
        race.done |= race.crashed | (race.laps_completed >= self.episode_laps) | timed_out
        race.gates_passed += np.where(live, self._out_gates, 0)
        dones = race.done.copy()

        infos: list[dict] | None = None
        if self.collect_infos:
            infos = []
            for i in range(n):
                if was_done[i]:
                    infos.append({"was_done": True})
                    continue
                infos.append(
                    {
                        "reward_components": comps[i].copy(),
                        "progress": float(self._out_progress[i]),
                        "gate_passes": int(self._out_gates[i]),
                        "collided": bool(collided[i]),
                        "crash_event": int(self._out_crash[i]),
                        "alignment_angle": float(self._out_align[i]),
                        "lap_time": lap_times[i],
                        "timeout": bool(timed_out and not race.crashed[i]),
                        "action": self._actions[i].copy(),
                        "target": self._targets[i].copy(),
                        "target_yaw": float(self._yaws[i]),
                    }
                )
        return self._obs_mat.copy(), rewards, dones, infos

    def step_facts(self, i: int, info: dict) -> StepFacts:
        """Reassemble an agent's StepFacts from its step info (for checks)."""
        return StepFacts(
            progress=info["progress"],
            gates_passed=info["gate_passes"],
            collided=info["collided"],
            alignment_angle=info["alignment_angle"],
            lap_time=info["lap_time"],
        )

    def reward_from_info(self, i: int, info: dict) -> float:
        """Recompute an agent's step reward through the reference formula."""
        return compute_reward(self.step_facts(i, info), self.weights)

    def all_done(self) -> bool:
        return bool(self.race.done.all())
