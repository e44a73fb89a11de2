"""Randomized evaluation harness: lap times, success ratios, head-to-head.

An evaluation executes n seeded episodes (seed_i = base_seed + i) and
aggregates per-slot statistics: the success ratio (all gates in order, zero
collisions) and the mean +/- sample std of lap times over successful runs
only (DNF runs never contribute to timing). Reports render both as a
human-readable table and as a machine-readable dict; raw run records export
as delimited text.

``head_to_head`` races two policies with mirrored slot assignments on
alternating runs, so start-position asymmetry cancels in aggregate; the
self-play evaluation gate shares this machinery.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .learner import PolicyParams, load_policy, policy_forward
from .learner.policy import init_policy
from .observations import ObservationConfig
from .race import RaceEnv
from .track import Track, point_at_arc, tangent_at_arc

SCENARIO_SLOTS = {"solo": 1, "1v1": 2, "2v2": 4}


class Policy:
    """A per-drone controller mapping observations to normalized actions."""

    def reset(self, agent_index: int, seed: int) -> None:  # pragma: no cover - default
        pass

    def act(self, obs: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class NetworkPolicy(Policy):
    """Wraps PolicyParams; deterministic (tanh mean) unless given noise."""

    def __init__(self, params: PolicyParams, deterministic: bool = True):
        self.params = params
        self.deterministic = deterministic
        self._rng = np.random.default_rng(0)

    def reset(self, agent_index: int, seed: int) -> None:
        self._rng = np.random.default_rng(seed * 4 + agent_index)

    def act(self, obs: np.ndarray) -> np.ndarray:
        mean, log_std, _ = policy_forward(self.params, obs)
        if self.deterministic:
            return np.tanh(mean)
        return np.tanh(mean + np.exp(log_std) * self._rng.standard_normal(mean.shape))


class HoverPolicy(Policy):
    """Commands a zero offset forever; the drone holds its start position."""

    def act(self, obs: np.ndarray) -> np.ndarray:
        return np.zeros(4)


class AlwaysCrashPolicy(Policy):
    """Dives straight down; a test fixture that loses every race."""

    def act(self, obs: np.ndarray) -> np.ndarray:
        return np.array([0.0, 0.0, -1.0, 0.0])


class CenterlinePolicy(Policy):
    """Scripted oracle: chases a carrot moving along the centerline.

    The carrot advances at a fixed speed each policy step; the position
    controller settles into a steady chase at that speed (a fixed arc lag),
    so lap time is approximately track length over speed. ``max_lead`` is
    only a runaway guard for the standing-start transient. Yaw tracks the
    local centerline direction.
    """

    def __init__(
        self,
        track: Track,
        obs_config: ObservationConfig,
        policy_dt: float,
        max_offset: float,
        speed: float = 2.0,
        max_lead: float = 2.5,
    ):
        self.track = track
        self.obs_config = obs_config
        self.policy_dt = policy_dt
        self.max_offset = max_offset
        self.speed = speed
        self.max_lead = max_lead
        self._carrot: float | None = None
        self._hint = 0

    def reset(self, agent_index: int, seed: int) -> None:
        self._carrot = None
        self._hint = 0

    def act(self, obs: np.ndarray) -> np.ndarray:
        from .track import project_arc

        pos = obs[0:3] * self.obs_config.pos_scale
        if self._carrot is None:
            # Global projection once at episode start.
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
            self._carrot = best[1]
            self._hint = best[2]
        arc, self._hint = project_arc(self.track, pos, self._hint)
        carrot = self._carrot + self.speed * self.policy_dt
        # Keep the carrot within max_lead of the drone (wrap-aware).
        lead = (carrot - arc) % self.track.total_length
        if lead > self.max_lead:
            carrot = arc + self.max_lead
        self._carrot = carrot % self.track.total_length
        target = point_at_arc(self.track, self._carrot)
        tangent = tangent_at_arc(self.track, self._carrot)
        action = np.empty(4)
        action[0:3] = np.clip((target - pos) / self.max_offset, -1.0, 1.0)
        action[3] = math.atan2(tangent[1], tangent[0]) / math.pi
        return action


def make_policy(
    source: str,
    track: Track,
    obs_config: ObservationConfig,
    policy_dt: float,
    max_offset: float,
    expected_compat_hash: str | None = None,
) -> Policy:
    """Build a policy from a slot source string.

    Sources: ``checkpoint:<path>``, ``random[:<seed>]``,
    ``scripted:centerline[:<speed>]``, ``scripted:hover``,
    ``scripted:crash``.
    """
    kind, _, arg = source.partition(":")
    if kind == "checkpoint":
        params, meta = load_policy(arg)
        if expected_compat_hash and meta["compat_hash"] and meta["compat_hash"] != expected_compat_hash:
            raise ValueError(
                f"checkpoint {arg} was trained under a different environment/model "
                f"contract (compat hash {meta['compat_hash']} != {expected_compat_hash})"
            )
        if params.obs_dim != obs_config.total_dim:
            raise ValueError(
                f"checkpoint {arg}: observation dim {params.obs_dim} != configured {obs_config.total_dim}"
            )
        return NetworkPolicy(params)
    if kind == "random":
        seed = int(arg) if arg else 0
        return NetworkPolicy(init_policy(obs_config.total_dim, seed=seed))
    if kind == "scripted":
        name, _, opt = arg.partition(":")
        if name == "centerline":
            speed = float(opt) if opt else 2.0
            return CenterlinePolicy(track, obs_config, policy_dt, max_offset, speed=speed)
        if name == "hover":
            return HoverPolicy()
        if name == "crash":
            return AlwaysCrashPolicy()
        raise ValueError(f"unknown scripted policy {name!r}")
    raise ValueError(f"unknown policy source {source!r}")


@dataclass
class DroneResult:
    """Outcome of one episode for one drone."""

    slot: int
    policy_index: int
    success: bool
    crashed: bool
    timed_out: bool
    collisions: int
    gates_passed: int
    lap_time: float | None          # mean over this run's laps; None if DNF
    finish_time: float | None       # sim time the final lap completed
    lap_times: list[float] = field(default_factory=list)


@dataclass
class RunRecord:
    """One seeded episode: per-drone results plus the slot->policy mapping."""

    seed: int
    policy_indices: tuple[int, ...]
    drones: list[DroneResult]


def run_episode(
    env: RaceEnv,
    policies: list[Policy],
    seed: int,
    policy_indices: tuple[int, ...] | None = None,
    step_hook=None,
) -> RunRecord:
    """Race the given policies once; runs until every drone is done.

    ``step_hook(env, infos)`` is called after every policy step (used by
    trajectory logging).
    """
    n = len(policies)
    if policy_indices is None:
        policy_indices = tuple(range(n))
    obs = env.reset(n_agents=n, seed=seed)
    for i, pol in enumerate(policies):
        pol.reset(i, seed)
    actions = np.zeros((n, 4))
    while not env.all_done():
        done = env.race.done
        for i, pol in enumerate(policies):
            if not done[i]:
                actions[i] = pol.act(obs[i])
        obs, rewards, dones, infos = env.step_actions(actions)
        if step_hook is not None:
            step_hook(env, infos)

    race = env.race
    drones = []
    for i in range(n):
        finished = race.laps_completed[i] >= env.episode_laps
        crashed = bool(race.crashed[i])
        collisions = int(race.collisions[i])
        success = bool(finished and collisions == 0 and not crashed)
        lap_time = float(np.mean(race.lap_times[i])) if finished and race.lap_times[i] else None
        drones.append(
            DroneResult(
                slot=i,
                policy_index=policy_indices[i],
                success=success,
                crashed=crashed,
                timed_out=bool(not finished and not crashed),
                collisions=collisions,
                gates_passed=int(race.gates_passed[i]),
                lap_time=lap_time,
                finish_time=float(race.finish_time[i]) if finished else None,
                lap_times=[float(t) for t in race.lap_times[i]],
            )
        )
    return RunRecord(seed=seed, policy_indices=policy_indices, drones=drones)


@dataclass
class SlotStats:
    """Aggregated evaluation statistics for one drone slot."""

    slot: int
    source: str
    n_runs: int
    successes: int
    success_ratio: float
    lap_mean: float | None
    lap_std: float | None

    def lap_text(self) -> str:
        if self.lap_mean is None:
            return "-"
        return f"{self.lap_mean:.4f} ± {(self.lap_std or 0.0):.4f}"


@dataclass
class EvalReport:
    scenario: str
    n_runs: int
    config_hash: str
    slots: list[SlotStats]
    teams: list[dict] = field(default_factory=list)
    lap_time_censoring: str = "successful runs only"


@dataclass(frozen=True)
class EvalConfig:
    """What to evaluate: scenario, per-slot policy sources, seeds, laps."""

    scenario: str = "solo"
    slots: tuple[str, ...] = ("scripted:centerline",)
    n_runs: int = 50
    base_seed: int = 1000
    laps: int = 1

    def __post_init__(self):
        if self.scenario not in SCENARIO_SLOTS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.n_runs < 1:
            raise ValueError("n_runs must be >= 1")
        if len(self.slots) != SCENARIO_SLOTS[self.scenario]:
            raise ValueError(
                f"scenario {self.scenario} needs {SCENARIO_SLOTS[self.scenario]} "
                f"policy slots, got {len(self.slots)}"
            )


def _lap_stats(times: list[float]) -> tuple[float | None, float | None]:
    if not times:
        return None, None
    mean = float(np.mean(times))
    std = float(np.std(times, ddof=1)) if len(times) > 1 else 0.0
    return mean, std


def aggregate_records(
    cfg: EvalConfig, records: list[RunRecord], config_hash: str = ""
) -> EvalReport:
    """Recompute all report statistics from raw run records."""
    n_slots = len(cfg.slots)
    slots = []
    for s in range(n_slots):
        outcomes = [next(d for d in r.drones if d.policy_index == s) for r in records]
        succ = [d for d in outcomes if d.success]
        mean, std = _lap_stats([d.lap_time for d in succ])
        slots.append(
            SlotStats(
                slot=s,
                source=cfg.slots[s],
                n_runs=len(records),
                successes=len(succ),
                success_ratio=len(succ) / len(records),
                lap_mean=mean,
                lap_std=std,
            )
        )
    teams = []
    if cfg.scenario == "2v2":
        for t, members in enumerate(((0, 1), (2, 3))):
            per_drone = [sl for sl in slots if sl.slot in members]
            # Default aggregation: average over the team's drones.
            all_times = []
            best_times = []
            succ_flags = []
            for r in records:
                ds = [d for d in r.drones if d.policy_index in members]
                times = [d.lap_time for d in ds if d.success]
                all_times.extend(times)
                if times:
                    best_times.append(min(times))
                succ_flags.append(all(d.success for d in ds))
            mean_a, std_a = _lap_stats(all_times)
            mean_b, std_b = _lap_stats(best_times)
            teams.append(
                {
                    "team": t,
                    "slots": members,
                    "success_ratio_all_drones": sum(succ_flags) / len(records),
                    "per_drone_average": {"lap_mean": mean_a, "lap_std": std_a, "default": True},
                    "best_finisher": {"lap_mean": mean_b, "lap_std": std_b, "default": False},
                }
            )
    return EvalReport(
        scenario=cfg.scenario,
        n_runs=cfg.n_runs,
        config_hash=config_hash,
        slots=slots,
        teams=teams,
    )


def run_evaluation(
    cfg: EvalConfig,
    env: RaceEnv,
    policies: list[Policy],
    config_hash: str = "",
    step_hook=None,
) -> tuple[list[RunRecord], EvalReport]:
    """Execute cfg.n_runs seeded episodes and aggregate the report.

    Fully deterministic for a fixed config: run i uses seed base_seed + i.
    """
    if len(policies) != len(cfg.slots):
        raise ValueError("one policy per slot required")
    records = []
    for i in range(cfg.n_runs):
        records.append(run_episode(env, policies, cfg.base_seed + i, step_hook=step_hook))
    return records, aggregate_records(cfg, records, config_hash)


def format_report(report: EvalReport) -> str:
    """Human-readable table in 'mean +/- std | success ratio' form."""
    lines = [
        f"scenario: {report.scenario}   runs: {report.n_runs}   config: {report.config_hash}",
        f"lap-time censoring: {report.lap_time_censoring}",
        f"{'slot':<6}{'policy':<32}{'lap time (s)':<22}{'success ratio':<14}",
    ]
    for sl in report.slots:
        lines.append(f"{sl.slot:<6}{sl.source:<32}{sl.lap_text():<22}{sl.success_ratio:<14.4f}")
    for tm in report.teams:
        pda = tm["per_drone_average"]
        bf = tm["best_finisher"]
        pda_text = "-" if pda["lap_mean"] is None else f"{pda['lap_mean']:.4f} ± {pda['lap_std']:.4f}"
        bf_text = "-" if bf["lap_mean"] is None else f"{bf['lap_mean']:.4f} ± {bf['lap_std']:.4f}"
        lines.append(
            f"team {tm['team']} (slots {tm['slots']}): per-drone avg {pda_text} [default], "
            f"best finisher {bf_text}, all-drone success {tm['success_ratio_all_drones']:.4f}"
        )
    return "\n".join(lines) + "\n"


def report_to_dict(report: EvalReport) -> dict:
    return {
        "scenario": report.scenario,
        "n_runs": report.n_runs,
        "config_hash": report.config_hash,
        "lap_time_censoring": report.lap_time_censoring,
        "slots": [
            {
                "slot": sl.slot,
                "source": sl.source,
                "successes": sl.successes,
                "success_ratio": sl.success_ratio,
                "lap_mean": sl.lap_mean,
                "lap_std": sl.lap_std,
            }
            for sl in report.slots
        ],
        "teams": report.teams,
    }


RECORDS_HEADER = (
    "seed,slot,policy_index,success,crashed,timed_out,collisions,gates_passed,lap_time,finish_time"
)


def records_to_csv(records: list[RunRecord]) -> str:
    """Row-per-drone-per-run delimited export (see RECORDS_HEADER)."""
    lines = [RECORDS_HEADER]
    for r in records:
        for d in r.drones:
            lines.append(
                f"{r.seed},{d.slot},{d.policy_index},{int(d.success)},{int(d.crashed)},"
                f"{int(d.timed_out)},{d.collisions},{d.gates_passed},"
                f"{'' if d.lap_time is None else f'{d.lap_time:.6f}'},"
                f"{'' if d.finish_time is None else f'{d.finish_time:.6f}'}"
            )
    return "\n".join(lines) + "\n"


@dataclass
class HeadToHeadResult:
    wins_a: int
    draws: int
    wins_b: int
    records: list[RunRecord]

    @property
    def n_runs(self) -> int:
        return self.wins_a + self.draws + self.wins_b

    @property
    def win_rate_a(self) -> float:
        return self.wins_a / self.n_runs if self.n_runs else 0.0


def _match_winner(record: RunRecord) -> int:
    """0/1 for the winning policy index, -1 for a draw.

    The first drone to complete its laps wins; crashes and timeouts lose;
    two DNFs (or exactly equal finish times) draw.
    """
    finish = {0: None, 1: None}
    for d in record.drones:
        if d.finish_time is not None:
            prev = finish[d.policy_index]
            if prev is None or d.finish_time < prev:
                finish[d.policy_index] = d.finish_time
    fa, fb = finish[0], finish[1]
    if fa is None and fb is None:
        return -1
    if fb is None or (fa is not None and fa < fb):
        return 0
    if fa is None or fb < fa:
        return 1
    return -1


def head_to_head(
    env: RaceEnv,
    policy_a: Policy,
    policy_b: Policy,
    n_runs: int,
    seed: int,
) -> HeadToHeadResult:
    """Race two policies for n_runs episodes with mirrored slot assignment.

    Runs 2k and 2k+1 share placement seed (seed + k) with the slot order
    swapped, cancelling start-position bias for deterministic policies.
    """
    wins = [0, 0]
    draws = 0
    records = []
    for j in range(n_runs):
        ep_seed = seed + j // 2
        if j % 2 == 0:
            policies = [policy_a, policy_b]
            indices = (0, 1)
        else:
            policies = [policy_b, policy_a]
            indices = (1, 0)
        rec = run_episode(env, policies, ep_seed, policy_indices=indices)
        records.append(rec)
        w = _match_winner(rec)
        if w < 0:
            draws += 1
        else:
            wins[w] += 1
    return HeadToHeadResult(wins_a=wins[0], draws=draws, wins_b=wins[1], records=records)
