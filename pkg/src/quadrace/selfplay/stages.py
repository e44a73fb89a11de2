"""The staged self-play training loop.

Stage 1 trains solo; stages 2 (1v1) and 3 (2v2) race the learner against
frozen policies drawn from the checkpoint pool: the current best with
probability ``p_latest``, otherwise uniform over the older versions.
Every ``eval_interval`` learner steps an evaluation gate races the current
policy against the pool best (solo success/lap-time comparison in stage 1);
on improvement the candidate is appended to the pool and becomes the next
opponent source.

Disabling self-play swaps the opponent source for one fixed random-init
policy and leaves everything else untouched (the no-self-play baseline).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..learner import (
    GaeConfig,
    PolicyParams,
    RolloutBatch,
    compute_gae_arrays,
    policy_forward,
    ppo_update,
)
from ..learner.policy import squashed_log_prob
from ..learner.ppo import AdamState
from ..evaluation import NetworkPolicy, head_to_head, run_episode
from .pool import CheckpointPool, update_pool

_STAGE_AGENTS = {1: 1, 2: 2, 3: 4}


@dataclass(frozen=True)
class StageConfig:
    """One curriculum stage: agent count, budget, gating and sampling knobs."""

    stage: int
    budget: int
    n_agents: int = 0                      # 0: derive from the stage id
    p_latest: float = 0.8
    win_threshold: float = 0.55
    n_eval: int = 20
    eval_interval: int = 50_000
    promotion_success_ratio: float | None = None   # stage-1 early promotion

    def __post_init__(self):
        if self.stage not in _STAGE_AGENTS:
            raise ValueError("stage must be 1, 2, or 3")
        if self.n_agents == 0:
            object.__setattr__(self, "n_agents", _STAGE_AGENTS[self.stage])
        if self.stage == 1 and self.n_agents != 1:
            raise ValueError("stage 1 trains solo")
        if self.stage > 1 and self.n_agents < 2:
            raise ValueError("competitive stages need at least 2 agents")
        if not 0.0 <= self.p_latest <= 1.0:
            raise ValueError("p_latest must be a probability")


@dataclass
class EvalGateResult:
    """Outcome of one periodic assessment of a candidate policy."""

    win_rate: float
    mean_lap_time: float | None
    success_ratio: float
    improved: bool

    def __post_init__(self):
        if not 0.0 <= self.win_rate <= 1.0 or not 0.0 <= self.success_ratio <= 1.0:
            raise ValueError("rates must lie in [0, 1]")


def sample_opponents(
    pool: CheckpointPool, stage: StageConfig, rng: np.random.Generator
) -> list[PolicyParams]:
    """Draw the stage's opponents: best with p_latest, else uniform history."""
    n_opp = stage.n_agents - 1
    if n_opp == 0:
        return []
    if len(pool) == 0:
        raise RuntimeError(f"stage {stage.stage} needs a non-empty opponent pool")
    best = pool.best()
    history = [e for e in pool.entries if e.version != best.version]
    out = []
    for _ in range(n_opp):
        if not history or rng.random() < stage.p_latest:
            out.append(best.params)
        else:
            out.append(history[rng.integers(len(history))].params)
    return out


def evaluation_gate(
    candidate: PolicyParams,
    pool: CheckpointPool,
    stage: StageConfig,
    n_eval: int,
    seed: int,
    env_factory,
) -> EvalGateResult:
    """Assess the candidate; deterministic for a fixed seed.

    Stages 2/3 race candidate vs the pool best 1v1 over ``n_eval`` mirrored
    episodes; a win means completing the lap first (crashes lose, a double
    DNF is a draw). Stage 1 has no opponent: the gate runs solo episodes and
    compares success ratio, then mean lap time, against the best's stored
    metrics.
    """
    if n_eval < 1:
        raise ValueError("n_eval must be >= 1")
    if stage.stage == 1 or len(pool) == 0:
        env = env_factory(n_agents=1, episode_laps=1, collect_infos=False)
        lap_times = []
        successes = 0
        for i in range(n_eval):
            rec = run_episode(env, [NetworkPolicy(candidate)], seed + i)
            d = rec.drones[0]
            successes += d.success
            if d.success:
                lap_times.append(d.lap_time)
        ratio = successes / n_eval
        mean_lap = float(np.mean(lap_times)) if lap_times else None
        if len(pool) == 0:
            improved = True
        else:
            prev = pool.best().metrics
            prev_ratio = prev.get("success_ratio", 0.0) or 0.0
            prev_lap = prev.get("mean_lap_time")
            if ratio != prev_ratio:
                improved = ratio > prev_ratio
            else:
                improved = (
                    mean_lap is not None and (prev_lap is None or mean_lap < prev_lap)
                )
        return EvalGateResult(
            win_rate=ratio, mean_lap_time=mean_lap, success_ratio=ratio, improved=improved
        )

    env = env_factory(n_agents=2, episode_laps=1, collect_infos=False)
    result = head_to_head(env, NetworkPolicy(candidate), NetworkPolicy(pool.best().params),
                          n_runs=n_eval, seed=seed)
    cand_lap_times = []
    cand_success = 0
    for rec in result.records:
        for d in rec.drones:
            if d.policy_index == 0:
                cand_success += d.success
                if d.success:
                    cand_lap_times.append(d.lap_time)
    win_rate = result.wins_a / n_eval
    return EvalGateResult(
        win_rate=win_rate,
        mean_lap_time=float(np.mean(cand_lap_times)) if cand_lap_times else None,
        success_ratio=cand_success / n_eval,
        improved=win_rate > stage.win_threshold,
    )


@dataclass
class TrainingLog:
    """Step-indexed record of one stage's training."""

    updates: list[dict] = field(default_factory=list)
    episodes: list[dict] = field(default_factory=list)
    gates: list[dict] = field(default_factory=list)


class _EnvSlot:
    """One rollout worker: an environment plus its frozen opponents."""

    def __init__(self, env, index: int):
        self.env = env
        self.index = index
        self.obs = None
        self.opponents: list[PolicyParams] = []
        self.ep_return = 0.0
        self.ep_steps = 0


def _opponent_actions(slot: _EnvSlot, obs_mat: np.ndarray, actions: np.ndarray) -> None:
    """Deterministic actions for the frozen opponents in rows 1..n-1."""
    for k, opp in enumerate(slot.opponents, start=1):
        if not slot.env.race.done[k]:
            mean, _, _ = policy_forward(opp, obs_mat[k])
            actions[k] = np.tanh(mean)


def _reset_slot(
    slot: _EnvSlot,
    stage: StageConfig,
    pool: CheckpointPool,
    selfplay: bool,
    fixed_opponent: PolicyParams | None,
    opp_rng: np.random.Generator,
    seed_rng: np.random.Generator,
) -> None:
    if stage.n_agents > 1:
        if selfplay:
            slot.opponents = sample_opponents(pool, stage, opp_rng)
        else:
            slot.opponents = [fixed_opponent] * (stage.n_agents - 1)
    obs_all = slot.env.reset(n_agents=stage.n_agents, seed=int(seed_rng.integers(2**31 - 1)))
    slot.obs = obs_all[0]
    slot.ep_return = 0.0
    slot.ep_steps = 0


def collect_rollout(
    slots: list[_EnvSlot],
    params: PolicyParams,
    cfg: GaeConfig,
    stage: StageConfig,
    pool: CheckpointPool,
    rng: np.random.Generator,
    seed_rng: np.random.Generator,
    selfplay: bool,
    fixed_opponent: PolicyParams | None,
    log: TrainingLog,
    steps_base: int,
) -> RolloutBatch:
    """Gather ~cfg.rollout_length learner transitions across the workers.

    Only the learning agent's transitions enter the batch; opponents act
    frozen and deterministic. Worker environments reset (resampling
    opponents) whenever the learner's episode ends.
    """
    n_envs = len(slots)
    steps_per_env = max(1, cfg.rollout_length // n_envs)
    obs_buf = [[] for _ in range(n_envs)]
    act_buf = [[] for _ in range(n_envs)]
    logp_buf = [[] for _ in range(n_envs)]
    rew_buf = [[] for _ in range(n_envs)]
    val_buf = [[] for _ in range(n_envs)]
    done_buf = [[] for _ in range(n_envs)]

    actions_scratch = [np.zeros((s.env.n_agents, 4)) for s in slots]
    for t in range(steps_per_env):
        obs_mat = np.stack([s.obs for s in slots])
        mean, log_std, values = policy_forward(params, obs_mat)
        u = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
        logp = squashed_log_prob(mean, log_std, u)
        act = np.tanh(u)
        for e, slot in enumerate(slots):
            acts = actions_scratch[e]
            acts[0] = act[e]
            if slot.env.n_agents > 1:
                obs_all_prev = slot.env.current_obs()
                _opponent_actions(slot, obs_all_prev, acts)
            obs_all, rewards, dones, _ = slot.env.step_actions(acts)
            obs_buf[e].append(slot.obs)
            act_buf[e].append(u[e])
            logp_buf[e].append(logp[e])
            rew_buf[e].append(rewards[0])
            val_buf[e].append(values[e])
            done_buf[e].append(dones[0])
            slot.ep_return += rewards[0]
            slot.ep_steps += 1
            if dones[0]:
                race = slot.env.race
                log.episodes.append(
                    {
                        "step": steps_base + (t + 1) * n_envs,
                        "env": slot.index,
                        "return": slot.ep_return,
                        "length": slot.ep_steps,
                        "laps": int(race.laps_completed[0]),
                        "gates": int(race.gates_passed[0]),
                        "crashed": bool(race.crashed[0]),
                        "success": bool(
                            race.laps_completed[0] >= slot.env.episode_laps
                            and race.collisions[0] == 0
                        ),
                    }
                )
                _reset_slot(slot, stage, pool, selfplay, fixed_opponent, rng, seed_rng)
                actions_scratch[e] = np.zeros((slot.env.n_agents, 4))
            else:
                slot.obs = obs_all[0]

    obs = []
    actions = []
    logps = []
    advs = []
    rets = []
    for e, slot in enumerate(slots):
        if done_buf[e][-1]:
            bootstrap = 0.0
        else:
            _, _, bootstrap = policy_forward(params, slot.obs)
        adv, ret = compute_gae_arrays(
            np.array(rew_buf[e]),
            np.array(val_buf[e]),
            np.array(done_buf[e]),
            float(bootstrap),
            cfg.gamma,
            cfg.lam,
        )
        obs.append(np.stack(obs_buf[e]))
        actions.append(np.stack(act_buf[e]))
        logps.append(np.array(logp_buf[e]))
        advs.append(adv)
        rets.append(ret)
    return RolloutBatch(
        observations=np.concatenate(obs),
        actions=np.concatenate(actions),
        log_probs=np.concatenate(logps),
        advantages=np.concatenate(advs),
        returns=np.concatenate(rets),
    )


def run_stage(
    stage: StageConfig,
    pool: CheckpointPool,
    params: PolicyParams,
    cfg: GaeConfig,
    env_factory,
    seed: int = 0,
    n_envs: int = 8,
    selfplay: bool = True,
    training_laps: int = 2,
) -> tuple[PolicyParams, CheckpointPool, TrainingLog]:
    """Train one curriculum stage until its budget or promotion criterion.

    ``env_factory(n_agents, episode_laps, collect_infos)`` builds workers.
    Stages 2/3 require a non-empty pool: if empty, it is seeded with the
    incoming (previous stage's final) policy. Optimizer moments reset at
    stage entry; the policy parameters carry over. With ``selfplay=False``
    every opponent slot is one fixed random-init policy for the whole stage.
    """
    log = TrainingLog()
    if stage.budget <= 0:
        return params, pool, log

    rng = np.random.default_rng(seed)
    seed_rng = np.random.default_rng(seed + 1)
    gate_rng = np.random.default_rng(seed + 2)

    if stage.stage > 1 and len(pool) == 0:
        pool.append(params, metrics={"seeded_from_previous_stage": True})

    fixed_opponent = None
    if not selfplay and stage.n_agents > 1:
        fixed_opponent = _random_opponent(params, seed)

    slots = []
    for e in range(n_envs):
        env = env_factory(n_agents=stage.n_agents, episode_laps=training_laps, collect_infos=False)
        slot = _EnvSlot(env, e)
        _reset_slot(slot, stage, pool, selfplay, fixed_opponent, rng, seed_rng)
        slots.append(slot)

    opt_state: AdamState | None = None
    steps_done = 0
    next_gate = stage.eval_interval
    while steps_done < stage.budget:
        batch = collect_rollout(
            slots, params, cfg, stage, pool, rng, seed_rng,
            selfplay, fixed_opponent, log, steps_done,
        )
        steps_done += len(batch)
        params, opt_state, diag = ppo_update(params, batch, cfg, opt_state, rng)
        if diag.get("aborted"):
            # Training collapsed: fall back to the best known policy and stop.
            if len(pool) > 0:
                params = pool.best().params.copy()
            log.updates.append({"step": steps_done, "aborted": True, **_slim(diag)})
            break
        recent = [ep["return"] for ep in log.episodes[-50:]]
        log.updates.append(
            {
                "step": steps_done,
                "mean_episode_reward": float(np.mean(recent)) if recent else float("nan"),
                "episodes_seen": len(log.episodes),
                **_slim(diag),
            }
        )
        if steps_done >= next_gate or steps_done >= stage.budget:
            gate = evaluation_gate(
                params, pool, stage, stage.n_eval,
                seed=int(gate_rng.integers(2**31 - 1)), env_factory=env_factory,
            )
            update_pool(pool, params, gate)
            log.gates.append(
                {
                    "step": steps_done,
                    "win_rate": gate.win_rate,
                    "mean_lap_time": gate.mean_lap_time,
                    "success_ratio": gate.success_ratio,
                    "improved": gate.improved,
                    "pool_size": len(pool),
                }
            )
            next_gate += stage.eval_interval
            if (
                stage.promotion_success_ratio is not None
                and gate.success_ratio >= stage.promotion_success_ratio
            ):
                break
    return params, pool, log


def _random_opponent(like: PolicyParams, seed: int) -> PolicyParams:
    """Fresh random-init policy with the same architecture (baseline mode)."""
    from ..learner import init_policy

    return init_policy(
        like.obs_dim, like.act_dim, hidden=like.hidden_sizes, seed=seed + 9999
    )


def _slim(diag: dict) -> dict:
    keep = ("loss", "pg_loss", "value_loss", "entropy", "mean_ratio", "clip_fraction", "approx_kl")
    return {k: diag[k] for k in keep if k in diag}
