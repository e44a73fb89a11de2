"""Experiment configuration: one declarative YAML file with full defaults.

Every field has a default; unknown keys are rejected with their dotted path.
Two content hashes are derived from the resolved configuration:

* ``config_hash`` covers everything and stamps artifacts for provenance.
* ``compat_hash`` covers only the sections that define the environment and
  model contract (physics, controller, track, rewards, observation, env,
  network architecture). Artifacts may only be mixed when their compat
  hashes agree; training-schedule or evaluation settings do not affect it.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .control import PidGains
from .dynamics import DroneParams
from .learner import GaeConfig
from .observations import ObservationConfig
from .race import RaceEnv
from .rewards import RewardWeights
from .selfplay import StageConfig
from .track import Track, circular_track


class ConfigError(ValueError):
    """Invalid, unknown, or inconsistent configuration input."""


@dataclass
class PhysicsSection:
    mass: float = 0.027
    gravity: float = 9.81
    inertia_diag: list = field(default_factory=lambda: [1.4e-5, 1.4e-5, 2.17e-5])
    arm_length: float = 0.0397
    thrust_coeff: float = 3.16e-10
    torque_coeff: float = 7.94e-12
    drag_coeffs: list = field(default_factory=lambda: [9.18e-7, 9.18e-7, 9.18e-7])
    collision_radius: float = 0.06
    motor_speed_max: float = 21713.0


@dataclass
class ControllerSection:
    pos_p: list = field(default_factory=lambda: [9.0, 9.0, 12.0])
    pos_i: list = field(default_factory=lambda: [0.25, 0.25, 0.25])
    pos_d: list = field(default_factory=lambda: [5.5, 5.5, 6.0])
    att_p: list = field(default_factory=lambda: [400.0, 400.0, 120.0])
    att_i: list = field(default_factory=lambda: [0.0, 0.0, 0.0])
    att_d: list = field(default_factory=lambda: [40.0, 40.0, 25.0])
    pos_integrator_limit: list = field(default_factory=lambda: [0.5, 0.5, 0.5])
    att_integrator_limit: list = field(default_factory=lambda: [1.0, 1.0, 1.0])
    pos_output_limit: list = field(default_factory=lambda: [5.5, 5.5, 10.0])
    att_output_limit: list = field(default_factory=lambda: [250.0, 250.0, 100.0])
    max_tilt_deg: float = 30.0
    max_offset: float = 3.0


@dataclass
class TrackSection:
    n_gates: int = 6
    radius: float = 5.0
    altitude: float = 1.5
    half_width: float = 0.5
    half_height: float = 0.5
    frame_thickness: float = 0.1
    bounds_margin: float = 4.0
    bounds_height: float = 5.0


@dataclass
class RewardSection:
    w_progress: float = 1.0
    w_collision: float = 1.0
    w_alignment: float = 1.0
    progress_scale: float = 1.0
    gate_bonus: float = 5.0
    collision_penalty: float = 10.0
    alignment_scale: float = 0.5
    alignment_threshold_deg: float = 30.0


@dataclass
class ObservationSection:
    history_len: int = 50
    n_opponents: int = 2
    n_gates_ahead: int = 2
    snapshot_count: int = 5
    snapshot_stride: int = 10
    mode: str = "strided"
    pos_scale: float = 10.0
    vel_scale: float = 10.0
    rate_scale: float = 10.0


@dataclass
class EnvSection:
    physics_hz: float = 240.0
    substeps: int = 5
    episode_laps: int = 2
    timeout: float = 60.0
    start_offset: float = 1.5
    start_jitter: float = 1.0


@dataclass
class LearnerSection:
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    learning_rate: float = 3e-4
    epochs: int = 10
    minibatch_size: int = 256
    rollout_length: int = 4096
    hidden: list = field(default_factory=lambda: [128, 128])
    log_std_init: float = -0.5
    n_envs: int = 8


@dataclass
class StageSection:
    stage: int = 1
    budget: int = 200_000
    n_agents: int = 0           # 0 derives 1/2/4 from the stage id
    promotion_success_ratio: float | None = None


def _default_stages() -> list:
    return [
        StageSection(stage=1, budget=200_000, promotion_success_ratio=0.7),
        StageSection(stage=2, budget=200_000),
        StageSection(stage=3, budget=200_000),
    ]


@dataclass
class SelfplaySection:
    enabled: bool = True
    p_latest: float = 0.8
    win_threshold: float = 0.55
    n_eval: int = 20
    eval_interval: int = 50_000
    training_laps: int = 2
    stages: list = field(default_factory=_default_stages)


@dataclass
class EvaluationSection:
    scenario: str = "solo"
    slots: list = field(default_factory=lambda: ["scripted:centerline"])
    n_runs: int = 50
    base_seed: int = 1000
    laps: int = 1


@dataclass
class ExperimentConfig:
    seed: int = 0
    output_dir: str = "runs/experiment"
    physics: PhysicsSection = field(default_factory=PhysicsSection)
    controller: ControllerSection = field(default_factory=ControllerSection)
    track: TrackSection = field(default_factory=TrackSection)
    rewards: RewardSection = field(default_factory=RewardSection)
    observation: ObservationSection = field(default_factory=ObservationSection)
    env: EnvSection = field(default_factory=EnvSection)
    learner: LearnerSection = field(default_factory=LearnerSection)
    selfplay: SelfplaySection = field(default_factory=SelfplaySection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)


def _from_dict(cls, data, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError(f"unknown config key {path + '.' if path else ''}{key}")
    kwargs = {}
    for name, value in data.items():
        sub = f"{path}.{name}" if path else name
        if name == "stages":
            if not isinstance(value, list):
                raise ConfigError(f"{sub}: expected a list of stages")
            kwargs[name] = [_from_dict(StageSection, v, f"{sub}[{i}]") for i, v in enumerate(value)]
        else:
            kwargs[name] = value
    return cls(**kwargs)


_SECTION_TYPES = {
    "physics": PhysicsSection,
    "controller": ControllerSection,
    "track": TrackSection,
    "rewards": RewardSection,
    "observation": ObservationSection,
    "env": EnvSection,
    "learner": LearnerSection,
    "selfplay": SelfplaySection,
    "evaluation": EvaluationSection,
}


def config_from_dict(data: dict | None) -> ExperimentConfig:
    """Resolve a (possibly partial) mapping over the defaults.

    Unknown keys anywhere in the tree raise ConfigError with the dotted path.
    """
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("top-level config must be a mapping")
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown config key {sorted(unknown)[0]}")
    kwargs = {}
    for name, value in data.items():
        if name in _SECTION_TYPES:
            kwargs[name] = _from_dict(_SECTION_TYPES[name], value, name)
        else:
            kwargs[name] = value
    return ExperimentConfig(**kwargs)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return asdict(cfg)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: {e}") from e
    return config_from_dict(data)


def save_config(cfg: ExperimentConfig, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=True))


def _hash_payload(payload) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def config_hash(cfg: ExperimentConfig) -> str:
    """Content hash of the fully resolved configuration."""
    return _hash_payload(config_to_dict(cfg))


COMPAT_SECTIONS = ("physics", "controller", "track", "rewards", "observation", "env")


def compat_hash(cfg: ExperimentConfig) -> str:
    """Hash of the environment/model contract only (see module docstring)."""
    d = config_to_dict(cfg)
    payload = {k: d[k] for k in COMPAT_SECTIONS}
    payload["network_hidden"] = d["learner"]["hidden"]
    return _hash_payload(payload)


# ---------------------------------------------------------------------------
# Builders: typed runtime objects from the configuration tree.
# ---------------------------------------------------------------------------


def build_drone_params(cfg: ExperimentConfig) -> DroneParams:
    p = cfg.physics
    return DroneParams(
        mass=p.mass,
        gravity=p.gravity,
        inertia=np.diag(p.inertia_diag),
        arm_length=p.arm_length,
        thrust_coeff=p.thrust_coeff,
        torque_coeff=p.torque_coeff,
        drag_coeffs=p.drag_coeffs,
        collision_radius=p.collision_radius,
        motor_speed_max=p.motor_speed_max,
    )


def build_gains(cfg: ExperimentConfig) -> PidGains:
    c = cfg.controller
    return PidGains(
        pos_p=c.pos_p,
        pos_i=c.pos_i,
        pos_d=c.pos_d,
        att_p=c.att_p,
        att_i=c.att_i,
        att_d=c.att_d,
        pos_integrator_limit=c.pos_integrator_limit,
        att_integrator_limit=c.att_integrator_limit,
        pos_output_limit=c.pos_output_limit,
        att_output_limit=c.att_output_limit,
        max_tilt=math.radians(c.max_tilt_deg),
    )


def build_track(cfg: ExperimentConfig) -> Track:
    t = cfg.track
    return circular_track(
        n_gates=t.n_gates,
        radius=t.radius,
        altitude=t.altitude,
        half_width=t.half_width,
        half_height=t.half_height,
        frame_thickness=t.frame_thickness,
        bounds_margin=t.bounds_margin,
        height=t.bounds_height,
    )


def build_reward_weights(cfg: ExperimentConfig) -> RewardWeights:
    r = cfg.rewards
    return RewardWeights(
        w_progress=r.w_progress,
        w_collision=r.w_collision,
        w_alignment=r.w_alignment,
        progress_scale=r.progress_scale,
        gate_bonus=r.gate_bonus,
        collision_penalty=r.collision_penalty,
        alignment_scale=r.alignment_scale,
        alignment_threshold=math.radians(r.alignment_threshold_deg),
    )


def build_obs_config(cfg: ExperimentConfig) -> ObservationConfig:
    o = cfg.observation
    return ObservationConfig(
        history_len=o.history_len,
        n_opponents=o.n_opponents,
        n_gates_ahead=o.n_gates_ahead,
        snapshot_count=o.snapshot_count,
        snapshot_stride=o.snapshot_stride,
        mode=o.mode,
        pos_scale=o.pos_scale,
        vel_scale=o.vel_scale,
        rate_scale=o.rate_scale,
    )


def build_gae_config(cfg: ExperimentConfig) -> GaeConfig:
    l = cfg.learner
    return GaeConfig(
        gamma=l.gamma,
        lam=l.lam,
        clip_eps=l.clip_eps,
        entropy_coef=l.entropy_coef,
        value_coef=l.value_coef,
        learning_rate=l.learning_rate,
        epochs=l.epochs,
        minibatch_size=l.minibatch_size,
        rollout_length=l.rollout_length,
    )


def build_stages(cfg: ExperimentConfig) -> list[StageConfig]:
    sp = cfg.selfplay
    return [
        StageConfig(
            stage=s.stage,
            budget=s.budget,
            n_agents=s.n_agents,
            p_latest=sp.p_latest,
            win_threshold=sp.win_threshold,
            n_eval=sp.n_eval,
            eval_interval=sp.eval_interval,
            promotion_success_ratio=s.promotion_success_ratio,
        )
        for s in sp.stages
    ]


def build_env_factory(cfg: ExperimentConfig):
    """Factory of identically configured environments (one per worker)."""
    track = build_track(cfg)
    params = build_drone_params(cfg)
    gains = build_gains(cfg)
    weights = build_reward_weights(cfg)
    obs_cfg = build_obs_config(cfg)
    e = cfg.env

    def factory(n_agents: int, episode_laps: int | None = None, collect_infos: bool = True) -> RaceEnv:
        return RaceEnv(
            track=track,
            params=params,
            gains=gains,
            weights=weights,
            obs_config=obs_cfg,
            substeps=e.substeps,
            physics_dt=1.0 / e.physics_hz,
            episode_laps=e.episode_laps if episode_laps is None else episode_laps,
            timeout=e.timeout,
            max_offset=cfg.controller.max_offset,
            start_offset=e.start_offset,
            start_jitter=e.start_jitter,
            collect_infos=collect_infos,
        )

    return factory


def observation_scales(cfg: ExperimentConfig) -> dict:
    """Normalization constants stored inside checkpoints."""
    o = cfg.observation
    return {
        "pos_scale": o.pos_scale,
        "vel_scale": o.vel_scale,
        "rate_scale": o.rate_scale,
        "max_offset": cfg.controller.max_offset,
    }
