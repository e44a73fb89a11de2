"""Policy checkpoint files.

Format: a numpy ``.npz`` archive with reserved metadata keys followed by the
weight payload. Stable across versions via a magic string and a version
field; loading rejects unknown magics and newer versions.

    __magic__        "quadrace-policy"
    __version__      format version (currently 1)
    __config_hash__  hash of the full experiment config that produced it
    __compat_hash__  hash of the environment/model contract sections
    __obs_dim__, __act_dim__, __hidden__   dimension header
    __scales__       observation normalization constants (pos/vel/rate/offset)
    actor_w0, actor_b0, ... log_std, critic_w0, ...   weight arrays
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .policy import PolicyParams

MAGIC = "quadrace-policy"
FORMAT_VERSION = 1


def save_policy(
    path: str | Path,
    params: PolicyParams,
    config_hash: str = "",
    compat_hash: str = "",
    scales: dict | None = None,
    extra: dict | None = None,
) -> None:
    """Write a checkpoint; parent directories are created as needed."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    scales = scales or {}
    payload: dict = {
        "__magic__": np.array(MAGIC),
        "__version__": np.array(FORMAT_VERSION),
        "__config_hash__": np.array(config_hash),
        "__compat_hash__": np.array(compat_hash),
        "__obs_dim__": np.array(params.obs_dim),
        "__act_dim__": np.array(params.act_dim),
        "__hidden__": np.array(params.hidden_sizes),
        "__scales__": np.array(sorted(scales.items()), dtype=object)
        if scales
        else np.empty((0, 2), dtype=object),
    }
    for k, v in (extra or {}).items():
        payload[f"__x_{k}__"] = np.array(v)
    for i, (w, b) in enumerate(params.actor):
        payload[f"actor_w{i}"] = w
        payload[f"actor_b{i}"] = b
    payload["log_std"] = params.log_std
    for i, (w, b) in enumerate(params.critic):
        payload[f"critic_w{i}"] = w
        payload[f"critic_b{i}"] = b
    with open(path, "wb") as f:
        np.savez(f, **payload)


def load_policy(path: str | Path) -> tuple[PolicyParams, dict]:
    """Read a checkpoint; returns (params, metadata).

    Metadata carries config_hash, compat_hash, obs_dim, act_dim, hidden,
    scales, and any extra fields saved alongside.
    """
    path = Path(path)
    with np.load(path, allow_pickle=True) as data:
        if "__magic__" not in data or str(data["__magic__"]) != MAGIC:
            raise ValueError(f"{path}: not a policy checkpoint")
        version = int(data["__version__"])
        if version > FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        actor = []
        i = 0
        while f"actor_w{i}" in data:
            actor.append((data[f"actor_w{i}"], data[f"actor_b{i}"]))
            i += 1
        critic = []
        i = 0
        while f"critic_w{i}" in data:
            critic.append((data[f"critic_w{i}"], data[f"critic_b{i}"]))
            i += 1
        params = PolicyParams(actor=actor, log_std=data["log_std"], critic=critic)
        meta = {
            "version": version,
            "config_hash": str(data["__config_hash__"]),
            "compat_hash": str(data["__compat_hash__"]),
            "obs_dim": int(data["__obs_dim__"]),
            "act_dim": int(data["__act_dim__"]),
            "hidden": tuple(int(h) for h in data["__hidden__"]),
            "scales": {str(k): float(v) for k, v in data["__scales__"]},
        }
        for key in data.files:
            if key.startswith("__x_") and key.endswith("__"):
                meta[key[4:-2]] = data[key].item()
    if meta["obs_dim"] != params.obs_dim or meta["act_dim"] != params.act_dim:
        raise ValueError(f"{path}: dimension header does not match the weight payload")
    return params, meta
