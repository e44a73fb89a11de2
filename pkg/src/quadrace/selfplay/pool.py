"""The best-checkpoint opponent pool.

Versions are append-only and strictly increasing; the newest append is
always the best (appends happen only when the evaluation gate reports an
improvement). When backed by a directory the pool persists after every
append: one checkpoint file per version plus a JSON manifest with versions,
metrics, the best pointer, config hashes, and stage progress for resuming.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from ..learner import PolicyParams, load_policy, save_policy

MANIFEST_NAME = "manifest.json"


@dataclass(eq=False)
class PoolEntry:
    version: int
    params: PolicyParams
    metrics: dict = field(default_factory=dict)


class CheckpointPool:
    """Versioned best-policy snapshots used as self-play opponents."""

    def __init__(
        self,
        directory: str | Path | None = None,
        config_hash: str = "",
        compat_hash: str = "",
        scales: dict | None = None,
    ):
        self.directory = Path(directory) if directory is not None else None
        self.config_hash = config_hash
        self.compat_hash = compat_hash
        self.scales = scales or {}
        self.entries: list[PoolEntry] = []
        self.best_version: int | None = None
        self.stage_progress: dict[str, dict] = {}

    def __len__(self) -> int:
        return len(self.entries)

    def versions(self) -> list[int]:
        return [e.version for e in self.entries]

    def best(self) -> PoolEntry:
        if self.best_version is None:
            raise RuntimeError("pool is empty")
        return next(e for e in self.entries if e.version == self.best_version)

    def entry(self, version: int) -> PoolEntry:
        return next(e for e in self.entries if e.version == version)

    def append(self, params: PolicyParams, metrics: dict | None = None) -> int:
        """Snapshot params as the new best version; persists if disk-backed."""
        version = self.entries[-1].version + 1 if self.entries else 1
        self.entries.append(PoolEntry(version=version, params=params.copy(), metrics=dict(metrics or {})))
        self.best_version = version
        self.persist()
        return version

    def record_stage_progress(self, stage: int, steps_done: int, complete: bool) -> None:
        self.stage_progress[str(stage)] = {"steps_done": int(steps_done), "complete": bool(complete)}
        self.persist()

    def _checkpoint_name(self, version: int) -> str:
        return f"v{version:04d}.npz"

    def persist(self) -> None:
        """Write the manifest and any checkpoint files not yet on disk."""
        if self.directory is None:
            return
        self.directory.mkdir(parents=True, exist_ok=True)
        for e in self.entries:
            path = self.directory / self._checkpoint_name(e.version)
            if not path.exists():
                save_policy(
                    path,
                    e.params,
                    config_hash=self.config_hash,
                    compat_hash=self.compat_hash,
                    scales=self.scales,
                    extra={"pool_version": e.version},
                )
        manifest = {
            "config_hash": self.config_hash,
            "compat_hash": self.compat_hash,
            "best_version": self.best_version,
            "versions": [
                {
                    "version": e.version,
                    "file": self._checkpoint_name(e.version),
                    "metrics": e.metrics,
                }
                for e in self.entries
            ],
            "stage_progress": self.stage_progress,
        }
        tmp = self.directory / (MANIFEST_NAME + ".tmp")
        tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True))
        tmp.replace(self.directory / MANIFEST_NAME)

    def best_checkpoint_path(self) -> Path:
        if self.directory is None or self.best_version is None:
            raise RuntimeError("pool is not disk-backed or is empty")
        return self.directory / self._checkpoint_name(self.best_version)

    @classmethod
    def load(cls, directory: str | Path) -> "CheckpointPool":
        """Restore a pool (with all version metadata) from its directory."""
        directory = Path(directory)
        manifest_path = directory / MANIFEST_NAME
        if not manifest_path.exists():
            raise FileNotFoundError(f"no pool manifest at {manifest_path}")
        manifest = json.loads(manifest_path.read_text())
        pool = cls(
            directory=directory,
            config_hash=manifest.get("config_hash", ""),
            compat_hash=manifest.get("compat_hash", ""),
        )
        for row in manifest["versions"]:
            params, meta = load_policy(directory / row["file"])
            pool.entries.append(
                PoolEntry(version=int(row["version"]), params=params, metrics=row.get("metrics", {}))
            )
            pool.scales = meta.get("scales", pool.scales)
        pool.best_version = manifest.get("best_version")
        pool.stage_progress = manifest.get("stage_progress", {})
        versions = pool.versions()
        if versions != sorted(set(versions)):
            raise ValueError(f"{manifest_path}: versions must be strictly increasing")
        if pool.best_version is not None and pool.best_version not in versions:
            raise ValueError(f"{manifest_path}: best_version missing from the version list")
        return pool


def update_pool(pool: CheckpointPool, candidate: PolicyParams, result) -> CheckpointPool:
    """Append the candidate as the new best iff the gate saw an improvement."""
    if result.improved:
        pool.append(
            candidate,
            metrics={
                "win_rate": result.win_rate,
                "mean_lap_time": result.mean_lap_time,
                "success_ratio": result.success_ratio,
            },
        )
    return pool
