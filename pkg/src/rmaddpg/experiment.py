"""Configuration-driven experiment grids: train, aggregate, dump rollouts.

A grid is (variant x budget x seed) at a fixed observability. Each cell is
one independent training run writing its own metrics file (line-delimited
JSON, append-only) and checkpoint; the coordinator writes a manifest with
the fully resolved configuration once, up front. Cells may run in parallel
processes since they share nothing.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .agents import VARIANTS, VariantSpec, load_bundles, save_bundles
from .env import EnvConfig, write_trajectory
from .metrics import MetricsRecord, append_record, read_many
from .trainer import TrainConfig, rollout_episode, train_run

DEFAULT_OUT_ENV_VAR = "RMADDPG_OUT"


class ExperimentError(ValueError):
    """Invalid experiment specification or unusable output location."""


@dataclass
class ExperimentSpec:
    variants: List[str]
    budgets: List[int]
    seeds: List[int]
    observability: str = "partial"
    episodes: int = 1000
    eval_period: int = 50
    out: str = ""
    workers: int = 1
    n_agents: int = 2
    episode_length: int = 100
    batch_episodes: int = 256
    update_period_timesteps: int = 100
    lr: float = 0.01
    tau: float = 0.01
    gamma: float = 0.95
    temperature: float = 1.0
    hidden_units: int = 64
    critic_target_states: str = "reunrolled"

    def __post_init__(self) -> None:
        if not self.variants:
            raise ExperimentError("variant list must be non-empty")
        if not self.seeds:
            raise ExperimentError("seed list must be non-empty")
        if not self.budgets:
            raise ExperimentError("budget list must be non-empty")
        unknown = [v for v in self.variants if v not in VARIANTS]
        if unknown:
            raise ExperimentError(f"unknown variants: {unknown}")
        if any(b < 0 for b in self.budgets):
            raise ExperimentError("budgets must be non-negative")
        if self.workers < 1:
            raise ExperimentError("workers must be positive")
        if not self.out:
            self.out = os.environ.get(DEFAULT_OUT_ENV_VAR, "runs")

    def cells(self) -> List[Tuple[str, int, int]]:
        return [(v, b, s) for v in self.variants for b in self.budgets for s in self.seeds]

    def env_config(self, budget: int) -> EnvConfig:
        return EnvConfig(
            n_agents=self.n_agents,
            episode_length=self.episode_length,
            budget_messages=budget,
            observability=self.observability,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr,
            tau=self.tau,
            gamma=self.gamma,
            batch_episodes=self.batch_episodes,
            update_period_timesteps=self.update_period_timesteps,
            total_episodes=self.episodes,
            seeds=len(self.seeds),
            temperature=self.temperature,
            eval_period_episodes=self.eval_period,
            hidden_units=self.hidden_units,
            critic_target_states=self.critic_target_states,
        )


def run_id_for(variant: str, budget: int, seed: int) -> str:
    return f"{variant}-b{budget}-s{seed}"


def _run_cell(args: Tuple[dict, str, int, int]) -> dict:
    """Train one grid cell; must stay top-level so workers can pickle it."""
    spec_dict, variant_name, budget, seed = args
    spec = ExperimentSpec(**spec_dict)
    run_id = run_id_for(variant_name, budget, seed)
    out = Path(spec.out)
    metrics_path = out / "metrics" / f"{run_id}.jsonl"
    checkpoint_path = out / "checkpoints" / f"{run_id}.ckpt"
    metrics_path.parent.mkdir(parents=True, exist_ok=True)
    checkpoint_path.parent.mkdir(parents=True, exist_ok=True)
    if metrics_path.exists():
        metrics_path.unlink()

    result = train_run(
        spec.env_config(budget),
        VariantSpec.from_name(variant_name),
        spec.train_config(),
        seed,
        run_id=run_id,
        metrics_sink=lambda record: append_record(metrics_path, record),
    )
    env_cfg = spec.env_config(budget)
    save_bundles(
        checkpoint_path,
        result.bundles,
        extra_metadata={
            "run_id": run_id,
            "seed": seed,
            "env": {
                "n_agents": env_cfg.n_agents,
                "episode_length": env_cfg.episode_length,
                "budget_messages": env_cfg.budget_messages,
                "observability": env_cfg.observability,
                "world_half_extent": env_cfg.world_half_extent,
                "step_size": env_cfg.step_size,
            },
        },
    )
    return {
        "run_id": run_id,
        "metrics": str(metrics_path),
        "checkpoint": str(checkpoint_path),
        "aborted": result.aborted,
        "updates": result.meta["updates"],
    }


def run_experiment(spec: ExperimentSpec) -> dict:
    """Run every grid cell once and return the manifest."""
    out = Path(spec.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-probe"
        probe.write_text("ok")
        probe.unlink()
    except OSError as exc:
        raise ExperimentError(f"output directory {out} is not writable: {exc}") from exc

    manifest = {
        "spec": asdict(spec),
        "cells": [
            {"run_id": run_id_for(v, b, s), "variant": v, "budget": b, "seed": s}
            for v, b, s in spec.cells()
        ],
        "started": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))

    args = [(asdict(spec), v, b, s) for v, b, s in spec.cells()]
    if spec.workers == 1 or len(args) == 1:
        results = [_run_cell(a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=spec.workers) as pool:
            results = list(pool.map(_run_cell, args))
    manifest["results"] = results
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


@dataclass
class SummaryRow:
    variant: str
    budget: int
    bucket_start: int
    n_seeds: int
    single_seed: bool
    mean_team_distance: float
    std_team_distance: float
    mean_difference: float
    std_difference: float


def summarize(metric_paths: Sequence[str | Path], bucket_width: int = 100) -> List[SummaryRow]:
    """Mean/std across seeds of the evaluation metrics per episode bucket.

    Records are first averaged per seed within each bucket so seeds with
    different eval cadences still weigh equally.
    """
    records = read_many(metric_paths)
    if not records:
        raise ExperimentError("no metrics records to summarize")
    if bucket_width < 1:
        raise ExperimentError("bucket_width must be positive")

    grouped: Dict[Tuple[str, int, int], Dict[int, List[MetricsRecord]]] = {}
    for rec in records:
        bucket = (rec.episode_index // bucket_width) * bucket_width
        grouped.setdefault((rec.variant, rec.budget, bucket), {}).setdefault(
            rec.seed, []
        ).append(rec)

    rows = []
    for (variant, budget, bucket), by_seed in sorted(grouped.items()):
        dist_by_seed = [float(np.mean([r.team_distance for r in recs])) for recs in by_seed.values()]
        diff_by_seed = [float(np.mean([r.difference for r in recs])) for recs in by_seed.values()]
        n = len(by_seed)
        rows.append(
            SummaryRow(
                variant=variant,
                budget=budget,
                bucket_start=bucket,
                n_seeds=n,
                single_seed=n == 1,
                mean_team_distance=float(np.mean(dist_by_seed)),
                std_team_distance=float(np.std(dist_by_seed)) if n > 1 else 0.0,
                mean_difference=float(np.mean(diff_by_seed)),
                std_difference=float(np.std(diff_by_seed)) if n > 1 else 0.0,
            )
        )
    return rows


def write_summary_csv(rows: Sequence[SummaryRow], path: str | Path) -> None:
    import csv

    fields = [
        "variant",
        "budget",
        "bucket_start",
        "n_seeds",
        "single_seed",
        "mean_team_distance",
        "std_team_distance",
        "mean_difference",
        "std_difference",
    ]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for row in rows:
            writer.writerow([getattr(row, f) for f in fields])


def emit_trajectory(
    checkpoint_path: str | Path,
    env_seed: int,
    out_path: str | Path,
    budget: Optional[int] = None,
) -> List[dict]:
    """Greedy rollout of a checkpoint, dumped in the trajectory format.

    The environment configuration is read back from the checkpoint; only the
    budget may be overridden (e.g. to probe a trained policy under tighter
    limits).
    """
    bundles, metadata = load_bundles(checkpoint_path)
    env_meta = metadata.get("env")
    if not env_meta:
        raise ExperimentError(f"{checkpoint_path} carries no environment configuration")
    env_cfg = EnvConfig(
        n_agents=env_meta["n_agents"],
        episode_length=env_meta["episode_length"],
        budget_messages=budget if budget is not None else env_meta["budget_messages"],
        observability=env_meta["observability"],
        world_half_extent=env_meta["world_half_extent"],
        step_size=env_meta["step_size"],
    )
    if bundles[0].n_agents != env_cfg.n_agents:
        raise ExperimentError("checkpoint agent count does not match environment")
    _, _, trajectory = rollout_episode(
        bundles, env_cfg, env_seed, mode="greedy", record_trajectory=True
    )
    write_trajectory(out_path, trajectory)
    return trajectory
