"""Command-line front end: train, sweep, summarize, rollout.

Defaults come from built-ins, then an optional key=value spec file, then
explicit flags (strongest). The default output root can also be set through
the RMADDPG_OUT environment variable.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .agents import VARIANTS
from .experiment import (
    DEFAULT_OUT_ENV_VAR,
    ExperimentError,
    ExperimentSpec,
    emit_trajectory,
    run_experiment,
    summarize,
    write_summary_csv,
)

# Spec-file keys, their parsers, and the ExperimentSpec fields they feed.
_SPEC_KEYS = {
    "variants": ("variants", lambda s: [v.strip() for v in s.split(",") if v.strip()]),
    "observability": ("observability", str),
    "budgets": ("budgets", lambda s: [int(v) for v in s.split(",") if v.strip()]),
    "seeds": ("seeds", lambda s: [int(v) for v in s.split(",") if v.strip()]),
    "episodes": ("episodes", int),
    "eval_period": ("eval_period", int),
    "out": ("out", str),
    "workers": ("workers", int),
    "n_agents": ("n_agents", int),
    "episode_length": ("episode_length", int),
    "batch_episodes": ("batch_episodes", int),
    "update_period_timesteps": ("update_period_timesteps", int),
    "lr": ("lr", float),
    "tau": ("tau", float),
    "gamma": ("gamma", float),
    "temperature": ("temperature", float),
    "hidden_units": ("hidden_units", int),
    "critic_target_states": ("critic_target_states", str),
}


def load_spec_file(path: str | Path) -> Dict[str, object]:
    """Parse a key = value spec file (one pair per line, # comments)."""
    values: Dict[str, object] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ExperimentError(f"{path}:{lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _SPEC_KEYS:
            raise ExperimentError(f"{path}:{lineno}: unknown key {key!r}")
        field, parse = _SPEC_KEYS[key]
        try:
            values[field] = parse(value)
        except ValueError as exc:
            raise ExperimentError(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return values


def _csv_ints(text: str) -> List[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _csv_strs(text: str) -> List[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--spec-file", help="key = value experiment file; flags override it")
    parser.add_argument("--observability", choices=("full", "partial"))
    parser.add_argument("--episodes", type=int)
    parser.add_argument("--eval-period", type=int, dest="eval_period")
    parser.add_argument("--out", help=f"output root (default ${DEFAULT_OUT_ENV_VAR} or ./runs)")
    parser.add_argument("--workers", type=int)
    parser.add_argument("--n-agents", type=int, dest="n_agents")
    parser.add_argument("--episode-length", type=int, dest="episode_length")
    parser.add_argument("--batch-episodes", type=int, dest="batch_episodes")
    parser.add_argument("--update-period", type=int, dest="update_period_timesteps")
    parser.add_argument("--lr", type=float)
    parser.add_argument("--tau", type=float)
    parser.add_argument("--gamma", type=float)
    parser.add_argument("--temperature", type=float)
    parser.add_argument("--hidden-units", type=int, dest="hidden_units")
    parser.add_argument(
        "--critic-target-states",
        choices=("reunrolled", "stored"),
        dest="critic_target_states",
        help="recurrent-state source for TD targets",
    )


def _build_spec(args: argparse.Namespace, overrides: Dict[str, object]) -> ExperimentSpec:
    values: Dict[str, object] = {}
    if args.spec_file:
        values.update(load_spec_file(args.spec_file))
    for field, _ in _SPEC_KEYS.values():
        flag_value = getattr(args, field, None)
        if flag_value is not None:
            values[field] = flag_value
    values.update(overrides)
    for required in ("variants", "budgets", "seeds"):
        if not values.get(required):
            raise ExperimentError(f"missing required setting {required!r}")
    return ExperimentSpec(**values)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rmaddpg",
        description="Recurrent multi-agent actor-critic runs on the arrival task",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train one (variant, budget, seed) cell")
    train.add_argument("--variant", choices=sorted(VARIANTS), required=True)
    train.add_argument("--budget", type=int, required=True)
    train.add_argument("--seed", type=int, default=0)
    _add_run_flags(train)

    sweep = sub.add_parser("sweep", help="train a full variant x budget x seed grid")
    sweep.add_argument("--variants", type=_csv_strs, help="comma-separated variant names")
    sweep.add_argument("--budgets", type=_csv_ints, help="comma-separated budgets")
    sweep.add_argument("--seeds", type=_csv_ints, help="comma-separated seeds")
    _add_run_flags(sweep)

    summary = sub.add_parser("summarize", help="aggregate metrics files into a CSV table")
    summary.add_argument("metrics", nargs="+", help="metrics .jsonl files")
    summary.add_argument("--out", required=True, help="CSV output path")
    summary.add_argument("--bucket", type=int, default=100, help="episode bucket width")

    rollout = sub.add_parser("rollout", help="dump a greedy trajectory from a checkpoint")
    rollout.add_argument("--checkpoint", required=True)
    rollout.add_argument("--env-seed", type=int, required=True, dest="env_seed")
    rollout.add_argument("--out", required=True, help="trajectory .jsonl path")
    rollout.add_argument("--budget", type=int, help="override the checkpoint's budget")

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "train":
            spec = _build_spec(
                args,
                {"variants": [args.variant], "budgets": [args.budget], "seeds": [args.seed]},
            )
            manifest = run_experiment(spec)
            print(json.dumps(manifest["results"], indent=2))
        elif args.command == "sweep":
            spec = _build_spec(args, {})
            manifest = run_experiment(spec)
            print(f"{len(manifest['results'])} cells written under {spec.out}")
        elif args.command == "summarize":
            rows = summarize(args.metrics, bucket_width=args.bucket)
            write_summary_csv(rows, args.out)
            print(f"{len(rows)} summary rows -> {args.out}")
        elif args.command == "rollout":
            trajectory = emit_trajectory(
                args.checkpoint, args.env_seed, args.out, budget=args.budget
            )
            print(f"{len(trajectory)} steps -> {args.out}")
    except (ExperimentError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
