"""Simultaneous-arrival task with a shared, depletable communication budget.

N agents live in a square world and must reach a common goal at the same
time. Each step every agent picks a physical action (stay or move one step
along a compass direction) and a verbal action (broadcast its position or
stay silent). Broadcasts share a team-wide budget of ``x`` messages; the
budget fraction drops by 1/x per delivered message and nobody may send once
it reaches 0. A message sent at step t arrives in observations at step t+1;
the blank value (-1, -1) stands for "nothing received".

The joint reward is the negated sum of all agents' goal distances plus all
pairwise differences of those distances, so 0 is optimal and only reachable
with everyone exactly on the goal.

State transitions are pure functions of (state, actions, config); all
randomness lives in :func:`reset`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

PHYSICAL_ACTIONS = ("none", "north", "east", "west", "south")
VERBAL_ACTIONS = ("communicate", "silent")
BLANK_MESSAGE = (-1.0, -1.0)

# Flattened observation layout: [p_x, p_y, g_x, g_y, m_x, m_y, b].
OBS_DIM = 7

_MOVES = {
    "none": (0.0, 0.0),
    "north": (0.0, 1.0),
    "east": (1.0, 0.0),
    "west": (-1.0, 0.0),
    "south": (0.0, -1.0),
}


class EnvError(ValueError):
    """Contract violation in environment configuration or stepping."""


@dataclass(frozen=True)
class EnvConfig:
    n_agents: int = 2
    episode_length: int = 100
    budget_messages: int = 20
    observability: str = "partial"
    world_half_extent: float = 1.0
    step_size: float = 0.1
    goal_placement: str = "random"
    goal_point: Optional[Tuple[float, float]] = None

    def __post_init__(self) -> None:
        if self.n_agents < 1:
            raise EnvError("n_agents must be at least 1")
        if self.episode_length < 1:
            raise EnvError("episode_length must be at least 1")
        if self.budget_messages < 0:
            raise EnvError("budget_messages must be non-negative")
        if self.observability not in ("full", "partial"):
            raise EnvError(f"unknown observability {self.observability!r}")
        if self.world_half_extent <= 0:
            raise EnvError("world_half_extent must be positive")
        if not (0 < self.step_size < self.world_half_extent):
            raise EnvError("step_size must lie in (0, world_half_extent)")
        if self.goal_placement not in ("random", "fixed"):
            raise EnvError(f"unknown goal_placement {self.goal_placement!r}")
        if self.goal_placement == "fixed" and self.goal_point is None:
            raise EnvError("fixed goal placement requires goal_point")


@dataclass(frozen=True)
class AgentAction:
    physical: str
    verbal: str

    def __post_init__(self) -> None:
        if self.physical not in PHYSICAL_ACTIONS:
            raise EnvError(f"unknown physical action {self.physical!r}")
        if self.verbal not in VERBAL_ACTIONS:
            raise EnvError(f"unknown verbal action {self.verbal!r}")

    @property
    def wants_to_communicate(self) -> bool:
        return self.verbal == "communicate"


@dataclass(frozen=True)
class Observation:
    """One agent's view: own position, goal, message slot, budget fraction."""

    own_position: Tuple[float, float]
    goal: Tuple[float, float]
    message: Tuple[float, float]
    budget: float

    def flatten(self) -> np.ndarray:
        return np.array(
            [*self.own_position, *self.goal, *self.message, self.budget],
            dtype=np.float64,
        )


@dataclass(frozen=True)
class RewardBreakdown:
    r_dist: float
    r_diff: float
    reward: float


@dataclass
class WorldState:
    positions: List[Tuple[float, float]]
    goal: Tuple[float, float]
    budget: float
    timestep: int
    last_messages: List[Tuple[float, float]]
    # Integer twin of ``budget`` (budget == messages_remaining / x). Kept so
    # repeated 1/x decrements never drift and the delivered-message count is
    # exact even for budgets like 1/3 that floats cannot represent.
    messages_remaining: int = 0

    def copy(self) -> "WorldState":
        return WorldState(
            positions=list(self.positions),
            goal=self.goal,
            budget=self.budget,
            timestep=self.timestep,
            last_messages=list(self.last_messages),
            messages_remaining=self.messages_remaining,
        )


def _as_rng(rng_seed: np.random.Generator | int | None) -> np.random.Generator:
    if isinstance(rng_seed, np.random.Generator):
        return rng_seed
    return np.random.default_rng(rng_seed)


def reset(
    config: EnvConfig, rng_seed: np.random.Generator | int | None = None
) -> Tuple[WorldState, List[Observation]]:
    """Sample a fresh episode start.

    Agent positions are uniform in the world square, the goal follows
    ``goal_placement``, the budget starts full (1.0) unless no messages are
    allowed, and message slots start blank under partial observability or at
    the true positions under full observability.
    """
    rng = _as_rng(rng_seed)
    half = config.world_half_extent
    positions = [
        (float(x), float(y))
        for x, y in rng.uniform(-half, half, size=(config.n_agents, 2))
    ]
    if config.goal_placement == "fixed":
        goal = (float(config.goal_point[0]), float(config.goal_point[1]))
    else:
        gx, gy = rng.uniform(-half, half, size=2)
        goal = (float(gx), float(gy))

    x = config.budget_messages
    state = WorldState(
        positions=positions,
        goal=goal,
        budget=1.0 if x > 0 else 0.0,
        timestep=0,
        last_messages=[BLANK_MESSAGE] * config.n_agents,
        messages_remaining=x,
    )
    if config.observability == "full":
        state.last_messages = list(positions)
    observations = [build_observation(state, i, config) for i in range(config.n_agents)]
    return state, observations


def compute_reward(state: WorldState) -> RewardBreakdown:
    """Sum of goal distances plus pairwise distance differences, negated."""
    gx, gy = state.goal
    dists = [np.hypot(px - gx, py - gy) for px, py in state.positions]
    r_dist = float(sum(dists))
    r_diff = 0.0
    for i in range(len(dists)):
        for j in range(i + 1, len(dists)):
            r_diff += abs(dists[i] - dists[j])
    r_diff = float(r_diff)
    return RewardBreakdown(r_dist=r_dist, r_diff=r_diff, reward=-(r_dist + r_diff))


def build_observation(state: WorldState, agent_index: int, config: EnvConfig) -> Observation:
    """Observation for one agent.

    Full observability: the message slot always carries the other agent's
    true position. Partial: it carries whatever that agent last delivered
    (blank if nothing arrived this step). With more than two agents the
    single slot reports the lowest-indexed other agent that has a non-blank
    entry.
    """
    n = config.n_agents
    if not (0 <= agent_index < n):
        raise EnvError(f"agent index {agent_index} out of range for {n} agents")
    message = BLANK_MESSAGE
    if n > 1:
        others = [j for j in range(n) if j != agent_index]
        if config.observability == "full":
            message = state.positions[others[0]]
        else:
            for j in others:
                if state.last_messages[j] != BLANK_MESSAGE:
                    message = state.last_messages[j]
                    break
    return Observation(
        own_position=state.positions[agent_index],
        goal=state.goal,
        message=message,
        budget=state.budget,
    )


def step(
    state: WorldState, actions: Sequence[AgentAction], config: EnvConfig
) -> Tuple[WorldState, List[Observation], RewardBreakdown, bool]:
    """Advance the world one timestep.

    Movement happens first (fixed-size compass displacement, clamped to the
    world square). Send attempts are then resolved in agent-index order:
    each sender pays 1/x while budget remains, so simultaneous sends are
    fine whenever enough budget is left and the delivered total can never
    exceed x. Delivered messages carry the sender's post-move position and
    become visible in the returned (next-step) observations; everything else
    stays blank under partial observability.
    """
    n = config.n_agents
    if len(actions) != n:
        raise EnvError(f"expected {n} actions, got {len(actions)}")
    if state.timestep >= config.episode_length:
        raise EnvError("cannot step a finished episode")

    half = config.world_half_extent
    positions = []
    for (px, py), action in zip(state.positions, actions):
        dx, dy = _MOVES[action.physical]
        nx = min(max(px + dx * config.step_size, -half), half)
        ny = min(max(py + dy * config.step_size, -half), half)
        positions.append((float(nx), float(ny)))

    x = config.budget_messages
    remaining = state.messages_remaining
    delivered = [False] * n
    for i, action in enumerate(actions):
        if action.wants_to_communicate and remaining > 0:
            delivered[i] = True
            remaining -= 1

    if config.observability == "full":
        last_messages = list(positions)
    else:
        last_messages = [
            positions[i] if delivered[i] else BLANK_MESSAGE for i in range(n)
        ]

    next_state = WorldState(
        positions=positions,
        goal=state.goal,
        budget=remaining / x if x > 0 else 0.0,
        timestep=state.timestep + 1,
        last_messages=last_messages,
        messages_remaining=remaining,
    )
    breakdown = compute_reward(next_state)
    observations = [build_observation(next_state, i, config) for i in range(n)]
    done = next_state.timestep == config.episode_length
    return next_state, observations, breakdown, done


def delivered_count(before: WorldState, after: WorldState) -> int:
    """Messages delivered during the step that led from ``before`` to ``after``."""
    return before.messages_remaining - after.messages_remaining


def trajectory_record(
    state: WorldState,
    actions: Sequence[AgentAction],
    breakdown: RewardBreakdown,
    delivered: int,
) -> dict:
    """One line of the trajectory dump, as a JSON-serializable dict."""
    return {
        "t": state.timestep,
        "positions": [list(p) for p in state.positions],
        "goal": list(state.goal),
        "physical": [a.physical for a in actions],
        "verbal": [a.verbal for a in actions],
        "messages": [list(m) for m in state.last_messages],
        "budget": state.budget,
        "delivered": delivered,
        "r_dist": breakdown.r_dist,
        "r_diff": breakdown.r_diff,
        "reward": breakdown.reward,
    }


def write_trajectory(path, records: Sequence[dict]) -> None:
    """Line-delimited JSON dump, one record per timestep."""
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
