"""Episode-structured experience replay.

Transitions carry the per-agent observations, one-hot actions, shared
reward, and, depending on the variant, the actor and/or critic recurrent
states before and after each step. Episodes are stored whole so recurrent
updates can re-unroll them; sampling is uniform over episodes, with
replacement. Capacity is counted in transitions and eviction drops whole
episodes, oldest first.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, List, Optional

import numpy as np

from .agents import ACTION_DIM, VariantSpec
from .nnet import RecurrentState, load_arrays, save_arrays


class ReplayError(ValueError):
    """Invariant-violating episode or invalid buffer operation."""


def stack_states(states: List[RecurrentState]) -> np.ndarray:
    """Per-agent recurrent states as one (n_agents, 2, hidden) array.

    Index 0 of the middle axis is the hidden vector, index 1 the cell.
    """
    return np.stack([np.stack([s.hidden, s.cell]) for s in states])


@dataclass
class Transition:
    obs: np.ndarray  # (n_agents, obs_dim)
    actions: np.ndarray  # (n_agents, ACTION_DIM), one-hot per head
    next_obs: np.ndarray  # (n_agents, obs_dim)
    reward: float
    done: bool
    actor_state: Optional[np.ndarray] = None  # (n_agents, 2, hidden)
    actor_state_next: Optional[np.ndarray] = None
    critic_state: Optional[np.ndarray] = None
    critic_state_next: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.obs = np.asarray(self.obs, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        self.next_obs = np.asarray(self.next_obs, dtype=np.float64)
        if self.obs.ndim != 2 or self.obs.shape != self.next_obs.shape:
            raise ReplayError("obs and next_obs must both be (n_agents, obs_dim)")
        if self.actions.shape != (self.obs.shape[0], ACTION_DIM):
            raise ReplayError(f"actions must be (n_agents, {ACTION_DIM})")


@dataclass
class Episode:
    transitions: List[Transition]
    meta: Dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.transitions)

    def arrays(self) -> Dict[str, Optional[np.ndarray]]:
        """Transitions stacked along a leading time axis, cached.

        Safe to memoize because stored episodes are immutable; training
        code reads these arrays instead of re-stacking per update.
        """
        cached = getattr(self, "_arrays", None)
        if cached is None:
            ts = self.transitions
            cached = {
                "obs": np.stack([t.obs for t in ts]),
                "actions": np.stack([t.actions for t in ts]),
                "next_obs": np.stack([t.next_obs for t in ts]),
                "reward": np.array([t.reward for t in ts]),
                "done": np.array([1.0 if t.done else 0.0 for t in ts]),
                "actor_state_next": np.stack([t.actor_state_next for t in ts])
                if ts[0].actor_state_next is not None
                else None,
                "critic_state_next": np.stack([t.critic_state_next for t in ts])
                if ts[0].critic_state_next is not None
                else None,
            }
            self._arrays = cached
        return cached


def _check_state_chain(
    episode: Episode, current_field: str, next_field: str, expected: bool, label: str
) -> None:
    for t, tr in enumerate(episode.transitions):
        cur = getattr(tr, current_field)
        nxt = getattr(tr, next_field)
        if not expected:
            if cur is not None or nxt is not None:
                raise ReplayError(f"{label} states present but variant does not use them")
            continue
        if cur is None or nxt is None:
            raise ReplayError(f"{label} states missing at step {t}")
        if t == 0 and np.any(cur != 0.0):
            raise ReplayError(f"first transition's {label} state must be zero")
        if t > 0:
            prev_next = getattr(episode.transitions[t - 1], next_field)
            if cur.shape != prev_next.shape or np.any(cur != prev_next):
                raise ReplayError(
                    f"{label} state chaining broken between steps {t - 1} and {t}"
                )


def validate_episode(episode: Episode, variant: VariantSpec) -> None:
    """Reject episodes whose stored tuples do not match the variant."""
    if len(episode) == 0:
        raise ReplayError("empty episode")
    _check_state_chain(episode, "actor_state", "actor_state_next", variant.actor_recurrent, "actor")
    _check_state_chain(
        episode, "critic_state", "critic_state_next", variant.critic_recurrent, "critic"
    )


class ReplayBuffer:
    """Ring of whole episodes with a transition-count capacity."""

    def __init__(self, capacity_transitions: int, variant: VariantSpec):
        if capacity_transitions < 1:
            raise ReplayError("capacity must be positive")
        self.capacity = int(capacity_transitions)
        self.variant = variant
        self.episodes: Deque[Episode] = deque()
        self.stored_transitions = 0
        self.pushed_episodes = 0

    def __len__(self) -> int:
        return len(self.episodes)

    def push_episode(self, episode: Episode) -> None:
        validate_episode(episode, self.variant)
        if len(episode) > self.capacity:
            raise ReplayError(
                f"episode of {len(episode)} transitions exceeds capacity {self.capacity}"
            )
        self.episodes.append(episode)
        self.stored_transitions += len(episode)
        self.pushed_episodes += 1
        while self.stored_transitions > self.capacity:
            evicted = self.episodes.popleft()
            self.stored_transitions -= len(evicted)

    def sample_batch(self, batch_episodes: int, rng: np.random.Generator) -> List[Episode]:
        """Uniform with-replacement draw of complete episodes."""
        if batch_episodes < 1:
            raise ReplayError("batch_episodes must be positive")
        if not self.episodes:
            raise ReplayError("cannot sample from an empty buffer")
        indices = rng.integers(0, len(self.episodes), size=batch_episodes)
        return [self.episodes[int(i)] for i in indices]


_STATE_FIELDS = ("actor_state", "actor_state_next", "critic_state", "critic_state_next")


def save_buffer(path, buf: ReplayBuffer) -> None:
    """Snapshot the buffer in the checkpoint container format."""
    arrays: Dict[str, np.ndarray] = {}
    metas = []
    for k, ep in enumerate(buf.episodes):
        prefix = f"ep{k:06d}"
        arrays[f"{prefix}.obs"] = np.stack([t.obs for t in ep.transitions])
        arrays[f"{prefix}.actions"] = np.stack([t.actions for t in ep.transitions])
        arrays[f"{prefix}.next_obs"] = np.stack([t.next_obs for t in ep.transitions])
        arrays[f"{prefix}.reward"] = np.array([t.reward for t in ep.transitions])
        arrays[f"{prefix}.done"] = np.array([float(t.done) for t in ep.transitions])
        for name in _STATE_FIELDS:
            values = [getattr(t, name) for t in ep.transitions]
            if values[0] is not None:
                arrays[f"{prefix}.{name}"] = np.stack(values)
        metas.append(ep.meta)
    metadata = {
        "kind": "replay-snapshot",
        "variant": buf.variant.name,
        "capacity": buf.capacity,
        "pushed_episodes": buf.pushed_episodes,
        "episode_meta": metas,
    }
    save_arrays(path, arrays, metadata)


def load_buffer(path) -> ReplayBuffer:
    arrays, metadata = load_arrays(path)
    if metadata.get("kind") != "replay-snapshot":
        raise ReplayError(f"{path} is not a replay snapshot")
    buf = ReplayBuffer(metadata["capacity"], VariantSpec.from_name(metadata["variant"]))
    metas = metadata.get("episode_meta", [])
    k = 0
    while f"ep{k:06d}.obs" in arrays:
        prefix = f"ep{k:06d}"
        length = arrays[f"{prefix}.obs"].shape[0]
        transitions = []
        for t in range(length):
            kwargs = {
                name: arrays[f"{prefix}.{name}"][t]
                for name in _STATE_FIELDS
                if f"{prefix}.{name}" in arrays
            }
            transitions.append(
                Transition(
                    obs=arrays[f"{prefix}.obs"][t],
                    actions=arrays[f"{prefix}.actions"][t],
                    next_obs=arrays[f"{prefix}.next_obs"][t],
                    reward=float(arrays[f"{prefix}.reward"][t]),
                    done=bool(arrays[f"{prefix}.done"][t]),
                    **kwargs,
                )
            )
        buf.push_episode(Episode(transitions, meta=metas[k] if k < len(metas) else {}))
        k += 1
    buf.pushed_episodes = metadata.get("pushed_episodes", buf.pushed_episodes)
    return buf
