"""Episode replay: invariants, eviction, sampling, snapshots."""

import numpy as np
import pytest

from rmaddpg.agents import ACTION_DIM, VARIANTS
from rmaddpg.env import OBS_DIM
from rmaddpg.replay import (
    Episode,
    ReplayBuffer,
    ReplayError,
    Transition,
    load_buffer,
    save_buffer,
    validate_episode,
)

HIDDEN = 4


def make_episode(variant, length, rng, n_agents=2):
    """Synthetic episode with correctly chained recurrent states."""
    transitions = []
    actor_state = np.zeros((n_agents, 2, HIDDEN))
    critic_state = np.zeros((n_agents, 2, HIDDEN))
    for t in range(length):
        actor_next = rng.normal(size=(n_agents, 2, HIDDEN))
        critic_next = rng.normal(size=(n_agents, 2, HIDDEN))
        actions = np.zeros((n_agents, ACTION_DIM))
        actions[:, rng.integers(0, 5)] = 1.0
        actions[:, 5 + rng.integers(0, 2)] = 1.0
        transitions.append(
            Transition(
                obs=rng.normal(size=(n_agents, OBS_DIM)),
                actions=actions,
                next_obs=rng.normal(size=(n_agents, OBS_DIM)),
                reward=float(rng.normal()),
                done=t == length - 1,
                actor_state=actor_state.copy() if variant.actor_recurrent else None,
                actor_state_next=actor_next.copy() if variant.actor_recurrent else None,
                critic_state=critic_state.copy() if variant.critic_recurrent else None,
                critic_state_next=critic_next.copy() if variant.critic_recurrent else None,
            )
        )
        actor_state = actor_next
        critic_state = critic_next
    return Episode(transitions, meta={"length": length})


@pytest.mark.parametrize("variant", sorted(VARIANTS))
def test_validate_accepts_well_formed(variant):
    rng = np.random.default_rng(0)
    validate_episode(make_episode(VARIANTS[variant], 5, rng), VARIANTS[variant])


def test_push_evicts_whole_episodes_fifo():
    rng = np.random.default_rng(1)
    buf = ReplayBuffer(200, VARIANTS["maddpg"])
    episodes = [make_episode(VARIANTS["maddpg"], 100, rng) for _ in range(3)]
    for ep in episodes:
        buf.push_episode(ep)
    assert len(buf) == 2
    assert buf.stored_transitions == 200
    assert buf.episodes[0] is episodes[1]  # first pushed was evicted
    assert buf.episodes[1] is episodes[2]


def test_push_rejects_broken_chaining():
    rng = np.random.default_rng(2)
    buf = ReplayBuffer(1000, VARIANTS["rmaddpg"])
    ep = make_episode(VARIANTS["rmaddpg"], 4, rng)
    ep.transitions[2].actor_state[0, 0, 0] += 1.0
    with pytest.raises(ReplayError, match="chaining"):
        buf.push_episode(ep)


def test_push_rejects_nonzero_initial_state():
    rng = np.random.default_rng(3)
    ep = make_episode(VARIANTS["rc"], 4, rng)
    ep.transitions[0].critic_state[0, 1, 1] = 0.25
    with pytest.raises(ReplayError, match="zero"):
        ReplayBuffer(1000, VARIANTS["rc"]).push_episode(ep)


def test_push_rejects_empty_episode():
    with pytest.raises(ReplayError, match="empty"):
        ReplayBuffer(10, VARIANTS["maddpg"]).push_episode(Episode([]))


def test_push_rejects_state_fields_for_wrong_variant():
    rng = np.random.default_rng(4)
    ep = make_episode(VARIANTS["rmaddpg"], 3, rng)
    with pytest.raises(ReplayError):
        ReplayBuffer(100, VARIANTS["maddpg"]).push_episode(ep)
    missing = make_episode(VARIANTS["maddpg"], 3, rng)
    with pytest.raises(ReplayError):
        ReplayBuffer(100, VARIANTS["rmaddpg"]).push_episode(missing)


def test_push_rejects_episode_larger_than_capacity():
    rng = np.random.default_rng(5)
    with pytest.raises(ReplayError, match="capacity"):
        ReplayBuffer(5, VARIANTS["maddpg"]).push_episode(
            make_episode(VARIANTS["maddpg"], 6, rng)
        )


def test_sample_single_episode_repeats():
    rng = np.random.default_rng(6)
    buf = ReplayBuffer(100, VARIANTS["maddpg"])
    ep = make_episode(VARIANTS["maddpg"], 3, rng)
    buf.push_episode(ep)
    batch = buf.sample_batch(4, np.random.default_rng(0))
    assert len(batch) == 4
    assert all(sampled is ep for sampled in batch)


def test_sample_empty_buffer_errors():
    with pytest.raises(ReplayError, match="empty"):
        ReplayBuffer(10, VARIANTS["maddpg"]).sample_batch(1, np.random.default_rng(0))


def test_sample_uniformity():
    rng = np.random.default_rng(7)
    buf = ReplayBuffer(10_000, VARIANTS["maddpg"])
    episodes = [make_episode(VARIANTS["maddpg"], 2, rng) for _ in range(10)]
    for ep in episodes:
        buf.push_episode(ep)
    ids = {id(ep): k for k, ep in enumerate(episodes)}
    counts = np.zeros(10)
    draw_rng = np.random.default_rng(8)
    for _ in range(10_000):
        (sampled,) = buf.sample_batch(1, draw_rng)
        counts[ids[id(sampled)]] += 1
    frequencies = counts / 10_000
    assert np.all(frequencies >= 0.08) and np.all(frequencies <= 0.12)


def test_capacity_never_exceeded_over_random_sequence():
    rng = np.random.default_rng(9)
    buf = ReplayBuffer(37, VARIANTS["ra"])
    for _ in range(60):
        buf.push_episode(make_episode(VARIANTS["ra"], int(rng.integers(1, 12)), rng))
        assert buf.stored_transitions <= 37
        assert buf.stored_transitions == sum(len(ep) for ep in buf.episodes)


def test_sampled_episodes_returned_intact():
    rng = np.random.default_rng(10)
    buf = ReplayBuffer(100, VARIANTS["rmaddpg"])
    ep = make_episode(VARIANTS["rmaddpg"], 5, rng)
    snapshot = [t.obs.copy() for t in ep.transitions]
    buf.push_episode(ep)
    batch = buf.sample_batch(3, np.random.default_rng(1))
    for sampled in batch:
        for t, obs in zip(sampled.transitions, snapshot):
            assert np.array_equal(t.obs, obs)


@pytest.mark.parametrize("variant", sorted(VARIANTS))
def test_snapshot_round_trip(tmp_path, variant):
    rng = np.random.default_rng(11)
    buf = ReplayBuffer(500, VARIANTS[variant])
    for _ in range(4):
        buf.push_episode(make_episode(VARIANTS[variant], int(rng.integers(2, 7)), rng))
    path = tmp_path / "buffer.ckpt"
    save_buffer(path, buf)
    restored = load_buffer(path)
    assert restored.capacity == buf.capacity
    assert restored.variant == buf.variant
    assert len(restored) == len(buf)
    assert restored.stored_transitions == buf.stored_transitions
    assert restored.pushed_episodes == buf.pushed_episodes
    for orig, back in zip(buf.episodes, restored.episodes):
        assert back.meta == orig.meta
        for a, b in zip(orig.transitions, back.transitions):
            assert np.array_equal(a.obs, b.obs)
            assert np.array_equal(a.actions, b.actions)
            assert a.reward == b.reward and a.done == b.done
            if a.actor_state is not None:
                assert np.array_equal(a.actor_state, b.actor_state)
            if a.critic_state_next is not None:
                assert np.array_equal(a.critic_state_next, b.critic_state_next)
