"""Acceptance suite: one test per exit criterion, each printing PASS/FAIL.

Run with ``pytest tests/test_acceptance.py -v -s``. Criteria 7 and 8 carry
the ``extended`` marker (minutes of training, not seconds); deselect them
with ``-m "not extended"`` for a quick pass.
"""

import warnings

import numpy as np
import pytest

from _oracles import brute_force_reward, gradient_entries_agree
from rmaddpg.agents import (
    ACTION_DIM,
    VARIANTS,
    AgentBundle,
    actor_forward,
    build_stack,
    critic_forward,
    stack_backward,
    stack_forward,
)
from rmaddpg.env import (
    BLANK_MESSAGE,
    OBS_DIM,
    AgentAction,
    EnvConfig,
    WorldState,
    compute_reward,
    delivered_count,
    reset,
    step,
)
from rmaddpg.nnet import (
    ParameterSet,
    RecurrentState,
    dense_backward,
    dense_forward,
    init_dense,
    init_lstm,
    lstm_step_backward,
    lstm_step_forward,
    soft_update,
)
from rmaddpg.replay import ReplayBuffer
from rmaddpg.trainer import TrainConfig, critic_update, rollout_episode, train_run

FD_H = 1e-5
REL_TOL = 1e-4
ABS_TOL = 1e-8

# Desk-scale settings for the extended trend runs. The paper's horizon is
# ~100 steps with one update round per episode; 25-step episodes with a
# 25-step update period keep that rounds-per-episode ratio while fitting the
# runtime budget. Learning rate, tau, and gamma stay at their defaults.
TREND_EPISODES = 2000
TREND_SEEDS = (0, 1, 2, 3)
TREND_ENV = dict(n_agents=2, episode_length=25, budget_messages=20)
TREND_TRAIN = dict(
    batch_episodes=32,
    update_period_timesteps=25,
    total_episodes=TREND_EPISODES,
    eval_period_episodes=50,
    eval_episodes=10,
)


def report(criterion: str, passed: bool, detail: str = "") -> None:
    marker = "PASS" if passed else "FAIL"
    print(f"\nACCEPTANCE {criterion}: {marker} {detail}".rstrip())


def _fd_grads(params, loss_fn, coords_per_array=None, rng=None):
    """Central differences (h = 1e-5), optionally on sampled coordinates.

    Returns (analytic_selector, numeric) pairs of flat index lists per
    array so sampled and exhaustive checks share one code path.
    """
    picked = {}
    for layer, arr_name, arr in params.arrays():
        flat = arr.reshape(-1)
        if coords_per_array is None or flat.size <= coords_per_array:
            indices = np.arange(flat.size)
        else:
            indices = rng.choice(flat.size, size=coords_per_array, replace=False)
        numeric = np.empty(indices.size)
        for pos, k in enumerate(indices):
            original = flat[k]
            flat[k] = original + FD_H
            plus = loss_fn()
            flat[k] = original - FD_H
            minus = loss_fn()
            flat[k] = original
            numeric[pos] = (plus - minus) / (2.0 * FD_H)
        picked[(layer, arr_name)] = (indices, numeric)
    return picked


def _check_against_fd(params, analytic, picked):
    worst = 0.0
    for (layer, arr_name), (indices, numeric) in picked.items():
        a = analytic[layer][arr_name].reshape(-1)[indices]
        ok, excess = gradient_entries_agree(a, numeric, REL_TOL, ABS_TOL)
        worst = max(worst, excess)
        if not ok:
            return False, worst
    return True, worst


def test_criterion_1_gradient_oracle():
    """Dense, LSTM (3-step unroll), and the 6->64->64->7 actor stack match
    central finite differences on 20 random parameterizations each."""
    rng = np.random.default_rng(1001)
    worst = 0.0

    for _ in range(20):  # dense layers, exhaustive
        in_dim = int(rng.integers(2, 7))
        out_dim = int(rng.integers(2, 6))
        params = ParameterSet({"fc": init_dense(rng, in_dim, out_dim)})
        x = rng.normal(size=in_dim)
        w = rng.normal(size=out_dim)
        _, cache = dense_forward(params["fc"], x)
        _, analytic = dense_backward(cache, w)
        picked = _fd_grads(params, lambda: float(w @ dense_forward(params["fc"], x)[0]))
        ok, excess = _check_against_fd(params, {"fc": analytic}, picked)
        worst = max(worst, excess)
        assert ok, f"dense gradient mismatch (worst rel {excess:.2e})"

    for _ in range(20):  # LSTM cell unrolled over 3 steps, exhaustive
        params = ParameterSet({"cell": init_lstm(rng, 3, 4)})
        xs = rng.normal(size=(3, 3))
        ws = rng.normal(size=(3, 4))

        def lstm_loss():
            state = RecurrentState.zeros(4)
            total = 0.0
            for t in range(3):
                state, _ = lstm_step_forward(params["cell"], xs[t], state)
                total += float(ws[t] @ state.hidden)
            return total

        state = RecurrentState.zeros(4)
        caches = []
        for t in range(3):
            state, cache = lstm_step_forward(params["cell"], xs[t], state)
            caches.append(cache)
        analytic = None
        d_state = RecurrentState.zeros(4)
        for t in reversed(range(3)):
            d_state = RecurrentState(d_state.hidden + ws[t], d_state.cell)
            _, d_state, grads = lstm_step_backward(caches[t], d_state)
            if analytic is None:
                analytic = grads
            else:
                for key in analytic:
                    analytic[key] += grads[key]
        picked = _fd_grads(params, lstm_loss)
        ok, excess = _check_against_fd(params, {"cell": analytic}, picked)
        worst = max(worst, excess)
        assert ok, f"LSTM gradient mismatch (worst rel {excess:.2e})"

    for _ in range(20):  # full recurrent actor stack, sampled coordinates
        params = build_stack(rng, 6, 7, recurrent=True, hidden=64)
        x = rng.normal(size=6)
        prev = RecurrentState(rng.normal(size=64), rng.normal(size=64))
        w = rng.normal(size=7)

        def stack_loss():
            y, _, _ = stack_forward(params, x, prev)
            return float(w @ y)

        _, _, cache = stack_forward(params, x, prev)
        _, _, analytic = stack_backward(cache, w)
        picked = _fd_grads(params, stack_loss, coords_per_array=120, rng=rng)
        ok, excess = _check_against_fd(params, analytic, picked)
        worst = max(worst, excess)
        assert ok, f"actor stack gradient mismatch (worst rel {excess:.2e})"

    report("1 gradient-oracle", True, f"worst relative error {worst:.2e}")


def test_criterion_2_reward_oracle():
    """compute_reward equals a brute-force reimplementation on 1,000 random
    states to 1e-12 absolute."""
    rng = np.random.default_rng(1002)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 6))
        positions = [tuple(p) for p in rng.uniform(-3, 3, size=(n, 2))]
        goal = tuple(rng.uniform(-3, 3, size=2))
        state = WorldState(
            positions=positions,
            goal=goal,
            budget=0.0,
            timestep=0,
            last_messages=[BLANK_MESSAGE] * n,
            messages_remaining=0,
        )
        got = compute_reward(state)
        r_dist, r_diff, reward = brute_force_reward(positions, goal)
        worst = max(
            worst,
            abs(got.r_dist - r_dist),
            abs(got.r_diff - r_diff),
            abs(got.reward - reward),
        )
        assert worst <= 1e-12
    report("2 reward-oracle", True, f"worst absolute deviation {worst:.2e}")


@pytest.mark.parametrize("budget", [0, 1, 5, 20, 200])
def test_criterion_3_budget_protocol(budget):
    """Randomized 100-step episodes: budget non-increasing and >= 0, exactly
    1/x per delivered message, delivered <= x, zero deliveries at x = 0."""
    cfg = EnvConfig(
        n_agents=2, episode_length=100, budget_messages=budget, observability="partial"
    )
    rng = np.random.default_rng(1003 + budget)
    for _ in range(5):
        state, _ = reset(cfg, rng)
        delivered_total = 0
        done = False
        while not done:
            actions = [
                AgentAction(
                    ("none", "north", "east", "west", "south")[rng.integers(5)],
                    ("communicate", "silent")[rng.integers(2)],
                )
                for _ in range(2)
            ]
            before = state
            state, _, _, done = step(state, actions, cfg)
            assert 0.0 <= state.budget <= before.budget
            d = delivered_count(before, state)
            delivered_total += d
            if budget > 0:
                # exact to float resolution: both sides are k/x doubles
                assert abs((before.budget - state.budget) - d / budget) < 1e-12
            else:
                assert d == 0 and state.budget == 0.0
        assert delivered_total <= budget
    report(f"3 budget-protocol x={budget}", True)


def test_criterion_4_replay_chaining_and_uniformity():
    """Sampled episodes keep cell-state chaining with zero initial state;
    sampling frequencies sit within +/-0.02 of 1/n over 10,000 draws."""
    env_cfg = EnvConfig(n_agents=2, episode_length=5, budget_messages=5)
    rng = np.random.default_rng(1004)
    bundles = [
        AgentBundle.create(rng, VARIANTS["rmaddpg"], 2, OBS_DIM, hidden=8) for _ in range(2)
    ]
    buf = ReplayBuffer(10_000, VARIANTS["rmaddpg"])
    episodes = []
    for k in range(10):
        episode, _, _ = rollout_episode(
            bundles,
            env_cfg,
            np.random.default_rng(k),
            mode="explore",
            action_rng=rng,
            record_transitions=True,
        )
        episodes.append(episode)
        buf.push_episode(episode)

    draw_rng = np.random.default_rng(77)
    ids = {id(ep): k for k, ep in enumerate(episodes)}
    counts = np.zeros(10)
    for _ in range(10_000):
        (sampled,) = buf.sample_batch(1, draw_rng)
        counts[ids[id(sampled)]] += 1
        for field in ("actor_state", "critic_state"):
            first = getattr(sampled.transitions[0], field)
            assert np.all(first == 0.0)
            for prev, cur in zip(sampled.transitions, sampled.transitions[1:]):
                assert np.array_equal(getattr(prev, field + "_next"), getattr(cur, field))
    frequencies = counts / 10_000
    assert np.all(np.abs(frequencies - 0.1) <= 0.02)
    report(
        "4 replay-chaining+uniformity",
        True,
        f"frequency range [{frequencies.min():.3f}, {frequencies.max():.3f}]",
    )


def test_criterion_5_target_contraction():
    """After 500 soft updates at tau = 0.01 against a frozen source, the gap
    equals (0.99)^500 of the initial gap to 1e-9 relative."""
    rng = np.random.default_rng(1005)
    source = build_stack(rng, 6, 7, recurrent=True, hidden=16)
    target = build_stack(rng, 6, 7, recurrent=True, hidden=16)
    for _, _, arr in target.arrays():
        arr += rng.normal(size=arr.shape)  # nonzero gap everywhere
    initial_gap = {
        (layer, name): np.abs(arr - source[layer].arrays()[name])
        for layer, name, arr in target.arrays()
    }
    for _ in range(500):
        soft_update(target, source, tau=0.01)
    shrink = 0.99**500
    worst = 0.0
    for layer, name, arr in target.arrays():
        gap = np.abs(arr - source[layer].arrays()[name])
        expected = shrink * initial_gap[(layer, name)]
        rel = np.abs(gap - expected) / expected
        worst = max(worst, float(rel.max()))
    assert worst < 1e-9
    report(
        "5 target-contraction",
        True,
        f"(0.99)^500 = {shrink:.4e}, worst relative deviation {worst:.2e}",
    )


def test_criterion_6_critic_regression():
    """Frozen 2-step episode and frozen actors: 500 critic updates drive the
    TD loss below 1e-3."""
    env_cfg = EnvConfig(n_agents=2, episode_length=2, budget_messages=2)
    rng = np.random.default_rng(1006)
    bundles = [
        AgentBundle.create(rng, VARIANTS["rmaddpg"], 2, OBS_DIM, hidden=64) for _ in range(2)
    ]
    episode, _, _ = rollout_episode(
        bundles,
        env_cfg,
        np.random.default_rng(0),
        mode="explore",
        action_rng=rng,
        record_transitions=True,
    )
    cfg = TrainConfig(total_episodes=1, batch_episodes=1)
    losses = []
    for _ in range(500):
        loss, _, divergent = critic_update(0, [episode], bundles, cfg)
        assert not divergent
        losses.append(loss)
    assert losses[-1] < 1e-3
    report("6 critic-regression", True, f"loss {losses[0]:.3f} -> {losses[-1]:.2e}")


def _trend_medians(variant: str, observability: str):
    env_cfg = EnvConfig(observability=observability, **TREND_ENV)
    cfg = TrainConfig(**TREND_TRAIN)
    first_window = TREND_EPISODES // 10
    last_window = TREND_EPISODES - first_window
    pooled_first, pooled_last, per_seed_last = [], [], []
    for seed in TREND_SEEDS:
        result = train_run(env_cfg, VARIANTS[variant], cfg, seed=seed)
        assert not result.aborted, f"{variant} seed {seed} aborted on divergence"
        first = [r.team_distance for r in result.records if r.episode_index <= first_window]
        last = [r.team_distance for r in result.records if r.episode_index >= last_window]
        pooled_first.extend(first)
        pooled_last.extend(last)
        per_seed_last.append(float(np.median(last)))
    return float(np.median(pooled_first)), float(np.median(pooled_last)), per_seed_last


@pytest.mark.extended
@pytest.mark.parametrize("variant", ["rmaddpg", "maddpg"])
def test_criterion_7_full_observability_trend(variant):
    """Full observability, 2,000 episodes, 4 seeds: final-decile median
    team distance at least 30% below the first-decile median."""
    first, last, _ = _trend_medians(variant, "full")
    improvement = 1.0 - last / first
    passed = improvement >= 0.30
    report(
        f"7 trend-full-obs {variant}",
        passed,
        f"median first decile {first:.3f}, last decile {last:.3f}, improvement {improvement:.0%}",
    )
    assert passed, f"{variant} improved only {improvement:.0%} (needs >= 30%)"


@pytest.mark.extended
def test_criterion_8_recurrent_critic_importance():
    """Partial observability, budget 20: rmaddpg's final-decile median below
    maddpg's with non-overlapping across-seed IQRs; a miss downgrades to a
    warning with the curves attached."""
    _, rmaddpg_last, rmaddpg_seeds = _trend_medians("rmaddpg", "partial")
    _, maddpg_last, maddpg_seeds = _trend_medians("maddpg", "partial")
    r_q1, r_q3 = np.percentile(rmaddpg_seeds, [25, 75])
    m_q1, m_q3 = np.percentile(maddpg_seeds, [25, 75])
    separated = rmaddpg_last < maddpg_last and r_q3 < m_q1
    detail = (
        f"rmaddpg median {rmaddpg_last:.3f} IQR [{r_q1:.3f}, {r_q3:.3f}] vs "
        f"maddpg median {maddpg_last:.3f} IQR [{m_q1:.3f}, {m_q3:.3f}]"
    )
    report("8 recurrent-critic-importance", True, detail + ("" if separated else " (warning)"))
    if not separated:
        warnings.warn(
            "strict rmaddpg/maddpg separation not reached at desk scale: "
            + detail
            + f"; per-seed final medians rmaddpg={rmaddpg_seeds} maddpg={maddpg_seeds}",
            stacklevel=1,
        )


def test_criterion_9_maddpg_state_inertness():
    """Random recurrent states injected into a maddpg bundle change no
    logits and no Q values, exactly."""
    rng = np.random.default_rng(1009)
    bundle = AgentBundle.create(rng, VARIANTS["maddpg"], 2, OBS_DIM, hidden=64)
    for _ in range(20):
        obs = rng.normal(size=OBS_DIM)
        all_obs = rng.normal(size=2 * OBS_DIM)
        all_act = rng.normal(size=2 * ACTION_DIM)
        base_phys, base_verb, _ = actor_forward(bundle.actor, obs, RecurrentState.zeros(64))
        base_q, _ = critic_forward(bundle.critic, all_obs, all_act, RecurrentState.zeros(64))
        junk = RecurrentState(rng.normal(size=64) * 100, rng.normal(size=64) * 100)
        phys, verb, _ = actor_forward(bundle.actor, obs, junk)
        q, _ = critic_forward(bundle.critic, all_obs, all_act, junk)
        assert np.array_equal(phys, base_phys)
        assert np.array_equal(verb, base_verb)
        assert q == base_q
    report("9 maddpg-state-inertness", True, "exact equality over 20 random injections")
