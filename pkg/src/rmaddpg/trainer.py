"""The four actor-critic update rules and the training loop.

Critic updates regress each agent's centralized critic onto one-step TD
targets built from target networks; actor updates ascend the critic's value
with the agent's own action replaced by its differentiable (softmax-relaxed)
policy output. Recurrent variants re-unroll sampled episodes from zero
state, so gradients flow through time in whichever half of the pair carries
an LSTM. Target actors evaluate next observations at the recurrent states
stored in the replay tuples; target critics default to re-unrolling the
next-step sequence instead (see TrainConfig.critic_target_states).

All gradients are assembled from the analytic layer backwards in
``rmaddpg.nnet``; there is no autodiff anywhere.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import env as arrival
from .agents import (
    ACTION_DIM,
    AgentBundle,
    VariantSpec,
    action_to_onehot,
    actor_forward,
    critic_forward,
    relaxed_action,
    relaxed_action_backward,
    select_action,
    stack_forward,
    stack_backward,
)
from .env import EnvConfig
from .metrics import MetricsRecord
from .nnet import (
    RecurrentState,
    accumulate_grads,
    adam_update,
    grad_norm,
    grads_finite,
    soft_update,
    zero_grads,
)
from .replay import Episode, ReplayBuffer, Transition, stack_states


@dataclass
class TrainConfig:
    lr: float = 0.01
    tau: float = 0.01
    gamma: float = 0.95
    buffer_capacity: int = 1_000_000
    batch_episodes: int = 256  # clamped to the number of stored episodes
    update_period_timesteps: int = 100
    total_episodes: int = 1000
    seeds: int = 4
    temperature: float = 1.0
    temperature_final: Optional[float] = None  # None = constant schedule
    eval_period_episodes: int = 50
    eval_episodes: int = 10
    hidden_units: int = 64
    divergence_abort_after: int = 10
    # Where the target critic's recurrent state comes from when forming TD
    # targets: "reunrolled" runs the target critic over the next-step
    # sequence from zero state (self-consistent); "stored" reuses the
    # behavior-time cell states kept in the replay tuples. Stored states go
    # stale as the critic moves and demonstrably stall learning, so
    # reunrolled is the default; target ACTIONS always use the stored actor
    # states either way.
    critic_target_states: str = "reunrolled"

    def __post_init__(self) -> None:
        if not (0.0 <= self.gamma < 1.0):
            raise ValueError("gamma must lie in [0, 1)")
        if not (0.0 < self.tau <= 1.0):
            raise ValueError("tau must lie in (0, 1]")
        if self.critic_target_states not in ("reunrolled", "stored"):
            raise ValueError("critic_target_states must be 'reunrolled' or 'stored'")
        for name in (
            "lr",
            "buffer_capacity",
            "batch_episodes",
            "update_period_timesteps",
            "temperature",
            "eval_period_episodes",
            "eval_episodes",
            "hidden_units",
            "divergence_abort_after",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.total_episodes < 0 or self.seeds <= 0:
            raise ValueError("total_episodes must be >= 0 and seeds positive")

    def episode_temperature(self, episode: int) -> float:
        if self.temperature_final is None or self.total_episodes <= 1:
            return self.temperature
        frac = min(episode / (self.total_episodes - 1), 1.0)
        return self.temperature + frac * (self.temperature_final - self.temperature)


@dataclass
class LossReport:
    """Per-update-round diagnostics, one entry per agent."""

    update_index: int
    critic_loss: List[float]
    actor_objective: List[float]
    critic_grad_norm: List[float]
    actor_grad_norm: List[float]
    divergent: List[bool]

    @property
    def any_divergent(self) -> bool:
        return any(self.divergent)


@dataclass
class _Group:
    """One same-length slice of a sampled batch, stacked into arrays."""

    obs: np.ndarray  # (B, T, N, D)
    actions: np.ndarray  # (B, T, N, A)
    next_obs: np.ndarray  # (B, T, N, D)
    reward: np.ndarray  # (B, T)
    done: np.ndarray  # (B, T)
    actor_state_next: Optional[np.ndarray]  # (B, T, N, 2, H)
    critic_state_next: Optional[np.ndarray]
    # Target-policy actions are identical across every agent's critic update
    # within one round; cached here since groups live for one round only.
    target_actions: Optional[np.ndarray] = None

    @property
    def steps(self) -> int:
        return self.obs.shape[0] * self.obs.shape[1]


def _stack_group(episodes: Sequence[Episode]) -> _Group:
    arrays = [ep.arrays() for ep in episodes]

    def gather(key):
        if arrays[0][key] is None:
            return None
        return np.stack([a[key] for a in arrays])

    return _Group(
        obs=gather("obs"),
        actions=gather("actions"),
        next_obs=gather("next_obs"),
        reward=gather("reward"),
        done=gather("done"),
        actor_state_next=gather("actor_state_next"),
        critic_state_next=gather("critic_state_next"),
    )


def _group_batch(batch: Sequence) -> List[_Group]:
    """Stack episodes into same-length groups; pass prepared groups through."""
    if batch and isinstance(batch[0], _Group):
        return list(batch)
    by_length: Dict[int, List[Episode]] = {}
    for ep in batch:
        by_length.setdefault(len(ep), []).append(ep)
    return [_stack_group(eps) for _, eps in sorted(by_length.items())]


def _joint_input(obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
    """Critic input: all observations then all actions, agent order."""
    b, t, n, d = obs.shape
    a = actions.shape[-1]
    return np.concatenate([obs.reshape(b, t, n * d), actions.reshape(b, t, n * a)], axis=-1)


def _flat_state(states: np.ndarray, agent: int) -> RecurrentState:
    """Stored (B, T, N, 2, H) states for one agent, flattened to (B*T, H)."""
    b, t = states.shape[:2]
    hidden = states[:, :, agent, 0, :].reshape(b * t, -1)
    cell = states[:, :, agent, 1, :].reshape(b * t, -1)
    return RecurrentState(hidden, cell)


def _unroll_stack(
    params, inputs: np.ndarray, hidden: int, recurrent: bool
) -> Tuple[np.ndarray, List[tuple]]:
    """Forward over a (B, T, D) sequence from zero state, keeping caches.

    Non-recurrent stacks collapse to one flat (B*T) application.
    """
    b, t, d = inputs.shape
    if not recurrent:
        out, _, cache = stack_forward(
            params, inputs.reshape(b * t, d), RecurrentState.zeros(hidden, b * t)
        )
        return out.reshape(b, t, -1), [cache]
    state = RecurrentState.zeros(hidden, b)
    outputs = []
    caches = []
    for step in range(t):
        out, state, cache = stack_forward(params, inputs[:, step], state)
        outputs.append(out)
        caches.append(cache)
    return np.stack(outputs, axis=1), caches


def _unroll_backward(
    caches: List[tuple],
    d_out: np.ndarray,
    recurrent: bool,
    need_param_grads: bool = True,
) -> Tuple[np.ndarray, dict]:
    """Backward matching :func:`_unroll_stack`; returns (d_inputs, grads)."""
    b, t, _ = d_out.shape
    if not recurrent:
        d_flat = d_out.reshape(b * t, -1)
        dx, _, grads = stack_backward(caches[0], d_flat, need_param_grads=need_param_grads)
        return dx.reshape(b, t, -1), grads
    grads = None
    d_state: Optional[RecurrentState] = None
    d_inputs = [None] * t
    for step in reversed(range(t)):
        dx, d_state, step_grads = stack_backward(
            caches[step], d_out[:, step], d_state, need_param_grads=need_param_grads
        )
        d_inputs[step] = dx
        if step_grads is not None:
            if grads is None:
                grads = step_grads
            else:
                accumulate_grads(grads, step_grads)
    return np.stack(d_inputs, axis=1), grads


def _target_actions(group: _Group, bundles: Sequence[AgentBundle], cfg: TrainConfig) -> np.ndarray:
    """Relaxed target-policy actions at next observations, all agents.

    Recurrent actors are evaluated at the stored behavior-time states rather
    than re-unrolled, so the target conditions on the recurrence the agent
    actually had when the data was collected. Cached on the group: target
    networks are frozen within an update round.
    """
    if group.target_actions is not None:
        return group.target_actions
    b, t, n, d = group.next_obs.shape
    out = np.empty((b, t, n, ACTION_DIM))
    for j, bundle in enumerate(bundles):
        flat_obs = group.next_obs[:, :, j, :].reshape(b * t, d)
        if bundle.variant.actor_recurrent:
            state = _flat_state(group.actor_state_next, j)
        else:
            state = RecurrentState.zeros(bundle.hidden, b * t)
        logits, _, _ = stack_forward(bundle.target_actor, flat_obs, state)
        relaxed = relaxed_action(logits[:, :5], logits[:, 5:], cfg.temperature)
        out[:, :, j, :] = relaxed.reshape(b, t, ACTION_DIM)
    group.target_actions = out
    return out


def critic_gradients(
    agent: int,
    batch: Sequence[Episode],
    bundles: Sequence[AgentBundle],
    cfg: TrainConfig,
):
    """TD-regression loss and its exact gradient for one agent's critic.

    Per episode, the online critic re-unrolls the sequence from zero state;
    targets y_t = r_t + gamma * Q'(x', a') use target actions at the stored
    actor states and a target critic evaluated per critic_target_states
    (y_t = r_t on terminal steps).
    """
    bundle = bundles[agent]
    groups = _group_batch(batch)
    total_steps = sum(g.steps for g in groups)
    loss = 0.0
    grads = zero_grads(bundle.critic)
    for group in groups:
        b, t = group.reward.shape
        target_acts = _target_actions(group, bundles, cfg)
        next_joint = _joint_input(group.next_obs, target_acts)
        if bundle.variant.critic_recurrent and cfg.critic_target_states == "reunrolled":
            q_next, _ = _unroll_stack(bundle.target_critic, next_joint, bundle.hidden, True)
            q_next = q_next[:, :, 0]
        else:
            if bundle.variant.critic_recurrent:
                tgt_state = _flat_state(group.critic_state_next, agent)
            else:
                tgt_state = RecurrentState.zeros(bundle.hidden, b * t)
            q_next, _, _ = stack_forward(
                bundle.target_critic, next_joint.reshape(b * t, -1), tgt_state
            )
            q_next = q_next.reshape(b, t)
        targets = group.reward + cfg.gamma * (1.0 - group.done) * q_next

        joint = _joint_input(group.obs, group.actions)
        q, caches = _unroll_stack(
            bundle.critic, joint, bundle.hidden, bundle.variant.critic_recurrent
        )
        q = q[:, :, 0]
        err = q - targets
        loss += float(np.sum(err * err)) / total_steps
        d_q = (2.0 * err / total_steps)[:, :, None]
        _, group_grads = _unroll_backward(caches, d_q, bundle.variant.critic_recurrent)
        accumulate_grads(grads, group_grads)
    return loss, grads


def critic_update(
    agent: int,
    batch: Sequence[Episode],
    bundles: Sequence[AgentBundle],
    cfg: TrainConfig,
) -> Tuple[float, float, bool]:
    """One TD-regression Adam step on agent's centralized critic.

    Returns (mse loss, gradient norm, divergent flag). A non-finite loss or
    gradient leaves the parameters untouched and sets the flag.
    """
    bundle = bundles[agent]
    loss, grads = critic_gradients(agent, batch, bundles, cfg)
    if not np.isfinite(loss) or not grads_finite(grads):
        return loss, float("nan"), True
    adam_update(bundle.critic, grads, bundle.critic_adam, cfg.lr)
    return loss, grad_norm(grads), False


def actor_gradients(
    agent: int,
    batch: Sequence[Episode],
    bundles: Sequence[AgentBundle],
    cfg: TrainConfig,
):
    """Mean critic value under the relaxed policy and the ascent gradient.

    The agent's stored actions are replaced in the critic input by the
    relaxed output of its current actor; every learning signal reaches the
    actor through the critic's sensitivity to that action slice (and, for
    recurrent stacks, through time). Other agents' actions stay the batch
    constants. The returned gradient is for the minimized objective, i.e.
    the negated mean value.
    """
    bundle = bundles[agent]
    groups = _group_batch(batch)
    total_steps = sum(g.steps for g in groups)
    objective = 0.0
    grads = zero_grads(bundle.actor)
    for group in groups:
        b, t, n, d = group.obs.shape
        logits, actor_caches = _unroll_stack(
            bundle.actor,
            group.obs[:, :, agent, :],
            bundle.hidden,
            bundle.variant.actor_recurrent,
        )
        relaxed = relaxed_action(logits[..., :5], logits[..., 5:], cfg.temperature)
        actions = group.actions.copy()
        actions[:, :, agent, :] = relaxed

        joint = _joint_input(group.obs, actions)
        q, critic_caches = _unroll_stack(
            bundle.critic, joint, bundle.hidden, bundle.variant.critic_recurrent
        )
        objective += float(np.sum(q[:, :, 0])) / total_steps

        # Ascend mean Q: minimize its negation through the critic, then
        # route the input gradient back through the action relaxation only.
        # The critic's own parameter gradients are not needed here.
        d_q = np.full((b, t, 1), -1.0 / total_steps)
        d_joint, _ = _unroll_backward(
            critic_caches, d_q, bundle.variant.critic_recurrent, need_param_grads=False
        )
        offset = n * d + agent * ACTION_DIM
        d_action = d_joint[:, :, offset : offset + ACTION_DIM]
        d_logits = relaxed_action_backward(relaxed, d_action, cfg.temperature)
        _, group_grads = _unroll_backward(
            actor_caches, d_logits, bundle.variant.actor_recurrent
        )
        accumulate_grads(grads, group_grads)
    return objective, grads


def actor_update(
    agent: int,
    batch: Sequence[Episode],
    bundles: Sequence[AgentBundle],
    cfg: TrainConfig,
) -> Tuple[float, float, bool]:
    """One policy-gradient Adam step on agent's actor.

    Returns (mean critic value, gradient norm, divergent flag); non-finite
    values leave the parameters untouched and set the flag.
    """
    bundle = bundles[agent]
    objective, grads = actor_gradients(agent, batch, bundles, cfg)
    if not np.isfinite(objective) or not grads_finite(grads):
        return objective, float("nan"), True
    adam_update(bundle.actor, grads, bundle.actor_adam, cfg.lr)
    return objective, grad_norm(grads), False


def target_update(bundles: Sequence[AgentBundle], tau: float) -> None:
    for bundle in bundles:
        soft_update(bundle.target_actor, bundle.actor, tau)
        soft_update(bundle.target_critic, bundle.critic, tau)


def update_round(
    bundles: Sequence[AgentBundle],
    buffer: ReplayBuffer,
    cfg: TrainConfig,
    rng: np.random.Generator,
    update_index: int,
) -> LossReport:
    """One critic + actor step per agent on a shared batch, then targets."""
    batch = buffer.sample_batch(min(cfg.batch_episodes, len(buffer)), rng)
    groups = _group_batch(batch)  # stack once; shared by all four updates
    critic_losses, actor_objectives = [], []
    critic_norms, actor_norms, divergent = [], [], []
    for i in range(len(bundles)):
        c_loss, c_norm, c_div = critic_update(i, groups, bundles, cfg)
        a_obj, a_norm, a_div = actor_update(i, groups, bundles, cfg)
        critic_losses.append(c_loss)
        actor_objectives.append(a_obj)
        critic_norms.append(c_norm)
        actor_norms.append(a_norm)
        divergent.append(c_div or a_div)
    target_update(bundles, cfg.tau)
    return LossReport(
        update_index=update_index,
        critic_loss=critic_losses,
        actor_objective=actor_objectives,
        critic_grad_norm=critic_norms,
        actor_grad_norm=actor_norms,
        divergent=divergent,
    )


@dataclass
class RolloutStats:
    mean_r_dist: float
    mean_r_diff: float
    total_reward: float
    attempted: int
    delivered: int


def rollout_episode(
    bundles: Sequence[AgentBundle],
    env_cfg: EnvConfig,
    reset_rng: np.random.Generator | int,
    mode: str = "greedy",
    temperature: float = 1.0,
    action_rng: Optional[np.random.Generator] = None,
    record_transitions: bool = False,
    record_trajectory: bool = False,
    on_step: Optional[Callable[[], None]] = None,
) -> Tuple[Optional[Episode], RolloutStats, Optional[List[dict]]]:
    """Roll one episode, threading recurrent states through the bundles.

    Critic states are threaded on the joint (observations, actions) input
    after every agent has acted, so the stored tuples carry exactly the
    recurrence that produced the behavior.
    """
    variant = bundles[0].variant
    state, observations = arrival.reset(env_cfg, reset_rng)
    for bundle in bundles:
        bundle.reset_episode_state()
    obs_vecs = [o.flatten() for o in observations]

    transitions: List[Transition] = []
    trajectory: List[dict] = []
    dist_sum = diff_sum = reward_sum = 0.0
    attempted = delivered_total = 0

    for _ in range(env_cfg.episode_length):
        actions = []
        onehots = []
        actor_before = [b.actor_state.copy() for b in bundles] if variant.actor_recurrent else None
        for i, bundle in enumerate(bundles):
            phys, verb, next_state = actor_forward(bundle.actor, obs_vecs[i], bundle.actor_state)
            action = select_action(phys, verb, mode=mode, rng=action_rng, temperature=temperature)
            actions.append(action)
            onehots.append(action_to_onehot(action))
            bundle.actor_state = next_state
        attempted += sum(a.wants_to_communicate for a in actions)

        critic_before = None
        if variant.critic_recurrent:
            critic_before = [b.critic_state.copy() for b in bundles]
            all_obs = np.concatenate(obs_vecs)
            all_acts = np.concatenate(onehots)
            for bundle in bundles:
                _, bundle.critic_state = critic_forward(
                    bundle.critic, all_obs, all_acts, bundle.critic_state
                )

        next_state_world, next_observations, breakdown, done = arrival.step(
            state, actions, env_cfg
        )
        step_delivered = arrival.delivered_count(state, next_state_world)
        delivered_total += step_delivered
        dist_sum += breakdown.r_dist
        diff_sum += breakdown.r_diff
        reward_sum += breakdown.reward
        next_obs_vecs = [o.flatten() for o in next_observations]

        if record_transitions:
            transitions.append(
                Transition(
                    obs=np.stack(obs_vecs),
                    actions=np.stack(onehots),
                    next_obs=np.stack(next_obs_vecs),
                    reward=breakdown.reward,
                    done=done,
                    actor_state=stack_states(actor_before) if actor_before else None,
                    actor_state_next=stack_states([b.actor_state for b in bundles])
                    if variant.actor_recurrent
                    else None,
                    critic_state=stack_states(critic_before) if critic_before else None,
                    critic_state_next=stack_states([b.critic_state for b in bundles])
                    if variant.critic_recurrent
                    else None,
                )
            )
        if record_trajectory:
            trajectory.append(
                arrival.trajectory_record(next_state_world, actions, breakdown, step_delivered)
            )

        state = next_state_world
        obs_vecs = next_obs_vecs
        if on_step is not None:
            on_step()
        if done:
            break

    steps = state.timestep
    stats = RolloutStats(
        mean_r_dist=dist_sum / steps,
        mean_r_diff=diff_sum / steps,
        total_reward=reward_sum,
        attempted=attempted,
        delivered=delivered_total,
    )
    episode = Episode(transitions) if record_transitions else None
    return episode, stats, trajectory if record_trajectory else None


def evaluate(
    bundles: Sequence[AgentBundle],
    env_cfg: EnvConfig,
    n_episodes: int,
    eval_rng: np.random.Generator,
) -> Tuple[float, float, float, float]:
    """Greedy-policy evaluation: mean per-step distance and difference,
    mean attempted and delivered messages, over fresh episodes."""
    dists, diffs, attempts, delivers = [], [], [], []
    for _ in range(n_episodes):
        _, stats, _ = rollout_episode(bundles, env_cfg, eval_rng, mode="greedy")
        dists.append(stats.mean_r_dist)
        diffs.append(stats.mean_r_diff)
        attempts.append(stats.attempted)
        delivers.append(stats.delivered)
    return (
        float(np.mean(dists)),
        float(np.mean(diffs)),
        float(np.mean(attempts)),
        float(np.mean(delivers)),
    )


@dataclass
class TrainResult:
    records: List[MetricsRecord]
    bundles: List[AgentBundle]
    reports: List[LossReport]
    meta: dict
    aborted: bool = False


def train_run(
    env_cfg: EnvConfig,
    variant: VariantSpec,
    cfg: TrainConfig,
    seed: int,
    run_id: Optional[str] = None,
    metrics_sink: Optional[Callable[[MetricsRecord], None]] = None,
) -> TrainResult:
    """One full training run for one seed.

    Rollouts record variant-specific tuples into episode replay; one update
    round (critic + actor per agent, then targets) fires per
    ``update_period_timesteps`` of collected experience; greedy evaluation
    episodes run every ``eval_period_episodes`` and stream MetricsRecords to
    the sink. Everything is reproducible from the seed (wall_clock aside).
    """
    run_id = run_id or f"{variant.name}-b{env_cfg.budget_messages}-s{seed}"
    root = np.random.SeedSequence(seed)
    init_ss, env_ss, explore_ss, sample_ss, eval_ss = root.spawn(5)
    init_rng = np.random.default_rng(init_ss)
    env_rng = np.random.default_rng(env_ss)
    explore_rng = np.random.default_rng(explore_ss)
    sample_rng = np.random.default_rng(sample_ss)

    bundles = [
        AgentBundle.create(init_rng, variant, env_cfg.n_agents, arrival.OBS_DIM, cfg.hidden_units)
        for _ in range(env_cfg.n_agents)
    ]
    buffer = ReplayBuffer(cfg.buffer_capacity, variant)
    records: List[MetricsRecord] = []
    reports: List[LossReport] = []
    start = time.monotonic()
    state = {"timesteps": 0, "updates": 0, "consecutive_divergent": 0, "aborted": False}

    def emit(episode_index: int) -> None:
        eval_rng = np.random.default_rng(eval_ss.spawn(1)[0])
        dist, diff, attempted, delivered = evaluate(
            bundles, env_cfg, cfg.eval_episodes, eval_rng
        )
        record = MetricsRecord(
            run_id=run_id,
            variant=variant.name,
            budget=env_cfg.budget_messages,
            seed=seed,
            episode_index=episode_index,
            team_distance=dist,
            difference=diff,
            messages_attempted=attempted,
            messages_delivered=delivered,
            wall_clock=time.monotonic() - start,
        )
        records.append(record)
        if metrics_sink is not None:
            metrics_sink(record)

    def on_step() -> None:
        state["timesteps"] += 1
        if state["timesteps"] % cfg.update_period_timesteps == 0 and len(buffer) > 0:
            report = update_round(bundles, buffer, cfg, sample_rng, state["updates"])
            state["updates"] += 1
            reports.append(report)
            if report.any_divergent:
                state["consecutive_divergent"] += 1
                if state["consecutive_divergent"] >= cfg.divergence_abort_after:
                    state["aborted"] = True
            else:
                state["consecutive_divergent"] = 0

    for episode_index in range(cfg.total_episodes):
        if state["aborted"]:
            break
        if episode_index % cfg.eval_period_episodes == 0:
            emit(episode_index)
        episode, _, _ = rollout_episode(
            bundles,
            env_cfg,
            env_rng,
            mode="explore",
            temperature=cfg.episode_temperature(episode_index),
            action_rng=explore_rng,
            record_transitions=True,
            on_step=on_step,
        )
        episode.meta = {"run_id": run_id, "seed": seed, "episode": episode_index}
        buffer.push_episode(episode)

    if cfg.total_episodes > 0 and not state["aborted"]:
        emit(cfg.total_episodes)

    meta = {
        "run_id": run_id,
        "variant": variant.name,
        "seed": seed,
        "budget": env_cfg.budget_messages,
        "observability": env_cfg.observability,
        "episodes": cfg.total_episodes,
        "updates": state["updates"],
        "batch_episodes": cfg.batch_episodes,
        "batch_clamp": "min(batch_episodes, stored_episodes)",
        "aborted": state["aborted"],
    }
    return TrainResult(records=records, bundles=bundles, reports=reports, meta=meta, aborted=state["aborted"])
