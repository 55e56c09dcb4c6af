"""Actor and centralized-critic networks in the four architectural variants.

Every network is the same three-layer, 64-unit stack: dense + ReLU in,
dense out, and a middle core that is an LSTM cell for recurrent variants or
another dense + ReLU of equal width otherwise (so parameter counts stay
comparable). Actors map one agent's observation to 5 physical + 2 verbal
logits; critics map every agent's observation and one-hot action,
concatenated, to a scalar value.

Non-recurrent stacks accept and return recurrent state untouched, which
keeps the training code variant-agnostic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import nnet
from .env import PHYSICAL_ACTIONS, VERBAL_ACTIONS, AgentAction, Observation
from .nnet import (
    AdamState,
    DenseParams,
    Grads,
    LSTMParams,
    ParameterSet,
    RecurrentState,
)
from .nnet.layers import (
    dense_backward,
    dense_forward,
    lstm_step_backward,
    lstm_step_forward,
    relu_backward,
    relu_forward,
)

HIDDEN_UNITS = 64
N_PHYSICAL = len(PHYSICAL_ACTIONS)
N_VERBAL = len(VERBAL_ACTIONS)
ACTION_DIM = N_PHYSICAL + N_VERBAL


@dataclass(frozen=True)
class VariantSpec:
    """Which halves of the actor-critic pair carry an LSTM core."""

    actor_recurrent: bool
    critic_recurrent: bool

    @property
    def name(self) -> str:
        return {
            (False, False): "maddpg",
            (True, False): "ra",
            (False, True): "rc",
            (True, True): "rmaddpg",
        }[(self.actor_recurrent, self.critic_recurrent)]

    @classmethod
    def from_name(cls, name: str) -> "VariantSpec":
        try:
            return VARIANTS[name]
        except KeyError:
            raise ValueError(
                f"unknown variant {name!r}; expected one of {sorted(VARIANTS)}"
            ) from None


VARIANTS: Dict[str, VariantSpec] = {
    "maddpg": VariantSpec(False, False),
    "ra": VariantSpec(True, False),
    "rc": VariantSpec(False, True),
    "rmaddpg": VariantSpec(True, True),
}


def build_stack(
    rng: np.random.Generator,
    in_dim: int,
    out_dim: int,
    recurrent: bool,
    hidden: int = HIDDEN_UNITS,
) -> ParameterSet:
    """Three-layer stack: layer1 (dense+ReLU), core (LSTM or dense+ReLU), head."""
    core: nnet.params.LayerParams
    if recurrent:
        core = nnet.init_lstm(rng, hidden, hidden)
    else:
        core = nnet.init_dense(rng, hidden, hidden)
    return ParameterSet(
        {
            "layer1": nnet.init_dense(rng, in_dim, hidden),
            "core": core,
            "head": nnet.init_dense(rng, hidden, out_dim),
        }
    )


def stack_forward(
    params: ParameterSet, x: np.ndarray, state: RecurrentState
) -> Tuple[np.ndarray, RecurrentState, tuple]:
    """Run the stack; recurrent state passes through unchanged for dense cores."""
    h1, c1 = dense_forward(params["layer1"], x)
    a1, c1r = relu_forward(h1)
    core = params["core"]
    if isinstance(core, LSTMParams):
        next_state, c2 = lstm_step_forward(core, a1, state)
        core_out = next_state.hidden
        c2r = None
    else:
        h2, c2 = dense_forward(core, a1)
        core_out, c2r = relu_forward(h2)
        next_state = state
    y, c3 = dense_forward(params["head"], core_out)
    return y, next_state, (c1, c1r, c2, c2r, c3, isinstance(core, LSTMParams))


def stack_backward(
    cache: tuple,
    dy: np.ndarray,
    d_state: Optional[RecurrentState] = None,
    need_param_grads: bool = True,
) -> Tuple[np.ndarray, Optional[RecurrentState], Optional[Grads]]:
    """Exact gradients through one stack application.

    ``d_state`` carries gradients flowing into this step's outgoing recurrent
    state (from later timesteps); the returned state gradient flows to the
    previous timestep. Both are None for dense cores. With
    ``need_param_grads=False`` only input/state gradients are produced.
    """
    c1, c1r, c2, c2r, c3, recurrent = cache
    d_core_out, g_head = dense_backward(c3, dy, need_param_grads)
    if recurrent:
        if d_state is not None:
            d_next = RecurrentState(d_state.hidden + d_core_out, d_state.cell)
        else:
            zero = np.zeros_like(d_core_out)
            d_next = RecurrentState(d_core_out, zero)
        da1, d_prev_state, g_core = lstm_step_backward(c2, d_next, need_param_grads)
    else:
        dh2 = relu_backward(c2r, d_core_out)
        da1, g_core = dense_backward(c2, dh2, need_param_grads)
        d_prev_state = d_state
    dh1 = relu_backward(c1r, da1)
    dx, g_layer1 = dense_backward(c1, dh1, need_param_grads)
    if not need_param_grads:
        return dx, d_prev_state, None
    return dx, d_prev_state, {"layer1": g_layer1, "core": g_core, "head": g_head}


def build_actor(
    rng: np.random.Generator, obs_dim: int, recurrent: bool, hidden: int = HIDDEN_UNITS
) -> ParameterSet:
    return build_stack(rng, obs_dim, ACTION_DIM, recurrent, hidden)


def build_critic(
    rng: np.random.Generator,
    n_agents: int,
    obs_dim: int,
    recurrent: bool,
    hidden: int = HIDDEN_UNITS,
) -> ParameterSet:
    return build_stack(rng, critic_input_dim(n_agents, obs_dim), 1, recurrent, hidden)


def critic_input_dim(n_agents: int, obs_dim: int) -> int:
    return n_agents * (obs_dim + ACTION_DIM)


def actor_forward(
    actor: ParameterSet, obs: Observation | np.ndarray, state: RecurrentState
) -> Tuple[np.ndarray, np.ndarray, RecurrentState]:
    """Logits for both action heads plus the threaded recurrent state."""
    x = obs.flatten() if isinstance(obs, Observation) else np.asarray(obs, dtype=np.float64)
    y, next_state, _ = stack_forward(actor, x, state)
    return y[..., :N_PHYSICAL], y[..., N_PHYSICAL:], next_state


def critic_forward(
    critic: ParameterSet,
    all_obs: np.ndarray,
    all_actions: np.ndarray,
    state: RecurrentState,
) -> Tuple[np.ndarray, RecurrentState]:
    """Scalar value of the joint (observations, actions) input.

    ``all_obs``/``all_actions`` are the per-agent vectors concatenated in
    agent order; they may carry a leading batch axis.
    """
    joint = np.concatenate(
        [np.asarray(all_obs, dtype=np.float64), np.asarray(all_actions, dtype=np.float64)],
        axis=-1,
    )
    y, next_state, _ = stack_forward(critic, joint, state)
    return y[..., 0], next_state


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=-1, keepdims=True)


def relaxed_action(
    physical_logits: np.ndarray, verbal_logits: np.ndarray, temperature: float = 1.0
) -> np.ndarray:
    """Differentiable action: per-head softmax at the given temperature.

    This is the soft path of the straight-through estimator; the hard
    (one-hot) path lives in :func:`select_action`.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    return np.concatenate(
        [
            _softmax(np.asarray(physical_logits) / temperature),
            _softmax(np.asarray(verbal_logits) / temperature),
        ],
        axis=-1,
    )


def relaxed_action_backward(
    action: np.ndarray, d_action: np.ndarray, temperature: float = 1.0
) -> np.ndarray:
    """Gradient of :func:`relaxed_action` w.r.t. the raw head logits."""
    dlogits = np.empty_like(action)
    for lo, hi in ((0, N_PHYSICAL), (N_PHYSICAL, ACTION_DIM)):
        p = action[..., lo:hi]
        dp = d_action[..., lo:hi]
        inner = (dp * p).sum(axis=-1, keepdims=True)
        dlogits[..., lo:hi] = p * (dp - inner) / temperature
    return dlogits


def select_action(
    physical_logits: np.ndarray,
    verbal_logits: np.ndarray,
    mode: str = "greedy",
    rng: Optional[np.random.Generator] = None,
    temperature: float = 1.0,
) -> AgentAction:
    """Pick one discrete action per head.

    greedy: argmax per head, ties broken toward the lowest index. explore:
    Gumbel-perturbed argmax of logits/temperature, i.e. a sample from the
    tempered softmax; the matching soft relaxation used during training
    updates is :func:`relaxed_action`.
    """
    phys = np.asarray(physical_logits, dtype=np.float64)
    verb = np.asarray(verbal_logits, dtype=np.float64)
    if phys.shape != (N_PHYSICAL,) or verb.shape != (N_VERBAL,):
        raise ValueError("select_action expects single-head logit vectors")
    if not (np.all(np.isfinite(phys)) and np.all(np.isfinite(verb))):
        raise ValueError("non-finite logits")
    if mode == "greedy":
        p_idx = int(np.argmax(phys))
        v_idx = int(np.argmax(verb))
    elif mode == "explore":
        if temperature <= 0:
            raise ValueError("temperature must be positive")
        if rng is None:
            raise ValueError("explore mode needs an rng")
        p_idx = int(np.argmax(phys / temperature + rng.gumbel(size=N_PHYSICAL)))
        v_idx = int(np.argmax(verb / temperature + rng.gumbel(size=N_VERBAL)))
    else:
        raise ValueError(f"unknown selection mode {mode!r}")
    return AgentAction(PHYSICAL_ACTIONS[p_idx], VERBAL_ACTIONS[v_idx])


def action_to_onehot(action: AgentAction) -> np.ndarray:
    """Concatenated (physical, verbal) one-hot encoding, length 7."""
    vec = np.zeros(ACTION_DIM)
    vec[PHYSICAL_ACTIONS.index(action.physical)] = 1.0
    vec[N_PHYSICAL + VERBAL_ACTIONS.index(action.verbal)] = 1.0
    return vec


def onehot_to_action(vec: np.ndarray) -> AgentAction:
    vec = np.asarray(vec)
    if vec.shape != (ACTION_DIM,):
        raise ValueError(f"expected length-{ACTION_DIM} action vector")
    return AgentAction(
        PHYSICAL_ACTIONS[int(np.argmax(vec[:N_PHYSICAL]))],
        VERBAL_ACTIONS[int(np.argmax(vec[N_PHYSICAL:]))],
    )


@dataclass
class AgentBundle:
    """One agent's networks, targets, optimizer states, and episode state."""

    variant: VariantSpec
    actor: ParameterSet
    critic: ParameterSet
    target_actor: ParameterSet
    target_critic: ParameterSet
    actor_adam: AdamState
    critic_adam: AdamState
    actor_state: RecurrentState
    critic_state: RecurrentState
    obs_dim: int
    n_agents: int
    hidden: int

    @classmethod
    def create(
        cls,
        rng: np.random.Generator,
        variant: VariantSpec,
        n_agents: int,
        obs_dim: int,
        hidden: int = HIDDEN_UNITS,
    ) -> "AgentBundle":
        actor = build_actor(rng, obs_dim, variant.actor_recurrent, hidden)
        critic = build_critic(rng, n_agents, obs_dim, variant.critic_recurrent, hidden)
        return cls(
            variant=variant,
            actor=actor,
            critic=critic,
            target_actor=actor.copy(),
            target_critic=critic.copy(),
            actor_adam=AdamState.for_params(actor),
            critic_adam=AdamState.for_params(critic),
            actor_state=RecurrentState.zeros(hidden),
            critic_state=RecurrentState.zeros(hidden),
            obs_dim=obs_dim,
            n_agents=n_agents,
            hidden=hidden,
        )

    def reset_episode_state(self) -> None:
        self.actor_state = RecurrentState.zeros(self.hidden)
        self.critic_state = RecurrentState.zeros(self.hidden)


def _params_to_arrays(prefix: str, params: ParameterSet) -> Dict[str, np.ndarray]:
    return {f"{prefix}.{layer}.{arr}": a for layer, arr, a in params.arrays()}


def _params_from_arrays(prefix: str, arrays: Dict[str, np.ndarray]) -> ParameterSet:
    layers: Dict[str, Dict[str, np.ndarray]] = {}
    for key, arr in arrays.items():
        if not key.startswith(prefix + "."):
            continue
        layer_name, arr_name = key[len(prefix) + 1 :].split(".", 1)
        layers.setdefault(layer_name, {})[arr_name] = arr
    built: Dict[str, nnet.params.LayerParams] = {}
    for layer_name, parts in layers.items():
        if "input_weights" in parts:
            built[layer_name] = LSTMParams(
                parts["input_weights"], parts["recurrent_weights"], parts["bias"]
            )
        else:
            built[layer_name] = DenseParams(parts["weight"], parts["bias"])
    # Restore the canonical stack order; serialization preserves insertion
    # order anyway, but dict regrouping above loses it across prefixes.
    ordered = {name: built[name] for name in ("layer1", "core", "head") if name in built}
    for name, layer in built.items():
        ordered.setdefault(name, layer)
    return ParameterSet(ordered)


def save_bundles(path, bundles: Sequence[AgentBundle], extra_metadata: dict | None = None) -> None:
    """Checkpoint: all four parameter sets per agent plus variant and dims."""
    arrays: Dict[str, np.ndarray] = {}
    for i, bundle in enumerate(bundles):
        for role, params in (
            ("actor", bundle.actor),
            ("critic", bundle.critic),
            ("target_actor", bundle.target_actor),
            ("target_critic", bundle.target_critic),
        ):
            arrays.update(_params_to_arrays(f"agent{i}.{role}", params))
    first = bundles[0]
    metadata = {
        "kind": "agent-checkpoint",
        "variant": first.variant.name,
        "n_agents": first.n_agents,
        "obs_dim": first.obs_dim,
        "hidden": first.hidden,
        "action_dim": ACTION_DIM,
    }
    if extra_metadata:
        metadata.update(extra_metadata)
    nnet.save_arrays(path, arrays, metadata)


def load_bundles(path) -> Tuple[List[AgentBundle], dict]:
    arrays, metadata = nnet.load_arrays(path)
    if metadata.get("kind") != "agent-checkpoint":
        raise ValueError(f"{path} is not an agent checkpoint")
    variant = VariantSpec.from_name(metadata["variant"])
    bundles = []
    for i in range(metadata["n_agents"]):
        actor = _params_from_arrays(f"agent{i}.actor", arrays)
        critic = _params_from_arrays(f"agent{i}.critic", arrays)
        bundles.append(
            AgentBundle(
                variant=variant,
                actor=actor,
                critic=critic,
                target_actor=_params_from_arrays(f"agent{i}.target_actor", arrays),
                target_critic=_params_from_arrays(f"agent{i}.target_critic", arrays),
                actor_adam=AdamState.for_params(actor),
                critic_adam=AdamState.for_params(critic),
                actor_state=RecurrentState.zeros(metadata["hidden"]),
                critic_state=RecurrentState.zeros(metadata["hidden"]),
                obs_dim=metadata["obs_dim"],
                n_agents=metadata["n_agents"],
                hidden=metadata["hidden"],
            )
        )
    return bundles, metadata
