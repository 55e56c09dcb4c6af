"""Recurrent multi-agent actor-critic lab for the simultaneous-arrival task.

Subpackages and modules:

- ``nnet``: dense/LSTM building blocks with exact analytic gradients,
  Adam, soft target updates, and checkpoint serialization.
- ``env``: the arrival Dec-POMDP with the shared communication budget.
- ``agents``: actor/critic stacks in the four variants plus action selection.
- ``replay``: episode-granular experience replay.
- ``trainer``: the four update rules and the training loop.
- ``experiment``: grid runner, metrics aggregation, trajectory dumps.
- ``cli``: the ``rmaddpg`` command.
"""

from . import agents, env, experiment, metrics, nnet, replay, trainer
from .agents import VARIANTS, AgentBundle, VariantSpec
from .env import EnvConfig
from .experiment import ExperimentSpec, run_experiment
from .metrics import MetricsRecord
from .trainer import TrainConfig, train_run

__version__ = "0.1.0"

__all__ = [
    "AgentBundle",
    "EnvConfig",
    "ExperimentSpec",
    "MetricsRecord",
    "TrainConfig",
    "VARIANTS",
    "VariantSpec",
    "agents",
    "env",
    "experiment",
    "metrics",
    "nnet",
    "replay",
    "run_experiment",
    "train_run",
    "trainer",
]
