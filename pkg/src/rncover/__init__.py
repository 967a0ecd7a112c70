"""Train and evaluate relational-network actor-critic agents that steer
rectangular sensor views to capture moving objects."""

from .agent import forward, init_params, select_action
from .baselines import AgentController, evaluate, make_baseline
from .sim import Action, EnvConfig, init_episode, step
from .trainer import TrainerConfig, train

__all__ = [
    "Action", "AgentController", "EnvConfig", "TrainerConfig", "evaluate", "forward",
    "init_episode", "init_params", "make_baseline", "select_action", "step", "train",
]
__version__ = "0.1.0"
