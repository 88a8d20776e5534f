"""Rule-generation MDP, value network and its temporal-difference training."""

from .curriculum import (PAPER_CURRICULUM, CurriculumError, CurriculumStage, curriculum_init,
                         sample_seed_rules, scaled_curriculum)
from .mdp import MASK, Action, InvalidAction, ReplayMemory, State, Transition, reward, transition
from .network import NetworkShape, RMSprop, ValueNetwork
from .training import (Agent, AgentTrainConfig, TrainingLog, epsilon_greedy, td_update,
                       train_agent, train_on_kg)

__all__ = ["PAPER_CURRICULUM", "CurriculumError", "CurriculumStage", "curriculum_init",
           "sample_seed_rules", "scaled_curriculum", "MASK", "Action", "InvalidAction",
           "ReplayMemory", "State", "Transition", "reward", "transition", "NetworkShape",
           "RMSprop", "ValueNetwork", "Agent", "AgentTrainConfig", "TrainingLog",
           "epsilon_greedy", "td_update", "train_agent", "train_on_kg"]
