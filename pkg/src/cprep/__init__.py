"""Reward-machine pre-planning for transfer RL on contextual gridworlds."""
from .rm import (
    Guard, Label, RewardMachine, RmRunState, RmTransition, SymbolVocabulary,
    parse_rm, rm_step, serialize_rm, validate_rm,
)
from .planning import (
    RmValueTable, build_equivalent_mdp, desired_label, greedy_policy, greedy_transitions,
    shaped_reward, value_iteration,
)
from .gridworld import Cmdp, Context, GridMap, instantiate, sample_contexts
from .rm_generation import gen_order_rm, gen_sector_rm, generate
from .representation import ContextBank, ReprConfig, parse_repr_name
from .agent import DqnConfig, QNetwork, run_training
from .metrics import TrainingHistory, iqm, js, tr, ttt, ttt_auc
from .transfer import evaluate_policy, run_session

__version__ = "0.1.0"
