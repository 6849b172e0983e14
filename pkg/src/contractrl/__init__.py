"""Assume-guarantee reinforcement learning for networks of Markov games.

Components of a networked system are trained in isolation against
adversarial abstractions of their neighbors derived from specification
automata; the product of the per-component adversarial values certifies a
lower bound on the probability that the composed system satisfies every
local specification simultaneously.
"""

from .automata import (Always, Conjunction, Dfa, Eventually, KripkeStructure,
                       compile_formula, dfa_intersection, dfa_product,
                       dfa_step, kripke_dfa_product, one_step_labels,
                       product_many)
from .contracts import (TurnBasedGame, compile_contract,
                        compile_no_communication, concurrent_to_turnbased,
                        reward_of)
from .dp import (BoundReport, OracleUnavailableError, certified_policy_value,
                 discounted_game_values, finite_horizon_game_values,
                 finite_horizon_round_values, global_value_iteration,
                 local_value_iteration, verify_lower_bound)
from .envs import (GridWorldParams, RoomParams, TrafficParams, build_gridworld,
                   build_rooms, build_traffic, gridworld_routes, room_step)
from .evaluation import (EstimationResult, compare_bound,
                         estimate_satisfaction, wilson_interval)
from .games import (FULL, LIMITED, NONE, MarkovGame, MdpNetwork, Observation,
                    Policy, Trajectory, UniformRandomPolicy,
                    UnresolvedPolicyError, check_satisfaction,
                    enabled_actions, rollout_network, sample_step)
from .learning import (IndependentQLearner, MinimaxQLearner,
                       independent_q_train, minimax_q_update, train)
from .randinst import InstanceSpec, generate_random_instance

__version__ = "0.1.0"

__all__ = [
    "Always", "BoundReport", "Conjunction", "Dfa", "EstimationResult",
    "Eventually", "FULL", "GridWorldParams", "IndependentQLearner",
    "InstanceSpec", "KripkeStructure", "LIMITED", "MarkovGame", "MdpNetwork",
    "MinimaxQLearner", "NONE", "Observation", "OracleUnavailableError",
    "Policy", "RoomParams", "TrafficParams", "Trajectory", "TurnBasedGame",
    "UniformRandomPolicy", "UnresolvedPolicyError", "build_gridworld",
    "build_rooms", "build_traffic", "certified_policy_value",
    "check_satisfaction", "compare_bound", "compile_contract",
    "compile_formula", "compile_no_communication", "concurrent_to_turnbased",
    "dfa_intersection", "dfa_product", "dfa_step", "discounted_game_values",
    "enabled_actions", "estimate_satisfaction", "finite_horizon_game_values",
    "finite_horizon_round_values", "generate_random_instance",
    "global_value_iteration", "gridworld_routes", "independent_q_train",
    "kripke_dfa_product", "local_value_iteration", "minimax_q_update",
    "one_step_labels", "product_many", "reward_of", "rollout_network",
    "room_step", "sample_step", "train", "verify_lower_bound",
    "wilson_interval",
]
