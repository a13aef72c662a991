"""Net-value policy switching for tabular MDPs."""

from .cost import CostSpec, CustomCostTable, cost, global_cost, local_cost
from .mdp import FiniteMdp, TabularPolicy, evaluate_exact, evaluate_infinite, simulate
from .nac import NacConfig, StoppingConfig, run_nac
from .net_value import CandidateSet, SwitchProblem, net_value_exact, switch_optimal_search
from .offline import OpeConfig, TransitionDataset, evaluate_offline, generate_dataset

__version__ = "0.1.0"

__all__ = [
    "CandidateSet", "CostSpec", "CustomCostTable", "FiniteMdp", "NacConfig", "OpeConfig",
    "StoppingConfig", "SwitchProblem", "TabularPolicy", "TransitionDataset", "cost",
    "evaluate_exact", "evaluate_infinite", "evaluate_offline", "generate_dataset",
    "global_cost", "local_cost", "net_value_exact", "run_nac", "simulate",
    "switch_optimal_search",
]
