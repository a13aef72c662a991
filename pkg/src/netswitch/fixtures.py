"""Bundled example problems.

``two_state``: two states (0 = alpha, 1 = beta), two actions (0 = stay,
1 = move to the other state), reward 1 for every step that lands in alpha,
H = 100, no discounting, uniform incumbent and a 25 / 50 / 500 custom cost.

``chain``: six states in a line entered from the start state; the last
state pays a bonus and returns to the start.
"""

from __future__ import annotations

from importlib import resources

import numpy as np

from .cost import CostSpec, tiered_cost_table
from .mdp import FiniteMdp, TabularPolicy, parse_mdp
from .net_value import SwitchProblem

ALPHA, BETA = 0, 1
STAY, MOVE = 0, 1


def two_state_mdp(s0: int = ALPHA) -> FiniteMdp:
    P = np.zeros((2, 2, 2))
    for s in (ALPHA, BETA):
        P[s, STAY, s] = 1.0
        P[s, MOVE, 1 - s] = 1.0
    R = P[:, :, ALPHA].copy()
    return FiniteMdp(P, R, horizon=100, discount=1.0, initial_state=s0)


def two_state_policies() -> dict[str, TabularPolicy]:
    det = TabularPolicy.deterministic
    return {
        "old": TabularPolicy.uniform(2, 2),
        "n1": det([STAY, STAY], 2),
        "n2": det([MOVE, MOVE], 2),
        "n3": det([STAY, MOVE], 2),
        "n4": det([MOVE, STAY], 2),
    }


def two_state_problem(s0: int = ALPHA) -> SwitchProblem:
    return SwitchProblem(two_state_mdp(s0), two_state_policies()["old"], tiered_cost_table())


CHAIN_STATES = 6
CHAIN_BONUS = 10.0
CHAIN_WAIT_REWARD = 0.2


def chain_mdp(horizon: int = 200, discount: float = 0.9, slip: float = 0.2) -> FiniteMdp:
    """At the start, action 0 waits (small reward) and action 1 enters the chain.

    Inside the chain action 1 always advances and action 0 advances with
    probability ``1 - slip``. The last state pays the bonus and resets.
    """
    n = CHAIN_STATES
    P = np.zeros((n, 2, n))
    R = np.zeros((n, 2))
    P[0, 0, 0] = 1.0
    R[0, 0] = CHAIN_WAIT_REWARD
    P[0, 1, 1] = 1.0
    for s in range(1, n - 1):
        P[s, 1, s + 1] = 1.0
        P[s, 0, s + 1] = 1.0 - slip
        P[s, 0, s] = slip
    P[n - 1, :, 0] = 1.0
    R[n - 1, :] = CHAIN_BONUS
    return FiniteMdp(P, R, horizon=horizon, discount=discount, initial_state=0)


def chain_cost(c_t: float = 0.0, c_l: float = 5.0) -> CostSpec:
    return CostSpec.transport((0, 1), c_l=c_l, c_t=c_t)


def chain_policies() -> dict[str, TabularPolicy]:
    n = CHAIN_STATES
    return {
        "suboptimal": TabularPolicy.uniform(n, 2),
        "optimal": TabularPolicy.deterministic([1] * n, 2),
    }


def bundled_text(name: str) -> str:
    return resources.files("netswitch").joinpath("data", name).read_text()


def bundled_mdp(name: str) -> FiniteMdp:
    return parse_mdp(bundled_text(name))
