"""Net values, the net Bellman operator and switch-optimal search.

A net value is the value of a candidate policy minus the one-time cost of
switching to it from the incumbent. The net Bellman operator spreads that
cost over an infinite discounted horizon as ``(1 - gamma) * C`` per step, so
its fixed point is the infinite-horizon Q table minus ``C``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .cost import CostSpec, CustomCostTable, cost, fingerprint
from .errors import ConvergenceError, UnsupportedDiscountError
from .mdp import FiniteMdp, TabularPolicy, check_policy, evaluate_exact, policy_matrix

TIE_ATOL = 1e-9
MAX_CANDIDATES = 10 ** 6


@dataclass(frozen=True)
class SwitchProblem:
    mdp: FiniteMdp
    old_policy: TabularPolicy
    cost_spec: CostSpec | CustomCostTable
    initial_state: int | None = None

    def __post_init__(self):
        check_policy(self.mdp, self.old_policy)
        if self.initial_state is None:
            object.__setattr__(self, "initial_state", self.mdp.initial_state)
        if not 0 <= self.initial_state < self.mdp.n_states:
            raise ValueError("initial_state out of range")

    def switch_cost(self, candidate: TabularPolicy, mc_states: int | None = None,
                    seed: int | None = None) -> float:
        return cost(self.cost_spec, self.old_policy, candidate, mc_states, seed)

    def at_state(self, s0: int) -> "SwitchProblem":
        return SwitchProblem(self.mdp, self.old_policy, self.cost_spec, s0)


def net_value_exact(problem: SwitchProblem, candidate: TabularPolicy):
    """``(V_N(s0), V_N table, Q_N table)`` with finite-horizon values and the full cost."""
    V, Q = evaluate_exact(problem.mdp, candidate)
    c = problem.switch_cost(candidate)
    v_all = V - c
    return float(v_all[problem.initial_state]), v_all, Q - c


def stay_value(problem: SwitchProblem) -> float:
    """Value of keeping the incumbent: no switch, so no cost."""
    V, _ = evaluate_exact(problem.mdp, problem.old_policy)
    return float(V[problem.initial_state])


# ---------------------------------------------------------------------------
# net Bellman operator


def _require_discounted(mdp: FiniteMdp) -> None:
    if mdp.discount >= 1.0:
        raise UnsupportedDiscountError("the net Bellman operator needs gamma < 1")


def net_bellman_apply(problem: SwitchProblem, policy: TabularPolicy, q: np.ndarray,
                      switch_cost: float | None = None) -> np.ndarray:
    """One backup ``R - (1-gamma) C + gamma * E_{s'} E_{a'~pi} q(s', a')``."""
    mdp = problem.mdp
    _require_discounted(mdp)
    check_policy(mdp, policy)
    c = problem.switch_cost(policy) if switch_cost is None else switch_cost
    v_next = np.sum(policy.probs * q, axis=1)
    return mdp.reward_mean - (1.0 - mdp.discount) * c + mdp.discount * (mdp.transition @ v_next)


def net_q_fixed_point(problem: SwitchProblem, policy: TabularPolicy, tol: float = 1e-11,
                      max_iters: int = 1_000_000, q0: np.ndarray | None = None) -> np.ndarray:
    """Iterate the net Bellman operator from ``q0`` (default zero) until the sup-norm step is <= tol."""
    mdp = problem.mdp
    _require_discounted(mdp)
    S, A = mdp.n_states, mdp.n_actions
    c = problem.switch_cost(policy)
    M = mdp.discount * policy_matrix(mdp, policy)
    b = (mdp.reward_mean - (1.0 - mdp.discount) * c).reshape(-1)
    q = np.zeros(S * A) if q0 is None else np.array(q0, dtype=float).reshape(-1)
    for _ in range(max_iters):
        q_new = b + M @ q
        step = np.max(np.abs(q_new - q))
        q = q_new
        if step <= tol:
            return q.reshape(S, A)
    raise ConvergenceError(f"net Q iteration did not reach tol={tol} in {max_iters} steps")


# ---------------------------------------------------------------------------
# candidate sets and search


@dataclass(frozen=True)
class CandidateSet:
    """Finite policy class to search: ``deterministic``, ``grid`` (simplex step 1/resolution) or ``explicit``."""

    kind: str = "deterministic"
    resolution: int = 1
    policies: tuple[TabularPolicy, ...] = ()
    ids: tuple[str, ...] = ()

    @classmethod
    def parse(cls, text: str) -> "CandidateSet":
        text = text.strip()
        if text in ("det", "deterministic"):
            return cls("deterministic")
        if text.startswith("grid:"):
            return cls("grid", resolution=int(text[5:]))
        raise ValueError(f"cannot parse candidate set {text!r}")

    @classmethod
    def explicit(cls, policies: Sequence[TabularPolicy], ids: Sequence[str] | None = None):
        ids = tuple(ids) if ids is not None else tuple(f"p{i}" for i in range(len(policies)))
        return cls("explicit", policies=tuple(policies), ids=ids)

    def size(self, n_states: int, n_actions: int) -> int:
        if self.kind == "explicit":
            return len(self.policies)
        return len(self._rows(n_actions)) ** n_states

    def _rows(self, n_actions: int) -> list[tuple[float, ...]]:
        if self.kind == "deterministic":
            return [tuple(float(a == b) for b in range(n_actions)) for a in range(n_actions)]
        k = self.resolution
        if k < 1:
            raise ValueError("grid resolution must be >= 1")
        rows = []
        for counts in itertools.product(range(k + 1), repeat=n_actions):
            if sum(counts) == k:
                rows.append(tuple(c / k for c in counts))
        return rows

    def enumerate(self, n_states: int, n_actions: int) -> Iterator[tuple[str, TabularPolicy]]:
        if self.kind == "explicit":
            yield from zip(self.ids, self.policies)
            return
        n = self.size(n_states, n_actions)
        if n > MAX_CANDIDATES:
            raise ValueError(f"{n} candidates exceed the {MAX_CANDIDATES} cap; supply a coarser set")
        rows = self._rows(n_actions)
        for combo in itertools.product(range(len(rows)), repeat=n_states):
            table = np.array([rows[i] for i in combo])
            if self.kind == "deterministic" or all(max(rows[i]) == 1.0 for i in combo):
                pid = "det:" + ",".join(str(int(np.argmax(rows[i]))) for i in combo)
            else:
                pid = f"grid{self.resolution}:" + ",".join(str(i) for i in combo)
            yield pid, TabularPolicy(table)


@dataclass(frozen=True)
class RankEntry:
    policy_id: str
    policy: TabularPolicy
    value: float
    cost: float
    net_value: float


@dataclass
class SearchResult:
    best: TabularPolicy
    best_id: str
    v_net: float
    ranking: list[RankEntry] = field(default_factory=list)

    def format_ranking(self) -> str:
        lines = ["rank, policy_id, value, cost, net_value"]
        for k, e in enumerate(self.ranking, start=1):
            lines.append(f"{k}, {e.policy_id}, {e.value:.12g}, {e.cost:.12g}, {e.net_value:.12g}")
        return "\n".join(lines) + "\n"


def switch_optimal_search(problem: SwitchProblem, candidates: CandidateSet) -> SearchResult:
    """Maximise net value at ``s0`` over ``candidates`` plus keeping the incumbent.

    Ties (within ``TIE_ATOL``) go to the incumbent, then to the earliest candidate.
    """
    mdp = problem.mdp
    s0 = problem.initial_state
    v_old = stay_value(problem)
    entries = [RankEntry("old", problem.old_policy, v_old, 0.0, v_old)]
    best = entries[0]
    n_seen = 0
    for pid, pol in candidates.enumerate(mdp.n_states, mdp.n_actions):
        n_seen += 1
        V, _ = evaluate_exact(mdp, pol)
        c = problem.switch_cost(pol)
        e = RankEntry(pid, pol, float(V[s0]), c, float(V[s0]) - c)
        entries.append(e)
        if e.net_value > best.net_value + TIE_ATOL * max(1.0, abs(best.net_value)):
            best = e
    if n_seen == 0:
        raise ValueError("candidate set is empty")
    order = sorted(range(len(entries)), key=lambda i: (-round(entries[i].net_value, 9), i))
    ranking = [entries[i] for i in order]
    # keep the tie-broken winner on top
    ranking.remove(best)
    ranking.insert(0, best)
    return SearchResult(best.policy, best.policy_id, best.net_value, ranking)


def nontriviality_witness(mdp: FiniteMdp, pi_o: TabularPolicy,
                          candidates: CandidateSet, margin: float = 1.0) -> CustomCostTable | None:
    """Build a cost under which the value-optimal candidate is not switch-optimal.

    Picks the value-argmax ``pi*`` at ``s0`` and a worse policy ``pi`` (the
    incumbent when it is worse, else the worst candidate), then charges
    ``V(pi*) - V(pi) + margin`` for switching to ``pi*`` and nothing otherwise.
    Returns ``None`` when every candidate (and the incumbent) has the same value.
    """
    s0 = mdp.initial_state
    pols = [p for _, p in candidates.enumerate(mdp.n_states, mdp.n_actions)]
    if not pols:
        raise ValueError("candidate set is empty")
    values = np.array([evaluate_exact(mdp, p)[0][s0] for p in pols])
    v_old = float(evaluate_exact(mdp, pi_o)[0][s0])
    star = int(np.argmax(values))
    v_star = float(values[star])
    tol = TIE_ATOL * max(1.0, abs(v_star))
    if v_old < v_star - tol:
        gap = v_star - v_old
    elif float(values.min()) < v_star - tol:
        gap = v_star - float(values.min())
    else:
        return None
    return CustomCostTable({("*", fingerprint(pols[star])): gap + margin, ("*", "*"): 0.0})


def value_argmax(mdp: FiniteMdp, candidates: CandidateSet) -> tuple[str, TabularPolicy, float]:
    s0 = mdp.initial_state
    best = None
    for pid, pol in candidates.enumerate(mdp.n_states, mdp.n_actions):
        v = float(evaluate_exact(mdp, pol)[0][s0])
        if best is None or v > best[2] + TIE_ATOL * max(1.0, abs(best[2])):
            best = (pid, pol, v)
    return best


def truncation_bound(mdp: FiniteMdp) -> float:
    """``gamma^H * R_max / (1 - gamma)``: finite vs. infinite horizon gap."""
    _require_discounted(mdp)
    r_max = float(np.max(np.abs(mdp.reward_mean)) + np.max(mdp.reward_noise_halfwidth))
    return mdp.discount ** mdp.horizon * r_max / (1.0 - mdp.discount)
