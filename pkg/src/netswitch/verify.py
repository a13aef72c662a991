"""Golden checks over the bundled fixtures.

Each check raises ``AssertionError`` with a short reason on failure. The
two-state fixture is read from its text file so a damaged fixture is caught.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import fixtures as F
from . import ot
from .cost import (CostSpec, tiered_cost_table, cost, global_cost, local_cost,
                   statewise_learning_two, statewise_transaction_two)
from .mdp import FiniteMdp, TabularPolicy, evaluate_exact, evaluate_infinite, read_mdp
from .net_value import (CandidateSet, SwitchProblem, net_bellman_apply, net_q_fixed_point,
                        net_value_exact, nontriviality_witness, switch_optimal_search, value_argmax)


@dataclass
class Context:
    fixture_dir: Path | None = None

    def two_state(self, s0: int = F.ALPHA) -> FiniteMdp:
        if self.fixture_dir is None:
            mdp = F.bundled_mdp("two_state.mdp")
        else:
            mdp = read_mdp(self.fixture_dir / "two_state.mdp")
        return mdp.with_initial_state(s0)

    def problem(self, s0: int = F.ALPHA) -> SwitchProblem:
        return SwitchProblem(self.two_state(s0), F.two_state_policies()["old"], tiered_cost_table())


CHECKS: list[tuple[str, Callable[[Context], None]]] = []


def check(name: str):
    def register(fn):
        CHECKS.append((name, fn))
        return fn
    return register


def _expect(got: float, want: float, what: str) -> None:
    if got != want:
        raise AssertionError(f"{what}: got {got:.12g}, expected {want:.12g}")


def _value_check(pid: str, s0: int, want: float):
    def run(ctx: Context) -> None:
        V, _ = evaluate_exact(ctx.two_state(s0), F.two_state_policies()[pid])
        _expect(float(V[s0]), want, f"V^{pid}(s{s0})")
    return run


def _net_check(pid: str, s0: int, want: float):
    def run(ctx: Context) -> None:
        v, _, _ = net_value_exact(ctx.problem(s0), F.two_state_policies()[pid])
        _expect(v, want, f"V_N^{pid}(s{s0})")
    return run


def _qnet_check(pid: str, a: int, want: float):
    def run(ctx: Context) -> None:
        _, _, qn = net_value_exact(ctx.problem(F.ALPHA), F.two_state_policies()[pid])
        _expect(float(qn[F.ALPHA, a]), want, f"Q_N^{pid}(alpha, {a})")
    return run


for _pid, _s, _v in [("n1", 0, 100.0), ("n1", 1, 0.0), ("n2", 0, 50.0), ("n2", 1, 50.0),
                     ("n3", 0, 100.0), ("n3", 1, 100.0), ("n4", 0, 0.0), ("n4", 1, 0.0),
                     ("old", 0, 50.0), ("old", 1, 50.0)]:
    check(f"two_state.value.{_pid}.s{_s}")(_value_check(_pid, _s, _v))

for _pid, _s, _v in [("n1", 0, 75.0), ("n1", 1, -25.0), ("n2", 0, 25.0), ("n2", 1, 25.0),
                     ("n3", 0, 50.0), ("n3", 1, 50.0), ("n4", 0, -50.0), ("n4", 1, -50.0)]:
    check(f"two_state.net_value.{_pid}.s{_s}")(_net_check(_pid, _s, _v))

for _pid, _a, _v in [("n1", F.STAY, 75.0), ("n1", F.MOVE, -25.0), ("n3", F.MOVE, 49.0)]:
    check(f"two_state.net_q.{_pid}.a{_a}")(_qnet_check(_pid, _a, _v))


@check("two_state.search.alpha")
def _search_alpha(ctx: Context) -> None:
    for cands in ("det", "grid:2"):
        res = switch_optimal_search(ctx.problem(F.ALPHA), CandidateSet.parse(cands))
        if not res.best.row_equal(F.two_state_policies()["n1"]).all():
            raise AssertionError(f"{cands}: best is {res.best_id}, expected stay-everywhere")
        _expect(res.v_net, 75.0, f"{cands}: best net value")


@check("two_state.search.beta")
def _search_beta(ctx: Context) -> None:
    res = switch_optimal_search(ctx.problem(F.BETA), CandidateSet.parse("det"))
    _expect(res.v_net, 50.0, "best net value at beta")
    pols = F.two_state_policies()
    if not (res.best_id == "old" or res.best.row_equal(pols["n3"]).all()):
        raise AssertionError(f"best at beta is {res.best_id}")


@check("initial_state_dependence")
def _state_dependence(ctx: Context) -> None:
    a = switch_optimal_search(ctx.problem(F.ALPHA), CandidateSet.parse("det"))
    b = switch_optimal_search(ctx.problem(F.BETA), CandidateSet.parse("det"))
    if a.best.row_equal(b.best).all():
        raise AssertionError("switch-optimal policy did not change with the start state")


@check("action_dependence")
def _action_dependence(ctx: Context) -> None:
    pols = F.two_state_policies()
    _, _, q1 = net_value_exact(ctx.problem(F.ALPHA), pols["n1"])
    _, _, q3 = net_value_exact(ctx.problem(F.ALPHA), pols["n3"])
    if not q3[F.ALPHA, F.MOVE] > q1[F.ALPHA, F.MOVE]:
        raise AssertionError("switch-optimal policy also maximises every net Q entry")


@check("switch_optimal_differs_from_optimal")
def _witness(ctx: Context) -> None:
    mdp = F.chain_mdp(horizon=50)
    pi_o = F.chain_policies()["suboptimal"]
    cands = CandidateSet.parse("det")
    table = nontriviality_witness(mdp, pi_o, cands)
    if table is None:
        raise AssertionError("no witness found")
    best_v = value_argmax(mdp, cands)
    res = switch_optimal_search(SwitchProblem(mdp, pi_o, table), cands)
    if res.best.row_equal(best_v[1]).all():
        raise AssertionError("value-optimal policy is still switch-optimal under the witness cost")


def _random_instance(rng, max_s=8, max_a=4):
    S = int(rng.integers(1, max_s + 1))
    A = int(rng.integers(1, max_a + 1))
    P = rng.dirichlet(np.ones(S), size=(S, A))
    R = rng.uniform(-1, 1, (S, A))
    gamma = float(rng.uniform(0.1, 0.99))
    mdp = FiniteMdp(P, R, 10, gamma, 0)
    pi = TabularPolicy(rng.dirichlet(np.ones(A), size=S))
    return mdp, pi


@check("net_bellman.contraction")
def _contraction(ctx: Context, n: int = 200) -> None:
    rng = np.random.default_rng(20240601)
    for k in range(n):
        mdp, pi = _random_instance(rng)
        pr = SwitchProblem(mdp, TabularPolicy.uniform(mdp.n_states, mdp.n_actions),
                           CostSpec.local(mdp.n_states))
        q1 = rng.normal(0, 10, pi.probs.shape)
        q2 = rng.normal(0, 10, pi.probs.shape)
        lhs = np.max(np.abs(net_bellman_apply(pr, pi, q1) - net_bellman_apply(pr, pi, q2)))
        rhs = mdp.discount * np.max(np.abs(q1 - q2)) + 1e-12
        if lhs > rhs:
            raise AssertionError(f"instance {k}: {lhs:.12g} > {rhs:.12g}")


@check("net_bellman.fixed_point")
def _fixed_point(ctx: Context, n: int = 50) -> None:
    rng = np.random.default_rng(20240602)
    for k in range(n):
        mdp, pi = _random_instance(rng)
        pr = SwitchProblem(mdp, TabularPolicy.uniform(mdp.n_states, mdp.n_actions),
                           CostSpec.local(mdp.n_states))
        q = net_q_fixed_point(pr, pi)
        want = evaluate_infinite(mdp, pi) - pr.switch_cost(pi)
        err = np.max(np.abs(q - want))
        if err > 1e-8:
            raise AssertionError(f"instance {k}: fixed point off by {err:.3g}")


@check("cost.local_global_recovery")
def _cost_recovery(ctx: Context, n: int = 200) -> None:
    rng = np.random.default_rng(20240603)
    for k in range(n):
        S = int(rng.integers(1, 10))
        A = int(rng.integers(1, 5))
        po = TabularPolicy(rng.dirichlet(np.ones(A), size=S))
        rows = po.probs.copy()
        flip = rng.random(S) < 0.5
        rows[flip] = rng.dirichlet(np.ones(A), size=int(flip.sum()))
        pn = TabularPolicy(rows)
        if cost(CostSpec.local(S), po, pn) != local_cost(po, pn):
            raise AssertionError(f"instance {k}: local cost mismatch")
        if cost(CostSpec.global_switching(), po, pn) != global_cost(po, pn):
            raise AssertionError(f"instance {k}: global cost mismatch")


@check("ot.two_component_recovery")
def _ot_recovery(ctx: Context, n: int = 200) -> None:
    rng = np.random.default_rng(20240604)
    for k in range(n):
        A = int(rng.integers(2, 9))
        part = np.concatenate([[0, 1], rng.integers(0, 2, A - 2)])
        rng.shuffle(part)
        po, pn = rng.dirichlet(np.ones(A), size=2)
        ell = ot.learning_cost_general(po, pn, part, ot.GroundCost.cross())
        tau = ot.transaction_cost_general(po, pn, part, ot.GroundCost.one())
        if abs(ell - statewise_learning_two(po, pn, part)) > 1e-9:
            raise AssertionError(f"instance {k}: learning cost {ell:.12g}")
        if abs(tau - statewise_transaction_two(po, pn, part)) > 1e-9:
            raise AssertionError(f"instance {k}: transaction cost {tau:.12g}")
        plan = ot.combined_plan(po, pn, part, ot.GroundCost.cross(), ot.GroundCost.one())
        mo, mn = plan.marginals(A)
        if max(np.max(np.abs(mo - po)), np.max(np.abs(mn - pn))) > 1e-9:
            raise AssertionError(f"instance {k}: plan marginals off")


def check_names() -> list[str]:
    return [name for name, _ in CHECKS]


def run_checks(fixture_dir: Path | None = None, emit=print) -> tuple[int, str | None]:
    """Run every check; return ``(n_failed, first_failure_line)``."""
    ctx = Context(Path(fixture_dir) if fixture_dir is not None else None)
    failed = 0
    first = None
    for name, fn in CHECKS:
        try:
            fn(ctx)
        except Exception as exc:  # a broken fixture may raise anything; report it as a failure
            failed += 1
            line = f"FAIL {name}: {exc}"
            first = first or line
        else:
            line = f"PASS {name}"
        emit(line)
    return failed, first
